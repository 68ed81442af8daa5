//! Credit-based control: hop-by-hop credit loops whose feedback also
//! carries full/partial reception counts, and the source rules that turn
//! buffer occupancy and those counts into layer rates and layer counts.

use std::collections::VecDeque;

use crate::engine::SimTime;
use crate::video::{Classification, LayerSet, SourceBuffer};

/// Credit feedback sent by a node (or destination) to its upstream node.
#[derive(Clone, Debug, PartialEq)]
pub struct CreditFeedback {
    pub max_layers: u8,
    /// Credits sent to the upstream node since the connection was set up.
    pub credits_total: u64,
    /// `full[i - 1]`: destinations fully receiving layers 1..=i and no
    /// partial layer.
    pub full: Vec<u32>,
    /// `partial[i - 1]`: destinations fully receiving layers 1..i and
    /// partially receiving layer i.
    pub partial: Vec<u32>,
}

impl CreditFeedback {
    pub fn destinations(&self) -> u32 {
        self.full.iter().chain(&self.partial).sum()
    }
}

/// Sender side of one credit loop.
#[derive(Clone, Debug)]
pub struct CreditLinkState {
    balance: u64,
    last_total_seen: u64,
    sent: u64,
    initial: u64,
    received: u64,
}

impl CreditLinkState {
    pub fn new(initial: u64) -> Self {
        Self {
            balance: initial,
            last_total_seen: 0,
            sent: 0,
            initial,
            received: 0,
        }
    }

    pub fn balance(&self) -> u64 {
        self.balance
    }

    pub fn can_send(&self) -> bool {
        self.balance > 0
    }

    /// Consumes one credit for a transmission.
    pub fn consume(&mut self) {
        assert!(self.balance > 0, "transmission without credit");
        self.balance -= 1;
        self.sent += 1;
    }

    /// Credits granted by a feedback packet: the growth of its cumulative
    /// counter since the last one seen.
    pub fn on_feedback(&mut self, credits_total: u64) -> u64 {
        let delta = credits_total.saturating_sub(self.last_total_seen);
        self.last_total_seen = self.last_total_seen.max(credits_total);
        self.balance += delta;
        self.received += delta;
        delta
    }

    /// Packets transmitted never exceed the initial window plus the credits
    /// received.
    pub fn conserved(&self) -> bool {
        self.sent <= self.initial + self.received
    }
}

/// Whether a node should return credits upstream, given per-port
/// transmissions since the last feedback and current queue occupancies.
pub fn should_emit(
    tx_since_last: &[u32],
    occupancies: &[usize],
    batch: u32,
    occupancy_gap: usize,
    condition2: bool,
) -> bool {
    if tx_since_last.is_empty() {
        return false;
    }
    if tx_since_last.iter().all(|&n| n >= batch) {
        return true;
    }
    if !condition2 || !tx_since_last.iter().any(|&n| n >= batch) {
        return false;
    }
    let max = occupancies.iter().copied().max().unwrap_or(0);
    let min = occupancies.iter().copied().min().unwrap_or(0);
    max - min >= occupancy_gap
}

/// Elementwise sum of the reception arrays.
pub fn aggregate_reception<'a>(
    arrived: impl IntoIterator<Item = &'a CreditFeedback>,
    max_layers: usize,
) -> (Vec<u32>, Vec<u32>) {
    let mut full = vec![0u32; max_layers];
    let mut partial = vec![0u32; max_layers];
    for fb in arrived {
        for (acc, v) in full.iter_mut().zip(&fb.full) {
            *acc += v;
        }
        for (acc, v) in partial.iter_mut().zip(&fb.partial) {
            *acc += v;
        }
    }
    (full, partial)
}

/// A destination's single reception entry. A destination that fully
/// receives nothing and has no partial layer counts as partially receiving
/// the base layer.
pub fn destination_entry(c: Classification, max_layers: usize) -> (Vec<u32>, Vec<u32>) {
    let mut full = vec![0u32; max_layers];
    let mut partial = vec![0u32; max_layers];
    match (c.partial, c.full_up_to) {
        (Some(p), _) => partial[p - 1] = 1,
        (None, 0) => partial[0] = 1,
        (None, f) => full[f - 1] = 1,
    }
    (full, partial)
}

/// Per-(node, connection) credit bookkeeping at an intermediate node.
#[derive(Clone, Debug)]
pub struct NodeCreditState {
    tx_since_last: Vec<u32>,
    credits_total: u64,
    latest: Vec<Option<CreditFeedback>>,
    max_layers: u8,
}

impl NodeCreditState {
    pub fn new(ports: usize, max_layers: u8) -> Self {
        Self {
            tx_since_last: vec![0; ports],
            credits_total: 0,
            latest: vec![None; ports],
            max_layers,
        }
    }

    pub fn on_transmit(&mut self, port: usize) {
        self.tx_since_last[port] += 1;
    }

    pub fn on_downstream_feedback(&mut self, port: usize, fb: CreditFeedback) {
        self.latest[port] = Some(fb);
    }

    pub fn tx_since_last(&self) -> &[u32] {
        &self.tx_since_last
    }

    /// Evaluated after every video transmission of this connection. On
    /// emission the packet carries `batch` more credits and the summed
    /// reception arrays of the freshest packet from each branch.
    pub fn maybe_emit(
        &mut self,
        occupancies: &[usize],
        batch: u32,
        occupancy_gap: usize,
        condition2: bool,
    ) -> Option<CreditFeedback> {
        if !should_emit(&self.tx_since_last, occupancies, batch, occupancy_gap, condition2) {
            return None;
        }
        // Excess transmissions carry over so no credit is lost when ports
        // run at different speeds.
        self.tx_since_last.iter_mut().for_each(|n| *n = n.saturating_sub(batch));
        self.credits_total += batch as u64;
        let (full, partial) = aggregate_reception(self.latest.iter().flatten(), self.max_layers as usize);
        Some(CreditFeedback {
            max_layers: self.max_layers,
            credits_total: self.credits_total,
            full,
            partial,
        })
    }
}

/// Destination side: one feedback packet per `batch` video packets.
#[derive(Clone, Debug)]
pub struct DestinationCreditState {
    received_since_last: u32,
    credits_total: u64,
}

impl Default for DestinationCreditState {
    fn default() -> Self {
        Self::new()
    }
}

impl DestinationCreditState {
    pub fn new() -> Self {
        Self {
            received_since_last: 0,
            credits_total: 0,
        }
    }

    /// Returns the new credit total when a feedback packet is due.
    pub fn on_video(&mut self, batch: u32) -> Option<u64> {
        self.received_since_last += 1;
        if self.received_since_last >= batch {
            self.received_since_last = 0;
            self.credits_total += batch as u64;
            Some(self.credits_total)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CreditRuleParams {
    pub max_layers: usize,
    pub batch: u32,
    pub rate_step: f64,
    pub packet_bits: u32,
    pub buffer: SourceBuffer,
    /// Number of feedback intervals the drain rate is measured over.
    pub drain_window: u32,
}

/// What the first rule set did to the top layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TopRateAction {
    Increment,
    Decrement,
    /// Snapped so the combined rate equals the measured drain rate.
    SnapToDrain(f64),
}

/// First rule set: steer the lowest-priority layer from the source buffer
/// occupancy. `prev` is the arrival time of the previous feedback packet
/// and the occupancy at that time. `drained` is a reference time and the
/// number of packets the first hop has drained since then; without it the
/// drain rate is taken over the previous feedback interval.
pub fn rule_set_1(
    ls: &mut LayerSet,
    occupancy: usize,
    prev: Option<(SimTime, usize)>,
    drained: Option<(SimTime, u64)>,
    now: SimTime,
    p: &CreditRuleParams,
) -> TopRateAction {
    let buf = &p.buffer;
    let n = ls.len();
    let top = ls.rate(n);
    let action = if occupancy < buf.lower {
        TopRateAction::Increment
    } else if occupancy > buf.upper {
        match drained.or(prev.map(|(t, _)| (t, p.batch as u64))) {
            Some((since, packets)) if now > since => {
                let drain = packets as f64 * p.packet_bits as f64 / (now - since).as_secs_f64();
                if drain < ls.combined() {
                    TopRateAction::SnapToDrain(drain)
                } else {
                    TopRateAction::Decrement
                }
            }
            _ => TopRateAction::Decrement,
        }
    } else if occupancy > buf.middle {
        TopRateAction::Decrement
    } else {
        let rising = prev.is_some_and(|(_, occ_pf)| occupancy > occ_pf);
        if rising {
            TopRateAction::Decrement
        } else {
            TopRateAction::Increment
        }
    };
    let target = match action {
        TopRateAction::Increment => top + p.rate_step,
        TopRateAction::Decrement => top - p.rate_step,
        TopRateAction::SnapToDrain(r) => r,
    };
    ls.set_rate_clamped(n, target, p.rate_step);
    action
}

fn threshold(destinations: u32, max_layers: usize) -> u32 {
    destinations / max_layers as u32
}

/// Second rule set: shift the cumulative rates of the layers below the top
/// toward the reported reception groups. Returns the number of changes.
///
/// Rule 1 (raise `R_{i-1}`) is evaluated before rule 2 (lower `R_i`) for
/// each layer, and at most one of them applies per layer. The top layer is
/// left to [`rule_set_1`].
pub fn rule_set_2(ls: &mut LayerSet, full: &[u32], partial: &[u32], p: &CreditRuleParams) -> usize {
    let d: u32 = full.iter().chain(partial).sum();
    if d == 0 {
        return 0;
    }
    let td = threshold(d, p.max_layers);
    let n = ls.len();
    let f = |i: usize| full.get(i.wrapping_sub(1)).copied().unwrap_or(0);
    let pp = |i: usize| partial.get(i.wrapping_sub(1)).copied().unwrap_or(0);
    let mut changes = 0;
    for i in 1..=n {
        if pp(i) < td {
            continue;
        }
        if i >= 2 && f(i - 1) < td {
            let r = ls.rate(i - 1);
            if ls.set_rate_clamped(i - 1, r + p.rate_step, p.rate_step) != r {
                changes += 1;
            }
        } else if i < n && f(i) < td {
            let r = ls.rate(i);
            if ls.set_rate_clamped(i, r - p.rate_step, p.rate_step) != r {
                changes += 1;
            }
        }
    }
    changes
}

/// Structural changes made by one application of [`rule_set_3`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LayerChanges {
    pub deleted: Option<usize>,
    /// Index and cumulative rate of the new layer, counted after any
    /// deletion in the same interval.
    pub created: Option<(usize, f64)>,
}

/// Third rule set, applied to reception counts accumulated over one
/// feedback accumulation interval. A layer below the top that serves no
/// destination is deleted; then a layer is created between `R_{i-1}` and
/// `R_i` when the destinations fully receiving `i - 1`, partially
/// receiving `i` and fully receiving `i` each reach the threshold. At most
/// one deletion and one creation per interval, lowest qualifying layer
/// first.
pub fn rule_set_3(ls: &mut LayerSet, full: &[u32], partial: &[u32], p: &CreditRuleParams) -> LayerChanges {
    let mut out = LayerChanges::default();
    let d: u32 = full.iter().chain(partial).sum();
    if d == 0 {
        return out;
    }
    let td = threshold(d, p.max_layers).max(1);
    let mut full = full.to_vec();
    let mut partial = partial.to_vec();
    let at = |v: &[u32], i: usize| v.get(i.wrapping_sub(1)).copied().unwrap_or(0);

    if let Some(i) = (1..ls.len()).find(|&i| at(&partial, i) + at(&full, i) + at(&partial, i + 1) == 0) {
        ls.remove_layer(i).expect("more than one layer");
        // the removed layer's counters are zero; later layers shift down
        full.remove(i - 1);
        partial.remove(i - 1);
        out.deleted = Some(i);
    }
    if ls.len() < p.max_layers {
        for i in 1..=ls.len() {
            // nothing below the base layer: that condition always holds
            let below_ok = i == 1 || at(&full, i - 1) >= td;
            if below_ok && at(&partial, i) >= td && at(&full, i) >= td {
                let rate = (ls.rate(i - 1) + ls.rate(i)) / 2.0;
                if rate > ls.rate(i - 1) && rate < ls.rate(i) && ls.insert_layer(i, rate).is_ok() {
                    out.created = Some((i, rate));
                    break;
                }
            }
        }
    }
    out
}

/// Source-side state of the credit mechanism.
#[derive(Clone, Debug)]
pub struct SourceCreditState {
    pub params: CreditRuleParams,
    prev: Option<(SimTime, usize)>,
    // arrival times of the most recent feedback packets, oldest first
    arrivals: VecDeque<SimTime>,
    acc_full: Vec<u32>,
    acc_partial: Vec<u32>,
}

impl SourceCreditState {
    pub fn new(params: CreditRuleParams) -> Self {
        Self {
            params,
            prev: None,
            arrivals: VecDeque::new(),
            acc_full: vec![0; params.max_layers],
            acc_partial: vec![0; params.max_layers],
        }
    }

    /// Applies the first and second rule sets to a feedback packet arriving
    /// at `now` with the source buffer at `occupancy`.
    pub fn on_feedback(&mut self, ls: &mut LayerSet, fb: &CreditFeedback, occupancy: usize, now: SimTime) {
        let drained = self
            .arrivals
            .front()
            .map(|&t| (t, self.arrivals.len() as u64 * self.params.batch as u64));
        rule_set_1(ls, occupancy, self.prev, drained, now, &self.params);
        if self.arrivals.len() == self.params.drain_window as usize {
            self.arrivals.pop_front();
        }
        self.arrivals.push_back(now);
        rule_set_2(ls, &fb.full, &fb.partial, &self.params);
        for (acc, v) in self.acc_full.iter_mut().zip(&fb.full) {
            *acc += v;
        }
        for (acc, v) in self.acc_partial.iter_mut().zip(&fb.partial) {
            *acc += v;
        }
        self.prev = Some((now, occupancy));
    }

    /// End of a feedback accumulation interval.
    pub fn on_accumulation_end(&mut self, ls: &mut LayerSet) -> LayerChanges {
        let change = rule_set_3(ls, &self.acc_full, &self.acc_partial, &self.params);
        self.acc_full.iter_mut().for_each(|v| *v = 0);
        self.acc_partial.iter_mut().for_each(|v| *v = 0);
        change
    }
}
