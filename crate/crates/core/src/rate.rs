//! Rate-based control: explicit-rate (ERICA) marking at output ports,
//! backward-feedback generation at destinations, goodput-maximizing merging
//! at junction nodes and application of the merged rates at the source.

use crate::engine::{ConnId, SimTime};
use crate::video::{LayerError, LayerSet};

/// Forward feedback: travels with the video from the source to every
/// destination and is marked by each output port on the way.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FwdFeedback {
    pub max_layers: u8,
    /// Combined source rate when the packet was generated, bits/s.
    pub current_rate: f64,
    /// Smallest explicit rate allowed so far along the path, bits/s.
    pub explicit_rate: f64,
}

/// Backward feedback: cumulative rates requested by downstream destinations
/// with the number of destinations behind each.
#[derive(Clone, Debug, PartialEq)]
pub struct BwdFeedback {
    pub max_layers: u8,
    pub rates: Vec<f64>,
    pub counters: Vec<u32>,
}

impl BwdFeedback {
    pub fn entries(&self) -> impl Iterator<Item = (f64, u32)> + '_ {
        self.rates.iter().copied().zip(self.counters.iter().copied())
    }

    pub fn destinations(&self) -> u32 {
        self.counters.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EricaParams {
    pub target_utilization: f64,
    pub interval: SimTime,
    /// Explicit rate handed out when no ABR capacity is left.
    pub min_rate: f64,
    pub overload_floor: f64,
}

/// Values an output port derives at the end of each averaging interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EricaMeasurement {
    pub abr_capacity: f64,
    pub abr_input_rate: f64,
    pub overload: f64,
    pub fair_share: f64,
    pub active_conns: usize,
}

impl EricaMeasurement {
    pub fn compute(
        params: &EricaParams,
        link_capacity: f64,
        guaranteed_rate: f64,
        abr_input_rate: f64,
        active_conns: usize,
    ) -> Self {
        let abr_capacity = params.target_utilization * link_capacity - guaranteed_rate;
        let overload = if abr_capacity > 0.0 {
            abr_input_rate / abr_capacity
        } else {
            f64::INFINITY
        };
        let fair_share = abr_capacity / active_conns.max(1) as f64;
        EricaMeasurement {
            abr_capacity,
            abr_input_rate,
            overload,
            fair_share,
            active_conns,
        }
    }

    /// Explicit rate for a connection currently sending at `current_rate`,
    /// never above what the previous hop allowed.
    pub fn explicit_rate(&self, params: &EricaParams, current_rate: f64, incoming: f64) -> f64 {
        if self.abr_capacity <= 0.0 {
            return params.min_rate.min(incoming);
        }
        let local = if self.overload < params.overload_floor {
            self.fair_share
        } else {
            let vc_share = current_rate / self.overload;
            vc_share.max(self.fair_share)
        };
        local
            .min(self.abr_capacity)
            .max(params.min_rate)
            .min(incoming)
    }
}

/// ERICA state of one output port.
#[derive(Clone, Debug)]
pub struct EricaPort {
    capacity_bps: f64,
    params: EricaParams,
    abr_bits: u64,
    active: Vec<ConnId>,
    last: Option<EricaMeasurement>,
}

impl EricaPort {
    pub fn new(capacity_bps: f64, params: EricaParams) -> Self {
        Self {
            capacity_bps,
            params,
            abr_bits: 0,
            active: Vec::new(),
            last: None,
        }
    }

    pub fn record_video(&mut self, conn: ConnId, bits: u32) {
        self.abr_bits += bits as u64;
        if !self.active.contains(&conn) {
            self.active.push(conn);
        }
    }

    /// Closes the current averaging interval given the guaranteed traffic
    /// that arrived during it, and starts a new one.
    pub fn end_interval(&mut self, guaranteed_bits: u64) -> EricaMeasurement {
        let secs = self.params.interval.as_secs_f64();
        let m = EricaMeasurement::compute(
            &self.params,
            self.capacity_bps,
            guaranteed_bits as f64 / secs,
            self.abr_bits as f64 / secs,
            self.active.len(),
        );
        self.abr_bits = 0;
        self.active.clear();
        self.last = Some(m);
        m
    }

    pub fn measurement(&self) -> Option<&EricaMeasurement> {
        self.last.as_ref()
    }

    /// Marks a forward feedback packet leaving through this port. Before the
    /// first interval completes the port holds the connection at its current
    /// rate.
    pub fn mark(&self, fb: &FwdFeedback) -> FwdFeedback {
        let explicit_rate = match &self.last {
            Some(m) => m.explicit_rate(&self.params, fb.current_rate, fb.explicit_rate),
            None => fb.current_rate.min(fb.explicit_rate),
        };
        FwdFeedback {
            explicit_rate,
            ..*fb
        }
    }
}

/// A destination answers each forward packet with a single-entry request.
pub fn on_fwd_feedback_at_dest(fb: &FwdFeedback) -> BwdFeedback {
    BwdFeedback {
        max_layers: fb.max_layers,
        rates: vec![fb.explicit_rate],
        counters: vec![1],
    }
}

/// One iteration of entry removal during a merge.
#[derive(Clone, Debug, PartialEq)]
pub struct RemovalStep {
    /// `(index, G)` for every removable entry, `G` being the combined
    /// goodput if that entry were folded into the one below it.
    pub candidates: Vec<(usize, f64)>,
    pub removed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeOutcome {
    pub entries: Vec<(f64, u32)>,
    pub steps: Vec<RemovalStep>,
}

pub fn combined_goodput(entries: &[(f64, u32)]) -> f64 {
    entries.iter().map(|&(r, c)| r * c as f64).sum()
}

/// Pools `(rate, counter)` entries, folds rates closer than `tolerance`
/// into the lesser one, then greedily removes entries (never the first)
/// until at most `max_layers` remain, each time picking the removal that
/// leaves the highest combined goodput. Ties remove the higher rate.
pub fn merge_entries(
    pool: impl IntoIterator<Item = (f64, u32)>,
    max_layers: usize,
    tolerance: f64,
) -> MergeOutcome {
    let mut sorted: Vec<(f64, u32)> = pool.into_iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut entries: Vec<(f64, u32)> = Vec::with_capacity(sorted.len());
    for (r, c) in sorted {
        match entries.last_mut() {
            Some(last) if r - last.0 < tolerance => last.1 += c,
            _ => entries.push((r, c)),
        }
    }
    let mut steps = Vec::new();
    let max_layers = max_layers.max(1);
    while entries.len() > max_layers {
        // folding entry k into k-1 costs c_k * (r_k - r_{k-1}) of goodput
        let total = combined_goodput(&entries);
        let candidates: Vec<(usize, f64)> = (1..entries.len())
            .map(|k| {
                let loss = entries[k].1 as f64 * (entries[k].0 - entries[k - 1].0);
                (k, total - loss)
            })
            .collect();
        let mut best = candidates[0];
        for &cand in &candidates[1..] {
            if cand.1 >= best.1 {
                best = cand;
            }
        }
        let k = best.0;
        entries[k - 1].1 += entries[k].1;
        entries.remove(k);
        steps.push(RemovalStep {
            candidates,
            removed: k,
        });
    }
    MergeOutcome { entries, steps }
}

pub fn merge_bwd<'a>(
    arrivals: impl IntoIterator<Item = &'a BwdFeedback>,
    max_layers: u8,
    tolerance: f64,
) -> BwdFeedback {
    let pool: Vec<(f64, u32)> = arrivals.into_iter().flat_map(|fb| fb.entries()).collect();
    let out = merge_entries(pool, max_layers as usize, tolerance);
    let (rates, counters) = out.entries.into_iter().unzip();
    BwdFeedback {
        max_layers,
        rates,
        counters,
    }
}

/// Junction-node merge bookkeeping for one connection.
#[derive(Clone, Debug)]
pub struct MergeState {
    latest: Vec<Option<BwdFeedback>>,
    generation: u64,
    max_layers: u8,
    tolerance: f64,
}

impl MergeState {
    pub fn new(branches: usize, max_layers: u8, tolerance: f64) -> Self {
        Self {
            latest: vec![None; branches],
            generation: 0,
            max_layers,
            tolerance,
        }
    }

    /// Identifies the current merge cycle; a timer armed in an earlier cycle
    /// is stale.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Stores a branch's packet (the freshest wins) and merges once every
    /// branch has been heard from.
    pub fn on_arrival(&mut self, branch: usize, fb: BwdFeedback) -> Option<BwdFeedback> {
        self.latest[branch] = Some(fb);
        if self.latest.iter().all(Option::is_some) {
            Some(self.flush())
        } else {
            None
        }
    }

    /// Merge timer expiry: merges whatever has arrived, if anything.
    pub fn on_timeout(&mut self) -> Option<BwdFeedback> {
        if self.latest.iter().any(Option::is_some) {
            Some(self.flush())
        } else {
            self.generation += 1;
            None
        }
    }

    fn flush(&mut self) -> BwdFeedback {
        let merged = merge_bwd(self.latest.iter().flatten(), self.max_layers, self.tolerance);
        self.latest.iter_mut().for_each(|s| *s = None);
        self.generation += 1;
        merged
    }
}

/// The source encodes exactly the layers the merged feedback asks for.
pub fn apply_bwd_at_source(fb: &BwdFeedback, max_layers: usize) -> Result<LayerSet, LayerError> {
    LayerSet::new(fb.rates.clone(), max_layers)
}

/// Emits one forward feedback packet per `spacing` video packets.
#[derive(Clone, Debug)]
pub struct FwdPacer {
    spacing: u32,
    since_last: u32,
}

impl FwdPacer {
    pub fn new(spacing: u32) -> Self {
        assert!(spacing > 0);
        Self {
            spacing,
            since_last: 0,
        }
    }

    /// Call after each video packet; true when a forward packet is due.
    pub fn on_video_sent(&mut self) -> bool {
        self.since_last += 1;
        if self.since_last >= self.spacing {
            self.since_last = 0;
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const M: f64 = 1e6;

    fn params() -> EricaParams {
        EricaParams {
            target_utilization: 0.99,
            interval: SimTime::from_millis(10),
            min_rate: 10e3,
            overload_floor: 1e-3,
        }
    }

    #[test]
    fn erica_single_connection_behind_90mbps() {
        let m = EricaMeasurement::compute(&params(), 100.0 * M, 90.0 * M, 20.0 * M, 1);
        assert!((m.abr_capacity - 9.0 * M).abs() < 1e-6);
        assert!((m.overload - 20.0 / 9.0).abs() < 1e-12);
        assert!((m.fair_share - 9.0 * M).abs() < 1e-6);
        let re = m.explicit_rate(&params(), 20.0 * M, 100.0 * M);
        assert!((re - 9.0 * M).abs() < 1e-6, "{re}");
    }

    #[test]
    fn erica_never_exceeds_upstream_rate() {
        let m = EricaMeasurement::compute(&params(), 100.0 * M, 90.0 * M, 20.0 * M, 1);
        assert_eq!(m.explicit_rate(&params(), 20.0 * M, 4.0 * M), 4.0 * M);
    }

    #[test]
    fn erica_three_equal_connections_get_fair_share() {
        // 9.9 Mbps of ABR capacity, each connection at its share
        let share = 3.3 * M;
        let m = EricaMeasurement::compute(&params(), 100.0 * M, 89.1 * M, 3.0 * share, 3);
        assert!((m.abr_capacity - 9.9 * M).abs() < 1.0);
        assert!((m.overload - 1.0).abs() < 1e-6);
        let re = m.explicit_rate(&params(), share, 100.0 * M);
        assert!((re - share).abs() < 10.0, "{re}");
    }

    #[test]
    fn erica_without_capacity_falls_to_floor() {
        let m = EricaMeasurement::compute(&params(), 100.0 * M, 99.5 * M, 1.0 * M, 1);
        assert_eq!(m.explicit_rate(&params(), 1.0 * M, 100.0 * M), 10e3);
    }

    #[test]
    fn erica_idle_port_hands_out_fair_share() {
        let m = EricaMeasurement::compute(&params(), 100.0 * M, 90.0 * M, 0.0, 0);
        let re = m.explicit_rate(&params(), 0.15 * M, 100.0 * M);
        assert!((re - 9.0 * M).abs() < 1e-6);
    }

    #[test]
    fn port_holds_rate_until_first_interval() {
        let mut port = EricaPort::new(100.0 * M, params());
        let fb = FwdFeedback {
            max_layers: 2,
            current_rate: 0.15 * M,
            explicit_rate: 100.0 * M,
        };
        assert_eq!(port.mark(&fb).explicit_rate, 0.15 * M);
        port.record_video(ConnId(0), 1_500);
        // 90 Mbps of guaranteed traffic over 10 ms
        port.end_interval(900_000);
        assert!((port.mark(&fb).explicit_rate - 9.0 * M).abs() < 1e-6);
    }

    #[test]
    fn destination_copies_explicit_rate() {
        let fb = FwdFeedback {
            max_layers: 3,
            current_rate: 1.0,
            explicit_rate: 5.0 * M,
        };
        let b = on_fwd_feedback_at_dest(&fb);
        assert_eq!(b.rates, vec![5.0 * M]);
        assert_eq!(b.counters, vec![1]);
        assert_eq!(b.max_layers, 3);
    }

    #[test]
    fn merge_of_two_packets_into_two_layers() {
        let a = BwdFeedback {
            max_layers: 2,
            rates: vec![1.0, 3.0],
            counters: vec![2, 1],
        };
        let b = BwdFeedback {
            max_layers: 2,
            rates: vec![3.0, 4.0],
            counters: vec![2, 1],
        };
        let out = merge_bwd([&a, &b], 2, 0.1);
        assert_eq!(out.rates, vec![1.0, 3.0]);
        assert_eq!(out.counters, vec![2, 4]);
    }

    #[test]
    fn merge_pool_within_limit_passes_through() {
        let out = merge_entries([(2.0, 1), (5.0, 3)], 2, 0.1);
        assert_eq!(out.entries, vec![(2.0, 1), (5.0, 3)]);
        assert!(out.steps.is_empty());
    }

    #[test]
    fn merge_keeps_high_outlier() {
        let out = merge_entries([(1.0, 1), (2.0, 1), (10.0, 1)], 2, 0.1);
        assert_eq!(out.steps[0].candidates, vec![(1, 12.0), (2, 5.0)]);
        assert_eq!(out.entries, vec![(1.0, 2), (10.0, 1)]);
    }

    #[test]
    fn nearly_equal_rates_fold_into_the_lesser() {
        let out = merge_entries([(4.05e6, 1), (4.0e6, 2), (9.0e6, 1)], 4, 100e3);
        assert_eq!(out.entries, vec![(4.0e6, 3), (9.0e6, 1)]);
    }

    #[test]
    fn goodput_ties_remove_the_higher_rate() {
        // both removals cost 2: (2-1)*2 vs (4-2)*1
        let out = merge_entries([(1.0, 1), (2.0, 2), (4.0, 1)], 2, 0.1);
        assert_eq!(out.steps[0].removed, 2);
        assert_eq!(out.entries, vec![(1.0, 1), (2.0, 3)]);
    }

    #[test]
    fn merge_state_waits_for_every_branch() {
        let mut ms = MergeState::new(2, 2, 100e3);
        let fb = |r: f64| BwdFeedback {
            max_layers: 2,
            rates: vec![r],
            counters: vec![1],
        };
        assert!(ms.on_arrival(0, fb(9e6)).is_none());
        // freshest from branch 0 replaces the earlier one
        assert!(ms.on_arrival(0, fb(8e6)).is_none());
        let g0 = ms.generation();
        let out = ms.on_arrival(1, fb(4e6)).unwrap();
        assert_eq!(out.rates, vec![4e6, 8e6]);
        assert_eq!(ms.generation(), g0 + 1);
        assert!(ms.on_timeout().is_none());
        ms.on_arrival(1, fb(5e6));
        assert_eq!(ms.on_timeout().unwrap().rates, vec![5e6]);
    }

    #[test]
    fn source_applies_cumulative_rates() {
        let fb = BwdFeedback {
            max_layers: 2,
            rates: vec![4.0 * M, 9.0 * M],
            counters: vec![1, 1],
        };
        let ls = apply_bwd_at_source(&fb, 2).unwrap();
        assert_eq!(ls.layer_rate(1), 4.0 * M);
        assert_eq!(ls.layer_rate(2), 5.0 * M);
        assert_eq!(ls.combined(), 9.0 * M);
        let single = BwdFeedback {
            max_layers: 2,
            rates: vec![9.0 * M],
            counters: vec![2],
        };
        assert_eq!(apply_bwd_at_source(&single, 2).unwrap().len(), 1);
    }

    #[test]
    fn pacer_ratio() {
        let mut p = FwdPacer::new(15);
        let n = (0..150).filter(|_| p.on_video_sent()).count();
        assert_eq!(n, 10);
    }

    #[test]
    fn pacing_interval_at_9mbps() {
        // 15 cells at 9 Mbps
        let gap: f64 = 15.0 * 424.0 / 9e6;
        assert!((gap - 706.67e-6).abs() < 1e-8);
    }
}
