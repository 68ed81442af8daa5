//! Layered video source model and destination-side reception monitoring.

use std::collections::VecDeque;

use thiserror::Error;

use crate::engine::SimTime;

#[derive(Debug, Error, PartialEq)]
pub enum LayerError {
    #[error("a layer set needs at least one layer")]
    Empty,
    #[error("{count} layers exceed the maximum of {max}")]
    TooMany { count: usize, max: usize },
    #[error("cumulative rates must be positive and strictly increasing: {0:?}")]
    NotIncreasing(Vec<f64>),
}

/// Cumulative layer rates `r_1 < r_2 < ... < r_N` in bits/s.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSet {
    cumulative: Vec<f64>,
    max_layers: usize,
}

impl LayerSet {
    pub fn new(cumulative: Vec<f64>, max_layers: usize) -> Result<Self, LayerError> {
        if cumulative.is_empty() {
            return Err(LayerError::Empty);
        }
        if cumulative.len() > max_layers {
            return Err(LayerError::TooMany {
                count: cumulative.len(),
                max: max_layers,
            });
        }
        let mut prev = 0.0;
        for &r in &cumulative {
            if !(r > prev) || !r.is_finite() {
                return Err(LayerError::NotIncreasing(cumulative));
            }
            prev = r;
        }
        Ok(Self {
            cumulative,
            max_layers,
        })
    }

    pub fn single(rate: f64, max_layers: usize) -> Self {
        Self::new(vec![rate], max_layers).expect("valid single layer")
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_layers(&self) -> usize {
        self.max_layers
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Cumulative rate of layer `i` (1-based); `r_0 = 0`.
    pub fn rate(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.cumulative[i - 1]
        }
    }

    /// Rate of layer `i` alone (1-based).
    pub fn layer_rate(&self, i: usize) -> f64 {
        self.rate(i) - self.rate(i - 1)
    }

    pub fn combined(&self) -> f64 {
        *self.cumulative.last().expect("non-empty")
    }

    /// Sets the cumulative rate of layer `i`, clamped to stay at least `gap`
    /// above layer `i - 1` (or above `gap` itself for the base layer) and at
    /// least `gap` below layer `i + 1`. Returns the value actually set.
    pub fn set_rate_clamped(&mut self, i: usize, rate: f64, gap: f64) -> f64 {
        let lo = self.rate(i - 1) + gap;
        let hi = if i < self.len() {
            self.rate(i + 1) - gap
        } else {
            f64::INFINITY
        };
        let current = self.rate(i);
        let v = if lo > hi {
            current
        } else {
            rate.clamp(lo, hi)
        };
        self.cumulative[i - 1] = v;
        v
    }

    /// Inserts a layer at position `i` (1-based) with the given cumulative
    /// rate; the old layer `i` becomes `i + 1`.
    pub fn insert_layer(&mut self, i: usize, rate: f64) -> Result<(), LayerError> {
        let mut next = self.cumulative.clone();
        next.insert(i - 1, rate);
        *self = Self::new(next, self.max_layers)?;
        Ok(())
    }

    /// Removes layer `i`; layer `i + 1` absorbs its rate share.
    pub fn remove_layer(&mut self, i: usize) -> Result<(), LayerError> {
        if self.len() == 1 {
            return Err(LayerError::Empty);
        }
        self.cumulative.remove(i - 1);
        Ok(())
    }
}

/// Source buffer thresholds, in packets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceBuffer {
    pub size: usize,
    pub lower: usize,
    pub middle: usize,
    pub upper: usize,
}

impl SourceBuffer {
    pub fn is_ordered(&self) -> bool {
        self.lower < self.middle && self.middle < self.upper && self.upper < self.size
    }
}

impl Default for SourceBuffer {
    fn default() -> Self {
        SourceBuffer {
            size: 600,
            lower: 20,
            middle: 200,
            upper: 300,
        }
    }
}

/// Rate-controlled packet generator over a [`LayerSet`]. Every layer emits
/// on its own deadline schedule at `layer_rate / packet_bits` packets/s.
#[derive(Clone, Debug)]
pub struct VideoEmitter {
    layers: LayerSet,
    packet_bits: u32,
    // per-layer next deadline and last emission, in fractional nanoseconds
    next_ns: Vec<f64>,
    last_ns: Vec<Option<f64>>,
    // per-layer sequence counters persist across layer-count changes
    seq: Vec<u32>,
}

impl VideoEmitter {
    pub fn new(layers: LayerSet, packet_bits: u32, now: SimTime) -> Self {
        let max = layers.max_layers();
        let n = layers.len();
        let now_ns = now.as_nanos() as f64;
        Self {
            layers,
            packet_bits,
            next_ns: vec![now_ns; n],
            last_ns: vec![None; n],
            seq: vec![0; max],
        }
    }

    pub fn layers(&self) -> &LayerSet {
        &self.layers
    }

    fn gap_ns(&self, i: usize) -> f64 {
        self.packet_bits as f64 * 1e9 / self.layers.layer_rate(i + 1)
    }

    /// Switches to a new layer set. A surviving layer's next packet is due
    /// one new gap after its previous packet (never in the past); new layers
    /// start immediately.
    pub fn set_layers(&mut self, layers: LayerSet, now: SimTime) {
        let now_ns = now.as_nanos() as f64;
        let n = layers.len();
        self.last_ns.resize(n, None);
        self.next_ns.resize(n, now_ns);
        self.layers = layers;
        for i in 0..n {
            let gap = self.gap_ns(i);
            self.next_ns[i] = match self.last_ns[i] {
                Some(last) => (last + gap).max(now_ns),
                None => self.next_ns[i].max(now_ns),
            };
        }
    }

    /// Time of the next due packet, rounded up to the nanosecond.
    pub fn next_due(&self) -> SimTime {
        let ns = self
            .next_ns
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        SimTime(ns.ceil() as u64)
    }

    /// Emits the earliest due packet if it is due at `now`, returning its
    /// `(layer, seq)`. Ties go to the base-most layer.
    pub fn pop_due(&mut self, now: SimTime) -> Option<(u8, u32)> {
        let now_ns = now.as_nanos() as f64;
        let (i, &t) = self
            .next_ns
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))?;
        if t > now_ns {
            return None;
        }
        let gap = self.gap_ns(i);
        self.last_ns[i] = Some(t);
        self.next_ns[i] = t + gap;
        let s = self.seq[i];
        self.seq[i] += 1;
        Some(((i + 1) as u8, s))
    }
}

/// Per-layer counts inside one reception window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReceptionWindow {
    /// `(expected, received)` for layers 1..=L.
    pub layers: Vec<(u32, u32)>,
    pub length: SimTime,
}

/// Layers fully received from the base up (`full_up_to`), and the layer
/// just above them if it is partially received.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Classification {
    pub full_up_to: usize,
    pub partial: Option<usize>,
}

#[derive(Clone, Debug)]
struct LayerHistory {
    arrivals: VecDeque<(SimTime, u32)>,
    // highest sequence number that has left the window
    retired: Option<u32>,
}

/// Sliding-window per-layer loss accounting at a destination, based on
/// per-layer sequence numbers.
#[derive(Clone, Debug)]
pub struct ReceptionMonitor {
    interval: SimTime,
    partial_threshold: f64,
    layers: Vec<LayerHistory>,
}

impl ReceptionMonitor {
    pub fn new(interval: SimTime, partial_threshold: f64, max_layers: usize) -> Self {
        Self {
            interval,
            partial_threshold,
            layers: vec![
                LayerHistory {
                    arrivals: VecDeque::new(),
                    retired: None,
                };
                max_layers
            ],
        }
    }

    pub fn interval(&self) -> SimTime {
        self.interval
    }

    pub fn record(&mut self, now: SimTime, layer: u8, seq: u32) {
        let h = &mut self.layers[layer as usize - 1];
        h.arrivals.push_back((now, seq));
        self.prune(now);
    }

    fn prune(&mut self, now: SimTime) {
        let cutoff = now.saturating_sub(self.interval);
        for h in &mut self.layers {
            while let Some(&(t, s)) = h.arrivals.front() {
                if t > cutoff {
                    break;
                }
                h.retired = Some(h.retired.map_or(s, |r| r.max(s)));
                h.arrivals.pop_front();
            }
        }
    }

    /// Counts over `(now - interval, now]`. A layer's expected count spans
    /// from just after the last retired sequence number to the highest one
    /// seen in the window.
    pub fn window(&mut self, now: SimTime) -> ReceptionWindow {
        self.prune(now);
        let layers = self
            .layers
            .iter()
            .map(|h| {
                let received = h.arrivals.len() as u32;
                let Some(max_seq) = h.arrivals.iter().map(|a| a.1).max() else {
                    return (0, 0);
                };
                let first = match h.retired {
                    Some(r) if r < max_seq => r + 1,
                    _ => h.arrivals.iter().map(|a| a.1).min().unwrap_or(max_seq),
                };
                let expected = (max_seq - first + 1).max(received);
                (expected, received)
            })
            .collect();
        ReceptionWindow {
            layers,
            length: self.interval,
        }
    }

    pub fn partial_threshold(&self) -> f64 {
        self.partial_threshold
    }
}

pub fn classify_reception(w: &ReceptionWindow, partial_threshold: f64) -> Classification {
    let full = |&(e, r): &(u32, u32)| e > 0 && r == e;
    let full_up_to = w.layers.iter().take_while(|l| full(l)).count();
    let partial = w.layers.get(full_up_to).and_then(|&(e, r)| {
        (e > 0 && r < e && r as f64 / e as f64 > partial_threshold).then_some(full_up_to + 1)
    });
    Classification {
        full_up_to,
        partial,
    }
}

/// Throughput of the layers received without loss, in bits/s.
pub fn goodput(w: &ReceptionWindow, packet_bits: u32, partial_threshold: f64) -> f64 {
    let c = classify_reception(w, partial_threshold);
    let packets: u64 = w.layers[..c.full_up_to].iter().map(|l| l.1 as u64).sum();
    packets as f64 * packet_bits as f64 / w.length.as_secs_f64()
}

/// Throughput of everything received, in bits/s.
pub fn throughput(w: &ReceptionWindow, packet_bits: u32) -> f64 {
    let packets: u64 = w.layers.iter().map(|l| l.1 as u64).sum();
    packets as f64 * packet_bits as f64 / w.length.as_secs_f64()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MBPS: f64 = 1e6;

    fn window(layers: &[(u32, u32)]) -> ReceptionWindow {
        ReceptionWindow {
            layers: layers.to_vec(),
            length: SimTime::from_millis(424),
        }
    }

    #[test]
    fn layer_set_rejects_bad_rates() {
        assert_eq!(LayerSet::new(vec![], 2), Err(LayerError::Empty));
        assert!(matches!(
            LayerSet::new(vec![2.0, 1.0], 2),
            Err(LayerError::NotIncreasing(_))
        ));
        assert!(matches!(
            LayerSet::new(vec![1.0, 2.0, 3.0], 2),
            Err(LayerError::TooMany { .. })
        ));
        let ls = LayerSet::new(vec![4.0 * MBPS, 9.0 * MBPS], 2).unwrap();
        assert_eq!(ls.layer_rate(1), 4.0 * MBPS);
        assert_eq!(ls.layer_rate(2), 5.0 * MBPS);
    }

    fn count_emissions(ls: LayerSet, until: SimTime) -> Vec<u32> {
        let n = ls.len();
        let mut em = VideoEmitter::new(ls, 424, SimTime::ZERO);
        let mut counts = vec![0u32; n];
        loop {
            let t = em.next_due();
            if t >= until {
                break;
            }
            let (layer, _) = em.pop_due(t).unwrap();
            counts[layer as usize - 1] += 1;
        }
        counts
    }

    #[test]
    fn emission_counts_follow_layer_rates() {
        let ls = LayerSet::new(vec![4.0 * MBPS, 10.0 * MBPS], 4).unwrap();
        // 4e6/424 = 9433.96 and 6e6/424 = 14150.94 packets in one second,
        // the first of each at t = 0
        assert_eq!(count_emissions(ls, SimTime::from_secs(1)), vec![9434, 14151]);
    }

    #[test]
    fn one_cell_per_second() {
        let ls = LayerSet::single(424.0, 1);
        assert_eq!(count_emissions(ls, SimTime::from_secs(5)), vec![5]);
    }

    #[test]
    fn rate_change_applies_at_next_emission_without_burst() {
        let mut em = VideoEmitter::new(LayerSet::single(424.0, 2), 424, SimTime::ZERO);
        assert_eq!(em.pop_due(SimTime::ZERO), Some((1, 0)));
        // ten times faster, commanded half-way through the 1 s gap
        em.set_layers(LayerSet::single(4240.0, 2), SimTime::from_millis(500));
        assert_eq!(em.next_due(), SimTime::from_millis(500));
        em.pop_due(SimTime::from_millis(500)).unwrap();
        assert_eq!(em.next_due(), SimTime::from_millis(600));
    }

    #[test]
    fn sequence_numbers_are_per_layer() {
        let ls = LayerSet::new(vec![424.0, 848.0], 2).unwrap();
        let mut em = VideoEmitter::new(ls, 424, SimTime::ZERO);
        let mut seen = vec![];
        for _ in 0..6 {
            let t = em.next_due();
            seen.push(em.pop_due(t).unwrap());
        }
        assert_eq!(seen, vec![(1, 0), (2, 0), (1, 1), (2, 1), (1, 2), (2, 2)]);
    }

    #[test]
    fn classify_examples() {
        // losses only in layer 3, half received
        let c = classify_reception(&window(&[(10, 10), (10, 10), (10, 5)]), 0.25);
        assert_eq!(
            c,
            Classification {
                full_up_to: 2,
                partial: Some(3)
            }
        );
        let c = classify_reception(&window(&[(10, 10), (10, 10), (10, 10)]), 0.25);
        assert_eq!(
            c,
            Classification {
                full_up_to: 3,
                partial: None
            }
        );
        // 20% of layer 2 is neither full nor partial
        let c = classify_reception(&window(&[(10, 10), (10, 2)]), 0.25);
        assert_eq!(
            c,
            Classification {
                full_up_to: 1,
                partial: None
            }
        );
        // exactly 25% is not "over" 25%
        let c = classify_reception(&window(&[(8, 8), (8, 2)]), 0.25);
        assert_eq!(c.partial, None);
    }

    #[test]
    fn goodput_counts_only_clean_layers() {
        // three 1 Mbps layers over 424 ms: 1000 cells each, third half lost
        let w = window(&[(1000, 1000), (1000, 1000), (1000, 500)]);
        assert!((goodput(&w, 424, 0.25) - 2.0 * MBPS).abs() < 1e-6);
        assert!((throughput(&w, 424) - 2.5 * MBPS).abs() < 1e-6);
        let clean = window(&[(1000, 1000), (1000, 1000)]);
        assert!((goodput(&clean, 424, 0.25) - 2.0 * MBPS).abs() < 1e-6);
        let lossy_base = window(&[(1000, 999), (1000, 1000)]);
        assert_eq!(goodput(&lossy_base, 424, 0.25), 0.0);
    }

    #[test]
    fn monitor_detects_gaps_from_sequence_numbers() {
        let mut m = ReceptionMonitor::new(SimTime::from_millis(10), 0.25, 2);
        for s in 0..10u32 {
            let t = SimTime::from_millis(1) + SimTime::from_micros(500 * s as u64);
            m.record(t, 1, s);
            if s % 2 == 0 {
                m.record(t, 2, s);
            }
        }
        let w = m.window(SimTime::from_millis(6));
        assert_eq!(w.layers[0], (10, 10));
        // layer 2 saw seq 0,2,4,6,8: span 9, received 5
        assert_eq!(w.layers[1], (9, 5));
        let c = classify_reception(&w, 0.25);
        assert_eq!(c.full_up_to, 1);
        assert_eq!(c.partial, Some(2));
    }

    #[test]
    fn losses_at_window_start_are_counted_against_retired_sequence() {
        let mut m = ReceptionMonitor::new(SimTime::from_millis(10), 0.25, 1);
        m.record(SimTime::from_millis(1), 1, 0);
        // seq 1..4 lost; 5 arrives after seq 0 has left the window
        m.record(SimTime::from_millis(15), 1, 5);
        let w = m.window(SimTime::from_millis(15));
        assert_eq!(w.layers[0], (5, 1));
    }

    #[test]
    fn adding_a_loss_never_improves_classification() {
        // monotonicity over all windows of small per-layer counts
        for e1 in 1..6u32 {
            for r1 in 0..=e1 {
                for e2 in 1..6u32 {
                    for r2 in 0..=e2 {
                        let base = classify_reception(&window(&[(e1, r1), (e2, r2)]), 0.25);
                        let key = |c: Classification| (c.full_up_to, c.partial.unwrap_or(0));
                        if r1 > 0 {
                            let worse = classify_reception(&window(&[(e1, r1 - 1), (e2, r2)]), 0.25);
                            assert!(key(worse) <= key(base));
                        }
                        if r2 > 0 {
                            let worse = classify_reception(&window(&[(e1, r1), (e2, r2 - 1)]), 0.25);
                            assert!(key(worse) <= key(base));
                        }
                    }
                }
            }
        }
    }
}
