//! Interfering ("guaranteed") traffic: constant-rate, square-wave and
//! Poisson packet streams that consume link bandwidth ahead of video.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::engine::SimTime;

#[derive(Clone, Debug, PartialEq)]
pub enum InterferenceKind {
    Constant {
        rate_bps: u64,
    },
    /// Starts at `low_bps` and switches level at every multiple of
    /// `half_period`.
    SquareWave {
        low_bps: u64,
        high_bps: u64,
        half_period: SimTime,
    },
    Poisson {
        mean_rate_bps: u64,
    },
}

impl InterferenceKind {
    pub fn peak_rate_bps(&self) -> u64 {
        match *self {
            InterferenceKind::Constant { rate_bps } => rate_bps,
            InterferenceKind::SquareWave {
                low_bps, high_bps, ..
            } => low_bps.max(high_bps),
            InterferenceKind::Poisson { mean_rate_bps } => mean_rate_bps,
        }
    }
}

/// A binding of an interference model to a named link (forward direction).
#[derive(Clone, Debug, PartialEq)]
pub struct InterferenceModel {
    pub kind: InterferenceKind,
    pub target_link: String,
}

enum State {
    Periodic {
        // index of the next cell within the current phase
        k: u64,
        phase: u64,
    },
    Poisson {
        rng: ChaCha8Rng,
        exp: Exp<f64>,
        // next arrival in nanoseconds, kept fractional to avoid drift
        next_ns: f64,
    },
    Silent,
}

/// Lazily produces the arrival times of one interference stream.
pub struct InterferenceGenerator {
    kind: InterferenceKind,
    packet_bits: u32,
    state: State,
    next: Option<SimTime>,
}

impl InterferenceGenerator {
    /// `seed` and `stream` select an independent Poisson stream; they are
    /// ignored by the deterministic models.
    pub fn new(kind: &InterferenceKind, packet_bits: u32, seed: u64, stream: u64) -> Self {
        let state = match *kind {
            InterferenceKind::Poisson { mean_rate_bps } if mean_rate_bps > 0 => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                let mean_gap_ns = packet_bits as f64 * 1e9 / mean_rate_bps as f64;
                let exp = Exp::new(1.0 / mean_gap_ns).expect("positive rate");
                let first = exp.sample(&mut rng);
                State::Poisson {
                    rng,
                    exp,
                    next_ns: first,
                }
            }
            InterferenceKind::Poisson { .. } => State::Silent,
            _ => State::Periodic { k: 0, phase: 0 },
        };
        let mut g = Self {
            kind: kind.clone(),
            packet_bits,
            state,
            next: None,
        };
        g.next = g.compute_next();
        g
    }

    pub fn packet_bits(&self) -> u32 {
        self.packet_bits
    }

    pub fn peek(&self) -> Option<SimTime> {
        self.next
    }

    pub fn advance(&mut self) {
        match &mut self.state {
            State::Periodic { k, .. } => *k += 1,
            State::Poisson { rng, exp, next_ns } => *next_ns += exp.sample(rng),
            State::Silent => {}
        }
        self.next = self.compute_next();
    }

    fn compute_next(&mut self) -> Option<SimTime> {
        let bits = self.packet_bits as u128;
        match (&mut self.state, &self.kind) {
            (State::Periodic { k, .. }, InterferenceKind::Constant { rate_bps }) => {
                if *rate_bps == 0 {
                    return None;
                }
                let ns = (*k as u128 * bits * 1_000_000_000) / *rate_bps as u128;
                Some(SimTime(ns as u64))
            }
            (
                State::Periodic { k, phase },
                InterferenceKind::SquareWave {
                    low_bps,
                    high_bps,
                    half_period,
                },
            ) => loop {
                let rate = if *phase % 2 == 0 { *low_bps } else { *high_bps };
                let start = *phase as u128 * half_period.as_nanos() as u128;
                let end = start + half_period.as_nanos() as u128;
                if rate > 0 {
                    let ns = start + (*k as u128 * bits * 1_000_000_000) / rate as u128;
                    if ns < end {
                        return Some(SimTime(ns as u64));
                    }
                }
                *phase += 1;
                *k = 0;
            },
            (State::Poisson { next_ns, .. }, _) => Some(SimTime(next_ns.round() as u64)),
            (State::Silent, _) => None,
            (State::Periodic { .. }, InterferenceKind::Poisson { .. }) => None,
        }
    }
}

/// Mean rate in bits/s of the interference generated in `[from, to)`.
pub fn occupied_bandwidth(
    kind: &InterferenceKind,
    packet_bits: u32,
    seed: u64,
    stream: u64,
    from: SimTime,
    to: SimTime,
) -> f64 {
    assert!(to > from, "empty measurement window");
    let mut g = InterferenceGenerator::new(kind, packet_bits, seed, stream);
    let mut n = 0u64;
    while let Some(t) = g.peek() {
        if t >= to {
            break;
        }
        if t >= from {
            n += 1;
        }
        g.advance();
    }
    n as f64 * packet_bits as f64 / (to - from).as_secs_f64()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MBPS: u64 = 1_000_000;

    #[test]
    fn constant_rate_is_exact_over_any_window() {
        let k = InterferenceKind::Constant { rate_bps: 90 * MBPS };
        // 90 Mbps of 424-bit cells over 424 ms is exactly 90 000 cells
        let r = occupied_bandwidth(&k, 424, 0, 0, SimTime::ZERO, SimTime::from_millis(424));
        assert!((r - 90e6).abs() < 1e-6, "{r}");
        let r = occupied_bandwidth(
            &k,
            424,
            0,
            0,
            SimTime::from_millis(1_000),
            SimTime::from_millis(1_424),
        );
        assert!((r - 90e6).abs() / 90e6 < 1e-4, "{r}");
    }

    #[test]
    fn square_wave_full_period_averages_levels() {
        let k = InterferenceKind::SquareWave {
            low_bps: 90 * MBPS,
            high_bps: 95 * MBPS,
            half_period: SimTime::from_secs(2),
        };
        let r = occupied_bandwidth(&k, 424, 0, 0, SimTime::ZERO, SimTime::from_secs(4));
        assert!((r - 92.5e6).abs() / 92.5e6 < 1e-5, "{r}");
    }

    #[test]
    fn square_wave_switches_at_half_period_multiples() {
        let k = InterferenceKind::SquareWave {
            low_bps: 10 * MBPS,
            high_bps: 20 * MBPS,
            half_period: SimTime::from_millis(1),
        };
        let mut g = InterferenceGenerator::new(&k, 1_000, 0, 0);
        let mut times = Vec::new();
        while let Some(t) = g.peek() {
            if t >= SimTime::from_millis(2) {
                break;
            }
            times.push(t.as_nanos());
            g.advance();
        }
        // 10 cells of 100 us, then 20 of 50 us starting exactly at 1 ms
        assert_eq!(times.len(), 30);
        assert_eq!(times[9], 900_000);
        assert_eq!(times[10], 1_000_000);
        assert_eq!(times[11], 1_050_000);
    }

    #[test]
    fn poisson_is_reproducible_and_streams_differ() {
        let k = InterferenceKind::Poisson { mean_rate_bps: 90 * MBPS };
        let take = |seed, stream| {
            let mut g = InterferenceGenerator::new(&k, 424, seed, stream);
            (0..50)
                .map(|_| {
                    let t = g.peek().unwrap();
                    g.advance();
                    t
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(take(7, 1), take(7, 1));
        assert_ne!(take(7, 1), take(7, 2));
        assert_ne!(take(7, 1), take(8, 1));
    }

    #[test]
    fn poisson_mean_within_counting_noise() {
        // sigma of the measured rate over T seconds: rate / sqrt(lambda T)
        let rate: f64 = 90e6;
        let t: f64 = 10.0;
        let lambda = rate / 424.0;
        let sigma = rate / (lambda * t).sqrt();
        let k = InterferenceKind::Poisson { mean_rate_bps: 90 * MBPS };
        let mut inside_3 = 0;
        for seed in 0..100u64 {
            let r = occupied_bandwidth(&k, 424, seed, 3, SimTime::ZERO, SimTime::from_secs(10));
            let z = (r - rate).abs() / sigma;
            assert!(z < 4.5, "seed {seed}: {r} is {z} sigma off");
            if z <= 3.0 {
                inside_3 += 1;
            }
        }
        assert!(inside_3 >= 97, "{inside_3}/100 within 3 sigma");
    }
}
