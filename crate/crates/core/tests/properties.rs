use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::brute_force_merge;
use layercast::credit::{rule_set_1, rule_set_2, rule_set_3, CreditLinkState, CreditRuleParams};
use layercast::engine::{ConnId, EnqueueOutcome, EventQueue, Link, NodeId, Packet, PriorityQueue, SimTime};
use layercast::metrics::fairness_sigma;
use layercast::rate::{merge_entries, EricaMeasurement, EricaParams, FwdFeedback};
use layercast::scenario::{fairness, parse_scenario, scalability, serialize_scenario, MechanismKind};
use layercast::video::{goodput, throughput, LayerSet, ReceptionWindow, SourceBuffer, VideoEmitter};

#[test]
fn million_events_dispatch_in_time_then_insertion_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut q = EventQueue::new();
    let mut all = Vec::with_capacity(1_000_000);
    for i in 0..1_000_000u32 {
        // a narrow time range forces plenty of ties
        let t = SimTime(rng.random_range(0..50_000));
        q.schedule(t, i);
        all.push((t, i));
    }
    all.sort_by_key(|&(t, i)| (t, i));
    let mut got = Vec::with_capacity(all.len());
    while let Some(e) = q.pop() {
        got.push(e);
    }
    assert_eq!(got, all);
}

proptest! {
    #[test]
    fn interleaved_schedule_and_pop_match_sorted_model(
        ops in prop::collection::vec((any::<bool>(), 0u64..20), 1..400)
    ) {
        let mut q = EventQueue::new();
        let mut model: BTreeSet<(SimTime, usize)> = BTreeSet::new();
        let mut now = SimTime::ZERO;
        for (i, (pop, dt)) in ops.into_iter().enumerate() {
            if pop {
                let expect = model.pop_first();
                let got = q.pop();
                prop_assert_eq!(got, expect);
                if let Some((t, _)) = expect {
                    now = t;
                }
            } else {
                let t = now + SimTime(dt);
                q.schedule(t, i);
                model.insert((t, i));
            }
        }
    }
}

fn video(layer: u8, seq: u32) -> Packet {
    Packet::video(ConnId(0), layer, seq)
}

proptest! {
    #[test]
    fn queue_matches_replay_oracle(
        cap in 1usize..12,
        ops in prop::collection::vec(prop::option::weighted(0.8, 1u8..5), 1..300)
    ) {
        let mut q = PriorityQueue::new(cap);
        // model entries are (layer, arrival index)
        let mut model: Vec<(u8, u32)> = Vec::new();
        for (i, op) in ops.into_iter().enumerate() {
            let i = i as u32;
            match op {
                Some(layer) => {
                    let out = q.enqueue(video(layer, i));
                    model.push((layer, i));
                    let dropped = if model.len() > cap {
                        let worst = *model.iter().max().unwrap();
                        model.retain(|&e| e != worst);
                        Some(worst)
                    } else {
                        None
                    };
                    match (out, dropped) {
                        (EnqueueOutcome::Accepted, None) => {}
                        (EnqueueOutcome::DroppedIncoming(p), Some(d))
                        | (EnqueueOutcome::DroppedOther(p), Some(d)) => {
                            prop_assert_eq!((p.layer, p.seq), d);
                            // nothing of lower priority may stay behind
                            prop_assert!(q.iter().all(|b| b.layer <= p.layer));
                        }
                        (o, d) => prop_assert!(false, "queue {:?} vs oracle {:?}", o, d),
                    }
                }
                None => {
                    let got = q.dequeue().map(|p| (p.layer, p.seq));
                    let oldest = model.iter().enumerate().min_by_key(|(_, e)| e.1).map(|(k, _)| k);
                    let expect = oldest.map(|k| model.remove(k));
                    prop_assert_eq!(got, expect);
                }
            }
            prop_assert!(q.len() <= cap);
            let mut held: Vec<(u8, u32)> = q.iter().map(|p| (p.layer, p.seq)).collect();
            held.sort_by_key(|e| e.1);
            let mut m = model.clone();
            m.sort_by_key(|e| e.1);
            prop_assert_eq!(held, m);
        }
    }
}

fn pool_strategy() -> impl Strategy<Value = Vec<(f64, u32)>> {
    // rates on a 1 kbps grid keep every goodput sum exact
    prop::collection::vec((1u32..20_000, 1u32..6), 1..=8)
        .prop_map(|v| v.into_iter().map(|(r, c)| (r as f64 * 1000.0, c)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn merge_matches_brute_force(
        pool in pool_strategy(),
        max_layers in 1usize..=5,
        tol_kbps in prop::sample::select(vec![0u32, 100, 1000]),
    ) {
        let tol = tol_kbps as f64 * 1000.0;
        let out = merge_entries(pool.clone(), max_layers, tol);
        prop_assert_eq!(&out.entries, &brute_force_merge(&pool, max_layers, tol));
        prop_assert!(out.entries.len() <= max_layers);
        let before: u32 = pool.iter().map(|e| e.1).sum();
        let after: u32 = out.entries.iter().map(|e| e.1).sum();
        prop_assert_eq!(before, after);
        let min = pool.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(out.entries[0].0, min);
        prop_assert!(out.entries.windows(2).all(|w| w[0].0 < w[1].0));
    }
}

#[derive(Clone, Debug)]
enum CreditOp {
    Send,
    Feedback(u64),
}

proptest! {
    #[test]
    fn credit_loop_never_overdraws(
        initial in 1u64..50,
        ops in prop::collection::vec(
            prop_oneof![3 => Just(CreditOp::Send), 1 => (0u64..400).prop_map(CreditOp::Feedback)],
            1..500,
        )
    ) {
        let mut c = CreditLinkState::new(initial);
        let mut highest = 0u64;
        let mut sent = 0u64;
        for op in ops {
            match op {
                CreditOp::Send => {
                    if c.can_send() {
                        c.consume();
                        sent += 1;
                    }
                }
                CreditOp::Feedback(total) => {
                    let before = c.balance();
                    let granted = c.on_feedback(total);
                    prop_assert_eq!(c.balance(), before + granted);
                    highest = highest.max(total);
                }
            }
            prop_assert!(c.conserved());
            prop_assert_eq!(c.balance() + sent, initial + highest);
        }
    }
}

fn rule_params(max_layers: usize) -> CreditRuleParams {
    CreditRuleParams {
        max_layers,
        batch: 8,
        rate_step: 16.0 * 424.0,
        packet_bits: 424,
        buffer: SourceBuffer::default(),
        drain_window: 4,
    }
}

#[derive(Clone, Debug)]
enum RuleOp {
    Feedback { occupancy: usize, full: Vec<u32>, partial: Vec<u32> },
    Accumulate { full: Vec<u32>, partial: Vec<u32> },
}

fn counts(l: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..4, l)
}

proptest! {
    #[test]
    fn rule_sets_keep_layers_valid(
        (l, ops) in (1usize..=6).prop_flat_map(|l| (Just(l), prop::collection::vec(
            prop_oneof![
                3 => (0usize..600, counts(l), counts(l))
                    .prop_map(|(occupancy, full, partial)| RuleOp::Feedback { occupancy, full, partial }),
                1 => (counts(l), counts(l)).prop_map(|(full, partial)| RuleOp::Accumulate { full, partial }),
            ],
            1..300,
        ))),
    ) {
        let p = rule_params(l);
        let mut ls = LayerSet::single(150_000.0, l);
        let mut prev = None;
        let mut now = SimTime::ZERO;
        for op in ops {
            now += SimTime::from_micros(500);
            match op {
                RuleOp::Feedback { occupancy, full, partial } => {
                    rule_set_1(&mut ls, occupancy, prev, None, now, &p);
                    rule_set_2(&mut ls, &full, &partial, &p);
                    prev = Some((now, occupancy));
                }
                RuleOp::Accumulate { full, partial } => {
                    rule_set_3(&mut ls, &full, &partial, &p);
                }
            }
            prop_assert!(!ls.is_empty() && ls.len() <= l);
            prop_assert!(LayerSet::new(ls.cumulative().to_vec(), l).is_ok(), "{:?}", ls);
        }
    }

    #[test]
    fn sigma_ignores_order_and_scales(
        mut xs in prop::collection::vec(0.0f64..100.0, 1..12),
        k in 0.01f64..100.0,
        seed in any::<u64>(),
    ) {
        let s = fairness_sigma(&xs);
        let scaled: Vec<f64> = xs.iter().map(|x| x * k).collect();
        prop_assert!((fairness_sigma(&scaled) - k * s).abs() <= 1e-9 * (1.0 + k * s));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..xs.len()).rev() {
            xs.swap(i, rng.random_range(0..=i));
        }
        prop_assert!((fairness_sigma(&xs) - s).abs() <= 1e-9 * (1.0 + s));
    }

    #[test]
    fn erica_marking_never_raises_explicit_rate(
        capacity in 1e6f64..2e8,
        guaranteed in 0f64..2e8,
        abr_input in 0f64..2e8,
        active in 0usize..10,
        current in 1e3f64..1e8,
        incoming in 1e3f64..1e8,
    ) {
        let params = EricaParams {
            target_utilization: 0.99,
            interval: SimTime::from_millis(10),
            min_rate: 50_000.0,
            overload_floor: 0.1,
        };
        let m = EricaMeasurement::compute(&params, capacity, guaranteed, abr_input, active);
        let fb = FwdFeedback { max_layers: 4, current_rate: current, explicit_rate: incoming };
        prop_assert!(m.explicit_rate(&params, fb.current_rate, fb.explicit_rate) <= incoming);
    }

    #[test]
    fn emitter_spaces_each_layer_at_its_rate(
        steps in prop::collection::vec(20_000u32..5_000_000, 1..5),
    ) {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = steps.iter().map(|&s| { acc += s as f64; acc }).collect();
        let ls = LayerSet::new(cumulative, 8).unwrap();
        let mut em = VideoEmitter::new(ls.clone(), 424, SimTime::ZERO);
        let end = SimTime::from_millis(100);
        let mut per_layer = vec![0u64; ls.len()];
        loop {
            let t = em.next_due();
            if t >= end {
                break;
            }
            while let Some((layer, _)) = em.pop_due(t) {
                per_layer[layer as usize - 1] += 1;
            }
        }
        for (i, &n) in per_layer.iter().enumerate() {
            let ideal = ls.layer_rate(i + 1) * 0.1 / 424.0;
            prop_assert!((n as f64 - ideal).abs() <= 1.0, "layer {}: {} vs {}", i + 1, n, ideal);
        }
    }

    #[test]
    fn goodput_never_exceeds_throughput(
        layers in prop::collection::vec((0u32..100, 0u32..100), 1..8),
        thr in 0.0f64..1.0,
    ) {
        let w = ReceptionWindow {
            layers: layers.into_iter().map(|(e, r)| (e.max(r), r)).collect(),
            length: SimTime::from_millis(10),
        };
        prop_assert!(goodput(&w, 424, thr) <= throughput(&w, 424));
    }

    #[test]
    fn link_arrival_follows_departure(
        capacity in 1u64..1_000_000_000_000,
        delay_ns in 0u64..10_000_000,
        bits in 1u32..100_000,
        depart in 0u64..1_000_000_000_000,
    ) {
        let link = Link {
            capacity_bps: capacity,
            prop_delay: SimTime(delay_ns),
            endpoints: (NodeId(0), NodeId(1)),
        };
        prop_assert!(link.transmit(bits, SimTime(depart)) > SimTime(depart));
    }

    #[test]
    fn builtin_scenarios_round_trip(
        credit in any::<bool>(),
        layers in 1usize..=8,
        delay_us in 0u64..10_000,
        seed in any::<u64>(),
        duration_ms in 3_000u64..60_000,
        which in 0u8..2,
    ) {
        let kind = if credit { MechanismKind::Credit } else { MechanismKind::Rate };
        let delay = SimTime::from_micros(delay_us);
        let mut sc = if which == 0 { scalability(kind, layers, delay) } else { fairness(kind, delay) };
        sc.sim.seed = seed;
        sc.sim.duration = SimTime::from_millis(duration_ms);
        let text = serialize_scenario(&sc);
        let back = parse_scenario(&text).unwrap();
        prop_assert_eq!(back, sc);
    }
}
