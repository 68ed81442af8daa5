//! The three experiment topologies.

use super::{ConnectionSpec, LinkSpec, MechanismKind, NodeRole, NodeSpec, Scenario, SimParams, TrafficBinding};
use crate::engine::SimTime;
use crate::traffic::InterferenceKind;

const MBPS: u64 = 1_000_000;
const CAPACITY: u64 = 100 * MBPS;
const EDGE_DELAY: SimTime = SimTime::from_micros(5);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    Responsiveness1,
    Responsiveness2,
    Scalability,
    Fairness,
}

impl Builtin {
    pub const ALL: [Builtin; 4] = [
        Builtin::Responsiveness1,
        Builtin::Responsiveness2,
        Builtin::Scalability,
        Builtin::Fairness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Responsiveness1 => "responsiveness1",
            Builtin::Responsiveness2 => "responsiveness2",
            Builtin::Scalability => "scalability",
            Builtin::Fairness => "fairness",
        }
    }

    pub fn from_name(s: &str) -> Option<Builtin> {
        Builtin::ALL.into_iter().find(|b| b.name() == s)
    }
}

fn node(id: &str, role: NodeRole) -> NodeSpec {
    NodeSpec { id: id.into(), role }
}

fn link(name: &str, a: &str, b: &str, delay: SimTime) -> LinkSpec {
    LinkSpec {
        name: name.into(),
        a: a.into(),
        b: b.into(),
        capacity_bps: CAPACITY,
        delay,
    }
}

fn edges(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(p, c)| (p.to_string(), c.to_string())).collect()
}

fn poisson(link: &str, rate_bps: u64) -> TrafficBinding {
    TrafficBinding {
        link: link.into(),
        kind: InterferenceKind::Poisson { mean_rate_bps: rate_bps },
    }
}

/// One source feeding two destinations through N1, which splits into the
/// links L1 (to N2, D1) and L2 (to N3, D2). Experiment 1 loads L1 with a
/// constant 90 Mbps, experiment 2 with 98 Mbps; in both, L2 alternates
/// between 90 and 95 Mbps every two seconds.
pub fn responsiveness(experiment: u8, kind: MechanismKind) -> Scenario {
    assert!(experiment == 1 || experiment == 2, "experiment 1 or 2");
    let inter = SimTime::from_millis(5);
    let l1_load = if experiment == 1 { 90 * MBPS } else { 98 * MBPS };
    let mut sc = Scenario {
        sim: SimParams {
            duration: SimTime::from_secs(12),
            ..SimParams::default()
        },
        nodes: vec![
            node("V", NodeRole::Source),
            node("N1", NodeRole::Intermediate),
            node("N2", NodeRole::Intermediate),
            node("N3", NodeRole::Intermediate),
            node("D1", NodeRole::Destination),
            node("D2", NodeRole::Destination),
        ],
        links: vec![
            link("VN1", "V", "N1", EDGE_DELAY),
            link("L1", "N1", "N2", inter),
            link("L2", "N1", "N3", inter),
            link("N2D1", "N2", "D1", EDGE_DELAY),
            link("N3D2", "N3", "D2", EDGE_DELAY),
        ],
        connections: vec![ConnectionSpec {
            name: "c1".into(),
            source: "V".into(),
            edges: edges(&[("V", "N1"), ("N1", "N2"), ("N2", "D1"), ("N1", "N3"), ("N3", "D2")]),
        }],
        traffic: vec![
            TrafficBinding {
                link: "L1".into(),
                kind: InterferenceKind::Constant { rate_bps: l1_load },
            },
            TrafficBinding {
                link: "L2".into(),
                kind: InterferenceKind::SquareWave {
                    low_bps: 90 * MBPS,
                    high_bps: 95 * MBPS,
                    half_period: SimTime::from_secs(2),
                },
            },
        ],
        ..Scenario::default()
    };
    sc.mechanism.kind = kind;
    sc.mechanism.layers = 2;
    sc
}

/// Binary multicast tree V, N1..N7, D1..D8. Inter-node links carry 90 Mbps
/// of Poisson load; the destination links carry 90, 91, .. 97 Mbps.
pub fn scalability(kind: MechanismKind, layers: usize, inter_node_delay: SimTime) -> Scenario {
    let mut nodes = vec![node("V", NodeRole::Source)];
    nodes.extend((1..=7).map(|i| node(&format!("N{i}"), NodeRole::Intermediate)));
    nodes.extend((1..=8).map(|i| node(&format!("D{i}"), NodeRole::Destination)));
    let mut links = vec![link("VN1", "V", "N1", EDGE_DELAY)];
    let mut traffic = Vec::new();
    let mut tree = vec![("V".to_string(), "N1".to_string())];
    for parent in 1..=3 {
        for child in [2 * parent, 2 * parent + 1] {
            let (p, c) = (format!("N{parent}"), format!("N{child}"));
            let name = format!("{p}{c}");
            links.push(link(&name, &p, &c, inter_node_delay));
            traffic.push(poisson(&name, 90 * MBPS));
            tree.push((p, c));
        }
    }
    for d in 1..=8u64 {
        let (p, c) = (format!("N{}", 4 + (d - 1) / 2), format!("D{d}"));
        let name = format!("{p}{c}");
        links.push(link(&name, &p, &c, EDGE_DELAY));
        traffic.push(poisson(&name, (89 + d) * MBPS));
        tree.push((p, c));
    }
    let mut sc = Scenario {
        nodes,
        links,
        connections: vec![ConnectionSpec {
            name: "c1".into(),
            source: "V".into(),
            edges: tree,
        }],
        traffic,
        ..Scenario::default()
    };
    sc.mechanism.kind = kind;
    sc.mechanism.layers = layers;
    sc
}

/// Parking lot: V1 joins at N1, V2 at N2, V3 at N3, all heading for D.
/// L1 (N1-N2), L2 (N2-N3) and L3 (N3-D) each carry 90 Mbps of Poisson
/// load; L3 is the shared bottleneck.
pub fn fairness(kind: MechanismKind, inter_node_delay: SimTime) -> Scenario {
    let conn = |i: usize, path: &[&str]| ConnectionSpec {
        name: format!("c{i}"),
        source: format!("V{i}"),
        edges: path
            .windows(2)
            .map(|w| (w[0].to_string(), w[1].to_string()))
            .collect(),
    };
    let mut sc = Scenario {
        sim: SimParams {
            bottleneck: Some("L3".into()),
            ..SimParams::default()
        },
        nodes: vec![
            node("V1", NodeRole::Source),
            node("V2", NodeRole::Source),
            node("V3", NodeRole::Source),
            node("N1", NodeRole::Intermediate),
            node("N2", NodeRole::Intermediate),
            node("N3", NodeRole::Intermediate),
            node("D", NodeRole::Destination),
        ],
        links: vec![
            link("V1N1", "V1", "N1", EDGE_DELAY),
            link("V2N2", "V2", "N2", EDGE_DELAY),
            link("V3N3", "V3", "N3", EDGE_DELAY),
            link("L1", "N1", "N2", inter_node_delay),
            link("L2", "N2", "N3", inter_node_delay),
            link("L3", "N3", "D", EDGE_DELAY),
        ],
        connections: vec![
            conn(1, &["V1", "N1", "N2", "N3", "D"]),
            conn(2, &["V2", "N2", "N3", "D"]),
            conn(3, &["V3", "N3", "D"]),
        ],
        traffic: vec![poisson("L1", 90 * MBPS), poisson("L2", 90 * MBPS), poisson("L3", 90 * MBPS)],
        ..Scenario::default()
    };
    sc.mechanism.kind = kind;
    sc
}
