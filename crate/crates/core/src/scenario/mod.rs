//! Declarative scenario description, its text format, and the built-in
//! experiment topologies.

mod builders;
mod parse;

pub use builders::{fairness, responsiveness, scalability, Builtin};
pub use parse::{format_rate, parse_rate, parse_scenario, parse_time, serialize_scenario};

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::engine::SimTime;
use crate::traffic::InterferenceKind;
use crate::video::SourceBuffer;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeRole {
    Source,
    Destination,
    Intermediate,
}

impl NodeRole {
    pub fn keyword(self) -> &'static str {
        match self {
            NodeRole::Source => "source",
            NodeRole::Destination => "dest",
            NodeRole::Intermediate => "node",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub role: NodeRole,
}

/// A bidirectional link. Interference bound to it loads the `a -> b`
/// direction.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpec {
    pub name: String,
    pub a: String,
    pub b: String,
    pub capacity_bps: u64,
    pub delay: SimTime,
}

/// A multicast connection: its source and the tree edges (parent, child)
/// along which video flows. Feedback returns over the same edges.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectionSpec {
    pub name: String,
    pub source: String,
    pub edges: Vec<(String, String)>,
}

impl ConnectionSpec {
    pub fn children<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |(p, _)| p == node)
            .map(|(_, c)| c.as_str())
    }

    pub fn parent(&self, node: &str) -> Option<&str> {
        self.edges.iter().find(|(_, c)| c == node).map(|(p, _)| p.as_str())
    }

    /// Destinations (leaves) in edge order.
    pub fn destinations(&self) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|(_, c)| !self.edges.iter().any(|(p, _)| p == c))
            .map(|(_, c)| c.as_str())
            .collect()
    }

    /// Nodes from the source down to `dest`.
    pub fn path_to<'a>(&'a self, dest: &'a str) -> Vec<&'a str> {
        let mut path = vec![dest];
        let mut cur = dest;
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficBinding {
    pub link: String,
    pub kind: InterferenceKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MechanismKind {
    Rate,
    Credit,
}

impl MechanismKind {
    pub fn keyword(self) -> &'static str {
        match self {
            MechanismKind::Rate => "rate",
            MechanismKind::Credit => "credit",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateParams {
    /// Video packets per forward feedback packet.
    pub fwd_spacing: u32,
    pub target_utilization: f64,
    pub erica_interval: SimTime,
    pub merge_timeout: SimTime,
    /// Requested rates closer than this are treated as equal when merging.
    pub merge_tolerance_bps: u64,
    pub node_buffer: usize,
    pub peak_rate_bps: u64,
    pub min_rate_bps: u64,
}

impl Default for RateParams {
    fn default() -> Self {
        RateParams {
            fwd_spacing: 15,
            target_utilization: 0.99,
            erica_interval: SimTime::from_millis(10),
            merge_timeout: SimTime::from_millis(50),
            merge_tolerance_bps: 100_000,
            node_buffer: 200,
            peak_rate_bps: 100_000_000,
            min_rate_bps: 50_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CreditParams {
    /// Packets per credit batch (N_t).
    pub batch: u32,
    /// Occupancy difference enabling the second emission condition (D_t).
    pub gap: usize,
    /// Rate adjustment step, packets/s.
    pub rate_step_pps: u32,
    pub accumulation_interval: SimTime,
    pub source_buffer: SourceBuffer,
    pub node_buffer: usize,
    pub condition2: bool,
    /// Feedback packets spanned by the source's drain-rate estimate.
    pub drain_window: u32,
}

impl Default for CreditParams {
    fn default() -> Self {
        CreditParams {
            batch: 8,
            gap: 8,
            rate_step_pps: 16,
            accumulation_interval: SimTime::from_millis(40),
            source_buffer: SourceBuffer::default(),
            node_buffer: 300,
            condition2: true,
            drain_window: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MechanismParams {
    pub kind: MechanismKind,
    /// Maximum number of layers (L).
    pub layers: usize,
    pub initial_rate_bps: u64,
    pub reception_interval: SimTime,
    pub partial_threshold: f64,
    pub rate: RateParams,
    pub credit: CreditParams,
}

impl Default for MechanismParams {
    fn default() -> Self {
        MechanismParams {
            kind: MechanismKind::Rate,
            layers: 4,
            initial_rate_bps: 150_000,
            reception_interval: SimTime::from_millis(10),
            partial_threshold: 0.25,
            rate: RateParams::default(),
            credit: CreditParams::default(),
        }
    }
}

impl MechanismParams {
    pub fn node_buffer(&self) -> usize {
        match self.kind {
            MechanismKind::Rate => self.rate.node_buffer,
            MechanismKind::Credit => self.credit.node_buffer,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimParams {
    pub duration: SimTime,
    pub seed: u64,
    /// Start of the steady-state measurement window.
    pub warmup: SimTime,
    /// Link whose per-connection throughput is reported for fairness.
    pub bottleneck: Option<String>,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            duration: SimTime::from_secs(10),
            seed: 1,
            warmup: SimTime::from_secs(2),
            bottleneck: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scenario {
    pub sim: SimParams,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    pub connections: Vec<ConnectionSpec>,
    pub traffic: Vec<TrafficBinding>,
    pub mechanism: MechanismParams,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{0}")]
    Semantic(String),
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

fn sem(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Semantic(msg.into())
}

impl Scenario {
    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn link(&self, name: &str) -> Option<&LinkSpec> {
        self.links.iter().find(|l| l.name == name)
    }

    /// The link joining two nodes, in either direction.
    pub fn link_between(&self, x: &str, y: &str) -> Option<&LinkSpec> {
        self.links
            .iter()
            .find(|l| (l.a == x && l.b == y) || (l.a == y && l.b == x))
    }

    /// Checks every structural and parameter invariant.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let s = &self.sim;
        if s.duration == SimTime::ZERO {
            return Err(sem("sim.duration must be positive"));
        }
        if s.warmup >= s.duration {
            return Err(sem("sim.warmup must be shorter than sim.duration"));
        }
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(sem(format!("duplicate node {}", n.id)));
            }
        }
        let mut names = BTreeSet::new();
        for l in &self.links {
            if !names.insert(l.name.as_str()) {
                return Err(sem(format!("duplicate link {}", l.name)));
            }
            for end in [&l.a, &l.b] {
                if self.node(end).is_none() {
                    return Err(sem(format!("link {} references unknown node {end}", l.name)));
                }
            }
            if l.a == l.b {
                return Err(sem(format!("link {} is a self-loop", l.name)));
            }
            if l.capacity_bps == 0 {
                return Err(sem(format!("link {} has zero capacity", l.name)));
            }
        }
        if let Some(b) = &s.bottleneck {
            if self.link(b).is_none() {
                return Err(sem(format!("sim.bottleneck names unknown link {b}")));
            }
        }
        if self.connections.is_empty() {
            return Err(sem("no connection defined"));
        }
        let mut conn_names = BTreeSet::new();
        for c in &self.connections {
            if !conn_names.insert(c.name.as_str()) {
                return Err(sem(format!("duplicate connection {}", c.name)));
            }
            self.validate_tree(c)?;
        }
        let mut bound = BTreeSet::new();
        for t in &self.traffic {
            let Some(l) = self.link(&t.link) else {
                return Err(sem(format!("traffic bound to unknown link {}", t.link)));
            };
            if !bound.insert(t.link.as_str()) {
                return Err(sem(format!("link {} has two traffic bindings", t.link)));
            }
            if t.kind.peak_rate_bps() > l.capacity_bps {
                return Err(sem(format!("traffic on {} exceeds its capacity", t.link)));
            }
        }
        self.validate_mechanism()
    }

    fn validate_tree(&self, c: &ConnectionSpec) -> Result<(), ScenarioError> {
        let cname = &c.name;
        match self.node(&c.source) {
            Some(n) if n.role == NodeRole::Source => {}
            Some(_) => return Err(sem(format!("connection {cname}: {} is not a source", c.source))),
            None => return Err(sem(format!("connection {cname}: unknown source {}", c.source))),
        }
        if c.edges.is_empty() {
            return Err(sem(format!("connection {cname} has no edges")));
        }
        let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
        for (p, ch) in &c.edges {
            for end in [p, ch] {
                if self.node(end).is_none() {
                    return Err(sem(format!("connection {cname}: unknown node {end}")));
                }
            }
            if self.link_between(p, ch).is_none() {
                return Err(sem(format!("connection {cname}: no link between {p} and {ch}")));
            }
            if ch == &c.source {
                return Err(sem(format!("connection {cname}: edge into the source")));
            }
            if parent.insert(ch, p).is_some() {
                return Err(sem(format!("connection {cname}: {ch} has two parents")));
            }
        }
        // every node must reach the source by following parents
        for (p, ch) in &c.edges {
            let mut cur: &str = ch;
            let mut steps = 0;
            while cur != c.source {
                match parent.get(cur) {
                    Some(&up) => cur = up,
                    None => {
                        return Err(sem(format!(
                            "connection {cname}: {p} is not reachable from the source"
                        )))
                    }
                }
                steps += 1;
                if steps > c.edges.len() {
                    return Err(sem(format!("connection {cname}: cycle through {ch}")));
                }
            }
        }
        if c.children(&c.source).count() != 1 {
            return Err(sem(format!("connection {cname}: the source must have exactly one child")));
        }
        for (_, ch) in &c.edges {
            let leaf = c.children(ch).next().is_none();
            let role = self.node(ch).map(|n| n.role);
            match (leaf, role) {
                (true, Some(NodeRole::Destination)) | (false, Some(NodeRole::Intermediate)) => {}
                (true, _) => return Err(sem(format!("connection {cname}: leaf {ch} is not a destination"))),
                (false, _) => {
                    return Err(sem(format!("connection {cname}: {ch} forwards but is not an intermediate node")))
                }
            }
        }
        Ok(())
    }

    fn validate_mechanism(&self) -> Result<(), ScenarioError> {
        let m = &self.mechanism;
        if m.layers == 0 || m.layers > 16 {
            return Err(sem("mechanism.layers must be within 1..=16"));
        }
        if m.initial_rate_bps == 0 {
            return Err(sem("mechanism.initial_rate must be positive"));
        }
        if m.reception_interval == SimTime::ZERO {
            return Err(sem("mechanism.reception_interval must be positive"));
        }
        if !(m.partial_threshold > 0.0 && m.partial_threshold < 1.0) {
            return Err(sem("mechanism.partial_threshold must be within (0, 1)"));
        }
        let r = &m.rate;
        if !(r.target_utilization > 0.0 && r.target_utilization <= 1.0) {
            return Err(sem("rate.target_utilization must be within (0, 1]"));
        }
        if r.fwd_spacing == 0 {
            return Err(sem("rate.fwd_spacing must be positive"));
        }
        if r.erica_interval == SimTime::ZERO || r.merge_timeout == SimTime::ZERO {
            return Err(sem("rate intervals must be positive"));
        }
        if r.node_buffer == 0 {
            return Err(sem("rate.node_buffer must be positive"));
        }
        if r.peak_rate_bps == 0 || r.min_rate_bps > r.peak_rate_bps {
            return Err(sem("rate.min_rate must not exceed a positive rate.peak_rate"));
        }
        let c = &m.credit;
        if c.batch == 0 || c.rate_step_pps == 0 || c.drain_window == 0 {
            return Err(sem("credit.batch, credit.rate_step and credit.drain_window must be positive"));
        }
        if c.accumulation_interval == SimTime::ZERO {
            return Err(sem("credit.accumulation_interval must be positive"));
        }
        if !c.source_buffer.is_ordered() {
            return Err(sem("credit buffer thresholds must satisfy lower < middle < upper < source_buffer"));
        }
        if c.node_buffer == 0 {
            return Err(sem("credit.node_buffer must be positive"));
        }
        Ok(())
    }
}
