//! Line-oriented scenario text format.
//!
//! ```text
//! # comment
//! [sim]
//! duration = 12s
//! [nodes]
//! V = source
//! [links]
//! L1 = N1 N2 100Mbps 5ms
//! [connection]
//! name = c1
//! source = V
//! edges = V-N1 N1-N2 N2-D1
//! [traffic]
//! L1 = square 90Mbps 95Mbps 2s
//! [mechanism]
//! kind = credit
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{
    ConnectionSpec, LinkSpec, MechanismKind, NodeRole, NodeSpec, Scenario, ScenarioError, TrafficBinding,
};
use crate::engine::SimTime;
use crate::traffic::InterferenceKind;

/// Parses a decimal literal scaled by `scale`, requiring an integral result.
fn scaled_decimal(num: &str, scale: u64) -> Option<u64> {
    let (int, frac) = match num.split_once('.') {
        Some((i, f)) => (i, f),
        None => (num, ""),
    };
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    let digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || !digits(frac) || frac.len() > 18 {
        return None;
    }
    let int_v: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let mut v = int_v.checked_mul(scale)?;
    if !frac.is_empty() {
        let denom = 10u128.pow(frac.len() as u32);
        let f: u128 = frac.parse::<u128>().ok()? * scale as u128;
        if !f.is_multiple_of(denom) {
            return None;
        }
        v = v.checked_add(u64::try_from(f / denom).ok()?)?;
    }
    Some(v)
}

fn split_unit<'a>(s: &'a str, units: &[(&str, u64)]) -> Option<(&'a str, u64)> {
    // longest unit first so "ms" is not read as "s"
    let mut sorted: Vec<&(&str, u64)> = units.iter().collect();
    sorted.sort_by_key(|(u, _)| std::cmp::Reverse(u.len()));
    sorted
        .into_iter()
        .find_map(|&(u, m)| s.strip_suffix(u).map(|n| (n.trim_end(), m)))
}

const TIME_UNITS: [(&str, u64); 4] = [("ns", 1), ("us", 1_000), ("ms", 1_000_000), ("s", 1_000_000_000)];
const RATE_UNITS: [(&str, u64); 4] = [
    ("bps", 1),
    ("kbps", 1_000),
    ("Mbps", 1_000_000),
    ("Gbps", 1_000_000_000),
];

/// `5us`, `2.5s`, `0s`.
pub fn parse_time(s: &str) -> Result<SimTime, String> {
    let (num, scale) = split_unit(s.trim(), &TIME_UNITS).ok_or_else(|| format!("expected a duration with unit ns/us/ms/s, got {s:?}"))?;
    scaled_decimal(num, scale)
        .map(SimTime)
        .ok_or_else(|| format!("invalid duration {s:?}"))
}

/// `100Mbps`, `1.5Mbps`, `424bps`.
pub fn parse_rate(s: &str) -> Result<u64, String> {
    let (num, scale) = split_unit(s.trim(), &RATE_UNITS)
        .ok_or_else(|| format!("expected a rate with unit bps/kbps/Mbps/Gbps, got {s:?}"))?;
    scaled_decimal(num, scale).ok_or_else(|| format!("invalid rate {s:?}"))
}

pub fn format_rate(bps: u64) -> String {
    for (u, m) in RATE_UNITS.iter().rev() {
        if bps != 0 && bps.is_multiple_of(*m) {
            return format!("{}{u}", bps / m);
        }
    }
    format!("{bps}bps")
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("invalid {what} {s:?}"))
}

fn parse_f64(s: &str, what: &str) -> Result<f64, String> {
    let v: f64 = parse_num(s, what)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("invalid {what} {s:?}"))
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("expected true or false, got {other:?}")),
    }
}

fn check_ident(s: &str) -> Result<&str, String> {
    if !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
        Ok(s)
    } else {
        Err(format!("invalid identifier {s:?}"))
    }
}

fn parse_traffic(s: &str) -> Result<Option<InterferenceKind>, String> {
    let toks: Vec<&str> = s.split_whitespace().collect();
    match toks.as_slice() {
        ["none"] => Ok(None),
        ["constant", r] => Ok(Some(InterferenceKind::Constant { rate_bps: parse_rate(r)? })),
        ["poisson", r] => Ok(Some(InterferenceKind::Poisson {
            mean_rate_bps: parse_rate(r)?,
        })),
        ["square", lo, hi, half] => {
            let half_period = parse_time(half)?;
            if half_period == SimTime::ZERO {
                return Err("square-wave half period must be positive".into());
            }
            Ok(Some(InterferenceKind::SquareWave {
                low_bps: parse_rate(lo)?,
                high_bps: parse_rate(hi)?,
                half_period,
            }))
        }
        _ => Err(format!(
            "expected `constant RATE`, `square LOW HIGH HALF_PERIOD`, `poisson RATE` or `none`, got {s:?}"
        )),
    }
}

fn format_traffic(k: &InterferenceKind) -> String {
    match k {
        InterferenceKind::Constant { rate_bps } => format!("constant {}", format_rate(*rate_bps)),
        InterferenceKind::Poisson { mean_rate_bps } => format!("poisson {}", format_rate(*mean_rate_bps)),
        InterferenceKind::SquareWave {
            low_bps,
            high_bps,
            half_period,
        } => format!(
            "square {} {} {half_period}",
            format_rate(*low_bps),
            format_rate(*high_bps)
        ),
    }
}

fn apply_sim(sc: &mut Scenario, key: &str, v: &str) -> Result<(), String> {
    let s = &mut sc.sim;
    match key {
        "duration" => s.duration = parse_time(v)?,
        "seed" => s.seed = parse_num(v, "seed")?,
        "warmup" => s.warmup = parse_time(v)?,
        "bottleneck" => {
            s.bottleneck = match v.trim() {
                "none" => None,
                name => Some(check_ident(name)?.to_string()),
            }
        }
        _ => return Err(format!("unknown key sim.{key}")),
    }
    Ok(())
}

fn apply_mechanism(sc: &mut Scenario, key: &str, v: &str) -> Result<(), String> {
    let m = &mut sc.mechanism;
    match key {
        "kind" => {
            m.kind = match v.trim() {
                "rate" => MechanismKind::Rate,
                "credit" => MechanismKind::Credit,
                other => return Err(format!("mechanism kind must be rate or credit, got {other:?}")),
            }
        }
        "layers" => m.layers = parse_num(v, "layer count")?,
        "initial_rate" => m.initial_rate_bps = parse_rate(v)?,
        "reception_interval" => m.reception_interval = parse_time(v)?,
        "partial_threshold" => m.partial_threshold = parse_f64(v, "threshold")?,
        "rate.fwd_spacing" => m.rate.fwd_spacing = parse_num(v, "spacing")?,
        "rate.target_utilization" => m.rate.target_utilization = parse_f64(v, "utilization")?,
        "rate.erica_interval" => m.rate.erica_interval = parse_time(v)?,
        "rate.merge_timeout" => m.rate.merge_timeout = parse_time(v)?,
        "rate.merge_tolerance" => m.rate.merge_tolerance_bps = parse_rate(v)?,
        "rate.node_buffer" => m.rate.node_buffer = parse_num(v, "buffer size")?,
        "rate.peak_rate" => m.rate.peak_rate_bps = parse_rate(v)?,
        "rate.min_rate" => m.rate.min_rate_bps = parse_rate(v)?,
        "credit.batch" => m.credit.batch = parse_num(v, "batch")?,
        "credit.gap" => m.credit.gap = parse_num(v, "gap")?,
        "credit.rate_step" => m.credit.rate_step_pps = parse_num(v, "rate step")?,
        "credit.accumulation_interval" => m.credit.accumulation_interval = parse_time(v)?,
        "credit.source_buffer" => m.credit.source_buffer.size = parse_num(v, "buffer size")?,
        "credit.lower" => m.credit.source_buffer.lower = parse_num(v, "threshold")?,
        "credit.middle" => m.credit.source_buffer.middle = parse_num(v, "threshold")?,
        "credit.upper" => m.credit.source_buffer.upper = parse_num(v, "threshold")?,
        "credit.node_buffer" => m.credit.node_buffer = parse_num(v, "buffer size")?,
        "credit.condition2" => m.credit.condition2 = parse_bool(v)?,
        "credit.drain_window" => m.credit.drain_window = parse_num(v, "drain window")?,
        _ => return Err(format!("unknown key mechanism.{key}")),
    }
    Ok(())
}

fn apply_node(sc: &mut Scenario, key: &str, v: &str, replace: bool) -> Result<(), String> {
    let id = check_ident(key)?.to_string();
    let role = match v.trim() {
        "source" => NodeRole::Source,
        "dest" => NodeRole::Destination,
        "node" => NodeRole::Intermediate,
        other => return Err(format!("node role must be source, dest or node, got {other:?}")),
    };
    match sc.nodes.iter_mut().find(|n| n.id == id) {
        Some(n) if replace => n.role = role,
        Some(_) => return Err(format!("duplicate node {id}")),
        None => sc.nodes.push(NodeSpec { id, role }),
    }
    Ok(())
}

fn apply_link(sc: &mut Scenario, key: &str, v: &str, replace: bool) -> Result<(), String> {
    let name = check_ident(key)?.to_string();
    let toks: Vec<&str> = v.split_whitespace().collect();
    let [a, b, cap, delay] = toks.as_slice() else {
        return Err(format!("expected `A B CAPACITY DELAY`, got {v:?}"));
    };
    let spec = LinkSpec {
        name: name.clone(),
        a: check_ident(a)?.to_string(),
        b: check_ident(b)?.to_string(),
        capacity_bps: parse_rate(cap)?,
        delay: parse_time(delay)?,
    };
    match sc.links.iter_mut().find(|l| l.name == name) {
        Some(l) if replace => *l = spec,
        Some(_) => return Err(format!("duplicate link {name}")),
        None => sc.links.push(spec),
    }
    Ok(())
}

fn apply_traffic(sc: &mut Scenario, key: &str, v: &str, replace: bool) -> Result<(), String> {
    let link = check_ident(key)?.to_string();
    let kind = parse_traffic(v)?;
    let pos = sc.traffic.iter().position(|t| t.link == link);
    match (pos, kind) {
        (Some(_), _) if !replace => return Err(format!("duplicate traffic binding for {link}")),
        (Some(i), None) => {
            sc.traffic.remove(i);
        }
        (Some(i), Some(kind)) => sc.traffic[i].kind = kind,
        (None, Some(kind)) => sc.traffic.push(TrafficBinding { link, kind }),
        (None, None) => {}
    }
    Ok(())
}

#[derive(Default)]
struct ConnDraft {
    name: Option<String>,
    source: Option<String>,
    edges: Option<Vec<(String, String)>>,
    line: usize,
}

impl ConnDraft {
    fn apply(&mut self, key: &str, v: &str) -> Result<(), String> {
        let slot_taken = |set: bool| {
            if set {
                Err(format!("duplicate key connection.{key}"))
            } else {
                Ok(())
            }
        };
        match key {
            "name" => {
                slot_taken(self.name.is_some())?;
                self.name = Some(check_ident(v.trim())?.to_string());
            }
            "source" => {
                slot_taken(self.source.is_some())?;
                self.source = Some(check_ident(v.trim())?.to_string());
            }
            "edges" => {
                slot_taken(self.edges.is_some())?;
                let edges = v
                    .split_whitespace()
                    .map(|e| {
                        let (p, c) = e
                            .split_once('-')
                            .ok_or_else(|| format!("edge must be PARENT-CHILD, got {e:?}"))?;
                        Ok((check_ident(p)?.to_string(), check_ident(c)?.to_string()))
                    })
                    .collect::<Result<Vec<_>, String>>()?;
                self.edges = Some(edges);
            }
            _ => return Err(format!("unknown key connection.{key}")),
        }
        Ok(())
    }

    fn finish(self) -> Result<ConnectionSpec, ScenarioError> {
        let missing = |k: &str| ScenarioError::Syntax {
            line: self.line,
            msg: format!("connection is missing `{k}`"),
        };
        Ok(ConnectionSpec {
            name: self.name.clone().ok_or_else(|| missing("name"))?,
            source: self.source.clone().ok_or_else(|| missing("source"))?,
            edges: self.edges.clone().ok_or_else(|| missing("edges"))?,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Sim,
    Nodes,
    Links,
    Connection,
    Traffic,
    Mechanism,
}

/// Parses, defaults and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let sc = parse_unvalidated(text)?;
    sc.validate()?;
    Ok(sc)
}

fn parse_unvalidated(text: &str) -> Result<Scenario, ScenarioError> {
    let mut sc = Scenario::default();
    let mut section: Option<Section> = None;
    let mut draft: Option<ConnDraft> = None;
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |msg: String| ScenarioError::Syntax { line, msg };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            if let Some(d) = draft.take() {
                sc.connections.push(d.finish()?);
            }
            section = Some(match name.trim() {
                "sim" => Section::Sim,
                "nodes" => Section::Nodes,
                "links" => Section::Links,
                "connection" => {
                    draft = Some(ConnDraft {
                        line,
                        ..ConnDraft::default()
                    });
                    Section::Connection
                }
                "traffic" => Section::Traffic,
                "mechanism" => Section::Mechanism,
                other => return Err(err(format!("unknown section [{other}]"))),
            });
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(err(format!("expected `key = value`, got {content:?}")));
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(sec) = section else {
            return Err(err("key outside of any section".into()));
        };
        let once = |seen: &mut BTreeSet<String>, prefix: &str| {
            if seen.insert(format!("{prefix}.{key}")) {
                Ok(())
            } else {
                Err(format!("duplicate key {prefix}.{key}"))
            }
        };
        let r = match sec {
            Section::Sim => once(&mut seen, "sim").and_then(|_| apply_sim(&mut sc, key, value)),
            Section::Mechanism => once(&mut seen, "mechanism").and_then(|_| apply_mechanism(&mut sc, key, value)),
            Section::Nodes => apply_node(&mut sc, key, value, false),
            Section::Links => apply_link(&mut sc, key, value, false),
            Section::Traffic => apply_traffic(&mut sc, key, value, false),
            Section::Connection => draft.as_mut().expect("open connection").apply(key, value),
        };
        r.map_err(err)?;
    }
    if let Some(d) = draft.take() {
        sc.connections.push(d.finish()?);
    }
    Ok(sc)
}

impl Scenario {
    /// Applies a `section.key=value` override, e.g. `mechanism.layers=6`,
    /// `traffic.L2=constant 50Mbps` or `sim.seed=3`, then revalidates.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ScenarioError> {
        let bad = |msg: String| ScenarioError::Semantic(format!("override {assignment:?}: {msg}"));
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| bad("expected section.key=value".into()))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| bad("expected section.key=value".into()))?;
        let mut next = self.clone();
        let r = match section {
            "sim" => apply_sim(&mut next, key, value),
            "mechanism" => apply_mechanism(&mut next, key, value),
            "nodes" => apply_node(&mut next, key, value, true),
            "links" => apply_link(&mut next, key, value, true),
            "traffic" => apply_traffic(&mut next, key, value, true),
            other => Err(format!("section {other} cannot be overridden")),
        };
        r.map_err(bad)?;
        next.validate()?;
        *self = next;
        Ok(())
    }
}

/// Canonical text form: every section and every key, in a fixed order.
pub fn serialize_scenario(sc: &Scenario) -> String {
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "[sim]");
    let _ = writeln!(w, "duration = {}", sc.sim.duration);
    let _ = writeln!(w, "seed = {}", sc.sim.seed);
    let _ = writeln!(w, "warmup = {}", sc.sim.warmup);
    let _ = writeln!(w, "bottleneck = {}", sc.sim.bottleneck.as_deref().unwrap_or("none"));
    let _ = writeln!(w, "\n[nodes]");
    for n in &sc.nodes {
        let _ = writeln!(w, "{} = {}", n.id, n.role.keyword());
    }
    let _ = writeln!(w, "\n[links]");
    for l in &sc.links {
        let _ = writeln!(w, "{} = {} {} {} {}", l.name, l.a, l.b, format_rate(l.capacity_bps), l.delay);
    }
    for c in &sc.connections {
        let edges: Vec<String> = c.edges.iter().map(|(p, ch)| format!("{p}-{ch}")).collect();
        let _ = writeln!(w, "\n[connection]");
        let _ = writeln!(w, "name = {}", c.name);
        let _ = writeln!(w, "source = {}", c.source);
        let _ = writeln!(w, "edges = {}", edges.join(" "));
    }
    let _ = writeln!(w, "\n[traffic]");
    for t in &sc.traffic {
        let _ = writeln!(w, "{} = {}", t.link, format_traffic(&t.kind));
    }
    let m = &sc.mechanism;
    let sb = &m.credit.source_buffer;
    let _ = writeln!(w, "\n[mechanism]");
    let _ = writeln!(w, "kind = {}", m.kind.keyword());
    let _ = writeln!(w, "layers = {}", m.layers);
    let _ = writeln!(w, "initial_rate = {}", format_rate(m.initial_rate_bps));
    let _ = writeln!(w, "reception_interval = {}", m.reception_interval);
    let _ = writeln!(w, "partial_threshold = {}", m.partial_threshold);
    let _ = writeln!(w, "rate.fwd_spacing = {}", m.rate.fwd_spacing);
    let _ = writeln!(w, "rate.target_utilization = {}", m.rate.target_utilization);
    let _ = writeln!(w, "rate.erica_interval = {}", m.rate.erica_interval);
    let _ = writeln!(w, "rate.merge_timeout = {}", m.rate.merge_timeout);
    let _ = writeln!(w, "rate.merge_tolerance = {}", format_rate(m.rate.merge_tolerance_bps));
    let _ = writeln!(w, "rate.node_buffer = {}", m.rate.node_buffer);
    let _ = writeln!(w, "rate.peak_rate = {}", format_rate(m.rate.peak_rate_bps));
    let _ = writeln!(w, "rate.min_rate = {}", format_rate(m.rate.min_rate_bps));
    let _ = writeln!(w, "credit.batch = {}", m.credit.batch);
    let _ = writeln!(w, "credit.gap = {}", m.credit.gap);
    let _ = writeln!(w, "credit.rate_step = {}", m.credit.rate_step_pps);
    let _ = writeln!(w, "credit.accumulation_interval = {}", m.credit.accumulation_interval);
    let _ = writeln!(w, "credit.source_buffer = {}", sb.size);
    let _ = writeln!(w, "credit.lower = {}", sb.lower);
    let _ = writeln!(w, "credit.middle = {}", sb.middle);
    let _ = writeln!(w, "credit.upper = {}", sb.upper);
    let _ = writeln!(w, "credit.node_buffer = {}", m.credit.node_buffer);
    let _ = writeln!(w, "credit.condition2 = {}", m.credit.condition2);
    let _ = writeln!(w, "credit.drain_window = {}", m.credit.drain_window);
    s
}
