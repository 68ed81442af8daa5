//! Scenario runner behind the `layercast` binary: single runs, the
//! scalability sweeps and the fairness table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::engine::SimTime;
use crate::metrics::{
    fmt_bps, fmt_f, fmt_secs, mean, FairnessReport, Table, DESTINATIONS_SCHEMA, FAIRNESS_SCHEMA,
    GOODPUT_DELAY_SCHEMA, GOODPUT_L_SCHEMA, LAYERS_SCHEMA,
};
use crate::network::{simulate, RunResult};
use crate::scenario::{fairness, parse_scenario, responsiveness, scalability, Builtin, MechanismKind, Scenario, ScenarioError};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LAYERCAST_OUT";

pub const SWEEP_LAYERS: std::ops::RangeInclusive<usize> = 2..=8;
/// Inter-node delay used by the layer-count sweep.
pub const SWEEP_L_DELAY: SimTime = SimTime::from_micros(50);
pub const SWEEP_DELAY_LAYERS: usize = 4;
pub const SWEEP_DELAYS_US: [u64; 4] = [5, 50, 500, 5000];

#[derive(Clone, Debug, PartialEq)]
pub enum ScenarioSource {
    File(PathBuf),
    Builtin(Builtin),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MechanismChoice {
    Rate,
    Credit,
    Both,
}

impl MechanismChoice {
    pub fn kinds(self) -> Vec<MechanismKind> {
        match self {
            MechanismChoice::Rate => vec![MechanismKind::Rate],
            MechanismChoice::Credit => vec![MechanismKind::Credit],
            MechanismChoice::Both => vec![MechanismKind::Rate, MechanismKind::Credit],
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub source: ScenarioSource,
    /// `None` keeps the scenario's own mechanism (files) or runs both
    /// (built-ins).
    pub mechanism: Option<MechanismChoice>,
    pub seed: Option<u64>,
    pub duration: Option<SimTime>,
    pub out_dir: PathBuf,
    /// `section.key=value` assignments applied after the other settings.
    pub overrides: Vec<String>,
    pub quiet: bool,
    /// Seeds per fairness point.
    pub replicas: u32,
}

impl RunConfig {
    pub fn new(source: ScenarioSource, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            source,
            mechanism: None,
            seed: None,
            duration: None,
            out_dir: out_dir.into(),
            overrides: Vec::new(),
            quiet: false,
            replicas: 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(#[from] ScenarioError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invariant violation in {run}: {detail}")]
    Violation { run: String, detail: String },
    #[error("cannot write {path}: {msg}")]
    Output { path: String, msg: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InvalidScenario(_) | CliError::InvalidConfig(_) => 2,
            CliError::Violation { .. } => 3,
            CliError::Output { .. } => 1,
        }
    }
}

/// Files written and the human-readable summary of a run.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, CliError> {
    if cfg.duration == Some(SimTime::ZERO) {
        return Err(CliError::InvalidConfig("duration must be positive".into()));
    }
    if cfg.replicas == 0 {
        return Err(CliError::InvalidConfig("replicas must be at least 1".into()));
    }
    let out = match &cfg.source {
        ScenarioSource::Builtin(Builtin::Scalability) => run_scalability(cfg)?,
        ScenarioSource::Builtin(Builtin::Fairness) => run_fairness(cfg)?,
        ScenarioSource::Builtin(b @ (Builtin::Responsiveness1 | Builtin::Responsiveness2)) => {
            let exp = if *b == Builtin::Responsiveness1 { 1 } else { 2 };
            let kinds = cfg.mechanism.unwrap_or(MechanismChoice::Both).kinds();
            let scenarios = kinds
                .iter()
                .map(|&k| configure(responsiveness(exp, k), cfg, None))
                .collect::<Result<Vec<_>, _>>()?;
            run_singles(cfg, scenarios)?
        }
        ScenarioSource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
                path: path.display().to_string(),
                msg: e.to_string(),
            })?;
            let base = parse_scenario(&text)?;
            let kinds = match cfg.mechanism {
                Some(m) => m.kinds(),
                None => vec![base.mechanism.kind],
            };
            let scenarios = kinds
                .iter()
                .map(|&k| {
                    let mut sc = base.clone();
                    sc.mechanism.kind = k;
                    configure(sc, cfg, None)
                })
                .collect::<Result<Vec<_>, _>>()?;
            run_singles(cfg, scenarios)?
        }
    };
    Ok(out)
}

/// Applies seed, duration and overrides to a scenario. `seed` overrides
/// the configured seed (used for replicas).
fn configure(mut sc: Scenario, cfg: &RunConfig, seed: Option<u64>) -> Result<Scenario, CliError> {
    if let Some(s) = seed.or(cfg.seed) {
        sc.sim.seed = s;
    }
    if let Some(d) = cfg.duration {
        sc.sim.duration = d;
        if sc.sim.warmup >= d {
            sc.sim.warmup = SimTime::ZERO;
        }
    }
    for o in &cfg.overrides {
        sc.apply_override(o)?;
    }
    sc.validate()?;
    Ok(sc)
}

fn check(label: &str, r: &RunResult) -> Result<(), CliError> {
    match r.violations.first() {
        None => Ok(()),
        Some(v) => Err(CliError::Violation {
            run: label.to_string(),
            detail: format!("{v} ({} violations, {} events)", r.violations.len(), r.stats.events),
        }),
    }
}

fn write(table: &Table, path: PathBuf, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::Output {
        path: path.display().to_string(),
        msg: e.to_string(),
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(fail)?;
    }
    table.write_to(&path).map_err(fail)?;
    files.push(path);
    Ok(())
}

pub fn layers_table(r: &RunResult) -> Table {
    let mut t = Table::new(LAYERS_SCHEMA, &["t_seconds", "layer_index", "cumulative_rate_bps", "connection"]);
    for ch in &r.layer_trace {
        for (i, rate) in ch.cumulative.iter().enumerate() {
            t.push(vec![
                fmt_secs(ch.t),
                (i + 1).to_string(),
                fmt_bps(*rate),
                r.connections[ch.conn].clone(),
            ]);
        }
    }
    t
}

pub fn destinations_table(r: &RunResult) -> Table {
    let mut t = Table::new(
        DESTINATIONS_SCHEMA,
        &["destination", "connection", "mean_goodput_bps", "mean_available_bps", "goodput_ratio"],
    );
    for d in &r.goodput.destinations {
        t.push(vec![
            d.destination.clone(),
            d.connection.clone(),
            fmt_bps(d.mean_goodput_bps),
            fmt_bps(d.mean_available_bps),
            d.ratio.map_or_else(|| "nan".to_string(), fmt_f),
        ]);
    }
    t
}

fn run_singles(cfg: &RunConfig, scenarios: Vec<Scenario>) -> Result<Outcome, CliError> {
    let results: Vec<RunResult> = scenarios.par_iter().map(simulate).collect();
    let mut out = Outcome::default();
    for r in &results {
        let kind = r.kind.keyword();
        check(kind, r)?;
        let dir = cfg.out_dir.join(kind);
        write(&layers_table(r), dir.join("layers.csv"), &mut out.files)?;
        write(&destinations_table(r), dir.join("destinations.csv"), &mut out.files)?;
        let final_layers = r
            .layer_trace
            .last()
            .map(|c| c.cumulative.iter().map(|x| format!("{:.3}", x / 1e6)).collect::<Vec<_>>().join(", "))
            .unwrap_or_default();
        let _ = write!(
            out.summary,
            "{kind}: {} events, {} video packets delivered, {} discarded",
            r.stats.events,
            r.stats.video_delivered,
            r.stats.video_drops + r.stats.source_drops
        );
        if let Some(g) = r.goodput.mean_ratio() {
            let _ = write!(out.summary, ", mean goodput ratio {g:.3}");
        }
        if let Some(rates) = &r.bottleneck_rates {
            let f = FairnessReport::from_rates(rates.clone());
            let _ = write!(out.summary, ", bottleneck sigma {:.5} Mbps", f.sigma_mbps);
        }
        let _ = writeln!(out.summary, ", final layers [{final_layers}] Mbps");
    }
    Ok(out)
}

/// One point of a sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub kind: MechanismKind,
    pub layers: usize,
    pub delay: SimTime,
    pub seed: u64,
}

/// Runs sweep points in parallel, preserving input order.
pub fn run_points(
    points: &[SweepPoint],
    cfg: &RunConfig,
    build: impl Fn(&SweepPoint) -> Scenario + Sync,
) -> Result<Vec<RunResult>, CliError> {
    let scenarios = points
        .iter()
        .map(|p| configure(build(p), cfg, Some(p.seed)))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<RunResult> = scenarios.par_iter().map(simulate).collect();
    for (p, r) in points.iter().zip(&results) {
        check(&format!("{} L={} delay={}", p.kind.keyword(), p.layers, p.delay), r)?;
    }
    Ok(results)
}

fn run_scalability(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let kinds = cfg.mechanism.unwrap_or(MechanismChoice::Both).kinds();
    let seed = cfg.seed.unwrap_or(1);
    let mut by_l = Vec::new();
    let mut by_delay = Vec::new();
    for &kind in &kinds {
        for layers in SWEEP_LAYERS {
            by_l.push(SweepPoint { kind, layers, delay: SWEEP_L_DELAY, seed });
        }
        for us in SWEEP_DELAYS_US {
            let delay = SimTime::from_micros(us);
            by_delay.push(SweepPoint { kind, layers: SWEEP_DELAY_LAYERS, delay, seed });
        }
    }
    let build = |p: &SweepPoint| scalability(p.kind, p.layers, p.delay);
    let l_results = run_points(&by_l, cfg, build)?;
    let d_results = run_points(&by_delay, cfg, build)?;

    let mut out = Outcome::default();
    let ratio = |r: &RunResult| r.goodput.mean_ratio().unwrap_or(f64::NAN);
    let mut t = Table::new(GOODPUT_L_SCHEMA, &["mechanism", "layers", "seed", "mean_goodput_ratio"]);
    for (p, r) in by_l.iter().zip(&l_results) {
        t.push(vec![p.kind.keyword().into(), p.layers.to_string(), p.seed.to_string(), fmt_f(ratio(r))]);
        let _ = writeln!(out.summary, "{} L={} goodput ratio {:.3}", p.kind.keyword(), p.layers, ratio(r));
    }
    write(&t, cfg.out_dir.join("goodput_vs_L.csv"), &mut out.files)?;
    let mut t = Table::new(GOODPUT_DELAY_SCHEMA, &["mechanism", "delay_seconds", "seed", "mean_goodput_ratio"]);
    for (p, r) in by_delay.iter().zip(&d_results) {
        t.push(vec![p.kind.keyword().into(), fmt_secs(p.delay), p.seed.to_string(), fmt_f(ratio(r))]);
        let _ = writeln!(out.summary, "{} delay={} goodput ratio {:.3}", p.kind.keyword(), p.delay, ratio(r));
    }
    write(&t, cfg.out_dir.join("goodput_vs_delay.csv"), &mut out.files)?;
    Ok(out)
}

/// Per-source bottleneck rates averaged over replicas, in bits/s.
#[derive(Clone, Debug, PartialEq)]
pub struct FairnessRow {
    pub kind: MechanismKind,
    pub delay: SimTime,
    pub report: FairnessReport,
}

pub fn fairness_rows(cfg: &RunConfig) -> Result<Vec<FairnessRow>, CliError> {
    let kinds = cfg.mechanism.unwrap_or(MechanismChoice::Both).kinds();
    let seed = cfg.seed.unwrap_or(1);
    let mut points = Vec::new();
    for &kind in &kinds {
        for us in SWEEP_DELAYS_US {
            for k in 0..cfg.replicas as u64 {
                let delay = SimTime::from_micros(us);
                points.push(SweepPoint { kind, layers: 0, delay, seed: seed + k });
            }
        }
    }
    let results = run_points(&points, cfg, |p| fairness(p.kind, p.delay))?;
    let per = cfg.replicas as usize;
    let rows = points
        .chunks(per)
        .zip(results.chunks(per))
        .map(|(ps, rs)| {
            let sources = rs[0].connections.len();
            let rates: Vec<f64> = (0..sources)
                .map(|i| {
                    let xs: Vec<f64> = rs
                        .iter()
                        .map(|r| r.bottleneck_rates.as_ref().map_or(0.0, |b| b[i]))
                        .collect();
                    mean(&xs).unwrap_or(0.0)
                })
                .collect();
            FairnessRow {
                kind: ps[0].kind,
                delay: ps[0].delay,
                report: FairnessReport::from_rates(rates),
            }
        })
        .collect();
    Ok(rows)
}

fn run_fairness(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let rows = fairness_rows(cfg)?;
    let mut out = Outcome::default();
    let mut t = Table::new(
        FAIRNESS_SCHEMA,
        &["mechanism", "delay_seconds", "v1_mbps", "v2_mbps", "v3_mbps", "sigma_mbps"],
    );
    for row in &rows {
        let mut cells = vec![row.kind.keyword().to_string(), fmt_secs(row.delay)];
        cells.extend(row.report.rates_bps.iter().take(3).map(|r| format!("{:.5}", r / 1e6)));
        cells.resize(5, String::new());
        cells.push(format!("{:.5}", row.report.sigma_mbps));
        t.push(cells);
        let _ = writeln!(
            out.summary,
            "{} delay={} rates [{}] Mbps sigma {:.5}",
            row.kind.keyword(),
            row.delay,
            row.report.rates_bps.iter().map(|r| format!("{:.3}", r / 1e6)).collect::<Vec<_>>().join(", "),
            row.report.sigma_mbps
        );
    }
    write(&t, cfg.out_dir.join("fairness.csv"), &mut out.files)?;
    Ok(out)
}

/// Default output directory: `$LAYERCAST_OUT` or `./layercast-out`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new("layercast-out").to_path_buf())
}
