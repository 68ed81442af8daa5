use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use layercast::cli::{self, MechanismChoice, RunConfig, ScenarioSource, OUT_DIR_ENV};
use layercast::engine::SimTime;
use layercast::scenario::Builtin;

#[derive(Parser)]
#[command(name = "layercast", version, about = "Layered video multicast simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a built-in experiment and write CSV metrics.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mechanism {
    Rate,
    Credit,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum BuiltinArg {
    Responsiveness1,
    Responsiveness2,
    Scalability,
    Fairness,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file.
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    scenario: Option<PathBuf>,
    /// Built-in experiment.
    #[arg(long, value_enum)]
    builtin: Option<BuiltinArg>,
    #[arg(long, value_enum)]
    mechanism: Option<Mechanism>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// `section.key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seeds averaged per fairness point.
    #[arg(long, default_value_t = 3)]
    replicas: u32,
    #[arg(long)]
    quiet: bool,
}

fn config(a: RunArgs) -> Result<RunConfig, String> {
    let source = match (a.scenario, a.builtin) {
        (Some(p), _) => ScenarioSource::File(p),
        (None, Some(b)) => ScenarioSource::Builtin(match b {
            BuiltinArg::Responsiveness1 => Builtin::Responsiveness1,
            BuiltinArg::Responsiveness2 => Builtin::Responsiveness2,
            BuiltinArg::Scalability => Builtin::Scalability,
            BuiltinArg::Fairness => Builtin::Fairness,
        }),
        (None, None) => return Err("one of --scenario or --builtin is required".into()),
    };
    let duration = match a.duration {
        Some(d) if !(d.is_finite() && d > 0.0) => return Err(format!("duration must be positive, got {d}")),
        Some(d) => Some(SimTime::from_secs_f64(d)),
        None => None,
    };
    let mut cfg = RunConfig::new(source, a.out.unwrap_or_else(cli::default_out_dir));
    cfg.mechanism = a.mechanism.map(|m| match m {
        Mechanism::Rate => MechanismChoice::Rate,
        Mechanism::Credit => MechanismChoice::Credit,
        Mechanism::Both => MechanismChoice::Both,
    });
    cfg.seed = a.seed;
    cfg.duration = duration;
    cfg.overrides = a.set;
    cfg.quiet = a.quiet;
    cfg.replicas = a.replicas;
    Ok(cfg)
}

fn main() -> ExitCode {
    let Command::Run(args) = Cli::parse().command;
    let cfg = match config(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match cli::run(&cfg) {
        Ok(out) => {
            if !cfg.quiet {
                print!("{}", out.summary);
                for f in &out.files {
                    println!("wrote {}", f.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
