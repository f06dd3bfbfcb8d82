//! `co-assim`: runs the gap-filling experiment stage by stage.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use co_assim::io::Manifest;
use co_assim::pipeline::{self, RunConfig};
use co_assim::{Error, Result};

#[derive(Parser)]
#[command(name = "co-assim", version, about = "Gap-filling of cloud-masked CO fields with an advection-driven hierarchical model")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; defaults apply to anything omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run root (stage subdirectories are created inside); for `evaluate`, the report directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of independent Gibbs chains.
    #[arg(long, global = true)]
    chains: Option<usize>,
    /// Fit the level-coupled model (default).
    #[arg(long, global = true, conflicts_with = "uncoupled")]
    coupled: bool,
    /// Force the inter-level forcing to zero.
    #[arg(long, global = true)]
    uncoupled: bool,
    /// Reporting level index; the middle level by default.
    #[arg(long, global = true)]
    level: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate winds, the ground-truth field and cloud masks.
    Simulate,
    /// Draw noisy cloud-free observations from a simulated scenario.
    Observe,
    /// Fit the hierarchical model by Gibbs sampling.
    FitBhm,
    /// Fit the per-snapshot kriging baseline.
    FitKriging,
    /// Score fitted runs against the truth.
    Evaluate {
        /// Simulate directory (or a run root containing one).
        #[arg(long)]
        truth: PathBuf,
        /// Fitted run directories.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
    },
    /// Every stage in order, including both model variants.
    All,
}

const DEFAULT_ROOT: &str = "out";

fn resolve_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if g.seed.is_some() {
        cfg.seed = g.seed;
    }
    if let Some(c) = g.chains {
        cfg.bhm.chains = c;
    }
    if g.coupled {
        cfg.bhm.coupled = true;
    }
    if g.uncoupled {
        cfg.bhm.coupled = false;
    }
    if g.level.is_some() {
        cfg.level = g.level;
    }
    if g.out.is_some() {
        cfg.out = g.out.clone();
    }
    Ok(cfg)
}

fn report_stage(m: &Manifest, dir: &Path) {
    println!("{}: wrote {} artifacts to {}", m.stage, m.artifacts.len(), dir.display());
    if let Some(c) = m.meta.get("max_courant").and_then(|v| v.as_f64()) {
        if c > 1.0 {
            eprintln!("warning: maximum Courant number {c:.3} exceeds 1; the centered transport step can amplify grid-scale noise");
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Evaluate { truth, runs } = &cli.command {
        let out = cli.global.out.clone().unwrap_or_else(|| PathBuf::from(pipeline::REPORT_DIR));
        let (m, report) = pipeline::run_evaluate(truth, runs, cli.global.level, &out)?;
        report_stage(&m, &out);
        print!("{}", report.tables_csv());
        return Ok(());
    }
    let cfg = resolve_config(&cli.global)?;
    let root = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT));
    let (m, dir) = match cli.command {
        Command::Simulate => (pipeline::run_simulate(&cfg, &root)?, pipeline::SIMULATE_DIR),
        Command::Observe => (pipeline::run_observe(&cfg, &root)?, pipeline::OBSERVE_DIR),
        Command::FitBhm => (pipeline::run_fit_bhm(&cfg, &root)?, pipeline::bhm_dir(cfg.bhm.coupled)),
        Command::FitKriging => (pipeline::run_fit_kriging(&cfg, &root)?, pipeline::KRIGING_DIR),
        Command::All => {
            let (manifests, report) = pipeline::run_all(&cfg, &root)?;
            for m in &manifests {
                println!("{}: {} artifacts", m.stage, m.artifacts.len());
            }
            if let Some(c) = manifests[0].meta.get("max_courant").and_then(|v| v.as_f64()).filter(|c| *c > 1.0) {
                eprintln!("warning: maximum Courant number {c:.3} exceeds 1");
            }
            print!("{}", report.tables_csv());
            return Ok(());
        }
        Command::Evaluate { .. } => unreachable!("handled above"),
    };
    report_stage(&m, &root.join(dir));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_status(&e)
        }
    }
}

fn exit_status(e: &Error) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
