use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use unkd_core::config::ExperimentConfig;
use unkd_core::pipeline::{Command, Pipeline};
use unkd_core::DistillMethod;

/// Thread count for the parallel kernels; defaults to all cores.
const THREADS_ENV: &str = "UNKD_THREADS";

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Prepare,
    TrainTeacher,
    TrainStudentBase,
    Distill,
    Evaluate,
    SweepK,
    LemmaCheck,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Prepare => Command::Prepare,
            Cmd::TrainTeacher => Command::TrainTeacher,
            Cmd::TrainStudentBase => Command::TrainStudentBase,
            Cmd::Distill => Command::Distill,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::SweepK => Command::SweepK,
            Cmd::LemmaCheck => Command::LemmaCheck,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    None,
    Rd,
    Cd,
    Unkd,
}

impl From<Method> for DistillMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::None => DistillMethod::None,
            Method::Rd => DistillMethod::Rd,
            Method::Cd => DistillMethod::Cd,
            Method::Unkd => DistillMethod::Unkd,
        }
    }
}

/// Popularity-stratified knowledge distillation experiments.
#[derive(Debug, Parser)]
#[command(name = "unkd", version)]
struct Args {
    /// Pipeline command to run.
    #[arg(value_enum)]
    command: Cmd,
    /// Key-value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Number of popularity groups.
    #[arg(long)]
    k: Option<usize>,
    /// Distillation loss weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Rank-decay temperature of positive sampling.
    #[arg(long)]
    mu: Option<f64>,
    /// Suppress progress output.
    #[arg(long, short)]
    quiet: bool,
}

fn resolve_config(args: &Args) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(m) = args.method {
        cfg.method = m.into();
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(l) = args.lambda {
        cfg.lambda = l;
    }
    if let Some(mu) = args.mu {
        cfg.mu = mu;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value
            .parse()
            .with_context(|| format!("{THREADS_ENV}={value:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn run(args: Args) -> Result<()> {
    configure_threads()?;
    let cfg = resolve_config(&args)?;
    let mut pipeline = Pipeline::new(cfg, &args.out);
    pipeline.verbose = !args.quiet;
    let command: Command = args.command.into();
    pipeline.run(command).with_context(|| {
        format!(
            "{command} failed; see {}",
            pipeline.dir.stale_marker().display()
        )
    })?;
    if !args.quiet {
        eprintln!(
            "[unkd] {command} finished; artifacts in {}",
            args.out.display()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
