use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use beattrio_core::config::RunConfig;
use clap::{ArgAction, Args, Parser, Subcommand};

use beattrio_cli::commands;

/// PVC beat detection, dictionary beat compression and beat-trio streaming.
#[derive(Parser, Debug)]
#[command(name = "beattrio", version)]
struct Cli {
    /// TOML run configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    /// -v for progress, -vv for debug output.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Directory of `<id>.csv` records and `<id>.ann.csv` annotations.
    #[arg(long, global = true)]
    records: Option<PathBuf>,
    /// Directory for models and reports.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    prd_class: Option<f64>,
    #[arg(long, global = true)]
    prd_int: Option<f64>,
    #[arg(long, global = true)]
    prd_compr: Option<f64>,
    #[arg(long, global = true)]
    target_se: Option<f64>,
    /// Fixed classification threshold.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Notify once more than this many PVCs accumulate.
    #[arg(long, global = true)]
    th: Option<u64>,
    /// Stop monitoring after this many beats.
    #[arg(long, global = true)]
    nth: Option<u64>,
    /// Leading minutes of each test record used for training.
    #[arg(long, global = true)]
    minutes: Option<f64>,
    #[arg(long, global = true)]
    atoms: Option<usize>,
    #[arg(long, global = true)]
    sparsity: Option<usize>,
    #[arg(long, global = true)]
    ksvd_iterations: Option<usize>,
    #[arg(long, global = true)]
    ksvd_seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.pipeline;
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.records => cfg.paths.records);
        set!(self.output => cfg.paths.output);
        set!(self.prd_class => p.prd_class);
        set!(self.prd_int => p.prd_int);
        set!(self.prd_compr => p.prd_compr);
        set!(self.target_se => p.target_se);
        set!(self.th => p.th);
        set!(self.minutes => p.patient_specific_minutes);
        set!(self.atoms => p.ksvd.n_atoms);
        set!(self.sparsity => p.ksvd.sparsity);
        set!(self.ksvd_iterations => p.ksvd.iterations);
        set!(self.ksvd_seed => p.ksvd.seed);
        if self.tau.is_some() {
            p.tau = self.tau;
        }
        if self.nth.is_some() {
            p.n_th = self.nth;
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic record/annotation corpus.
    Synth(commands::SynthArgs),
    /// Learn both dictionaries, the threshold and the codec.
    Train(commands::TrainArgs),
    /// Label beats and write the ROC.
    Classify(commands::ClassifyArgs),
    /// Encode one record into a stream file.
    Compress(commands::CompressArgs),
    /// Decode a stream file back into beats.
    Decode(commands::DecodeArgs),
    /// Run the beat-trio state machine over a label sequence.
    Simulate(commands::SimulateArgs),
    /// Partition-based or Monte Carlo evaluation.
    Eval(commands::EvalArgs),
    /// Bandwidth fractions and monitoring cost.
    Bandwidth(commands::BandwidthArgs),
}

/// 2 usage, 3 data, 4 unmet constraint.
fn exit_code(err: &anyhow::Error) -> u8 {
    use beattrio_core::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Usage(_) => 2,
                Error::Constraint(_) => 4,
                Error::Domain(_) | Error::Decode { .. } | Error::Format(_) | Error::Io(_) | Error::Json(_) => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    3
}

fn set_workers() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("BEATTRIO_WORKERS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| beattrio_core::Error::Usage(format!("BEATTRIO_WORKERS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("starting worker pool")?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    set_workers()?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    cfg.pipeline.validate()?;
    match cli.command {
        Command::Synth(a) => commands::synth(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Classify(a) => commands::classify(&cfg, a),
        Command::Compress(a) => commands::compress(&cfg, a),
        Command::Decode(a) => commands::decode(&cfg, a),
        Command::Simulate(a) => commands::simulate(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::Bandwidth(a) => commands::bandwidth(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
