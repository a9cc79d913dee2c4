use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedsubsel::data::{generate_synthetic, SyntheticSpec};
use fedsubsel::experiment::{run_to_csv, sweep_to_csv, DatasetSpec, ExperimentConfig, SweepParam};
use fedsubsel::idx::{dataset_tensors, write_idx};
use fedsubsel::rng::{derive_seed, TAG_DATA};
use fedsubsel::suites::{run_suite, Suite};
use serde::Deserialize;

const SEED_ENV: &str = "FEDSUBSEL_SEED";

/// Federated learning simulator with submodular client selection.
#[derive(Parser)]
#[command(name = "fedsubsel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with one configuration and write per-round results as CSV.
    Run(RunArgs),
    /// Repeat a run for each value of one selection parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// lambda, b, phi (subtrunc) or mu, window (unionfl).
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0.01,0.25,0.95.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Run a built-in property suite; exits non-zero on any failed check.
    Verify {
        /// submodularity, greedy_bound, gradients or partition.
        #[arg(long)]
        suite: String,
    },
    /// Write a synthetic dataset as IDX feature and label files.
    GenData {
        /// Experiment config with a synthetic dataset, or a bare
        /// {classes, dims, per_class, spread[, seed]} object.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// CSV destination; defaults to the config's `output`, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; overrides FEDSUBSEL_SEED and the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeat: Option<usize>,
}

enum Failure {
    /// Invalid configuration or arguments (exit 2).
    Usage(String),
    /// The run itself failed (exit 1).
    Runtime(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<fedsubsel::Error> for Failure {
    fn from(e: fedsubsel::Error) -> Self {
        if e.is_config() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned 64-bit integer"))),
        Err(_) => Ok(None),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::from_json(&read_text(&args.config)?)
        .map_err(|e| Failure::Usage(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed.or(env_seed()?) {
        cfg.seed = seed;
    }
    if let Some(r) = args.repeat {
        cfg.repeat = r;
    }
    if let Some(out) = &args.out {
        cfg.output = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(bytes: &[u8], out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("writing {}: {e}", path.display()))),
        None => io::stdout().write_all(bytes).map_err(|e| Failure::Runtime(format!("writing stdout: {e}"))),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BareSpec {
    classes: usize,
    dims: usize,
    per_class: usize,
    spread: f64,
    #[serde(default)]
    seed: u64,
}

fn gen_data(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let text = read_text(config)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", config.display())))?;
    let (spec, config_seed) = if value.get("dataset").is_some() {
        let cfg = ExperimentConfig::from_json(&text).map_err(|e| Failure::Usage(format!("{}: {e}", config.display())))?;
        match cfg.dataset {
            DatasetSpec::Synthetic(s) => (s, cfg.seed),
            DatasetSpec::Idx { .. } => {
                return Err(Failure::Usage(format!("{}: dataset is not synthetic", config.display())));
            }
        }
    } else {
        let de = &mut serde_json::Deserializer::from_str(&text);
        let b: BareSpec = serde_path_to_error::deserialize(de)
            .map_err(|e| Failure::Usage(format!("{}: config error at `{}`: {}", config.display(), e.path(), e.inner())))?;
        (SyntheticSpec { classes: b.classes, dims: b.dims, per_class: b.per_class, spread: b.spread }, b.seed)
    };
    let seed = seed.or(env_seed()?).unwrap_or(config_seed);
    let ds = generate_synthetic(spec, derive_seed(seed, TAG_DATA, 0, 0)).map_err(|e| Failure::Usage(e.to_string()))?;
    let (images, labels) = dataset_tensors(&ds)?;
    fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("creating {}: {e}", out.display())))?;
    write_idx(out.join("images.idx"), &images)?;
    write_idx(out.join("labels.idx"), &labels)?;
    eprintln!("wrote {} rows of dimension {} to {}", ds.len(), ds.dim(), out.display());
    Ok(())
}

fn verify(name: &str) -> Result<(), Failure> {
    let suite: Suite = name.parse()?;
    let report = run_suite(suite);
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("suite {name} reported violations")))
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load_config(&args)?;
            let csv = run_to_csv(&cfg)?;
            emit(&csv, cfg.output.as_deref())
        }
        Command::Sweep { run, param, values } => {
            let cfg = load_config(&run)?;
            let param: SweepParam = param.parse()?;
            let csv = sweep_to_csv(&cfg, param, &values)?;
            emit(&csv, cfg.output.as_deref())
        }
        Command::Verify { suite } => verify(&suite),
        Command::GenData { config, out, seed } => gen_data(&config, &out, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(match f {
                Failure::Usage(_) => 2,
                Failure::Runtime(_) => 1,
            })
        }
    }
}
