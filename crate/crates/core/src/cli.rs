//! Command-line driver: `train`, `fedsim`, `normtest` and `histdump`.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 divergence,
//! 3 I/O error (including missing or malformed input files).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::artifacts::{
    dump_error_vector, read_error_dump, write_histogram_csv, write_ledger_csv, write_metrics_csv,
    write_normality_csv, write_param_dump, write_rounds_csv,
};
use crate::data::{load_config, ExperimentConfig};
use crate::error::{Error, Result};
use crate::fedsim::{run_federated, RoundMode};
use crate::flops::EpochMode;
use crate::sampler::train_with_gradsamp;
use crate::stats::{histogram, layer_normality_report, LayerStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "GRADSAMP_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "gradsamp",
    version,
    about = "Epoch skipping with Gaussian-sampled updates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model, skipping epochs according to the configured strategy.
    Train(RunArgs),
    /// Run the federated simulator with round skipping.
    Fedsim(RunArgs),
    /// Run the per-layer normality test on an error dump.
    Normtest(NormtestArgs),
    /// Write per-layer histograms of dumped epoch errors.
    Histdump(HistdumpArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set strategy=periodic --set period=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory; takes precedence over the config file.
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Master seed; takes precedence over the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct NormtestArgs {
    /// Error dump (`layer,index,value` CSV).
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Report CSV path; defaults to `<dump>.normality.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HistdumpArgs {
    /// Run directory containing `errors/epoch_NNNN.csv`.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Epochs to include; all dumped epochs when omitted.
    #[arg(long, value_delimiter = ',')]
    pub epochs: Vec<usize>,
    /// Layers to include; all layers when omitted.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<String>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Output directory; defaults to `<run-dir>/hist`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Maps an error to its process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ClientDiverged { .. } | Error::NonFinite(_) | Error::NonFiniteGradient { .. } => {
            EXIT_DIVERGED
        }
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::CountMismatch { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: &Command) -> Result<i32> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Fedsim(a) => cmd_fedsim(a),
        Command::Normtest(a) => cmd_normtest(a),
        Command::Histdump(a) => cmd_histdump(a),
    }
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = load_config(&args.config, &overrides)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.output.clone());
    let dir = out.join(cfg.strategy.tag());
    Ok((cfg, dir))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_train(args: &RunArgs) -> Result<i32> {
    let (cfg, dir) = load(args)?;
    let (train, val) = cfg.load_datasets()?;
    let spec = cfg.model_spec(train.dim(), train.classes())?;
    let report = train_with_gradsamp(&spec, &train, &val, &cfg.train_run_config())?;
    create_dir(&dir)?;

    write_metrics_csv(&report.records, &dir.join("metrics.csv"))?;
    write_param_dump(&report.final_params, &dir.join("final_params.csv"))?;
    write_ledger_csv(&report.ledger, &dir.join("flops.csv"))?;
    if !report.captured.is_empty() {
        let errors = dir.join("errors");
        create_dir(&errors)?;
        for err in &report.captured {
            let epoch = err.source_epochs.map_or(0, |(_, cur)| cur);
            dump_error_vector(err, epoch, &errors.join(error_dump_name(epoch)))?;
        }
    }

    let sampled = report.ledger.count(EpochMode::Sampled);
    println!(
        "{}: {} epochs, {} sampled, flops saved {:.4}, final val_acc {}",
        cfg.strategy,
        report.records.len(),
        sampled,
        report.ledger.savings_fraction().unwrap_or(0.0),
        report
            .final_val_acc()
            .map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}")),
    );
    println!("wrote {}", dir.display());
    if let Some(k) = report.diverged_at {
        eprintln!("error: training diverged at epoch {k}");
        return Ok(EXIT_DIVERGED);
    }
    Ok(EXIT_OK)
}

pub fn cmd_fedsim(args: &RunArgs) -> Result<i32> {
    let (cfg, dir) = load(args)?;
    let setup = cfg.fl_setup();
    setup
        .validate()
        .map_err(|e| Error::Config(format!("fedsim: {e}")))?;
    let (train, val) = cfg.load_datasets()?;
    let spec = cfg.model_spec(train.dim(), train.classes())?;
    let report = run_federated(&spec, &train, &val, &setup)?;
    create_dir(&dir)?;

    write_rounds_csv(&report.rounds, &dir.join("rounds.csv"))?;
    write_param_dump(&report.final_params, &dir.join("final_params.csv"))?;
    let final_acc = report.rounds.last().map_or(f64::NAN, |r| r.val_acc);
    println!(
        "{}: {} rounds, {} sampled, comm cost {}, final val_acc {final_acc:.4}",
        cfg.strategy,
        report.rounds.len(),
        report.count(RoundMode::Sampled),
        report.total_comm_cost(),
    );
    println!("wrote {}", dir.display());
    Ok(EXIT_OK)
}

pub fn cmd_normtest(args: &NormtestArgs) -> Result<i32> {
    if !(args.alpha > 0.0 && args.alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be in (0, 1], got {}",
            args.alpha
        )));
    }
    let err = read_error_dump(&args.dump)?;
    let report = layer_normality_report(&err, args.alpha)?;
    for l in &report.layers {
        match &l.status {
            LayerStatus::Tested(r) => println!(
                "{:<16} n={:<8} K2={:<12.4} p={:<12.4e} {}",
                l.layer,
                l.n,
                r.k2,
                r.p_value,
                if r.pass { "pass" } else { "fail" }
            ),
            LayerStatus::Skipped => println!("{:<16} n={:<8} skipped", l.layer, l.n),
            LayerStatus::Degenerate => println!("{:<16} n={:<8} degenerate (fail)", l.layer, l.n),
        }
    }
    println!(
        "passed {}/{} eligible layers at alpha={}",
        report.passed(),
        report.eligible(),
        args.alpha
    );
    let out = args.out.clone().unwrap_or_else(|| {
        let mut name = args.dump.as_os_str().to_owned();
        name.push(".normality.csv");
        PathBuf::from(name)
    });
    write_normality_csv(&report, &out)?;
    Ok(EXIT_OK)
}

/// File name of the error dump for `epoch` inside a run's `errors/` directory.
pub fn error_dump_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.csv")
}

fn dumped_epochs(errors: &Path) -> Result<Vec<usize>> {
    let mut epochs = Vec::new();
    for entry in fs::read_dir(errors).map_err(|e| Error::io(errors, e))? {
        let entry = entry.map_err(|e| Error::io(errors, e))?;
        let name = entry.file_name();
        let parsed = name
            .to_str()
            .and_then(|n| n.strip_prefix("epoch_"))
            .and_then(|n| n.strip_suffix(".csv"))
            .and_then(|n| n.parse::<usize>().ok());
        epochs.extend(parsed);
    }
    epochs.sort_unstable();
    Ok(epochs)
}

pub fn cmd_histdump(args: &HistdumpArgs) -> Result<i32> {
    if args.bins == 0 {
        return Err(Error::InvalidArgument("bins must be positive".into()));
    }
    let errors = args.run_dir.join("errors");
    let epochs = if args.epochs.is_empty() {
        dumped_epochs(&errors)?
    } else {
        args.epochs.clone()
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.run_dir.join("hist"));

    let mut dumps = Vec::with_capacity(epochs.len());
    for &epoch in &epochs {
        let path = errors.join(error_dump_name(epoch));
        if !path.is_file() {
            return Err(Error::io(
                &path,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("no error dump for epoch {epoch}"),
                ),
            ));
        }
        dumps.push((epoch, read_error_dump(&path)?));
    }
    if let Some((_, first)) = dumps.first() {
        for name in &args.layers {
            if first.partition().get(name).is_none() {
                return Err(Error::InvalidArgument(format!("unknown layer `{name}`")));
            }
        }
    }

    create_dir(&out)?;
    let mut written = 0;
    for (epoch, err) in &dumps {
        for (layer, values) in err.layers() {
            if !args.layers.is_empty() && !args.layers.iter().any(|l| l == layer) {
                continue;
            }
            let hist = histogram(values, args.bins)?;
            let path = out.join(format!("{layer}_epoch_{epoch:04}.csv"));
            write_histogram_csv(&hist, layer, *epoch, &path)?;
            written += 1;
        }
    }
    println!("wrote {written} histograms to {}", out.display());
    Ok(EXIT_OK)
}
