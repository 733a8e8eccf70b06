//! `specbias` subcommands. Flags override values from `--config`, which
//! override the built-in defaults.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use specbias_core::experiments::{
    freq_sweep, krr_consistency, msk_verify, ntk_check, pgd_run, variance_sweep, Arm,
    FreqSweepConfig, KrrConsistencyConfig, MskVerifyConfig, NtkCheckConfig, PgdTrainConfig,
    VarianceSweepConfig,
};
use specbias_core::msk::{PredictMode, SpectrumMap};
use specbias_core::Error as CoreError;

use crate::checkpoint;
use crate::config::{from_core, load_config, ConfigError};
use crate::output::{write_json, write_table, Table};
use crate::trace::{write_trace, TraceMetadata};

#[derive(Debug, Parser)]
#[command(
    name = "specbias",
    version,
    about = "Spectral-bias preconditioning experiments"
)]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Iterations to fit sin(kθ) per frequency and preconditioner.
    FreqSweep(FreqArgs),
    /// Test error of MSK regression on pure-noise labels.
    VarianceSweep(VarianceArgs),
    /// Distance between the empirical MSK and its population counterpart.
    MskVerify(MskArgs),
    /// One preconditioned training run with a full trace and checkpoint.
    PgdTrain(PgdArgs),
    /// Gap between the trained network and its linearisation across widths.
    Krr(KrrArgs),
    /// Gap between the empirical NTK at initialisation and its limit.
    NtkCheck(NtkArgs),
}

#[derive(Debug, Args)]
pub struct FreqArgs {
    /// `1..6`, `1..=6` or `1,2,5`.
    #[arg(long)]
    pub freqs: Option<String>,
    /// Comma list of identity, ntk, ntk_t, ntk_analytic.
    #[arg(long)]
    pub arms: Option<String>,
    /// A count `N` (seeds 0..N) or a comma list.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub flatten_k: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VarianceArgs {
    #[arg(long)]
    pub sizes: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub test_points: Option<usize>,
    /// Comma list of spectrum maps, e.g. `identity,power:0.5`.
    #[arg(long)]
    pub maps: Option<String>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// joint, bordered or nystrom.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct MskArgs {
    #[arg(long)]
    pub sizes: Option<String>,
    /// Number of seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub g: Option<String>,
    #[arg(long)]
    pub truncation: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PgdArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub frequency: Option<u32>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub arm: Option<String>,
    #[arg(long)]
    pub flatten_k: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub track: Option<usize>,
}

#[derive(Debug, Args)]
pub struct KrrArgs {
    #[arg(long)]
    pub widths: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub flatten_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct NtkArgs {
    #[arg(long)]
    pub widths: Option<String>,
    /// Number of initialisations per width.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match from_core(e) {
            Ok(c) => CliError::Config(c),
            Err(e) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn list<T: std::str::FromStr>(field: &str, text: &str) -> Result<Vec<T>, ConfigError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| ConfigError::new(field, format!("cannot parse `{}`", s.trim())))
        })
        .collect()
}

/// `a..b` (inclusive), `a..=b` or a comma list.
pub fn parse_range(field: &str, text: &str) -> Result<Vec<u32>, ConfigError> {
    if let Some((lo, hi)) = text.split_once("..") {
        let hi = hi.strip_prefix('=').unwrap_or(hi);
        let bad = || ConfigError::new(field, format!("cannot parse range `{text}`"));
        let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(ConfigError::new(field, "empty range"));
        }
        return Ok((lo..=hi).collect());
    }
    list(field, text)
}

/// A single count `N` means `0..N`; anything else is an explicit list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, ConfigError> {
    if !text.contains(',') {
        let n: u64 = text
            .trim()
            .parse()
            .map_err(|_| ConfigError::new("seeds", format!("cannot parse `{text}`")))?;
        return Ok((0..n).collect());
    }
    list("seeds", text)
}

fn parse_count(field: &str, text: &str) -> Result<u64, ConfigError> {
    text.trim()
        .parse()
        .map_err(|_| ConfigError::new(field, format!("expected a count, got `{text}`")))
}

fn parse_mode(text: &str) -> Result<PredictMode, ConfigError> {
    match text.trim() {
        "joint" => Ok(PredictMode::Joint),
        "bordered" => Ok(PredictMode::Bordered),
        "nystrom" => Ok(PredictMode::Nystrom),
        other => Err(ConfigError::new("mode", format!("unknown mode `{other}`"))),
    }
}

fn base<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, ConfigError> {
    match path {
        Some(p) => load_config(p),
        None => Ok(T::default()),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn validated(result: specbias_core::Result<()>) -> Result<(), CliError> {
    result.map_err(CliError::from)
}

pub fn resolve_freq(cli: &Cli, a: &FreqArgs) -> Result<FreqSweepConfig, CliError> {
    let mut c: FreqSweepConfig = base(cli.config.as_deref())?;
    set(&mut c.seed, cli.seed);
    if let Some(f) = &a.freqs {
        c.freqs = parse_range("freqs", f)?;
    }
    if let Some(arms) = &a.arms {
        c.arms = arms
            .split(',')
            .map(|s| s.parse::<Arm>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(s) = &a.seeds {
        c.seeds = parse_seeds(s)?;
    }
    set(&mut c.n, a.n);
    set(&mut c.width, a.width);
    set(&mut c.depth, a.depth);
    set(&mut c.max_iter, a.max_iter);
    set(&mut c.flatten_k, a.flatten_k);
    set(&mut c.epsilon, a.epsilon);
    set(&mut c.amplitude, a.amplitude);
    if a.batch_size.is_some() {
        c.batch_size = a.batch_size;
    }
    validated(c.validate())?;
    Ok(c)
}

pub fn resolve_variance(cli: &Cli, a: &VarianceArgs) -> Result<VarianceSweepConfig, CliError> {
    let mut c: VarianceSweepConfig = base(cli.config.as_deref())?;
    set(&mut c.seed, cli.seed);
    if let Some(s) = &a.sizes {
        c.sizes = list("sizes", s)?;
    }
    set(&mut c.trials, a.trials);
    set(&mut c.test_points, a.test_points);
    if let Some(m) = &a.maps {
        c.maps = m
            .split(',')
            .map(|s| {
                s.parse::<SpectrumMap>()
                    .map_err(|e| ConfigError::new("maps", e.to_string()))
            })
            .collect::<Result<_, _>>()?;
    }
    set(&mut c.bandwidth, a.bandwidth);
    set(&mut c.gamma, a.gamma);
    if let Some(m) = &a.mode {
        c.mode = parse_mode(m)?;
    }
    validated(c.validate())?;
    Ok(c)
}

pub fn resolve_msk(cli: &Cli, a: &MskArgs) -> Result<MskVerifyConfig, CliError> {
    let mut c: MskVerifyConfig = base(cli.config.as_deref())?;
    set(&mut c.seed, cli.seed);
    if let Some(s) = &a.sizes {
        c.sizes = list("sizes", s)?;
    }
    if let Some(s) = &a.seeds {
        c.seeds = parse_count("seeds", s)?;
    }
    if let Some(g) = &a.g {
        c.g = g
            .parse()
            .map_err(|e: CoreError| ConfigError::new("g", e.to_string()))?;
    }
    set(&mut c.truncation, a.truncation);
    validated(c.validate())?;
    Ok(c)
}

pub fn resolve_pgd(cli: &Cli, a: &PgdArgs) -> Result<PgdTrainConfig, CliError> {
    let mut c: PgdTrainConfig = base(cli.config.as_deref())?;
    set(&mut c.seed, cli.seed);
    set(&mut c.n, a.n);
    set(&mut c.width, a.width);
    set(&mut c.frequency, a.frequency);
    set(&mut c.amplitude, a.amplitude);
    if let Some(arm) = &a.arm {
        c.arm = arm
            .parse()
            .map_err(|e: CoreError| ConfigError::new("arm", e.to_string()))?;
    }
    set(&mut c.flatten_k, a.flatten_k);
    set(&mut c.max_iter, a.max_iter);
    set(&mut c.track, a.track);
    validated(c.validate())?;
    Ok(c)
}

pub fn resolve_krr(cli: &Cli, a: &KrrArgs) -> Result<KrrConsistencyConfig, CliError> {
    let mut c: KrrConsistencyConfig = base(cli.config.as_deref())?;
    set(&mut c.seed, cli.seed);
    if let Some(w) = &a.widths {
        c.widths = list("widths", w)?;
    }
    set(&mut c.steps, a.steps);
    set(&mut c.n, a.n);
    set(&mut c.flatten_k, a.flatten_k);
    validated(c.validate())?;
    Ok(c)
}

pub fn resolve_ntk(cli: &Cli, a: &NtkArgs) -> Result<NtkCheckConfig, CliError> {
    let mut c: NtkCheckConfig = base(cli.config.as_deref())?;
    set(&mut c.seed, cli.seed);
    if let Some(w) = &a.widths {
        c.widths = list("widths", w)?;
    }
    if let Some(s) = &a.seeds {
        c.seeds = parse_count("seeds", s)?;
    }
    set(&mut c.n, a.n);
    set(&mut c.depth, a.depth);
    validated(c.validate())?;
    Ok(c)
}

/// Paths written by a command.
#[derive(Debug, Clone, PartialEq)]
pub struct Written {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub rows: usize,
}

#[derive(Serialize)]
struct NoMetadata {}

fn emit<C: Serialize, M: Serialize>(
    out: &Path,
    stem: &str,
    command: &str,
    table: &Table,
    config: &C,
    metadata: M,
) -> Result<Written, CliError> {
    let (csv, json) = write_table(out, stem, command, table, config, metadata)?;
    Ok(Written {
        csv,
        json,
        rows: table.rows.len(),
    })
}

pub fn run(cli: &Cli) -> Result<Written, CliError> {
    match &cli.command {
        Command::FreqSweep(a) => {
            let c = resolve_freq(cli, a)?;
            let rows = freq_sweep(&c)?;
            let mut t = Table::new([
                "frequency",
                "arm",
                "seed",
                "iterations",
                "reached",
                "diverged",
                "final_loss",
                "eta0",
            ]);
            for r in &rows {
                t.push(vec![
                    r.frequency.into(),
                    r.arm.name().into(),
                    r.seed.into(),
                    r.iterations.into(),
                    r.reached.into(),
                    r.diverged.into(),
                    r.final_loss.into(),
                    r.eta0.into(),
                ]);
            }
            #[derive(Serialize)]
            struct Meta {
                cap: usize,
                spectrum_map: String,
            }
            let meta = Meta {
                cap: c.max_iter,
                spectrum_map: c.flatten_map().name(),
            };
            emit(&cli.out, "freq_sweep", "freq-sweep", &t, &c, meta)
        }
        Command::VarianceSweep(a) => {
            let c = resolve_variance(cli, a)?;
            let rows = variance_sweep(&c)?;
            let mut t = Table::new(["n", "g", "test_mse", "std", "trials"]);
            for r in &rows {
                t.push(vec![
                    r.n.into(),
                    r.g.clone().into(),
                    r.test_mse.into(),
                    r.std.into(),
                    r.trials.into(),
                ]);
            }
            #[derive(Serialize)]
            struct Floored {
                n: usize,
                g: String,
                floored: usize,
            }
            #[derive(Serialize)]
            struct Meta {
                kernel: String,
                floored_eigenvalues: Vec<Floored>,
            }
            let meta = Meta {
                kernel: format!("laplace(bandwidth={})", c.bandwidth),
                floored_eigenvalues: rows
                    .iter()
                    .map(|r| Floored {
                        n: r.n,
                        g: r.g.clone(),
                        floored: r.floored,
                    })
                    .collect(),
            };
            emit(&cli.out, "variance_sweep", "variance-sweep", &t, &c, meta)
        }
        Command::MskVerify(a) => {
            let c = resolve_msk(cli, a)?;
            let rows = msk_verify(&c)?;
            let mut t = Table::new(["n", "mean_frobenius", "std"]);
            for r in &rows {
                t.push(vec![r.n.into(), r.mean_frobenius.into(), r.std.into()]);
            }
            emit(&cli.out, "msk_verify", "msk-verify", &t, &c, NoMetadata {})
        }
        Command::PgdTrain(a) => {
            let c = resolve_pgd(cli, a)?;
            let run = pgd_run(&c)?;
            std::fs::create_dir_all(&cli.out)?;
            checkpoint::save(&cli.out.join("initial.bin"), &run.initial)?;
            checkpoint::save(&cli.out.join("checkpoint.bin"), &run.trained)?;
            write_json(
                &cli.out.join("data.json"),
                &DataDump {
                    points: run.points.as_slice(),
                    dim: run.points.cols(),
                    labels: &run.labels,
                },
            )?;
            let meta = TraceMetadata {
                seed: c.seed,
                eta0: run.trace.eta0,
                epsilon: run.trace.epsilon,
                iterations_to_threshold: run.trace.iterations_to_threshold,
                k0_spectrum: &run.k0_spectrum,
                ks_spectrum: &run.ks_spectrum,
            };
            let (csv, json) = write_trace(&cli.out, "pgd-train", &run.trace, &c, meta)?;
            Ok(Written {
                csv,
                json,
                rows: run.trace.residual_norms.len(),
            })
        }
        Command::Krr(a) => {
            let c = resolve_krr(cli, a)?;
            let rows = krr_consistency(&c)?;
            let mut t = Table::new(["width", "max_gap", "mean_gap", "eta0"]);
            for r in &rows {
                t.push(vec![
                    r.width.into(),
                    r.max_gap.into(),
                    r.mean_gap.into(),
                    r.eta0.into(),
                ]);
            }
            emit(&cli.out, "krr", "krr", &t, &c, NoMetadata {})
        }
        Command::NtkCheck(a) => {
            let c = resolve_ntk(cli, a)?;
            let rows = ntk_check(&c)?;
            let mut t = Table::new(["width", "mean_gap", "std"]);
            for r in &rows {
                t.push(vec![r.width.into(), r.mean_gap.into(), r.std.into()]);
            }
            emit(&cli.out, "ntk_check", "ntk-check", &t, &c, NoMetadata {})
        }
    }
}

#[derive(Serialize)]
struct DataDump<'a> {
    dim: usize,
    points: &'a [f64],
    labels: &'a [f64],
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(w) => {
            println!("wrote {} rows to {}", w.rows, w.csv.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
