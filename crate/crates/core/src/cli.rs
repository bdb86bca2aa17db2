//! Command-line front end: `deconvolve`, `simulate` and `ingest`.
//!
//! All outputs of a command are built in memory first and written only once
//! the computation has succeeded, so a failing run leaves nothing behind.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bandwidth::{plugin_bandwidth_detailed, BandwidthChoice, BandwidthMethod, BandwidthSearch};
use crate::distributions::{ErrorFamily, ErrorModel};
use crate::estimator::{self, ZGrid};
use crate::gmm::GmmSolution;
use crate::harness::{self, SimConfig, SimResult};
use crate::ingestion::{self, Transform};
use crate::selection::{run_pipeline, PipelineConfig, SelectionMethod, SelectionRecord};
use crate::spectral::DEFAULT_KAPPA;
use crate::{Error, Result};

/// Seed used when `--seed` is absent.
pub const DEFAULT_SEED: u64 = 20_240_607;
/// Half width of the density grid in units of the fitted scale.
pub const DENSITY_HALF_WIDTH: f64 = 5.0;

#[derive(Debug, Parser)]
#[command(name = "gssdecon", version, about = "Skew-symmetric density deconvolution")]
pub struct Cli {
    /// Worker threads (defaults to GSSDECON_THREADS, then all cores).
    #[arg(long, global = true, env = "GSSDECON_THREADS")]
    pub threads: Option<usize>,

    /// Print elapsed wall time to stderr.
    #[arg(long, global = true)]
    pub timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a GSS density to contaminated observations.
    Deconvolve(DeconvolveArgs),
    /// Run a simulation study from a JSON config.
    Simulate(SimulateArgs),
    /// Preprocess paired-instrument or replicate data.
    Ingest(IngestArgs),
}

#[derive(Debug, Args)]
pub struct DeconvolveArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Column to read (defaults to the first).
    #[arg(long)]
    pub column: Option<String>,
    /// Error family: normal or laplace.
    #[arg(long)]
    pub error: String,
    #[arg(long)]
    pub error_var: f64,
    /// cv, mise or plugin.
    #[arg(long, default_value = "mise")]
    pub bandwidth: String,
    /// skewness, phase, random or minise.
    #[arg(long, default_value = "phase")]
    pub select: String,
    #[arg(long, default_value_t = crate::gmm::DEFAULT_MOMENTS)]
    pub moments: usize,
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    pub kappa: f64,
    /// Phase window; data-driven when absent.
    #[arg(long)]
    pub tstar: Option<f64>,
    #[arg(long, default_value_t = 401)]
    pub grid_points: usize,
    /// Also emit the nonparametric deconvolution estimate.
    #[arg(long)]
    pub np: bool,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the replicate count in the config.
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// paired or replicate.
    #[arg(long)]
    pub mode: String,
    /// Replicate mode: subtract before the log.
    #[arg(long, default_value_t = 50.0)]
    pub shift: f64,
    /// Replicate mode: skip the log transform.
    #[arg(long)]
    pub no_log: bool,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

/// Effective settings of a deconvolution run.
#[derive(Debug, Serialize)]
pub struct DeconvolveSettings {
    pub input: String,
    pub column: Option<String>,
    pub error: ErrorModel,
    pub pipeline: PipelineConfig,
    pub grid_points: usize,
    pub np: bool,
}

#[derive(Debug, Serialize)]
pub struct CandidateReport {
    pub xi: f64,
    pub omega: f64,
    pub d: f64,
    pub bandwidth: BandwidthChoice,
    pub score: f64,
}

#[derive(Debug, Serialize)]
pub struct NonparReport {
    pub h: f64,
    pub plugin_fallback: bool,
    pub truncated: bool,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub version: &'static str,
    pub settings: DeconvolveSettings,
    pub n: usize,
    pub solutions: Vec<GmmSolution>,
    pub candidates: Vec<CandidateReport>,
    pub selection: Option<SelectionRecord>,
    pub xi: f64,
    pub omega: f64,
    pub h: f64,
    pub density_file: String,
    pub nonparametric: Option<NonparReport>,
}

pub const REPORT_FILE: &str = "report.json";
pub const DENSITY_FILE: &str = "density.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPLICATES_FILE: &str = "replicates.csv";
pub const SERIES_FILE: &str = "w.csv";
pub const ESTIMATES_FILE: &str = "estimates.json";

/// Files produced by a command, held until everything has succeeded.
type Outputs = Vec<(&'static str, Vec<u8>)>;

fn config_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Config(e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn fmt_num(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn deconvolve(args: &DeconvolveArgs) -> Result<Outputs> {
    let family: ErrorFamily = args.error.parse()?;
    let error = ErrorModel::new(family, args.error_var).map_err(config_err)?;
    let bandwidth: BandwidthMethod = args.bandwidth.parse()?;
    let selection: SelectionMethod = args.select.parse()?;
    if args.grid_points < 2 {
        return Err(Error::Config("grid-points must be at least 2".into()));
    }
    if let Some(t) = args.tstar {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("tstar must be positive, got {t}")));
        }
    }
    if selection == SelectionMethod::MinIse {
        return Err(Error::Config("minimum-ISE selection needs a known truth; use it in simulations".into()));
    }
    let pipeline = PipelineConfig {
        moments: args.moments,
        bandwidth,
        selection,
        kappa: args.kappa,
        t_star: args.tstar,
        search: BandwidthSearch::default(),
        zgrid: ZGrid::default(),
        seed: args.seed,
    };
    let table = ingestion::read_table_file(&args.input)?;
    let w = ingestion::select_column(&table, args.column.as_deref())?;

    let outcome = run_pipeline(&w, &error, &pipeline, None)?;
    let fit = &outcome.fit;
    let record = fit.selection.clone();
    let xs = fit.default_xgrid(DENSITY_HALF_WIDTH, args.grid_points);
    let gss: Vec<f64> = xs.iter().map(|&x| fit.density(x)).collect();

    let np = if args.np {
        let pb = plugin_bandwidth_detailed(&w, &error)?;
        Some((estimator::np_fit(&w, &error, pb.h, &xs)?, pb.fallback))
    } else {
        None
    };

    let mut density = csv::Writer::from_writer(Vec::new());
    if np.is_some() {
        density.write_record(["x", "gss", "np"])?;
    } else {
        density.write_record(["x", "gss"])?;
    }
    for (i, &x) in xs.iter().enumerate() {
        let mut row = vec![fmt_num(x), fmt_num(gss[i])];
        if let Some((f, _)) = &np {
            row.push(fmt_num(f.density[i]));
        }
        density.write_record(&row)?;
    }
    let density = density
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;

    let scores = record.as_ref().map(|r| r.scores.clone()).unwrap_or_default();
    let candidates = outcome
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| CandidateReport {
            xi: c.solution.xi,
            omega: c.solution.omega,
            d: c.solution.d,
            bandwidth: c.bandwidth,
            score: scores.get(i).copied().unwrap_or(f64::NAN),
        })
        .collect();
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION"),
        settings: DeconvolveSettings {
            input: args.input.display().to_string(),
            column: args.column.clone(),
            error,
            pipeline,
            grid_points: args.grid_points,
            np: args.np,
        },
        n: w.len(),
        solutions: outcome.solutions.clone(),
        candidates,
        selection: record,
        xi: fit.xi,
        omega: fit.omega,
        h: fit.h,
        density_file: DENSITY_FILE.into(),
        nonparametric: np.as_ref().map(|(f, fallback)| NonparReport {
            h: f.h,
            plugin_fallback: *fallback,
            truncated: f.truncated,
        }),
    };
    Ok(vec![(REPORT_FILE, to_json(&report)?), (DENSITY_FILE, density)])
}

pub fn simulate(args: &SimulateArgs) -> Result<Outputs> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut config = SimConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    config.validate()?;
    let result: SimResult = harness::run(&config)?;
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    Ok(vec![(SUMMARY_FILE, result.to_json()?.into_bytes()), (REPLICATES_FILE, csv)])
}

#[derive(Debug, Serialize)]
struct IngestReport<T: Serialize> {
    mode: &'static str,
    input: String,
    series_file: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    transform: Option<Transform>,
    estimates: T,
}

fn series_csv(w: &[f64]) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["w"])?;
    for v in w {
        wtr.write_record([fmt_num(*v)])?;
    }
    wtr.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn ingest(args: &IngestArgs) -> Result<Outputs> {
    let mode = args.mode.to_ascii_lowercase();
    if mode != "paired" && mode != "replicate" {
        return Err(Error::Config(format!(
            "unknown ingest mode '{}' (expected paired or replicate)",
            args.mode
        )));
    }
    let table = ingestion::read_table_file(&args.input)?;
    let input = args.input.display().to_string();
    if mode == "paired" {
        let est = ingestion::harmonize_pairs(&ingestion::paired_from_table(&table)?)?;
        let series = series_csv(&est.w)?;
        let report = IngestReport {
            mode: "paired",
            input,
            series_file: SERIES_FILE,
            transform: None,
            estimates: &est,
        };
        Ok(vec![(ESTIMATES_FILE, to_json(&report)?), (SERIES_FILE, series)])
    } else {
        let transform = Transform {
            shift: args.shift,
            log: !args.no_log,
        };
        let est = ingestion::replicate_average(&ingestion::replicate_from_table(&table)?, &transform)?;
        let series = series_csv(&est.w)?;
        let report = IngestReport {
            mode: "replicate",
            input,
            series_file: SERIES_FILE,
            transform: Some(transform),
            estimates: &est,
        };
        Ok(vec![(ESTIMATES_FILE, to_json(&report)?), (SERIES_FILE, series)])
    }
}

/// Writes every output through a temporary file and a rename.
fn commit(dir: &Path, outputs: &Outputs) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut staged = Vec::with_capacity(outputs.len());
    for (name, bytes) in outputs {
        let tmp = dir.join(format!(".{name}.partial"));
        if let Err(e) = std::fs::write(&tmp, bytes) {
            for (t, _) in &staged {
                let _ = std::fs::remove_file(t);
            }
            let _ = std::fs::remove_file(&tmp);
            return Err(e.into());
        }
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, dest) in staged {
        std::fs::rename(tmp, dest)?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let (outputs, dir) = match &cli.command {
        Command::Deconvolve(a) => (deconvolve(a)?, &a.output_dir),
        Command::Simulate(a) => (simulate(a)?, &a.output_dir),
        Command::Ingest(a) => (ingest(a)?, &a.output_dir),
    };
    commit(dir, &outputs)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let start = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 4;
        }
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 1;
        }
    };
    let result = pool.install(|| execute(&cli));
    if cli.timing {
        eprintln!("elapsed: {:.3} s", start.elapsed().as_secs_f64());
    }
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
