//! Command-line front end: `volume`, `benchmark` and `sample` subcommands
//! over the library's harness. All heavy lifting lives in the library; this
//! file only parses flags and moves bytes.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use polyvol::harness::{
    benchmark_report_csv, benchmark_report_json, build_model, build_model_from_file, run_benchmark,
    run_sample, run_volume, volume_report_csv, volume_report_json, BenchmarkConfig, SampleConfig,
};
use polyvol::polytope::{make_cube, make_iso_simplex, make_std_simplex, HPolytope, ModelInfo};
use polyvol::volume::{EstimatorConfig, FinalMode};
use polyvol::{Error, Result};

#[derive(Parser)]
#[command(
    name = "polyvol",
    version,
    about = "Estimate polytope volumes with an annealed bouncy particle sampler"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a model's volume over independent repeats.
    Volume(VolumeArgs),
    /// Find, per dimension, the sample budget hitting a target accuracy.
    Benchmark(BenchmarkArgs),
    /// Stream raw sampler output at a fixed Gaussian width.
    Sample(SampleArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Built-in model: cube, std-simplex, iso-simplex; or file:<path>.
    #[arg(long, default_value = "cube")]
    model: String,
    /// Constraint file; overrides --model.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Dimension for built-in models.
    #[arg(long)]
    dim: Option<usize>,
    /// Bounding-radius override (file models fall back to a loose
    /// axis-extent heuristic without it).
    #[arg(long)]
    radius: Option<f64>,
}

impl ModelArgs {
    fn build(&self) -> Result<(HPolytope, ModelInfo)> {
        let (p, mut info) = match &self.file {
            Some(path) => build_model_from_file(path),
            None => build_model(&self.model, self.dim),
        }?;
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "radius must be positive and finite, got {r}"
                )));
            }
            info.bounding_radius = Some(r);
        }
        Ok((p, info))
    }
}

/// `auto` or a positive rate.
#[derive(Clone, Copy)]
struct LambdaRefresh(Option<f64>);

impl FromStr for LambdaRefresh {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(LambdaRefresh(None));
        }
        let v: f64 = s
            .parse()
            .map_err(|_| format!("expected 'auto' or a number, got '{s}'"))?;
        if v > 0.0 && v.is_finite() {
            Ok(LambdaRefresh(Some(v)))
        } else {
            Err(format!("refresh rate must be positive and finite, got {v}"))
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FinalModeArg {
    /// Closed-form flat approximation of the last step.
    Flat,
    /// Unbiased Monte-Carlo final ratio (default).
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct EstimatorArgs {
    /// Total output samples across phases.
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lower edge of the starting-mass window.
    #[arg(long = "cmin", default_value_t = 0.1)]
    c_min: f64,
    /// Upper edge of the starting-mass window.
    #[arg(long = "cmax", default_value_t = 0.2)]
    c_max: f64,
    /// Variance growth per annealing rung; default 1 + 1/sqrt(d).
    #[arg(long)]
    schedule_factor: Option<f64>,
    #[arg(long, value_enum, default_value_t = FinalModeArg::Exact)]
    final_mode: FinalModeArg,
    /// Rejection draws per starting-scale probe.
    #[arg(long, default_value_t = 10_000)]
    sigma0_trials: u64,
    /// Samples per tuning pilot.
    #[arg(long, default_value_t = 100)]
    pilot_len: u64,
    /// Velocity refresh rate: 'auto' to tune, or a fixed value.
    #[arg(long, default_value = "auto")]
    lambda_refresh: LambdaRefresh,
}

impl EstimatorArgs {
    fn config(&self) -> EstimatorConfig {
        let mut cfg = EstimatorConfig::new(self.samples, self.seed);
        cfg.c_min = self.c_min;
        cfg.c_max = self.c_max;
        cfg.schedule_factor = self.schedule_factor;
        cfg.final_mode = match self.final_mode {
            FinalModeArg::Flat => FinalMode::FlatApprox,
            FinalModeArg::Exact => FinalMode::ExactRatio,
        };
        cfg.sigma0_trials = self.sigma0_trials;
        cfg.pilot_len = self.pilot_len;
        cfg.lambda_refresh = self.lambda_refresh.0;
        cfg
    }
}

#[derive(Args)]
struct VolumeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[arg(long, default_value_t = 24)]
    repeats: u64,
    /// Worker threads for repeats; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Report destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Built-in model with a known volume: cube, std-simplex, iso-simplex.
    #[arg(long, default_value = "cube")]
    model: String,
    /// Dimensions to benchmark.
    #[arg(long, value_delimiter = ',', default_values_t = vec![50, 70, 100, 140, 175, 250])]
    dims: Vec<usize>,
    /// Starting budget of the search.
    #[arg(long = "n0", default_value_t = 10_000)]
    n0: u64,
    /// Budget cap; the search stops incomplete beyond it.
    #[arg(long, default_value_t = 100_000_000)]
    max_n: u64,
    #[arg(long, default_value_t = 0.04)]
    target_error: f64,
    #[arg(long, default_value_t = 0.01)]
    error_band: f64,
    /// Relative change between tested budgets below which the search exits.
    #[arg(long, default_value_t = 0.05)]
    min_delta: f64,
    #[arg(long, default_value_t = 24)]
    repeats: u64,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Width of the sampled Gaussian.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Velocity refresh rate: 'auto' to tune, or a fixed value.
    #[arg(long, default_value = "auto")]
    lambda_refresh: LambdaRefresh,
    /// Also write every sampler event (time, kind, position) here.
    #[arg(long)]
    event_log: Option<PathBuf>,
    /// Sample destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_out(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_volume(args: &VolumeArgs) -> Result<ExitCode> {
    let (p, info) = args.model.build()?;
    let cfg = args.estimator.config();
    let report = run_volume(&p, &info, &cfg, args.repeats, args.jobs)?;
    let rendered = match args.format {
        Format::Json => volume_report_json(&report),
        Format::Csv => volume_report_csv(&report),
    };
    write_out(args.out.as_deref(), &rendered)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<ExitCode> {
    let make: fn(usize) -> (HPolytope, ModelInfo) = match args.model.as_str() {
        "cube" => make_cube,
        "std-simplex" => make_std_simplex,
        "iso-simplex" => make_iso_simplex,
        other => {
            return Err(Error::InvalidConfig(format!(
                "benchmark supports cube, std-simplex and iso-simplex; got '{other}'"
            )))
        }
    };
    let mut cfg = BenchmarkConfig::new(args.dims.clone());
    cfg.n0 = args.n0;
    cfg.max_n = args.max_n;
    cfg.target_error = args.target_error;
    cfg.error_band = args.error_band;
    cfg.min_delta = args.min_delta;
    cfg.repeats = args.repeats;
    cfg.jobs = args.jobs;
    let base = args.estimator.config();
    let report = run_benchmark(&args.model, make, &cfg, &base)?;
    let rendered = match args.format {
        Format::Json => benchmark_report_json(&report),
        Format::Csv => benchmark_report_csv(&report),
    };
    write_out(args.out.as_deref(), &rendered)?;
    if report.incomplete {
        eprintln!("warning: benchmark incomplete; partial results emitted");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sample(args: &SampleArgs) -> Result<ExitCode> {
    let (p, _info) = args.model.build()?;
    let cfg = SampleConfig {
        sigma: args.sigma,
        samples: args.samples,
        seed: args.seed,
        lambda_refresh: args.lambda_refresh.0,
        event_log: args.event_log.is_some(),
    };
    let out = run_sample(&p, &cfg)?;
    write_out(args.out.as_deref(), &out.samples_csv)?;
    if let (Some(path), Some(log)) = (args.event_log.as_deref(), out.event_log_csv.as_deref()) {
        write_out(Some(path), log)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Volume(args) => cmd_volume(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Sample(args) => cmd_sample(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
