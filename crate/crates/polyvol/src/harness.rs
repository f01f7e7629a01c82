//! Batch runner and machine-readable reports.
//!
//! Three entry points mirror the CLI subcommands: [`run_volume`] executes
//! independent repeats (optionally in parallel) and aggregates them,
//! [`run_benchmark`] binary-searches the sample budget reaching a target
//! accuracy per dimension and fits log-log scaling regressions, and
//! [`run_sample`] exposes the raw sampler as CSV for external plotting.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::bps::{
    run_safeguarded_each, BpsState, EventCounters, GaussianTarget, SamplerParams,
};
use crate::diagnostics::{tune_output_rate, tune_refresh_rate};
use crate::error::{Error, Result};
use crate::polytope::{
    make_cube, make_iso_simplex, make_std_simplex, read_polytope, HPolytope, ModelInfo,
};
use crate::rng::{stream, StreamKind};
use crate::volume::{estimate_volume, EstimatorConfig, VolumeEstimate};

/// Builds a named model. `cube`, `std-simplex` and `iso-simplex` require
/// `dim`; `file:<path>` (or a bare path via [`build_model_from_file`]) loads
/// a constraint file.
pub fn build_model(name: &str, dim: Option<usize>) -> Result<(HPolytope, ModelInfo)> {
    let need_dim = || {
        dim.ok_or_else(|| Error::InvalidConfig(format!("model '{name}' needs a dimension")))
    };
    match name {
        "cube" => Ok(make_cube(need_dim()?)),
        "std-simplex" => Ok(make_std_simplex(need_dim()?)),
        "iso-simplex" => Ok(make_iso_simplex(need_dim()?)),
        other => {
            if let Some(path) = other.strip_prefix("file:") {
                build_model_from_file(Path::new(path))
            } else {
                Err(Error::InvalidConfig(format!(
                    "unknown model '{other}'; expected cube, std-simplex, iso-simplex or file:<path>"
                )))
            }
        }
    }
}

pub fn build_model_from_file(path: &Path) -> Result<(HPolytope, ModelInfo)> {
    read_polytope(path)
}

/// One phase as serialized in reports.
#[derive(Clone, Debug, Serialize)]
pub struct PhaseReport {
    pub sigma: f64,
    #[serde(rename = "N_i")]
    pub n_i: u64,
    pub ess_per_sample: f64,
    pub log_ratio: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NumericsReport {
    #[serde(rename = "M")]
    pub m: u64,
    #[serde(rename = "R")]
    pub r: u64,
}

/// One repeat as serialized in reports.
#[derive(Clone, Debug, Serialize)]
pub struct RepeatReport {
    pub log_volume: f64,
    pub volume_mantissa: f64,
    pub volume_exp10: i32,
    /// `|V_hat - V| / V` when the exact volume is known, else null.
    pub rel_error: Option<f64>,
    pub time_s: f64,
    pub phases: Vec<PhaseReport>,
    pub events: EventCounters,
    pub numerics: NumericsReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct Aggregate {
    pub median_rel_error: Option<f64>,
    pub median_time_s: f64,
    #[serde(rename = "M_total")]
    pub m_total: u64,
    #[serde(rename = "R_total")]
    pub r_total: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub model: String,
    pub dim: usize,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: u64,
    pub repeats: u64,
    pub results: Vec<RepeatReport>,
    pub aggregate: Aggregate,
}

/// Median of a nonempty slice; the even case averages the middle pair.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("median over NaN"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn repeat_report(est: &VolumeEstimate, exact_log_volume: Option<f64>) -> RepeatReport {
    RepeatReport {
        log_volume: est.log_volume,
        volume_mantissa: est.mantissa,
        volume_exp10: est.exp10,
        // In log domain: |exp(delta) - 1| never overflows for sane deltas.
        rel_error: exact_log_volume.map(|lv| ((est.log_volume - lv).exp() - 1.0).abs()),
        time_s: est.total_time,
        phases: est
            .phases
            .iter()
            .map(|ph| PhaseReport {
                sigma: ph.sigma_prev,
                n_i: ph.n_used,
                ess_per_sample: ph.ess_per_sample,
                log_ratio: ph.log_ratio,
            })
            .collect(),
        events: est.events,
        numerics: NumericsReport {
            m: est.numerics.m_count,
            r: est.numerics.r_count,
        },
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool")
            .install(f)
    }
}

/// Runs `repeats` independent estimates on disjoint random streams and
/// aggregates medians and safeguard totals. `jobs = 0` uses the default
/// thread pool; results are identical regardless of scheduling.
pub fn run_volume(
    p: &HPolytope,
    info: &ModelInfo,
    cfg: &EstimatorConfig,
    repeats: u64,
    jobs: usize,
) -> Result<RunReport> {
    assert!(repeats >= 1);
    let estimates: Vec<VolumeEstimate> = with_pool(jobs, || {
        (0..repeats)
            .into_par_iter()
            .map(|rep| {
                let mut c = cfg.clone();
                c.repeat = rep;
                estimate_volume(p, info, &c)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let results: Vec<RepeatReport> = estimates
        .iter()
        .map(|e| repeat_report(e, info.log_volume))
        .collect();
    let aggregate = aggregate_results(&results);
    Ok(RunReport {
        model: info.name.clone(),
        dim: p.dim(),
        seed: cfg.seed,
        n: cfg.total_budget,
        repeats,
        results,
        aggregate,
    })
}

/// Aggregation is a pure function of the per-repeat records, so it can be
/// recomputed from a serialized report bit-for-bit.
pub fn aggregate_results(results: &[RepeatReport]) -> Aggregate {
    let times: Vec<f64> = results.iter().map(|r| r.time_s).collect();
    let errs: Vec<f64> = results.iter().filter_map(|r| r.rel_error).collect();
    Aggregate {
        median_rel_error: if errs.len() == results.len() && !errs.is_empty() {
            Some(median(&errs))
        } else {
            None
        },
        median_time_s: median(&times),
        m_total: results.iter().map(|r| r.numerics.m).sum(),
        r_total: results.iter().map(|r| r.numerics.r).sum(),
    }
}

pub fn volume_report_json(report: &RunReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialization")
}

/// Flat CSV: one row per repeat. The variable-length phase list stays in
/// the JSON form; CSV carries its length only.
pub fn volume_report_csv(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str(
        "model,dim,seed,N,repeats,repeat,log_volume,volume_mantissa,volume_exp10,rel_error,time_s,n_phases,bounces,reflections,refreshes,outputs,M,R\n",
    );
    for (i, r) in report.results.iter().enumerate() {
        let rel = r.rel_error.map(|e| e.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            report.model,
            report.dim,
            report.seed,
            report.n,
            report.repeats,
            i,
            r.log_volume,
            r.volume_mantissa,
            r.volume_exp10,
            rel,
            r.time_s,
            r.phases.len(),
            r.events.bounces,
            r.events.reflections,
            r.events.refreshes,
            r.events.outputs,
            r.numerics.m,
            r.numerics.r,
        );
    }
    out
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fits `ln y = intercept + slope * ln x`; needs two distinct points.
pub fn log_log_regression(xs: &[f64], ys: &[f64]) -> Option<Regression> {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let syy: f64 = ly.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let fit = intercept + slope * x;
            (y - fit) * (y - fit)
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Some(Regression { slope, intercept, r2 })
}

/// Outcome of the budget search at one dimension.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    /// Chosen budget: in-band if converged, otherwise the smallest tested
    /// budget reaching the target.
    pub n: u64,
    pub err: f64,
    /// Every `(N, err)` evaluation in order.
    pub evals: Vec<(u64, f64)>,
    pub converged: bool,
}

/// Binary search for the smallest budget whose error lands in
/// `target +- band`, assuming error decreases in `N`. Doubles from `n0`
/// until the error drops below `target + band`, halves if already below
/// `target - band`, then bisects; also exits when successive tested budgets
/// differ by less than `min_delta` relative, returning the best known
/// in-target budget.
pub fn binary_search_n(
    n0: u64,
    target: f64,
    band: f64,
    min_delta: f64,
    max_n: u64,
    mut eval: impl FnMut(u64) -> f64,
) -> SearchOutcome {
    assert!(n0 >= 1 && n0 <= max_n);
    assert!(band > 0.0 && band < target);
    let mut evals: Vec<(u64, f64)> = Vec::new();
    let in_band = |e: f64| e >= target - band && e <= target + band;
    let mut probe = |n: u64, evals: &mut Vec<(u64, f64)>| -> f64 {
        let e = eval(n);
        evals.push((n, e));
        e
    };

    let mut n = n0;
    let mut e = probe(n, &mut evals);
    if in_band(e) {
        return SearchOutcome { n, err: e, evals, converged: true };
    }

    // Expansion: establish lo (error above band) < hi (error below band).
    let (mut lo, mut hi, mut e_hi);
    if e > target + band {
        loop {
            if n >= max_n {
                return SearchOutcome { n, err: e, evals, converged: false };
            }
            let next = (n * 2).min(max_n);
            let en = probe(next, &mut evals);
            if in_band(en) {
                return SearchOutcome { n: next, err: en, evals, converged: true };
            }
            if en < target - band {
                (lo, hi, e_hi) = (n, next, en);
                break;
            }
            n = next;
            e = en;
        }
    } else {
        // Error already below band at n0: shrink.
        loop {
            if n <= 1 {
                return SearchOutcome { n, err: e, evals, converged: true };
            }
            let next = (n / 2).max(1);
            let en = probe(next, &mut evals);
            if in_band(en) {
                return SearchOutcome { n: next, err: en, evals, converged: true };
            }
            if en > target + band {
                (lo, hi, e_hi) = (next, n, e);
                break;
            }
            n = next;
            e = en;
        }
    }

    let mut last = evals.last().unwrap().0;
    loop {
        let mid = lo + (hi - lo) / 2;
        if mid == lo || mid == hi {
            return SearchOutcome { n: hi, err: e_hi, evals, converged: true };
        }
        let rel = (mid as f64 - last as f64).abs() / last as f64;
        if rel < min_delta {
            return SearchOutcome { n: hi, err: e_hi, evals, converged: true };
        }
        let em = probe(mid, &mut evals);
        last = mid;
        if in_band(em) {
            return SearchOutcome { n: mid, err: em, evals, converged: true };
        }
        if em > target + band {
            lo = mid;
        } else {
            hi = mid;
            e_hi = em;
        }
    }
}

/// Benchmark knobs; the CLI supplies a default dimension ramp.
#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub dims: Vec<usize>,
    pub n0: u64,
    pub max_n: u64,
    pub target_error: f64,
    pub error_band: f64,
    pub min_delta: f64,
    pub repeats: u64,
    pub jobs: usize,
}

impl BenchmarkConfig {
    pub fn new(dims: Vec<usize>) -> Self {
        Self {
            dims,
            n0: 10_000,
            max_n: 100_000_000,
            target_error: 0.04,
            error_band: 0.01,
            min_delta: 0.05,
            repeats: 24,
            jobs: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkRecord {
    pub dim: usize,
    #[serde(rename = "N_final")]
    pub n_final: u64,
    pub median_rel_error: f64,
    pub median_time_s: f64,
    pub log_volumes: Vec<f64>,
    #[serde(rename = "M_total")]
    pub m_total: u64,
    #[serde(rename = "R_total")]
    pub r_total: u64,
    pub search_evals: Vec<(u64, f64)>,
    pub complete: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkReport {
    pub model: String,
    pub seed: u64,
    pub target_error: f64,
    pub error_band: f64,
    pub records: Vec<BenchmarkRecord>,
    /// Fit of median time against dimension, log-log.
    pub time_regression: Option<Regression>,
    /// Fit of final budget against dimension, log-log.
    pub n_regression: Option<Regression>,
    pub incomplete: bool,
}

/// Per dimension, binary-searches the budget until the repeat-median error
/// lands in the target band, then fits scaling regressions across the
/// completed dimensions. The model must have a known volume.
pub fn run_benchmark(
    model_name: &str,
    make: impl Fn(usize) -> (HPolytope, ModelInfo),
    cfg: &BenchmarkConfig,
    base: &EstimatorConfig,
) -> Result<BenchmarkReport> {
    assert!(!cfg.dims.is_empty(), "benchmark needs at least one dimension");
    let mut records = Vec::new();
    let mut incomplete = false;
    for &d in &cfg.dims {
        let (p, info) = make(d);
        if info.log_volume.is_none() {
            return Err(Error::InvalidConfig(format!(
                "benchmark needs a model with known volume; '{}' has none",
                info.name
            )));
        }
        // Cache the full report of every probed budget so the final record
        // reuses the winning run instead of repeating it. A budget too small
        // to cover the phase count scores an infinite error, steering the
        // search upward; any other failure aborts.
        let mut reports: Vec<(u64, RunReport)> = Vec::new();
        let mut fatal: Option<Error> = None;
        let outcome = {
            let reports = &mut reports;
            let fatal = &mut fatal;
            binary_search_n(cfg.n0, cfg.target_error, cfg.error_band, cfg.min_delta, cfg.max_n, |n| {
                if fatal.is_some() {
                    return f64::INFINITY;
                }
                let mut c = base.clone();
                c.total_budget = n;
                match run_volume(&p, &info, &c, cfg.repeats, cfg.jobs) {
                    Ok(report) => {
                        let err = report
                            .aggregate
                            .median_rel_error
                            .expect("benchmark model has exact volume");
                        reports.push((n, report));
                        err
                    }
                    Err(Error::BudgetTooSmall { .. }) => f64::INFINITY,
                    Err(e) => {
                        *fatal = Some(e);
                        f64::INFINITY
                    }
                }
            })
        };
        if let Some(e) = fatal {
            return Err(e);
        }
        let winner = reports.iter().find(|(n, _)| *n == outcome.n).map(|(_, rep)| rep);
        records.push(BenchmarkRecord {
            dim: d,
            n_final: outcome.n,
            median_rel_error: outcome.err,
            median_time_s: winner.map_or(f64::NAN, |w| w.aggregate.median_time_s),
            log_volumes: winner
                .map_or_else(Vec::new, |w| w.results.iter().map(|r| r.log_volume).collect()),
            m_total: winner.map_or(0, |w| w.aggregate.m_total),
            r_total: winner.map_or(0, |w| w.aggregate.r_total),
            search_evals: outcome.evals.clone(),
            complete: outcome.converged && winner.is_some(),
        });
        incomplete |= !outcome.converged || winner.is_none();
    }

    let dims_f: Vec<f64> = records.iter().map(|r| r.dim as f64).collect();
    let times: Vec<f64> = records.iter().map(|r| r.median_time_s).collect();
    let budgets: Vec<f64> = records.iter().map(|r| r.n_final as f64).collect();
    Ok(BenchmarkReport {
        model: model_name.to_string(),
        seed: base.seed,
        target_error: cfg.target_error,
        error_band: cfg.error_band,
        records: records.clone(),
        time_regression: log_log_regression(&dims_f, &times),
        n_regression: log_log_regression(&dims_f, &budgets),
        incomplete,
    })
}

pub fn benchmark_report_json(report: &BenchmarkReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialization")
}

pub fn benchmark_report_csv(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    out.push_str("model,dim,N_final,median_rel_error,median_time_s,M_total,R_total,complete\n");
    for r in &report.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            report.model,
            r.dim,
            r.n_final,
            r.median_rel_error,
            r.median_time_s,
            r.m_total,
            r.r_total,
            r.complete,
        );
    }
    out
}

/// Raw-sampler run configuration.
#[derive(Clone, Debug)]
pub struct SampleConfig {
    pub sigma: f64,
    pub samples: u64,
    pub seed: u64,
    /// Fixed refresh rate, or `None` to tune automatically.
    pub lambda_refresh: Option<f64>,
    pub event_log: bool,
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    /// Header `x0,...,x{d-1}` then one row per sample.
    pub samples_csv: String,
    /// Header `time,kind,x0,...`; one row per executed event.
    pub event_log_csv: Option<String>,
    pub events: EventCounters,
}

fn csv_point(row: &mut String, x: &[f64]) {
    for (i, c) in x.iter().enumerate() {
        if i > 0 {
            row.push(',');
        }
        let _ = write!(row, "{c}");
    }
}

/// Streams samples from the Gaussian at `sigma` restricted to the polytope.
/// Without an event log the safeguarded runner is used; with one, a raw
/// event loop records every bounce, reflection, refresh and output.
pub fn run_sample(p: &HPolytope, cfg: &SampleConfig) -> Result<SampleOutput> {
    if !(cfg.sigma > 0.0 && cfg.sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sigma must be positive and finite, got {}",
            cfg.sigma
        )));
    }
    let target = GaussianTarget::from_sigma(cfg.sigma);
    let mut tstate = BpsState::with_origin(p, stream(cfg.seed, StreamKind::Tuning, 0, 0));
    let initial_refresh = cfg.lambda_refresh.unwrap_or(1.0);
    let lambda_out = tune_output_rate(&mut tstate, p, &target, initial_refresh);
    let refresh = match cfg.lambda_refresh {
        Some(r) => r,
        None => tune_refresh_rate(&mut tstate, p, &target, initial_refresh, lambda_out, 100).0,
    };
    let params = SamplerParams::new(p, refresh, lambda_out);

    let mut state = BpsState::new(p, tstate.x(), stream(cfg.seed, StreamKind::Production, 0, 0));
    let mut samples_csv = String::new();
    for i in 0..p.dim() {
        if i > 0 {
            samples_csv.push(',');
        }
        let _ = write!(samples_csv, "x{i}");
    }
    samples_csv.push('\n');

    let event_log_csv = if cfg.event_log {
        let mut log = String::from("time,kind");
        for i in 0..p.dim() {
            let _ = write!(log, ",x{i}");
        }
        log.push('\n');
        let mut outputs = 0u64;
        let mut steps = 0u64;
        while outputs < cfg.samples {
            let ev = state.step(p, &target, &params);
            steps += 1;
            // Raw loop: no verified outputs, so impose the rebuild cadence.
            if steps.is_multiple_of(crate::bps::RAW_REBUILD_INTERVAL) {
                state.rebuild_caches(p);
            }
            let kind = match ev {
                crate::bps::Event::Bounce => "bounce",
                crate::bps::Event::Reflect(_) => "reflect",
                crate::bps::Event::Refresh => "refresh",
                crate::bps::Event::Output => "output",
            };
            let _ = write!(log, "{},{kind},", state.time());
            csv_point(&mut log, state.x());
            log.push('\n');
            if ev == crate::bps::Event::Output {
                csv_point(&mut samples_csv, state.x());
                samples_csv.push('\n');
                outputs += 1;
            }
        }
        Some(log)
    } else {
        run_safeguarded_each(&mut state, p, &target, &params, cfg.samples, |_, st| {
            csv_point(&mut samples_csv, st.x());
            samples_csv.push('\n');
        });
        None
    };

    Ok(SampleOutput {
        samples_csv,
        event_log_csv,
        events: state.counters(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::write_polytope;

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn regression_recovers_exact_power_law() {
        // y = 3 x^2.5 in log-log is an exact line.
        let xs: Vec<f64> = vec![2.0, 4.0, 8.0, 16.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(2.5)).collect();
        let reg = log_log_regression(&xs, &ys).unwrap();
        assert!((reg.slope - 2.5).abs() < 1e-10);
        assert!((reg.intercept - 3f64.ln()).abs() < 1e-10);
        assert!((reg.r2 - 1.0).abs() < 1e-12);
        assert!(log_log_regression(&xs[..1], &ys[..1]).is_none());
    }

    #[test]
    fn budget_search_inverts_synthetic_error_curve() {
        // err(N) = c / sqrt(N) crosses 4% at N = 47_000.
        let c = 0.04 * 47_000f64.sqrt();
        let eval = |n: u64| c / (n as f64).sqrt();
        let out = binary_search_n(10_000, 0.04, 0.002, 0.001, 1 << 40, eval);
        assert!(out.converged);
        // Analytic in-band window for err in [0.038, 0.042].
        let n_lo = (c / 0.042).powi(2);
        let n_hi = (c / 0.038).powi(2);
        assert!(
            (n_lo..=n_hi).contains(&(out.n as f64)),
            "returned N {} outside [{n_lo}, {n_hi}]",
            out.n
        );
        assert!((out.err - c / (out.n as f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn budget_search_shrinks_when_start_overshoots() {
        let c = 0.04 * 2_000f64.sqrt();
        let eval = |n: u64| c / (n as f64).sqrt();
        let out = binary_search_n(100_000, 0.04, 0.002, 0.001, 1 << 40, eval);
        assert!(out.converged);
        let n_lo = (c / 0.042).powi(2);
        let n_hi = (c / 0.038).powi(2);
        assert!((n_lo..=n_hi).contains(&(out.n as f64)), "N {}", out.n);
    }

    #[test]
    fn budget_search_exits_on_small_relative_change() {
        let c = 0.04 * 47_000f64.sqrt();
        let eval = |n: u64| c / (n as f64).sqrt();
        let out = binary_search_n(10_000, 0.04, 0.002, 0.5, 1 << 40, eval);
        assert!(out.converged);
        // The wide delta threshold stops bisection immediately; the doubling
        // phase ended at 80_000, the first budget below the band.
        assert_eq!(out.n, 80_000);
    }

    #[test]
    fn budget_search_reports_cap_exhaustion() {
        let eval = |_n: u64| 0.5;
        let out = binary_search_n(1_000, 0.04, 0.01, 0.05, 8_000, eval);
        assert!(!out.converged);
        assert_eq!(out.n, 8_000);
    }

    #[test]
    fn budget_search_climbs_out_of_failing_budgets() {
        // Budgets below 1000 fail outright (infinite error), as when the
        // estimator cannot cover its phases; the search must recover.
        let c = 0.04 * 47_000f64.sqrt();
        let eval = |n: u64| if n < 1000 { f64::INFINITY } else { c / (n as f64).sqrt() };
        let out = binary_search_n(100, 0.04, 0.002, 0.001, 1 << 40, eval);
        assert!(out.converged);
        let n_lo = (c / 0.042).powi(2);
        let n_hi = (c / 0.038).powi(2);
        assert!((n_lo..=n_hi).contains(&(out.n as f64)), "N {}", out.n);
    }

    #[test]
    fn volume_report_matches_published_schema() {
        let (p, info) = make_cube(2);
        let cfg = EstimatorConfig::new(3_000, 7);
        let report = run_volume(&p, &info, &cfg, 2, 1).unwrap();
        let value = serde_json::to_value(&report).unwrap();

        let keys = |v: &serde_json::Value| -> Vec<String> {
            v.as_object().unwrap().keys().cloned().collect()
        };
        assert_eq!(
            keys(&value),
            ["N", "aggregate", "dim", "model", "repeats", "results", "seed"]
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
        );
        let result = &value["results"][0];
        assert_eq!(
            keys(result),
            [
                "events",
                "log_volume",
                "numerics",
                "phases",
                "rel_error",
                "time_s",
                "volume_exp10",
                "volume_mantissa"
            ]
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
        );
        assert_eq!(
            keys(&result["phases"][0]),
            ["N_i", "ess_per_sample", "log_ratio", "sigma"]
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
        );
        assert_eq!(
            keys(&result["events"]),
            ["bounces", "outputs", "reflections", "refreshes"]
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
        );
        assert_eq!(keys(&result["numerics"]), vec!["M", "R"]);
        assert_eq!(
            keys(&value["aggregate"]),
            ["M_total", "R_total", "median_rel_error", "median_time_s"]
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
        );

        // Aggregates recompute bit-for-bit from the per-repeat records.
        let again = aggregate_results(&report.results);
        assert_eq!(
            again.median_rel_error.unwrap().to_bits(),
            report.aggregate.median_rel_error.unwrap().to_bits()
        );
        assert_eq!(again.m_total, report.aggregate.m_total);
    }

    #[test]
    fn csv_report_has_header_and_expected_rows() {
        let (p, info) = make_cube(2);
        let cfg = EstimatorConfig::new(2_000, 8);
        let report = run_volume(&p, &info, &cfg, 3, 1).unwrap();
        let csv = volume_report_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("model,dim,seed,N,repeats,repeat,log_volume"));
        for (i, line) in lines[1..].iter().enumerate() {
            assert!(
                line.starts_with(&format!("cube(2),2,8,2000,3,{i},")),
                "row {i}: {line}"
            );
        }
    }

    #[test]
    fn parallel_and_serial_repeats_agree() {
        let (p, info) = make_cube(3);
        let cfg = EstimatorConfig::new(3_000, 9);
        let serial = run_volume(&p, &info, &cfg, 3, 1).unwrap();
        let parallel = run_volume(&p, &info, &cfg, 3, 3).unwrap();
        for (a, b) in serial.results.iter().zip(&parallel.results) {
            assert_eq!(a.log_volume.to_bits(), b.log_volume.to_bits());
        }
    }

    #[test]
    fn model_builder_covers_all_names() {
        assert!(build_model("cube", Some(4)).is_ok());
        assert!(build_model("std-simplex", Some(4)).is_ok());
        assert!(build_model("iso-simplex", Some(4)).is_ok());
        assert!(build_model("cube", None).is_err());
        assert!(build_model("dodecahedron", Some(3)).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("square.poly");
        let (p, _) = make_cube(2);
        write_polytope(&p, &path).unwrap();
        let (q, info) = build_model(&format!("file:{}", path.display()), None).unwrap();
        assert_eq!(q, p);
        assert!(info.name.starts_with("file:"));
    }

    #[test]
    fn benchmark_smoke_on_tiny_model() {
        // Band wide enough that the very first budget is accepted.
        let mut cfg = BenchmarkConfig::new(vec![2, 3]);
        cfg.n0 = 2_000;
        cfg.repeats = 3;
        cfg.jobs = 1;
        cfg.target_error = 0.5;
        cfg.error_band = 0.499;
        let base = EstimatorConfig::new(2_000, 10);
        let report = run_benchmark("cube", make_cube, &cfg, &base).unwrap();
        assert_eq!(report.records.len(), 2);
        assert!(!report.incomplete);
        assert!(report.time_regression.is_some());
        assert!(report.n_regression.is_some());
        for r in &report.records {
            assert_eq!(r.n_final, 2_000);
            assert!(r.complete);
            assert_eq!(r.log_volumes.len(), 3);
        }
        let csv = benchmark_report_csv(&report);
        assert!(csv.starts_with("model,dim,N_final"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn sample_stream_stays_inside_and_logs_event_kinds() {
        let (p, _) = make_cube(2);
        let cfg = SampleConfig {
            sigma: 1.0,
            samples: 300,
            seed: 11,
            lambda_refresh: None,
            event_log: true,
        };
        let out = run_sample(&p, &cfg).unwrap();
        let lines: Vec<&str> = out.samples_csv.lines().collect();
        assert_eq!(lines[0], "x0,x1");
        assert_eq!(lines.len(), 301);
        for line in &lines[1..] {
            let coords: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            assert!(p.contains(&coords, 1e-9));
        }

        let log = out.event_log_csv.unwrap();
        let mut kinds = std::collections::BTreeSet::new();
        for line in log.lines().skip(1) {
            kinds.insert(line.split(',').nth(1).unwrap().to_string());
        }
        assert!(kinds.contains("output"));
        for k in &kinds {
            assert!(
                ["bounce", "reflect", "refresh", "output"].contains(&k.as_str()),
                "unexpected kind {k}"
            );
        }
        assert_eq!(out.events.outputs, 300);
    }

    #[test]
    fn sample_coordinate_means_vanish_on_symmetric_model() {
        let (p, _) = make_cube(2);
        let cfg = SampleConfig {
            sigma: 1.0,
            samples: 20_000,
            seed: 12,
            lambda_refresh: Some(1.0),
            event_log: false,
        };
        let out = run_sample(&p, &cfg).unwrap();
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        let mut n = 0u64;
        for line in out.samples_csv.lines().skip(1) {
            for (i, v) in line.split(',').enumerate() {
                let c: f64 = v.parse().unwrap();
                sums[i] += c;
                sq[i] += c * c;
            }
            n += 1;
        }
        assert_eq!(n, 20_000);
        for i in 0..2 {
            let mean = sums[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            // Correlated series; allow a generous multiple of the iid SE.
            let se = (var / n as f64).sqrt();
            assert!(mean.abs() <= 10.0 * se, "coordinate {i} mean {mean}");
        }
    }
}
