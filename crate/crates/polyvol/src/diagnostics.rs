//! Effective sample size and automatic rate tuning.
//!
//! The output clock is set so that roughly `d` sampler events separate
//! consecutive samples. The refresh rate is then hill-climbed on pilot runs:
//! the imbalance between the worst per-coordinate ESS and the ESS of the
//! radius series picks the direction, and a proposal is kept only when ESS
//! per unit of sampler work improves. Work is a deterministic operation
//! count, not wall time, so tuning decisions (and therefore entire runs) are
//! reproducible; wall time is still measured and reported.

use std::time::Instant;

use crate::bps::{
    run_safeguarded_each, BpsState, EventCounters, GaussianTarget, SamplerParams,
    RAW_REBUILD_INTERVAL,
};
use crate::error::{Error, Result};
use crate::polytope::HPolytope;

/// Bounds and step factor of the refresh-rate search.
pub const REFRESH_RATE_MIN: f64 = 1e-3;
pub const REFRESH_RATE_MAX: f64 = 1e3;
pub const REFRESH_STEP_FACTOR: f64 = 1.5;
pub const REFRESH_MAX_ITERS: usize = 10;

/// Events in the output-rate probe.
pub const OUTPUT_PROBE_EVENTS: u64 = 1000;

/// Mixing summary of a pilot run.
#[derive(Clone, Copy, Debug)]
pub struct EssReport {
    /// Minimum ESS over the `d` coordinate projection series.
    pub ess_min: f64,
    /// ESS of the series of norms `|x_j|`.
    pub ess_norm: f64,
    /// `min(ess_min, ess_norm) / n`.
    pub ess_per_sample: f64,
    /// Seconds spent generating the evaluated samples.
    pub wall_time: f64,
}

/// A pilot's report plus its deterministic work count, the denominator for
/// tuning decisions.
#[derive(Clone, Copy, Debug)]
pub struct PilotOutcome {
    pub report: EssReport,
    pub work: f64,
}

impl PilotOutcome {
    fn efficiency(&self) -> f64 {
        self.report.ess_min.min(self.report.ess_norm) / self.work
    }
}

/// Column-accessible store of `n` samples in `R^d`, row-major.
#[derive(Clone, Debug)]
pub struct SampleSeries {
    dim: usize,
    data: Vec<f64>,
}

impl SampleSeries {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        Self { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        assert!(dim >= 1);
        Self {
            dim,
            data: Vec::with_capacity(n * dim),
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim);
        self.data.extend_from_slice(x);
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coord_series(&self, j: usize) -> Vec<f64> {
        assert!(j < self.dim);
        self.data.iter().skip(j).step_by(self.dim).copied().collect()
    }

    pub fn norm_series(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.row(i).iter().map(|c| c * c).sum::<f64>().sqrt())
            .collect()
    }
}

/// Effective sample size `n / (1 + 2 sum_t rho_t)` with the autocorrelation
/// sum truncated by the initial-monotone-positive-pair rule: consecutive
/// pairs `rho_{2m} + rho_{2m+1}` are accumulated while positive, clamped to
/// be non-increasing. The result is clamped to `[1, n]`.
pub fn ess(series: &[f64]) -> Result<f64> {
    let n = series.len();
    assert!(n >= 8, "ESS needs at least 8 points, got {n}");
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let c0 = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / nf;
    if c0 == 0.0 {
        return Err(Error::ZeroVariance);
    }

    let acorr = |t: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n - t {
            s += (series[i] - mean) * (series[i + t] - mean);
        }
        s / nf / c0
    };

    let t_max = n / 2;
    let mut pair_sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t < t_max {
        let gamma = if t == 0 { 1.0 + acorr(1) } else { acorr(t) + acorr(t + 1) };
        if gamma <= 0.0 {
            break;
        }
        let gamma = gamma.min(prev);
        prev = gamma;
        pair_sum += gamma;
        t += 2;
    }
    let tau = (2.0 * pair_sum - 1.0).max(1e-12);
    Ok((nf / tau).clamp(1.0, nf))
}

/// ESS summary of a sample matrix: per-coordinate minimum and the norm
/// series. A single constant coordinate counts as ESS 1 (worst case); a
/// series that is constant in every coordinate is an error.
pub fn ess_report(series: &SampleSeries, wall_time: f64) -> Result<EssReport> {
    let n = series.len();
    let mut ess_min = f64::INFINITY;
    let mut all_constant = true;
    for j in 0..series.dim() {
        match ess(&series.coord_series(j)) {
            Ok(e) => {
                all_constant = false;
                ess_min = ess_min.min(e);
            }
            Err(Error::ZeroVariance) => ess_min = ess_min.min(1.0),
            Err(e) => return Err(e),
        }
    }
    if all_constant {
        return Err(Error::ZeroVariance);
    }
    let ess_norm = match ess(&series.norm_series()) {
        Ok(e) => e,
        Err(Error::ZeroVariance) => 1.0,
        Err(e) => return Err(e),
    };
    Ok(EssReport {
        ess_min,
        ess_norm,
        ess_per_sample: (ess_min.min(ess_norm) / n as f64).clamp(f64::MIN_POSITIVE, 1.0),
        wall_time,
    })
}

/// Deterministic cost of a stretch of sampling: O(k) per bounce/reflection,
/// O(k d) per refresh (dense `Av`) and per output (dense verification).
pub fn work_units(delta: EventCounters, dim: usize, nrows: usize) -> f64 {
    let k = nrows as f64;
    let kd = k * dim as f64;
    (delta.bounces + delta.reflections) as f64 * k + (delta.refreshes + delta.outputs) as f64 * kd
}

/// Measures the event rate (bounces + reflections per unit time) over a
/// probe of at least [`OUTPUT_PROBE_EVENTS`] events and returns the output
/// rate placing on average `d` events between samples: `lambda_out = rate/d`.
/// A degenerate probe with no events falls back to 1.
pub fn tune_output_rate(
    state: &mut BpsState,
    p: &HPolytope,
    target: &GaussianTarget,
    lambda_refresh: f64,
) -> f64 {
    let mut params = SamplerParams::new(p, lambda_refresh, 1.0);
    // Outputs are irrelevant here; push the clock out of the way.
    params.lambda_out = 1e-12;
    let c0 = state.counters();
    let t0 = state.time();
    let mut segments: u64 = 0;
    let segment_cap = OUTPUT_PROBE_EVENTS * 50 + 1000;
    while segments < segment_cap {
        state.step(p, target, &params);
        segments += 1;
        // With the output clock parked there are no verified outputs, so
        // the probe must impose the rebuild cadence itself; left alone the
        // cache drift compounds and the scan can miss a facet crossing.
        if segments.is_multiple_of(RAW_REBUILD_INTERVAL) {
            state.rebuild_caches(p);
        }
        let d = state.counters().since(c0);
        if d.bounces + d.reflections >= OUTPUT_PROBE_EVENTS {
            break;
        }
    }
    state.rebuild_caches(p);
    let delta = state.counters().since(c0);
    let events = delta.bounces + delta.reflections;
    let span = state.time() - t0;
    if events == 0 || !(span > 0.0) {
        return 1.0;
    }
    (events as f64 / span) / p.dim() as f64
}

/// One step of the refresh-rate search: the proposal direction from the
/// ESS imbalance, acceptance from ESS per work unit. Exposed generically so
/// the policy can be exercised against synthetic samplers.
pub fn refresh_hill_climb(
    initial: f64,
    mut eval: impl FnMut(f64) -> PilotOutcome,
) -> (f64, EssReport) {
    let mut rate = initial.clamp(REFRESH_RATE_MIN, REFRESH_RATE_MAX);
    let mut current = eval(rate);
    for _ in 0..REFRESH_MAX_ITERS {
        let proposal = if current.report.ess_min > current.report.ess_norm {
            rate * REFRESH_STEP_FACTOR
        } else {
            rate / REFRESH_STEP_FACTOR
        }
        .clamp(REFRESH_RATE_MIN, REFRESH_RATE_MAX);
        if proposal == rate {
            break;
        }
        let candidate = eval(proposal);
        if candidate.efficiency() > current.efficiency() {
            rate = proposal;
            current = candidate;
        } else {
            break;
        }
    }
    (rate, current.report)
}

/// Tunes the refresh rate by pilot runs of `pilot_len` samples on `state`
/// (which advances; the chain stays warm). Stops on the first rejected
/// proposal; worst case returns the clamped initial rate.
pub fn tune_refresh_rate(
    state: &mut BpsState,
    p: &HPolytope,
    target: &GaussianTarget,
    initial: f64,
    lambda_out: f64,
    pilot_len: u64,
) -> (f64, EssReport) {
    assert!(pilot_len >= 50, "pilot length must be at least 50");
    refresh_hill_climb(initial, |rate| {
        run_pilot(state, p, target, rate, lambda_out, pilot_len)
    })
}

/// Runs one pilot and summarises it. A pilot whose series defeats the ESS
/// estimator entirely (frozen chain) scores worst rather than erroring.
pub fn run_pilot(
    state: &mut BpsState,
    p: &HPolytope,
    target: &GaussianTarget,
    lambda_refresh: f64,
    lambda_out: f64,
    pilot_len: u64,
) -> PilotOutcome {
    let params = SamplerParams::new(p, lambda_refresh, lambda_out);
    let c0 = state.counters();
    let start = Instant::now();
    let mut series = SampleSeries::with_capacity(p.dim(), pilot_len as usize);
    run_safeguarded_each(state, p, target, &params, pilot_len, |_, s| {
        series.push(s.x());
    });
    let wall_time = start.elapsed().as_secs_f64();
    let work = work_units(state.counters().since(c0), p.dim(), p.nrows()).max(1.0);
    let report = match ess_report(&series, wall_time) {
        Ok(r) => r,
        Err(_) => EssReport {
            ess_min: 1.0,
            ess_norm: 1.0,
            ess_per_sample: 1.0 / pilot_len as f64,
            wall_time,
        },
    };
    PilotOutcome { report, work }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::make_cube;
    use crate::rng::{stream, StreamKind};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn ess_of_iid_series_is_near_n() {
        let mut rng = stream(11, StreamKind::Tuning, 0, 0);
        let n = 10_000;
        let series: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let e = ess(&series).unwrap();
        let ratio = e / n as f64;
        assert!((0.8..=1.2).contains(&ratio), "iid ESS/n = {ratio}");
    }

    #[test]
    fn ess_of_ar1_matches_analytic_value() {
        let mut rng = stream(12, StreamKind::Tuning, 0, 0);
        let n = 100_000;
        let rho: f64 = 0.5;
        let innov = (1.0 - rho * rho).sqrt();
        let mut x = 0.0;
        let series: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = rho * x + innov * z;
                x
            })
            .collect();
        let e = ess(&series).unwrap();
        let ratio = e / n as f64;
        let expect = (1.0 - rho) / (1.0 + rho);
        assert!(
            (ratio - expect).abs() <= 0.2 * expect,
            "AR(1) ESS/n = {ratio}, expected about {expect}"
        );
    }

    #[test]
    fn duplicated_series_does_not_double_ess() {
        let mut rng = stream(13, StreamKind::Tuning, 0, 0);
        let single: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut doubled = single.clone();
        doubled.extend_from_slice(&single);
        let e1 = ess(&single).unwrap();
        let e2 = ess(&doubled).unwrap();
        assert!(e2 < 2.0 * e1, "duplication must not double ESS: {e1} -> {e2}");
    }

    #[test]
    fn constant_series_is_an_error() {
        assert!(matches!(ess(&[2.5; 100]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn ess_is_affine_invariant() {
        let mut rng = stream(14, StreamKind::Tuning, 0, 0);
        let mut x = 0.0;
        let series: Vec<f64> = (0..5000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = 0.7 * x + z;
                x
            })
            .collect();
        let mapped: Vec<f64> = series.iter().map(|v| -3.25 * v + 11.0).collect();
        let a = ess(&series).unwrap();
        let b = ess(&mapped).unwrap();
        assert!((a - b).abs() <= 1e-9 * a, "affine map changed ESS: {a} vs {b}");
    }

    fn synthetic_outcome(rate: f64, peak: f64) -> PilotOutcome {
        // Unimodal in log-rate with the min/norm imbalance crossing at the
        // peak, mimicking an under- or over-refreshed sampler.
        let base = (-0.5 * (rate / peak).ln().powi(2)).exp();
        PilotOutcome {
            report: EssReport {
                ess_min: 100.0 * (peak / rate).min(1.0) * base,
                ess_norm: 100.0 * (rate / peak).min(1.0) * base,
                ess_per_sample: 1.0,
                wall_time: 0.0,
            },
            work: 1.0,
        }
    }

    #[test]
    fn hill_climb_finds_lattice_local_optimum() {
        let peak = 4.0;
        let (rate, _) = refresh_hill_climb(1.0, |r| synthetic_outcome(r, peak));
        // Local optimality on the gamma-lattice reachable from 1.0.
        let eff = |r: f64| {
            let o = synthetic_outcome(r, peak);
            o.report.ess_min.min(o.report.ess_norm) / o.work
        };
        assert!(eff(rate) >= eff(rate * REFRESH_STEP_FACTOR));
        assert!(eff(rate) >= eff(rate / REFRESH_STEP_FACTOR));
        assert!(rate > 1.0, "climb should have moved towards the peak");
    }

    #[test]
    fn hill_climb_rejecting_first_proposal_keeps_initial() {
        let mut calls = 0;
        let (rate, _) = refresh_hill_climb(1.0, |r| {
            calls += 1;
            // Efficiency strictly decreasing away from the initial rate.
            let base = (-((r / 1.0).ln().abs())).exp();
            PilotOutcome {
                report: EssReport {
                    ess_min: base,
                    ess_norm: 2.0 * base,
                    ess_per_sample: 1.0,
                    wall_time: 0.0,
                },
                work: 1.0,
            }
        });
        assert_eq!(rate, 1.0);
        assert_eq!(calls, 2, "one evaluation plus one rejected proposal");
    }

    #[test]
    fn hill_climb_respects_rate_bounds() {
        let (rate, _) = refresh_hill_climb(1e9, |r| synthetic_outcome(r, 1e12));
        assert!(rate <= REFRESH_RATE_MAX);
        let (rate, _) = refresh_hill_climb(1e-9, |r| synthetic_outcome(r, 1e-12));
        assert!(rate >= REFRESH_RATE_MIN);
    }

    #[test]
    fn tuned_output_rate_spaces_events_per_sample() {
        let (p, _) = make_cube(5);
        let target = crate::bps::GaussianTarget::from_sigma(1.0);
        let mut st = crate::bps::BpsState::with_origin(&p, stream(15, StreamKind::Tuning, 0, 0));
        let lambda_out = tune_output_rate(&mut st, &p, &target, 1.0);
        assert!(lambda_out > 0.0);

        let params = SamplerParams::new(&p, 1.0, lambda_out);
        let c0 = st.counters();
        run_safeguarded_each(&mut st, &p, &target, &params, 2000, |_, _| {});
        let delta = st.counters().since(c0);
        let events_per_output = (delta.bounces + delta.reflections) as f64 / delta.outputs as f64;
        let d = p.dim() as f64;
        assert!(
            (0.8 * d..=1.2 * d).contains(&events_per_output),
            "events per output = {events_per_output}, want about {d}"
        );
    }

    #[test]
    fn refresh_tuning_on_sampler_stays_in_bounds() {
        let (p, _) = make_cube(4);
        let target = crate::bps::GaussianTarget::from_sigma(0.8);
        let mut st = crate::bps::BpsState::with_origin(&p, stream(16, StreamKind::Tuning, 0, 0));
        let lambda_out = tune_output_rate(&mut st, &p, &target, 1.0);
        let (rate, report) = tune_refresh_rate(&mut st, &p, &target, 1.0, lambda_out, 100);
        assert!((REFRESH_RATE_MIN..=REFRESH_RATE_MAX).contains(&rate));
        assert!(report.ess_min >= 1.0 && report.ess_min <= 100.0);
        assert!(report.ess_norm >= 1.0 && report.ess_norm <= 100.0);
        assert!(report.ess_per_sample > 0.0 && report.ess_per_sample <= 1.0);
    }
}
