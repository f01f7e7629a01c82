//! Volume estimation by Gaussian annealing.
//!
//! The volume of a polytope H splits into a telescoping product: the mass a
//! narrow Gaussian places inside H, a chain of ratios between successively
//! flatter Gaussians restricted to H, and a final correction relating the
//! flattest Gaussian to the uniform density. The narrow mass comes from
//! rejection sampling; each ratio is a Monte-Carlo average over samples
//! drawn by the bouncy particle sampler; everything is assembled in the log
//! domain so dimensions in the hundreds never overflow.

use std::f64::consts::{LN_10, PI};
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::bps::{
    run_safeguarded_each, BpsState, EventCounters, GaussianTarget, NumericsStats, SamplerParams,
};
use crate::diagnostics::{ess_report, run_pilot, tune_output_rate, tune_refresh_rate, SampleSeries};
use crate::error::{Error, Result};
use crate::polytope::{axis_extent_radius, HPolytope, ModelInfo};
use crate::rng::{stream, Stream, StreamKind};

/// How the last annealing step relates the flattest Gaussian to the uniform
/// density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FinalMode {
    /// Treat the last Gaussian as constant on H: closed-form correction, no
    /// samples, small bias unless its variance is much larger than the
    /// polytope.
    FlatApprox,
    /// Estimate the last step as one more Monte-Carlo ratio (to the flat
    /// limit). Unbiased, and the ladder can stop at a much smaller variance.
    ExactRatio,
}

/// Variance-ladder stopping thresholds, as multiples of the squared
/// bounding radius.
pub const FLATNESS_EXACT_RATIO: f64 = 2.0;
pub const FLATNESS_FLAT_APPROX: f64 = 100.0;

/// Mixing statistics of a production phase are measured on a prefix of at
/// most this many samples; longer phases stream the rest.
pub const ESS_PREFIX_CAP: usize = 10_000;

/// Knobs of [`estimate_volume`].
#[derive(Clone, Debug)]
pub struct EstimatorConfig {
    /// Output samples spent across all sampling phases (tuning pilots are
    /// extra).
    pub total_budget: u64,
    /// Target window for the mass of the narrowest Gaussian inside H.
    pub c_min: f64,
    pub c_max: f64,
    /// Variance growth per rung; `None` picks `1 + 1/sqrt(d)`.
    pub schedule_factor: Option<f64>,
    pub final_mode: FinalMode,
    /// Rejection-sampling draws per bisection probe; the returned mass uses
    /// four times as many.
    pub sigma0_trials: u64,
    /// Samples per tuning pilot.
    pub pilot_len: u64,
    /// Fixed refresh rate; `None` hill-climbs one per rung.
    pub lambda_refresh: Option<f64>,
    pub seed: u64,
    /// Index of the independent repeat; selects disjoint random streams
    /// under the same seed.
    pub repeat: u64,
}

impl EstimatorConfig {
    pub fn new(total_budget: u64, seed: u64) -> Self {
        Self {
            total_budget,
            c_min: 0.1,
            c_max: 0.2,
            schedule_factor: None,
            final_mode: FinalMode::ExactRatio,
            sigma0_trials: 10_000,
            pilot_len: 100,
            lambda_refresh: None,
            seed,
            repeat: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.total_budget == 0 {
            return bad("total budget must be positive".into());
        }
        if !(0.0 < self.c_min && self.c_min < self.c_max && self.c_max < 1.0) {
            return bad(format!(
                "mass window must satisfy 0 < c_min < c_max < 1, got [{}, {}]",
                self.c_min, self.c_max
            ));
        }
        if let Some(f) = self.schedule_factor {
            if !(f > 1.0 && f.is_finite()) {
                return bad(format!("schedule factor must be finite and > 1, got {f}"));
            }
        }
        if self.sigma0_trials < 1000 {
            return bad(format!(
                "sigma0_trials must be at least 1000, got {}",
                self.sigma0_trials
            ));
        }
        if self.pilot_len < 50 {
            return bad(format!("pilot_len must be at least 50, got {}", self.pilot_len));
        }
        if let Some(r) = self.lambda_refresh {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("refresh rate must be finite and positive, got {r}"));
            }
        }
        Ok(())
    }
}

/// The variance ladder `sigma_0 < sigma_1 < ... < sigma_m`.
#[derive(Clone, Debug)]
pub struct Schedule {
    sigmas: Vec<f64>,
}

impl Schedule {
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Number of ratio phases; 0 when the first Gaussian is already flat
    /// enough.
    pub fn m(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn target(&self, i: usize) -> GaussianTarget {
        GaussianTarget::from_sigma(self.sigmas[i])
    }
}

/// Builds the geometric ladder `sigma_{i+1}^2 = sigma_i^2 * factor`,
/// stopping at the first rung with `sigma_m^2 >= flatness * r^2`.
pub fn build_schedule(sigma0: f64, r: f64, factor: f64, flatness: f64) -> Schedule {
    assert!(sigma0 > 0.0 && r > 0.0 && flatness > 0.0);
    assert!(factor > 1.0, "ladder factor must exceed 1");
    let threshold = flatness * r * r;
    let mut sigmas = vec![sigma0];
    let mut s2 = sigma0 * sigma0;
    while s2 < threshold {
        s2 *= factor;
        sigmas.push(s2.sqrt());
    }
    Schedule { sigmas }
}

/// One sampling phase's contribution.
#[derive(Clone, Debug, Serialize)]
pub struct PhaseResult {
    /// Variance sampled from.
    pub sigma_prev: f64,
    /// Variance in the ratio's numerator; infinite for the final flat-limit
    /// phase.
    pub sigma_next: f64,
    pub n_used: u64,
    /// Log of the phase's Monte-Carlo mean.
    pub log_ratio: f64,
    pub ess_per_sample: f64,
    pub wall_time: f64,
}

/// Everything [`estimate_volume`] produces.
#[derive(Clone, Debug, Serialize)]
pub struct VolumeEstimate {
    /// Natural log of the estimated volume.
    pub log_volume: f64,
    /// `mantissa * 10^exp10` form, `mantissa` in `[1, 10)`.
    pub mantissa: f64,
    pub exp10: i32,
    /// Log mass of the narrowest Gaussian inside H.
    pub log_mass0: f64,
    pub sigma0: f64,
    pub phases: Vec<PhaseResult>,
    pub events: EventCounters,
    pub numerics: NumericsStats,
    pub total_time: f64,
}

/// Result of the narrow-variance search.
#[derive(Clone, Debug)]
pub struct Sigma0Choice {
    pub sigma0: f64,
    pub log_mass0: f64,
    /// A point drawn exactly from the accepted Gaussian restricted to H,
    /// if any trial landed inside; the natural chain start.
    pub start: Option<Vec<f64>>,
}

fn mass_probe(
    p: &HPolytope,
    sigma: f64,
    trials: u64,
    rng: &mut Stream,
) -> (f64, Option<Vec<f64>>) {
    let d = p.dim();
    let mut hits = 0u64;
    let mut first: Option<Vec<f64>> = None;
    let mut x = vec![0.0; d];
    for _ in 0..trials {
        for c in x.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *c = sigma * z;
        }
        if p.contains(&x, 0.0) {
            hits += 1;
            if first.is_none() {
                first = Some(x.clone());
            }
        }
    }
    (hits as f64 / trials as f64, first)
}

/// Finds `sigma0` whose Gaussian puts mass in `[c_min, c_max]` inside H by
/// geometric bisection on the scale, each probe a rejection-sampling
/// estimate. The returned mass uses a 4x larger trial count. The bracket
/// `[0.01 r / sqrt(d), 4 r]` is widened geometrically on either side when
/// needed, up to 60 doublings.
pub fn choose_sigma0(
    p: &HPolytope,
    r: f64,
    config: &EstimatorConfig,
    rng: &mut Stream,
) -> Result<Sigma0Choice> {
    assert!(r > 0.0 && r.is_finite(), "bounding radius must be positive");
    let (c_min, c_max) = (config.c_min, config.c_max);
    let trials = config.sigma0_trials;
    let in_window = |f: f64| (c_min..=c_max).contains(&f);

    let finish = |sigma: f64, rng: &mut Stream| -> Result<Sigma0Choice> {
        let (frac, first) = mass_probe(p, sigma, 4 * trials, rng);
        if frac == 0.0 {
            return Err(Error::MassEstimateZero);
        }
        Ok(Sigma0Choice {
            sigma0: sigma,
            log_mass0: frac.ln(),
            start: first,
        })
    };

    let mut lo = 0.01 * r / (p.dim() as f64).sqrt();
    let mut hi = 4.0 * r;
    let mut f_lo = mass_probe(p, lo, trials, rng).0;
    if in_window(f_lo) {
        return finish(lo, rng);
    }
    let mut f_hi = mass_probe(p, hi, trials, rng).0;
    if in_window(f_hi) {
        return finish(hi, rng);
    }

    // Mass decreases in sigma; widen until mass(lo) > c_max > c_min > mass(hi).
    let mut expansions = 0usize;
    while f_hi > c_max {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 60 {
            return Err(Error::SigmaBracket { expansions, c_min, c_max });
        }
        f_hi = mass_probe(p, hi, trials, rng).0;
        if in_window(f_hi) {
            return finish(hi, rng);
        }
    }
    while f_lo < c_min {
        hi = lo;
        lo *= 0.5;
        expansions += 1;
        if expansions > 60 {
            return Err(Error::SigmaBracket { expansions, c_min, c_max });
        }
        f_lo = mass_probe(p, lo, trials, rng).0;
        if in_window(f_lo) {
            return finish(lo, rng);
        }
    }

    let mut mid = (lo * hi).sqrt();
    for _ in 0..200 {
        mid = (lo * hi).sqrt();
        let f_mid = mass_probe(p, mid, trials, rng).0;
        if in_window(f_mid) {
            return finish(mid, rng);
        }
        if f_mid > c_max {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The bracket has collapsed onto a window edge; the midpoint is within
    // sampling noise of the window.
    finish(mid, rng)
}

/// Log of the normalized-density quotient `f_next(x) / f_prev(x)` for
/// centred isotropic Gaussians:
/// `d ln(sigma_prev/sigma_next) + (|x|^2/2)(1/sigma_prev^2 - 1/sigma_next^2)`.
pub fn log_density_ratio(x: &[f64], sigma_prev: f64, sigma_next: f64) -> f64 {
    debug_assert!(sigma_prev > 0.0 && sigma_next >= sigma_prev);
    let xx: f64 = x.iter().map(|c| c * c).sum();
    log_density_ratio_sq(xx, x.len(), sigma_prev, sigma_next)
}

#[inline]
fn log_density_ratio_sq(xx: f64, d: usize, sigma_prev: f64, sigma_next: f64) -> f64 {
    d as f64 * (sigma_prev / sigma_next).ln()
        + 0.5 * xx * (1.0 / (sigma_prev * sigma_prev) - 1.0 / (sigma_next * sigma_next))
}

/// Closed-form last step under the flat approximation:
/// `(d/2) ln(2 pi sigma_m^2)`.
pub fn flat_correction(dim: usize, sigma_m: f64) -> f64 {
    0.5 * dim as f64 * (2.0 * PI * sigma_m * sigma_m).ln()
}

/// Streams `n` samples, folding log-weights into a running log-sum-exp and
/// collecting a bounded prefix for mixing statistics.
fn run_weighted_phase(
    p: &HPolytope,
    state: &mut BpsState,
    params: &SamplerParams,
    target: &GaussianTarget,
    n: u64,
    mut log_weight: impl FnMut(&BpsState) -> f64,
) -> (f64, f64, f64, NumericsStats) {
    assert!(n >= 1, "a phase needs at least one sample");
    let start = Instant::now();
    let prefix = (n as usize).min(ESS_PREFIX_CAP);
    let mut series = SampleSeries::with_capacity(p.dim(), prefix);
    let mut lse_max = f64::NEG_INFINITY;
    let mut lse_sum = 0.0;
    let stats = run_safeguarded_each(state, p, target, params, n, |i, st| {
        let l = log_weight(st);
        if l <= lse_max {
            lse_sum += (l - lse_max).exp();
        } else {
            lse_sum = lse_sum * (lse_max - l).exp() + 1.0;
            lse_max = l;
        }
        if (i as usize) < prefix {
            series.push(st.x());
        }
    });
    let log_mean = lse_max + lse_sum.ln() - (n as f64).ln();
    let wall_time = start.elapsed().as_secs_f64();
    let ess_per_sample = if series.len() >= 8 {
        match ess_report(&series, wall_time) {
            Ok(rep) => rep.ess_per_sample,
            Err(_) => 1.0 / series.len() as f64,
        }
    } else {
        1.0 / series.len() as f64
    };
    (log_mean, ess_per_sample, wall_time, stats)
}

/// One ratio phase: samples from the Gaussian at `sigma_prev` restricted to
/// H and averages the density quotient towards `sigma_next`.
pub fn estimate_phase(
    p: &HPolytope,
    state: &mut BpsState,
    params: &SamplerParams,
    sigma_prev: f64,
    sigma_next: f64,
    n_i: u64,
) -> (PhaseResult, NumericsStats) {
    assert!(sigma_prev > 0.0 && sigma_next >= sigma_prev);
    let d = p.dim();
    let target = GaussianTarget::from_sigma(sigma_prev);
    let (log_ratio, ess_per_sample, wall_time, stats) =
        run_weighted_phase(p, state, params, &target, n_i, |st| {
            log_density_ratio_sq(st.radius_sq(), d, sigma_prev, sigma_next)
        });
    (
        PhaseResult {
            sigma_prev,
            sigma_next,
            n_used: n_i,
            log_ratio,
            ess_per_sample,
            wall_time,
        },
        stats,
    )
}

/// The unbiased last step: samples from the Gaussian at `sigma_m` and
/// averages `exp((d/2) ln(2 pi sigma_m^2) + |x|^2 / (2 sigma_m^2))`, the
/// ratio of the uniform (flat-limit) density to the Gaussian one.
pub fn exact_correction(
    p: &HPolytope,
    state: &mut BpsState,
    params: &SamplerParams,
    sigma_m: f64,
    n_f: u64,
) -> (PhaseResult, NumericsStats) {
    let d = p.dim();
    let flat = flat_correction(d, sigma_m);
    let inv2s2 = 0.5 / (sigma_m * sigma_m);
    let target = GaussianTarget::from_sigma(sigma_m);
    let (log_ratio, ess_per_sample, wall_time, stats) =
        run_weighted_phase(p, state, params, &target, n_f, |st| {
            flat + st.radius_sq() * inv2s2
        });
    (
        PhaseResult {
            sigma_prev: sigma_m,
            sigma_next: f64::INFINITY,
            n_used: n_f,
            log_ratio,
            ess_per_sample,
            wall_time,
        },
        stats,
    )
}

/// Splits `n` across phases proportionally to `1/ess_i`, so phases mixing
/// poorly get more samples and each ends up with about the same effective
/// count. Largest-remainder rounding keeps the sum exactly `n`; every phase
/// gets at least one sample.
pub fn allocate_budget(ess: &[f64], n: u64) -> Vec<u64> {
    let m = ess.len();
    assert!(m >= 1, "need at least one phase");
    assert!(n >= m as u64, "budget smaller than phase count");
    let weights: Vec<f64> = ess
        .iter()
        .map(|e| {
            assert!(*e > 0.0, "ESS weights must be positive");
            1.0 / e
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut alloc: Vec<u64> = ideal.iter().map(|v| v.floor() as u64).collect();
    let assigned: u64 = alloc.iter().sum();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for idx in 0..(n - assigned) as usize {
        alloc[order[idx % m]] += 1;
    }
    // Guarantee a sample everywhere, taking from the largest allocation.
    for i in 0..m {
        if alloc[i] == 0 {
            let donor = (0..m).max_by_key(|&j| alloc[j]).unwrap();
            alloc[donor] -= 1;
            alloc[i] += 1;
        }
    }
    debug_assert_eq!(alloc.iter().sum::<u64>(), n);
    alloc
}

/// Splits a log value into scientific notation `mantissa * 10^exp10` with
/// the mantissa in `[1, 10)`.
pub fn sci_from_log(log_value: f64) -> (f64, i32) {
    let log10 = log_value / LN_10;
    let mut e = log10.floor();
    let mut m = 10f64.powf(log10 - e);
    if m >= 10.0 {
        m /= 10.0;
        e += 1.0;
    }
    (m, e as i32)
}

struct Level {
    sigma: f64,
    params: SamplerParams,
    start: Vec<f64>,
    ess: f64,
}

/// The full pipeline: pick the narrow Gaussian, build the ladder, tune the
/// sampler and pilot each rung on one warm chain, split the budget by
/// inverse pilot ESS, then run every sampling phase on its own random
/// stream and assemble the log-volume.
pub fn estimate_volume(
    p: &HPolytope,
    info: &ModelInfo,
    config: &EstimatorConfig,
) -> Result<VolumeEstimate> {
    config.validate()?;
    let t0 = Instant::now();
    let d = p.dim();
    let r = match info.bounding_radius {
        Some(r) => r,
        None => axis_extent_radius(p)?,
    };
    let factor = config
        .schedule_factor
        .unwrap_or(1.0 + 1.0 / (d as f64).sqrt());
    let exact = config.final_mode == FinalMode::ExactRatio;
    let flatness = if exact { FLATNESS_EXACT_RATIO } else { FLATNESS_FLAT_APPROX };

    let mut s0_rng = stream(config.seed, StreamKind::Sigma0, config.repeat, 0);
    let choice = choose_sigma0(p, r, config, &mut s0_rng)?;
    let schedule = build_schedule(choice.sigma0, r, factor, flatness);
    let m = schedule.m();
    let n_levels = m + usize::from(exact);

    let mut phases = Vec::with_capacity(n_levels);
    let mut events = EventCounters::default();
    let mut numerics = NumericsStats::default();
    let mut log_volume = choice.log_mass0;

    if n_levels > 0 {
        if config.total_budget < n_levels as u64 {
            return Err(Error::BudgetTooSmall {
                budget: config.total_budget,
                phases: n_levels,
            });
        }

        // Tuning walk: one warm chain visits every rung, leaving behind
        // tuned rates, a start point and a pilot ESS per rung.
        let start0 = choice.start.clone().unwrap_or_else(|| vec![0.0; d]);
        let mut tstate = BpsState::new(
            p,
            &start0,
            stream(config.seed, StreamKind::Tuning, config.repeat, 0),
        );
        let mut rate = 1.0;
        let mut levels: Vec<Level> = Vec::with_capacity(n_levels);
        for l in 0..n_levels {
            let sigma = schedule.sigmas()[l];
            let target = GaussianTarget::from_sigma(sigma);
            let lambda_out = tune_output_rate(&mut tstate, p, &target, rate);
            let (tuned, report) = match config.lambda_refresh {
                None => tune_refresh_rate(&mut tstate, p, &target, rate, lambda_out, config.pilot_len),
                Some(fixed) => {
                    // Fixed rate: still run one pilot for the allocation ESS.
                    let o = run_pilot(&mut tstate, p, &target, fixed, lambda_out, config.pilot_len);
                    (fixed, o.report)
                }
            };
            rate = tuned;
            levels.push(Level {
                sigma,
                params: SamplerParams::new(p, tuned, lambda_out),
                start: tstate.x().to_vec(),
                ess: report.ess_per_sample,
            });
        }
        events += tstate.counters();

        let ess: Vec<f64> = levels.iter().map(|l| l.ess).collect();
        let alloc = allocate_budget(&ess, config.total_budget);

        for (l, level) in levels.iter().enumerate() {
            let rng = stream(config.seed, StreamKind::Production, config.repeat, l as u64);
            let mut pstate = BpsState::new(p, &level.start, rng);
            let (result, stats) = if exact && l == m {
                exact_correction(p, &mut pstate, &level.params, level.sigma, alloc[l])
            } else {
                estimate_phase(
                    p,
                    &mut pstate,
                    &level.params,
                    level.sigma,
                    schedule.sigmas()[l + 1],
                    alloc[l],
                )
            };
            log_volume += result.log_ratio;
            events += pstate.counters();
            numerics += stats;
            phases.push(result);
        }
    }

    if !exact {
        log_volume += flat_correction(d, schedule.sigmas()[m]);
    }

    let (mantissa, exp10) = sci_from_log(log_volume);
    Ok(VolumeEstimate {
        log_volume,
        mantissa,
        exp10,
        log_mass0: choice.log_mass0,
        sigma0: choice.sigma0,
        phases,
        events,
        numerics,
        total_time: t0.elapsed().as_secs_f64(),
    })
}
