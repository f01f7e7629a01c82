//! End-to-end acceptance gate. Each test prints one `[PASS]`/`[FAIL]` line
//! summarising its check (visible with `--nocapture`; always printed on
//! failure). The heavy estimation batches are shared across tests through
//! `common::heavy()`, so the first of them to run pays the cost once.
//!
//! The long benchmark-scaling test is `#[ignore]`d by default; run it with
//! `cargo test --test acceptance -- --ignored`.

mod common;

use common::{heavy, ks_two_sample, mean, sd, simpson, SEED};

use polyvol::bps::{
    bounce_time, run_safeguarded, run_safeguarded_each, run_safeguarded_each_with_fault, BpsState,
    Event, FaultInjection, GaussianTarget, SamplerParams,
};
use polyvol::diagnostics::ess;
use polyvol::harness::{run_benchmark, run_sample, BenchmarkConfig, SampleConfig};
use polyvol::polytope::{make_cube, make_std_simplex};
use polyvol::rng::{stream, StreamKind};
use polyvol::volume::{estimate_volume, EstimatorConfig};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// Prints the per-check verdict line and returns `ok` for the assert.
fn verdict(name: &str, ok: bool, detail: &str) -> bool {
    println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

/// Cubes in dimension 2-10 and standard simplices in dimension 3-10, each
/// estimated with a 100k budget over 8 repeats, must land their median
/// relative error within 5% of the closed-form volume.
#[test]
fn low_dimensional_volumes_match_closed_forms() {
    let runs = &heavy().small;
    let mut worst = 0.0_f64;
    let mut worst_model = String::new();
    for run in runs {
        let err = run
            .aggregate
            .median_rel_error
            .expect("built-in models have known volumes");
        if err > worst {
            worst = err;
            worst_model = run.model.clone();
        }
    }
    let ok = worst <= 0.05;
    assert!(verdict(
        "low-dimensional exactness",
        ok,
        &format!(
            "worst median relative error {:.2}% ({worst_model}) over {} models, limit 5%",
            100.0 * worst,
            runs.len()
        ),
    ));
}

/// The 50-dimensional cube at a 100k budget over 24 repeats: median relative
/// error within 6% and median wall time within 40 s per repeat.
#[test]
fn cube50_meets_error_and_time_targets() {
    let run = &heavy().mid;
    let err = run.aggregate.median_rel_error.unwrap();
    let time = run.aggregate.median_time_s;
    let ok = err <= 0.06 && time <= 40.0;
    assert!(verdict(
        "mid-scale accuracy and speed",
        ok,
        &format!(
            "cube(50): median relative error {:.2}% (limit 6%), median time {time:.1}s (limit 40s)",
            100.0 * err
        ),
    ));
}

/// The 100-dimensional cube at a 1M budget over 8 repeats: median relative
/// error within 5%.
#[test]
fn cube100_stays_within_five_percent() {
    let run = &heavy().big;
    let err = run.aggregate.median_rel_error.unwrap();
    let ok = run.repeats >= 8 && err <= 0.05;
    assert!(verdict(
        "large-scale accuracy",
        ok,
        &format!(
            "cube(100), N=1e6, {} repeats: median relative error {:.2}% (limit 5%)",
            run.repeats,
            100.0 * err
        ),
    ));
}

/// The rollback safeguard must stay idle across every healthy run above
/// (zero compensated replays), and an injected endpoint corruption must
/// trigger it deterministically: same fault, same stream, same counts and
/// samples on replay.
#[test]
fn safeguard_idle_normally_and_deterministic_under_faults() {
    let h = heavy();
    let m_total: u64 = h
        .small
        .iter()
        .chain([&h.mid, &h.big])
        .map(|r| r.aggregate.m_total)
        .sum();

    let (p, _) = make_cube(10);
    let target = GaussianTarget::from_sigma(0.7);
    let params = SamplerParams::new(&p, 1.0, 1.0);
    let fault = FaultInjection {
        at_sample: 10,
        attempts: 1,
    };
    let run_with = |fault: Option<FaultInjection>| {
        let mut state = BpsState::with_origin(&p, stream(SEED, StreamKind::Production, 0, 0));
        let mut samples = Vec::new();
        let stats = run_safeguarded_each_with_fault(
            &mut state,
            &p,
            &target,
            &params,
            50,
            fault,
            |_, st| samples.push(st.x().to_vec()),
        );
        (stats, samples)
    };
    let (stats_a, samples_a) = run_with(Some(fault));
    let (stats_b, samples_b) = run_with(Some(fault));
    let injected_fires = stats_a.m_count == 1 && stats_a.r_count == 0;
    let reproducible = stats_a == stats_b && samples_a == samples_b;

    // Exhausting the replay budget must escalate to a velocity resample.
    let (stats_c, _) = run_with(Some(FaultInjection {
        at_sample: 10,
        attempts: 2,
    }));
    let escalates = stats_c.m_count == 1 && stats_c.r_count == 1;

    let ok = m_total == 0 && injected_fires && reproducible && escalates;
    assert!(verdict(
        "rollback safeguard",
        ok,
        &format!(
            "replays across all healthy runs M={m_total} (want 0); injected fault: M={} R={} \
             (want 1/0), replay identical: {reproducible}, exhaustion escalates: {escalates}",
            stats_a.m_count, stats_a.r_count
        ),
    ));
}

/// 100k sampler outputs targeting the unit Gaussian restricted to the square
/// [-1,1]^2 against a million-draw rejection oracle: per-coordinate
/// Kolmogorov-Smirnov distance below 0.01 and first two moments within three
/// combined standard errors.
#[test]
fn gaussian_in_square_matches_rejection_oracle() {
    let (p, _) = make_cube(2);
    let target = GaussianTarget::from_sigma(1.0);
    // Sparse output clock and unit refresh rate: several refreshes between
    // consecutive outputs, so samples are nearly independent and the KS
    // bound is meaningful.
    let params = SamplerParams::new(&p, 1.0, 0.25);
    let mut state = BpsState::with_origin(&p, stream(SEED, StreamKind::Production, 0, 1));
    let n_bps = 100_000u64;
    let (samples, stats) = run_safeguarded(&mut state, &p, &target, &params, n_bps);
    assert_eq!(stats.m_count, 0);

    let mut oracle: Vec<[f64; 2]> = Vec::with_capacity(1_000_000);
    let mut rng = stream(SEED, StreamKind::Sigma0, 0, 99);
    while oracle.len() < 1_000_000 {
        let z0: f64 = StandardNormal.sample(&mut rng);
        let z1: f64 = StandardNormal.sample(&mut rng);
        if z0.abs() <= 1.0 && z1.abs() <= 1.0 {
            oracle.push([z0, z1]);
        }
    }

    let mut worst_ks = 0.0_f64;
    let mut worst_moment_z = 0.0_f64;
    for j in 0..2 {
        let bps_j: Vec<f64> = samples.iter().map(|x| x[j]).collect();
        let ora_j: Vec<f64> = oracle.iter().map(|x| x[j]).collect();
        worst_ks = worst_ks.max(ks_two_sample(&bps_j, &ora_j));

        // First and second moments, with the sampler side's standard error
        // widened by its autocorrelation (effective sample size).
        for series in [
            (bps_j.clone(), ora_j.clone()),
            (
                bps_j.iter().map(|x| x * x).collect(),
                ora_j.iter().map(|x| x * x).collect(),
            ),
        ] {
            let (sb, so) = series;
            let essb = ess(&sb).unwrap();
            let se = (sd(&sb).powi(2) / essb + sd(&so).powi(2) / so.len() as f64).sqrt();
            worst_moment_z = worst_moment_z.max((mean(&sb) - mean(&so)).abs() / se);
        }
    }
    let ok = worst_ks < 0.01 && worst_moment_z < 3.0;
    assert!(verdict(
        "stationary distribution vs rejection oracle",
        ok,
        &format!(
            "worst per-coordinate KS {worst_ks:.4} (limit 0.01), \
             worst moment deviation {worst_moment_z:.2} se (limit 3)"
        ),
    ));
}

/// 1000 random bounce-clock inversions: integrating the event rate from 0 to
/// the returned time by quadrature must recover the exponential threshold to
/// within 1e-8.
#[test]
fn bounce_clock_inversion_matches_quadrature() {
    let mut rng = stream(SEED, StreamKind::Sigma0, 0, 7);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let m = rng.random::<f64>() * 6.0 - 3.0;
        let q = 0.1 + rng.random::<f64>() * 4.9;
        let a = 0.1 + rng.random::<f64>() * 2.9;
        let u: f64 = Exp1.sample(&mut rng);
        let t = bounce_time(m, q, a, u);
        assert!(t.is_finite() && t > 0.0);

        // The rate is max(0, 2a(m+qs)): zero until the kink, linear after.
        // Split there so each Simpson panel sees a smooth integrand.
        let rate = |s: f64| (2.0 * a * (m + q * s)).max(0.0);
        let kink = (-m / q).clamp(0.0, t);
        let integral = simpson(rate, 0.0, kink, 512) + simpson(rate, kink, t, 512);
        worst = worst.max((integral - u).abs());
    }
    let ok = worst <= 1e-8;
    assert!(verdict(
        "bounce-clock inversion",
        ok,
        &format!("worst |integrated rate - threshold| {worst:.2e} over 1000 draws (limit 1e-8)"),
    ));
}

/// Ten thousand bounce/reflection events in the 20-cube with refreshes
/// disabled: the O(rows) incremental caches must stay within 1e-6 of dense
/// recomputation. After every verified output the position caches and
/// scalars must agree exactly by construction.
#[test]
fn event_caches_track_dense_recomputation() {
    let (p, _) = make_cube(20);
    let target = GaussianTarget::from_sigma(1.0);

    // Part 1: long pure bounce/reflect trajectory, no dense rebuilds.
    let params = SamplerParams::new(&p, 0.0, 1e-12);
    let mut state = BpsState::with_origin(&p, stream(SEED, StreamKind::Production, 0, 2));
    let mut events = 0u64;
    while events < 10_000 {
        match state.step(&p, &target, &params) {
            Event::Bounce | Event::Reflect(_) => events += 1,
            _ => {}
        }
    }
    let drift = state.cache_drift(&p);
    let incremental_ok = drift.ax <= 1e-6 && drift.av <= 1e-6 && drift.scalars <= 1e-6;

    // The cube's one-entry rows make the incremental and dense paths agree
    // bitwise, so also drive a body with a dense constraint row, where the
    // floating-point paths genuinely differ. Cache error feeds back on
    // itself through the bounce coefficient, so the guarantee is scoped to
    // the production cadence: every cache is rebuilt densely at each
    // verified output, and drift must stay negligible within one output
    // segment. Reconstructing the state at each segment boundary reproduces
    // exactly that rebuild pattern while keeping the pre-rebuild drift
    // observable.
    let (ps, _) = make_std_simplex(20);
    let tgt_s = GaussianTarget::from_sigma(0.05);
    let params_s = SamplerParams::new(&ps, 5.0, 7.0);
    let mut worst_segment = 0.0_f64;
    let mut simplex_events = 0u64;
    let mut x_cur = vec![0.0; 20];
    for seg in 0..2_000 {
        let mut st = BpsState::new(&ps, &x_cur, stream(SEED, StreamKind::Production, 4, seg));
        st.advance_to_output(&ps, &tgt_s, &params_s);
        let d = st.cache_drift(&ps);
        worst_segment = worst_segment.max(d.ax).max(d.av).max(d.scalars);
        simplex_events += st.counters().total();
        x_cur = st.x().to_vec();
    }
    let simplex_ok = worst_segment <= 1e-6 && simplex_events >= 10_000;

    // Part 2: the verified-output path rebuilds every cache densely, so
    // drift at each emitted sample is exactly zero.
    let params = SamplerParams::new(&p, 1.0, 1.0);
    let mut state = BpsState::with_origin(&p, stream(SEED, StreamKind::Production, 0, 3));
    let mut outputs_exact = true;
    run_safeguarded_each(&mut state, &p, &target, &params, 300, |_, st| {
        let d = st.cache_drift(&p);
        outputs_exact &= d.ax == 0.0 && d.av == 0.0 && d.scalars == 0.0;
    });

    let ok = incremental_ok && simplex_ok && outputs_exact;
    assert!(verdict(
        "event-cache fidelity",
        ok,
        &format!(
            "cube(20), 1e4 events, no rebuilds: worst drift {:.2e} (limit 1e-6); \
             simplex(20), {simplex_events} events at output cadence: worst segment drift \
             {worst_segment:.2e} (limit 1e-6); post-output drift exactly zero: {outputs_exact}",
            drift.ax.max(drift.av).max(drift.scalars),
        ),
    ));
}

/// The effective-sample-size estimator must be calibrated: within 20% of n
/// on independent draws and within 20% of n/3 on an AR(1) chain with
/// autocorrelation 1/2.
#[test]
fn ess_recovers_known_correlation_structures() {
    let mut rng = stream(SEED, StreamKind::Sigma0, 0, 11);

    let n = 10_000;
    let iid: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let ess_iid = ess(&iid).unwrap();
    let iid_ok = ess_iid >= 0.8 * n as f64 && ess_iid <= 1.2 * n as f64;

    let n_ar = 20_000;
    let rho = 0.5_f64;
    let noise = (1.0 - rho * rho).sqrt();
    let mut x: f64 = StandardNormal.sample(&mut rng);
    let ar1: Vec<f64> = (0..n_ar)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            x = rho * x + noise * e;
            x
        })
        .collect();
    let ess_ar = ess(&ar1).unwrap();
    let expected = n_ar as f64 / 3.0;
    let ar_ok = (ess_ar - expected).abs() <= 0.2 * expected;

    let ok = iid_ok && ar_ok;
    assert!(verdict(
        "effective sample size calibration",
        ok,
        &format!(
            "iid: {ess_iid:.0}/{n} (want within 20% of n); \
             AR(1) rho=0.5: {ess_ar:.0} vs {expected:.0} (want within 20%)"
        ),
    ));
}

/// Full budget-search benchmark on cubes of dimension 25, 50 and 100 at a
/// 4%+-1% error target: the fitted wall-time scaling exponent must lie in
/// [3.0, 4.2]. Multi-hour; excluded from the default run.
#[test]
#[ignore = "multi-hour scaling benchmark; run with: cargo test --test acceptance -- --ignored"]
fn benchmark_time_scaling_exponent_in_window() {
    let cfg = BenchmarkConfig::new(vec![25, 50, 100]);
    let base = EstimatorConfig::new(10_000, SEED);
    let report = run_benchmark("cube", make_cube, &cfg, &base).expect("benchmark failed");
    let slope = report
        .time_regression
        .as_ref()
        .map(|r| r.slope)
        .unwrap_or(f64::NAN);
    let ok = !report.incomplete && (3.0..=4.2).contains(&slope);
    assert!(verdict(
        "wall-time scaling",
        ok,
        &format!(
            "time ~ dim^{slope:.2} over d in {{25,50,100}} at 4%+-1% (window [3.0, 4.2]); \
             complete: {}",
            !report.incomplete
        ),
    ));
}

/// Identical seed and configuration must reproduce the estimate and the raw
/// sample stream bit for bit; a different seed must not.
#[test]
fn identical_configuration_reproduces_bitwise() {
    let (p, info) = make_cube(8);
    let cfg = EstimatorConfig::new(30_000, 99);
    let a = estimate_volume(&p, &info, &cfg).unwrap();
    let b = estimate_volume(&p, &info, &cfg).unwrap();
    let volumes_identical = a.log_volume.to_bits() == b.log_volume.to_bits();
    let events_identical = a.events == b.events;

    let mut other = cfg.clone();
    other.seed = 100;
    let c = estimate_volume(&p, &info, &other).unwrap();
    let seeds_differ = c.log_volume.to_bits() != a.log_volume.to_bits();

    let (p3, _) = make_std_simplex(3);
    let scfg = SampleConfig {
        sigma: 0.8,
        samples: 2_000,
        seed: 123,
        lambda_refresh: None,
        event_log: false,
    };
    let s1 = run_sample(&p3, &scfg).unwrap();
    let s2 = run_sample(&p3, &scfg).unwrap();
    let streams_identical = s1.samples_csv == s2.samples_csv && s1.events == s2.events;

    let ok = volumes_identical && events_identical && seeds_differ && streams_identical;
    assert!(verdict(
        "bitwise reproducibility",
        ok,
        &format!(
            "same seed: log-volume bits equal {volumes_identical}, event counts equal \
             {events_identical}, sample stream equal {streams_identical}; \
             different seed diverges: {seeds_differ}"
        ),
    ));
}
