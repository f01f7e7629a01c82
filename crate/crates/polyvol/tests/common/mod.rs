//! Shared fixtures for the acceptance suite: the expensive estimation runs
//! (computed once, reused by several criteria) and small statistical
//! helpers.

use std::sync::OnceLock;

use polyvol::harness::{run_volume, RunReport};
use polyvol::polytope::{make_cube, make_std_simplex, HPolytope, ModelInfo};
use polyvol::volume::EstimatorConfig;

pub const SEED: u64 = 2026;

pub struct HeavyRuns {
    /// cube(2..=10) and std-simplex(3..=10), N = 1e5, 8 repeats each.
    pub small: Vec<RunReport>,
    /// cube(50), N = 1e5, 24 repeats.
    pub mid: RunReport,
    /// cube(100), N = 1e6, 8 repeats.
    pub big: RunReport,
}

static HEAVY: OnceLock<HeavyRuns> = OnceLock::new();

fn run(model: (HPolytope, ModelInfo), n: u64, repeats: u64) -> RunReport {
    let (p, info) = model;
    let cfg = EstimatorConfig::new(n, SEED);
    run_volume(&p, &info, &cfg, repeats, 0).expect("estimation run failed")
}

/// The three batches backing the exactness, mid-scale, large-scale and
/// safeguard criteria. First caller computes; the rest share.
pub fn heavy() -> &'static HeavyRuns {
    HEAVY.get_or_init(|| {
        let mut small = Vec::new();
        for d in 2..=10 {
            small.push(run(make_cube(d), 100_000, 8));
        }
        for d in 3..=10 {
            small.push(run(make_std_simplex(d), 100_000, 8));
        }
        let mid = run(make_cube(50), 100_000, 24);
        let big = run(make_cube(100), 1_000_000, 8);
        HeavyRuns { small, mid, big }
    })
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Composite Simpson integration on a smooth integrand.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    assert!(panels.is_multiple_of(2));
    let h = (b - a) / panels as f64;
    let mut s = f(a) + f(b);
    for i in 1..panels {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}
