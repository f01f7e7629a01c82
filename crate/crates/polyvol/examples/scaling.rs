//! Miniature benchmark: per dimension, binary-search the sample budget
//! until the median error over a few repeats lands in a target band, then
//! fit log-log slopes of time and budget against dimension.
//!
//! Desk-scale dimensions sit below the asymptotic regime, so the slopes
//! here are only indicative; the CLI `benchmark` subcommand runs the full
//! protocol.

use polyvol::harness::{run_benchmark, BenchmarkConfig};
use polyvol::polytope::make_cube;
use polyvol::volume::EstimatorConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = BenchmarkConfig::new(vec![6, 10, 16]);
    cfg.n0 = 2_000;
    cfg.repeats = 5;
    cfg.target_error = 0.08;
    cfg.error_band = 0.05;
    let base = EstimatorConfig::new(cfg.n0, 4);

    let report = run_benchmark("cube", make_cube, &cfg, &base)?;
    println!("dim   N_final   median rel err   median time");
    for r in &report.records {
        println!(
            "{:>3}  {:>8}   {:>13.4}   {:>9.3} s{}",
            r.dim,
            r.n_final,
            r.median_rel_error,
            r.median_time_s,
            if r.complete { "" } else { "  (incomplete)" }
        );
    }
    if let Some(t) = report.time_regression {
        println!("\ntime   ~ d^{:.2}  (r2 {:.3})", t.slope, t.r2);
    }
    if let Some(n) = report.n_regression {
        println!("budget ~ d^{:.2}  (r2 {:.3})", n.slope, n.r2);
    }
    Ok(())
}
