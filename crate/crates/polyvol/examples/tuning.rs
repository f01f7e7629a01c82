//! Shows the two-stage rate tuning on a 10-dimensional cube.
//!
//! First the output rate is set from a measured event rate so that about d
//! events separate consecutive samples. Then the refresh rate is
//! hill-climbed: pilots compare the worst coordinate ESS against the radius
//! ESS to pick a direction, and a step is kept only when ESS per unit of
//! work improves.

use polyvol::bps::{BpsState, GaussianTarget};
use polyvol::diagnostics::{run_pilot, tune_output_rate, tune_refresh_rate};
use polyvol::polytope::make_cube;
use polyvol::rng::{stream, StreamKind};

fn main() {
    let (p, _) = make_cube(10);
    let target = GaussianTarget::from_sigma(1.0);
    let mut state = BpsState::with_origin(&p, stream(3, StreamKind::Tuning, 0, 0));

    let lambda_out = tune_output_rate(&mut state, &p, &target, 1.0);
    println!("tuned output rate: lambda_out = {lambda_out:.4}");
    println!("(the sampler's event rate divided by d, so about d events per sample)\n");

    println!("refresh rate   ess_min   ess_norm   ess per 1k work units");
    for rate in [0.1, 1.0, 10.0] {
        let pilot = run_pilot(&mut state, &p, &target, rate, lambda_out, 200);
        println!(
            "{:>12.1}   {:>7.1}   {:>8.1}   {:>10.4}",
            rate,
            pilot.report.ess_min,
            pilot.report.ess_norm,
            1000.0 * pilot.report.ess_min.min(pilot.report.ess_norm) / pilot.work
        );
    }

    let (tuned, report) = tune_refresh_rate(&mut state, &p, &target, 1.0, lambda_out, 200);
    println!("\naccepted refresh rate: {tuned:.3}");
    println!(
        "final pilot: ess_min {:.1}, ess_norm {:.1}, ess/sample {:.3}",
        report.ess_min, report.ess_norm, report.ess_per_sample
    );
}
