//! Records raw sampler events on a 2-d box and saves them as CSV.
//!
//! The event log has one row per executed event (time, kind, position);
//! plotting the positions joined by straight segments reproduces the
//! piecewise-linear trajectory, with reflections landing exactly on the
//! boundary.

use polyvol::harness::{run_sample, SampleConfig};
use polyvol::polytope::make_cube;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (p, _) = make_cube(2);
    let cfg = SampleConfig {
        sigma: 1.0,
        samples: 200,
        seed: 7,
        lambda_refresh: None,
        event_log: true,
    };
    let out = run_sample(&p, &cfg)?;

    std::fs::write("trajectory_events.csv", out.event_log_csv.as_deref().unwrap())?;
    std::fs::write("trajectory_samples.csv", &out.samples_csv)?;

    println!("wrote trajectory_events.csv and trajectory_samples.csv");
    println!(
        "events: {} bounces, {} reflections, {} refreshes, {} outputs",
        out.events.bounces, out.events.reflections, out.events.refreshes, out.events.outputs
    );
    Ok(())
}
