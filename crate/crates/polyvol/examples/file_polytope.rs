//! Round-trips a polytope through the on-disk constraint format.
//!
//! The format is line-oriented: `#` comments, a `dim nrows` header, then
//! one `a_1 ... a_d b` row per halfspace `a . x <= b`. Coefficients are
//! written with full precision, so write -> read reproduces the polytope
//! bit for bit.

use polyvol::harness::build_model_from_file;
use polyvol::polytope::{make_std_simplex, write_polytope};
use polyvol::volume::{estimate_volume, EstimatorConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (p, _info) = make_std_simplex(3);
    let path = std::env::temp_dir().join("std_simplex_3.poly");
    write_polytope(&p, &path)?;

    println!("--- {} ---", path.display());
    print!("{}", std::fs::read_to_string(&path)?);
    println!("---");

    let (q, file_info) = build_model_from_file(&path)?;
    assert_eq!(p, q, "round trip must be exact");
    println!(
        "read back '{}': dim {}, {} constraints, identical to the original",
        file_info.name,
        q.dim(),
        q.nrows()
    );

    // File models carry no exact volume; the estimate stands alone.
    let est = estimate_volume(&q, &file_info, &EstimatorConfig::new(20_000, 2))?;
    println!(
        "estimated volume {:.4} x 10^{} (exact: 1/3! = 0.1667)",
        est.mantissa, est.exp10
    );
    Ok(())
}
