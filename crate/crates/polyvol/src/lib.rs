//! Volume estimation for convex polytopes in halfspace form.
//!
//! The estimator anneals a Gaussian from a scale where its mass inside the
//! polytope is easy to measure up to one where the restriction is nearly
//! flat, multiplying ratio estimates along the way. Each restricted Gaussian
//! is sampled with a bouncy particle sampler: a piecewise-deterministic
//! process that moves in straight lines, bounces against the Gaussian
//! potential, and reflects specularly off facets, with constraint caches
//! updated in O(k) per event.
//!
//! Start with the `examples/` directory; each file is a small, runnable tour
//! of one capability:
//!
//! * `trajectory` - raw sampler events on a 2-d box, as a CSV event log.
//! * `cube_volume` - end-to-end volume estimate of a cube.
//! * `tuning` - how the event-rate and refresh-rate tuning behaves.
//! * `file_polytope` - the on-disk polytope format, write and read back.
//! * `scaling` - a miniature benchmark across dimensions with fitted slopes.
//!
//! Run one with `cargo run --release --example cube_volume`.
//!
//! The same functionality is exposed as a CLI (`cargo run --release --
//! volume --model cube --dim 20`) with JSON or CSV reports.

// `!(x > 0.0)` is the NaN-rejecting guard throughout the numerics: it fails
// closed when a quantity that must be strictly positive is NaN, which
// `x <= 0.0` would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bps;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod polytope;
pub mod rng;
pub mod volume;

pub use error::{Error, Result};
