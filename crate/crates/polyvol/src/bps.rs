//! Bouncy particle sampler restricted to a polytope.
//!
//! The particle moves in straight lines. Each segment ends at whichever comes
//! first: a gradient bounce against the Gaussian potential (exact inversion
//! of the inhomogeneous event rate), a velocity refresh, an output tick, or a
//! facet crossing, which reflects the velocity specularly. The constraint
//! caches `Ax` and `Av` and the scalars `<x,v>`, `|v|^2`, `|x|^2` are updated
//! in O(k) or O(1) per event; dense matvecs happen only at refresh events,
//! at verified outputs, and on the [`RAW_REBUILD_INTERVAL`] cadence of raw
//! stepping loops.
//!
//! [`run_safeguarded_each`] wraps the raw chain in a checkpoint/verify loop:
//! every output endpoint is checked against the polytope with a dense
//! recomputation, and a failed check rolls the segment back and replays it
//! with compensated (Neumaier) accumulation, then falls back to resampling
//! the velocity. The counts of such repairs are reported, not hidden.

use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::polytope::{dot, HPolytope, DIR_EPS_REL};
use crate::rng::Stream;

/// Isotropic Gaussian `pi(x) ~ exp(-|x|^2 / (2 sigma^2))`, kept as the
/// coefficient `a = 1/(2 sigma^2)` of `exp(-a |x|^2)`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianTarget {
    sigma: f64,
    coeff: f64,
}

impl GaussianTarget {
    pub fn from_sigma(sigma: f64) -> Self {
        assert!(sigma > 0.0 && sigma.is_finite(), "sigma must be positive");
        Self {
            sigma,
            coeff: 0.5 / (sigma * sigma),
        }
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Coefficient `a` in `exp(-a |x|^2)`.
    #[inline]
    pub fn coeff(&self) -> f64 {
        self.coeff
    }

    /// Unnormalised log density at a point with squared norm `sq_norm`.
    #[inline]
    pub fn log_density(&self, sq_norm: f64) -> f64 {
        -self.coeff * sq_norm
    }
}

/// Rates and tolerances for one sampling run.
#[derive(Clone, Copy, Debug)]
pub struct SamplerParams {
    /// Rate of full velocity refreshes; zero disables them.
    pub lambda_refresh: f64,
    /// Rate of the output clock; samples are the positions at its ticks.
    pub lambda_out: f64,
    /// Slack used when verifying output endpoints and detecting facet
    /// contact during reflection cascades.
    pub escape_tol: f64,
    /// Compensated replays allowed per output segment before the velocity is
    /// resampled.
    pub max_escalations: u32,
}

impl SamplerParams {
    pub fn new(p: &HPolytope, lambda_refresh: f64, lambda_out: f64) -> Self {
        assert!(
            lambda_refresh >= 0.0 && lambda_refresh.is_finite(),
            "refresh rate must be finite and non-negative"
        );
        assert!(
            lambda_out > 0.0 && lambda_out.is_finite(),
            "output rate must be positive"
        );
        Self {
            lambda_refresh,
            lambda_out,
            escape_tol: default_escape_tol(p),
            max_escalations: 1,
        }
    }
}

/// Default endpoint slack, scaled to the constraint offsets.
pub fn default_escape_tol(p: &HPolytope) -> f64 {
    1e-9 * p.max_offset().max(1.0)
}

/// Longest stretch of raw (unverified) events a stepping loop may run
/// before calling [`BpsState::rebuild_caches`]. Bounce and flight updates
/// feed cache error back into each other, so drift left alone grows
/// exponentially in the event count; over this horizon it stays at the
/// rounding floor. The safeguarded runner needs no such cadence because it
/// rebuilds at every verified output.
pub const RAW_REBUILD_INTERVAL: u64 = 64;

/// First time `t` with `Integral_0^t max(0, 2a(m + s q)) ds = u`, the exact
/// inversion of the Gaussian bounce clock along a line. `m = <x,v>`,
/// `q = |v|^2 > 0`, `a > 0`, `u > 0` the exponential threshold.
#[inline]
pub fn bounce_time(m: f64, q: f64, a: f64, u: f64) -> f64 {
    debug_assert!(q > 0.0 && a > 0.0 && u > 0.0);
    if m >= 0.0 {
        // (sqrt(m^2 + uq/a) - m)/q without cancellation.
        u / (a * ((m * m + u * q / a).sqrt() + m))
    } else {
        // Rate is zero until s = -m/q, then grows linearly.
        (-m + (u * q / a).sqrt()) / q
    }
}

/// Raw PDMP event kinds; [`BpsState::step`] returns the one it executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    /// Gradient bounce: velocity reflected about the position direction.
    Bounce,
    /// Specular reflection off the given facet row.
    Reflect(usize),
    /// Full velocity resample from the standard normal.
    Refresh,
    /// Output tick; the current position is a sample.
    Output,
}

/// Tallies of executed events.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EventCounters {
    pub bounces: u64,
    pub reflections: u64,
    pub refreshes: u64,
    pub outputs: u64,
}

impl EventCounters {
    pub fn total(&self) -> u64 {
        self.bounces + self.reflections + self.refreshes + self.outputs
    }

    /// Tally delta relative to an earlier snapshot of the same counters.
    pub fn since(&self, earlier: EventCounters) -> EventCounters {
        EventCounters {
            bounces: self.bounces - earlier.bounces,
            reflections: self.reflections - earlier.reflections,
            refreshes: self.refreshes - earlier.refreshes,
            outputs: self.outputs - earlier.outputs,
        }
    }
}

impl std::ops::AddAssign for EventCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.bounces += rhs.bounces;
        self.reflections += rhs.reflections;
        self.refreshes += rhs.refreshes;
        self.outputs += rhs.outputs;
    }
}

/// Cache deviations reported by [`BpsState::cache_drift`].
#[derive(Clone, Copy, Debug)]
pub struct CacheDrift {
    /// Worst entry of `|A x_cached - A x_dense|`.
    pub ax: f64,
    /// Worst entry of `|A v_cached - A v_dense|`.
    pub av: f64,
    /// Worst of the `|x|^2`, `<x,v>`, `|v|^2` deviations.
    pub scalars: f64,
}

/// Counts of safeguard interventions: `m_count` compensated replays,
/// `r_count` velocity resamples after a replay still escaped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NumericsStats {
    pub m_count: u64,
    pub r_count: u64,
}

impl std::ops::AddAssign for NumericsStats {
    fn add_assign(&mut self, rhs: Self) {
        self.m_count += rhs.m_count;
        self.r_count += rhs.r_count;
    }
}

/// Full sampler state: position, velocity, constraint caches, incremental
/// scalars, event tallies and the random stream. Cloning it is exactly a
/// checkpoint.
#[derive(Clone, Debug)]
pub struct BpsState {
    x: Vec<f64>,
    v: Vec<f64>,
    ax: Vec<f64>,
    av: Vec<f64>,
    /// `<x,v>`, `|v|^2`, `|x|^2`, maintained incrementally.
    xv: f64,
    vv: f64,
    xx: f64,
    t: f64,
    counters: EventCounters,
    rng: Stream,
    /// When set, position updates use Neumaier accumulation into the carry
    /// buffers below; switched on only while replaying an escaped segment.
    compensated: bool,
    cx: Vec<f64>,
    cax: Vec<f64>,
}

/// Opaque saved state for exact rollback.
#[derive(Clone, Debug)]
pub struct Checkpoint(BpsState);

enum PendingClock {
    Bounce,
    Refresh,
    Output,
}

impl BpsState {
    /// Starts a chain at `x0`, which must lie inside the polytope, with a
    /// standard normal velocity drawn from `rng`.
    pub fn new(p: &HPolytope, x0: &[f64], mut rng: Stream) -> Self {
        assert_eq!(x0.len(), p.dim(), "start point dimension mismatch");
        debug_assert!(p.contains(x0, default_escape_tol(p)), "start point must be interior");
        let v: Vec<f64> = (0..p.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut ax = vec![0.0; p.nrows()];
        let mut av = vec![0.0; p.nrows()];
        p.mat_vec(x0, &mut ax);
        p.mat_vec(&v, &mut av);
        let xv = dot(x0, &v);
        let vv = dot(&v, &v);
        let xx = dot(x0, x0);
        Self {
            x: x0.to_vec(),
            v,
            ax,
            av,
            xv,
            vv,
            xx,
            t: 0.0,
            counters: EventCounters::default(),
            rng,
            compensated: false,
            cx: vec![0.0; p.dim()],
            cax: vec![0.0; p.nrows()],
        }
    }

    /// Starts at the origin, which is interior by construction.
    pub fn with_origin(p: &HPolytope, rng: Stream) -> Self {
        Self::new(p, &vec![0.0; p.dim()], rng)
    }

    #[inline]
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    #[inline]
    pub fn velocity(&self) -> &[f64] {
        &self.v
    }

    /// Cached `|x|^2`; exact at output samples, where the dense verification
    /// has just rebuilt it.
    #[inline]
    pub fn radius_sq(&self) -> f64 {
        self.xx
    }

    /// Worst absolute deviation of the incremental caches from a dense
    /// recomputation; a fidelity diagnostic, not used on the hot path.
    pub fn cache_drift(&self, p: &HPolytope) -> CacheDrift {
        let mut ax = vec![0.0; p.nrows()];
        let mut av = vec![0.0; p.nrows()];
        p.mat_vec(&self.x, &mut ax);
        p.mat_vec(&self.v, &mut av);
        let worst = |dense: &[f64], cached: &[f64]| {
            dense
                .iter()
                .zip(cached)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        CacheDrift {
            ax: worst(&ax, &self.ax),
            av: worst(&av, &self.av),
            scalars: [
                (dot(&self.x, &self.x) - self.xx).abs(),
                (dot(&self.x, &self.v) - self.xv).abs(),
                (dot(&self.v, &self.v) - self.vv).abs(),
            ]
            .into_iter()
            .fold(0.0, f64::max),
        }
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.t
    }

    #[inline]
    pub fn counters(&self) -> EventCounters {
        self.counters
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint(self.clone())
    }

    /// Saves into an existing checkpoint, reusing its buffers.
    pub fn checkpoint_into(&self, cp: &mut Checkpoint) {
        cp.0.clone_from(self);
    }

    pub fn restore(&mut self, cp: &Checkpoint) {
        self.clone_from(&cp.0);
    }

    /// Executes one PDMP segment: draws the three clocks, finds the earliest
    /// facet crossing before them, advances, and applies the winning event.
    pub fn step(&mut self, p: &HPolytope, target: &GaussianTarget, params: &SamplerParams) -> Event {
        let u: f64 = Exp1.sample(&mut self.rng);
        let tau_evt = bounce_time(self.xv, self.vv, target.coeff(), u);
        let tau_refresh = if params.lambda_refresh > 0.0 {
            let e: f64 = Exp1.sample(&mut self.rng);
            e / params.lambda_refresh
        } else {
            f64::INFINITY
        };
        let e_out: f64 = Exp1.sample(&mut self.rng);
        let tau_out = e_out / params.lambda_out;

        let mut cap = tau_evt;
        let mut pending = PendingClock::Bounce;
        if tau_refresh < cap {
            cap = tau_refresh;
            pending = PendingClock::Refresh;
        }
        if tau_out < cap {
            cap = tau_out;
            pending = PendingClock::Output;
        }

        let (tau, hit) = p.boundary_hit_capped(&self.ax, &self.av, self.vv.sqrt(), cap);
        self.advance(tau);
        match hit {
            Some(face) => {
                self.reflect_cascade(p, params, face);
                Event::Reflect(face)
            }
            None => match pending {
                PendingClock::Bounce => {
                    self.bounce_gradient(p);
                    Event::Bounce
                }
                PendingClock::Refresh => {
                    self.refresh_velocity(p);
                    Event::Refresh
                }
                PendingClock::Output => {
                    self.counters.outputs += 1;
                    Event::Output
                }
            },
        }
    }

    /// Runs segments until the next output tick; the sample is then [`x`](Self::x).
    pub fn advance_to_output(&mut self, p: &HPolytope, target: &GaussianTarget, params: &SamplerParams) {
        while self.step(p, target, params) != Event::Output {}
    }

    fn advance(&mut self, tau: f64) {
        debug_assert!(tau >= 0.0);
        if tau > 0.0 {
            if self.compensated {
                for i in 0..self.x.len() {
                    neumaier_add(&mut self.x[i], &mut self.cx[i], tau * self.v[i]);
                }
                for i in 0..self.ax.len() {
                    neumaier_add(&mut self.ax[i], &mut self.cax[i], tau * self.av[i]);
                }
            } else {
                for (xi, vi) in self.x.iter_mut().zip(&self.v) {
                    *xi += tau * vi;
                }
                for (axi, avi) in self.ax.iter_mut().zip(&self.av) {
                    *axi += tau * avi;
                }
            }
            // |x|^2 first: it uses the pre-advance <x,v>.
            self.xx += tau * (2.0 * self.xv + tau * self.vv);
            self.xv += tau * self.vv;
            self.t += tau;
        }
    }

    /// Specular reflection off facet `face`: `v -= 2 (<a,v>/|a|^2) a`, with
    /// the `Av` cache updated through the Gram column and `<x,v>` in O(1).
    pub fn reflect_boundary(&mut self, p: &HPolytope, face: usize) {
        let beta = 2.0 * self.av[face] / p.row_sq_norms()[face];
        for (vi, ai) in self.v.iter_mut().zip(p.row(face)) {
            *vi -= beta * ai;
        }
        for (avi, gi) in self.av.iter_mut().zip(p.gram_col(face)) {
            *avi -= beta * gi;
        }
        self.xv -= beta * self.ax[face];
        self.counters.reflections += 1;
    }

    /// Reflects off `face`, then clears any remaining outward components at
    /// facets the point is touching (corner contact), up to `d` extra
    /// reflections before falling back to a velocity resample.
    fn reflect_cascade(&mut self, p: &HPolytope, params: &SamplerParams, face: usize) {
        self.reflect_boundary(p, face);
        let mut extra = 0usize;
        loop {
            let eps = DIR_EPS_REL * self.vv.sqrt();
            let b = p.offsets();
            let mut exiting = None;
            // Parallel scan over four row-indexed tables; an iterator chain
            // here would obscure the contact test.
            #[allow(clippy::needless_range_loop)]
            for j in 0..p.nrows() {
                if self.ax[j] > b[j] - params.escape_tol && self.av[j] > eps * p.row_norms()[j] {
                    exiting = Some(j);
                    break;
                }
            }
            let Some(j) = exiting else { return };
            if extra >= p.dim() {
                self.refresh_velocity(p);
                return;
            }
            self.reflect_boundary(p, j);
            extra += 1;
        }
    }

    /// Gradient bounce: reflection of the velocity about the position
    /// direction, `v -= 2 (<x,v>/|x|^2) x`. At the origin the direction is
    /// undefined and a refresh is executed instead.
    ///
    /// The coefficient divides by `|x|^2`, so near the origin it amplifies
    /// the absolute error of the incremental scalars; both are rebuilt from
    /// the vectors here, which is O(d) like the velocity update itself.
    pub fn bounce_gradient(&mut self, p: &HPolytope) {
        self.xx = dot(&self.x, &self.x);
        self.xv = dot(&self.x, &self.v);
        if !(self.xx > 0.0) {
            self.refresh_velocity(p);
            return;
        }
        let beta = 2.0 * self.xv / self.xx;
        for (vi, xi) in self.v.iter_mut().zip(&self.x) {
            *vi -= beta * xi;
        }
        for (avi, axi) in self.av.iter_mut().zip(&self.ax) {
            *avi -= beta * axi;
        }
        self.xv = -self.xv;
        self.counters.bounces += 1;
    }

    /// Draws a fresh standard normal velocity and rebuilds `Av` densely.
    pub fn refresh_velocity(&mut self, p: &HPolytope) {
        for vi in self.v.iter_mut() {
            *vi = StandardNormal.sample(&mut self.rng);
        }
        p.mat_vec(&self.v, &mut self.av);
        self.vv = dot(&self.v, &self.v);
        self.xv = dot(&self.x, &self.v);
        self.counters.refreshes += 1;
    }

    /// Folds carries and rebuilds every cache densely from the vectors:
    /// `Ax`, `Av` and the incremental scalars. The safeguarded runner calls
    /// this at every output so cache error cannot persist across segments
    /// (the bounce couples `Ax` error into `Av` with a coefficient that can
    /// exceed one, so anything carried over would compound exponentially);
    /// raw stepping loops must call it at least every
    /// [`RAW_REBUILD_INTERVAL`] events for the same reason.
    pub fn rebuild_caches(&mut self, p: &HPolytope) {
        self.fold_carries();
        p.mat_vec(&self.x, &mut self.ax);
        p.mat_vec(&self.v, &mut self.av);
        self.xx = dot(&self.x, &self.x);
        self.xv = dot(&self.x, &self.v);
        self.vv = dot(&self.v, &self.v);
    }

    /// Rebuilds all caches densely and checks every constraint with slack
    /// `tol`.
    fn verify_at_output(&mut self, p: &HPolytope, tol: f64) -> bool {
        self.rebuild_caches(p);
        self.ax.iter().zip(p.offsets()).all(|(axi, bi)| *axi <= bi + tol)
    }

    fn fold_carries(&mut self) {
        for (xi, c) in self.x.iter_mut().zip(self.cx.iter_mut()) {
            *xi += *c;
            *c = 0.0;
        }
        for (axi, c) in self.ax.iter_mut().zip(self.cax.iter_mut()) {
            *axi += *c;
            *c = 0.0;
        }
    }

    fn corrupt_position(&mut self, p: &HPolytope) {
        self.x[0] += 1e3 * (1.0 + p.max_offset());
    }
}

#[inline]
fn neumaier_add(sum: &mut f64, carry: &mut f64, term: f64) {
    let t = *sum + term;
    *carry += if sum.abs() >= term.abs() {
        (*sum - t) + term
    } else {
        (term - t) + *sum
    };
    *sum = t;
}

/// Test hook for the safeguard: corrupts the position at one emitted sample
/// for a given number of consecutive attempts. One attempt exercises the
/// compensated replay; two exhaust it and force a velocity resample.
#[derive(Clone, Copy, Debug)]
pub struct FaultInjection {
    pub at_sample: u64,
    pub attempts: u32,
}

/// Emits `n` samples through `sink(index, state)`, verifying every output
/// endpoint against the polytope. An escaped endpoint rolls the segment back
/// to its checkpoint and replays it with compensated accumulation (counted in
/// `m_count`); if replays are exhausted the velocity is resampled at the
/// checkpoint (counted in `r_count`) and the segment rerun.
pub fn run_safeguarded_each(
    state: &mut BpsState,
    p: &HPolytope,
    target: &GaussianTarget,
    params: &SamplerParams,
    n: u64,
    sink: impl FnMut(u64, &BpsState),
) -> NumericsStats {
    run_safeguarded_each_with_fault(state, p, target, params, n, None, sink)
}

/// [`run_safeguarded_each`] with an optional injected fault; see
/// [`FaultInjection`].
pub fn run_safeguarded_each_with_fault(
    state: &mut BpsState,
    p: &HPolytope,
    target: &GaussianTarget,
    params: &SamplerParams,
    n: u64,
    fault: Option<FaultInjection>,
    mut sink: impl FnMut(u64, &BpsState),
) -> NumericsStats {
    let mut stats = NumericsStats::default();
    let mut cp = state.checkpoint();
    for s in 0..n {
        state.checkpoint_into(&mut cp);
        let mut attempt: u32 = 0;
        let mut resamples: u32 = 0;
        loop {
            state.advance_to_output(p, target, params);
            if let Some(f) = fault {
                if f.at_sample == s && attempt < f.attempts {
                    state.corrupt_position(p);
                }
            }
            if state.verify_at_output(p, params.escape_tol) {
                break;
            }
            if attempt < params.max_escalations {
                state.restore(&cp);
                stats.m_count += 1;
            } else {
                // The replay has already failed deterministically, so the
                // RNG must not roll back with the rest of the state: a full
                // restore would redraw the same velocity on every attempt.
                // Keeping the advanced stream makes each resample explore a
                // genuinely new trajectory from the checkpoint.
                let rng = state.rng.clone();
                state.restore(&cp);
                state.rng = rng;
                stats.r_count += 1;
                resamples += 1;
                assert!(
                    resamples <= 64,
                    "sampler cannot re-enter the polytope; geometry or tolerances are inconsistent"
                );
                state.refresh_velocity(p);
            }
            attempt += 1;
            state.compensated = true;
        }
        state.compensated = false;
        sink(s, state);
    }
    stats
}

/// Collecting wrapper around [`run_safeguarded_each`].
pub fn run_safeguarded(
    state: &mut BpsState,
    p: &HPolytope,
    target: &GaussianTarget,
    params: &SamplerParams,
    n: u64,
) -> (Vec<Vec<f64>>, NumericsStats) {
    let mut out = Vec::with_capacity(n as usize);
    let stats = run_safeguarded_each(state, p, target, params, n, |_, st| {
        out.push(st.x().to_vec());
    });
    (out, stats)
}
