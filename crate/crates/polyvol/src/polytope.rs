//! Polytopes in halfspace form `{x : A x <= b}` with the origin strictly
//! interior, plus the cached quantities the sampler needs to process a
//! boundary reflection in O(k) time: per-row squared norms and the Gram table
//! `G[:, j] = A a_j` of the constraint rows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Relative tolerance deciding whether a ray moves towards a facet. A row is
/// considered only when `(Av)_i > DIR_EPS_REL * |a_i| * |v|`.
pub const DIR_EPS_REL: f64 = 1e-14;

/// A bounded region `{x : A x <= b}` described by `k` halfspaces in `R^d`.
///
/// `A` is stored row-major. Construction validates that no row is zero and
/// that every offset is strictly positive, so the origin is strictly interior.
/// Boundedness is not checked; the volume estimator rejects polytopes it can
/// prove unbounded along a coordinate axis.
#[derive(Clone, Debug, PartialEq)]
pub struct HPolytope {
    dim: usize,
    nrows: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    row_sq_norms: Vec<f64>,
    row_norms: Vec<f64>,
    /// Row-major `k x k` Gram table of the constraint rows; symmetric, so row
    /// `j` doubles as the column `A a_j`.
    gram: Vec<f64>,
}

impl HPolytope {
    /// Builds a polytope from a flat row-major constraint matrix and offsets.
    pub fn from_parts(dim: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        assert!(dim >= 1, "dimension must be at least 1");
        let nrows = b.len();
        assert!(nrows >= 1, "need at least one constraint row");
        assert_eq!(a.len(), nrows * dim, "constraint matrix shape mismatch");

        let mut row_sq_norms = Vec::with_capacity(nrows);
        let mut row_norms = Vec::with_capacity(nrows);
        for i in 0..nrows {
            let sq: f64 = a[i * dim..(i + 1) * dim].iter().map(|x| x * x).sum();
            if sq == 0.0 {
                return Err(Error::ZeroRow { row: i });
            }
            if !(b[i] > 0.0) {
                return Err(Error::OriginNotInterior {
                    row: i,
                    offset: b[i],
                });
            }
            row_sq_norms.push(sq);
            row_norms.push(sq.sqrt());
        }

        let mut gram = vec![0.0; nrows * nrows];
        for i in 0..nrows {
            for j in 0..=i {
                let dot = dot(&a[i * dim..(i + 1) * dim], &a[j * dim..(j + 1) * dim]);
                gram[i * nrows + j] = dot;
                gram[j * nrows + i] = dot;
            }
        }

        Ok(Self {
            dim,
            nrows,
            a,
            b,
            row_sq_norms,
            row_norms,
            gram,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    /// Constraint row `i` as a slice of length `dim`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn offsets(&self) -> &[f64] {
        &self.b
    }

    #[inline]
    pub fn row_sq_norms(&self) -> &[f64] {
        &self.row_sq_norms
    }

    #[inline]
    pub fn row_norms(&self) -> &[f64] {
        &self.row_norms
    }

    /// Column `j` of the Gram table, i.e. `A a_j`.
    #[inline]
    pub fn gram_col(&self, j: usize) -> &[f64] {
        &self.gram[j * self.nrows..(j + 1) * self.nrows]
    }

    /// Largest constraint offset; sets the scale for escape tolerances.
    pub fn max_offset(&self) -> f64 {
        self.b.iter().cloned().fold(0.0, f64::max)
    }

    /// Whether `x` satisfies every constraint up to an absolute slack `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        for i in 0..self.nrows {
            if dot(self.row(i), x) > self.b[i] + tol {
                return false;
            }
        }
        true
    }

    /// Writes `A x` into `out`.
    pub fn mat_vec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        assert_eq!(out.len(), self.nrows, "output length mismatch");
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    /// First boundary crossing of the ray `x + t v`, `t >= 0`, given cached
    /// `Ax` and `Av` and the velocity norm.
    ///
    /// Returns `(t, Some(row))` for the earliest crossing, with ties broken
    /// towards the smallest row index, or `(inf, None)` when no row is
    /// approached faster than the direction tolerance. Crossing times are
    /// clamped below at zero so a point within tolerance of a facet reflects
    /// immediately instead of stepping backwards.
    pub fn boundary_hit(&self, ax: &[f64], av: &[f64], v_norm: f64) -> (f64, Option<usize>) {
        self.boundary_hit_capped(ax, av, v_norm, f64::INFINITY)
    }

    /// As [`boundary_hit`](Self::boundary_hit), but only reports a crossing
    /// strictly earlier than `cap`; otherwise returns `(cap, None)`. The scan
    /// compares `b_i - (Ax)_i < t * (Av)_i` so a division is paid only when a
    /// row improves the current best.
    pub fn boundary_hit_capped(
        &self,
        ax: &[f64],
        av: &[f64],
        v_norm: f64,
        cap: f64,
    ) -> (f64, Option<usize>) {
        assert_eq!(ax.len(), self.nrows, "Ax cache length mismatch");
        assert_eq!(av.len(), self.nrows, "Av cache length mismatch");
        let eps = DIR_EPS_REL * v_norm;
        let mut best = cap;
        let mut face = None;
        for i in 0..self.nrows {
            let avi = av[i];
            if avi > eps * self.row_norms[i] {
                let slack = self.b[i] - ax[i];
                if slack <= 0.0 {
                    if 0.0 < best {
                        best = 0.0;
                        face = Some(i);
                    }
                } else if slack < best * avi {
                    best = slack / avi;
                    face = Some(i);
                }
            }
        }
        (best, face)
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += x[i] * y[i];
    }
    acc
}

/// What is known about a polytope beyond its constraints. Generated models
/// carry their exact log-volume; polytopes read from files do not.
#[derive(Clone, Debug)]
pub struct ModelInfo {
    pub name: String,
    pub dim: usize,
    /// `ln Vol(P)` when known in closed form.
    pub log_volume: Option<f64>,
    /// Radius of an origin-centred ball containing the polytope.
    pub bounding_radius: Option<f64>,
}

/// Axis-aligned cube `[-1, 1]^d`: rows alternate `x_j <= 1`, `-x_j <= 1`.
pub fn make_cube(dim: usize) -> (HPolytope, ModelInfo) {
    assert!(dim >= 1);
    let mut a = vec![0.0; 2 * dim * dim];
    let mut b = vec![1.0; 2 * dim];
    for j in 0..dim {
        a[(2 * j) * dim + j] = 1.0;
        a[(2 * j + 1) * dim + j] = -1.0;
    }
    let p = HPolytope::from_parts(dim, a, std::mem::take(&mut b)).expect("cube is valid");
    let info = ModelInfo {
        name: format!("cube({dim})"),
        dim,
        log_volume: Some(dim as f64 * std::f64::consts::LN_2),
        bounding_radius: Some((dim as f64).sqrt()),
    };
    (p, info)
}

/// Standard simplex `{x >= 0, sum x <= 1}` translated so its centroid sits at
/// the origin. Every offset becomes `1/(d+1)`.
pub fn make_std_simplex(dim: usize) -> (HPolytope, ModelInfo) {
    assert!(dim >= 1);
    let d = dim as f64;
    let k = dim + 1;
    let mut a = vec![0.0; k * dim];
    let b = vec![1.0 / (d + 1.0); k];
    for aj in a.iter_mut().take(dim) {
        *aj = 1.0;
    }
    for i in 1..k {
        a[i * dim + (i - 1)] = -1.0;
    }
    let p = HPolytope::from_parts(dim, a, b).expect("simplex is valid");
    let info = ModelInfo {
        name: format!("std_simplex({dim})"),
        dim,
        log_volume: Some(-ln_factorial(dim)),
        bounding_radius: Some((d * d + d - 1.0).sqrt() / (d + 1.0)),
    };
    (p, info)
}

/// Regular simplex with unit circumradius centred at the origin. Facet `i`
/// faces away from vertex `i`: row `-v_i`, offset `1/d` (the inradius).
pub fn make_iso_simplex(dim: usize) -> (HPolytope, ModelInfo) {
    assert!(dim >= 1);
    let d = dim as f64;
    let verts = iso_simplex_vertices(dim);
    let k = dim + 1;
    let mut a = vec![0.0; k * dim];
    let b = vec![1.0 / d; k];
    for i in 0..k {
        for j in 0..dim {
            a[i * dim + j] = -verts[i][j];
        }
    }
    let p = HPolytope::from_parts(dim, a, b).expect("simplex is valid");

    // Vol = |det(v_1 - v_0, ..., v_d - v_0)| / d!
    let mut m = vec![0.0; dim * dim];
    for c in 0..dim {
        for r in 0..dim {
            m[r * dim + c] = verts[c + 1][r] - verts[0][r];
        }
    }
    let log_volume = log_abs_det(&mut m, dim) - ln_factorial(dim);

    let info = ModelInfo {
        name: format!("iso_simplex({dim})"),
        dim,
        log_volume: Some(log_volume),
        bounding_radius: Some(1.0),
    };
    (p, info)
}

/// Vertices of the regular unit-circumradius simplex, via the Helmert
/// orthonormal basis of the sum-zero hyperplane in `R^(d+1)`.
fn iso_simplex_vertices(dim: usize) -> Vec<Vec<f64>> {
    let d = dim as f64;
    let scale = ((d + 1.0) / d).sqrt();
    let mut verts = vec![vec![0.0; dim]; dim + 1];
    for j in 1..=dim {
        let jf = j as f64;
        let norm = (jf * (jf + 1.0)).sqrt();
        for (i, v) in verts.iter_mut().enumerate() {
            let w = if i < j {
                1.0 / norm
            } else if i == j {
                -jf / norm
            } else {
                0.0
            };
            v[j - 1] = scale * w;
        }
    }
    verts
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|j| (j as f64).ln()).sum()
}

/// `ln |det M|` by LU with partial pivoting; `m` is row-major `n x n` scratch.
fn log_abs_det(m: &mut [f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..n {
        let mut piv = c;
        for r in c + 1..n {
            if m[r * n + c].abs() > m[piv * n + c].abs() {
                piv = r;
            }
        }
        if m[piv * n + c] == 0.0 {
            return f64::NEG_INFINITY;
        }
        if piv != c {
            for j in 0..n {
                m.swap(c * n + j, piv * n + j);
            }
        }
        let p = m[c * n + c];
        acc += p.abs().ln();
        for r in c + 1..n {
            let f = m[r * n + c] / p;
            if f != 0.0 {
                for j in c + 1..n {
                    m[r * n + j] -= f * m[c * n + j];
                }
            }
        }
    }
    acc
}

/// Writes a polytope in the text format read by [`read_polytope`]: a header
/// line `d k` followed by `k` rows of `d+1` numbers `a_1 ... a_d b`, printed
/// with 17 significant digits so the round trip is exact.
pub fn write_polytope(p: &HPolytope, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# halfspace polytope: rows are 'a_1 ... a_d b' for a.x <= b");
    let _ = writeln!(out, "{} {}", p.dim(), p.nrows());
    for i in 0..p.nrows() {
        let mut line = String::new();
        for v in p.row(i) {
            let _ = write!(line, "{v:.16e} ");
        }
        let _ = writeln!(out, "{line}{:.16e}", p.offsets()[i]);
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads the text format produced by [`write_polytope`]. Lines that are empty
/// or start with `#` are ignored; numbers may be in any `f64` syntax.
pub fn read_polytope(path: &Path) -> Result<(HPolytope, ModelInfo)> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut payload = text
        .lines()
        .enumerate()
        .map(|(idx, l)| (idx + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = payload
        .next()
        .ok_or_else(|| parse_err(text.lines().count().max(1), "missing header line".into()))?;
    let mut it = header.split_whitespace();
    let dim: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .filter(|&d| d >= 1)
        .ok_or_else(|| parse_err(hline, format!("bad header '{header}', expected 'd k'")))?;
    let nrows: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .filter(|&k| k >= 1)
        .ok_or_else(|| parse_err(hline, format!("bad header '{header}', expected 'd k'")))?;
    if it.next().is_some() {
        return Err(parse_err(hline, format!("trailing tokens in header '{header}'")));
    }

    let mut a = Vec::with_capacity(nrows * dim);
    let mut b = Vec::with_capacity(nrows);
    let mut row_lines = Vec::with_capacity(nrows);
    let mut last_line = hline;
    for (line, l) in payload {
        last_line = line;
        if b.len() == nrows {
            return Err(parse_err(line, format!("expected {nrows} rows, found more")));
        }
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("bad number '{t}'")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != dim + 1 {
            return Err(parse_err(
                line,
                format!("row has {} values, expected {}", vals.len(), dim + 1),
            ));
        }
        a.extend_from_slice(&vals[..dim]);
        b.push(vals[dim]);
        row_lines.push(line);
    }
    if b.len() != nrows {
        return Err(parse_err(
            last_line,
            format!("expected {nrows} rows, found {}", b.len()),
        ));
    }

    let p = HPolytope::from_parts(dim, a, b).map_err(|e| match e {
        Error::ZeroRow { row } => parse_err(row_lines[row], "constraint row is identically zero".into()),
        Error::OriginNotInterior { row, offset } => parse_err(
            row_lines[row],
            format!("offset {offset} is not strictly positive; origin must be interior"),
        ),
        other => other,
    })?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "file".into());
    let info = ModelInfo {
        name: format!("file:{stem}"),
        dim,
        log_volume: None,
        bounding_radius: None,
    };
    Ok((p, info))
}

/// Radius scale from axis ray extents: `sqrt(d)` times the largest distance
/// from the origin to the boundary along `+-e_j`. Exact for boxes; for very
/// eccentric polytopes it can undershoot the true circumradius, which only
/// widens the last annealing step (the default final correction stays
/// unbiased). Errors if some axis direction never meets a constraint, which
/// proves the polytope unbounded.
pub fn axis_extent_radius(p: &HPolytope) -> Result<f64> {
    let d = p.dim();
    let mut ext = vec![f64::INFINITY; 2 * d];
    for i in 0..p.nrows() {
        let row = p.row(i);
        let bi = p.offsets()[i];
        for j in 0..d {
            let c = row[j];
            if c > 0.0 {
                ext[2 * j] = ext[2 * j].min(bi / c);
            } else if c < 0.0 {
                ext[2 * j + 1] = ext[2 * j + 1].min(-bi / c);
            }
        }
    }
    let mut max_ext = 0.0f64;
    for (slot, e) in ext.iter().enumerate() {
        if !e.is_finite() {
            return Err(Error::Unbounded { axis: slot / 2 });
        }
        max_ext = max_ext.max(*e);
    }
    Ok((d as f64).sqrt() * max_ext)
}
