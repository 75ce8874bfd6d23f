//! Piecewise linear and quadratic approximations of softplus(x) = log(1 + eˣ).
//!
//! Intervals are left-open and right-closed: segment k of a table with
//! breakpoints c₀ < … < c_{m−1} is (c_{k−1}, c_k], with c_{−1} = −∞ and c_m = +∞.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::numerics::softplus;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPieceTable {
    pub breakpoints: [f64; 5],
    pub intercepts: [f64; 6],
    pub slopes: [f64; 6],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticPieceTable {
    pub breakpoints: [f64; 4],
    pub intercepts: [f64; 5],
    /// ρ per segment
    pub linear: [f64; 5],
    /// ζ per segment
    pub quadratic: [f64; 5],
}

pub const LINEAR_TABLE: LinearPieceTable = LinearPieceTable {
    breakpoints: [-5.0, -1.701, 0.0, 1.702, 5.0],
    intercepts: [0.0, 0.1938, 0.6405, 0.6405, 0.1939, 0.0],
    slopes: [0.0, 0.0426, 0.3052, 0.6950, 0.9574, 1.0],
};

pub const QUADRATIC_TABLE: QuadraticPieceTable = QuadraticPieceTable {
    breakpoints: [-5.0, -1.7, 1.7, 5.0],
    intercepts: [0.0, 0.3893, 0.6962, 0.3894, 0.0],
    linear: [0.0, 0.1696, 0.5000, 0.8303, 1.0],
    quadratic: [0.0, 0.0189, 0.1138, 0.0190, 0.0],
};

/// Index of the left-open, right-closed segment containing `x`.
fn segment_index(breakpoints: &[f64], x: f64) -> usize {
    breakpoints
        .iter()
        .position(|&c| x <= c)
        .unwrap_or(breakpoints.len())
}

impl LinearPieceTable {
    pub fn segment(&self, x: f64) -> usize {
        segment_index(&self.breakpoints, x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.segment(x);
        self.intercepts[k] + self.slopes[k] * x
    }
}

impl QuadraticPieceTable {
    pub fn segment(&self, x: f64) -> usize {
        segment_index(&self.breakpoints, x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.segment(x);
        self.intercepts[k] + self.linear[k] * x + self.quadratic[k] * x * x
    }
}

pub fn softplus_linear(x: f64) -> f64 {
    LINEAR_TABLE.eval(x)
}

pub fn softplus_quadratic(x: f64) -> f64 {
    QUADRATIC_TABLE.eval(x)
}

/// Per-observation constants φᵢ, ρᵢ, ζᵢ plus the segment indices they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseCoefficients {
    pub phi: DVector<f64>,
    pub rho: DVector<f64>,
    pub zeta: DVector<f64>,
    pub linear_segments: Vec<u8>,
    pub quadratic_segments: Vec<u8>,
}

impl PiecewiseCoefficients {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// True when both segment assignments agree observation by observation.
    pub fn same_segments(&self, other: &Self) -> bool {
        self.linear_segments == other.linear_segments
            && self.quadratic_segments == other.quadratic_segments
    }
}

pub fn segment_coefficients(z_hat: &[f64]) -> PiecewiseCoefficients {
    let n = z_hat.len();
    let mut linear_segments = Vec::with_capacity(n);
    let mut quadratic_segments = Vec::with_capacity(n);
    for &z in z_hat {
        linear_segments.push(LINEAR_TABLE.segment(z) as u8);
        quadratic_segments.push(QUADRATIC_TABLE.segment(z) as u8);
    }
    let phi = DVector::from_iterator(
        n,
        linear_segments
            .iter()
            .map(|&k| LINEAR_TABLE.slopes[k as usize]),
    );
    let rho = DVector::from_iterator(
        n,
        quadratic_segments
            .iter()
            .map(|&k| QUADRATIC_TABLE.linear[k as usize]),
    );
    let zeta = DVector::from_iterator(
        n,
        quadratic_segments
            .iter()
            .map(|&k| QUADRATIC_TABLE.quadratic[k as usize]),
    );
    PiecewiseCoefficients {
        phi,
        rho,
        zeta,
        linear_segments,
        quadratic_segments,
    }
}

/// `size` equispaced points on [lo, hi], both ends included.
pub fn grid(lo: f64, hi: f64, size: usize) -> Vec<f64> {
    match size {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (size - 1) as f64;
            (0..size).map(|i| lo + step * i as f64).collect()
        }
    }
}

/// Σ (f(x) − softplus(x))² over an equispaced grid on [−5, 5].
pub fn table_sse(f: impl Fn(f64) -> f64, grid_size: usize) -> f64 {
    grid(-5.0, 5.0, grid_size)
        .into_iter()
        .map(|x| (f(x) - softplus(x)).powi(2))
        .sum()
}

pub fn linear_table_sse(grid_size: usize) -> f64 {
    table_sse(softplus_linear, grid_size)
}

pub fn quadratic_table_sse(grid_size: usize) -> f64 {
    table_sse(softplus_quadratic, grid_size)
}

/// max |f(x) − softplus(x)| over an equispaced grid on [lo, hi].
pub fn max_abs_error(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> f64 {
    grid(lo, hi, points)
        .into_iter()
        .map(|x| (f(x) - softplus(x)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakpointFit {
    pub breakpoints: Vec<f64>,
    pub sse: f64,
    pub r_squared: f64,
}

/// Lattice of candidate knots strictly inside (−5, 5).
const LATTICE_STEP: f64 = 0.05;
/// Above this many candidate tuples the search starts on a coarser lattice.
const EXHAUSTIVE_LIMIT: u64 = 2_000_000;

fn lattice(step_multiple: usize) -> Vec<f64> {
    let cells = (10.0 / LATTICE_STEP).round() as usize;
    (1..cells)
        .filter(|k| k % step_multiple == 0)
        .map(|k| (k as f64 - cells as f64 / 2.0) * LATTICE_STEP)
        .collect()
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i as u64 + 1))
}

/// Tail sums over grid points strictly greater than a knot, for O(1) Gram entries
/// of the hinge basis {1, x, (x − k₁)₊, …}.
struct TailSums {
    x: Vec<f64>,
    f: Vec<f64>,
    // suffix sums of 1, x, x², f, f·x; entry i covers points i..
    s0: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    sf: Vec<f64>,
    sfx: Vec<f64>,
    ff: f64,
}

impl TailSums {
    fn new(grid_size: usize) -> Self {
        let x = grid(-5.0, 5.0, grid_size);
        let f: Vec<f64> = x.iter().map(|&v| softplus(v)).collect();
        let n = x.len();
        let mut s0 = vec![0.0; n + 1];
        let mut s1 = vec![0.0; n + 1];
        let mut s2 = vec![0.0; n + 1];
        let mut sf = vec![0.0; n + 1];
        let mut sfx = vec![0.0; n + 1];
        for i in (0..n).rev() {
            s0[i] = s0[i + 1] + 1.0;
            s1[i] = s1[i + 1] + x[i];
            s2[i] = s2[i + 1] + x[i] * x[i];
            sf[i] = sf[i + 1] + f[i];
            sfx[i] = sfx[i + 1] + f[i] * x[i];
        }
        let ff = f.iter().map(|v| v * v).sum();
        Self {
            x,
            f,
            s0,
            s1,
            s2,
            sf,
            sfx,
            ff,
        }
    }

    fn first_above(&self, knot: f64) -> usize {
        self.x.partition_point(|&v| v <= knot)
    }

    /// SSE from normal equations; fast but loses a few digits to cancellation.
    fn sse(&self, knots: &[f64], starts: &[usize]) -> f64 {
        let m = knots.len() + 2;
        let mut gram = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        let (t0, t1, t2) = (self.s0[0], self.s1[0], self.s2[0]);
        gram[(0, 0)] = t0;
        gram[(0, 1)] = t1;
        gram[(1, 1)] = t2;
        rhs[0] = self.sf[0];
        rhs[1] = self.sfx[0];
        for (a, (&ka, &ia)) in knots.iter().zip(starts).enumerate() {
            let (c0, c1, c2) = (self.s0[ia], self.s1[ia], self.s2[ia]);
            gram[(0, a + 2)] = c1 - ka * c0;
            gram[(1, a + 2)] = c2 - ka * c1;
            rhs[a + 2] = self.sfx[ia] - ka * self.sf[ia];
            for (b, (&kb, &ib)) in knots.iter().zip(starts).enumerate().skip(a) {
                // knots are increasing, so the overlap starts at the larger knot
                let i = ia.max(ib);
                gram[(a + 2, b + 2)] =
                    self.s2[i] - (ka + kb) * self.s1[i] + ka * kb * self.s0[i];
            }
        }
        for r in 0..m {
            for c in 0..r {
                gram[(r, c)] = gram[(c, r)];
            }
        }
        match gram.cholesky() {
            Some(ch) => {
                let coef = ch.solve(&rhs);
                (self.ff - coef.dot(&rhs)).max(0.0)
            }
            None => f64::INFINITY,
        }
    }

    /// SSE from an explicit least-squares fit on the grid.
    fn exact_sse(&self, knots: &[f64]) -> f64 {
        let n = self.x.len();
        let m = knots.len() + 2;
        let design = DMatrix::from_fn(n, m, |i, j| match j {
            0 => 1.0,
            1 => self.x[i],
            _ => (self.x[i] - knots[j - 2]).max(0.0),
        });
        let target = DVector::from_column_slice(&self.f);
        let qr = design.clone().qr();
        let qt_y = qr.q().transpose() * &target;
        let coef = qr
            .r()
            .solve_upper_triangular(&qt_y)
            .unwrap_or_else(|| DVector::zeros(m));
        (design * coef - target).norm_squared()
    }

    fn total_ss(&self) -> f64 {
        let n = self.x.len() as f64;
        let mean = self.sf[0] / n;
        self.ff - n * mean * mean
    }
}

fn combinations(count: usize, k: usize) -> Vec<Vec<usize>> {
    fn recurse(start: usize, count: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..count {
            if count - i < k - cur.len() {
                break;
            }
            cur.push(i);
            recurse(i + 1, count, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    recurse(0, count, k, &mut Vec::with_capacity(k), &mut out);
    out
}

fn best_on_lattice(sums: &TailSums, candidates: &[f64], k: usize) -> (Vec<f64>, f64) {
    let starts: Vec<usize> = candidates.iter().map(|&c| sums.first_above(c)).collect();
    if k == 0 {
        return (Vec::new(), sums.sse(&[], &[]));
    }
    // split the search by the first knot; each task enumerates the rest
    let best = (0..candidates.len())
        .into_par_iter()
        .filter_map(|first| {
            let rest = candidates.len() - first - 1;
            if rest < k - 1 {
                return None;
            }
            let mut local: Option<(f64, Vec<usize>)> = None;
            for tail in combinations(rest, k - 1) {
                let idx: Vec<usize> = std::iter::once(first)
                    .chain(tail.iter().map(|t| t + first + 1))
                    .collect();
                let knots: Vec<f64> = idx.iter().map(|&i| candidates[i]).collect();
                let st: Vec<usize> = idx.iter().map(|&i| starts[i]).collect();
                let sse = sums.sse(&knots, &st);
                if local.as_ref().is_none_or(|(b, _)| sse < *b) {
                    local = Some((sse, idx));
                }
            }
            local
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
        .expect("at least one candidate tuple");
    let knots = best.1.iter().map(|&i| candidates[i]).collect();
    (knots, best.0)
}

/// Moves one knot at a time to a neighbouring lattice point while the SSE improves.
fn refine(sums: &TailSums, lattice: &[f64], mut idx: Vec<usize>) -> Vec<usize> {
    let eval = |idx: &[usize]| {
        let knots: Vec<f64> = idx.iter().map(|&i| lattice[i]).collect();
        let starts: Vec<usize> = knots.iter().map(|&k| sums.first_above(k)).collect();
        sums.sse(&knots, &starts)
    };
    let mut best = eval(&idx);
    loop {
        let mut improved = false;
        for j in 0..idx.len() {
            for delta in [-2i64, -1, 1, 2] {
                let moved = idx[j] as i64 + delta;
                if moved < 0 || moved as usize >= lattice.len() {
                    continue;
                }
                let moved = moved as usize;
                let lo_ok = j == 0 || idx[j - 1] < moved;
                let hi_ok = j + 1 == idx.len() || moved < idx[j + 1];
                if !(lo_ok && hi_ok) {
                    continue;
                }
                let mut trial = idx.clone();
                trial[j] = moved;
                let sse = eval(&trial);
                if sse < best {
                    best = sse;
                    idx = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            return idx;
        }
    }
}

/// Least-squares continuous linear spline with `n_breakpoints` knots fitted to
/// softplus on `grid_size` points of [−5, 5], knots chosen by lattice search.
///
/// Up to three knots the 0.05 lattice is searched exhaustively. Larger counts
/// start from the finest coarsened lattice that keeps the enumeration under
/// two million tuples and refine coordinate-wise on the 0.05 lattice.
pub fn fit_linear_breakpoints(grid_size: usize, n_breakpoints: usize) -> BreakpointFit {
    let sums = TailSums::new(grid_size);
    let fine = lattice(1);
    let mut multiple = 1;
    while binomial(fine.len() / multiple, n_breakpoints) > EXHAUSTIVE_LIMIT {
        multiple += 1;
    }
    let coarse = lattice(multiple);
    let (knots, _) = best_on_lattice(&sums, &coarse, n_breakpoints);
    let knots = if multiple > 1 {
        let idx = knots
            .iter()
            .map(|k| {
                fine.iter()
                    .position(|f| (f - k).abs() < 1e-9)
                    .expect("coarse lattice is a subset of the fine one")
            })
            .collect();
        refine(&sums, &fine, idx)
            .into_iter()
            .map(|i| fine[i])
            .collect()
    } else {
        knots
    };
    let sse = sums.exact_sse(&knots);
    BreakpointFit {
        r_squared: 1.0 - sse / sums.total_ss(),
        breakpoints: knots,
        sse,
    }
}
