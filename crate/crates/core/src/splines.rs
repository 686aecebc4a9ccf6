//! B-spline bases on `[0, 1]`, difference penalties and the centered basis
//! used for the labor-inequality curve.
//!
//! Bases use equally spaced interior knots with boundary knots repeated
//! `degree + 1` times, so the first and last basis functions interpolate the
//! endpoints. Evaluation follows the Cox-de Boor recursion restricted to the
//! `degree + 1` functions that are nonzero on the knot span containing τ.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use thiserror::Error;

pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_NUM_BASIS: usize = 8;
pub const DEFAULT_PENALTY_ORDER: usize = 2;
/// Grids used for centering need at least this many points.
pub const MIN_CENTERING_GRID: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum SplineError {
    #[error("need at least degree + 1 = {min} basis functions, got {got}")]
    TooFewBasis { got: usize, min: usize },
    #[error("degree must be at least 1")]
    ZeroDegree,
    #[error("tau = {0} outside [0, 1]")]
    OutOfDomain(f64),
    #[error("penalty order {order} must be below the number of basis functions {num_basis}")]
    PenaltyOrder { order: usize, num_basis: usize },
    #[error("centering grid has {0} points, need at least {MIN_CENTERING_GRID}")]
    CoarseGrid(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    degree: usize,
    num_basis: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    /// Full knot vector including repeated boundary knots.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.degree + 1..self.knots.len() - self.degree - 1]
    }

    /// Support `[lo, hi]` of basis function `j`.
    pub fn support(&self, j: usize) -> (f64, f64) {
        (self.knots[j], self.knots[j + self.degree + 1])
    }

    /// Index of the knot span `[knots[k], knots[k+1])` containing `tau`, with
    /// `tau = 1` assigned to the last nonempty span.
    fn span(&self, tau: f64) -> usize {
        let p = self.degree;
        let n = self.num_basis;
        if tau >= self.knots[n] {
            return n - 1;
        }
        // knots[p..=n] are the distinct breakpoints (plus repeats at ends)
        let mut lo = p;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if tau < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values of all `J` basis functions at `tau`.
    pub fn evaluate(&self, tau: f64) -> Result<Vec<f64>, SplineError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(SplineError::OutOfDomain(tau));
        }
        let mut out = vec![0.0; self.num_basis];
        self.evaluate_into(tau, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation into a caller-provided buffer of length `J`.
    pub(crate) fn evaluate_into(&self, tau: f64, out: &mut [f64]) {
        let p = self.degree;
        let t = &self.knots;
        let k = self.span(tau);
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = tau - t[k + 1 - j];
            right[j] = t[k + j] - tau;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, v) in n.into_iter().enumerate() {
            out[k - p + r] = v;
        }
    }

    /// Evaluation table, one row per grid point.
    pub fn design(&self, taus: &[f64]) -> Result<DMatrix<f64>, SplineError> {
        let mut m = DMatrix::zeros(taus.len(), self.num_basis);
        let mut buf = vec![0.0; self.num_basis];
        for (i, &tau) in taus.iter().enumerate() {
            if !(0.0..=1.0).contains(&tau) {
                return Err(SplineError::OutOfDomain(tau));
            }
            self.evaluate_into(tau, &mut buf);
            for (j, v) in buf.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }

    /// Plain-text description for run manifests and debugging.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "degree = {}", self.degree);
        let _ = writeln!(s, "num_basis = {}", self.num_basis);
        let knots: Vec<String> = self.knots.iter().map(|k| format!("{k:.6}")).collect();
        let _ = writeln!(s, "knots = {}", knots.join(" "));
        s
    }
}

/// Builds a basis of `num_basis` B-splines of the given degree on `[0, 1]`.
pub fn make_basis(num_basis: usize, degree: usize) -> Result<SplineBasis, SplineError> {
    if degree == 0 {
        return Err(SplineError::ZeroDegree);
    }
    if num_basis < degree + 1 {
        return Err(SplineError::TooFewBasis {
            got: num_basis,
            min: degree + 1,
        });
    }
    let interior = num_basis - degree - 1;
    let mut knots = Vec::with_capacity(num_basis + degree + 1);
    knots.extend(std::iter::repeat_n(0.0, degree + 1));
    for i in 1..=interior {
        knots.push(i as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(1.0, degree + 1));
    Ok(SplineBasis {
        degree,
        num_basis,
        knots,
    })
}

/// Quadratic penalty `D'D` on coefficient sequences, `D` the `order`-th
/// difference operator.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub order: usize,
    pub coefficients: DMatrix<f64>,
}

impl PenaltyMatrix {
    pub fn quadratic_form(&self, beta: &[f64]) -> f64 {
        crate::linalg::quad_form(&self.coefficients, beta)
    }

    pub fn dim(&self) -> usize {
        self.coefficients.nrows()
    }
}

/// `order`-th difference operator as a `(J - order) × J` matrix.
pub fn difference_operator(num_basis: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(num_basis, num_basis);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        let mut next = DMatrix::zeros(rows, num_basis);
        for i in 0..rows {
            for j in 0..num_basis {
                next[(i, j)] = d[(i + 1, j)] - d[(i, j)];
            }
        }
        d = next;
    }
    d
}

pub fn penalty_matrix(basis: &SplineBasis, order: usize) -> Result<PenaltyMatrix, SplineError> {
    let j = basis.num_basis();
    if order >= j {
        return Err(SplineError::PenaltyOrder {
            order,
            num_basis: j,
        });
    }
    let d = difference_operator(j, order);
    Ok(PenaltyMatrix {
        order,
        coefficients: d.transpose() * d,
    })
}

/// `n` equally spaced points from 0 to 1 inclusive.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Basis whose columns have zero mean over a dense grid, so any coefficient
/// combination integrates to (approximately) zero on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredBasis {
    pub basis: SplineBasis,
    pub grid: Vec<f64>,
    /// Column means of the raw evaluation table.
    pub offsets: Vec<f64>,
    /// Centered evaluation table, `grid.len() × J`.
    pub table: DMatrix<f64>,
}

impl CenteredBasis {
    pub fn evaluate(&self, tau: f64) -> Result<Vec<f64>, SplineError> {
        let mut v = self.basis.evaluate(tau)?;
        for (x, m) in v.iter_mut().zip(&self.offsets) {
            *x -= m;
        }
        Ok(v)
    }

    pub(crate) fn evaluate_into(&self, tau: f64, out: &mut [f64]) {
        self.basis.evaluate_into(tau, out);
        for (x, m) in out.iter_mut().zip(&self.offsets) {
            *x -= m;
        }
    }

    /// Mean over the centering grid of the function with the given
    /// coefficients.
    pub fn grid_mean(&self, coefficients: &[f64]) -> f64 {
        let n = self.table.nrows();
        let mut acc = 0.0;
        for i in 0..n {
            let mut v = 0.0;
            for (j, c) in coefficients.iter().enumerate() {
                v += self.table[(i, j)] * c;
            }
            acc += v;
        }
        acc / n as f64
    }
}

pub fn center_basis(basis: &SplineBasis, grid: &[f64]) -> Result<CenteredBasis, SplineError> {
    if grid.len() < MIN_CENTERING_GRID {
        return Err(SplineError::CoarseGrid(grid.len()));
    }
    let raw = basis.design(grid)?;
    let n = grid.len() as f64;
    let offsets: Vec<f64> = (0..basis.num_basis())
        .map(|j| raw.column(j).iter().sum::<f64>() / n)
        .collect();
    let mut table = raw;
    for j in 0..basis.num_basis() {
        for i in 0..grid.len() {
            table[(i, j)] -= offsets[j];
        }
    }
    Ok(CenteredBasis {
        basis: basis.clone(),
        grid: grid.to_vec(),
        offsets,
        table,
    })
}
