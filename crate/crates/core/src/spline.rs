//! Penalized cubic regression spline bases.
//!
//! Both kinds parameterize a cubic spline by its values at the knots. The
//! second derivatives at the knots follow from the values through the usual
//! tridiagonal continuity system, `B d = D beta`, which gives the exact
//! integrated squared second derivative as the penalty `D' B^-1 D`.
//!
//! * `Cubic`: natural spline (zero curvature at the end knots), extended
//!   linearly beyond the knot range. Penalty null space: constants and lines.
//! * `CyclicCubic`: value, slope and curvature match across the wrap point
//!   `hi == lo`. The `k` knots sit at `lo, ..., < hi`. Null space: constants.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SplineError {
    #[error("need at least {needed} distinct values, got {got}")]
    DegenerateInput { needed: usize, got: usize },
    #[error("basis dimension k={0} is below the minimum of 3")]
    TooFewKnots(usize),
    #[error("knots must be strictly increasing")]
    UnsortedKnots,
    #[error("x={x} outside the allowed range [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Cubic,
    CyclicCubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    /// Knot locations; `k` of them for both kinds.
    pub knots: Vec<f64>,
    /// Period end for the cyclic kind (the wrap point, identified with `knots[0]`).
    pub period_end: Option<f64>,
}

impl BasisSpec {
    pub fn cubic(knots: Vec<f64>) -> Result<Self, SplineError> {
        let spec = BasisSpec {
            kind: BasisKind::Cubic,
            knots,
            period_end: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Evenly spaced cyclic knots on `[lo, hi)`.
    pub fn cyclic(lo: f64, hi: f64, k: usize) -> Result<Self, SplineError> {
        if k < 3 {
            return Err(SplineError::TooFewKnots(k));
        }
        let h = (hi - lo) / k as f64;
        let spec = BasisSpec {
            kind: BasisKind::CyclicCubic,
            knots: (0..k).map(|i| lo + h * i as f64).collect(),
            period_end: Some(hi),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn k(&self) -> usize {
        self.knots.len()
    }

    pub fn domain(&self) -> (f64, f64) {
        match self.kind {
            BasisKind::Cubic => (self.knots[0], *self.knots.last().expect("k >= 3")),
            BasisKind::CyclicCubic => (self.knots[0], self.period_end.expect("cyclic period")),
        }
    }

    fn validate(&self) -> Result<(), SplineError> {
        if self.knots.len() < 3 {
            return Err(SplineError::TooFewKnots(self.knots.len()));
        }
        if self.knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SplineError::UnsortedKnots);
        }
        if let Some(end) = self.period_end {
            if !(end > *self.knots.last().expect("non-empty")) {
                return Err(SplineError::UnsortedKnots);
            }
        }
        Ok(())
    }

    /// Interval widths; the cyclic kind includes the wrap interval.
    fn widths(&self) -> Vec<f64> {
        let mut h: Vec<f64> = self.knots.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(end) = self.period_end {
            h.push(end - self.knots.last().expect("non-empty"));
        }
        h
    }

    /// `F` such that knot second derivatives are `F * beta` (k x k).
    fn curvature_map(&self) -> DMatrix<f64> {
        let k = self.k();
        let h = self.widths();
        match self.kind {
            BasisKind::Cubic => {
                let m = k - 2;
                let mut b = DMatrix::zeros(m, m);
                let mut dm = DMatrix::zeros(m, k);
                for i in 0..m {
                    b[(i, i)] = (h[i] + h[i + 1]) / 3.0;
                    if i + 1 < m {
                        b[(i, i + 1)] = h[i + 1] / 6.0;
                        b[(i + 1, i)] = h[i + 1] / 6.0;
                    }
                    dm[(i, i)] = 1.0 / h[i];
                    dm[(i, i + 1)] = -1.0 / h[i] - 1.0 / h[i + 1];
                    dm[(i, i + 2)] = 1.0 / h[i + 1];
                }
                let inner = b.cholesky().expect("B is positive definite").solve(&dm);
                let mut f = DMatrix::zeros(k, k);
                f.view_mut((1, 0), (m, k)).copy_from(&inner);
                f
            }
            BasisKind::CyclicCubic => {
                let (b, dm) = self.cyclic_system();
                b.cholesky().expect("B is positive definite").solve(&dm)
            }
        }
    }

    fn cyclic_system(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = self.k();
        let h = self.widths();
        let mut b = DMatrix::zeros(k, k);
        let mut dm = DMatrix::zeros(k, k);
        for i in 0..k {
            let prev = (i + k - 1) % k;
            let next = (i + 1) % k;
            // h[prev] is the interval ending at knot i, h[i] the one starting there
            b[(i, i)] += (h[prev] + h[i]) / 3.0;
            b[(i, next)] += h[i] / 6.0;
            b[(i, prev)] += h[prev] / 6.0;
            dm[(i, prev)] += 1.0 / h[prev];
            dm[(i, i)] += -1.0 / h[prev] - 1.0 / h[i];
            dm[(i, next)] += 1.0 / h[i];
        }
        (b, dm)
    }

    /// Exact `int f''(x)^2 dx` penalty over the knot range (or period).
    pub fn penalty(&self) -> DMatrix<f64> {
        let k = self.k();
        let h = self.widths();
        let s = match self.kind {
            BasisKind::Cubic => {
                let f = self.curvature_map();
                // int f''^2 over the knot range = d' B d with d the interior curvatures
                let m = k - 2;
                let mut b = DMatrix::zeros(m, m);
                for i in 0..m {
                    b[(i, i)] = (h[i] + h[i + 1]) / 3.0;
                    if i + 1 < m {
                        b[(i, i + 1)] = h[i + 1] / 6.0;
                        b[(i + 1, i)] = h[i + 1] / 6.0;
                    }
                }
                let inner = f.rows(1, m).into_owned();
                inner.transpose() * b * inner
            }
            BasisKind::CyclicCubic => {
                let (b, dm) = self.cyclic_system();
                let f = b.clone().cholesky().expect("B is positive definite").solve(&dm);
                f.transpose() * b * f
            }
        };
        (&s + s.transpose()) * 0.5
    }

    /// Maximum distance beyond the knot range that the cubic kind extrapolates.
    pub fn extrapolation_margin(&self) -> f64 {
        let (lo, hi) = self.domain();
        hi - lo
    }

    /// Basis row at `x` (length k, before any constraint).
    pub fn row(&self, x: f64) -> Result<Vec<f64>, SplineError> {
        let f = self.curvature_map();
        self.row_with(&f, x)
    }

    fn row_with(&self, f: &DMatrix<f64>, x: f64) -> Result<Vec<f64>, SplineError> {
        let k = self.k();
        let (lo, hi) = self.domain();
        let mut row = vec![0.0; k];
        match self.kind {
            BasisKind::Cubic => {
                let margin = self.extrapolation_margin();
                if !(x >= lo - margin && x <= hi + margin) {
                    return Err(SplineError::OutOfRange {
                        x,
                        lo: lo - margin,
                        hi: hi + margin,
                    });
                }
                let h = self.widths();
                if x < lo {
                    // f(lo) + f'(lo) (x - lo); f'(lo) = (b1 - b0)/h0 - h0/6 d1
                    let dx = x - lo;
                    row[0] += 1.0 - dx / h[0];
                    row[1] += dx / h[0];
                    for (j, r) in row.iter_mut().enumerate() {
                        *r -= dx * h[0] / 6.0 * f[(1, j)];
                    }
                    return Ok(row);
                }
                if x > hi {
                    // f(hi) + f'(hi) (x - hi); f'(hi) = (b_{k-1} - b_{k-2})/h + h/6 d_{k-2}
                    let hl = h[k - 2];
                    let dx = x - hi;
                    row[k - 1] += 1.0 + dx / hl;
                    row[k - 2] -= dx / hl;
                    for (j, r) in row.iter_mut().enumerate() {
                        *r += dx * hl / 6.0 * f[(k - 2, j)];
                    }
                    return Ok(row);
                }
                let j = self.interval(x);
                self.accumulate(&mut row, f, x, j, j + 1, self.knots[j], self.knots[j + 1]);
            }
            BasisKind::CyclicCubic => {
                if !(x >= lo && x <= hi) {
                    return Err(SplineError::OutOfRange { x, lo, hi });
                }
                if x >= self.knots[k - 1] {
                    self.accumulate(&mut row, f, x, k - 1, 0, self.knots[k - 1], hi);
                } else {
                    let j = self.interval(x);
                    self.accumulate(&mut row, f, x, j, j + 1, self.knots[j], self.knots[j + 1]);
                }
            }
        }
        Ok(row)
    }

    fn interval(&self, x: f64) -> usize {
        let k = self.k();
        let last = if self.kind == BasisKind::Cubic { k - 2 } else { k - 1 };
        match self.knots.partition_point(|&t| t <= x) {
            0 => 0,
            p => (p - 1).min(last),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn accumulate(
        &self,
        row: &mut [f64],
        f: &DMatrix<f64>,
        x: f64,
        left: usize,
        right: usize,
        x0: f64,
        x1: f64,
    ) {
        let h = x1 - x0;
        let am = (x1 - x) / h;
        let ap = (x - x0) / h;
        let cm = ((x1 - x).powi(3) / h - h * (x1 - x)) / 6.0;
        let cp = ((x - x0).powi(3) / h - h * (x - x0)) / 6.0;
        row[left] += am;
        row[right] += ap;
        for (j, r) in row.iter_mut().enumerate() {
            *r += cm * f[(left, j)] + cp * f[(right, j)];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedBasis {
    /// n x (k - c) design.
    pub design: DMatrix<f64>,
    /// (k - c) x (k - c) penalty.
    pub penalty: DMatrix<f64>,
    /// k x (k - c) map from constrained to raw coefficients.
    pub constraint: DMatrix<f64>,
}

/// `k` knots at evenly spaced quantiles of the distinct values, endpoints included.
pub fn knot_placement(values: &[f64], k: usize) -> Result<Vec<f64>, SplineError> {
    let mut distinct: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    distinct.dedup();
    if distinct.len() < k.max(2) {
        return Err(SplineError::DegenerateInput {
            needed: k.max(2),
            got: distinct.len(),
        });
    }
    let m = distinct.len() - 1;
    Ok((0..k)
        .map(|i| {
            let pos = i as f64 * m as f64 / (k - 1) as f64;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            if lo >= m {
                distinct[m]
            } else {
                distinct[lo] + frac * (distinct[lo + 1] - distinct[lo])
            }
        })
        .collect())
}

/// Unconstrained basis at `x`.
pub fn build_basis(spec: &BasisSpec, x: &[f64]) -> Result<EvaluatedBasis, SplineError> {
    spec.validate()?;
    let k = spec.k();
    let f = spec.curvature_map();
    let mut design = DMatrix::zeros(x.len(), k);
    for (i, &xi) in x.iter().enumerate() {
        let row = spec.row_with(&f, xi)?;
        for (j, v) in row.into_iter().enumerate() {
            design[(i, j)] = v;
        }
    }
    Ok(EvaluatedBasis {
        design,
        penalty: spec.penalty(),
        constraint: DMatrix::identity(k, k),
    })
}

/// Sum-to-zero constraint over the rows of `basis.design`, removing one dimension.
pub fn apply_constraints(basis: &EvaluatedBasis) -> EvaluatedBasis {
    let sums: DVector<f64> = basis.design.row_sum().transpose();
    let z = null_complement(&sums);
    EvaluatedBasis {
        design: &basis.design * &z,
        penalty: {
            let p = z.transpose() * &basis.penalty * &z;
            (&p + p.transpose()) * 0.5
        },
        constraint: &basis.constraint * z,
    }
}

/// Householder-based orthonormal basis (k x (k-1)) of the complement of `c`.
pub fn null_complement(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.norm();
    if norm == 0.0 {
        return DMatrix::identity(k, k).columns(1, k - 1).into_owned();
    }
    let mut v = c.clone();
    let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    let vv = v.dot(&v);
    let h = DMatrix::identity(k, k) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, k - 1).into_owned()
}

/// Smooth values and pointwise standard errors at `x_new`.
pub fn eval_smooth(
    spec: &BasisSpec,
    constraint: &DMatrix<f64>,
    coefs: &DVector<f64>,
    cov: &DMatrix<f64>,
    x_new: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), SplineError> {
    let m = constraint.ncols();
    if constraint.nrows() != spec.k() {
        return Err(SplineError::DimensionMismatch(format!(
            "constraint has {} rows for k={}",
            constraint.nrows(),
            spec.k()
        )));
    }
    if coefs.len() != m || cov.nrows() != m || cov.ncols() != m {
        return Err(SplineError::DimensionMismatch(format!(
            "{} coefficients / {}x{} covariance for {} constrained columns",
            coefs.len(),
            cov.nrows(),
            cov.ncols(),
            m
        )));
    }
    let raw = build_basis(spec, x_new)?;
    let design = raw.design * constraint;
    let values = (&design * coefs).iter().copied().collect();
    let se = (0..design.nrows())
        .map(|i| {
            let r = design.row(i);
            (r * cov * r.transpose())[(0, 0)].max(0.0).sqrt()
        })
        .collect();
    Ok((values, se))
}

/// Number of eigenvalues below `tol * max eigenvalue` (penalty null-space dimension).
pub fn null_space_dim(penalty: &DMatrix<f64>, tol: f64) -> usize {
    let eig = penalty.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().copied().fold(0.0, f64::max);
    eig.iter().filter(|&&e| e.abs() <= tol * max).count()
}
