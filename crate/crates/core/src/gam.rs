//! Penalized GAM fitting by penalized iteratively reweighted least squares.
//!
//! A model is a dense design matrix plus a set of non-overlapping penalty
//! blocks, one per smooth. Smoothing parameters are chosen by coordinate
//! descent over a log grid (GCV by default, Laplace REML as an option) on the
//! working penalized least-squares problem, inside a performance iteration.
//! Grid values are in normalized units: smooth `j` gets raw smoothing
//! parameter `rho_j * c_j` with `c_j = ||X_j'WX_j||_F / ||S_j||_F` at the
//! starting weights, so one grid suits every smooth.
//!
//! Serial correlation within groups of rows is handled by a two-stage AR(1)
//! scheme: fit, estimate phi from Pearson residuals, refit on the whitened
//! working model.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
const MAX_HALVINGS: usize = 40;
const ETA_MAX: f64 = 700.0;

#[derive(Debug, Error)]
pub enum GamError {
    #[error("design has {rows} rows but the response has {len}")]
    RowMismatch { rows: usize, len: usize },
    #[error("penalty {label}: {message}")]
    BadPenalty { label: String, message: String },
    #[error("penalties {0} and {1} overlap")]
    OverlappingPenalties(String, String),
    #[error("poisson response must be a non-negative integer (row {row}: {value})")]
    InvalidResponse { row: usize, value: f64 },
    #[error("poisson response is all zero")]
    AllZeroResponse,
    #[error("penalized normal equations are rank deficient")]
    RankDeficient,
    #[error("lambda grid is empty")]
    EmptyGrid,
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("expected {expected} smoothing parameters, got {got}")]
    LambdaCount { expected: usize, got: usize },
    #[error("AR(1) group {group} has {len} rows; at least 3 are required")]
    GroupTooShort { group: usize, len: usize },
    #[error("invalid AR(1) groups: {0}")]
    InvalidGroups(String),
    #[error("AR(1) fitting requested but the problem has no groups")]
    MissingGroups,
    #[error("residuals have zero variance")]
    ZeroVariance,
    #[error("phi must lie strictly between -1 and 1, got {0}")]
    InvalidPhi(f64),
    #[error("design has {got} columns, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported model format version {0}")]
    UnsupportedFormat(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PoissonLog,
    GaussianIdentity,
}

impl Family {
    pub fn inverse_link(self, eta: f64) -> f64 {
        match self {
            Family::PoissonLog => eta.min(ETA_MAX).exp(),
            Family::GaussianIdentity => eta,
        }
    }

    pub fn link(self, mu: f64) -> f64 {
        match self {
            Family::PoissonLog => mu.ln(),
            Family::GaussianIdentity => mu,
        }
    }

    pub fn variance(self, mu: f64) -> f64 {
        match self {
            Family::PoissonLog => mu,
            Family::GaussianIdentity => 1.0,
        }
    }

    pub fn known_scale(self) -> bool {
        self == Family::PoissonLog
    }

    pub fn deviance(self, y: &[f64], mu: &[f64]) -> f64 {
        y.iter()
            .zip(mu)
            .map(|(&y, &m)| match self {
                Family::PoissonLog if y > 0.0 => 2.0 * (y * (y / m).ln() - (y - m)),
                Family::PoissonLog => 2.0 * m,
                Family::GaussianIdentity => (y - m).powi(2),
            })
            .sum()
    }

    fn validate(self, y: &[f64]) -> Result<(), GamError> {
        if self == Family::PoissonLog {
            for (row, &value) in y.iter().enumerate() {
                if !(value >= 0.0) || value.fract() != 0.0 {
                    return Err(GamError::InvalidResponse { row, value });
                }
            }
            if y.iter().all(|&v| v == 0.0) {
                return Err(GamError::AllZeroResponse);
            }
        } else if let Some((row, &value)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GamError::InvalidResponse { row, value });
        }
        Ok(())
    }

    fn initial_mu(self, y: f64) -> f64 {
        match self {
            Family::PoissonLog => y + 0.5,
            Family::GaussianIdentity => y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMethod {
    Gcv,
    Reml,
}

/// Candidate smoothing parameters in normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
}

impl LambdaGrid {
    pub fn log_spaced(lo: f64, hi: f64, points: usize) -> Self {
        let values = match points {
            0 => Vec::new(),
            1 => vec![lo],
            _ => {
                let (a, b) = (lo.ln(), hi.ln());
                (0..points)
                    .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
                    .collect()
            }
        };
        LambdaGrid { values }
    }

    /// Grid value closest to 1 on the log scale.
    fn start(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .min_by(|a, b| a.ln().abs().total_cmp(&b.ln().abs()))
            .expect("grid checked non-empty")
    }
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::log_spaced(1e-4, 1e6, 25)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    pub lambda_method: LambdaMethod,
    pub lambda_grid: LambdaGrid,
    pub irls_tol: f64,
    pub irls_max_iter: usize,
    pub ar1_enabled: bool,
    pub sweeps: usize,
    pub outer_max_iter: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            lambda_method: LambdaMethod::Gcv,
            lambda_grid: LambdaGrid::default(),
            irls_tol: 1e-8,
            irls_max_iter: 200,
            ar1_enabled: false,
            sweeps: 2,
            outer_max_iter: 8,
        }
    }
}

impl FitSettings {
    pub fn validate(&self) -> Result<(), GamError> {
        if !(self.irls_tol > 0.0) {
            return Err(GamError::InvalidSettings("irls_tol must be positive".into()));
        }
        if self.irls_max_iter == 0 || self.outer_max_iter == 0 {
            return Err(GamError::InvalidSettings(
                "iteration limits must be positive".into(),
            ));
        }
        if self.lambda_grid.values.is_empty() {
            return Err(GamError::EmptyGrid);
        }
        if self.lambda_grid.values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(GamError::InvalidSettings(
                "lambda grid values must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// A penalty matrix acting on columns `offset..offset + matrix.nrows()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub label: String,
    pub offset: usize,
    pub matrix: DMatrix<f64>,
}

/// Row indices of each AR(1) group, in time order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArGroups {
    pub groups: Vec<Vec<usize>>,
}

impl ArGroups {
    fn validate(&self, n: usize) -> Result<(), GamError> {
        let mut seen = vec![false; n];
        for (g, rows) in self.groups.iter().enumerate() {
            if rows.len() < 3 {
                return Err(GamError::GroupTooShort {
                    group: g,
                    len: rows.len(),
                });
            }
            for &r in rows {
                if r >= n {
                    return Err(GamError::InvalidGroups(format!("row {r} out of range")));
                }
                if std::mem::replace(&mut seen[r], true) {
                    return Err(GamError::InvalidGroups(format!("row {r} in two groups")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GamProblem {
    pub design: DMatrix<f64>,
    pub penalties: Vec<Penalty>,
    pub y: DVector<f64>,
    pub family: Family,
    pub groups: Option<ArGroups>,
    /// Column names; generated when empty.
    pub columns: Vec<String>,
}

impl GamProblem {
    pub fn new(
        design: DMatrix<f64>,
        penalties: Vec<Penalty>,
        y: DVector<f64>,
        family: Family,
    ) -> Self {
        GamProblem {
            design,
            penalties,
            y,
            family,
            groups: None,
            columns: Vec::new(),
        }
    }

    pub fn with_groups(mut self, groups: ArGroups) -> Self {
        self.groups = Some(groups);
        self
    }

    pub fn validate(&self) -> Result<(), GamError> {
        let (n, p) = self.design.shape();
        if n != self.y.len() {
            return Err(GamError::RowMismatch {
                rows: n,
                len: self.y.len(),
            });
        }
        if !self.columns.is_empty() && self.columns.len() != p {
            return Err(GamError::DimensionMismatch {
                expected: p,
                got: self.columns.len(),
            });
        }
        self.family.validate(self.y.as_slice())?;
        let mut spans: Vec<(usize, usize, &str)> = Vec::new();
        for pen in &self.penalties {
            let bad = |message: &str| GamError::BadPenalty {
                label: pen.label.clone(),
                message: message.to_string(),
            };
            let (r, c) = pen.matrix.shape();
            if r != c || r == 0 {
                return Err(bad("matrix must be square and non-empty"));
            }
            if pen.offset + r > p {
                return Err(bad("block extends past the last design column"));
            }
            if (&pen.matrix - pen.matrix.transpose()).amax() > 1e-9 * (1.0 + pen.matrix.amax()) {
                return Err(bad("matrix is not symmetric"));
            }
            let eig = pen.matrix.clone().symmetric_eigen().eigenvalues;
            if eig.min() < -1e-8 * eig.amax().max(1e-300) {
                return Err(bad("matrix is not positive semi-definite"));
            }
            spans.push((pen.offset, pen.offset + r, &pen.label));
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(GamError::OverlappingPenalties(
                    w[0].2.to_string(),
                    w[1].2.to_string(),
                ));
            }
        }
        if let Some(groups) = &self.groups {
            groups.validate(n)?;
        }
        Ok(())
    }

    fn column_names(&self) -> Vec<String> {
        if self.columns.is_empty() {
            (0..self.design.ncols()).map(|j| format!("x{j}")).collect()
        } else {
            self.columns.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothInfo {
    pub label: String,
    pub offset: usize,
    pub dim: usize,
    pub rank: usize,
    pub edf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub outer: usize,
    pub sweep: usize,
    pub smooth: usize,
    pub rho: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedGam {
    pub format_version: u32,
    pub family: Family,
    pub columns: Vec<String>,
    pub beta: DVector<f64>,
    /// Raw smoothing parameters, one per penalty.
    pub lambda: Vec<f64>,
    /// The same in normalized grid units.
    pub rho: Vec<f64>,
    pub smooths: Vec<SmoothInfo>,
    pub v_beta: DMatrix<f64>,
    pub phi_ar1: Option<f64>,
    pub edf_total: f64,
    pub deviance: f64,
    pub penalized_deviance: f64,
    pub scale: f64,
    pub criterion: Option<f64>,
    pub criterion_trace: Vec<TraceEntry>,
    pub converged: bool,
    pub iterations: usize,
    pub fitted_values: DVector<f64>,
}

impl FittedGam {
    pub fn to_writer(&self, w: impl Write) -> Result<(), GamError> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn from_reader(r: impl Read) -> Result<Self, GamError> {
        let fitted: FittedGam = serde_json::from_reader(r)?;
        if fitted.format_version != FORMAT_VERSION {
            return Err(GamError::UnsupportedFormat(fitted.format_version));
        }
        Ok(fitted)
    }

    pub fn coefficient_se(&self) -> DVector<f64> {
        self.v_beta.diagonal().map(|v| v.max(0.0).sqrt())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub eta: DVector<f64>,
    pub mu: DVector<f64>,
    pub se_eta: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub edf: Vec<(String, f64)>,
    pub edf_total: f64,
    pub deviance_explained: f64,
    pub r_squared_adj: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSelection {
    pub lambda: Vec<f64>,
    pub rho: Vec<f64>,
    pub criterion: Option<f64>,
    pub trace: Vec<TraceEntry>,
}

struct PenaltyFactor {
    offset: usize,
    dim: usize,
    rank: usize,
    /// `S = root root'`, dim x rank.
    root: DMatrix<f64>,
}

fn factorize(pen: &Penalty) -> PenaltyFactor {
    let eig = pen.matrix.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-10 * max)
        .collect();
    let dim = pen.matrix.nrows();
    let mut root = DMatrix::zeros(dim, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        root.set_column(c, &(eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt()));
    }
    PenaltyFactor {
        offset: pen.offset,
        dim,
        rank: keep.len(),
        root,
    }
}

/// Whitened working least-squares problem in cross-product form.
struct Working {
    g: DMatrix<f64>,
    b: DVector<f64>,
    zz: f64,
    n: usize,
}

/// Apply the within-group AR(1) inverse square root to the rows of `m`.
fn whiten_rows(m: &mut DMatrix<f64>, groups: &ArGroups, phi: f64) {
    if phi == 0.0 {
        return;
    }
    let s = (1.0 - phi * phi).sqrt();
    for mut col in m.column_iter_mut() {
        for rows in &groups.groups {
            for t in (1..rows.len()).rev() {
                col[rows[t]] = (col[rows[t]] - phi * col[rows[t - 1]]) / s;
            }
        }
    }
}

fn working(problem: &GamProblem, eta: &DVector<f64>, mu: &DVector<f64>, phi: f64) -> Working {
    let n = problem.y.len();
    let fam = problem.family;
    let mut sw = DVector::zeros(n);
    let mut z = DVector::zeros(n);
    for i in 0..n {
        match fam {
            Family::PoissonLog => {
                sw[i] = mu[i].sqrt();
                z[i] = eta[i] + (problem.y[i] - mu[i]) / mu[i];
            }
            Family::GaussianIdentity => {
                sw[i] = 1.0;
                z[i] = problem.y[i];
            }
        }
    }
    let mut x = problem.design.clone();
    for mut col in x.column_iter_mut() {
        col.component_mul_assign(&sw);
    }
    let mut zw = DMatrix::from_column_slice(n, 1, z.component_mul(&sw).as_slice());
    if let Some(groups) = &problem.groups {
        whiten_rows(&mut x, groups, phi);
        whiten_rows(&mut zw, groups, phi);
    }
    let zw = zw.column(0).into_owned();
    let xt = x.transpose();
    Working {
        g: &xt * &x,
        b: &xt * &zw,
        zz: zw.dot(&zw),
        n,
    }
}

fn penalty_matrix(p: usize, penalties: &[Penalty], lambda: &[f64]) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(p, p);
    for (pen, &l) in penalties.iter().zip(lambda) {
        let d = pen.matrix.nrows();
        let mut view = s.view_mut((pen.offset, pen.offset), (d, d));
        view += &pen.matrix * l;
    }
    s
}

struct Solved {
    hinv: DMatrix<f64>,
    beta: DVector<f64>,
    trace: f64,
    log_det_h: f64,
}

fn solve(work: &Working, s: &DMatrix<f64>) -> Result<Solved, GamError> {
    let h = &work.g + s;
    let chol = h.clone().cholesky().ok_or(GamError::RankDeficient)?;
    let log_det_h = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let beta = chol.solve(&work.b);
    let hinv = chol.inverse();
    let trace = hinv.component_mul(&work.g).sum();
    Ok(Solved {
        hinv,
        beta,
        trace,
        log_det_h,
    })
}

struct ScoreInputs {
    method: LambdaMethod,
    known_scale: bool,
    /// Unpenalized dimension (for profiled REML).
    mp: usize,
}

impl ScoreInputs {
    fn score(&self, work: &Working, beta: &DVector<f64>, trace: f64, log_det_h: f64, log_det_s: f64) -> f64 {
        let n = work.n as f64;
        let bb = beta.dot(&work.b);
        let score = match self.method {
            LambdaMethod::Gcv => {
                let gb = &work.g * beta;
                let rss = (work.zz - 2.0 * bb + beta.dot(&gb)).max(0.0);
                let denom = n - trace;
                if denom <= 0.0 {
                    f64::INFINITY
                } else {
                    n * rss / (denom * denom)
                }
            }
            LambdaMethod::Reml => {
                let dp = (work.zz - bb).max(f64::MIN_POSITIVE);
                if self.known_scale {
                    dp + log_det_h - log_det_s
                } else {
                    (n - self.mp as f64) * dp.ln() + log_det_h - log_det_s
                }
            }
        };
        if score.is_finite() { score } else { f64::INFINITY }
    }
}

fn log_det_s(factors: &[PenaltyFactor], lambda: &[f64]) -> f64 {
    factors
        .iter()
        .zip(lambda)
        .map(|(f, &l)| f.rank as f64 * l.ln())
        .sum()
}

fn raw_lambda(rho: &[f64], norms: &[f64]) -> Vec<f64> {
    rho.iter().zip(norms).map(|(r, c)| r * c).collect()
}

/// Coordinate descent over the grid for every smooth, updating `rho` in place.
#[allow(clippy::too_many_arguments)]
fn coordinate_descent(
    work: &Working,
    penalties: &[Penalty],
    factors: &[PenaltyFactor],
    norms: &[f64],
    rho: &mut [f64],
    settings: &FitSettings,
    scoring: &ScoreInputs,
    outer: usize,
    trace: &mut Vec<TraceEntry>,
) -> Result<f64, GamError> {
    let p = work.g.nrows();
    let mut lambda = raw_lambda(rho, norms);
    let mut state = solve(work, &penalty_matrix(p, penalties, &lambda))?;
    let mut current = scoring.score(
        work,
        &state.beta,
        state.trace,
        state.log_det_h,
        log_det_s(factors, &lambda),
    );
    for sweep in 0..settings.sweeps {
        for (j, f) in factors.iter().enumerate() {
            if f.rank == 0 {
                continue;
            }
            let r = f.rank;
            let p_mat = f.root.transpose() * state.hinv.rows(f.offset, f.dim);
            let m = p_mat.columns(f.offset, f.dim) * &f.root;
            let pb = &p_mat * &work.b;
            let pgp = &p_mat * &work.g * p_mat.transpose();
            let base_ls = log_det_s(factors, &lambda) - r as f64 * lambda[j].ln();
            let mut best = (rho[j], current);
            for &cand in &settings.lambda_grid.values {
                let delta = (cand - rho[j]) * norms[j];
                let score = if delta == 0.0 {
                    current
                } else {
                    let a = DMatrix::identity(r, r) + &m * delta;
                    match a.cholesky() {
                        None => f64::INFINITY,
                        Some(ca) => {
                            let k = ca.inverse() * delta;
                            let beta = &state.beta - p_mat.transpose() * (&k * &pb);
                            let tr = state.trace - (&k * &pgp).trace();
                            let ld_a: f64 = ca.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
                            let ls = base_ls + r as f64 * (cand * norms[j]).ln();
                            scoring.score(work, &beta, tr, state.log_det_h + ld_a, ls)
                        }
                    }
                };
                trace.push(TraceEntry {
                    outer,
                    sweep,
                    smooth: j,
                    rho: cand,
                    score,
                });
                if score < best.1 {
                    best = (cand, score);
                }
            }
            if best.0 != rho[j] {
                rho[j] = best.0;
                lambda[j] = rho[j] * norms[j];
                state = solve(work, &penalty_matrix(p, penalties, &lambda))?;
                current = scoring.score(
                    work,
                    &state.beta,
                    state.trace,
                    state.log_det_h,
                    log_det_s(factors, &lambda),
                );
            }
        }
    }
    Ok(current)
}

struct Pirls {
    beta: DVector<f64>,
    eta: DVector<f64>,
    mu: DVector<f64>,
    deviance: f64,
    pen_dev: f64,
    iterations: usize,
    converged: bool,
}

fn evaluate(problem: &GamProblem, beta: &DVector<f64>, s: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>, f64, f64) {
    let eta = &problem.design * beta;
    let mu = eta.map(|e| problem.family.inverse_link(e));
    let dev = problem.family.deviance(problem.y.as_slice(), mu.as_slice());
    let pen = beta.dot(&(s * beta));
    (eta, mu, dev, dev + pen)
}

fn initial_state(problem: &GamProblem) -> (DVector<f64>, DVector<f64>) {
    let mu = problem.y.map(|y| problem.family.initial_mu(y));
    let eta = mu.map(|m| problem.family.link(m));
    (eta, mu)
}

fn pirls(
    problem: &GamProblem,
    lambda: &[f64],
    phi: f64,
    settings: &FitSettings,
    start: Option<&DVector<f64>>,
) -> Result<Pirls, GamError> {
    let p = problem.design.ncols();
    let s = penalty_matrix(p, &problem.penalties, lambda);
    let (mut beta, mut eta, mut mu, mut dev, mut pen_dev) = match start {
        Some(b) => {
            let (eta, mu, dev, pd) = evaluate(problem, b, &s);
            (b.clone(), eta, mu, dev, pd)
        }
        None => {
            let (eta, mu) = initial_state(problem);
            (DVector::zeros(p), eta, mu, f64::INFINITY, f64::INFINITY)
        }
    };
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.irls_max_iter {
        iterations += 1;
        let work = working(problem, &eta, &mu, phi);
        let h = &work.g + &s;
        let proposal = h.cholesky().ok_or(GamError::RankDeficient)?.solve(&work.b);
        let mut step = proposal.clone();
        let mut next = evaluate(problem, &step, &s);
        if pen_dev.is_finite() {
            let mut halvings = 0;
            while halvings < MAX_HALVINGS
                && (!next.3.is_finite() || (phi == 0.0 && next.3 > pen_dev))
            {
                step = &beta + (&step - &beta) * 0.5;
                next = evaluate(problem, &step, &s);
                halvings += 1;
            }
            if halvings == MAX_HALVINGS {
                // no improvement along the Newton direction: at the optimum
                converged = true;
                break;
            }
        }
        if phi == 0.0 && pen_dev.is_finite() {
            debug_assert!(
                next.3 <= pen_dev + 1e-10 * (1.0 + pen_dev.abs()),
                "penalized deviance increased: {pen_dev} -> {}",
                next.3
            );
        }
        let change = (pen_dev - next.3).abs();
        beta = step;
        (eta, mu, dev) = (next.0, next.1, next.2);
        let old = pen_dev;
        pen_dev = next.3;
        if old.is_finite() && change <= settings.irls_tol * (0.1 + pen_dev.abs()) {
            converged = true;
            break;
        }
    }
    Ok(Pirls {
        beta,
        eta,
        mu,
        deviance: dev,
        pen_dev,
        iterations,
        converged,
    })
}

/// Rank check on `X'WX / ||X'WX|| + sum S_j / ||S_j||`, which does not depend on
/// the smoothing parameters.
fn check_identifiable(problem: &GamProblem) -> Result<(), GamError> {
    let (eta, mu) = initial_state(problem);
    let work = working(problem, &eta, &mu, 0.0);
    let mut h = &work.g / work.g.norm().max(f64::MIN_POSITIVE);
    for pen in &problem.penalties {
        let d = pen.matrix.nrows();
        let mut view = h.view_mut((pen.offset, pen.offset), (d, d));
        view += &pen.matrix / pen.matrix.norm().max(f64::MIN_POSITIVE);
    }
    let chol = h.clone().cholesky().ok_or(GamError::RankDeficient)?;
    let l = chol.l_dirty();
    for i in 0..h.nrows() {
        if l[(i, i)].powi(2) < 1e-12 * h[(i, i)].abs() {
            return Err(GamError::RankDeficient);
        }
    }
    Ok(())
}

/// Normalizing constants `c_j` at the starting weights.
fn penalty_norms(problem: &GamProblem, phi: f64) -> Vec<f64> {
    let (eta, mu) = initial_state(problem);
    let work = working(problem, &eta, &mu, phi);
    problem
        .penalties
        .iter()
        .map(|pen| {
            let d = pen.matrix.nrows();
            let g = work.g.view((pen.offset, pen.offset), (d, d)).norm();
            let s = pen.matrix.norm();
            if g > 0.0 && s > 0.0 { g / s } else { 1.0 }
        })
        .collect()
}

struct Selected {
    fit: Pirls,
    rho: Vec<f64>,
    norms: Vec<f64>,
    criterion: Option<f64>,
    trace: Vec<TraceEntry>,
}

fn performance_iteration(
    problem: &GamProblem,
    settings: &FitSettings,
    phi: f64,
) -> Result<Selected, GamError> {
    check_identifiable(problem)?;
    let factors: Vec<PenaltyFactor> = problem.penalties.iter().map(factorize).collect();
    let norms = penalty_norms(problem, phi);
    let scoring = ScoreInputs {
        method: settings.lambda_method,
        known_scale: problem.family.known_scale(),
        mp: problem.design.ncols() - factors.iter().map(|f| f.rank).sum::<usize>(),
    };
    let mut rho = vec![settings.lambda_grid.start(); factors.len()];
    let mut trace = Vec::new();
    let mut start: Option<DVector<f64>> = None;
    let mut criterion = None;
    for outer in 0..settings.outer_max_iter {
        let fit = pirls(problem, &raw_lambda(&rho, &norms), phi, settings, start.as_ref())?;
        if factors.is_empty() {
            return Ok(Selected {
                fit,
                rho,
                norms,
                criterion: None,
                trace,
            });
        }
        let work = working(problem, &fit.eta, &fit.mu, phi);
        let mut next = rho.clone();
        let score = coordinate_descent(
            &work,
            &problem.penalties,
            &factors,
            &norms,
            &mut next,
            settings,
            &scoring,
            outer,
            &mut trace,
        )?;
        criterion = Some(score);
        if next == rho {
            return Ok(Selected {
                fit,
                rho,
                norms,
                criterion,
                trace,
            });
        }
        rho = next;
        start = Some(fit.beta);
    }
    let fit = pirls(problem, &raw_lambda(&rho, &norms), phi, settings, start.as_ref())?;
    Ok(Selected {
        fit,
        rho,
        norms,
        criterion,
        trace,
    })
}

fn finish(
    problem: &GamProblem,
    selected: Selected,
    phi: Option<f64>,
) -> Result<FittedGam, GamError> {
    let Selected {
        fit,
        rho,
        norms,
        criterion,
        trace,
    } = selected;
    let p = problem.design.ncols();
    let lambda = raw_lambda(&rho, &norms);
    let work = working(problem, &fit.eta, &fit.mu, phi.unwrap_or(0.0));
    let state = solve(&work, &penalty_matrix(p, &problem.penalties, &lambda))?;
    let diag_f: Vec<f64> = (0..p)
        .map(|i| state.hinv.row(i).dot(&work.g.column(i).transpose()))
        .collect();
    let smooths = problem
        .penalties
        .iter()
        .map(|pen| {
            let dim = pen.matrix.nrows();
            SmoothInfo {
                label: pen.label.clone(),
                offset: pen.offset,
                dim,
                rank: factorize(pen).rank,
                edf: diag_f[pen.offset..pen.offset + dim].iter().sum(),
            }
        })
        .collect();
    let edf_total = diag_f.iter().sum::<f64>();
    let scale = if problem.family.known_scale() {
        1.0
    } else {
        let gb = &work.g * &fit.beta;
        let rss = (work.zz - 2.0 * fit.beta.dot(&work.b) + fit.beta.dot(&gb)).max(0.0);
        let resid_df = work.n as f64 - edf_total;
        if resid_df > 0.0 { rss / resid_df } else { 0.0 }
    };
    let mut v_beta = state.hinv * scale;
    v_beta = (&v_beta + v_beta.transpose()) * 0.5;
    Ok(FittedGam {
        format_version: FORMAT_VERSION,
        family: problem.family,
        columns: problem.column_names(),
        beta: fit.beta,
        lambda,
        rho,
        smooths,
        v_beta,
        phi_ar1: phi,
        edf_total,
        deviance: fit.deviance,
        penalized_deviance: fit.pen_dev,
        scale,
        criterion,
        criterion_trace: trace,
        converged: fit.converged,
        iterations: fit.iterations,
        fitted_values: fit.mu,
    })
}

fn check_phi(phi: f64) -> Result<(), GamError> {
    if phi.is_finite() && phi.abs() < 1.0 {
        Ok(())
    } else {
        Err(GamError::InvalidPhi(phi))
    }
}

/// Fit with smoothing parameters chosen by the configured criterion.
///
/// With `settings.ar1_enabled` the two-stage AR(1) scheme runs on the
/// problem's groups and the whitened refit is returned.
pub fn fit(problem: &GamProblem, settings: &FitSettings) -> Result<FittedGam, GamError> {
    settings.validate()?;
    problem.validate()?;
    if settings.ar1_enabled && problem.groups.is_none() {
        return Err(GamError::MissingGroups);
    }
    let plain = finish(problem, performance_iteration(problem, settings, 0.0)?, None)?;
    if !settings.ar1_enabled {
        return Ok(plain);
    }
    let groups = problem.groups.as_ref().expect("checked above");
    let phi = estimate_ar1(pearson_residuals(problem, &plain).as_slice(), groups)?;
    refit_with_ar1(problem, settings, phi)
}

/// Smoothing parameter selection alone (no AR(1) whitening).
pub fn select_lambda(problem: &GamProblem, settings: &FitSettings) -> Result<LambdaSelection, GamError> {
    settings.validate()?;
    problem.validate()?;
    let sel = performance_iteration(problem, settings, 0.0)?;
    Ok(LambdaSelection {
        lambda: raw_lambda(&sel.rho, &sel.norms),
        rho: sel.rho,
        criterion: sel.criterion,
        trace: sel.trace,
    })
}

/// Refit on the AR(1)-whitened working model with a given phi.
pub fn refit_with_ar1(problem: &GamProblem, settings: &FitSettings, phi: f64) -> Result<FittedGam, GamError> {
    settings.validate()?;
    problem.validate()?;
    check_phi(phi)?;
    if problem.groups.is_none() {
        return Err(GamError::MissingGroups);
    }
    finish(problem, performance_iteration(problem, settings, phi)?, Some(phi))
}

/// Fit at fixed raw smoothing parameters, optionally with AR(1) whitening.
pub fn fit_with_lambda(
    problem: &GamProblem,
    settings: &FitSettings,
    lambda: &[f64],
    phi: Option<f64>,
) -> Result<FittedGam, GamError> {
    settings.validate()?;
    problem.validate()?;
    if lambda.len() != problem.penalties.len() {
        return Err(GamError::LambdaCount {
            expected: problem.penalties.len(),
            got: lambda.len(),
        });
    }
    if let Some(phi) = phi {
        check_phi(phi)?;
        if problem.groups.is_none() {
            return Err(GamError::MissingGroups);
        }
    }
    check_identifiable(problem)?;
    let fit = pirls(problem, lambda, phi.unwrap_or(0.0), settings, None)?;
    let selected = Selected {
        fit,
        rho: vec![1.0; lambda.len()],
        norms: lambda.to_vec(),
        criterion: None,
        trace: Vec::new(),
    };
    finish(problem, selected, phi)
}

/// Pearson residuals `(y - mu) / sqrt(V(mu))`.
pub fn pearson_residuals(problem: &GamProblem, fitted: &FittedGam) -> DVector<f64> {
    DVector::from_iterator(
        problem.y.len(),
        problem
            .y
            .iter()
            .zip(fitted.fitted_values.iter())
            .map(|(&y, &m)| (y - m) / problem.family.variance(m).sqrt()),
    )
}

/// Pooled within-group lag-1 autocorrelation of standardized residuals.
pub fn estimate_ar1(residuals: &[f64], groups: &ArGroups) -> Result<f64, GamError> {
    groups.validate(residuals.len())?;
    let (mut lag, mut pairs, mut sq, mut count) = (0.0, 0usize, 0.0, 0usize);
    for rows in &groups.groups {
        for t in 0..rows.len() {
            let r = residuals[rows[t]];
            sq += r * r;
            count += 1;
            if t > 0 {
                lag += r * residuals[rows[t - 1]];
                pairs += 1;
            }
        }
    }
    if count == 0 || sq == 0.0 {
        return Err(GamError::ZeroVariance);
    }
    let phi = (lag / pairs as f64) / (sq / count as f64);
    Ok(phi.clamp(-0.99, 0.99))
}

pub fn predict(fitted: &FittedGam, design: &DMatrix<f64>) -> Result<Prediction, GamError> {
    if design.ncols() != fitted.beta.len() {
        return Err(GamError::DimensionMismatch {
            expected: fitted.beta.len(),
            got: design.ncols(),
        });
    }
    let eta = design * &fitted.beta;
    let mu = eta.map(|e| fitted.family.inverse_link(e));
    let xv = design * &fitted.v_beta;
    let se_eta = DVector::from_iterator(
        design.nrows(),
        (0..design.nrows()).map(|i| xv.row(i).dot(&design.row(i)).max(0.0).sqrt()),
    );
    Ok(Prediction { eta, mu, se_eta })
}

pub fn model_summary(fitted: &FittedGam, y: &[f64]) -> ModelSummary {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let mu = fitted.fitted_values.as_slice();
    let null_dev = fitted.family.deviance(y, &vec![mean; y.len()]);
    let dev = fitted.family.deviance(y, mu);
    let deviance_explained = if null_dev > 0.0 { 1.0 - dev / null_dev } else { 0.0 };
    let rss: f64 = y.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum();
    let tss: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
    let r_squared_adj = if rss == 0.0 {
        1.0
    } else {
        1.0 - (rss / (n - fitted.edf_total)) / (tss / (n - 1.0))
    };
    ModelSummary {
        edf: fitted
            .smooths
            .iter()
            .map(|s| (s.label.clone(), s.edf))
            .collect(),
        edf_total: fitted.edf_total,
        deviance_explained,
        r_squared_adj,
    }
}
