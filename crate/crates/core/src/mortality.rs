//! The weekly death-registration model: design assembly, fitting, baselines,
//! the all-smooth trial variant and a simulator for recovery checks.
//!
//! Linear predictor for age band `a`, sex `m`, week `t`:
//!
//! ```text
//! alpha[m,a] + beta[SH] + gamma[LSH] + omega . (ROY, ESTR, XMAS, LROY, LESTR, LXMAS)
//!   + s1[m,a](WK) + s2[m,a](WKEDAY) + s3[m,a](TMID) + s4[a](TMDI)
//!   + zeta1[m,a] TRAN + zeta2[a] AQIMIN
//! ```
//!
//! SH and LSH use treatment coding against level 1 (no holiday). Smooths are
//! centered over their training rows and linear covariates over the same rows,
//! so `alpha` is the log mean of a holiday-free week at typical conditions.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, DiscreteCDF, Normal, Poisson};
use thiserror::Error;

use crate::calendar::SECULAR_LEVEL_NAMES;
use crate::deaths::{AgeBand, DeathObservation, Sex};
use crate::features::FeatureRow;
use crate::gam::{
    self, ArGroups, Family, FitSettings, FittedGam, GamError, GamProblem, Penalty,
};
use crate::spline::{apply_constraints, build_basis, knot_placement, BasisKind, BasisSpec, SplineError};

#[derive(Debug, Error)]
pub enum MortalityError {
    #[error("no feature row for the week ending {0}")]
    MissingFeatures(NaiveDate),
    #[error("no training rows on or before {0}")]
    EmptyTraining(NaiveDate),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("coefficient vector has {got} entries, layout has {expected}")]
    CoefficientCount { expected: usize, got: usize },
    #[error("{term}: {source}")]
    Spline {
        term: String,
        #[source]
        source: SplineError,
    },
    #[error("column {0} is zero in every training row")]
    EmptyColumn(String),
    #[error(transparent)]
    Gam(#[from] GamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingPolicy {
    Shared,
    BySex,
    ByAge,
    ByAgeSex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Input {
    Wk,
    Wkeday,
    Tmid,
    Tmdi,
    Tran,
    Aqimin,
}

impl Input {
    pub const ALL: [Input; 6] = [
        Input::Wk,
        Input::Wkeday,
        Input::Tmid,
        Input::Tmdi,
        Input::Tran,
        Input::Aqimin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Input::Wk => "WK",
            Input::Wkeday => "WKEDAY",
            Input::Tmid => "TMID",
            Input::Tmdi => "TMDI",
            Input::Tran => "TRAN",
            Input::Aqimin => "AQIMIN",
        }
    }

    pub fn value(self, row: &FeatureRow) -> f64 {
        match self {
            Input::Wk => row.time.wk as f64,
            Input::Wkeday => row.time.wkeday as f64,
            Input::Tmid => row.tmid,
            Input::Tmdi => row.tmdi,
            Input::Tran => row.tran,
            Input::Aqimin => row.aqimin,
        }
    }

    /// Largest basis dimension allowed for a smooth of this input.
    pub fn dof_budget(self) -> usize {
        match self {
            Input::Wk => 12,
            Input::Wkeday => 5,
            _ => 3,
        }
    }
}

impl fmt::Display for Input {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum TermForm {
    Smooth { kind: BasisKind, k: usize },
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermPlan {
    pub input: Input,
    #[serde(flatten)]
    pub form: TermForm,
    pub policy: SharingPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MortalityModelSpec {
    pub terms: Vec<TermPlan>,
    /// Last week end included in training.
    pub window_end: NaiveDate,
}

pub fn default_window_end() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 2, 28).expect("valid date")
}

impl MortalityModelSpec {
    pub fn main() -> Self {
        use SharingPolicy::*;
        let smooth = |input, kind, k, policy| TermPlan {
            input,
            form: TermForm::Smooth { kind, k },
            policy,
        };
        MortalityModelSpec {
            terms: vec![
                smooth(Input::Wk, BasisKind::CyclicCubic, 12, ByAgeSex),
                smooth(Input::Wkeday, BasisKind::Cubic, 5, ByAgeSex),
                smooth(Input::Tmid, BasisKind::Cubic, 3, ByAgeSex),
                smooth(Input::Tmdi, BasisKind::Cubic, 3, ByAge),
                TermPlan {
                    input: Input::Tran,
                    form: TermForm::Linear,
                    policy: ByAgeSex,
                },
                TermPlan {
                    input: Input::Aqimin,
                    form: TermForm::Linear,
                    policy: ByAge,
                },
            ],
            window_end: default_window_end(),
        }
    }

    /// Every input as an age-and-sex-specific smooth.
    pub fn trial_full() -> Self {
        let terms = Input::ALL
            .iter()
            .map(|&input| TermPlan {
                input,
                form: TermForm::Smooth {
                    kind: if input == Input::Wk {
                        BasisKind::CyclicCubic
                    } else {
                        BasisKind::Cubic
                    },
                    k: input.dof_budget(),
                },
                policy: SharingPolicy::ByAgeSex,
            })
            .collect();
        MortalityModelSpec {
            terms,
            window_end: default_window_end(),
        }
    }

    pub fn validate(&self) -> Result<(), MortalityError> {
        let mut seen = Vec::new();
        for t in &self.terms {
            if seen.contains(&t.input) {
                return Err(MortalityError::InvalidSpec(format!(
                    "{} appears twice",
                    t.input
                )));
            }
            seen.push(t.input);
            if let TermForm::Smooth { kind, k } = t.form {
                if k < 3 || k > t.input.dof_budget() {
                    return Err(MortalityError::InvalidSpec(format!(
                        "{}: k={k} outside 3..={}",
                        t.input,
                        t.input.dof_budget()
                    )));
                }
                if (t.input == Input::Wk) != (kind == BasisKind::CyclicCubic) {
                    return Err(MortalityError::InvalidSpec(format!(
                        "{}: only WK uses the cyclic basis",
                        t.input
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Which (sex, age) cells a block applies to; `None` pools over that factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub sex: Option<Sex>,
    pub age: Option<AgeBand>,
}

impl GroupKey {
    pub fn matches(&self, age: AgeBand, sex: Sex) -> bool {
        self.sex.is_none_or(|s| s == sex) && self.age.is_none_or(|a| a == age)
    }

    pub fn for_policy(policy: SharingPolicy) -> Vec<GroupKey> {
        let sexes: Vec<Option<Sex>> = match policy {
            SharingPolicy::BySex | SharingPolicy::ByAgeSex => Sex::ALL.iter().map(|&s| Some(s)).collect(),
            _ => vec![None],
        };
        let ages: Vec<Option<AgeBand>> = match policy {
            SharingPolicy::ByAge | SharingPolicy::ByAgeSex => AgeBand::all().map(Some).collect(),
            _ => vec![None],
        };
        sexes
            .iter()
            .flat_map(|&sex| ages.iter().map(move |&age| GroupKey { sex, age }))
            .collect()
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.sex, self.age) {
            (None, None) => f.write_str("all"),
            (Some(s), None) => write!(f, "{s}"),
            (None, Some(a)) => write!(f, "{a}"),
            (Some(s), Some(a)) => write!(f, "{s},{a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBlock {
    pub input: Input,
    pub group: GroupKey,
    pub column: usize,
    pub center: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothBlock {
    pub input: Input,
    pub group: GroupKey,
    pub basis: BasisSpec,
    /// Raw-to-centered coefficient map (k x dim).
    pub constraint: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
    pub offset: usize,
    pub dim: usize,
}

impl SmoothBlock {
    pub fn label(&self) -> String {
        format!("s({})[{}]", self.input, self.group)
    }

    /// Centered basis rows at `xs` (n x dim).
    pub fn basis_rows(&self, xs: &[f64]) -> Result<DMatrix<f64>, MortalityError> {
        let raw = build_basis(&self.basis, xs).map_err(|source| MortalityError::Spline {
            term: self.label(),
            source,
        })?;
        Ok(raw.design * &self.constraint)
    }
}

/// Column layout of the model design; enough to rebuild rows for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignLayout {
    pub columns: Vec<String>,
    /// One per (sex, age), female first.
    pub intercepts: Vec<(Sex, AgeBand, usize)>,
    /// Contrast columns for SH levels 2..=5.
    pub sh: [usize; 4],
    /// Contrast columns for LSH levels 2..=5.
    pub lsh: [usize; 4],
    /// ROY, ESTR, XMAS, LROY, LESTR, LXMAS.
    pub omega: [usize; 6],
    pub linear: Vec<LinearBlock>,
    pub smooths: Vec<SmoothBlock>,
}

pub const OMEGA_NAMES: [&str; 6] = ["ROY", "ESTR", "XMAS", "LROY", "LESTR", "LXMAS"];

/// A named block of design columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSymbol {
    pub symbol: String,
    pub columns: std::ops::Range<usize>,
}

impl DesignLayout {
    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn parametric_columns(&self) -> usize {
        self.intercepts.len() + 8 + 6 + self.linear.len()
    }

    pub fn penalties(&self) -> Vec<Penalty> {
        self.smooths
            .iter()
            .map(|s| Penalty {
                label: s.label(),
                offset: s.offset,
                matrix: s.penalty.clone(),
            })
            .collect()
    }

    /// Every block of the model with its columns, in column order.
    pub fn blocks(&self) -> Vec<BlockSymbol> {
        let mut out = Vec::new();
        for &(sex, age, c) in &self.intercepts {
            out.push(BlockSymbol {
                symbol: format!("alpha[{},{}]", sex.indicator(), age.index()),
                columns: c..c + 1,
            });
        }
        for (i, &c) in self.sh.iter().enumerate() {
            out.push(BlockSymbol {
                symbol: format!("beta[{}]", i + 2),
                columns: c..c + 1,
            });
        }
        for (i, &c) in self.lsh.iter().enumerate() {
            out.push(BlockSymbol {
                symbol: format!("gamma[{}]", i + 2),
                columns: c..c + 1,
            });
        }
        for (i, &c) in self.omega.iter().enumerate() {
            out.push(BlockSymbol {
                symbol: format!("omega[{}]", i + 1),
                columns: c..c + 1,
            });
        }
        for l in &self.linear {
            out.push(BlockSymbol {
                symbol: format!("zeta({})[{}]", l.input, l.group),
                columns: l.column..l.column + 1,
            });
        }
        for s in &self.smooths {
            out.push(BlockSymbol {
                symbol: s.label(),
                columns: s.offset..s.offset + s.dim,
            });
        }
        out.sort_by_key(|b| b.columns.start);
        out
    }

    /// Design rows for `(features, age, sex)` cells.
    pub fn design(&self, cells: &[(&FeatureRow, AgeBand, Sex)]) -> Result<DMatrix<f64>, MortalityError> {
        let n = cells.len();
        let mut x = DMatrix::zeros(n, self.ncols());
        for (i, &(f, age, sex)) in cells.iter().enumerate() {
            for &(s, a, c) in &self.intercepts {
                if s == sex && a == age {
                    x[(i, c)] = 1.0;
                }
            }
            let h = &f.holidays;
            if h.sh >= 2 {
                x[(i, self.sh[h.sh as usize - 2])] = 1.0;
            }
            if h.lsh >= 2 {
                x[(i, self.lsh[h.lsh as usize - 2])] = 1.0;
            }
            let counts = [h.roy, h.estr, h.xmas, h.lroy, h.lestr, h.lxmas];
            for (c, v) in self.omega.iter().zip(counts) {
                x[(i, *c)] = v as f64;
            }
            for l in &self.linear {
                if l.group.matches(age, sex) {
                    x[(i, l.column)] = l.input.value(f) - l.center;
                }
            }
        }
        for s in &self.smooths {
            let rows: Vec<usize> = (0..n).filter(|&i| s.group.matches(cells[i].1, cells[i].2)).collect();
            if rows.is_empty() {
                continue;
            }
            let xs: Vec<f64> = rows.iter().map(|&i| s.input.value(cells[i].0)).collect();
            let b = s.basis_rows(&xs)?;
            for (r, &i) in rows.iter().enumerate() {
                for j in 0..s.dim {
                    x[(i, s.offset + j)] = b[(r, j)];
                }
            }
        }
        Ok(x)
    }
}

/// Build the layout from the training cells (knots, constraints, centers).
pub fn build_layout(
    spec: &MortalityModelSpec,
    cells: &[(&FeatureRow, AgeBand, Sex)],
) -> Result<DesignLayout, MortalityError> {
    spec.validate()?;
    let mut columns = Vec::new();
    let mut push = |name: String| {
        columns.push(name);
        columns.len() - 1
    };
    let mut intercepts = Vec::new();
    for sex in Sex::ALL {
        for age in AgeBand::all() {
            intercepts.push((sex, age, push(format!("alpha[{sex},{age}]"))));
        }
    }
    let mut sh = [0; 4];
    for (i, c) in sh.iter_mut().enumerate() {
        *c = push(format!("SH:{}", SECULAR_LEVEL_NAMES[i + 1]));
    }
    let mut lsh = [0; 4];
    for (i, c) in lsh.iter_mut().enumerate() {
        *c = push(format!("LSH:{}", SECULAR_LEVEL_NAMES[i + 1]));
    }
    let mut omega = [0; 6];
    for (i, c) in omega.iter_mut().enumerate() {
        *c = push(OMEGA_NAMES[i].to_string());
    }
    let mut linear = Vec::new();
    for t in spec.terms.iter().filter(|t| t.form == TermForm::Linear) {
        for group in GroupKey::for_policy(t.policy) {
            let vals: Vec<f64> = cells
                .iter()
                .filter(|c| group.matches(c.1, c.2))
                .map(|c| t.input.value(c.0))
                .collect();
            let center = if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            linear.push(LinearBlock {
                input: t.input,
                group,
                column: push(format!("{}[{group}]", t.input)),
                center,
            });
        }
    }
    let mut smooths = Vec::new();
    for t in &spec.terms {
        let TermForm::Smooth { kind, k } = t.form else {
            continue;
        };
        for group in GroupKey::for_policy(t.policy) {
            let xs: Vec<f64> = cells
                .iter()
                .filter(|c| group.matches(c.1, c.2))
                .map(|c| t.input.value(c.0))
                .collect();
            let label = format!("s({})[{group}]", t.input);
            let spline_err = |source| MortalityError::Spline {
                term: label.clone(),
                source,
            };
            let basis = match kind {
                BasisKind::CyclicCubic => BasisSpec::cyclic(0.5, 53.5, k),
                BasisKind::Cubic => BasisSpec::cubic(knot_placement(&xs, k).map_err(spline_err)?),
            }
            .map_err(spline_err)?;
            let con = apply_constraints(&build_basis(&basis, &xs).map_err(spline_err)?);
            let dim = con.constraint.ncols();
            let offset = push(format!("{label}.1"));
            for j in 1..dim {
                push(format!("{label}.{}", j + 1));
            }
            smooths.push(SmoothBlock {
                input: t.input,
                group,
                basis,
                constraint: con.constraint,
                penalty: con.penalty,
                offset,
                dim,
            });
        }
    }
    Ok(DesignLayout {
        columns,
        intercepts,
        sh,
        lsh,
        omega,
        linear,
        smooths,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMeta {
    pub week_end: NaiveDate,
    pub year: i32,
    pub week: u32,
    pub age: AgeBand,
    pub sex: Sex,
}

#[derive(Debug, Clone)]
pub struct AssembledData {
    pub y: DVector<f64>,
    pub design: DMatrix<f64>,
    pub penalties: Vec<Penalty>,
    pub rows: Vec<RowMeta>,
    pub layout: DesignLayout,
    pub groups: ArGroups,
    /// Death rows dropped for falling after the training window.
    pub excluded_after_window: usize,
}

impl AssembledData {
    pub fn problem(&self) -> GamProblem {
        GamProblem {
            design: self.design.clone(),
            penalties: self.penalties.clone(),
            y: self.y.clone(),
            family: Family::PoissonLog,
            groups: Some(self.groups.clone()),
            columns: self.layout.columns.clone(),
        }
    }
}

fn feature_index(features: &[FeatureRow]) -> BTreeMap<NaiveDate, &FeatureRow> {
    features.iter().map(|f| (f.week_end, f)).collect()
}

/// AR(1) groups of consecutive rows sharing (year, age, sex); rows must be in
/// canonical order. Groups shorter than three rows are left out.
pub fn ar_groups(rows: &[RowMeta]) -> ArGroups {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut key = None;
    for (i, r) in rows.iter().enumerate() {
        let k = (r.sex, r.age, r.year);
        if key != Some(k) {
            groups.push(Vec::new());
            key = Some(k);
        }
        groups.last_mut().expect("pushed above").push(i);
    }
    groups.retain(|g| g.len() >= 3);
    ArGroups { groups }
}

/// Response, design, penalties and row metadata in canonical (sex, age, date)
/// order. Deaths after `spec.window_end` are dropped.
pub fn assemble_design(
    features: &[FeatureRow],
    deaths: &[DeathObservation],
    spec: &MortalityModelSpec,
) -> Result<AssembledData, MortalityError> {
    let index = feature_index(features);
    let mut kept: Vec<&DeathObservation> = Vec::new();
    let mut excluded = 0;
    for d in deaths {
        if d.week_end_date > spec.window_end {
            excluded += 1;
            continue;
        }
        if !index.contains_key(&d.week_end_date) {
            return Err(MortalityError::MissingFeatures(d.week_end_date));
        }
        kept.push(d);
    }
    if kept.is_empty() {
        return Err(MortalityError::EmptyTraining(spec.window_end));
    }
    kept.sort_by_key(|d| (d.sex, d.age, d.week_end_date));
    let cells: Vec<(&FeatureRow, AgeBand, Sex)> = kept
        .iter()
        .map(|d| (index[&d.week_end_date], d.age, d.sex))
        .collect();
    let layout = build_layout(spec, &cells)?;
    let design = layout.design(&cells)?;
    for &c in layout.sh.iter().chain(&layout.lsh).chain(&layout.omega) {
        if design.column(c).iter().all(|&v| v == 0.0) {
            return Err(MortalityError::EmptyColumn(layout.columns[c].clone()));
        }
    }
    let rows: Vec<RowMeta> = kept
        .iter()
        .map(|d| RowMeta {
            week_end: d.week_end_date,
            year: d.year,
            week: d.week_number,
            age: d.age,
            sex: d.sex,
        })
        .collect();
    Ok(AssembledData {
        y: DVector::from_iterator(kept.len(), kept.iter().map(|d| d.count as f64)),
        penalties: layout.penalties(),
        groups: ar_groups(&rows),
        design,
        rows,
        layout,
        excluded_after_window: excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedMortalityModel {
    pub spec: MortalityModelSpec,
    pub layout: DesignLayout,
    pub gam: FittedGam,
}

/// One row of the coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub label: String,
    pub log_estimate: f64,
    pub log_se: f64,
    /// `exp(estimate)`: a count for intercepts, a multiplier otherwise.
    pub estimate: f64,
    /// First-order standard error of `estimate`.
    pub se: f64,
    pub is_multiplier: bool,
}

impl CoefficientRow {
    pub fn from_log(label: impl Into<String>, log_estimate: f64, log_se: f64, is_multiplier: bool) -> Self {
        let estimate = log_estimate.exp();
        CoefficientRow {
            label: label.into(),
            log_estimate,
            log_se,
            estimate,
            se: estimate * log_se,
            is_multiplier,
        }
    }
}

/// Smooth or linear term evaluated on a grid, on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermCurve {
    pub input: Input,
    pub group: GroupKey,
    pub x: Vec<f64>,
    pub fit: Vec<f64>,
    pub se: Vec<f64>,
}

impl FittedMortalityModel {
    /// Intercepts and holiday effects in the published table layout.
    pub fn coefficient_table(&self) -> Vec<CoefficientRow> {
        let b = &self.gam.beta;
        let se = self.gam.coefficient_se();
        let mut out = Vec::new();
        for &(sex, age, c) in &self.layout.intercepts {
            let who = match sex {
                Sex::Female => "females",
                Sex::Male => "males",
            };
            out.push(CoefficientRow::from_log(
                format!("{who} aged {age}"),
                b[c],
                se[c],
                false,
            ));
        }
        let mut holiday = |label: String, c: usize| {
            out.push(CoefficientRow::from_log(label, b[c], se[c], true));
        };
        for (i, &c) in self.layout.sh.iter().enumerate() {
            holiday(format!("{} during week", SECULAR_LEVEL_NAMES[i + 1]), c);
        }
        for (i, &c) in self.layout.omega[..3].iter().enumerate() {
            holiday(format!("{} holidays during week", OMEGA_NAMES[i]), c);
        }
        for (i, &c) in self.layout.lsh.iter().enumerate() {
            holiday(format!("{} during prev. week", SECULAR_LEVEL_NAMES[i + 1]), c);
        }
        for (i, &c) in self.layout.omega[3..].iter().enumerate() {
            holiday(format!("{} holidays during prev. week", OMEGA_NAMES[i]), c);
        }
        out
    }

    /// Evaluate every term of `input` for `group` on `x` (log scale, centered).
    pub fn term_curve(&self, input: Input, group: GroupKey, x: &[f64]) -> Result<TermCurve, MortalityError> {
        if let Some(s) = self.layout.smooths.iter().find(|s| s.input == input && s.group == group) {
            let rows = s.basis_rows(x)?;
            let beta = self.gam.beta.rows(s.offset, s.dim);
            let cov = self.gam.v_beta.view((s.offset, s.offset), (s.dim, s.dim));
            let fit = (&rows * beta).iter().copied().collect();
            let xv = &rows * cov;
            let se = (0..x.len())
                .map(|i| xv.row(i).dot(&rows.row(i)).max(0.0).sqrt())
                .collect();
            return Ok(TermCurve {
                input,
                group,
                x: x.to_vec(),
                fit,
                se,
            });
        }
        if let Some(l) = self.layout.linear.iter().find(|l| l.input == input && l.group == group) {
            let b = self.gam.beta[l.column];
            let s = self.gam.v_beta[(l.column, l.column)].max(0.0).sqrt();
            return Ok(TermCurve {
                input,
                group,
                x: x.to_vec(),
                fit: x.iter().map(|v| b * (v - l.center)).collect(),
                se: x.iter().map(|v| s * (v - l.center).abs()).collect(),
            });
        }
        Err(MortalityError::InvalidSpec(format!(
            "no {input} term for group {group}"
        )))
    }

    /// Range of the training values of a term (its basis domain for smooths).
    pub fn term_range(&self, input: Input, group: GroupKey) -> Option<(f64, f64)> {
        self.layout
            .smooths
            .iter()
            .find(|s| s.input == input && s.group == group)
            .map(|s| s.basis.domain())
    }
}

/// Fit the model with the two-stage AR(1) refit on (year, age, sex) groups.
pub fn fit_mortality_gam(
    data: &AssembledData,
    spec: &MortalityModelSpec,
    settings: &FitSettings,
) -> Result<FittedMortalityModel, MortalityError> {
    let settings = FitSettings {
        ar1_enabled: true,
        ..settings.clone()
    };
    let gam = gam::fit(&data.problem(), &settings)?;
    Ok(FittedMortalityModel {
        spec: spec.clone(),
        layout: data.layout.clone(),
        gam,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineCell {
    pub week_end: NaiveDate,
    pub year: i32,
    pub week: u32,
    pub age: AgeBand,
    pub sex: Sex,
    pub expected: f64,
    pub se_log: f64,
    pub imputed: bool,
}

/// Expected counts for every (week, age, sex) of the given feature rows.
pub fn baseline(
    fitted: &FittedMortalityModel,
    features: &[FeatureRow],
) -> Result<Vec<BaselineCell>, MortalityError> {
    let mut cells = Vec::with_capacity(features.len() * 14);
    for sex in Sex::ALL {
        for age in AgeBand::all() {
            for f in features {
                cells.push((f, age, sex));
            }
        }
    }
    let x = fitted.layout.design(&cells)?;
    let pred = gam::predict(&fitted.gam, &x)?;
    Ok(cells
        .iter()
        .enumerate()
        .map(|(i, &(f, age, sex))| BaselineCell {
            week_end: f.week_end,
            year: f.week.year,
            week: f.week.week,
            age,
            sex,
            expected: pred.mu[i],
            se_log: pred.se_eta[i],
            imputed: f.imputed,
        })
        .collect())
}

/// Male-minus-female comparison of one input's smooths for one age band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingEntry {
    pub input: Input,
    pub age: AgeBand,
    pub max_abs_gap: f64,
    /// Two standard errors of the gap where `max_abs_gap` occurs.
    pub envelope_at_max: f64,
    /// Largest `|gap| - 2 SE` over the grid.
    pub max_excess: f64,
    pub requires_by_sex: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingReport {
    pub entries: Vec<SharingEntry>,
    pub grid_points: usize,
}

/// Gaps smaller than this on the log scale are not treated as a sex difference.
pub const PRACTICAL_GAP: f64 = 0.04;

impl SharingReport {
    pub fn flagged(&self) -> impl Iterator<Item = &SharingEntry> {
        self.entries.iter().filter(|e| e.requires_by_sex)
    }
}

/// Compare male and female smooths of every input and age band on a grid.
pub fn sharing_report(fitted: &FittedMortalityModel, grid_points: usize) -> Result<SharingReport, MortalityError> {
    let mut entries = Vec::new();
    let v = &fitted.gam.v_beta;
    let beta = &fitted.gam.beta;
    for input in Input::ALL {
        for age in AgeBand::all() {
            let find = |sex| {
                fitted.layout.smooths.iter().find(|s| {
                    s.input == input && s.group == GroupKey { sex: Some(sex), age: Some(age) }
                })
            };
            let (Some(f), Some(m)) = (find(Sex::Female), find(Sex::Male)) else {
                continue;
            };
            let (flo, fhi) = f.basis.domain();
            let (mlo, mhi) = m.basis.domain();
            let (lo, hi) = (flo.max(mlo), fhi.min(mhi));
            let xs: Vec<f64> = (0..grid_points)
                .map(|i| lo + (hi - lo) * i as f64 / (grid_points.max(2) - 1) as f64)
                .collect();
            let bf = f.basis_rows(&xs)?;
            let bm = m.basis_rows(&xs)?;
            // gap = [bm, -bf] . [beta_m; beta_f]
            let mut rows = DMatrix::zeros(xs.len(), m.dim + f.dim);
            rows.view_mut((0, 0), (xs.len(), m.dim)).copy_from(&bm);
            rows.view_mut((0, m.dim), (xs.len(), f.dim)).copy_from(&(-&bf));
            let idx: Vec<usize> = (m.offset..m.offset + m.dim).chain(f.offset..f.offset + f.dim).collect();
            let sub_b = DVector::from_iterator(idx.len(), idx.iter().map(|&i| beta[i]));
            let sub_v = DMatrix::from_fn(idx.len(), idx.len(), |a, b| v[(idx[a], idx[b])]);
            let gap = &rows * sub_b;
            let rv = &rows * sub_v;
            let mut entry = SharingEntry {
                input,
                age,
                max_abs_gap: 0.0,
                envelope_at_max: 0.0,
                max_excess: f64::NEG_INFINITY,
                requires_by_sex: false,
            };
            for i in 0..xs.len() {
                let se = rv.row(i).dot(&rows.row(i)).max(0.0).sqrt();
                let g = gap[i].abs();
                if g > entry.max_abs_gap || i == 0 {
                    entry.max_abs_gap = g;
                    entry.envelope_at_max = 2.0 * se;
                }
                entry.max_excess = entry.max_excess.max(g - 2.0 * se);
                if g > 2.0 * se && g >= PRACTICAL_GAP {
                    entry.requires_by_sex = true;
                }
            }
            entries.push(entry);
        }
    }
    Ok(SharingReport {
        entries,
        grid_points,
    })
}

/// Fit the all-smooth trial model and report where sexes differ.
pub fn trial_full_model(
    features: &[FeatureRow],
    deaths: &[DeathObservation],
    window_end: NaiveDate,
    settings: &FitSettings,
) -> Result<(FittedMortalityModel, SharingReport), MortalityError> {
    let spec = MortalityModelSpec {
        window_end,
        ..MortalityModelSpec::trial_full()
    };
    let data = assemble_design(features, deaths, &spec)?;
    let fitted = fit_mortality_gam(&data, &spec, settings)?;
    let report = sharing_report(&fitted, 100)?;
    Ok((fitted, report))
}

/// Poisson quantile at probability `p`, searching from a normal guess.
fn poisson_quantile(dist: &Poisson, mean: f64, p: f64) -> u64 {
    let z = Normal::standard().inverse_cdf(p.clamp(1e-15, 1.0 - 1e-15));
    let mut k = (mean + z * mean.sqrt()).round().max(0.0) as u64;
    while k > 0 && dist.cdf(k - 1) >= p {
        k -= 1;
    }
    while dist.cdf(k) < p {
        k += 1;
    }
    k
}

/// Draw counts from `Poisson(exp(X beta))` for every (week, age, sex) cell.
///
/// With `phi != 0` the draws within each (year, age, sex) series are linked by
/// a Gaussian AR(1) copula: the latent normal series has lag-1 correlation
/// `phi` and each count is the Poisson quantile of its latent uniform.
pub fn simulate_observations(
    layout: &DesignLayout,
    true_coefficients: &DVector<f64>,
    features: &[FeatureRow],
    phi: f64,
    seed: u64,
) -> Result<Vec<DeathObservation>, MortalityError> {
    if true_coefficients.len() != layout.ncols() {
        return Err(MortalityError::CoefficientCount {
            expected: layout.ncols(),
            got: true_coefficients.len(),
        });
    }
    if !(phi.abs() < 1.0) {
        return Err(MortalityError::Gam(GamError::InvalidPhi(phi)));
    }
    let mut ordered: Vec<&FeatureRow> = features.iter().collect();
    ordered.sort_by_key(|f| f.week_end);
    let mut cells = Vec::with_capacity(ordered.len() * 14);
    for sex in Sex::ALL {
        for age in AgeBand::all() {
            for &f in &ordered {
                cells.push((f, age, sex));
            }
        }
    }
    let eta = layout.design(&cells)? * true_coefficients;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::standard();
    let innov = (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(cells.len());
    let mut prev: Option<((Sex, AgeBand, i32), f64)> = None;
    for (i, &(f, age, sex)) in cells.iter().enumerate() {
        let e: f64 = StandardNormal.sample(&mut rng);
        let key = (sex, age, f.week.year);
        let u = match prev {
            Some((k, u_prev)) if k == key => phi * u_prev + innov * e,
            _ => e,
        };
        prev = Some((key, u));
        let mean = eta[i].exp();
        let dist = Poisson::new(mean).map_err(|e| MortalityError::InvalidSpec(format!("poisson mean {mean}: {e}")))?;
        let count = poisson_quantile(&dist, mean, std_normal.cdf(u));
        out.push(DeathObservation {
            week_end_date: f.week_end,
            week_number: f.week.week,
            year: f.week.year,
            age,
            sex,
            count: u32::try_from(count).unwrap_or(u32::MAX),
        });
    }
    Ok(out)
}
