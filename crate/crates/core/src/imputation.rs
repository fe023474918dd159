//! Auxiliary Gaussian GAMs that fill in weekly temperature aggregates for
//! weeks whose daily readings are not yet published.
//!
//! Each target is modelled as
//!
//! ```text
//! target[t] = c + b * WKEDAY[t] + s1(WK[t]) + s2(TMID[t-1]) + s3(TSD[t-1])
//! ```
//!
//! with a cyclic `s1` and 3-knot cubic `s2`, `s3`. TRAN is not modelled
//! directly: it is the difference of the TMAX and TMIN predictions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::WeekTime;
use crate::features::WeekTemperature;
use crate::gam::{self, Family, FitSettings, FittedGam, GamError, GamProblem, Penalty};
use crate::spline::{apply_constraints, build_basis, knot_placement, BasisSpec, SplineError};
use crate::weather::WeeklyTemps;

/// Minimum number of consecutive complete weeks needed to fit.
pub const MIN_HISTORY_WEEKS: usize = 104;
const WK_KNOTS: usize = 12;
const LAG_KNOTS: usize = 3;
/// WKEDAY is entered in years to keep the design well scaled.
const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Error)]
pub enum ImputationError {
    #[error("need at least {needed} consecutive complete weeks, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("history is not consecutive at position {0}")]
    Gap(usize),
    #[error("history week {0} has missing or non-finite aggregates")]
    Incomplete(usize),
    #[error("{0} has zero variance over the history")]
    ZeroVariance(Target),
    #[error("previous week aggregates are missing")]
    MissingPrevious,
    #[error("{target}: {source}")]
    Spline {
        target: Target,
        #[source]
        source: SplineError,
    },
    #[error("{target}: {source}")]
    Gam {
        target: Target,
        #[source]
        source: GamError,
    },
}

/// Quantities with their own imputation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Target {
    Tmid,
    Tmdi,
    Tmin,
    Tmax,
    Tsd,
}

impl Target {
    pub const ALL: [Target; 5] = [
        Target::Tmid,
        Target::Tmdi,
        Target::Tmin,
        Target::Tmax,
        Target::Tsd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::Tmid => "TMID",
            Target::Tmdi => "TMDI",
            Target::Tmin => "TMIN",
            Target::Tmax => "TMAX",
            Target::Tsd => "TSD",
        }
    }

    fn value(self, t: &WeeklyTemps) -> Option<f64> {
        match self {
            Target::Tmid => Some(t.tmid),
            Target::Tmdi => t.tmdi,
            Target::Tmin => Some(t.tmin),
            Target::Tmax => Some(t.tmax),
            Target::Tsd => Some(t.tsd),
        }
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A centered smooth: raw basis plus the sum-to-zero map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Smooth {
    basis: BasisSpec,
    constraint: DMatrix<f64>,
}

impl Smooth {
    fn rows(&self, xs: &[f64]) -> Result<DMatrix<f64>, SplineError> {
        Ok(build_basis(&self.basis, xs)?.design * &self.constraint)
    }
}

/// In-sample residual summary of one target model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualDiagnostics {
    pub target: Target,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetModel {
    pub target: Target,
    wk: Smooth,
    lag_tmid: Smooth,
    lag_tsd: Smooth,
    pub gam: FittedGam,
    pub diagnostics: ResidualDiagnostics,
}

impl TargetModel {
    fn design(&self, times: &[WeekTime], prev: &[WeeklyTemps]) -> Result<DMatrix<f64>, SplineError> {
        let wk: Vec<f64> = times.iter().map(|t| t.wk as f64).collect();
        let lt: Vec<f64> = prev.iter().map(|p| p.tmid).collect();
        let ls: Vec<f64> = prev.iter().map(|p| p.tsd).collect();
        let blocks = [self.wk.rows(&wk)?, self.lag_tmid.rows(&lt)?, self.lag_tsd.rows(&ls)?];
        Ok(assemble(times, &blocks))
    }

    /// Prediction for the week after `prev`. Lagged inputs far outside the
    /// history are clamped to the range the basis can extrapolate to.
    pub fn predict(&self, prev: &WeeklyTemps, time: WeekTime) -> Result<f64, ImputationError> {
        let clamp = |s: &Smooth, x: f64| {
            let (lo, hi) = s.basis.domain();
            let m = s.basis.extrapolation_margin();
            x.clamp(lo - m, hi + m)
        };
        let lag = WeeklyTemps {
            tmid: clamp(&self.lag_tmid, prev.tmid),
            tsd: clamp(&self.lag_tsd, prev.tsd),
            ..*prev
        };
        let x = self
            .design(&[time], std::slice::from_ref(&lag))
            .map_err(|source| ImputationError::Spline {
                target: self.target,
                source,
            })?;
        Ok(x.row(0).dot(&self.gam.beta.transpose()))
    }

    /// Fitted seasonal component `s1(wk)`.
    pub fn wk_effect(&self, wk: f64) -> Result<f64, SplineError> {
        let rows = self.wk.rows(&[wk])?;
        Ok(rows.row(0).dot(&self.gam.beta.rows(2, rows.ncols()).transpose()))
    }
}

fn assemble(times: &[WeekTime], blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = 2 + blocks.iter().map(|b| b.ncols()).sum::<usize>();
    let mut x = DMatrix::zeros(times.len(), p);
    for (i, t) in times.iter().enumerate() {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = t.wkeday as f64 / DAYS_PER_YEAR;
    }
    let mut off = 2;
    for b in blocks {
        x.view_mut((0, off), b.shape()).copy_from(b);
        off += b.ncols();
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationModel {
    pub models: Vec<TargetModel>,
}

impl ImputationModel {
    pub fn model(&self, target: Target) -> &TargetModel {
        self.models
            .iter()
            .find(|m| m.target == target)
            .expect("every target is fitted")
    }

    pub fn diagnostics(&self) -> Vec<&ResidualDiagnostics> {
        self.models.iter().map(|m| &m.diagnostics).collect()
    }
}

fn complete(t: &WeeklyTemps) -> bool {
    [t.tmin, t.tmax, t.tsd, t.tmid].iter().all(|v| v.is_finite())
        && t.tmdi.is_some_and(f64::is_finite)
}

/// Fit one model per [`Target`] on consecutive weeks of complete aggregates.
pub fn fit_imputers(history: &[(WeekTime, WeeklyTemps)]) -> Result<ImputationModel, ImputationError> {
    if history.len() < MIN_HISTORY_WEEKS {
        return Err(ImputationError::InsufficientHistory {
            needed: MIN_HISTORY_WEEKS,
            got: history.len(),
        });
    }
    for (i, (_, t)) in history.iter().enumerate() {
        if !complete(t) {
            return Err(ImputationError::Incomplete(i));
        }
    }
    for (i, w) in history.windows(2).enumerate() {
        if w[1].0.wkeday - w[0].0.wkeday != 7 {
            return Err(ImputationError::Gap(i + 1));
        }
    }
    // the first week only serves as a lag
    let times: Vec<WeekTime> = history[1..].iter().map(|(t, _)| *t).collect();
    let prev: Vec<WeeklyTemps> = history[..history.len() - 1].iter().map(|(_, t)| *t).collect();
    let current: Vec<&WeeklyTemps> = history[1..].iter().map(|(_, t)| t).collect();

    for target in Target::ALL {
        let y: Vec<f64> = current.iter().map(|t| target.value(t).expect("complete")).collect();
        if y.iter().all(|v| *v == y[0]) {
            return Err(ImputationError::ZeroVariance(target));
        }
    }

    let mut models = Vec::with_capacity(Target::ALL.len());
    for target in Target::ALL {
        let spline = |source| ImputationError::Spline { target, source };
        let smooth = |basis: BasisSpec, xs: &[f64]| -> Result<(Smooth, DMatrix<f64>), SplineError> {
            let con = apply_constraints(&build_basis(&basis, xs)?);
            Ok((
                Smooth {
                    basis,
                    constraint: con.constraint,
                },
                con.penalty,
            ))
        };
        let wk: Vec<f64> = times.iter().map(|t| t.wk as f64).collect();
        let lt: Vec<f64> = prev.iter().map(|p| p.tmid).collect();
        let ls: Vec<f64> = prev.iter().map(|p| p.tsd).collect();
        let (wk_s, wk_p) = smooth(BasisSpec::cyclic(0.5, 53.5, WK_KNOTS).map_err(spline)?, &wk).map_err(spline)?;
        let (lt_s, lt_p) = smooth(
            BasisSpec::cubic(knot_placement(&lt, LAG_KNOTS).map_err(spline)?).map_err(spline)?,
            &lt,
        )
        .map_err(spline)?;
        let (ls_s, ls_p) = smooth(
            BasisSpec::cubic(knot_placement(&ls, LAG_KNOTS).map_err(spline)?).map_err(spline)?,
            &ls,
        )
        .map_err(spline)?;

        let blocks = [
            wk_s.rows(&wk).map_err(spline)?,
            lt_s.rows(&lt).map_err(spline)?,
            ls_s.rows(&ls).map_err(spline)?,
        ];
        let design = assemble(&times, &blocks);
        let mut columns = vec!["(Intercept)".to_string(), "WKEDAY".to_string()];
        let mut penalties = Vec::new();
        let mut off = 2;
        for ((label, block), pen) in ["s(WK)", "s(TMID.lag)", "s(TSD.lag)"]
            .into_iter()
            .zip(&blocks)
            .zip([wk_p, lt_p, ls_p])
        {
            columns.extend((1..=block.ncols()).map(|j| format!("{label}.{j}")));
            penalties.push(Penalty {
                label: label.to_string(),
                offset: off,
                matrix: pen,
            });
            off += block.ncols();
        }
        let y = DVector::from_iterator(
            current.len(),
            current.iter().map(|t| target.value(t).expect("complete")),
        );
        let mut problem = GamProblem::new(design, penalties, y.clone(), Family::GaussianIdentity);
        problem.columns = columns;
        let fitted = gam::fit(&problem, &FitSettings::default())
            .map_err(|source| ImputationError::Gam { target, source })?;

        let n = y.len() as f64;
        let resid: Vec<f64> = y.iter().zip(fitted.fitted_values.iter()).map(|(a, b)| a - b).collect();
        let mean = y.mean();
        let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let rss: f64 = resid.iter().map(|r| r * r).sum();
        let diagnostics = ResidualDiagnostics {
            target,
            n: y.len(),
            rmse: (rss / n).sqrt(),
            mae: resid.iter().map(|r| r.abs()).sum::<f64>() / n,
            r_squared: 1.0 - rss / tss,
        };
        models.push(TargetModel {
            target,
            wk: wk_s,
            lag_tmid: lt_s,
            lag_tsd: ls_s,
            gam: fitted,
            diagnostics,
        });
    }
    Ok(ImputationModel { models })
}

/// Point predictions for one week, flagged as imputed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputedWeek {
    pub tmid: f64,
    pub tmdi: f64,
    pub tran: f64,
    pub tmin: f64,
    pub tmax: f64,
    pub tsd: f64,
    pub imputed: bool,
}

impl ImputedWeek {
    /// The prediction in aggregate form, usable as the lag for the next week.
    pub fn as_weekly(&self) -> WeeklyTemps {
        WeeklyTemps {
            tmin: self.tmin,
            tmax: self.tmax,
            tsd: self.tsd,
            tmid: self.tmid,
            tmdi: Some(self.tmdi),
            tran: self.tran,
        }
    }
}

pub fn impute_week(
    model: &ImputationModel,
    prev_week: Option<&WeeklyTemps>,
    week_time: WeekTime,
) -> Result<ImputedWeek, ImputationError> {
    let prev = prev_week.ok_or(ImputationError::MissingPrevious)?;
    if !prev.tmid.is_finite() || !prev.tsd.is_finite() {
        return Err(ImputationError::MissingPrevious);
    }
    let p = |t| model.model(t).predict(prev, week_time);
    let tmin = p(Target::Tmin)?;
    let tmax = p(Target::Tmax)?;
    Ok(ImputedWeek {
        tmid: p(Target::Tmid)?,
        tmdi: p(Target::Tmdi)?,
        tran: (tmax - tmin).max(0.0),
        tmin,
        tmax,
        tsd: p(Target::Tsd)?.max(0.0),
        imputed: true,
    })
}

/// Fill the gaps in a run of weeks. Observed aggregates pass through untouched;
/// each missing week is imputed from the week before it, observed or imputed,
/// and carries the length of the imputation chain behind it.
///
/// An observed week whose TMDI is unavailable because the previous week was
/// imputed takes its TMDI from that imputed TMID and inherits its chain depth.
pub fn impute_series(
    model: &ImputationModel,
    weeks: &[(WeekTime, Option<WeeklyTemps>)],
) -> Result<Vec<WeekTemperature>, ImputationError> {
    let mut out: Vec<WeekTemperature> = Vec::with_capacity(weeks.len());
    let mut prev: Option<(WeeklyTemps, u32)> = None;
    for (time, observed) in weeks {
        let (row, lag) = match observed {
            Some(t) => {
                let mut row = WeekTemperature::from(*t);
                let mut lag = *t;
                if t.tmdi.is_none() {
                    if let Some((p, depth)) = prev.filter(|(_, d)| *d > 0) {
                        row.tmdi = Some(t.tmid - p.tmid);
                        row.imputed = true;
                        row.chain_depth = depth;
                        lag.tmdi = row.tmdi;
                    }
                }
                (row, (lag, row.chain_depth))
            }
            None => {
                let (p, depth) = prev.ok_or(ImputationError::MissingPrevious)?;
                let w = impute_week(model, Some(&p), *time)?;
                let row = WeekTemperature {
                    tmid: w.tmid,
                    tmdi: Some(w.tmdi),
                    tran: w.tran,
                    imputed: true,
                    chain_depth: depth + 1,
                };
                (row, (w.as_weekly(), depth + 1))
            }
        };
        out.push(row);
        prev = Some(lag);
    }
    Ok(out)
}
