//! Synthetic feature series and known coefficient vectors for simulation and
//! recovery checks.

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calendar::{holiday_features, lag_features, week_index, HolidayGazette, WeekTime};
use crate::deaths::{derive_week_id, first_week_end, AgeBand, Sex};
use crate::features::FeatureRow;
use crate::mortality::{DesignLayout, GroupKey, Input, MortalityError};

/// `weeks` consecutive registration weeks starting with week 1 of `start_year`,
/// with seasonal temperatures and air quality. Holidays come from `gazette`.
pub fn synthetic_features(
    start_year: i32,
    weeks: usize,
    gazette: &HolidayGazette,
    seed: u64,
) -> Vec<FeatureRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // weekly anomalies: AR(1), stationary sd 2.5
    let noise = Normal::new(0.0, 2.5 * (1.0f64 - 0.25).sqrt()).expect("valid sd");
    let mut anomaly = 0.0;
    let first = first_week_end(start_year);
    let ends: Vec<NaiveDate> = (0..weeks).map(|i| first + Duration::days(7 * i as i64)).collect();
    let hol: Vec<_> = ends
        .iter()
        .map(|&e| {
            (
                e,
                holiday_features(e - Duration::days(6), e, gazette).unwrap_or_default(),
            )
        })
        .collect();
    let lagged = lag_features(&hol).expect("consecutive weeks");
    let mut prev_tmid = None;
    ends.iter()
        .zip(lagged)
        .map(|(&end, holidays)| {
            let week = derive_week_id(end);
            let phase = 2.0 * std::f64::consts::PI * (week.week as f64 - 29.0) / 52.18;
            anomaly = 0.5 * anomaly + noise.sample(&mut rng);
            let tmid = 10.5 + 6.5 * phase.cos() + anomaly;
            let tmdi = prev_tmid.map_or(0.0, |p| tmid - p);
            prev_tmid = Some(tmid);
            FeatureRow {
                week_end: end,
                week,
                time: WeekTime {
                    wk: week.week,
                    wkeday: week_index(end).unwrap_or(0),
                },
                holidays,
                tmid,
                tmdi,
                tran: 9.0 + 2.0 * phase.cos() + rng.random_range(-2.0..2.0),
                aqimin: rng.random_range(1.0..4.0_f64).round(),
                imputed: false,
                chain_depth: 0,
            }
        })
        .collect()
}

/// Coefficients of a known model, expressed as functions to be projected onto a layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    /// Log intercepts indexed `[sex][age ordinal]`, female first.
    pub intercepts: [[f64; 7]; 2],
    /// SH contrasts for levels 2..=5.
    pub sh: [f64; 4],
    pub lsh: [f64; 4],
    pub omega: [f64; 6],
    /// Amplitude of the WK cycle per `[sex][age ordinal]`.
    pub wk_amplitude: [[f64; 7]; 2],
    pub trend_amplitude: f64,
    pub tmid_slope: f64,
    pub tmid_curvature: f64,
    pub tmdi_slope: f64,
    pub tran_slope: f64,
    pub aqimin_slope: f64,
}

impl Default for TrueModel {
    fn default() -> Self {
        let f = [3.17, 2.0, 4.57, 6.15, 6.5, 7.19, 7.76];
        let m = [3.28, 2.21, 5.17, 6.55, 6.85, 7.3, 7.24];
        let amp = |base: f64| std::array::from_fn(|a| base * (a as f64 + 1.0) / 7.0);
        TrueModel {
            intercepts: [f, m],
            sh: [-0.144, -0.12, -0.133, -0.153],
            lsh: [0.024, 0.028, 0.032, 0.079],
            omega: [-0.108, -0.143, -0.207, 0.094, 0.097, 0.056],
            wk_amplitude: [amp(0.16), amp(0.14)],
            trend_amplitude: 0.04,
            tmid_slope: -0.01,
            tmid_curvature: 0.0006,
            tmdi_slope: 0.006,
            tran_slope: 0.003,
            aqimin_slope: 0.01,
        }
    }
}

impl TrueModel {
    /// Floor every intercept at `ln(min_mean)`.
    pub fn with_min_mean(mut self, min_mean: f64) -> Self {
        for row in &mut self.intercepts {
            for v in row.iter_mut() {
                *v = v.max(min_mean.ln());
            }
        }
        self
    }

    /// Uncentered value of the true term for `input` in `group` at `x`.
    pub fn term(&self, input: Input, group: GroupKey, x: f64) -> f64 {
        let s = group.sex.map_or(0, |s| s.indicator() as usize);
        let a = group.age.map_or(3, |a| a.ordinal());
        match input {
            Input::Wk => {
                let phase = 2.0 * std::f64::consts::PI * (x - 0.5) / 53.0;
                self.wk_amplitude[s][a] * (phase.cos() + 0.3 * (2.0 * phase).sin())
            }
            Input::Wkeday => self.trend_amplitude * (x / 1100.0).sin() * (1.0 + a as f64 / 7.0),
            Input::Tmid => self.tmid_slope * (x - 10.0) + self.tmid_curvature * (x - 10.0).powi(2),
            Input::Tmdi => self.tmdi_slope * x,
            Input::Tran => self.tran_slope * x,
            Input::Aqimin => self.aqimin_slope * x,
        }
    }

    /// Coefficient vector for `layout`. Smooth blocks hold the least-squares
    /// projection of the true term onto the centered basis over `features`.
    pub fn coefficients(
        &self,
        layout: &DesignLayout,
        features: &[FeatureRow],
    ) -> Result<DVector<f64>, MortalityError> {
        let mut beta = DVector::zeros(layout.ncols());
        for &(sex, age, c) in &layout.intercepts {
            beta[c] = self.intercepts[sex.indicator() as usize][age.ordinal()];
        }
        for i in 0..4 {
            beta[layout.sh[i]] = self.sh[i];
            beta[layout.lsh[i]] = self.lsh[i];
        }
        for i in 0..6 {
            beta[layout.omega[i]] = self.omega[i];
        }
        for l in &layout.linear {
            beta[l.column] = self.term(l.input, l.group, 1.0) - self.term(l.input, l.group, 0.0);
        }
        for s in &layout.smooths {
            let xs: Vec<f64> = features.iter().map(|f| s.input.value(f)).collect();
            let basis = s.basis_rows(&xs)?;
            let target: Vec<f64> = xs.iter().map(|&x| self.term(s.input, s.group, x)).collect();
            let mean = target.iter().sum::<f64>() / target.len() as f64;
            let t = DVector::from_iterator(target.len(), target.iter().map(|v| v - mean));
            let bt = basis.transpose();
            let c = (&bt * &basis)
                .cholesky()
                .map(|ch| ch.solve(&(&bt * t)))
                .unwrap_or_else(|| DVector::zeros(s.dim));
            beta.rows_mut(s.offset, s.dim).copy_from(&c);
        }
        Ok(beta)
    }
}

/// Smooth values implied by a coefficient vector on a grid (for coverage checks).
pub fn block_curve(
    layout: &DesignLayout,
    beta: &DVector<f64>,
    block: usize,
    xs: &[f64],
) -> Result<Vec<f64>, MortalityError> {
    let s = &layout.smooths[block];
    let rows: DMatrix<f64> = s.basis_rows(xs)?;
    Ok((rows * beta.rows(s.offset, s.dim)).iter().copied().collect())
}

/// All (sex, age) cells for each feature row, female first.
pub fn all_cells(features: &[FeatureRow]) -> Vec<(&FeatureRow, AgeBand, Sex)> {
    let mut cells = Vec::with_capacity(features.len() * 14);
    for sex in Sex::ALL {
        for age in AgeBand::all() {
            for f in features {
                cells.push((f, age, sex));
            }
        }
    }
    cells
}
