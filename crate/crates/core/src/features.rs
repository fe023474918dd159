//! Weekly feature rows: calendar, holiday, temperature and air-quality
//! regressors joined on the registration week.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airquality::WeeklyAqi;
use crate::calendar::{
    holiday_features, lag_features, week_index, CalendarError, HolidayFeatures, HolidayGazette,
    WeekTime,
};
use crate::deaths::WeekId;
use crate::weather::WeeklyTemps;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error(transparent)]
    Calendar(#[from] CalendarError),
    #[error("week ending {0}: no temperature aggregates")]
    MissingTemperature(NaiveDate),
    #[error("week ending {0}: no TMDI (previous week incomplete)")]
    MissingTmdi(NaiveDate),
    #[error("week ending {0}: no air-quality aggregate")]
    MissingAqi(NaiveDate),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub week_end: NaiveDate,
    pub week: WeekId,
    pub time: WeekTime,
    pub holidays: HolidayFeatures,
    pub tmid: f64,
    pub tmdi: f64,
    pub tran: f64,
    pub aqimin: f64,
    /// True when the temperature fields came from the imputation models.
    pub imputed: bool,
    /// Number of chained imputation steps behind the temperature fields (0 if observed).
    pub chain_depth: u32,
}

/// Temperature inputs for one week, observed or imputed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeekTemperature {
    pub tmid: f64,
    pub tmdi: Option<f64>,
    pub tran: f64,
    pub imputed: bool,
    pub chain_depth: u32,
}

impl From<WeeklyTemps> for WeekTemperature {
    fn from(t: WeeklyTemps) -> Self {
        WeekTemperature {
            tmid: t.tmid,
            tmdi: t.tmdi,
            tran: t.tran,
            imputed: false,
            chain_depth: 0,
        }
    }
}

/// Build one row per week. `weeks` must be consecutive Friday week ends in order.
pub fn build_feature_rows(
    weeks: &[WeekId],
    week_ends: &[NaiveDate],
    gazette: &HolidayGazette,
    temps: &BTreeMap<NaiveDate, WeekTemperature>,
    aqi: &BTreeMap<NaiveDate, WeeklyAqi>,
) -> Result<Vec<FeatureRow>, FeatureError> {
    assert_eq!(weeks.len(), week_ends.len(), "one WeekId per week end");
    let mut hol = Vec::with_capacity(weeks.len());
    for &end in week_ends {
        hol.push((end, holiday_features(end - Duration::days(6), end, gazette)?));
    }
    let lagged = lag_features(&hol)?;
    let mut rows = Vec::with_capacity(weeks.len());
    for ((&week, &end), holidays) in weeks.iter().zip(week_ends).zip(lagged) {
        let t = temps
            .get(&end)
            .ok_or(FeatureError::MissingTemperature(end))?;
        let a = aqi.get(&end).ok_or(FeatureError::MissingAqi(end))?;
        rows.push(FeatureRow {
            week_end: end,
            week,
            time: WeekTime {
                wk: week.week,
                wkeday: week_index(end)?,
            },
            holidays,
            tmid: t.tmid,
            tmdi: t.tmdi.ok_or(FeatureError::MissingTmdi(end))?,
            tran: t.tran,
            aqimin: a.aqimin,
            imputed: t.imputed,
            chain_depth: t.chain_depth,
        });
    }
    Ok(rows)
}
