//! Daily Central England temperature files and their weekly aggregates.
//!
//! The provider's daily files hold one line per (year, day-of-month) with the
//! twelve monthly values in tenths of a degree; `-999` marks a missing value
//! and is also used as filler for dates that do not exist (31 February).

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MISSING_SENTINEL: i64 = -999;
pub const SANITY_RANGE: (f64, f64) = (-30.0, 45.0);

#[derive(Debug, Error, PartialEq)]
pub enum WeatherError {
    #[error("{file} line {line}: {message}")]
    MalformedLine {
        file: &'static str,
        line: usize,
        message: String,
    },
    #[error("{date}: tmin {tmin} exceeds tmax {tmax}")]
    MinAboveMax { date: NaiveDate, tmin: f64, tmax: f64 },
    #[error("{date}: temperature {value} outside the sanity range")]
    OutOfRange { date: NaiveDate, value: f64 },
    #[error("week {start}..{end}: missing daily value on {date}")]
    MissingDay {
        start: NaiveDate,
        end: NaiveDate,
        date: NaiveDate,
    },
    #[error("week {start}..{end} is not seven days long")]
    BadWeek { start: NaiveDate, end: NaiveDate },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DayTemps {
    pub tmin: Option<f64>,
    pub tmax: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DailyTemperatureSeries {
    days: BTreeMap<NaiveDate, DayTemps>,
}

impl DailyTemperatureSeries {
    pub fn from_days(
        days: impl IntoIterator<Item = (NaiveDate, DayTemps)>,
    ) -> Result<Self, WeatherError> {
        let series = DailyTemperatureSeries {
            days: days.into_iter().collect(),
        };
        series.check()?;
        Ok(series)
    }

    fn check(&self) -> Result<(), WeatherError> {
        for (&date, t) in &self.days {
            for v in [t.tmin, t.tmax].into_iter().flatten() {
                if !(SANITY_RANGE.0..=SANITY_RANGE.1).contains(&v) {
                    return Err(WeatherError::OutOfRange { date, value: v });
                }
            }
            if let (Some(tmin), Some(tmax)) = (t.tmin, t.tmax) {
                if tmin > tmax {
                    return Err(WeatherError::MinAboveMax { date, tmin, tmax });
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, date: NaiveDate) -> Option<DayTemps> {
        self.days.get(&date).copied()
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.days.keys().next().copied()
    }

    pub fn last_complete_date(&self) -> Option<NaiveDate> {
        self.days
            .iter()
            .rev()
            .find(|(_, t)| t.tmin.is_some() && t.tmax.is_some())
            .map(|(d, _)| *d)
    }
}

fn parse_daily_file(
    file: &'static str,
    reader: impl Read,
) -> Result<BTreeMap<NaiveDate, Option<f64>>, WeatherError> {
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let malformed = |message: String| WeatherError::MalformedLine {
            file,
            line: line_no,
            message,
        };
        let line = line.map_err(|e| malformed(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<i64> = line
            .split_whitespace()
            .map(|f| f.parse::<i64>())
            .collect::<Result<_, _>>()
            .map_err(|e| malformed(format!("non-integer field: {e}")))?;
        if fields.len() != 14 {
            return Err(malformed(format!("expected 14 fields, got {}", fields.len())));
        }
        let year = i32::try_from(fields[0]).map_err(|_| malformed("bad year".into()))?;
        let day = fields[1];
        if !(1..=31).contains(&day) {
            return Err(malformed(format!("day {day} outside 1..31")));
        }
        for (m, &raw) in fields[2..].iter().enumerate() {
            let Some(date) = NaiveDate::from_ymd_opt(year, m as u32 + 1, day as u32) else {
                continue;
            };
            let value = (raw != MISSING_SENTINEL).then(|| raw as f64 / 10.0);
            out.insert(date, value);
        }
    }
    Ok(out)
}

/// Merge the daily-minimum and daily-maximum files.
pub fn parse_hadcet(
    min_stream: impl Read,
    max_stream: impl Read,
) -> Result<DailyTemperatureSeries, WeatherError> {
    let mins = parse_daily_file("tmin", min_stream)?;
    let maxs = parse_daily_file("tmax", max_stream)?;
    let mut days: BTreeMap<NaiveDate, DayTemps> = BTreeMap::new();
    for (d, v) in mins {
        days.entry(d).or_default().tmin = v;
    }
    for (d, v) in maxs {
        days.entry(d).or_default().tmax = v;
    }
    DailyTemperatureSeries::from_days(days)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeeklyTemps {
    pub tmin: f64,
    pub tmax: f64,
    pub tsd: f64,
    pub tmid: f64,
    /// Missing when the preceding seven days are not all observed.
    pub tmdi: Option<f64>,
    pub tran: f64,
}

fn week_values(
    series: &DailyTemperatureSeries,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<(Vec<f64>, Vec<f64>), WeatherError> {
    if end - start != Duration::days(6) {
        return Err(WeatherError::BadWeek { start, end });
    }
    let mut mins = Vec::with_capacity(7);
    let mut maxs = Vec::with_capacity(7);
    for offset in 0..7 {
        let date = start + Duration::days(offset);
        match series.get(date) {
            Some(DayTemps {
                tmin: Some(lo),
                tmax: Some(hi),
            }) => {
                mins.push(lo);
                maxs.push(hi);
            }
            _ => return Err(WeatherError::MissingDay { start, end, date }),
        }
    }
    Ok((mins, maxs))
}

fn mean_of(mins: &[f64], maxs: &[f64]) -> f64 {
    (mins.iter().sum::<f64>() + maxs.iter().sum::<f64>()) / (mins.len() + maxs.len()) as f64
}

/// TMID of one week, or `None` if any of its fourteen values is missing.
pub fn week_tmid(series: &DailyTemperatureSeries, start: NaiveDate) -> Option<f64> {
    week_values(series, start, start + Duration::days(6))
        .ok()
        .map(|(lo, hi)| mean_of(&lo, &hi))
}

/// Weekly aggregates over inclusive `(start, end)` windows.
pub fn weekly_aggregates(
    series: &DailyTemperatureSeries,
    weeks: &[(NaiveDate, NaiveDate)],
) -> Result<Vec<WeeklyTemps>, WeatherError> {
    weeks
        .iter()
        .map(|&(start, end)| {
            let (mins, maxs) = week_values(series, start, end)?;
            let tmin = mins.iter().copied().fold(f64::INFINITY, f64::min);
            let tmax = maxs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tmid = mean_of(&mins, &maxs);
            // sample standard deviation over the 14 pooled values
            let ss: f64 = mins.iter().chain(&maxs).map(|v| (v - tmid).powi(2)).sum();
            let tsd = (ss / 13.0).sqrt();
            let tmdi = week_tmid(series, start - Duration::days(7)).map(|prev| tmid - prev);
            Ok(WeeklyTemps {
                tmin,
                tmax,
                tsd,
                tmid,
                tmdi,
                tran: tmax - tmin,
            })
        })
        .collect()
}
