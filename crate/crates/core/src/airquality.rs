//! National daily air-quality index and its weekly aggregates.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use chrono::{Duration, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The nine English and two Welsh regions averaged into the national index.
pub const REGIONS: [&str; 11] = [
    "East Midlands",
    "Eastern",
    "Greater London",
    "North East",
    "North West & Merseyside",
    "South East",
    "South West",
    "West Midlands",
    "Yorkshire & Humberside",
    "North Wales",
    "South Wales",
];

#[derive(Debug, Error, PartialEq)]
pub enum AirQualityError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: index {index} outside 1..=10")]
    IndexOutOfRange { line: usize, index: i64 },
    #[error("line {line}: unknown region '{region}'")]
    UnknownRegion { line: usize, region: String },
    #[error("{date}: missing region {region}")]
    MissingRegion { date: NaiveDate, region: &'static str },
    #[error("{date}: region {region} reported twice")]
    DuplicateRegion { date: NaiveDate, region: &'static str },
    #[error("expected 7 daily values, got {0}")]
    WrongCount(usize),
    #[error("region {0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("regions {0} and {1} share fewer than 2 dates")]
    TooFewSharedDates(&'static str, &'static str),
}

/// Region position in [`REGIONS`].
pub fn region_index(label: &str) -> Option<usize> {
    REGIONS.iter().position(|r| *r == label.trim())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionalDaqiDay {
    pub date: NaiveDate,
    /// Index into [`REGIONS`].
    pub region: usize,
    pub index: u8,
}

impl RegionalDaqiDay {
    pub fn region_label(&self) -> &'static str {
        REGIONS[self.region]
    }
}

/// Parse CSV `date,region,daqi`.
pub fn parse_daqi_csv<R: Read>(reader: R) -> Result<Vec<RegionalDaqiDay>, AirQualityError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let malformed = |message: String| AirQualityError::Malformed { line, message };
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        if rec.len() != 3 {
            return Err(malformed(format!("expected 3 fields, got {}", rec.len())));
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| malformed(format!("bad date '{}': {e}", &rec[0])))?;
        let region = region_index(&rec[1]).ok_or_else(|| AirQualityError::UnknownRegion {
            line,
            region: rec[1].to_string(),
        })?;
        let index: i64 = rec[2]
            .parse()
            .map_err(|_| malformed(format!("bad index '{}'", &rec[2])))?;
        if !(1..=10).contains(&index) {
            return Err(AirQualityError::IndexOutOfRange { line, index });
        }
        out.push(RegionalDaqiDay {
            date,
            region,
            index: index as u8,
        });
    }
    Ok(out)
}

/// Unweighted mean of the eleven regional indices for one date.
pub fn national_daily(records: &[RegionalDaqiDay]) -> Result<f64, AirQualityError> {
    let date = records.first().map(|r| r.date).unwrap_or_default();
    let mut by_region: [Option<u8>; 11] = [None; 11];
    for r in records {
        if by_region[r.region].replace(r.index).is_some() {
            return Err(AirQualityError::DuplicateRegion {
                date,
                region: REGIONS[r.region],
            });
        }
    }
    let mut sum = 0u32;
    for (i, v) in by_region.iter().enumerate() {
        match v {
            Some(v) => sum += *v as u32,
            None => {
                return Err(AirQualityError::MissingRegion {
                    date,
                    region: REGIONS[i],
                })
            }
        }
    }
    Ok(sum as f64 / 11.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeeklyAqi {
    pub aqimin: f64,
    pub aqimax: f64,
    pub aqimid: f64,
}

pub fn weekly_aqi(daily: &[f64]) -> Result<WeeklyAqi, AirQualityError> {
    if daily.len() != 7 {
        return Err(AirQualityError::WrongCount(daily.len()));
    }
    Ok(WeeklyAqi {
        aqimin: daily.iter().copied().fold(f64::INFINITY, f64::min),
        aqimax: daily.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        aqimid: daily.iter().sum::<f64>() / 7.0,
    })
}

/// National index per date, keeping only dates where all eleven regions report.
pub fn national_series(records: &[RegionalDaqiDay]) -> BTreeMap<NaiveDate, f64> {
    let mut by_date: BTreeMap<NaiveDate, Vec<RegionalDaqiDay>> = BTreeMap::new();
    for r in records {
        by_date.entry(r.date).or_default().push(r.clone());
    }
    by_date
        .into_iter()
        .filter_map(|(d, recs)| national_daily(&recs).ok().map(|v| (d, v)))
        .collect()
}

/// Weekly aggregate for one week, or the dates that prevented it.
#[derive(Debug, Clone, PartialEq)]
pub struct WeeklyAqiResult {
    pub week_end: NaiveDate,
    pub aqi: Option<WeeklyAqi>,
    pub excluded_days: Vec<NaiveDate>,
}

/// Aggregate weeks ending on each of `week_ends`. A week with any excluded day
/// is flagged and left without a value.
pub fn weekly_series(
    national: &BTreeMap<NaiveDate, f64>,
    week_ends: &[NaiveDate],
) -> Vec<WeeklyAqiResult> {
    week_ends
        .iter()
        .map(|&end| {
            let mut vals = Vec::with_capacity(7);
            let mut excluded = Vec::new();
            for offset in (0..7).rev() {
                let date = end - Duration::days(offset);
                match national.get(&date) {
                    Some(v) => vals.push(*v),
                    None => excluded.push(date),
                }
            }
            let aqi = excluded.is_empty().then(|| weekly_aqi(&vals).expect("seven values"));
            WeeklyAqiResult {
                week_end: end,
                aqi,
                excluded_days: excluded,
            }
        })
        .collect()
}

/// Pearson correlations between regional series over pairwise-shared dates.
pub fn regional_correlations(
    records: &[RegionalDaqiDay],
) -> Result<DMatrix<f64>, AirQualityError> {
    let mut series: Vec<BTreeMap<NaiveDate, f64>> = vec![BTreeMap::new(); REGIONS.len()];
    for r in records {
        series[r.region].insert(r.date, r.index as f64);
    }
    let n = REGIONS.len();
    let mut out = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let shared: BTreeSet<&NaiveDate> = series[i]
                .keys()
                .filter(|d| series[j].contains_key(*d))
                .collect();
            if shared.len() < 2 {
                return Err(AirQualityError::TooFewSharedDates(REGIONS[i], REGIONS[j]));
            }
            let xs: Vec<f64> = shared.iter().map(|d| series[i][*d]).collect();
            let ys: Vec<f64> = shared.iter().map(|d| series[j][*d]).collect();
            let r = pearson(&xs, &ys).map_err(|which| {
                AirQualityError::ZeroVariance(if which == 0 { REGIONS[i] } else { REGIONS[j] })
            })?;
            out[(i, j)] = r;
            out[(j, i)] = r;
        }
    }
    Ok(out)
}

/// Pearson correlation; `Err(0)`/`Err(1)` names the zero-variance argument.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, usize> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 {
        return Err(0);
    }
    if syy == 0.0 {
        return Err(1);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(date: NaiveDate, values: &[u8]) -> Vec<RegionalDaqiDay> {
        values
            .iter()
            .enumerate()
            .map(|(region, &index)| RegionalDaqiDay {
                date,
                region,
                index,
            })
            .collect()
    }

    fn d(y: i32, m: u32, dd: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, dd).unwrap()
    }

    #[test]
    fn parse_rows() {
        let recs = parse_daqi_csv("date,region,daqi\n2019-06-01,South Wales,3\n".as_bytes()).unwrap();
        assert_eq!(recs[0].region_label(), "South Wales");
        assert_eq!(recs[0].index, 3);
        assert!(matches!(
            parse_daqi_csv("date,region,daqi\n2019-06-01,South Wales,11\n".as_bytes()),
            Err(AirQualityError::IndexOutOfRange { index: 11, .. })
        ));
        assert!(matches!(
            parse_daqi_csv("date,region,daqi\n2019-06-01,Highland,3\n".as_bytes()),
            Err(AirQualityError::UnknownRegion { .. })
        ));
    }

    #[test]
    fn national_mean() {
        assert_eq!(national_daily(&day(d(2019, 1, 1), &[3; 11])).unwrap(), 3.0);
        let mixed = day(d(2019, 1, 1), &[2, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3]);
        assert!((national_daily(&mixed).unwrap() - 28.0 / 11.0).abs() < 1e-15);
        let ten = day(d(2019, 1, 1), &[3; 10]);
        assert!(matches!(
            national_daily(&ten),
            Err(AirQualityError::MissingRegion { region: "South Wales", .. })
        ));
    }

    #[test]
    fn weekly() {
        assert_eq!(
            weekly_aqi(&[4.0; 7]).unwrap(),
            WeeklyAqi {
                aqimin: 4.0,
                aqimax: 4.0,
                aqimid: 4.0
            }
        );
        let w = weekly_aqi(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        assert_eq!((w.aqimin, w.aqimax, w.aqimid), (1.0, 7.0, 4.0));
        assert_eq!(weekly_aqi(&[1.0; 6]), Err(AirQualityError::WrongCount(6)));
    }

    #[test]
    fn incomplete_week_is_flagged() {
        let mut recs = Vec::new();
        for i in 0..7 {
            let date = d(2019, 1, 5) + Duration::days(i);
            let mut vals = day(date, &[2; 11]);
            if i == 3 {
                vals.pop();
            }
            recs.extend(vals);
        }
        let national = national_series(&recs);
        let out = weekly_series(&national, &[d(2019, 1, 11)]);
        assert_eq!(out[0].aqi, None);
        assert_eq!(out[0].excluded_days, vec![d(2019, 1, 8)]);
    }

    #[test]
    fn correlations_basic() {
        let mut recs = Vec::new();
        for i in 0..20u8 {
            let date = d(2019, 1, 1) + Duration::days(i as i64);
            let x = 1 + (i % 5);
            let mut vals = [x; 11];
            // region 1 mirrors region 0
            vals[1] = 11 - x - 5;
            for (k, v) in vals.iter_mut().enumerate().skip(2) {
                *v = 1 + ((i as usize * (2 * k + 1)) % 10) as u8;
            }
            recs.extend(day(date, &vals));
        }
        let c = regional_correlations(&recs).unwrap();
        assert!((c[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((c[(0, 1)] + 1.0).abs() < 1e-12);
        assert_eq!(c, c.transpose());
    }
}
