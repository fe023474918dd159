//! Baseline error bands, excess registered deaths and the summaries built
//! from them: totals, calendar-month pro-rating, certified-death ratios and
//! a ratio-based projection of deaths not yet registered.
//!
//! Standard errors are summed directly, never in quadrature, whether across
//! age bands within a week or across weeks.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::ops::RangeInclusive;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deaths::{AgeBand, Sex, WeekId};

/// Years over which historical baseline errors are summarized.
pub const SE_YEARS: RangeInclusive<i32> = 2010..=2019;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum ExcessError {
    #[error("no historical cells in {0:?}")]
    EmptyHistory(RangeInclusive<i32>),
    #[error("duplicate cell {0}")]
    Duplicate(String),
    #[error("records overlap at {0}")]
    Overlap(String),
    #[error("baseline must be positive, got {value} at {cell}")]
    NonPositiveBaseline { cell: String, value: f64 },
    #[error("no error-table cell for {0}")]
    MissingCell(String),
    #[error("no baseline for observed cell {0}")]
    KeyMismatch(String),
    #[error("series cover different weeks: {0}")]
    CoverageMismatch(String),
    #[error("zero denominator: {0}")]
    ZeroDenominator(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

/// Half-away-from-zero rounding to an integer count.
pub fn round_count(x: f64) -> i64 {
    x.round() as i64
}

/// Percentage rounded half away from zero to 0.1.
pub fn round_percent(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// One week's baseline and observed count for one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryCell {
    pub week: WeekId,
    pub age: AgeBand,
    pub sex: Option<Sex>,
    pub baseline: f64,
    pub observed: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeKey {
    pub age: AgeBand,
    pub sex: Option<Sex>,
    pub wk: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeCell {
    pub rms_log_error: f64,
    /// Years contributing to the cell.
    pub years: usize,
    /// Years whose observed count was zero and floored at 0.5.
    pub floored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeTable {
    pub by_sex: bool,
    pub cells: BTreeMap<SeKey, SeCell>,
}

impl SeTable {
    pub fn get(&self, age: AgeBand, sex: Option<Sex>, wk: u32) -> Result<f64, ExcessError> {
        let key = SeKey {
            age,
            sex: if self.by_sex { sex } else { None },
            wk,
        };
        self.cells
            .get(&key)
            .map(|c| c.rms_log_error)
            .ok_or_else(|| ExcessError::MissingCell(format!("age {age}, sex {sex:?}, week {wk}")))
    }
}

fn log_ratio(observed: f64, baseline: f64) -> (f64, bool) {
    if observed == 0.0 {
        ((0.5 / baseline).ln(), true)
    } else {
        ((observed / baseline).ln(), false)
    }
}

/// RMS over years of `ln(observed / baseline)` per (age[, sex], week of year).
///
/// Without `by_sex`, sex-specific cells are first summed within each
/// (week, age). Zero observed counts are replaced by 0.5.
pub fn se_table(
    history: &[HistoryCell],
    by_sex: bool,
    years: RangeInclusive<i32>,
) -> Result<SeTable, ExcessError> {
    let mut pooled: BTreeMap<(WeekId, AgeBand, Option<Sex>), (f64, f64)> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for c in history.iter().filter(|c| years.contains(&c.week.year)) {
        let label = || format!("{} age {} sex {:?}", c.week, c.age, c.sex);
        if !seen.insert((c.week, c.age, c.sex)) {
            return Err(ExcessError::Duplicate(label()));
        }
        if by_sex && c.sex.is_none() {
            return Err(ExcessError::InvalidInput(format!(
                "sex-specific table requested but {} has no sex",
                label()
            )));
        }
        if !(c.baseline > 0.0) || !c.baseline.is_finite() {
            return Err(ExcessError::NonPositiveBaseline {
                cell: label(),
                value: c.baseline,
            });
        }
        let sex = if by_sex { c.sex } else { None };
        let e = pooled.entry((c.week, c.age, sex)).or_insert((0.0, 0.0));
        e.0 += c.baseline;
        e.1 += c.observed as f64;
    }
    if pooled.is_empty() {
        return Err(ExcessError::EmptyHistory(years));
    }
    if !by_sex {
        let pooled_keys: BTreeSet<_> = seen.iter().filter(|k| k.2.is_none()).map(|k| (k.0, k.1)).collect();
        if seen.iter().any(|k| k.2.is_some() && pooled_keys.contains(&(k.0, k.1))) {
            return Err(ExcessError::Overlap("pooled and sex-specific cells for the same week".into()));
        }
    }
    let mut acc: BTreeMap<SeKey, (f64, usize, usize)> = BTreeMap::new();
    for ((week, age, sex), (baseline, observed)) in pooled {
        let (l, floored) = log_ratio(observed, baseline);
        let e = acc.entry(SeKey { age, sex, wk: week.week }).or_insert((0.0, 0, 0));
        e.0 += l * l;
        e.1 += 1;
        e.2 += floored as usize;
    }
    Ok(SeTable {
        by_sex,
        cells: acc
            .into_iter()
            .map(|(k, (ss, n, floored))| {
                (
                    k,
                    SeCell {
                        rms_log_error: (ss / n as f64).sqrt(),
                        years: n,
                        floored,
                    },
                )
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineBand {
    pub baseline: f64,
    /// Count-scale standard error, `baseline * rms`.
    pub se: f64,
    pub lo1: f64,
    pub hi1: f64,
    pub lo95: f64,
    pub hi95: f64,
}

pub fn bands(baseline: f64, rms_log_error: f64) -> Result<BaselineBand, ExcessError> {
    if !(baseline > 0.0) || !baseline.is_finite() {
        return Err(ExcessError::NonPositiveBaseline {
            cell: "band".into(),
            value: baseline,
        });
    }
    if !(rms_log_error >= 0.0) || !rms_log_error.is_finite() {
        return Err(ExcessError::InvalidInput(format!(
            "log-scale error must be non-negative, got {rms_log_error}"
        )));
    }
    Ok(BaselineBand {
        baseline,
        se: baseline * rms_log_error,
        lo1: baseline * (-rms_log_error).exp(),
        hi1: baseline * rms_log_error.exp(),
        lo95: baseline * (-Z95 * rms_log_error).exp(),
        hi95: baseline * (Z95 * rms_log_error).exp(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub week: WeekId,
    pub age: AgeBand,
    pub sex: Option<Sex>,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.sex {
            Some(s) => write!(f, "{} {} {}", self.week, self.age, s),
            None => write!(f, "{} {}", self.week, self.age),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessRecord {
    pub key: CellKey,
    pub baseline: f64,
    pub se: f64,
    pub observed: u32,
    pub excess: f64,
}

pub fn weekly_excess(key: CellKey, observed: u32, band: &BaselineBand) -> ExcessRecord {
    ExcessRecord {
        key,
        baseline: band.baseline,
        se: band.se,
        observed,
        excess: observed as f64 - band.baseline,
    }
}

/// Join observed counts to bands by key.
pub fn excess_table(
    observed: &[(CellKey, u32)],
    bands: &BTreeMap<CellKey, BaselineBand>,
) -> Result<Vec<ExcessRecord>, ExcessError> {
    observed
        .iter()
        .map(|(k, obs)| {
            bands
                .get(k)
                .map(|b| weekly_excess(*k, *obs, b))
                .ok_or_else(|| ExcessError::KeyMismatch(k.to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Total {
    pub baseline: f64,
    pub observed: u64,
    pub excess: f64,
    pub se: f64,
    pub records: usize,
}

impl Total {
    fn add(&mut self, baseline: f64, observed: u64, excess: f64, se: f64, records: usize) {
        self.baseline += baseline;
        self.observed += observed;
        self.excess += excess;
        self.se += se;
        self.records += records;
    }
}

fn check_disjoint(records: &[ExcessRecord]) -> Result<(), ExcessError> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.key) {
            return Err(ExcessError::Overlap(r.key.to_string()));
        }
    }
    for r in records.iter().filter(|r| r.key.sex.is_some()) {
        let pooled = CellKey { sex: None, ..r.key };
        if seen.contains(&pooled) {
            return Err(ExcessError::Overlap(pooled.to_string()));
        }
    }
    Ok(())
}

/// Totals per group. Excess and SE both sum directly.
pub fn aggregate<K: Ord>(
    records: &[ExcessRecord],
    group: impl Fn(&ExcessRecord) -> K,
) -> Result<BTreeMap<K, Total>, ExcessError> {
    check_disjoint(records)?;
    let mut out: BTreeMap<K, Total> = BTreeMap::new();
    for r in records {
        out.entry(group(r))
            .or_default()
            .add(r.baseline, r.observed as u64, r.excess, r.se, 1);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyExcess {
    pub year: i32,
    pub month: u32,
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
    pub excess: f64,
    pub se: f64,
    /// `(week end, fraction of that week in this month)`.
    pub weights: Vec<(NaiveDate, f64)>,
}

/// Split each week (the seven days ending on its Friday) across calendar
/// months in proportion to its days in each, for both excess and SE.
pub fn prorate_months(records: &[ExcessRecord]) -> Result<Vec<MonthlyExcess>, ExcessError> {
    let weekly = aggregate(records, |r| r.key.week.week_end())?;
    let mut months: BTreeMap<(i32, u32), MonthlyExcess> = BTreeMap::new();
    for (end, t) in weekly {
        let mut days: BTreeMap<(i32, u32), (u32, NaiveDate, NaiveDate)> = BTreeMap::new();
        for back in 0..7 {
            let d = end - Duration::days(back);
            let e = days.entry((d.year(), d.month())).or_insert((0, d, d));
            e.0 += 1;
            e.1 = e.1.min(d);
            e.2 = e.2.max(d);
        }
        for ((y, m), (n, first, last)) in days {
            let w = n as f64 / 7.0;
            let entry = months.entry((y, m)).or_insert_with(|| MonthlyExcess {
                year: y,
                month: m,
                first_day: first,
                last_day: last,
                excess: 0.0,
                se: 0.0,
                weights: Vec::new(),
            });
            entry.first_day = entry.first_day.min(first);
            entry.last_day = entry.last_day.max(last);
            entry.excess += w * t.excess;
            entry.se += w * t.se;
            entry.weights.push((end, w));
        }
    }
    Ok(months.into_values().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UndercountRatio {
    pub week: WeekId,
    pub certified: u32,
    pub excess: f64,
    /// `certified / excess`; `None` when the excess is not positive.
    pub ratio: Option<f64>,
}

impl UndercountRatio {
    pub fn percent(&self) -> Option<f64> {
        self.ratio.map(|r| round_percent(100.0 * r))
    }
}

/// Certified deaths as a share of excess deaths, week by week.
pub fn undercount(
    excess: &BTreeMap<WeekId, f64>,
    certified: &BTreeMap<WeekId, u32>,
) -> Result<Vec<UndercountRatio>, ExcessError> {
    let a: BTreeSet<_> = excess.keys().collect();
    let b: BTreeSet<_> = certified.keys().collect();
    if a != b {
        let diff: Vec<String> = a.symmetric_difference(&b).map(|w| w.to_string()).collect();
        return Err(ExcessError::CoverageMismatch(diff.join(", ")));
    }
    Ok(excess
        .iter()
        .map(|(&week, &ex)| {
            let certified = certified[&week];
            UndercountRatio {
                week,
                certified,
                excess: ex,
                ratio: (ex > 0.0).then(|| certified as f64 / ex),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub ratio_raw: f64,
    /// The ratio as applied: rounded to two decimals.
    pub ratio: f64,
    pub tail: f64,
    pub total: f64,
}

/// Scale the reported tail by the excess-to-reported ratio of a reference week.
pub fn extrapolate(
    reference_excess: f64,
    reference_reported: f64,
    reported_tail: f64,
    cumulative_excess: f64,
) -> Result<Extrapolation, ExcessError> {
    if reference_reported == 0.0 {
        return Err(ExcessError::ZeroDenominator("reported deaths in the reference week"));
    }
    for (name, v) in [
        ("reference excess", reference_excess),
        ("reference reported deaths", reference_reported),
        ("reported tail", reported_tail),
        ("cumulative excess", cumulative_excess),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(ExcessError::InvalidInput(format!("{name} must be non-negative, got {v}")));
        }
    }
    let ratio_raw = reference_excess / reference_reported;
    let ratio = (ratio_raw * 100.0).round() / 100.0;
    let tail = reported_tail * ratio;
    Ok(Extrapolation {
        ratio_raw,
        ratio,
        tail,
        total: cumulative_excess + tail,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioCell {
    pub week: WeekId,
    pub age: AgeBand,
    pub sex: Option<Sex>,
    pub ratio: f64,
}

/// Observed divided by baseline for every historical cell.
pub fn ratio_diagnostics(history: &[HistoryCell]) -> Result<Vec<RatioCell>, ExcessError> {
    history
        .iter()
        .map(|c| {
            if c.baseline == 0.0 || !c.baseline.is_finite() {
                return Err(ExcessError::NonPositiveBaseline {
                    cell: format!("{} age {}", c.week, c.age),
                    value: c.baseline,
                });
            }
            Ok(RatioCell {
                week: c.week,
                age: c.age,
                sex: c.sex,
                ratio: c.observed as f64 / c.baseline,
            })
        })
        .collect()
}

/// A row of a baseline/observed table such as the CLI's excess output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub key: CellKey,
    pub baseline: f64,
    pub se: f64,
    pub observed: u32,
    /// Excess as printed in the source, if the table has that column.
    pub printed_excess: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RawRow {
    week: u32,
    age_band: String,
    #[serde(default)]
    sex: Option<String>,
    baseline: f64,
    se: f64,
    observed: u32,
    #[serde(default)]
    excess: Option<f64>,
}

/// Read `week,age_band[,sex],baseline,se,observed[,excess]` for weeks of `year`.
/// Extra columns are ignored; an empty sex field means both sexes.
pub fn read_table<R: Read>(reader: R, year: i32) -> Result<Vec<TableRow>, ExcessError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<RawRow>() {
        let raw = rec.map_err(|source| ExcessError::Csv {
            path: "table".into(),
            source,
        })?;
        let line = out.len() as u64 + 2;
        let age = AgeBand::from_label(&raw.age_band).ok_or_else(|| ExcessError::Parse {
            line,
            message: format!("unknown age band '{}'", raw.age_band),
        })?;
        let sex = match raw.sex.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(s.parse::<Sex>().map_err(|message| ExcessError::Parse { line, message })?),
        };
        out.push(TableRow {
            key: CellKey {
                week: WeekId { year, week: raw.week },
                age,
                sex,
            },
            baseline: raw.baseline,
            se: raw.se,
            observed: raw.observed,
            printed_excess: raw.excess,
        });
    }
    Ok(out)
}

impl TableRow {
    /// The row as an excess record, recomputing excess from observed and baseline.
    pub fn record(&self) -> ExcessRecord {
        ExcessRecord {
            key: self.key,
            baseline: self.baseline,
            se: self.se,
            observed: self.observed,
            excess: self.observed as f64 - self.baseline,
        }
    }

    /// The row as an excess record that keeps the printed excess, with the
    /// baseline implied by it. Published tables round baseline and excess
    /// separately, so this differs from [`TableRow::record`] by up to one count.
    pub fn printed_record(&self) -> Option<ExcessRecord> {
        self.printed_excess.map(|excess| ExcessRecord {
            key: self.key,
            baseline: self.observed as f64 - excess,
            se: self.se,
            observed: self.observed,
            excess,
        })
    }
}

/// Write records as `week,age_band,sex,baseline,se,observed,excess`, counts
/// rounded half away from zero.
pub fn write_excess_table<W: Write>(writer: W, records: &[ExcessRecord]) -> Result<(), ExcessError> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |source| ExcessError::Csv {
        path: "excess table".into(),
        source,
    };
    w.write_record(["week", "age_band", "sex", "baseline", "se", "observed", "excess"])
        .map_err(err)?;
    for r in records {
        w.write_record([
            r.key.week.week.to_string(),
            r.key.age.label().to_string(),
            r.key.sex.map_or(String::new(), |s| s.code().to_string()),
            round_count(r.baseline).to_string(),
            round_count(r.se).to_string(),
            r.observed.to_string(),
            round_count(r.excess).to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| err(e.into()))?;
    Ok(())
}

/// Certified deaths per `(week, age band)` from `week,age_band,count` rows.
pub fn read_certified<R: Read>(reader: R, year: i32) -> Result<BTreeMap<(WeekId, AgeBand), u32>, ExcessError> {
    #[derive(Deserialize)]
    struct Row {
        week: u32,
        age_band: String,
        count: u32,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        let row = rec.map_err(|source| ExcessError::Csv {
            path: "certified deaths".into(),
            source,
        })?;
        let line = i as u64 + 2;
        let age = AgeBand::from_label(&row.age_band).ok_or_else(|| ExcessError::Parse {
            line,
            message: format!("unknown age band '{}'", row.age_band),
        })?;
        let key = (WeekId { year, week: row.week }, age);
        if out.insert(key, row.count).is_some() {
            return Err(ExcessError::Duplicate(format!("{} {}", key.0, age)));
        }
    }
    Ok(out)
}

/// Reported deaths by date from `date,deaths` rows.
pub fn read_reported<R: Read>(reader: R) -> Result<BTreeMap<NaiveDate, u32>, ExcessError> {
    #[derive(Deserialize)]
    struct Row {
        date: NaiveDate,
        deaths: u32,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = BTreeMap::new();
    for rec in rdr.deserialize::<Row>() {
        let row = rec.map_err(|source| ExcessError::Csv {
            path: "reported deaths".into(),
            source,
        })?;
        if out.insert(row.date, row.deaths).is_some() {
            return Err(ExcessError::Duplicate(row.date.to_string()));
        }
    }
    Ok(out)
}

/// Sum of reported deaths dated within `range`.
pub fn reported_between(reported: &BTreeMap<NaiveDate, u32>, range: RangeInclusive<NaiveDate>) -> u64 {
    reported.range(range).map(|(_, &d)| d as u64).sum()
}
