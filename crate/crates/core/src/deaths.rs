//! Weekly registered-death counts: parsing, fine-to-coarse age reconciliation
//! and grid validation.
//!
//! Input CSV schema (UTF-8, LF or CRLF):
//!
//! ```text
//! week_end_date,age_band,sex,deaths[,year,week]
//! 2020-03-20,85+,F,2479
//! ```
//!
//! `age_band` takes either the seven coarse labels or the twenty fine labels.
//! Fine rows for one `(week_end_date, sex)` are summed into coarse bands and
//! must be complete. When the optional `year,week` columns are present they
//! are trusted as-is; otherwise the registration-week number is derived from
//! the date (week 1 ends on the first Friday falling on or after 2 January).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DeathsError {
    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },
    #[error("line {line}: negative count {count}")]
    NegativeCount { line: usize, count: i64 },
    #[error("line {line}: duplicate record for {key}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: week ending {date} is a {weekday}, expected Friday")]
    WrongWeekday { line: usize, date: NaiveDate, weekday: Weekday },
    #[error("missing fine age band {0}")]
    MissingFineBand(FineAgeBand),
    #[error("fine age bands for week ending {date} ({sex}) are incomplete: missing {missing}")]
    IncompleteFineGroup { date: NaiveDate, sex: Sex, missing: FineAgeBand },
    #[error("csv: {0}")]
    Csv(String),
}

/// The seven coarse age bands used before April 2020.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgeBand(u8);

const COARSE_LABELS: [&str; 7] = ["0", "1-14", "15-44", "45-64", "65-74", "75-84", "85+"];
const COARSE_LOWER: [u32; 7] = [0, 1, 15, 45, 65, 75, 85];

impl AgeBand {
    pub const COUNT: usize = 7;

    /// `index` is 1-based: 1 is age 0, 7 is 85+.
    pub fn new(index: u8) -> Option<Self> {
        (1..=7).contains(&index).then_some(AgeBand(index))
    }

    pub fn all() -> impl Iterator<Item = AgeBand> {
        (1..=7).map(AgeBand)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// 0-based position, handy for array indexing.
    pub fn ordinal(self) -> usize {
        self.0 as usize - 1
    }

    pub fn label(self) -> &'static str {
        COARSE_LABELS[self.ordinal()]
    }

    pub fn lower_age(self) -> u32 {
        COARSE_LOWER[self.ordinal()]
    }

    pub fn from_label(label: &str) -> Option<Self> {
        let norm = normalize_label(label);
        COARSE_LABELS
            .iter()
            .position(|l| *l == norm)
            .map(|i| AgeBand(i as u8 + 1))
    }
}

impl fmt::Display for AgeBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The twenty fine age bands published for 2020.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FineAgeBand(u8);

impl FineAgeBand {
    pub const COUNT: usize = 20;

    pub fn new(index: u8) -> Option<Self> {
        (1..=20).contains(&index).then_some(FineAgeBand(index))
    }

    pub fn all() -> impl Iterator<Item = FineAgeBand> {
        (1..=20).map(FineAgeBand)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// Lower bound of the band in years.
    pub fn lower_age(self) -> u32 {
        match self.0 {
            1 => 0,
            2 => 1,
            i => 5 * (i as u32 - 2),
        }
    }

    /// Upper bound in years, `None` for 90+.
    pub fn upper_age(self) -> Option<u32> {
        match self.0 {
            1 => Some(0),
            2 => Some(4),
            20 => None,
            i => Some(5 * (i as u32 - 2) + 4),
        }
    }

    pub fn label(self) -> String {
        match (self.lower_age(), self.upper_age()) {
            (0, Some(0)) => "0".to_string(),
            (lo, Some(hi)) => format!("{lo}-{hi}"),
            (lo, None) => format!("{lo}+"),
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        let norm = normalize_label(label);
        FineAgeBand::all().find(|b| b.label() == norm)
    }

    /// The coarse band that contains this fine band.
    pub fn coarse(self) -> AgeBand {
        let lo = self.lower_age();
        let idx = COARSE_LOWER.iter().rposition(|&c| c <= lo).unwrap_or(0);
        AgeBand(idx as u8 + 1)
    }
}

impl fmt::Display for FineAgeBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn normalize_label(label: &str) -> String {
    label.trim().replace(['\u{2013}', '\u{2014}'], "-").replace(' ', "")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::Female, Sex::Male];

    /// 0 for females, 1 for males.
    pub fn indicator(self) -> u8 {
        match self {
            Sex::Female => 0,
            Sex::Male => 1,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Sex::Female => "F",
            Sex::Male => "M",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "F" | "f" | "female" | "Female" => Ok(Sex::Female),
            "M" | "m" | "male" | "Male" => Ok(Sex::Male),
            other => Err(format!("unknown sex '{other}'")),
        }
    }
}

/// Identifies a registration week by its source numbering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WeekId {
    pub year: i32,
    pub week: u32,
}

impl WeekId {
    /// The Friday on which this registration week ends.
    pub fn week_end(self) -> NaiveDate {
        first_week_end(self.year) + Duration::days(7 * (self.week as i64 - 1))
    }
}

impl fmt::Display for WeekId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeathObservation {
    pub week_end_date: NaiveDate,
    pub week_number: u32,
    pub year: i32,
    pub age: AgeBand,
    pub sex: Sex,
    pub count: u32,
}

impl DeathObservation {
    pub fn week_id(&self) -> WeekId {
        WeekId {
            year: self.year,
            week: self.week_number,
        }
    }
}

/// First Friday on or after 2 January of `year`; registration week 1 ends on it.
pub fn first_week_end(year: i32) -> NaiveDate {
    let jan2 = NaiveDate::from_ymd_opt(year, 1, 2).expect("valid date");
    let offset = (Weekday::Fri.num_days_from_monday() + 7
        - jan2.weekday().num_days_from_monday())
        % 7;
    jan2 + Duration::days(offset as i64)
}

/// Derive `(year, week)` for a Friday week-end date.
pub fn derive_week_id(week_end: NaiveDate) -> WeekId {
    let mut year = week_end.year();
    let mut start = first_week_end(year);
    if week_end < start {
        year -= 1;
        start = first_week_end(year);
    }
    let week = ((week_end - start).num_days() / 7) as u32 + 1;
    WeekId { year, week }
}

#[derive(Debug, Deserialize)]
struct RawRow {
    week_end_date: String,
    age_band: String,
    sex: String,
    deaths: String,
    #[serde(default)]
    year: Option<String>,
    #[serde(default)]
    week: Option<String>,
}

enum Band {
    Coarse(AgeBand),
    Fine(FineAgeBand),
    // "0" is a label in both schemes.
    Infant,
}

struct ParsedRow {
    line: usize,
    date: NaiveDate,
    week: WeekId,
    band: Band,
    sex: Sex,
    count: u32,
}

/// Parse the normalized deaths CSV into coarse-band observations.
pub fn parse_deaths_csv<R: Read>(reader: R) -> Result<Vec<DeathObservation>, DeathsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<RawRow>().enumerate() {
        // header is line 1
        let line = i + 2;
        let raw = rec.map_err(|e| DeathsError::MalformedRow {
            line,
            message: e.to_string(),
        })?;
        rows.push(parse_row(line, raw)?);
    }

    // group by (date, sex) so fine bands can be reconciled
    let mut groups: BTreeMap<(NaiveDate, Sex), Vec<ParsedRow>> = BTreeMap::new();
    for row in rows {
        groups.entry((row.date, row.sex)).or_default().push(row);
    }

    let mut out = Vec::new();
    let mut seen: BTreeSet<(WeekId, AgeBand, Sex)> = BTreeSet::new();
    for ((date, sex), group) in groups {
        let is_fine = group.iter().any(|r| matches!(r.band, Band::Fine(_)));
        let week = group[0].week;
        let mut coarse: Vec<(usize, AgeBand, u32)> = Vec::new();
        if is_fine {
            let mut fine: BTreeMap<FineAgeBand, u32> = BTreeMap::new();
            for r in &group {
                let band = match r.band {
                    Band::Fine(b) => b,
                    Band::Infant => FineAgeBand(1),
                    Band::Coarse(c) => {
                        return Err(DeathsError::MalformedRow {
                            line: r.line,
                            message: format!(
                                "coarse band {c} mixed with fine bands for {date} {sex}"
                            ),
                        })
                    }
                };
                if fine.insert(band, r.count).is_some() {
                    return Err(DeathsError::DuplicateKey {
                        line: r.line,
                        key: format!("{date},{band},{sex}"),
                    });
                }
            }
            let line = group.iter().map(|r| r.line).min().unwrap_or(0);
            let reconciled = reconcile_age_bands(&fine).map_err(|e| match e {
                DeathsError::MissingFineBand(missing) => {
                    DeathsError::IncompleteFineGroup { date, sex, missing }
                }
                other => other,
            })?;
            for (age, count) in reconciled {
                coarse.push((line, age, count));
            }
        } else {
            for r in &group {
                let age = match r.band {
                    Band::Coarse(a) => a,
                    _ => AgeBand(1),
                };
                coarse.push((r.line, age, r.count));
            }
        }
        for (line, age, count) in coarse {
            if !seen.insert((week, age, sex)) {
                return Err(DeathsError::DuplicateKey {
                    line,
                    key: format!("{week},{age},{sex}"),
                });
            }
            out.push(DeathObservation {
                week_end_date: date,
                week_number: week.week,
                year: week.year,
                age,
                sex,
                count,
            });
        }
    }
    out.sort_by_key(|o| (o.week_end_date, o.age, o.sex));
    Ok(out)
}

fn parse_row(line: usize, raw: RawRow) -> Result<ParsedRow, DeathsError> {
    let malformed = |message: String| DeathsError::MalformedRow { line, message };
    let date = NaiveDate::parse_from_str(&raw.week_end_date, "%Y-%m-%d")
        .map_err(|e| malformed(format!("bad date '{}': {e}", raw.week_end_date)))?;
    if date.weekday() != Weekday::Fri {
        return Err(DeathsError::WrongWeekday {
            line,
            date,
            weekday: date.weekday(),
        });
    }
    let band = match (
        AgeBand::from_label(&raw.age_band),
        FineAgeBand::from_label(&raw.age_band),
    ) {
        (Some(_), Some(_)) => Band::Infant,
        (Some(c), None) => Band::Coarse(c),
        (None, Some(f)) => Band::Fine(f),
        (None, None) => return Err(malformed(format!("unknown age band '{}'", raw.age_band))),
    };
    let sex = raw.sex.parse::<Sex>().map_err(malformed)?;
    let count: i64 = raw
        .deaths
        .parse()
        .map_err(|_| malformed(format!("bad count '{}'", raw.deaths)))?;
    if count < 0 {
        return Err(DeathsError::NegativeCount { line, count });
    }
    let count = u32::try_from(count).map_err(|_| malformed(format!("count {count} too large")))?;
    let week = match (raw.year.as_deref(), raw.week.as_deref()) {
        (Some(y), Some(w)) if !y.is_empty() && !w.is_empty() => {
            let year = y.parse().map_err(|_| malformed(format!("bad year '{y}'")))?;
            let week: u32 = w.parse().map_err(|_| malformed(format!("bad week '{w}'")))?;
            if !(1..=53).contains(&week) {
                return Err(malformed(format!("week {week} outside 1..53")));
            }
            WeekId { year, week }
        }
        _ => derive_week_id(date),
    };
    Ok(ParsedRow {
        line,
        date,
        week,
        band,
        sex,
        count,
    })
}

/// Write observations in the coarse schema with explicit `year,week` columns.
pub fn write_deaths_csv<W: Write>(writer: W, obs: &[DeathObservation]) -> Result<(), DeathsError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| DeathsError::Csv(e.to_string());
    wtr.write_record(["week_end_date", "age_band", "sex", "deaths", "year", "week"])
        .map_err(csv_err)?;
    for o in obs {
        wtr.write_record([
            o.week_end_date.format("%Y-%m-%d").to_string(),
            o.age.label().to_string(),
            o.sex.code().to_string(),
            o.count.to_string(),
            o.year.to_string(),
            o.week_number.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| DeathsError::Csv(e.to_string()))?;
    Ok(())
}

/// Sum the twenty fine bands into the seven coarse bands.
pub fn reconcile_age_bands(
    fine: &BTreeMap<FineAgeBand, u32>,
) -> Result<BTreeMap<AgeBand, u32>, DeathsError> {
    let mut coarse: BTreeMap<AgeBand, u32> = AgeBand::all().map(|a| (a, 0)).collect();
    for band in FineAgeBand::all() {
        let count = fine.get(&band).ok_or(DeathsError::MissingFineBand(band))?;
        *coarse.get_mut(&band.coarse()).expect("all coarse bands present") += count;
    }
    Ok(coarse)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    /// Weeks missing from the grid, numbered by continuing the previous week.
    pub gaps: Vec<WeekId>,
    pub duplicates: Vec<(WeekId, AgeBand, Sex)>,
    /// Weeks whose number does not follow the previous week within a year.
    pub nonconsecutive: Vec<WeekId>,
    /// (week, age, sex) cells absent although the cell appears elsewhere.
    pub missing_cells: Vec<(WeekId, AgeBand, Sex)>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
            && self.duplicates.is_empty()
            && self.nonconsecutive.is_empty()
            && self.missing_cells.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.gaps {
            writeln!(f, "gap\t{g}")?;
        }
        for (w, a, s) in &self.duplicates {
            writeln!(f, "duplicate\t{w}\t{a}\t{s}")?;
        }
        for w in &self.nonconsecutive {
            writeln!(f, "nonconsecutive\t{w}")?;
        }
        for (w, a, s) in &self.missing_cells {
            writeln!(f, "missing_cell\t{w}\t{a}\t{s}")?;
        }
        Ok(())
    }
}

pub fn validate_series(obs: &[DeathObservation]) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut seen = BTreeSet::new();
    for o in obs {
        let key = (o.week_id(), o.age, o.sex);
        if !seen.insert(key) {
            report.duplicates.push(key);
        }
    }

    let weeks: BTreeMap<NaiveDate, WeekId> =
        obs.iter().map(|o| (o.week_end_date, o.week_id())).collect();
    let mut prev: Option<(NaiveDate, WeekId)> = None;
    for (&date, &week) in &weeks {
        if let Some((pdate, pweek)) = prev {
            let missing = (date - pdate).num_days() / 7 - 1;
            for k in 1..=missing.max(0) {
                let cursor = pdate + Duration::days(7 * k);
                let derived = derive_week_id(cursor);
                // continue the source numbering within a year
                report.gaps.push(if derived.year == pweek.year {
                    WeekId {
                        year: pweek.year,
                        week: pweek.week + k as u32,
                    }
                } else {
                    derived
                });
            }
            if missing == 0 && week.year == pweek.year && week.week != pweek.week + 1 {
                report.nonconsecutive.push(week);
            }
            if missing == 0 && week.year != pweek.year && week.week != 1 {
                report.nonconsecutive.push(week);
            }
        }
        prev = Some((date, week));
    }

    let cells: BTreeSet<(AgeBand, Sex)> = obs.iter().map(|o| (o.age, o.sex)).collect();
    for week in weeks.values() {
        for &(age, sex) in &cells {
            if !seen.contains(&(*week, age, sex)) {
                report.missing_cells.push((*week, age, sex));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<DeathObservation>, DeathsError> {
        parse_deaths_csv(text.as_bytes())
    }

    #[test]
    fn parses_table_row() {
        let obs = parse("week_end_date,age_band,sex,deaths\n2020-03-20,85+,F,2479\n").unwrap();
        assert_eq!(
            obs,
            vec![DeathObservation {
                week_end_date: NaiveDate::from_ymd_opt(2020, 3, 20).unwrap(),
                week_number: 12,
                year: 2020,
                age: AgeBand::new(7).unwrap(),
                sex: Sex::Female,
                count: 2479,
            }]
        );
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse("week_end_date,age_band,sex,deaths\n").unwrap().is_empty());
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn negative_count_rejected() {
        let err = parse("week_end_date,age_band,sex,deaths\n2020-03-20,85+,F,-3\n").unwrap_err();
        assert_eq!(err, DeathsError::NegativeCount { line: 2, count: -3 });
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "week_end_date,age_band,sex,deaths\n2020-03-20,85+,F,1\n2020-03-20,85+,X,2\n";
        match parse(text).unwrap_err() {
            DeathsError::MalformedRow { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn crlf_and_explicit_week_columns() {
        let text = "week_end_date,age_band,sex,deaths,year,week\r\n2016-01-01,0,M,30,2015,53\r\n";
        let obs = parse(text).unwrap();
        assert_eq!(obs[0].week_id(), WeekId { year: 2015, week: 53 });
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = "week_end_date,age_band,sex,deaths\n2020-03-20,85+,F,1\n2020-03-20,85+,F,2\n";
        assert!(matches!(parse(text), Err(DeathsError::DuplicateKey { .. })));
    }

    #[test]
    fn non_friday_rejected() {
        let text = "week_end_date,age_band,sex,deaths\n2020-03-19,85+,F,1\n";
        assert!(matches!(parse(text), Err(DeathsError::WrongWeekday { .. })));
    }

    #[test]
    fn week_numbering_convention() {
        let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        assert_eq!(derive_week_id(d(2010, 1, 8)), WeekId { year: 2010, week: 1 });
        assert_eq!(derive_week_id(d(2010, 1, 1)), WeekId { year: 2009, week: 53 });
        assert_eq!(derive_week_id(d(2020, 2, 28)), WeekId { year: 2020, week: 9 });
        assert_eq!(derive_week_id(d(2020, 5, 22)), WeekId { year: 2020, week: 21 });
        assert_eq!(derive_week_id(d(2016, 1, 1)), WeekId { year: 2015, week: 53 });
        assert_eq!(derive_week_id(d(2021, 1, 1)), WeekId { year: 2020, week: 53 });
    }

    #[test]
    fn fine_rows_are_reconciled() {
        let mut text = String::from("week_end_date,age_band,sex,deaths\n");
        for (i, band) in FineAgeBand::all().enumerate() {
            text.push_str(&format!("2020-04-03,{},M,{}\n", band, i + 1));
        }
        let obs = parse(&text).unwrap();
        assert_eq!(obs.len(), 7);
        let total: u32 = obs.iter().map(|o| o.count).sum();
        assert_eq!(total, (1..=20).sum::<u32>());
        let band_1_14 = obs.iter().find(|o| o.age.index() == 2).unwrap();
        assert_eq!(band_1_14.count, 2 + 3 + 4);
    }

    #[test]
    fn incomplete_fine_group_rejected() {
        let text = "week_end_date,age_band,sex,deaths\n2020-04-03,1-4,M,3\n";
        assert!(matches!(parse(text), Err(DeathsError::IncompleteFineGroup { .. })));
    }

    #[test]
    fn fine_band_labels_and_mapping() {
        let labels: Vec<String> = FineAgeBand::all().map(|b| b.label()).collect();
        assert_eq!(labels[0], "0");
        assert_eq!(labels[1], "1-4");
        assert_eq!(labels[2], "5-9");
        assert_eq!(labels[18], "85-89");
        assert_eq!(labels[19], "90+");
        // 17 contiguous five-year bands between 1-4 and 90+
        for b in FineAgeBand::all().skip(2).take(17) {
            assert_eq!(b.upper_age().unwrap() - b.lower_age() + 1, 5);
        }
        assert_eq!(FineAgeBand::from_label("10-14").unwrap().coarse().label(), "1-14");
        assert_eq!(FineAgeBand::from_label("15-19").unwrap().coarse().label(), "15-44");
        assert_eq!(FineAgeBand::from_label("40-44").unwrap().coarse().label(), "15-44");
        assert_eq!(FineAgeBand::from_label("90+").unwrap().coarse().label(), "85+");
    }

    #[test]
    fn reconcile_zero_and_direct_sum() {
        let zeros: BTreeMap<_, _> = FineAgeBand::all().map(|b| (b, 0)).collect();
        assert!(reconcile_age_bands(&zeros).unwrap().values().all(|&c| c == 0));

        let mut fine = zeros.clone();
        fine.insert(FineAgeBand::from_label("1-4").unwrap(), 2);
        fine.insert(FineAgeBand::from_label("5-9").unwrap(), 3);
        fine.insert(FineAgeBand::from_label("10-14").unwrap(), 4);
        let coarse = reconcile_age_bands(&fine).unwrap();
        for (age, count) in coarse {
            assert_eq!(count, if age.index() == 2 { 9 } else { 0 });
        }

        let mut missing = zeros;
        missing.remove(&FineAgeBand::new(20).unwrap());
        assert_eq!(
            reconcile_age_bands(&missing),
            Err(DeathsError::MissingFineBand(FineAgeBand::new(20).unwrap()))
        );
    }

    fn grid(year: i32, weeks: impl Iterator<Item = u32>) -> Vec<DeathObservation> {
        weeks
            .map(|w| DeathObservation {
                week_end_date: first_week_end(year) + Duration::days(7 * (w as i64 - 1)),
                week_number: w,
                year,
                age: AgeBand::new(4).unwrap(),
                sex: Sex::Female,
                count: 100,
            })
            .collect()
    }

    #[test]
    fn complete_grid_validates_clean() {
        assert!(validate_series(&grid(2010, 1..=52)).is_empty());
    }

    #[test]
    fn gap_is_reported() {
        let obs = grid(2015, (1..=53).filter(|&w| w != 30));
        let report = validate_series(&obs);
        assert_eq!(report.gaps, vec![WeekId { year: 2015, week: 30 }]);
        assert!(report.duplicates.is_empty());
    }

    #[test]
    fn duplicate_is_reported() {
        let mut obs = grid(2010, 1..=3);
        obs.push(obs[1].clone());
        let report = validate_series(&obs);
        assert_eq!(report.duplicates.len(), 1);
        assert_eq!(report.duplicates[0].0, WeekId { year: 2010, week: 2 });
    }

    #[test]
    fn nonconsecutive_numbering_is_reported() {
        let mut obs = grid(2010, 1..=4);
        obs[2].week_number = 7;
        let report = validate_series(&obs);
        assert!(report.nonconsecutive.contains(&WeekId { year: 2010, week: 7 }));
    }
}
