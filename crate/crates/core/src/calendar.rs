//! Week-of-year and date regressors plus the England-and-Wales bank-holiday
//! gazette used for the holiday terms.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CalendarError {
    #[error("date {0} is before the 2010-01-01 epoch")]
    BeforeEpoch(NaiveDate),
    #[error("year {0} outside the supported 2000..=2100 range")]
    YearOutOfRange(i32),
    #[error("week {start}..{end} contains two secular holidays ({first} and {second})")]
    TwoSecularHolidays {
        start: NaiveDate,
        end: NaiveDate,
        first: HolidayKind,
        second: HolidayKind,
    },
    #[error("week {start}..{end} is not seven days long")]
    BadWeek { start: NaiveDate, end: NaiveDate },
    #[error("weeks ending {prev} and {next} are not consecutive")]
    NonConsecutive { prev: NaiveDate, next: NaiveDate },
    #[error("gazette line {line}: {message}")]
    GazetteFormat { line: usize, message: String },
    #[error("gazette has two entries for {0}")]
    DuplicateGazetteDate(NaiveDate),
}

pub fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid epoch")
}

/// Days since 1 January 2010.
pub fn week_index(week_end_date: NaiveDate) -> Result<i64, CalendarError> {
    let days = (week_end_date - epoch()).num_days();
    if days < 0 {
        return Err(CalendarError::BeforeEpoch(week_end_date));
    }
    Ok(days)
}

/// Good Friday and Easter Monday by the anonymous Gregorian computus.
pub fn easter_dates(year: i32) -> Result<(NaiveDate, NaiveDate), CalendarError> {
    if !(2000..=2100).contains(&year) {
        return Err(CalendarError::YearOutOfRange(year));
    }
    let a = year % 19;
    let b = year / 100;
    let c = year % 100;
    let d = b / 4;
    let e = b % 4;
    let f = (b + 8) / 25;
    let g = (b - f + 1) / 3;
    let h = (19 * a + b - d - g + 15) % 30;
    let i = c / 4;
    let k = c % 4;
    let l = (32 + 2 * e + 2 * i - h - k) % 7;
    let m = (a + 11 * h + 22 * l) / 451;
    let month = (h + l - 7 * m + 114) / 31;
    let day = (h + l - 7 * m + 114) % 31 + 1;
    let sunday = NaiveDate::from_ymd_opt(year, month as u32, day as u32).expect("computus date");
    Ok((sunday - Duration::days(2), sunday + Duration::days(1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolidayKind {
    MayFirstMonday,
    AugustLastMonday,
    SpringBank,
    NewYear,
    Royal,
    GoodFriday,
    EasterMonday,
    ChristmasDay,
    BoxingDay,
}

impl HolidayKind {
    pub const ALL: [HolidayKind; 9] = [
        HolidayKind::MayFirstMonday,
        HolidayKind::AugustLastMonday,
        HolidayKind::SpringBank,
        HolidayKind::NewYear,
        HolidayKind::Royal,
        HolidayKind::GoodFriday,
        HolidayKind::EasterMonday,
        HolidayKind::ChristmasDay,
        HolidayKind::BoxingDay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HolidayKind::MayFirstMonday => "may_first_monday",
            HolidayKind::AugustLastMonday => "august_last_monday",
            HolidayKind::SpringBank => "spring_bank",
            HolidayKind::NewYear => "new_year",
            HolidayKind::Royal => "royal",
            HolidayKind::GoodFriday => "good_friday",
            HolidayKind::EasterMonday => "easter_monday",
            HolidayKind::ChristmasDay => "christmas_day",
            HolidayKind::BoxingDay => "boxing_day",
        }
    }

    /// Level of the five-level secular-holiday factor, `None` for the
    /// holidays counted by ROY/ESTR/XMAS.
    pub fn secular_level(self) -> Option<u8> {
        match self {
            HolidayKind::MayFirstMonday => Some(2),
            HolidayKind::AugustLastMonday => Some(3),
            HolidayKind::SpringBank => Some(4),
            HolidayKind::NewYear => Some(5),
            _ => None,
        }
    }
}

impl fmt::Display for HolidayKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HolidayKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HolidayKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| format!("unknown holiday kind '{}'", s.trim()))
    }
}

/// Names of the secular factor levels, indexed by level - 1.
pub const SECULAR_LEVEL_NAMES: [&str; 5] = [
    "none",
    "first Monday in May",
    "last Monday in August",
    "spring bank holiday",
    "New Year's Day",
];

use HolidayKind::*;

// England and Wales bank holidays, including substitute days, as gazetted.
const EMBEDDED: &[(i32, u32, u32, HolidayKind)] = &[
    (2010, 1, 1, NewYear),
    (2010, 4, 2, GoodFriday),
    (2010, 4, 5, EasterMonday),
    (2010, 5, 3, MayFirstMonday),
    (2010, 5, 31, SpringBank),
    (2010, 8, 30, AugustLastMonday),
    (2010, 12, 27, ChristmasDay),
    (2010, 12, 28, BoxingDay),
    (2011, 1, 3, NewYear),
    (2011, 4, 22, GoodFriday),
    (2011, 4, 25, EasterMonday),
    (2011, 4, 29, Royal),
    (2011, 5, 2, MayFirstMonday),
    (2011, 5, 30, SpringBank),
    (2011, 8, 29, AugustLastMonday),
    (2011, 12, 26, BoxingDay),
    (2011, 12, 27, ChristmasDay),
    (2012, 1, 2, NewYear),
    (2012, 4, 6, GoodFriday),
    (2012, 4, 9, EasterMonday),
    (2012, 5, 7, MayFirstMonday),
    (2012, 6, 4, SpringBank),
    (2012, 6, 5, Royal),
    (2012, 8, 27, AugustLastMonday),
    (2012, 12, 25, ChristmasDay),
    (2012, 12, 26, BoxingDay),
    (2013, 1, 1, NewYear),
    (2013, 3, 29, GoodFriday),
    (2013, 4, 1, EasterMonday),
    (2013, 5, 6, MayFirstMonday),
    (2013, 5, 27, SpringBank),
    (2013, 8, 26, AugustLastMonday),
    (2013, 12, 25, ChristmasDay),
    (2013, 12, 26, BoxingDay),
    (2014, 1, 1, NewYear),
    (2014, 4, 18, GoodFriday),
    (2014, 4, 21, EasterMonday),
    (2014, 5, 5, MayFirstMonday),
    (2014, 5, 26, SpringBank),
    (2014, 8, 25, AugustLastMonday),
    (2014, 12, 25, ChristmasDay),
    (2014, 12, 26, BoxingDay),
    (2015, 1, 1, NewYear),
    (2015, 4, 3, GoodFriday),
    (2015, 4, 6, EasterMonday),
    (2015, 5, 4, MayFirstMonday),
    (2015, 5, 25, SpringBank),
    (2015, 8, 31, AugustLastMonday),
    (2015, 12, 25, ChristmasDay),
    (2015, 12, 28, BoxingDay),
    (2016, 1, 1, NewYear),
    (2016, 3, 25, GoodFriday),
    (2016, 3, 28, EasterMonday),
    (2016, 5, 2, MayFirstMonday),
    (2016, 5, 30, SpringBank),
    (2016, 8, 29, AugustLastMonday),
    (2016, 12, 26, BoxingDay),
    (2016, 12, 27, ChristmasDay),
    (2017, 1, 2, NewYear),
    (2017, 4, 14, GoodFriday),
    (2017, 4, 17, EasterMonday),
    (2017, 5, 1, MayFirstMonday),
    (2017, 5, 29, SpringBank),
    (2017, 8, 28, AugustLastMonday),
    (2017, 12, 25, ChristmasDay),
    (2017, 12, 26, BoxingDay),
    (2018, 1, 1, NewYear),
    (2018, 3, 30, GoodFriday),
    (2018, 4, 2, EasterMonday),
    (2018, 5, 7, MayFirstMonday),
    (2018, 5, 28, SpringBank),
    (2018, 8, 27, AugustLastMonday),
    (2018, 12, 25, ChristmasDay),
    (2018, 12, 26, BoxingDay),
    (2019, 1, 1, NewYear),
    (2019, 4, 19, GoodFriday),
    (2019, 4, 22, EasterMonday),
    (2019, 5, 6, MayFirstMonday),
    (2019, 5, 27, SpringBank),
    (2019, 8, 26, AugustLastMonday),
    (2019, 12, 25, ChristmasDay),
    (2019, 12, 26, BoxingDay),
    (2020, 1, 1, NewYear),
    (2020, 4, 10, GoodFriday),
    (2020, 4, 13, EasterMonday),
    // moved from 4 May for the VE Day anniversary
    (2020, 5, 8, MayFirstMonday),
    (2020, 5, 25, SpringBank),
    (2020, 8, 31, AugustLastMonday),
    (2020, 12, 25, ChristmasDay),
    (2020, 12, 28, BoxingDay),
    (2021, 1, 1, NewYear),
    (2021, 4, 2, GoodFriday),
    (2021, 4, 5, EasterMonday),
    (2021, 5, 3, MayFirstMonday),
    (2021, 5, 31, SpringBank),
    (2021, 8, 30, AugustLastMonday),
    (2021, 12, 27, ChristmasDay),
    (2021, 12, 28, BoxingDay),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HolidayGazette {
    entries: BTreeMap<NaiveDate, HolidayKind>,
}

impl HolidayGazette {
    pub fn embedded() -> Self {
        let entries = EMBEDDED
            .iter()
            .map(|&(y, m, d, k)| (NaiveDate::from_ymd_opt(y, m, d).expect("gazette date"), k))
            .collect();
        HolidayGazette { entries }
    }

    pub fn from_entries(
        entries: impl IntoIterator<Item = (NaiveDate, HolidayKind)>,
    ) -> Result<Self, CalendarError> {
        let mut map = BTreeMap::new();
        for (date, kind) in entries {
            if map.insert(date, kind).is_some() {
                return Err(CalendarError::DuplicateGazetteDate(date));
            }
        }
        Ok(HolidayGazette { entries: map })
    }

    /// Read an override gazette: CSV `date,kind`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, CalendarError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let fmt_err = |message: String| CalendarError::GazetteFormat { line, message };
            let rec = rec.map_err(|e| fmt_err(e.to_string()))?;
            if rec.len() != 2 {
                return Err(fmt_err(format!("expected 2 fields, got {}", rec.len())));
            }
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|e| fmt_err(format!("bad date '{}': {e}", &rec[0])))?;
            let kind = rec[1].parse::<HolidayKind>().map_err(fmt_err)?;
            entries.push((date, kind));
        }
        Self::from_entries(entries)
    }

    pub fn entries(&self) -> impl Iterator<Item = (NaiveDate, HolidayKind)> + '_ {
        self.entries.iter().map(|(d, k)| (*d, *k))
    }

    pub fn in_range(
        &self,
        start: NaiveDate,
        end: NaiveDate,
    ) -> impl Iterator<Item = (NaiveDate, HolidayKind)> + '_ {
        self.entries.range(start..=end).map(|(d, k)| (*d, *k))
    }
}

/// Holiday regressors for one week. `sh`/`lsh` are factor levels 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HolidayFeatures {
    pub sh: u8,
    pub lsh: u8,
    pub roy: u32,
    pub estr: u32,
    pub xmas: u32,
    pub lroy: u32,
    pub lestr: u32,
    pub lxmas: u32,
}

impl Default for HolidayFeatures {
    fn default() -> Self {
        HolidayFeatures {
            sh: 1,
            lsh: 1,
            roy: 0,
            estr: 0,
            xmas: 0,
            lroy: 0,
            lestr: 0,
            lxmas: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekTime {
    /// Week of year, 1..=53, from the source numbering.
    pub wk: u32,
    /// Days from 2010-01-01 to the week's end date.
    pub wkeday: i64,
}

/// Holiday counts for the inclusive week `week_start..=week_end`; lag fields are
/// left at their holiday-free values.
pub fn holiday_features(
    week_start: NaiveDate,
    week_end: NaiveDate,
    gazette: &HolidayGazette,
) -> Result<HolidayFeatures, CalendarError> {
    if week_end - week_start != Duration::days(6) {
        return Err(CalendarError::BadWeek {
            start: week_start,
            end: week_end,
        });
    }
    let mut feats = HolidayFeatures::default();
    let mut secular: Option<HolidayKind> = None;
    for (_, kind) in gazette.in_range(week_start, week_end) {
        if let Some(level) = kind.secular_level() {
            match secular {
                Some(prev) if prev != kind => {
                    return Err(CalendarError::TwoSecularHolidays {
                        start: week_start,
                        end: week_end,
                        first: prev,
                        second: kind,
                    })
                }
                _ => {
                    secular = Some(kind);
                    feats.sh = level;
                }
            }
            continue;
        }
        match kind {
            Royal => feats.roy += 1,
            GoodFriday | EasterMonday => feats.estr += 1,
            ChristmasDay | BoxingDay => feats.xmas += 1,
            _ => unreachable!("secular kinds handled above"),
        }
    }
    Ok(feats)
}

/// Fill lag fields from the previous row. `rows` are `(week_end_date, features)`
/// in time order; the week before the first row is treated as holiday-free.
pub fn lag_features(
    rows: &[(NaiveDate, HolidayFeatures)],
) -> Result<Vec<HolidayFeatures>, CalendarError> {
    let mut out = Vec::with_capacity(rows.len());
    let mut prev: Option<(NaiveDate, HolidayFeatures)> = None;
    for &(date, feats) in rows {
        let mut lagged = feats;
        match prev {
            Some((pdate, p)) => {
                if date - pdate != Duration::days(7) {
                    return Err(CalendarError::NonConsecutive {
                        prev: pdate,
                        next: date,
                    });
                }
                lagged.lsh = p.sh;
                lagged.lroy = p.roy;
                lagged.lestr = p.estr;
                lagged.lxmas = p.xmas;
            }
            None => {
                lagged.lsh = 1;
                lagged.lroy = 0;
                lagged.lestr = 0;
                lagged.lxmas = 0;
            }
        }
        out.push(lagged);
        prev = Some((date, feats));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Datelike;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn week_ending(end: NaiveDate) -> HolidayFeatures {
        holiday_features(end - Duration::days(6), end, &HolidayGazette::embedded()).unwrap()
    }

    #[test]
    fn week_index_values() {
        assert_eq!(week_index(d(2010, 1, 1)).unwrap(), 0);
        assert_eq!(week_index(d(2010, 1, 8)).unwrap(), 7);
        assert_eq!(week_index(d(2020, 2, 28)).unwrap(), 3710);
        assert_eq!(
            week_index(d(2009, 12, 25)),
            Err(CalendarError::BeforeEpoch(d(2009, 12, 25)))
        );
    }

    #[test]
    fn easter_cross_checks() {
        assert_eq!(easter_dates(2020).unwrap().0, d(2020, 4, 10));
        assert_eq!(easter_dates(2010).unwrap().0, d(2010, 4, 2));
        for y in 2000..=2100 {
            let (gf, em) = easter_dates(y).unwrap();
            assert_eq!(em - gf, Duration::days(3));
            assert_eq!(gf.weekday(), chrono::Weekday::Fri);
        }
        assert_eq!(easter_dates(1999), Err(CalendarError::YearOutOfRange(1999)));
    }

    #[test]
    fn gazette_easter_matches_computus() {
        let gaz = HolidayGazette::embedded();
        for (date, kind) in gaz.entries() {
            let (gf, em) = easter_dates(date.year()).unwrap();
            match kind {
                GoodFriday => assert_eq!(date, gf),
                EasterMonday => assert_eq!(date, em),
                _ => {}
            }
        }
    }

    #[test]
    fn christmas_week_counts_two() {
        // 2019: Wed 25 and Thu 26 Dec, week ending Fri 27 Dec
        let f = week_ending(d(2019, 12, 27));
        assert_eq!(f.xmas, 2);
        assert_eq!(f.sh, 1);
    }

    #[test]
    fn ve_day_week_is_may_holiday() {
        let f = week_ending(d(2020, 5, 8));
        assert_eq!(f.sh, 2);
        // 4 May 2020 was not a holiday
        assert_eq!(week_ending(d(2020, 5, 1)).sh, 1);
    }

    #[test]
    fn quiet_week() {
        let f = week_ending(d(2019, 7, 12));
        assert_eq!(f, HolidayFeatures::default());
    }

    #[test]
    fn two_secular_holidays_is_an_error() {
        let gaz = HolidayGazette::from_entries([(d(2019, 7, 8), NewYear), (d(2019, 7, 9), SpringBank)])
            .unwrap();
        assert!(matches!(
            holiday_features(d(2019, 7, 6), d(2019, 7, 12), &gaz),
            Err(CalendarError::TwoSecularHolidays { .. })
        ));
    }

    #[test]
    fn lags_shift_and_first_row_is_holiday_free() {
        let a = HolidayFeatures {
            sh: 4,
            xmas: 2,
            ..Default::default()
        };
        let b = HolidayFeatures::default();
        let rows = vec![(d(2019, 5, 31), a), (d(2019, 6, 7), b)];
        let out = lag_features(&rows).unwrap();
        assert_eq!(out[0].lsh, 1);
        assert_eq!(out[0].lxmas, 0);
        assert_eq!(out[1].lsh, 4);
        assert_eq!(out[1].lxmas, 2);
        // unlagged fields untouched
        assert_eq!(out[0].sh, 4);
        assert_eq!(out[1].sh, 1);
    }

    #[test]
    fn shuffled_rows_rejected() {
        let f = HolidayFeatures::default();
        let rows = vec![(d(2019, 6, 7), f), (d(2019, 5, 31), f)];
        assert!(matches!(lag_features(&rows), Err(CalendarError::NonConsecutive { .. })));
    }

    #[test]
    fn yearly_totals_and_one_secular_per_week() {
        let gaz = HolidayGazette::embedded();
        let mut end = d(2010, 1, 8);
        let mut xmas: BTreeMap<i32, u32> = BTreeMap::new();
        let mut estr: BTreeMap<i32, u32> = BTreeMap::new();
        while end <= d(2021, 1, 1) {
            // errors on two secular holidays in a week
            holiday_features(end - Duration::days(6), end, &gaz).unwrap();
            end += Duration::days(7);
        }
        for (date, kind) in gaz.entries() {
            match kind {
                ChristmasDay | BoxingDay => *xmas.entry(date.year()).or_default() += 1,
                GoodFriday | EasterMonday => *estr.entry(date.year()).or_default() += 1,
                _ => {}
            }
        }
        for y in 2010..=2020 {
            assert_eq!(xmas[&y], 2, "christmas {y}");
            assert_eq!(estr[&y], 2, "easter {y}");
        }
    }

    #[test]
    fn gazette_override_csv() {
        let gaz = HolidayGazette::from_csv("date,kind\n2020-05-08,may_first_monday\n".as_bytes())
            .unwrap();
        assert_eq!(gaz.entries().count(), 1);
        assert!(matches!(
            HolidayGazette::from_csv("date,kind\n2020-05-08,bogus\n".as_bytes()),
            Err(CalendarError::GazetteFormat { line: 2, .. })
        ));
        assert!(matches!(
            HolidayGazette::from_csv("date,kind\n2020-05-08,royal\n2020-05-08,royal\n".as_bytes()),
            Err(CalendarError::DuplicateGazetteDate(_))
        ));
    }
}
