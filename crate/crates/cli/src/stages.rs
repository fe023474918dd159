//! Pipeline stages. Each reads documented files and writes its own into the
//! output directory.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use regdeaths::airquality::{national_series, parse_daqi_csv, weekly_series, WeeklyAqi};
use regdeaths::calendar::{week_index, HolidayGazette, WeekTime};
use regdeaths::deaths::{parse_deaths_csv, validate_series, write_deaths_csv, AgeBand, DeathObservation, Sex, WeekId};
use regdeaths::excess::{
    aggregate, bands, excess_table, extrapolate, prorate_months, ratio_diagnostics, read_certified, read_reported,
    read_table, reported_between, round_count, round_percent, se_table, undercount, write_excess_table, BaselineBand,
    CellKey, ExcessRecord, HistoryCell, SE_YEARS,
};
use regdeaths::features::{build_feature_rows, FeatureRow, WeekTemperature};
use regdeaths::gam::FitSettings;
use regdeaths::imputation::{fit_imputers, impute_series, ImputationModel};
use regdeaths::mortality::{self, assemble_design, build_layout, fit_mortality_gam, simulate_observations, FittedMortalityModel};
use regdeaths::synthetic::{all_cells, synthetic_features, TrueModel};
use regdeaths::weather::{parse_hadcet, weekly_aggregates, WeatherError};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, Context};
use crate::io::{open, read_csv, read_json, write_bytes, write_json, Table};

pub const FEATURES: &str = "features.json";
pub const MODEL: &str = "model.json";
pub const BASELINE: &str = "baseline.csv";
pub const BANDS: &str = "bands.csv";
pub const RATIOS: &str = "ratios.csv";
pub const WEEKLY_TOTALS: &str = "weekly_totals.csv";

/// Age groups reported in aggregates, by lowest age-band index.
pub const AGE_GROUPS: [(&str, u8); 3] = [("all", 1), ("15+", 3), ("45+", 4)];

fn f(v: f64) -> String {
    format!("{v}")
}

fn sex_code(sex: Option<Sex>) -> &'static str {
    sex.map_or("", |s| s.code())
}

pub fn read_deaths(cfg: &PipelineConfig) -> Result<Vec<DeathObservation>, CliError> {
    let path = cfg.deaths_path();
    parse_deaths_csv(open(&path)?).invalid(&path.display().to_string())
}

fn write_deaths(path: &Path, obs: &[DeathObservation]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_deaths_csv(&mut buf, obs).invalid("deaths")?;
    write_bytes(path, &buf)
}

pub fn ingest(cfg: &PipelineConfig) -> Result<(), CliError> {
    let path = cfg.require(&cfg.inputs.deaths, "deaths")?;
    let obs = parse_deaths_csv(open(path)?).invalid(&path.display().to_string())?;
    let report = validate_series(&obs);
    let text = if report.is_empty() { "ok\n".to_string() } else { report.to_string() };
    write_bytes(&cfg.out_file("ingest_report.txt"), text.as_bytes())?;
    if !report.is_empty() {
        return Err(CliError::Validation(format!(
            "{} has gaps, duplicates or missing cells; see ingest_report.txt",
            path.display()
        )));
    }
    write_deaths(&cfg.out_file("deaths.csv"), &obs)
}

/// Week ends present in the deaths file, in order.
fn death_weeks(obs: &[DeathObservation]) -> (Vec<WeekId>, Vec<NaiveDate>) {
    let weeks: BTreeMap<NaiveDate, WeekId> = obs.iter().map(|o| (o.week_end_date, o.week_id())).collect();
    (weeks.values().copied().collect(), weeks.keys().copied().collect())
}

fn week_time(week: WeekId, end: NaiveDate) -> Result<WeekTime, CliError> {
    Ok(WeekTime {
        wk: week.week,
        wkeday: week_index(end).invalid("week index")?,
    })
}

struct Temperatures {
    weeks: Vec<WeekTemperature>,
    model: Option<ImputationModel>,
}

/// Weekly temperatures for every week end, imputing weeks the daily series
/// does not cover. `always_fit` fits the imputation models even when nothing
/// is missing.
fn temperatures(
    cfg: &PipelineConfig,
    weeks: &[WeekId],
    ends: &[NaiveDate],
    always_fit: bool,
) -> Result<Temperatures, CliError> {
    let min = cfg.require(&cfg.inputs.hadcet_min, "hadcet_min")?;
    let max = cfg.require(&cfg.inputs.hadcet_max, "hadcet_max")?;
    let series = parse_hadcet(open(min)?, open(max)?).invalid("temperature files")?;
    let mut rows = Vec::with_capacity(ends.len());
    for (&week, &end) in weeks.iter().zip(ends) {
        let temps = match weekly_aggregates(&series, &[(end - Duration::days(6), end)]) {
            Ok(v) => Some(v[0]),
            Err(WeatherError::MissingDay { .. }) => None,
            Err(e) => return Err(CliError::Validation(format!("temperatures: {e}"))),
        };
        rows.push((week_time(week, end)?, temps));
    }
    if !always_fit && rows.iter().all(|(_, t)| t.is_some_and(|t| t.tmdi.is_some())) {
        return Ok(Temperatures {
            weeks: rows.into_iter().map(|(_, t)| WeekTemperature::from(t.expect("checked"))).collect(),
            model: None,
        });
    }
    let history: Vec<_> = rows.iter().filter_map(|&(time, t)| t.map(|t| (time, t))).collect();
    let model = fit_imputers(&history).invalid("temperature imputation")?;
    let weeks = impute_series(&model, &rows).invalid("temperature imputation")?;
    Ok(Temperatures {
        weeks,
        model: Some(model),
    })
}

fn temperature_table(ends: &[NaiveDate], temps: &[WeekTemperature]) -> Table {
    let mut t = Table::new(&["week_end", "tmid", "tmdi", "tran", "imputed", "chain_depth"]);
    for (end, w) in ends.iter().zip(temps) {
        t.push(vec![
            end.to_string(),
            f(w.tmid),
            w.tmdi.map(f).unwrap_or_default(),
            f(w.tran),
            w.imputed.to_string(),
            w.chain_depth.to_string(),
        ]);
    }
    t
}

fn gazette(cfg: &PipelineConfig) -> Result<HolidayGazette, CliError> {
    match &cfg.inputs.gazette {
        Some(path) => HolidayGazette::from_csv(open(path)?).invalid(&path.display().to_string()),
        None => Ok(HolidayGazette::embedded()),
    }
}

fn weekly_air_quality(cfg: &PipelineConfig, ends: &[NaiveDate]) -> Result<BTreeMap<NaiveDate, WeeklyAqi>, CliError> {
    let path = cfg.require(&cfg.inputs.daqi, "daqi")?;
    let records = parse_daqi_csv(open(path)?).invalid(&path.display().to_string())?;
    let weekly = weekly_series(&national_series(&records), ends);
    let incomplete: Vec<String> = weekly
        .iter()
        .filter(|w| w.aqi.is_none())
        .map(|w| w.week_end.to_string())
        .collect();
    if !incomplete.is_empty() {
        return Err(CliError::Validation(format!(
            "air quality incomplete for {} weeks ending {}",
            incomplete.len(),
            incomplete.join(", ")
        )));
    }
    Ok(weekly.into_iter().filter_map(|w| w.aqi.map(|a| (w.week_end, a))).collect())
}

pub fn features(cfg: &PipelineConfig) -> Result<(), CliError> {
    let obs = read_deaths(cfg)?;
    let (weeks, ends) = death_weeks(&obs);
    let temps = temperatures(cfg, &weeks, &ends, false)?;
    temperature_table(&ends, &temps.weeks).write(&cfg.out_file("temperatures.csv"))?;
    let by_end: BTreeMap<NaiveDate, WeekTemperature> = ends.iter().copied().zip(temps.weeks).collect();
    let aqi = weekly_air_quality(cfg, &ends)?;
    let rows = build_feature_rows(&weeks, &ends, &gazette(cfg)?, &by_end, &aqi).invalid("features")?;
    write_json(&cfg.out_file(FEATURES), &rows)
}

pub fn impute(cfg: &PipelineConfig) -> Result<(), CliError> {
    let obs = read_deaths(cfg)?;
    let (weeks, ends) = death_weeks(&obs);
    let temps = temperatures(cfg, &weeks, &ends, true)?;
    temperature_table(&ends, &temps.weeks).write(&cfg.out_file("temperatures.csv"))?;
    let mut t = Table::new(&["target", "n", "rmse", "mae", "r_squared"]);
    for d in temps.model.iter().flat_map(|m| m.diagnostics()) {
        t.push(vec![d.target.to_string(), d.n.to_string(), f(d.rmse), f(d.mae), f(d.r_squared)]);
    }
    t.write(&cfg.out_file("imputation_diagnostics.csv"))
}

pub fn fit(cfg: &PipelineConfig) -> Result<(), CliError> {
    let obs = read_deaths(cfg)?;
    let feats: Vec<FeatureRow> = read_json(&cfg.out_file(FEATURES))?;
    let spec = cfg.spec();
    let data = assemble_design(&feats, &obs, &spec).invalid("design")?;
    let settings = FitSettings {
        lambda_method: cfg.lambda_method,
        ..FitSettings::default()
    };
    let fitted = fit_mortality_gam(&data, &spec, &settings).invalid("fit")?;
    write_json(&cfg.out_file(MODEL), &fitted)?;
    let g = &fitted.gam;
    let mut t = Table::new(&["key", "value"]);
    let rows = [
        ("rows", data.y.len().to_string()),
        ("columns", g.beta.len().to_string()),
        ("smooths", fitted.layout.smooths.len().to_string()),
        ("excluded_after_window", data.excluded_after_window.to_string()),
        ("edf_total", f(g.edf_total)),
        ("phi_ar1", g.phi_ar1.map(f).unwrap_or_default()),
        ("deviance", f(g.deviance)),
        ("criterion", g.criterion.map(f).unwrap_or_default()),
        ("iterations", g.iterations.to_string()),
        ("converged", g.converged.to_string()),
    ];
    for (k, v) in rows {
        t.push(vec![k.to_string(), v]);
    }
    t.write(&cfg.out_file("fit_summary.csv"))?;
    if !g.converged {
        return Err(CliError::NotConverged(format!("{} iterations", g.iterations)));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineRow {
    pub week_end: NaiveDate,
    pub year: i32,
    pub week: u32,
    pub age_band: String,
    pub sex: String,
    pub expected: f64,
    pub se_log: f64,
    pub imputed: bool,
}

pub fn baseline(cfg: &PipelineConfig) -> Result<(), CliError> {
    let fitted: FittedMortalityModel = read_json(&cfg.out_file(MODEL))?;
    let feats: Vec<FeatureRow> = read_json(&cfg.out_file(FEATURES))?;
    let cells = mortality::baseline(&fitted, &feats).invalid("baseline")?;
    let mut t = Table::new(&["week_end", "year", "week", "age_band", "sex", "expected", "se_log", "imputed"]);
    for c in cells {
        t.push(vec![
            c.week_end.to_string(),
            c.year.to_string(),
            c.week.to_string(),
            c.age.label().to_string(),
            c.sex.code().to_string(),
            f(c.expected),
            f(c.se_log),
            c.imputed.to_string(),
        ]);
    }
    t.write(&cfg.out_file(BASELINE))
}

pub fn read_baseline(path: &Path) -> Result<Vec<(BaselineRow, AgeBand, Sex)>, CliError> {
    read_csv::<BaselineRow>(path)?
        .into_iter()
        .map(|r| {
            let age = AgeBand::from_label(&r.age_band)
                .ok_or_else(|| CliError::Validation(format!("{}: bad age band {}", path.display(), r.age_band)))?;
            let sex = r.sex.parse::<Sex>().invalid(&path.display().to_string())?;
            Ok((r, age, sex))
        })
        .collect()
}

/// Band sidecar row: the full-precision inputs behind each excess record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandRow {
    pub year: i32,
    pub week: u32,
    pub age_band: String,
    pub sex: String,
    pub baseline: f64,
    pub se: f64,
    pub lo1: f64,
    pub hi1: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub observed: u32,
    pub excess: f64,
}

fn band_row(key: CellKey, band: &BaselineBand, observed: u32, excess: f64) -> BandRow {
    BandRow {
        year: key.week.year,
        week: key.week.week,
        age_band: key.age.label().to_string(),
        sex: sex_code(key.sex).to_string(),
        baseline: band.baseline,
        se: band.se,
        lo1: band.lo1,
        hi1: band.hi1,
        lo95: band.lo95,
        hi95: band.hi95,
        observed,
        excess,
    }
}

fn write_band_rows(path: &Path, rows: &[BandRow]) -> Result<(), CliError> {
    let mut t = Table::new(&[
        "year", "week", "age_band", "sex", "baseline", "se", "lo1", "hi1", "lo95", "hi95", "observed", "excess",
    ]);
    for r in rows {
        t.push(vec![
            r.year.to_string(),
            r.week.to_string(),
            r.age_band.clone(),
            r.sex.clone(),
            f(r.baseline),
            f(r.se),
            f(r.lo1),
            f(r.hi1),
            f(r.lo95),
            f(r.hi95),
            r.observed.to_string(),
            f(r.excess),
        ]);
    }
    t.write(path)
}

pub fn excess(cfg: &PipelineConfig) -> Result<(), CliError> {
    let (records, band_rows) = match &cfg.inputs.table {
        Some(path) => table_records(path, cfg.target_year)?,
        None => model_records(cfg)?,
    };
    let [first, last] = cfg.target_weeks;
    let in_range = |r: &&ExcessRecord| r.key.week.year == cfg.target_year && (first..=last).contains(&r.key.week.week);
    let records: Vec<ExcessRecord> = records.iter().filter(in_range).copied().collect();
    if records.is_empty() {
        return Err(CliError::Validation(format!(
            "no cells in {} weeks {first}-{last}",
            cfg.target_year
        )));
    }
    write_band_rows(&cfg.out_file(BANDS), &band_rows)?;
    let mut buf = Vec::new();
    write_excess_table(&mut buf, &records).invalid("excess table")?;
    write_bytes(&cfg.out_file("excess_table.csv"), &buf)?;
    aggregates(cfg, &records)
}

/// Records from a table of published baselines. Printed excess values, where
/// present, are used as given so aggregates match the source's own arithmetic.
fn table_records(path: &Path, year: i32) -> Result<(Vec<ExcessRecord>, Vec<BandRow>), CliError> {
    let rows = read_table(open(path)?, year).invalid(&path.display().to_string())?;
    let mut records = Vec::with_capacity(rows.len());
    let mut band_rows = Vec::with_capacity(rows.len());
    for r in &rows {
        let rec = r.printed_record().unwrap_or_else(|| r.record());
        let band = bands(r.baseline, r.se / r.baseline).invalid(&r.key.to_string())?;
        band_rows.push(band_row(r.key, &band, r.observed, rec.excess));
        records.push(rec);
    }
    Ok((records, band_rows))
}

fn model_records(cfg: &PipelineConfig) -> Result<(Vec<ExcessRecord>, Vec<BandRow>), CliError> {
    let base = read_baseline(&cfg.out_file(BASELINE))?;
    let obs = read_deaths(cfg)?;
    let observed: BTreeMap<(NaiveDate, AgeBand, Sex), u32> =
        obs.iter().map(|o| ((o.week_end_date, o.age, o.sex), o.count)).collect();
    let count = |r: &BaselineRow, age, sex| observed.get(&(r.week_end, age, sex)).copied();

    let history: Vec<HistoryCell> = base
        .iter()
        .filter(|(r, _, _)| SE_YEARS.contains(&r.year))
        .filter_map(|(r, age, sex)| {
            count(r, *age, *sex).map(|o| HistoryCell {
                week: WeekId { year: r.year, week: r.week },
                age: *age,
                sex: Some(*sex),
                baseline: r.expected,
                observed: o,
            })
        })
        .collect();
    let se = se_table(&history, cfg.by_sex, SE_YEARS).invalid("standard errors")?;
    let mut t = Table::new(&["age_band", "sex", "wk", "rms_log_error", "years", "floored"]);
    for (k, c) in &se.cells {
        t.push(vec![
            k.age.label().to_string(),
            sex_code(k.sex).to_string(),
            k.wk.to_string(),
            f(c.rms_log_error),
            c.years.to_string(),
            c.floored.to_string(),
        ]);
    }
    t.write(&cfg.out_file("se_table.csv"))?;

    let mut t = Table::new(&["year", "week", "age_band", "sex", "ratio"]);
    for r in ratio_diagnostics(&history).invalid("ratios")? {
        t.push(vec![
            r.week.year.to_string(),
            r.week.week.to_string(),
            r.age.label().to_string(),
            sex_code(r.sex).to_string(),
            f(r.ratio),
        ]);
    }
    t.write(&cfg.out_file(RATIOS))?;

    let mut cells: BTreeMap<CellKey, (f64, u32)> = BTreeMap::new();
    for (r, age, sex) in base.iter().filter(|(r, _, _)| r.year == cfg.target_year) {
        let Some(o) = count(r, *age, *sex) else { continue };
        let key = CellKey {
            week: WeekId { year: r.year, week: r.week },
            age: *age,
            sex: cfg.by_sex.then_some(*sex),
        };
        let e = cells.entry(key).or_default();
        e.0 += r.expected;
        e.1 += o;
    }
    let mut band_map = BTreeMap::new();
    let mut observed_cells = Vec::with_capacity(cells.len());
    for (key, (b, o)) in &cells {
        let rms = se.get(key.age, key.sex, key.week.week).invalid(&key.to_string())?;
        band_map.insert(*key, bands(*b, rms).invalid(&key.to_string())?);
        observed_cells.push((*key, *o));
    }
    let records = excess_table(&observed_cells, &band_map).invalid("excess")?;
    let band_rows = records
        .iter()
        .map(|r| band_row(r.key, &band_map[&r.key], r.observed, r.excess))
        .collect();
    Ok((records, band_rows))
}

fn aggregates(cfg: &PipelineConfig, records: &[ExcessRecord]) -> Result<(), CliError> {
    let group = |min: u8| -> Vec<ExcessRecord> { records.iter().filter(|r| r.key.age.index() >= min).copied().collect() };
    let mut weekly = Table::new(&["group", "year", "week", "baseline", "observed", "excess", "se"]);
    let mut monthly = Table::new(&["group", "year", "month", "first_day", "last_day", "excess", "se"]);
    let mut cumulative = Table::new(&["group", "first_week", "last_week", "excess", "se"]);
    let mut per_group = BTreeMap::new();
    for (name, min) in AGE_GROUPS {
        let recs = group(min);
        if recs.is_empty() {
            continue;
        }
        let totals = aggregate(&recs, |r| r.key.week).invalid("weekly totals")?;
        for (w, t) in &totals {
            weekly.push(vec![
                name.to_string(),
                w.year.to_string(),
                w.week.to_string(),
                round_count(t.baseline).to_string(),
                t.observed.to_string(),
                round_count(t.excess).to_string(),
                round_count(t.se).to_string(),
            ]);
        }
        for m in prorate_months(&recs).invalid("monthly totals")? {
            monthly.push(vec![
                name.to_string(),
                m.year.to_string(),
                m.month.to_string(),
                m.first_day.to_string(),
                m.last_day.to_string(),
                round_count(m.excess).to_string(),
                round_count(m.se).to_string(),
            ]);
        }
        let all = aggregate(&recs, |_| ()).invalid("cumulative totals")?[&()];
        let (lo, hi) = (totals.keys().next().expect("non-empty"), totals.keys().last().expect("non-empty"));
        cumulative.push(vec![
            name.to_string(),
            lo.week.to_string(),
            hi.week.to_string(),
            round_count(all.excess).to_string(),
            round_count(all.se).to_string(),
        ]);
        per_group.insert(name, totals);
    }
    weekly.write(&cfg.out_file(WEEKLY_TOTALS))?;
    monthly.write(&cfg.out_file("monthly.csv"))?;
    cumulative.write(&cfg.out_file("cumulative.csv"))?;

    let older = per_group.get("45+");
    if let (Some(path), Some(older)) = (&cfg.inputs.ons_c19, older) {
        let certified = read_certified(open(path)?, cfg.target_year).invalid(&path.display().to_string())?;
        let mut by_week: BTreeMap<WeekId, u32> = BTreeMap::new();
        for ((w, age), c) in certified {
            if age.index() >= 4 && older.contains_key(&w) {
                *by_week.entry(w).or_default() += c;
            }
        }
        let excess: BTreeMap<WeekId, f64> = older.iter().map(|(w, t)| (*w, t.excess)).collect();
        let mut t = Table::new(&["week", "certified", "excess", "percent"]);
        for r in undercount(&excess, &by_week).invalid("undercount")? {
            t.push(vec![
                r.week.week.to_string(),
                r.certified.to_string(),
                round_count(r.excess).to_string(),
                r.percent().map(|p| format!("{:.1}", round_percent(p))).unwrap_or_default(),
            ]);
        }
        t.write(&cfg.out_file("undercount.csv"))?;
    }

    if let (Some(path), Some(older), Some(adults)) = (&cfg.inputs.dhsc, older, per_group.get("15+")) {
        let reported = read_reported(open(path)?).invalid(&path.display().to_string())?;
        let (last_week, last) = adults.iter().last().expect("non-empty");
        let end = last_week.week_end();
        let in_week = reported_between(&reported, end - Duration::days(6)..=end) as f64;
        let tail_end = reported.keys().last().copied().unwrap_or(end).max(end);
        let tail = reported_between(&reported, end + Duration::days(1)..=tail_end) as f64;
        let cumulative: f64 = older.values().map(|t| t.excess).sum();
        let e = extrapolate(last.excess, in_week, tail, cumulative).invalid("extrapolation")?;
        let mut t = Table::new(&[
            "reference_excess",
            "reference_reported",
            "reported_tail",
            "ratio",
            "projected_tail",
            "cumulative_excess",
            "projected_total",
        ]);
        t.push(vec![
            round_count(last.excess).to_string(),
            (in_week as u64).to_string(),
            (tail as u64).to_string(),
            format!("{:.2}", e.ratio),
            round_count(e.tail).to_string(),
            round_count(cumulative).to_string(),
            round_count(e.total).to_string(),
        ]);
        t.write(&cfg.out_file("extrapolation.csv"))?;
    }
    Ok(())
}

pub fn simulate(cfg: &PipelineConfig) -> Result<(), CliError> {
    let s = &cfg.simulate;
    let gazette = gazette(cfg)?;
    let feats = synthetic_features(s.start_year, s.weeks, &gazette, cfg.seed);
    let spec = cfg.spec();
    let layout = build_layout(&spec, &all_cells(&feats)).invalid("layout")?;
    let mut truth = TrueModel::default();
    if let Some(m) = s.min_mean {
        truth = truth.with_min_mean(m);
    }
    let beta = truth.coefficients(&layout, &feats).invalid("true model")?;
    let deaths = simulate_observations(&layout, &beta, &feats, s.phi, cfg.seed).invalid("simulation")?;
    write_deaths(&cfg.out_file("deaths.csv"), &deaths)?;
    write_json(&cfg.out_file(FEATURES), &feats)?;
    write_json(&cfg.out_file("truth.json"), &truth)?;
    let mut t = Table::new(&["column", "value"]);
    for (name, v) in layout.columns.iter().zip(beta.iter()) {
        t.push(vec![name.clone(), f(*v)]);
    }
    t.write(&cfg.out_file("truth_coefficients.csv"))
}
