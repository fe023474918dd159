//! Report tables, charts with data sidecars, and the hashed manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use regdeaths::deaths::{AgeBand, Sex};
use regdeaths::excess::{round_count, round_percent};
use regdeaths::features::FeatureRow;
use regdeaths::mortality::{FittedMortalityModel, GroupKey, Input};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{CliError, Context};
use crate::io::{exists, read_csv, read_json, write_bytes, Table};
use crate::stages::{read_baseline, read_deaths, BandRow, BANDS, BASELINE, FEATURES, MODEL, RATIOS, WEEKLY_TOTALS};
use crate::svg::{Band, Chart, Series, Style};

pub const MANIFEST: &str = "manifest.csv";

fn f(v: f64) -> String {
    format!("{v}")
}

fn optional<T>(path: &Path, load: impl FnOnce(&Path) -> Result<T, CliError>) -> Result<Option<T>, CliError> {
    if exists(path) {
        load(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Fractional calendar year, for time axes.
fn year_fraction(d: NaiveDate) -> f64 {
    d.year() as f64 + (d.ordinal() as f64 - 1.0) / 365.25
}

struct Figure<'a> {
    out: &'a Path,
    name: &'a str,
}

impl Figure<'_> {
    /// Write the sidecar always and the chart only when it has data.
    fn write(&self, chart: Option<Chart>, sidecar: &Table) -> Result<(), CliError> {
        sidecar.write(&self.out.join(format!("{}.csv", self.name)))?;
        if let Some(c) = chart.filter(|_| !sidecar.is_empty()) {
            write_bytes(&self.out.join(format!("{}.svg", self.name)), c.render().as_bytes())?;
        }
        Ok(())
    }
}

pub fn report(cfg: &PipelineConfig) -> Result<(), CliError> {
    let out = cfg.out.as_path();
    let model: Option<FittedMortalityModel> = optional(&cfg.out_file(MODEL), read_json)?;
    let features: Option<Vec<FeatureRow>> = optional(&cfg.out_file(FEATURES), read_json)?;
    let deaths = if exists(&cfg.deaths_path()) { Some(read_deaths(cfg)?) } else { None };
    let baseline = optional(&cfg.out_file(BASELINE), read_baseline)?;
    let bands: Vec<BandRow> = optional(&cfg.out_file(BANDS), read_csv)?.unwrap_or_default();

    coefficient_table(model.as_ref()).write(&out.join("table2_coefficients.csv"))?;
    let [first, last] = cfg.target_weeks;
    let in_target: Vec<BandRow> = bands
        .iter()
        .filter(|b| b.year == cfg.target_year && (first..=last).contains(&b.week))
        .cloned()
        .collect();
    let (by_age, by_age_sex) = excess_tables(&in_target)?;
    by_age.write(&out.join("table3_excess_by_age.csv"))?;
    by_age_sex.write(&out.join("table4_excess_by_age_sex.csv"))?;

    let counts: BTreeMap<(NaiveDate, AgeBand), u32> = deaths.iter().flatten().fold(BTreeMap::new(), |mut m, o| {
        *m.entry((o.week_end_date, o.age)).or_default() += o.count;
        m
    });
    weekly_deaths(out, &counts)?;
    term_figures(out, model.as_ref(), features.as_deref())?;
    let expected: BTreeMap<(NaiveDate, AgeBand), f64> =
        baseline.iter().flatten().fold(BTreeMap::new(), |mut m, (r, age, _)| {
            *m.entry((r.week_end, *age)).or_default() += r.expected;
            m
        });
    fit_figures(out, &counts, &expected)?;
    ratio_figure(cfg)?;
    band_figure(out, &bands)?;
    excess_figure(cfg)?;
    manifest(out)
}

fn coefficient_table(model: Option<&FittedMortalityModel>) -> Table {
    let mut t = Table::new(&["parameter", "log_estimate", "log_se", "estimate", "se", "scale"]);
    for r in model.map(|m| m.coefficient_table()).unwrap_or_default() {
        let (est, se, scale) = if r.is_multiplier {
            (
                format!("{:.1}", round_percent(100.0 * r.estimate)),
                format!("{:.1}", round_percent(100.0 * r.se)),
                "percent",
            )
        } else {
            (round_count(r.estimate).to_string(), round_count(r.se).to_string(), "count")
        };
        t.push(vec![r.label, format!("{:.3}", r.log_estimate), format!("{:.3}", r.log_se), est, se, scale.into()]);
    }
    t
}

fn excess_tables(bands: &[BandRow]) -> Result<(Table, Table), CliError> {
    let mut by_age = Table::new(&["week", "age_band", "baseline", "se", "observed", "excess", "excess_se"]);
    let mut by_age_sex = Table::new(&["week", "age_band", "sex", "baseline", "se", "observed", "excess", "excess_se"]);
    // (week, age) -> (baseline, se, observed, excess); SEs add directly
    let mut pooled: BTreeMap<(u32, AgeBand), (f64, f64, u32, f64)> = BTreeMap::new();
    for b in bands {
        let age = AgeBand::from_label(&b.age_band)
            .ok_or_else(|| CliError::Validation(format!("{BANDS}: bad age band {}", b.age_band)))?;
        if !b.sex.is_empty() {
            let sex: Sex = b.sex.parse().invalid(BANDS)?;
            let se = round_count(b.se).to_string();
            by_age_sex.push(vec![
                b.week.to_string(),
                b.age_band.clone(),
                sex.code().to_string(),
                round_count(b.baseline).to_string(),
                se.clone(),
                b.observed.to_string(),
                round_count(b.excess).to_string(),
                se,
            ]);
        }
        if age.index() >= 3 {
            let e = pooled.entry((b.week, age)).or_default();
            e.0 += b.baseline;
            e.1 += b.se;
            e.2 += b.observed;
            e.3 += b.excess;
        }
    }
    for ((week, age), (base, se, obs, excess)) in pooled {
        let se = round_count(se).to_string();
        by_age.push(vec![
            week.to_string(),
            age.label().to_string(),
            round_count(base).to_string(),
            se.clone(),
            obs.to_string(),
            round_count(excess).to_string(),
            se,
        ]);
    }
    Ok((by_age, by_age_sex))
}

fn weekly_deaths(out: &Path, counts: &BTreeMap<(NaiveDate, AgeBand), u32>) -> Result<(), CliError> {
    let mut side = Table::new(&["week_end", "age_band", "deaths"]);
    let mut series: BTreeMap<AgeBand, Vec<(f64, f64)>> = BTreeMap::new();
    for (&(d, age), &c) in counts {
        side.push(vec![d.to_string(), age.label().to_string(), c.to_string()]);
        series.entry(age).or_default().push((year_fraction(d), c as f64));
    }
    let chart = Chart {
        title: "Weekly registered deaths by age band".into(),
        x_label: "year".into(),
        y_label: "deaths".into(),
        series: series
            .into_iter()
            .map(|(age, points)| Series {
                label: age.label().into(),
                color: age.ordinal(),
                style: Style::Line,
                points,
            })
            .collect(),
        bands: Vec::new(),
    };
    Figure { out, name: "fig01_weekly_deaths" }.write(Some(chart), &side)
}

fn group_color(g: GroupKey) -> usize {
    match (g.sex, g.age) {
        (Some(Sex::Female), _) => 0,
        (Some(Sex::Male), _) => 1,
        (None, Some(a)) => 2 + a.ordinal(),
        (None, None) => 2,
    }
}

/// Fitted terms of one input on a 100-point grid, with +/-2 SE bands.
fn term_figures(out: &Path, model: Option<&FittedMortalityModel>, features: Option<&[FeatureRow]>) -> Result<(), CliError> {
    let specs = [
        (Input::Wk, "fig02_wk", "week of year"),
        (Input::Wkeday, "fig03_wkeday", "days since 1 Jan 2010"),
        (Input::Tmid, "fig04_tmid", "TMID (C)"),
        (Input::Tmdi, "fig04_tmdi", "TMDI (C)"),
        (Input::Tran, "fig04_tran", "TRAN (C)"),
        (Input::Aqimin, "fig05_aqimin", "AQIMIN"),
    ];
    for (input, name, x_label) in specs {
        let mut side = Table::new(&["group", "x", "fit", "se"]);
        let mut chart = Chart {
            title: format!("{input} effect by group (log scale, +/-2 SE)"),
            x_label: x_label.into(),
            y_label: "log relative deaths".into(),
            ..Chart::default()
        };
        if let Some(m) = model {
            let mut groups: Vec<GroupKey> = m.layout.smooths.iter().filter(|s| s.input == input).map(|s| s.group).collect();
            groups.extend(m.layout.linear.iter().filter(|l| l.input == input).map(|l| l.group));
            for g in groups {
                let range = m.term_range(input, g).or_else(|| {
                    let vals: Vec<f64> = features?.iter().map(|r| input.value(r)).collect();
                    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo <= hi).then_some((lo, hi))
                });
                let Some((lo, hi)) = range else { continue };
                let xs: Vec<f64> = (0..100).map(|i| lo + (hi - lo) * i as f64 / 99.0).collect();
                let c = m.term_curve(input, g, &xs).invalid("term curve")?;
                for i in 0..xs.len() {
                    side.push(vec![g.to_string(), f(xs[i]), f(c.fit[i]), f(c.se[i])]);
                }
                let color = group_color(g);
                chart.bands.push(Band {
                    color,
                    opacity: 0.12,
                    points: (0..xs.len()).map(|i| (xs[i], c.fit[i] - 2.0 * c.se[i], c.fit[i] + 2.0 * c.se[i])).collect(),
                });
                chart.series.push(Series {
                    label: g.sex.map_or("shared", |s| s.code()).into(),
                    color,
                    style: Style::Line,
                    points: xs.iter().copied().zip(c.fit.iter().copied()).collect(),
                });
            }
        }
        Figure { out, name }.write(Some(chart), &side)?;
    }
    Ok(())
}

fn fit_figures(
    out: &Path,
    counts: &BTreeMap<(NaiveDate, AgeBand), u32>,
    expected: &BTreeMap<(NaiveDate, AgeBand), f64>,
) -> Result<(), CliError> {
    let recent = NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date");
    for (name, title, keep) in [
        ("fig06_fits", "Registered deaths with fitted values", None),
        ("fig07_recent_fits", "Recent registered deaths with fitted values, ages 45+", Some(recent)),
    ] {
        let mut side = Table::new(&["week_end", "age_band", "observed", "expected"]);
        let mut chart = Chart {
            title: title.into(),
            x_label: "year".into(),
            y_label: "deaths".into(),
            ..Chart::default()
        };
        let mut obs_pts: BTreeMap<AgeBand, Vec<(f64, f64)>> = BTreeMap::new();
        let mut fit_pts: BTreeMap<AgeBand, Vec<(f64, f64)>> = BTreeMap::new();
        for (&(d, age), &e) in expected {
            if keep.is_some_and(|k| d < k || age.index() < 4) {
                continue;
            }
            let Some(&o) = counts.get(&(d, age)) else { continue };
            side.push(vec![d.to_string(), age.label().into(), o.to_string(), f(e)]);
            obs_pts.entry(age).or_default().push((year_fraction(d), o as f64));
            fit_pts.entry(age).or_default().push((year_fraction(d), e));
        }
        for (age, points) in obs_pts {
            chart.series.push(Series { label: String::new(), color: age.ordinal(), style: Style::Points, points });
        }
        for (age, points) in fit_pts {
            chart.series.push(Series { label: age.label().into(), color: age.ordinal(), style: Style::Line, points });
        }
        Figure { out, name }.write(Some(chart), &side)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RatioRow {
    year: i32,
    week: u32,
    age_band: String,
    sex: String,
    ratio: f64,
}

fn ratio_figure(cfg: &PipelineConfig) -> Result<(), CliError> {
    let rows: Vec<RatioRow> = optional(&cfg.out_file(RATIOS), read_csv)?.unwrap_or_default();
    let mut side = Table::new(&["year", "week", "age_band", "sex", "ratio"]);
    let mut pts: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &rows {
        side.push(vec![r.year.to_string(), r.week.to_string(), r.age_band.clone(), r.sex.clone(), f(r.ratio)]);
        let label = if r.sex.is_empty() { "all".to_string() } else { r.sex.clone() };
        pts.entry(label).or_default().push((r.year as f64 + (r.week as f64 - 1.0) / 53.0, r.ratio));
    }
    let chart = Chart {
        title: "Observed / expected weekly deaths".into(),
        x_label: "year".into(),
        y_label: "ratio".into(),
        series: pts
            .into_iter()
            .enumerate()
            .map(|(i, (label, points))| Series { label, color: i, style: Style::Points, points })
            .collect(),
        bands: Vec::new(),
    };
    Figure { out: &cfg.out, name: "fig08_ratios" }.write(Some(chart), &side)
}

/// Baselines with +/-1 SE and +/-1.96 SE bands against observed counts, ages 45+.
fn band_figure(out: &Path, bands: &[BandRow]) -> Result<(), CliError> {
    let mut side = Table::new(&[
        "year", "week", "age_band", "sex", "baseline", "se", "lo1", "hi1", "lo95", "hi95", "observed",
    ]);
    let mut groups: BTreeMap<(AgeBand, String), Vec<&BandRow>> = BTreeMap::new();
    for b in bands {
        let Some(age) = AgeBand::from_label(&b.age_band) else { continue };
        if age.index() < 4 {
            continue;
        }
        side.push(vec![
            b.year.to_string(),
            b.week.to_string(),
            b.age_band.clone(),
            b.sex.clone(),
            f(b.baseline),
            f(b.se),
            f(b.lo1),
            f(b.hi1),
            f(b.lo95),
            f(b.hi95),
            b.observed.to_string(),
        ]);
        groups.entry((age, b.sex.clone())).or_default().push(b);
    }
    let mut chart = Chart {
        title: "Registered deaths against baselines (+/-1 SE and +/-1.96 SE)".into(),
        x_label: "week".into(),
        y_label: "deaths".into(),
        ..Chart::default()
    };
    for ((age, sex), rows) in groups {
        let color = age.ordinal();
        let x = |b: &BandRow| b.week as f64;
        chart.bands.push(Band { color, opacity: 0.12, points: rows.iter().map(|b| (x(b), b.lo95, b.hi95)).collect() });
        chart.bands.push(Band { color, opacity: 0.25, points: rows.iter().map(|b| (x(b), b.lo1, b.hi1)).collect() });
        let label = if sex.is_empty() { age.label().to_string() } else { format!("{sex} {}", age.label()) };
        chart.series.push(Series {
            label,
            color,
            style: Style::Line,
            points: rows.iter().map(|b| (x(b), b.baseline)).collect(),
        });
        chart.series.push(Series {
            label: String::new(),
            color,
            style: Style::Points,
            points: rows.iter().map(|b| (x(b), b.observed as f64)).collect(),
        });
    }
    Figure { out, name: "fig09_bands" }.write(Some(chart), &side)
}

#[derive(Debug, Deserialize)]
struct WeeklyTotal {
    group: String,
    year: i32,
    week: u32,
    baseline: f64,
    observed: f64,
    excess: f64,
    se: f64,
}

fn excess_figure(cfg: &PipelineConfig) -> Result<(), CliError> {
    let rows: Vec<WeeklyTotal> = optional(&cfg.out_file(WEEKLY_TOTALS), read_csv)?.unwrap_or_default();
    let mut side = Table::new(&["year", "week", "baseline", "observed", "excess", "se"]);
    let rows: Vec<&WeeklyTotal> = rows.iter().filter(|r| r.group == "45+").collect();
    for r in &rows {
        side.push(vec![r.year.to_string(), r.week.to_string(), f(r.baseline), f(r.observed), f(r.excess), f(r.se)]);
    }
    let x = |r: &WeeklyTotal| r.week as f64;
    let chart = Chart {
        title: "Weekly deaths and baseline, ages 45+".into(),
        x_label: "week".into(),
        y_label: "deaths".into(),
        series: vec![
            Series {
                label: "baseline".into(),
                color: 2,
                style: Style::Line,
                points: rows.iter().map(|r| (x(r), r.baseline)).collect(),
            },
            Series {
                label: "observed".into(),
                color: 0,
                style: Style::Dashed,
                points: rows.iter().map(|r| (x(r), r.observed)).collect(),
            },
        ],
        bands: vec![
            Band {
                color: 2,
                opacity: 0.15,
                points: rows.iter().map(|r| (x(r), r.baseline - 1.96 * r.se, r.baseline + 1.96 * r.se)).collect(),
            },
            Band {
                color: 2,
                opacity: 0.3,
                points: rows.iter().map(|r| (x(r), r.baseline - r.se, r.baseline + r.se)).collect(),
            },
        ],
    };
    Figure { out: &cfg.out, name: "fig10_excess" }.write(Some(chart), &side)
}

/// `manifest.csv` listing every other file in the output directory.
fn manifest(out: &Path) -> Result<(), CliError> {
    let mut names = Vec::new();
    for entry in fs::read_dir(out).map_err(|e| CliError::io(out, e))? {
        let entry = entry.map_err(|e| CliError::io(out, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name != MANIFEST && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    let mut t = Table::new(&["file", "bytes", "sha256"]);
    for name in names {
        let path = out.join(&name);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        let hash: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        t.push(vec![name, bytes.len().to_string(), hash]);
    }
    t.write(&out.join(MANIFEST))
}
