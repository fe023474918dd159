use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use regdeaths::gam::LambdaMethod;
use regdeaths::mortality::{default_window_end, MortalityModelSpec};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub deaths: Option<PathBuf>,
    pub hadcet_min: Option<PathBuf>,
    pub hadcet_max: Option<PathBuf>,
    pub daqi: Option<PathBuf>,
    pub ons_c19: Option<PathBuf>,
    pub dhsc: Option<PathBuf>,
    pub gazette: Option<PathBuf>,
    /// Precomputed baselines in the published table layout.
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub start_year: i32,
    pub weeks: usize,
    pub phi: f64,
    /// Floor for the expected weekly count of every cell.
    pub min_mean: Option<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            start_year: 2010,
            weeks: 540,
            phi: 0.3,
            min_mean: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub inputs: Inputs,
    pub window_end: NaiveDate,
    pub target_year: i32,
    pub target_weeks: [u32; 2],
    pub lambda_method: LambdaMethod,
    pub by_sex: bool,
    pub out: PathBuf,
    pub seed: u64,
    pub model: Option<MortalityModelSpec>,
    pub simulate: SimulateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Inputs::default(),
            window_end: default_window_end(),
            target_year: 2020,
            target_weeks: [12, 21],
            lambda_method: LambdaMethod::Gcv,
            by_sex: false,
            out: PathBuf::from("out"),
            seed: 0,
            model: None,
            simulate: SimulateConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Read a TOML config. Relative paths are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut cfg.inputs;
        for p in [
            &mut i.deaths,
            &mut i.hadcet_min,
            &mut i.hadcet_max,
            &mut i.daqi,
            &mut i.ons_c19,
            &mut i.dhsc,
            &mut i.gazette,
            &mut i.table,
        ]
        .into_iter()
        .flatten()
        {
            rebase(p);
        }
        rebase(&mut cfg.out);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let [first, last] = self.target_weeks;
        if first == 0 || last > 53 || first > last {
            return Err(CliError::Validation(format!("invalid target weeks {first}..{last}")));
        }
        if let Some(spec) = &self.model {
            spec.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        }
        if !(self.simulate.phi.abs() < 1.0) {
            return Err(CliError::Validation(format!("simulate.phi {} outside (-1, 1)", self.simulate.phi)));
        }
        Ok(())
    }

    pub fn spec(&self) -> MortalityModelSpec {
        let mut spec = self.model.clone().unwrap_or_else(MortalityModelSpec::main);
        spec.window_end = self.window_end;
        spec
    }

    pub fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// The configured deaths file, or the one written by `ingest`/`simulate`.
    pub fn deaths_path(&self) -> PathBuf {
        self.inputs.deaths.clone().unwrap_or_else(|| self.out_file("deaths.csv"))
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
        path.as_deref()
            .ok_or_else(|| CliError::Validation(format!("config key inputs.{key} is required")))
    }
}
