use std::path::{Path, PathBuf};

use fcoint::regress::FitConfig;
use fcoint::simlab::{Design, EstimatorSettings, Metric, TableSpec};
use fcoint::vrtest::VRConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every setting of every command as one flat table. Keys not used by the
/// running command are ignored but still echoed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,

    // inputs
    pub panel: String,
    pub x: String,
    pub y: String,
    pub zeta: String,
    pub phi: String,
    pub fit_dir: String,
    pub y_ref: String,

    // density ingestion
    pub support_mass: f64,
    pub density_grid_n: usize,
    pub floor_eps: f64,

    // estimation
    pub kappa: usize,
    pub d_n: usize,
    pub a1: f64,
    pub a2_exp: f64,
    pub centered: bool,
    pub level: f64,
    pub breakpoints: Vec<f64>,

    // variance-ratio test
    pub ell: usize,
    pub d_max: usize,
    pub vr_level: f64,
    pub null_draws: usize,
    pub bm_steps: usize,
    pub cache_dir: String,

    // simulation
    pub designs: Vec<String>,
    pub scales: Vec<f64>,
    pub ts: Vec<usize>,
    pub kappas: Vec<usize>,
    pub metrics: Vec<String>,
    pub reps: usize,
    pub m: usize,
    pub big_m: usize,
    pub j_trunc: usize,
    pub calib_reps: usize,
    pub burn_in: usize,
    pub sim_grid_n: usize,

    // shock analysis
    pub qs: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let vr = VRConfig::default();
        let sim = TableSpec::default();
        let est = EstimatorSettings::default();
        RunConfig {
            master_seed: vr.seed,
            panel: String::new(),
            x: String::new(),
            y: String::new(),
            zeta: String::new(),
            phi: String::new(),
            fit_dir: String::new(),
            y_ref: String::new(),
            support_mass: 0.99,
            density_grid_n: 161,
            floor_eps: fcoint::densities::DEFAULT_FLOOR_EPS,
            kappa: 1,
            d_n: 2,
            a1: est.a1,
            a2_exp: est.a2_exp,
            centered: true,
            level: est.level,
            breakpoints: Vec::new(),
            ell: vr.ell,
            d_max: vr.d_max,
            vr_level: vr.level,
            null_draws: vr.null_draws,
            bm_steps: vr.bm_steps,
            cache_dir: String::new(),
            designs: sim.designs.iter().map(|d| d.to_string()).collect(),
            scales: sim.scales.clone(),
            ts: sim.ts.clone(),
            kappas: sim.kappas.clone(),
            metrics: sim.metrics.iter().map(|m| m.to_string()).collect(),
            reps: sim.reps,
            m: sim.m,
            big_m: sim.big_m,
            j_trunc: sim.j_trunc,
            calib_reps: sim.calib_reps,
            burn_in: sim.burn_in,
            sim_grid_n: sim.grid_n,
            qs: vec![0.0, 0.75, 1.5],
        }
    }
}

fn parse_override(s: &str) -> Result<(String, toml::Value), CliError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {s:?} is not of the form key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

impl RunConfig {
    /// Defaults, then the config file, then `key=value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = parse_override(o)?;
            table.insert(k, v);
        }
        RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn input(&self, key: &str, value: &str) -> Result<PathBuf, CliError> {
        if value.is_empty() {
            return Err(CliError::Config(format!("missing input path `{key}`")));
        }
        let p = PathBuf::from(value);
        if !p.exists() {
            return Err(CliError::Config(format!("{key} = {value:?} does not exist")));
        }
        Ok(p)
    }

    pub fn optional_input(&self, key: &str, value: &str) -> Result<Option<PathBuf>, CliError> {
        if value.is_empty() {
            Ok(None)
        } else {
            self.input(key, value).map(Some)
        }
    }

    pub fn fit_config(&self) -> Result<FitConfig, CliError> {
        let cfg = FitConfig {
            kappa: self.kappa,
            d_n: self.d_n,
            a1: self.a1,
            a2_exp: self.a2_exp,
            centered: self.centered,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        Ok(cfg)
    }

    pub fn vr_config(&self) -> Result<VRConfig, CliError> {
        let cfg = VRConfig {
            ell: self.ell,
            d_max: self.d_max,
            level: self.vr_level,
            centered: self.centered,
            null_draws: self.null_draws,
            bm_steps: self.bm_steps,
            seed: self.master_seed,
            cache_dir: (!self.cache_dir.is_empty()).then(|| PathBuf::from(&self.cache_dir)),
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn table_spec(&self) -> Result<TableSpec, CliError> {
        let designs = self
            .designs
            .iter()
            .map(|d| d.parse::<Design>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let metrics = self
            .metrics
            .iter()
            .map(|m| m.parse::<Metric>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let spec = TableSpec {
            d_n: self.d_n,
            designs,
            scales: self.scales.clone(),
            ts: self.ts.clone(),
            kappas: self.kappas.clone(),
            metrics,
            reps: self.reps,
            seed: self.master_seed,
            m: self.m,
            big_m: self.big_m,
            j_trunc: self.j_trunc,
            calib_reps: self.calib_reps,
            burn_in: self.burn_in,
            grid_n: self.sim_grid_n,
            estimator: EstimatorSettings {
                a1: self.a1,
                a2_exp: self.a2_exp,
                level: self.level,
                centered: self.centered,
                rate_diagnostics: false,
            },
        };
        if spec.reps < 2 {
            return Err(CliError::Config("reps must be at least 2".into()));
        }
        if spec.kappas.is_empty() || spec.designs.is_empty() || spec.ts.is_empty() || spec.scales.is_empty() {
            return Err(CliError::Config("designs, scales, ts and kappas must be non-empty".into()));
        }
        if let Some(s) = spec.scales.iter().find(|s| !(0.0..=100.0).contains(*s)) {
            return Err(CliError::Config(format!("scale {s} outside [0, 100]")));
        }
        for &design in &spec.designs {
            for &t in &spec.ts {
                spec.cell_config(design, spec.scales[0], t)
                    .validate()
                    .map_err(|e| CliError::Config(e.to_string()))?;
            }
        }
        Ok(spec)
    }
}
