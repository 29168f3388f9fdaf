//! Run configuration: one TOML file plus `key.path=value` overrides.

use super::curves::CurvesConfig;
use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::policy::LogLinearPolicy;
use crate::sweep::{default_heldout, Arm, PilotSpec, SweepConfig};
use crate::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Starting policy for `train`; also the frozen reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    Zero,
    Pilot,
    Checkpoint(PathBuf),
}

/// How `gen-data` builds the biased responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    RuleBased,
    /// Greedy decodes of the pilot policy under masked prompts.
    Decoded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub rhos: Vec<f64>,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    /// Training records per cell.
    pub n_records: usize,
    pub threads: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        let base = SweepConfig::default();
        SweepOptions {
            rhos: base.rhos,
            seeds: base.seeds,
            arms: base.arms,
            n_records: base.data.n_records,
            threads: base.threads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generator: Generator,
    pub data: DataConfig,
    pub heldout: DataConfig,
    pub init: InitPolicy,
    pub pilot: PilotSpec,
    pub train: TrainConfig,
    pub sweep: SweepOptions,
    pub curves: CurvesConfig,
    pub histogram_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            generator: Generator::RuleBased,
            data: DataConfig {
                n_records: 1000,
                ..DataConfig::default()
            },
            heldout: default_heldout(),
            init: InitPolicy::Pilot,
            pilot: PilotSpec::default(),
            train: TrainConfig::default(),
            sweep: SweepOptions::default(),
            curves: CurvesConfig::default(),
            histogram_bins: 30,
        }
    }
}

impl RunConfig {
    /// Parses TOML over the defaults, applies overrides, and validates. Keys
    /// missing from a partial table keep this config's defaults.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut table = toml::Table::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut table, user);
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (or the defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Seeds data generation, training, and the pilot fit.
    pub fn set_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.heldout.validate()?;
        self.pilot.validate()?;
        self.train.validate()?;
        self.curves.validate()?;
        if self.histogram_bins == 0 {
            return Err(Error::InvalidParameter("histogram_bins must be >= 1".into()));
        }
        self.sweep_config().validate()
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            rhos: self.sweep.rhos.clone(),
            seeds: self.sweep.seeds.clone(),
            arms: self.sweep.arms.clone(),
            data: DataConfig {
                n_records: self.sweep.n_records,
                ..self.data
            },
            heldout: self.heldout,
            pilot: self.pilot,
            train: self.train.clone(),
            threads: self.sweep.threads,
        }
    }

    /// The pilot policy for this run's training seed.
    pub fn pilot_policy(&self) -> Result<LogLinearPolicy> {
        self.pilot.policy(self.train.seed, self.data.prior_skew)
    }

    pub fn initial_policy(&self) -> Result<LogLinearPolicy> {
        match &self.init {
            InitPolicy::Zero => Ok(LogLinearPolicy::zeros()),
            InitPolicy::Pilot => self.pilot_policy(),
            InitPolicy::Checkpoint(p) => LogLinearPolicy::load(p),
        }
    }
}

/// Recursively overlays `top` onto `base`; non-table values replace.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML value when it parses
/// as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, arg: &str) -> Result<()> {
    let (path, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{arg}` is not of the form key.path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override `{arg}` has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{arg}`: `{k}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
