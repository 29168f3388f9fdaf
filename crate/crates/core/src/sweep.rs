//! Paired-seed training sweeps over a grid of noise rates.
//!
//! Every cell `(rho, arm, seed)` starts from the same pilot policy for a given
//! seed and is scored on one shared held-out set, so differences between arms
//! and between noise rates are paired.

use crate::data::{make_dataset, DataConfig, PreferenceRecord};
use crate::error::{Error, Result};
use crate::policy::LogLinearPolicy;
use crate::trainer::{check_disjoint, evaluate, fit_pilot, train, Negatives, ObjectiveVariant, PilotConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// How the starting (and reference) policy of a run is built: a maximum
/// likelihood fit of `y_w` on records drawn at the prior's own coincidence
/// rate, so the fitted policy inherits the prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotSpec {
    /// Records in the pilot set; 0 skips the fit and starts from all-zero weights.
    pub n_records: usize,
    pub rho_lb: f64,
    /// Added to the run seed to seed the pilot data.
    pub seed_offset: u64,
    pub id_offset: u64,
    pub fit: PilotConfig,
}

impl Default for PilotSpec {
    fn default() -> Self {
        PilotSpec {
            n_records: 3200,
            rho_lb: 0.8,
            seed_offset: 5000,
            id_offset: 2_000_000,
            fit: PilotConfig::default(),
        }
    }
}

impl PilotSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho_lb) {
            return Err(Error::InvalidParameter(format!("pilot rho_lb must lie in [0, 1], got {}", self.rho_lb)));
        }
        if self.fit.batch_size == 0 || !(self.fit.step_size > 0.0) {
            return Err(Error::InvalidParameter("pilot needs batch_size >= 1 and step_size > 0".into()));
        }
        Ok(())
    }

    pub fn data_config(&self, seed: u64, prior_skew: f64) -> DataConfig {
        DataConfig {
            seed: self.seed_offset.wrapping_add(seed),
            n_records: self.n_records,
            prior_skew,
            rho_lb: self.rho_lb,
            rho_vb: 0.0,
            id_offset: self.id_offset,
        }
    }

    pub fn policy(&self, seed: u64, prior_skew: f64) -> Result<LogLinearPolicy> {
        self.validate()?;
        if self.n_records == 0 {
            return Ok(LogLinearPolicy::zeros());
        }
        let records = make_dataset(&self.data_config(seed, prior_skew))?;
        let fit = PilotConfig { seed, ..self.fit };
        fit_pilot(&records, &LogLinearPolicy::zeros(), &fit)
    }
}

/// One trained configuration in a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub name: String,
    pub variant: ObjectiveVariant,
    pub negatives: Negatives,
}

impl Arm {
    pub fn new(name: &str, variant: ObjectiveVariant, negatives: Negatives) -> Self {
        Arm {
            name: name.to_string(),
            variant,
            negatives,
        }
    }

    /// DPO and NaPO on the biased negatives, the full weighted objective,
    /// random single-role training, and DPO on the original pairs.
    pub fn defaults() -> Vec<Arm> {
        vec![
            Arm::new("dpo", ObjectiveVariant::DpoOnly, Negatives::Biased),
            Arm::new("napo", ObjectiveVariant::NapoOnly, Negatives::Biased),
            Arm::new("lgamma", ObjectiveVariant::LGamma, Negatives::All),
            Arm::new("random", ObjectiveVariant::RandomRole, Negatives::All),
            Arm::new("dpo_original", ObjectiveVariant::DpoOnly, Negatives::Original),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub rhos: Vec<f64>,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    /// Training-set template; `seed`, `rho_lb` and `rho_vb` are set per cell.
    pub data: DataConfig,
    pub heldout: DataConfig,
    pub pilot: PilotSpec,
    /// Base training config; `seed`, `variant` and `negatives` are set per cell.
    pub train: TrainConfig,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            rhos: vec![0.0, 0.3, 0.5],
            seeds: (0..5).collect(),
            arms: Arm::defaults(),
            data: DataConfig {
                n_records: 1000,
                ..DataConfig::default()
            },
            heldout: default_heldout(),
            pilot: PilotSpec::default(),
            train: TrainConfig::default(),
            threads: 0,
        }
    }
}

/// Held-out set used unless configured otherwise: ids far above any training id.
pub fn default_heldout() -> DataConfig {
    DataConfig {
        seed: 999,
        n_records: 1000,
        id_offset: 1_000_000,
        ..DataConfig::default()
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.seeds.len() < 3 {
            return bad(format!("a sweep needs at least 3 seeds, got {}", self.seeds.len()));
        }
        if self.rhos.is_empty() || self.rhos.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad(format!("rhos must be a non-empty subset of [0, 1], got {:?}", self.rhos));
        }
        if self.arms.is_empty() {
            return bad("a sweep needs at least one arm".into());
        }
        let names: BTreeSet<&str> = self.arms.iter().map(|a| a.name.as_str()).collect();
        if names.len() != self.arms.len() {
            return bad("arm names must be unique".into());
        }
        self.data.validate()?;
        self.heldout.validate()?;
        self.pilot.validate()?;
        self.train.validate()
    }

    fn cell_data(&self, rho: f64, seed: u64) -> DataConfig {
        DataConfig {
            seed,
            rho_lb: rho,
            rho_vb: rho,
            ..self.data
        }
    }

    fn cell_train(&self, arm: &Arm, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            variant: arm.variant,
            negatives: arm.negatives,
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PrefAccuracy,
    BiasRate,
    HallucRate,
}

/// Final held-out metrics of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    pub variant: String,
    pub seed: u64,
    pub pref_accuracy: f64,
    pub bias_rate: f64,
    pub halluc_rate: f64,
}

impl SweepRow {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::PrefAccuracy => self.pref_accuracy,
            Metric::BiasRate => self.bias_rate,
            Metric::HallucRate => self.halluc_rate,
        }
    }
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rho: f64,
    pub variant: String,
    pub n: usize,
    pub pref_accuracy_mean: f64,
    pub pref_accuracy_sd: f64,
    pub bias_rate_mean: f64,
    pub bias_rate_sd: f64,
    pub halluc_rate_mean: f64,
    pub halluc_rate_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

impl SweepTable {
    /// Rows of one cell, in seed order.
    pub fn cell(&self, rho: f64, variant: &str) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.rho == rho && r.variant == variant).collect()
    }

    pub fn mean(&self, rho: f64, variant: &str, m: Metric) -> Option<f64> {
        let cell = self.cell(rho, variant);
        (!cell.is_empty()).then(|| cell.iter().map(|r| r.get(m)).sum::<f64>() / cell.len() as f64)
    }

    /// Per-seed change `metric(rho_hi) - metric(rho_lo)` for one arm.
    pub fn paired_change(&self, variant: &str, rho_lo: f64, rho_hi: f64, m: Metric) -> Vec<(u64, f64)> {
        let lo = self.cell(rho_lo, variant);
        self.cell(rho_hi, variant)
            .into_iter()
            .filter_map(|h| lo.iter().find(|l| l.seed == h.seed).map(|l| (h.seed, h.get(m) - l.get(m))))
            .collect()
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(rows: &[SweepRow], cfg: &SweepConfig) -> Vec<SweepSummary> {
    let mut out = Vec::new();
    for &rho in &cfg.rhos {
        for arm in &cfg.arms {
            let cell: Vec<&SweepRow> = rows.iter().filter(|r| r.rho == rho && r.variant == arm.name).collect();
            let col = |m: Metric| mean_sd(&cell.iter().map(|r| r.get(m)).collect::<Vec<_>>());
            let (pa, pa_sd) = col(Metric::PrefAccuracy);
            let (br, br_sd) = col(Metric::BiasRate);
            let (hr, hr_sd) = col(Metric::HallucRate);
            out.push(SweepSummary {
                rho,
                variant: arm.name.clone(),
                n: cell.len(),
                pref_accuracy_mean: pa,
                pref_accuracy_sd: pa_sd,
                bias_rate_mean: br,
                bias_rate_sd: br_sd,
                halluc_rate_mean: hr,
                halluc_rate_sd: hr_sd,
            });
        }
    }
    out
}

/// Runs `jobs` on `threads` workers and returns results in job order.
fn run_ordered<T: Send>(n_jobs: usize, threads: usize, job: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let threads = match threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    }
    .min(n_jobs.max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n_jobs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n_jobs {
                    break;
                }
                let r = job(i);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Trains every `(rho, arm, seed)` cell and scores its final policy against
/// its own starting policy on the shared held-out set. Rows come back ordered
/// by rho, then arm, then seed, whatever the thread count.
pub fn noise_sweep(cfg: &SweepConfig) -> Result<SweepTable> {
    cfg.validate()?;
    let heldout = make_dataset(&cfg.heldout)?;
    let pilots = run_ordered(cfg.seeds.len(), cfg.threads, |i| {
        cfg.pilot.policy(cfg.seeds[i], cfg.data.prior_skew)
    })?;

    let (n_arms, n_seeds) = (cfg.arms.len(), cfg.seeds.len());
    let rows = run_ordered(cfg.rhos.len() * n_arms * n_seeds, cfg.threads, |i| {
        let rho = cfg.rhos[i / (n_arms * n_seeds)];
        let arm = &cfg.arms[(i / n_seeds) % n_arms];
        let si = i % n_seeds;
        let seed = cfg.seeds[si];
        run_cell(cfg, &heldout, &pilots[si], rho, arm, seed)
    })?;
    let summary = summarize(&rows, cfg);
    Ok(SweepTable { rows, summary })
}

fn run_cell(
    cfg: &SweepConfig,
    heldout: &[PreferenceRecord],
    initial: &LogLinearPolicy,
    rho: f64,
    arm: &Arm,
    seed: u64,
) -> Result<SweepRow> {
    let data = make_dataset(&cfg.cell_data(rho, seed))?;
    let tc = cfg.cell_train(arm, seed);
    check_disjoint(&data, heldout)?;
    let (policy, _) = train(&data, initial, None, &tc)?;
    let m = evaluate(&policy, initial, heldout, tc.objective.beta)?;
    Ok(SweepRow {
        rho,
        variant: arm.name.clone(),
        seed,
        pref_accuracy: m.pref_accuracy,
        bias_rate: m.bias_rate,
        halluc_rate: m.halluc_rate,
    })
}
