//! Seeded gradient-descent training, held-out evaluation, and the pilot
//! fit used to build biased starting policies.

use crate::data::{answer_value, committed_value, PreferenceRecord};
use crate::error::{Error, Result};
use crate::margin::{reward_margin, MarginKind, Role};
use crate::objective::{objective_with_reference, ObjectiveBreakdown, ObjectiveConfig, PairLoss, ReferenceScores, WeightMode};
use crate::policy::{LogLinearPolicy, MaskMode, ParamVec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Longest response decoded during evaluation.
pub const EVAL_MAX_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveVariant {
    /// The configured objective as-is (dynamic weights by default).
    LGamma,
    /// DPO on every selected negative, equal weights.
    DpoOnly,
    /// NaPO on every selected negative, equal weights.
    NapoOnly,
    /// One negative role per batch, drawn uniformly from the selected roles.
    RandomRole,
}

/// Which negatives the non-`LGamma` variants train on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Negatives {
    /// `y_l` only.
    Original,
    /// `y_lb` and `y_vb`.
    Biased,
    All,
}

impl Negatives {
    pub fn roles(self) -> Vec<Role> {
        match self {
            Negatives::Original => vec![Role::Rejected],
            Negatives::Biased => vec![Role::LanguageBiased, Role::VisionBiased],
            Negatives::All => Role::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: ObjectiveConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Evaluate every this many steps; 0 evaluates only at epoch ends.
    pub eval_every: usize,
    pub variant: ObjectiveVariant,
    pub negatives: Negatives,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: ObjectiveConfig::default(),
            epochs: 4,
            batch_size: 4,
            step_size: 0.02,
            seed: 0,
            eval_every: 0,
            variant: ObjectiveVariant::LGamma,
            negatives: Negatives::All,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch_size must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter(format!("step_size must be > 0, got {}", self.step_size)));
        }
        Ok(())
    }

    /// Objective for one batch. `role_draw` is consulted only by `RandomRole`.
    pub fn batch_objective(&self, role_draw: &mut impl FnMut(&[Role]) -> Role) -> ObjectiveConfig {
        let mut cfg = self.objective.clone();
        let roles = self.negatives.roles();
        match self.variant {
            ObjectiveVariant::LGamma => {}
            ObjectiveVariant::DpoOnly | ObjectiveVariant::NapoOnly => {
                let loss = if self.variant == ObjectiveVariant::DpoOnly { PairLoss::Dpo } else { PairLoss::Napo };
                cfg.rejected_loss = loss;
                cfg.biased_loss = loss;
                cfg.weight_mode = WeightMode::FixedEqual;
                cfg.roles = roles;
            }
            ObjectiveVariant::RandomRole => {
                cfg.weight_mode = WeightMode::SingleLoss(role_draw(&roles));
            }
        }
        cfg
    }
}

/// Held-out metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Fraction of pairs with `psi_sum(y_w, y_l) > 0`; ties count as misses.
    pub pref_accuracy: f64,
    /// Fraction of records whose scene contradicts the prior mode and whose
    /// greedy answer commits to the mode anyway.
    pub bias_rate: f64,
    /// Fraction of greedy responses mentioning an attribute not asked about.
    pub halluc_rate: f64,
    pub n: usize,
}

/// One optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub step: usize,
    pub epoch: usize,
    /// Role trained by a `RandomRole` step.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub role: Option<Role>,
    #[serde(flatten)]
    pub breakdown: ObjectiveBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Steps taken before this evaluation.
    pub step: usize,
    pub epoch: usize,
    pub metrics: EvalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepEvent>,
    pub evals: Vec<EvalPoint>,
}

impl TrainReport {
    pub fn final_metrics(&self) -> Option<EvalMetrics> {
        self.evals.last().map(|e| e.metrics)
    }

    pub fn q_lb_series(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.breakdown.q_lb).collect()
    }

    pub fn q_vb_series(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.breakdown.q_vb).collect()
    }
}

pub fn check_disjoint(train: &[PreferenceRecord], heldout: &[PreferenceRecord]) -> Result<()> {
    let ids: BTreeSet<u64> = train.iter().map(|r| r.id).collect();
    let shared: Vec<u64> = heldout.iter().map(|r| r.id).filter(|id| ids.contains(id)).collect();
    match shared.first() {
        None => Ok(()),
        Some(&first) => Err(Error::Overlap {
            count: shared.len(),
            first,
        }),
    }
}

/// Scores `policy` on `heldout`. Preference accuracy is measured against
/// `reference`; the decoding metrics use unmasked greedy responses.
pub fn evaluate(
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    heldout: &[PreferenceRecord],
    beta: f64,
) -> Result<EvalMetrics> {
    if heldout.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (mut correct, mut biased, mut halluc) = (0usize, 0usize, 0usize);
    for r in heldout {
        let q = r.question()?;
        let psi = reward_margin(policy, reference, &r.prompt, &r.y_w, &r.y_l, beta, MarginKind::SumLogP)?;
        correct += (psi > 0.0) as usize;
        let out = policy.respond(&r.prompt, MaskMode::None, EVAL_MAX_LEN);
        let mode = q.mode();
        if r.scene()?.value(q) != mode && committed_value(&out) == Some(mode) {
            biased += 1;
        }
        if out.iter().any(|t| t.attribute().is_some_and(|a| a != q)) {
            halluc += 1;
        }
    }
    let n = heldout.len() as f64;
    Ok(EvalMetrics {
        pref_accuracy: correct as f64 / n,
        bias_rate: biased as f64 / n,
        halluc_rate: halluc as f64 / n,
        n: heldout.len(),
    })
}

/// Greedy answer accuracy: the first value token for the questioned
/// attribute equals the scene's value.
pub fn answer_accuracy(policy: &LogLinearPolicy, records: &[PreferenceRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut hits = 0usize;
    for r in records {
        let q = r.question()?;
        let out = policy.respond(&r.prompt, MaskMode::None, EVAL_MAX_LEN);
        hits += (answer_value(&out, q) == Some(r.scene()?.value(q))) as usize;
    }
    Ok(hits as f64 / records.len() as f64)
}

/// Trains a copy of `initial` with `initial` frozen as the reference.
/// Evaluates on `heldout` (if given) before the first step, every
/// `eval_every` steps, and at the end of each epoch.
pub fn train(
    dataset: &[PreferenceRecord],
    initial: &LogLinearPolicy,
    heldout: Option<&[PreferenceRecord]>,
    config: &TrainConfig,
) -> Result<(LogLinearPolicy, TrainReport)> {
    train_with_observer(dataset, initial, heldout, config, |_| {})
}

/// As [`train`], calling `observe` after every step.
pub fn train_with_observer(
    dataset: &[PreferenceRecord],
    initial: &LogLinearPolicy,
    heldout: Option<&[PreferenceRecord]>,
    config: &TrainConfig,
    mut observe: impl FnMut(&StepEvent),
) -> Result<(LogLinearPolicy, TrainReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(h) = heldout {
        check_disjoint(dataset, h)?;
    }
    let reference = initial.clone();
    let mut policy = initial.clone();
    let refs = dataset
        .iter()
        .map(|r| ReferenceScores::compute(&reference, r))
        .collect::<Result<Vec<_>>>()?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut role_rng = ChaCha8Rng::seed_from_u64(config.seed);
    role_rng.set_stream(1);
    let mut draw = |roles: &[Role]| roles[role_rng.gen_range(0..roles.len())];

    let mut report = TrainReport {
        steps: Vec::new(),
        evals: Vec::new(),
    };
    let record_eval = |policy: &LogLinearPolicy, step: usize, epoch: usize, report: &mut TrainReport| -> Result<()> {
        if let Some(h) = heldout {
            let metrics = evaluate(policy, &reference, h, config.objective.beta)?;
            report.evals.push(EvalPoint { step, epoch, metrics });
        }
        Ok(())
    };
    record_eval(&policy, 0, 0, &mut report)?;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut batch_refs = Vec::with_capacity(config.batch_size);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch_refs.clear();
            // fixed reduction order inside a batch: ascending record id
            let mut idx = chunk.to_vec();
            idx.sort_by_key(|&i| dataset[i].id);
            for &i in &idx {
                batch.push(dataset[i].clone());
                batch_refs.push(refs[i]);
            }
            let obj = config.batch_objective(&mut draw);
            let role = match obj.weight_mode {
                WeightMode::SingleLoss(r) if config.variant == ObjectiveVariant::RandomRole => Some(r),
                _ => None,
            };
            let (breakdown, grad) = objective_with_reference(&batch, &policy, &batch_refs, &obj)?;
            step += 1;
            if !breakdown.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    detail: serde_json::to_string(&breakdown)?,
                });
            }
            policy.apply(-config.step_size, &grad);
            if !policy.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    detail: "parameters left the finite range".into(),
                });
            }
            let event = StepEvent {
                step,
                epoch,
                role,
                breakdown,
            };
            observe(&event);
            report.steps.push(event);
            if config.eval_every > 0 && step % config.eval_every == 0 {
                record_eval(&policy, step, epoch, &mut report)?;
            }
        }
        if config.eval_every == 0 || step % config.eval_every != 0 {
            record_eval(&policy, step, epoch, &mut report)?;
        }
    }
    Ok((policy, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        PilotConfig {
            epochs: 1,
            batch_size: 16,
            step_size: 0.5,
            seed: 0,
        }
    }
}

/// Maximum-likelihood fit of `y_w` by minibatch gradient ascent on the mean
/// sequence log-probability, starting from `initial`.
pub fn fit_pilot(records: &[PreferenceRecord], initial: &LogLinearPolicy, cfg: &PilotConfig) -> Result<LogLinearPolicy> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if cfg.batch_size == 0 || !(cfg.step_size > 0.0) {
        return Err(Error::InvalidParameter("pilot needs batch_size >= 1 and step_size > 0".into()));
    }
    let mut policy = initial.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut grad = ParamVec::zeros();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                policy.accumulate_grad_logprob(&records[i].prompt, &records[i].y_w, scale, &mut grad)?;
            }
            policy.apply(cfg.step_size, &grad);
        }
    }
    Ok(policy)
}
