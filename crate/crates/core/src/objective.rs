//! Preference objectives: DPO, NaPO, the adaptive noise coefficient `q`,
//! margin-based role weights `gamma`, and the combined loss `L_gamma` with
//! its exact gradient.
//!
//! Within one step `q` and `gamma` are computed from detached batch-mean
//! margins and held constant, so the gradient is that of
//! `mean_i sum_r gamma_r * loss_r(psi_ir)` with the weights frozen.

use crate::data::PreferenceRecord;
use crate::error::{Error, Result};
use crate::loss::{check_q, log_sigmoid, sigmoid};
use crate::margin::{margin_from_scores, score_sequence, MarginKind, Role, SequenceScore};
use crate::policy::{LogLinearPolicy, ParamVec};
use serde::{Deserialize, Serialize};

/// `-ln sigmoid(psi)`.
pub fn dpo_loss(psi_sum: f64) -> f64 {
    -log_sigmoid(psi_sum)
}

/// `d dpo_loss / d psi = -(1 - sigmoid(psi))`.
pub fn dpo_margin_grad(psi_sum: f64) -> f64 {
    -sigmoid(-psi_sum)
}

/// `clamp(1 - sigmoid(alpha * margin), lo, hi)`.
pub fn adaptive_q(batch_mean_margin: f64, alpha: f64, clamp_lo: f64, clamp_hi: f64) -> f64 {
    adaptive_q_unclamped(batch_mean_margin, alpha).clamp(clamp_lo, clamp_hi)
}

/// The map before clamping; `1 - sigmoid(z)` is evaluated as `sigmoid(-z)`.
pub fn adaptive_q_unclamped(batch_mean_margin: f64, alpha: f64) -> f64 {
    sigmoid(-alpha * batch_mean_margin)
}

/// `(1 - sigmoid(psi)^q) / q`.
pub fn napo_loss(psi_sum: f64, q: f64) -> Result<f64> {
    check_q(q)?;
    Ok(napo_loss_unchecked(psi_sum, q))
}

fn napo_loss_unchecked(psi_sum: f64, q: f64) -> f64 {
    // sigmoid^q = exp(q * log_sigmoid) keeps precision deep in the tails
    -(q * log_sigmoid(psi_sum)).exp_m1() / q
}

/// `d napo_loss / d psi = -sigmoid(psi)^q * (1 - sigmoid(psi))`.
pub fn napo_margin_grad(psi_sum: f64, q: f64) -> Result<f64> {
    check_q(q)?;
    Ok(napo_margin_grad_unchecked(psi_sum, q))
}

fn napo_margin_grad_unchecked(psi_sum: f64, q: f64) -> f64 {
    -(q * log_sigmoid(psi_sum)).exp() * sigmoid(-psi_sum)
}

/// Role weights before and after clamping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaWeights {
    /// Normalized weights; sum to one.
    pub raw: [f64; 3],
    /// Weights actually applied.
    pub weights: [f64; 3],
}

/// Floors each batch-mean margin at `clamp_lo`, normalizes, then clamps each
/// weight to `[clamp_lo, clamp_hi]` without renormalizing.
pub fn gamma_weights(psi_yl: f64, psi_ylb: f64, psi_yvb: f64, clamp_lo: f64, clamp_hi: f64) -> GammaWeights {
    let m = [psi_yl, psi_ylb, psi_yvb].map(|v| if v.is_nan() { clamp_lo } else { v.max(clamp_lo) });
    let total: f64 = m.iter().sum();
    let raw = m.map(|v| v / total);
    GammaWeights {
        raw,
        weights: raw.map(|g| g.clamp(clamp_lo, clamp_hi)),
    }
}

/// The other order: clamp each margin into `[clamp_lo, clamp_hi]`, then
/// normalize. Weights always sum to one.
pub fn gamma_weights_clamp_first(psi_yl: f64, psi_ylb: f64, psi_yvb: f64, clamp_lo: f64, clamp_hi: f64) -> GammaWeights {
    let m = [psi_yl, psi_ylb, psi_yvb].map(|v| if v.is_nan() { clamp_lo } else { v.clamp(clamp_lo, clamp_hi) });
    let total: f64 = m.iter().sum();
    let raw = m.map(|v| v / total);
    GammaWeights { raw, weights: raw }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    DynamicGamma,
    DynamicGammaClampFirst,
    /// Equal weight over the configured roles.
    FixedEqual,
    /// Weight one on a single role.
    SingleLoss(Role),
}

/// Per-pair loss applied to a role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLoss {
    Dpo,
    Napo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub beta: f64,
    /// Scale for the language-biased `q`, driven by `psi_avg`.
    pub alpha_lb: f64,
    /// Scale for the vision-biased `q`, driven by `psi_sum`.
    pub alpha_vb: f64,
    /// Scale for the rejected-role `q` when that role uses NaPO.
    pub alpha_rejected: f64,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    pub weight_mode: WeightMode,
    pub rejected_loss: PairLoss,
    pub biased_loss: PairLoss,
    /// Roles sharing weight under [`WeightMode::FixedEqual`].
    pub roles: Vec<Role>,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            beta: 0.1,
            alpha_lb: 0.5,
            alpha_vb: 0.01,
            alpha_rejected: 0.01,
            clamp_lo: 0.01,
            clamp_hi: 1.0,
            weight_mode: WeightMode::DynamicGamma,
            rejected_loss: PairLoss::Dpo,
            biased_loss: PairLoss::Napo,
            roles: Role::ALL.to_vec(),
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        for (n, a) in [
            ("alpha_lb", self.alpha_lb),
            ("alpha_vb", self.alpha_vb),
            ("alpha_rejected", self.alpha_rejected),
        ] {
            if !(a >= 0.0 && a.is_finite()) {
                return bad(format!("{n} must be >= 0, got {a}"));
            }
        }
        if !(self.clamp_lo > 0.0 && self.clamp_lo <= self.clamp_hi && self.clamp_hi <= 1.0) {
            return bad(format!(
                "clamp bounds must satisfy 0 < lo <= hi <= 1, got [{}, {}]",
                self.clamp_lo, self.clamp_hi
            ));
        }
        if self.weight_mode == WeightMode::FixedEqual && self.roles.is_empty() {
            return bad("fixed_equal weighting needs at least one role".into());
        }
        Ok(())
    }

    fn loss_for(&self, role: Role) -> PairLoss {
        match role {
            Role::Rejected => self.rejected_loss,
            _ => self.biased_loss,
        }
    }
}

/// Everything the objective reports for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub loss_total: f64,
    /// Unweighted batch mean of the rejected-role term.
    pub loss_dpo: f64,
    pub loss_napo_lb: f64,
    pub loss_napo_vb: f64,
    pub q_rejected: f64,
    pub q_lb: f64,
    pub q_vb: f64,
    /// Applied weights `(rejected, language_biased, vision_biased)`.
    pub gamma: [f64; 3],
    /// Normalized weights before clamping (dynamic modes only).
    pub gamma_raw: [f64; 3],
    /// Batch means of `psi_sum` and `psi_avg` per role.
    pub mean_psi_sum: [f64; 3],
    pub mean_psi_avg: [f64; 3],
}

impl ObjectiveBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.loss_total, self.loss_dpo, self.loss_napo_lb, self.loss_napo_vb, self.q_lb, self.q_vb]
            .iter()
            .chain(&self.gamma)
            .all(|v| v.is_finite())
    }
}

/// Reference-policy scores of one record's four responses. The reference is
/// frozen, so these can be computed once per run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceScores {
    pub y_w: SequenceScore,
    pub others: [SequenceScore; 3],
}

impl ReferenceScores {
    pub fn compute(reference: &LogLinearPolicy, record: &PreferenceRecord) -> Result<Self> {
        check_roles(record)?;
        Ok(ReferenceScores {
            y_w: score_sequence(reference, &record.prompt, &record.y_w)?,
            others: [
                score_sequence(reference, &record.prompt, &record.y_l)?,
                score_sequence(reference, &record.prompt, &record.y_lb)?,
                score_sequence(reference, &record.prompt, &record.y_vb)?,
            ],
        })
    }
}

fn check_roles(record: &PreferenceRecord) -> Result<()> {
    if record.y_w.is_empty() {
        return Err(Error::MissingRole { id: record.id, role: "y_w" });
    }
    for role in Role::ALL {
        if record.response(role).is_empty() {
            return Err(Error::MissingRole {
                id: record.id,
                role: role.label(),
            });
        }
    }
    Ok(())
}

/// Per-role weights for this step; `q` per role.
fn step_weights(cfg: &ObjectiveConfig, mean_sum: [f64; 3], mean_avg: [f64; 3]) -> (GammaWeights, [f64; 3]) {
    let q = [
        adaptive_q(mean_sum[0], cfg.alpha_rejected, cfg.clamp_lo, cfg.clamp_hi),
        adaptive_q(mean_avg[1], cfg.alpha_lb, cfg.clamp_lo, cfg.clamp_hi),
        adaptive_q(mean_sum[2], cfg.alpha_vb, cfg.clamp_lo, cfg.clamp_hi),
    ];
    let g = match cfg.weight_mode {
        WeightMode::DynamicGamma => gamma_weights(mean_sum[0], mean_sum[1], mean_sum[2], cfg.clamp_lo, cfg.clamp_hi),
        WeightMode::DynamicGammaClampFirst => {
            gamma_weights_clamp_first(mean_sum[0], mean_sum[1], mean_sum[2], cfg.clamp_lo, cfg.clamp_hi)
        }
        WeightMode::FixedEqual => {
            let n = Role::ALL.iter().filter(|r| cfg.roles.contains(r)).count() as f64;
            let w = Role::ALL.map(|r| if cfg.roles.contains(&r) { 1.0 / n } else { 0.0 });
            GammaWeights { raw: w, weights: w }
        }
        WeightMode::SingleLoss(role) => {
            let w = Role::ALL.map(|r| if r == role { 1.0 } else { 0.0 });
            GammaWeights { raw: w, weights: w }
        }
    };
    (g, q)
}

fn pair_loss_and_grad(kind: PairLoss, psi: f64, q: f64) -> (f64, f64) {
    match kind {
        PairLoss::Dpo => (dpo_loss(psi), dpo_margin_grad(psi)),
        PairLoss::Napo => (napo_loss_unchecked(psi, q), napo_margin_grad_unchecked(psi, q)),
    }
}

/// `L_gamma` and its gradient, scoring the reference on the fly.
pub fn total_objective(
    batch: &[PreferenceRecord],
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    cfg: &ObjectiveConfig,
) -> Result<(ObjectiveBreakdown, ParamVec)> {
    let refs = batch
        .iter()
        .map(|r| ReferenceScores::compute(reference, r))
        .collect::<Result<Vec<_>>>()?;
    objective_with_reference(batch, policy, &refs, cfg)
}

/// `L_gamma` and its gradient given precomputed reference scores
/// (`refs[i]` belongs to `batch[i]`).
pub fn objective_with_reference(
    batch: &[PreferenceRecord],
    policy: &LogLinearPolicy,
    refs: &[ReferenceScores],
    cfg: &ObjectiveConfig,
) -> Result<(ObjectiveBreakdown, ParamVec)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if refs.len() != batch.len() {
        return Err(Error::InvalidParameter(format!(
            "{} reference scores for {} records",
            refs.len(),
            batch.len()
        )));
    }

    // pass 1: margins
    let mut psi = Vec::with_capacity(batch.len());
    let (mut mean_sum, mut mean_avg) = ([0.0; 3], [0.0; 3]);
    for (rec, rs) in batch.iter().zip(refs) {
        check_roles(rec)?;
        let chosen = (score_sequence(policy, &rec.prompt, &rec.y_w)?, rs.y_w);
        let mut row = [(0.0, 0.0); 3];
        for role in Role::ALL {
            let k = role.index();
            let other = (score_sequence(policy, &rec.prompt, rec.response(role))?, rs.others[k]);
            let s = margin_from_scores(chosen, other, cfg.beta, MarginKind::SumLogP);
            let a = margin_from_scores(chosen, other, cfg.beta, MarginKind::AvgLogP);
            row[k] = (s, a);
            mean_sum[k] += s;
            mean_avg[k] += a;
        }
        psi.push(row);
    }
    let n = batch.len() as f64;
    for k in 0..3 {
        mean_sum[k] /= n;
        mean_avg[k] /= n;
    }

    let (gamma, q) = step_weights(cfg, mean_sum, mean_avg);

    // pass 2: losses and gradient, in batch order
    let mut grad = ParamVec::zeros();
    let mut role_loss = [0.0; 3];
    let mut total = 0.0;
    for (rec, row) in batch.iter().zip(&psi) {
        let mut chosen_scale = 0.0;
        for role in Role::ALL {
            let k = role.index();
            let (l, dl) = pair_loss_and_grad(cfg.loss_for(role), row[k].0, q[k]);
            role_loss[k] += l;
            let w = gamma.weights[k];
            if w == 0.0 {
                continue;
            }
            total += w * l;
            if rec.response(role) == rec.y_w.as_slice() {
                // the two log-probability gradients cancel exactly
                continue;
            }
            // dpsi/dtheta = beta * (grad log pi(y_w) - grad log pi(y_o))
            let c = w * dl * cfg.beta / n;
            chosen_scale += c;
            policy.accumulate_grad_logprob(&rec.prompt, rec.response(role), -c, &mut grad)?;
        }
        if chosen_scale != 0.0 {
            policy.accumulate_grad_logprob(&rec.prompt, &rec.y_w, chosen_scale, &mut grad)?;
        }
    }

    let breakdown = ObjectiveBreakdown {
        loss_total: total / n,
        loss_dpo: role_loss[0] / n,
        loss_napo_lb: role_loss[1] / n,
        loss_napo_vb: role_loss[2] / n,
        q_rejected: q[0],
        q_lb: q[1],
        q_vb: q[2],
        gamma: gamma.weights,
        gamma_raw: gamma.raw,
        mean_psi_sum: mean_sum,
        mean_psi_avg: mean_avg,
    };
    Ok((breakdown, grad))
}

/// Loss only, with `q` and `gamma` frozen at the given values. Used to audit
/// the gradient by finite differences.
pub fn loss_with_frozen_weights(
    batch: &[PreferenceRecord],
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    cfg: &ObjectiveConfig,
    q: [f64; 3],
    gamma: [f64; 3],
) -> Result<f64> {
    let mut total = 0.0;
    for rec in batch {
        check_roles(rec)?;
        let chosen = (
            score_sequence(policy, &rec.prompt, &rec.y_w)?,
            score_sequence(reference, &rec.prompt, &rec.y_w)?,
        );
        for role in Role::ALL {
            let k = role.index();
            let y = rec.response(role);
            let other = (
                score_sequence(policy, &rec.prompt, y)?,
                score_sequence(reference, &rec.prompt, y)?,
            );
            let psi = margin_from_scores(chosen, other, cfg.beta, MarginKind::SumLogP);
            total += gamma[k] * pair_loss_and_grad(cfg.loss_for(role), psi, q[k]).0;
        }
    }
    Ok(total / batch.len() as f64)
}
