//! Sequence scoring and policy-vs-reference reward margins.
//!
//! `psi_sum = beta * [(log pi(y_w) - log ref(y_w)) - (log pi(y_o) - log ref(y_o))]`
//!
//! `psi_avg` is the same with every log-probability divided by the length
//! of its own sequence. The reward's partition term cancels in both.

use crate::error::{Error, Result};
use crate::policy::{BimodalPrompt, LogLinearPolicy};
use crate::vocab::Token;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceScore {
    pub sum_logp: f64,
    pub token_count: usize,
    pub avg_logp: f64,
}

impl SequenceScore {
    pub fn new(sum_logp: f64, token_count: usize) -> Result<Self> {
        if token_count == 0 {
            return Err(Error::EmptyResponse);
        }
        Ok(SequenceScore {
            sum_logp,
            token_count,
            avg_logp: sum_logp / token_count as f64,
        })
    }

    pub fn get(&self, kind: MarginKind) -> f64 {
        match kind {
            MarginKind::SumLogP => self.sum_logp,
            MarginKind::AvgLogP => self.avg_logp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginKind {
    /// psi_sum: summed log-probabilities.
    SumLogP,
    /// psi_avg: length-averaged log-probabilities.
    AvgLogP,
}

impl MarginKind {
    pub const ALL: [MarginKind; 2] = [MarginKind::SumLogP, MarginKind::AvgLogP];

    pub fn label(self) -> &'static str {
        match self {
            MarginKind::SumLogP => "psi_sum",
            MarginKind::AvgLogP => "psi_avg",
        }
    }
}

/// Teacher-forced log-probability of `response`.
pub fn score_sequence(
    policy: &LogLinearPolicy,
    prompt: &BimodalPrompt,
    response: &[Token],
) -> Result<SequenceScore> {
    let lps = policy.token_logprobs(prompt, response)?;
    SequenceScore::new(lps.iter().sum(), response.len())
}

/// Margin from already-computed scores; `(policy, reference)` for each side.
pub fn margin_from_scores(
    chosen: (SequenceScore, SequenceScore),
    other: (SequenceScore, SequenceScore),
    beta: f64,
    kind: MarginKind,
) -> f64 {
    let chosen_ratio = chosen.0.get(kind) - chosen.1.get(kind);
    let other_ratio = other.0.get(kind) - other.1.get(kind);
    beta * (chosen_ratio - other_ratio)
}

pub fn reward_margin(
    policy: &LogLinearPolicy,
    reference: &LogLinearPolicy,
    prompt: &BimodalPrompt,
    y_w: &[Token],
    y_other: &[Token],
    beta: f64,
    kind: MarginKind,
) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
    }
    let chosen = (
        score_sequence(policy, prompt, y_w)?,
        score_sequence(reference, prompt, y_w)?,
    );
    let other = (
        score_sequence(policy, prompt, y_other)?,
        score_sequence(reference, prompt, y_other)?,
    );
    Ok(margin_from_scores(chosen, other, beta, kind))
}

/// Both margin kinds for one (chosen, other) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMargin {
    pub psi_sum: f64,
    pub psi_avg: f64,
}

impl PairMargin {
    pub fn get(&self, kind: MarginKind) -> f64 {
        match kind {
            MarginKind::SumLogP => self.psi_sum,
            MarginKind::AvgLogP => self.psi_avg,
        }
    }
}

/// Mean of per-sample margins of one kind. Values are plain numbers, so
/// nothing downstream can differentiate through the average.
pub fn batch_mean_margin(margins: &[PairMargin], kind: MarginKind) -> Result<f64> {
    if margins.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(margins.iter().map(|m| m.get(kind)).sum::<f64>() / margins.len() as f64)
}

/// Response roles that compete with the preferred answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Rejected,
    LanguageBiased,
    VisionBiased,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Rejected, Role::LanguageBiased, Role::VisionBiased];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Role::Rejected => "rejected",
            Role::LanguageBiased => "language_biased",
            Role::VisionBiased => "vision_biased",
        }
    }
}

/// Per-role margins for a set of samples plus their batch means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub per_role: Vec<RoleMargins>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleMargins {
    pub role: Role,
    pub samples: Vec<PairMargin>,
    pub batch_mean_sum: f64,
    pub batch_mean_avg: f64,
}

impl MarginReport {
    /// Scores `(prompt, y_w, [y_rejected, y_lb, y_vb])` triples.
    pub fn compute<'a, I>(
        policy: &LogLinearPolicy,
        reference: &LogLinearPolicy,
        beta: f64,
        samples: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a BimodalPrompt, &'a [Token], [&'a [Token]; 3])>,
    {
        let mut per: [Vec<PairMargin>; 3] = Default::default();
        for (prompt, y_w, others) in samples {
            let chosen = (
                score_sequence(policy, prompt, y_w)?,
                score_sequence(reference, prompt, y_w)?,
            );
            for (slot, y_o) in per.iter_mut().zip(others) {
                let other = (
                    score_sequence(policy, prompt, y_o)?,
                    score_sequence(reference, prompt, y_o)?,
                );
                slot.push(PairMargin {
                    psi_sum: margin_from_scores(chosen, other, beta, MarginKind::SumLogP),
                    psi_avg: margin_from_scores(chosen, other, beta, MarginKind::AvgLogP),
                });
            }
        }
        let per_role = Role::ALL
            .iter()
            .zip(per)
            .map(|(&role, samples)| {
                Ok(RoleMargins {
                    role,
                    batch_mean_sum: batch_mean_margin(&samples, MarginKind::SumLogP)?,
                    batch_mean_avg: batch_mean_margin(&samples, MarginKind::AvgLogP)?,
                    samples,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MarginReport { per_role })
    }

    pub fn role(&self, role: Role) -> &RoleMargins {
        &self.per_role[role.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::parse_tokens;
    use proptest::prelude::*;

    fn prompt() -> BimodalPrompt {
        BimodalPrompt::new(
            parse_tokens(&["green", "ball", "tiny", "top"]).unwrap(),
            parse_tokens(&["what", "shape"]).unwrap(),
        )
    }

    fn toks(s: &[&str]) -> Vec<Token> {
        parse_tokens(s).unwrap()
    }

    fn random_policy(seed: u64, scale: f64) -> LogLinearPolicy {
        use rand::SeedableRng;
        LogLinearPolicy::random(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed), scale)
    }

    /// Policy that only ever puts mass on `red` and `green`.
    fn two_token_policy() -> LogLinearPolicy {
        let mut p = LogLinearPolicy::zeros();
        for t in crate::vocab::answer_tokens() {
            if t.as_str() == "<eos>" {
                for k in 0..crate::policy::N_POSITIONS {
                    p.set_named(&format!("pos:{k}"), "<eos>", -60.0).unwrap();
                }
            } else if t.as_str() != "red" && t.as_str() != "green" {
                p.set_named("bias", t.as_str(), -60.0).unwrap();
            }
        }
        p
    }

    #[test]
    fn uniform_two_token_scores() {
        let p = two_token_policy();
        let one = score_sequence(&p, &prompt(), &toks(&["red"])).unwrap();
        assert!((one.sum_logp - 0.5f64.ln()).abs() < 1e-12);
        let three = score_sequence(&p, &prompt(), &toks(&["red", "green", "red"])).unwrap();
        assert!((three.sum_logp - 3.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((three.avg_logp - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(three.token_count, 3);
    }

    #[test]
    fn deterministic_policy_scores_zero() {
        let mut p = LogLinearPolicy::zeros();
        p.set_named("bias", "cube", 80.0).unwrap();
        let s = score_sequence(&p, &prompt(), &toks(&["cube", "cube"])).unwrap();
        assert!(s.sum_logp.abs() < 1e-12 && s.sum_logp <= 0.0);
    }

    #[test]
    fn scoring_errors() {
        let p = LogLinearPolicy::zeros();
        assert!(matches!(score_sequence(&p, &prompt(), &[]), Err(Error::EmptyResponse)));
        assert!(matches!(
            score_sequence(&p, &prompt(), &[crate::vocab::WHAT]),
            Err(Error::UnknownToken(_))
        ));
        assert!(SequenceScore::new(0.0, 0).is_err());
    }

    #[test]
    fn identical_policies_give_zero_margin() {
        let p = random_policy(3, 1.0);
        for kind in MarginKind::ALL {
            let m = reward_margin(&p, &p.clone(), &prompt(), &toks(&["ball", "<eos>"]), &toks(&["cone"]), 0.1, kind).unwrap();
            assert_eq!(m, 0.0);
        }
    }

    #[test]
    fn margin_is_linear_in_beta() {
        let p = random_policy(4, 1.0);
        let r = random_policy(5, 1.0);
        let yw = toks(&["ball", "<eos>"]);
        let yo = toks(&["shape", "ball", "size", "tiny"]);
        for kind in MarginKind::ALL {
            let a = reward_margin(&p, &r, &prompt(), &yw, &yo, 0.1, kind).unwrap();
            let b = reward_margin(&p, &r, &prompt(), &yw, &yo, 0.2, kind).unwrap();
            assert!((b - 2.0 * a).abs() < 1e-12);
        }
        assert!(reward_margin(&p, &r, &prompt(), &yw, &yo, 0.0, MarginKind::SumLogP).is_err());
    }

    #[test]
    fn equal_lengths_relate_the_two_kinds() {
        let p = random_policy(6, 1.0);
        let r = random_policy(7, 1.0);
        let yw = toks(&["ball", "<eos>", "red"]);
        let yo = toks(&["cone", "cube", "<eos>"]);
        let s = reward_margin(&p, &r, &prompt(), &yw, &yo, 0.1, MarginKind::SumLogP).unwrap();
        let a = reward_margin(&p, &r, &prompt(), &yw, &yo, 0.1, MarginKind::AvgLogP).unwrap();
        assert!((a - s / 3.0).abs() < 1e-12);
    }

    #[test]
    fn batch_means() {
        let m = |v: f64| PairMargin { psi_sum: v, psi_avg: -v };
        assert_eq!(batch_mean_margin(&[m(1.0), m(3.0)], MarginKind::SumLogP).unwrap(), 2.0);
        assert_eq!(batch_mean_margin(&[m(1.5)], MarginKind::SumLogP).unwrap(), 1.5);
        assert_eq!(batch_mean_margin(&[m(-1.0), m(1.0)], MarginKind::AvgLogP).unwrap(), 0.0);
        assert!(matches!(batch_mean_margin(&[], MarginKind::SumLogP), Err(Error::EmptyBatch)));
    }

    #[test]
    fn report_means_match_samples() {
        let p = random_policy(8, 0.5);
        let r = random_policy(9, 0.5);
        let pr = prompt();
        let yw = toks(&["ball", "<eos>"]);
        let others = [toks(&["cube", "<eos>"]), toks(&["cone", "<eos>"]), toks(&["color", "green", "<eos>"])];
        let items = vec![(&pr, yw.as_slice(), [others[0].as_slice(), others[1].as_slice(), others[2].as_slice()]); 3];
        let rep = MarginReport::compute(&p, &r, 0.1, items).unwrap();
        for role in Role::ALL {
            let rm = rep.role(role);
            let mean: f64 = rm.samples.iter().map(|s| s.psi_sum).sum::<f64>() / 3.0;
            assert!((rm.batch_mean_sum - mean).abs() < 1e-9);
            assert_eq!(rm.role, role);
        }
    }

    proptest! {
        #[test]
        fn antisymmetric(seed in 0u64..500) {
            let p = random_policy(seed, 1.0);
            let r = random_policy(seed + 10_000, 1.0);
            let yw = toks(&["ball", "<eos>"]);
            let yo = toks(&["shape", "ball", "place", "top", "<eos>"]);
            for kind in MarginKind::ALL {
                let a = reward_margin(&p, &r, &prompt(), &yw, &yo, 0.1, kind).unwrap();
                let b = reward_margin(&p, &r, &prompt(), &yo, &yw, 0.1, kind).unwrap();
                prop_assert!((a + b).abs() < 1e-12);
            }
        }

        #[test]
        fn uniform_logit_shift_leaves_margin(seed in 0u64..500, c in -4.0f64..4.0) {
            let p = random_policy(seed, 1.0);
            let r = random_policy(seed + 1, 1.0);
            let mut shifted = p.clone();
            for k in 0..crate::policy::N_POSITIONS {
                let f = crate::policy::parse_feature(&format!("pos:{k}")).unwrap();
                for t in crate::vocab::answer_tokens() {
                    let w = shifted.weight(f, t);
                    shifted.set_weight(f, t, w + c);
                }
            }
            let yw = toks(&["ball", "<eos>"]);
            let yo = toks(&["cone", "<eos>"]);
            let a = reward_margin(&p, &r, &prompt(), &yw, &yo, 0.1, MarginKind::SumLogP).unwrap();
            let b = reward_margin(&shifted, &r, &prompt(), &yw, &yo, 0.1, MarginKind::SumLogP).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn sum_scales_with_length_avg_does_not(n in 1usize..8) {
            // Position- and history-free policy: every step has the same
            // distribution, so repeated tokens have a fixed per-token log-ratio.
            let mut p = LogLinearPolicy::zeros();
            p.set_named("bias", "ball", 1.0).unwrap();
            p.set_named("bias", "cone", -0.5).unwrap();
            let r = LogLinearPolicy::zeros();
            let one_w = toks(&["ball"]);
            let one_o = toks(&["cone"]);
            let yw = vec![one_w[0]; n];
            let yo = vec![one_o[0]; n];
            let base_s = reward_margin(&p, &r, &prompt(), &one_w, &one_o, 0.1, MarginKind::SumLogP).unwrap();
            let base_a = reward_margin(&p, &r, &prompt(), &one_w, &one_o, 0.1, MarginKind::AvgLogP).unwrap();
            let s = reward_margin(&p, &r, &prompt(), &yw, &yo, 0.1, MarginKind::SumLogP).unwrap();
            let a = reward_margin(&p, &r, &prompt(), &yw, &yo, 0.1, MarginKind::AvgLogP).unwrap();
            prop_assert!((s - n as f64 * base_s).abs() < 1e-9);
            prop_assert!((a - base_a).abs() < 1e-9);
        }
    }
}
