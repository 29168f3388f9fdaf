//! Log-linear next-token policy over a bimodal (scene + question) prompt.
//!
//! At each decoding step the policy computes a sparse set of indicator
//! features from the prompt and the generated prefix, and scores every token
//! of the answer vocabulary with `logit[k] = sum_f theta[f, k]`. Masked
//! channels contribute no features at all.
//!
//! Feature layout:
//!
//! | feature           | active when                                  |
//! |-------------------|----------------------------------------------|
//! | `bias`            | always                                       |
//! | `visual`, `text`  | the channel is present (not masked)          |
//! | `q:<attr>`        | the question asks about `<attr>`             |
//! | `s:<value>`       | the scene shows `<value>`                    |
//! | `pos:<t>`         | decoding position `t` (clamped to the last)  |
//! | `prev:<token>`    | previous token (`<bos>` at position 0)       |
//!
//! The end token is scored by the `pos` and `prev` features only: when to
//! stop depends on what has been said, not on the prompt. Prompt-feature
//! weights for `<eos>` are structurally zero.

use crate::error::{Error, Result};
use crate::vocab::{self, Attribute, Token, ANSWER_VOCAB, EOS, N_ATTRIBUTES};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const N_POSITIONS: usize = 12;

const F_BIAS: usize = 0;
const F_VISUAL: usize = 1;
const F_TEXT: usize = 2;
const F_QUESTION: usize = 3;
const F_SCENE: usize = F_QUESTION + N_ATTRIBUTES;
const F_POS: usize = F_SCENE + 16;
const F_PREV: usize = F_POS + N_POSITIONS;
/// `prev:<bos>` sits after the answer-token rows.
const F_PREV_BOS: usize = F_PREV + ANSWER_VOCAB;
pub const N_FEATURES: usize = F_PREV_BOS + 1;
pub const N_PARAMS: usize = N_FEATURES * ANSWER_VOCAB;

const CHECKPOINT_HEADER: &str = "napo-policy 1";

/// Prompt `x = (v, t)`: scene value tokens and question tokens, each of
/// which may be masked out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BimodalPrompt {
    pub visual_tokens: Vec<Token>,
    pub text_tokens: Vec<Token>,
    pub visual_masked: bool,
    pub text_masked: bool,
}

impl BimodalPrompt {
    pub fn new(visual_tokens: Vec<Token>, text_tokens: Vec<Token>) -> Self {
        BimodalPrompt {
            visual_tokens,
            text_tokens,
            visual_masked: false,
            text_masked: false,
        }
    }

    /// Attribute the question asks about, if the text names one.
    pub fn question(&self) -> Option<Attribute> {
        self.text_tokens
            .iter()
            .find_map(|t| if t.is_value() { None } else { t.attribute() })
    }

    /// Value shown in the scene for `attr`.
    pub fn scene_value(&self, attr: Attribute) -> Option<Token> {
        self.visual_tokens
            .iter()
            .copied()
            .find(|t| t.is_value() && t.attribute() == Some(attr))
    }

    pub fn masked(&self, mode: MaskMode) -> BimodalPrompt {
        let mut p = self.clone();
        match mode {
            MaskMode::None => {}
            MaskMode::MaskVisual => p.visual_masked = true,
            MaskMode::MaskText => p.text_masked = true,
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    None,
    /// Visual tokens hidden; used for language-biased responses.
    MaskVisual,
    /// Question hidden; used for vision-biased responses.
    MaskText,
}

/// Active feature ids for predicting the token at `prefix.len()`.
pub fn active_features(prompt: &BimodalPrompt, prefix: &[Token]) -> Vec<usize> {
    let mut out = Vec::with_capacity(12);
    out.push(F_BIAS);
    if !prompt.visual_masked {
        out.push(F_VISUAL);
        for t in &prompt.visual_tokens {
            if t.is_value() {
                out.push(F_SCENE + (t.id() - 5));
            }
        }
    }
    if !prompt.text_masked {
        out.push(F_TEXT);
        if let Some(a) = prompt.question() {
            out.push(F_QUESTION + a.index());
        }
    }
    out.push(F_POS + prefix.len().min(N_POSITIONS - 1));
    match prefix.last() {
        Some(t) => out.push(F_PREV + t.id()),
        None => out.push(F_PREV_BOS),
    }
    out
}

/// Prompt features skip column 0, the end token.
#[inline]
fn first_scored_token(f: usize) -> usize {
    if f < F_POS {
        1
    } else {
        0
    }
}

/// False for the structurally-zero (prompt feature, `<eos>`) weights.
pub fn is_free_weight(feature: usize, token: Token) -> bool {
    token != EOS || feature >= F_POS
}

/// Human-readable name of a feature id, used by checkpoints.
pub fn feature_name(f: usize) -> String {
    match f {
        F_BIAS => "bias".into(),
        F_VISUAL => "visual".into(),
        F_TEXT => "text".into(),
        _ if f < F_SCENE => format!("q:{}", Attribute::ALL[f - F_QUESTION]),
        _ if f < F_POS => format!("s:{}", Token::from_id(f - F_SCENE + 5).unwrap()),
        _ if f < F_PREV => format!("pos:{}", f - F_POS),
        F_PREV_BOS => "prev:<bos>".into(),
        _ if f < F_PREV_BOS => format!("prev:{}", Token::from_id(f - F_PREV).unwrap()),
        _ => panic!("feature id {f} out of range"),
    }
}

pub fn parse_feature(name: &str) -> Result<usize> {
    let bad = || Error::InvalidParameter(format!("unknown feature `{name}`"));
    match name {
        "bias" => return Ok(F_BIAS),
        "visual" => return Ok(F_VISUAL),
        "text" => return Ok(F_TEXT),
        "prev:<bos>" => return Ok(F_PREV_BOS),
        _ => {}
    }
    let (kind, rest) = name.split_once(':').ok_or_else(bad)?;
    match kind {
        "q" => Attribute::ALL
            .iter()
            .position(|a| a.name_token().as_str() == rest)
            .map(|i| F_QUESTION + i)
            .ok_or_else(bad),
        "s" => {
            let t = Token::parse(rest)?;
            if t.is_value() {
                Ok(F_SCENE + t.id() - 5)
            } else {
                Err(bad())
            }
        }
        "pos" => {
            let p: usize = rest.parse().map_err(|_| bad())?;
            if p < N_POSITIONS {
                Ok(F_POS + p)
            } else {
                Err(bad())
            }
        }
        "prev" => {
            let t = Token::parse(rest)?;
            if t.is_answer() {
                Ok(F_PREV + t.id())
            } else {
                Err(bad())
            }
        }
        _ => Err(bad()),
    }
}

/// Next-token log-probabilities indexed by token id.
pub type LogProbs = [f64; ANSWER_VOCAB];

/// Dense gradient (or any other vector) in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVec(pub Vec<f64>);

impl ParamVec {
    pub fn zeros() -> Self {
        ParamVec(vec![0.0; N_PARAMS])
    }

    pub fn get(&self, feature: usize, token: Token) -> f64 {
        self.0[feature * ANSWER_VOCAB + token.id()]
    }

    pub fn axpy(&mut self, scale: f64, other: &ParamVec) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `theta` table indexed by (feature, answer token).
#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearPolicy {
    theta: Vec<f64>,
}

impl Default for LogLinearPolicy {
    fn default() -> Self {
        Self::zeros()
    }
}

impl LogLinearPolicy {
    pub fn zeros() -> Self {
        LogLinearPolicy {
            theta: vec![0.0; N_PARAMS],
        }
    }

    /// Every free weight drawn uniformly from `[-scale, scale)`.
    pub fn random(rng: &mut impl rand::Rng, scale: f64) -> Self {
        let mut p = Self::zeros();
        for f in 0..N_FEATURES {
            for tok in vocab::answer_tokens() {
                if is_free_weight(f, tok) {
                    p.set_weight(f, tok, rng.gen_range(-scale..scale));
                }
            }
        }
        p
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn weight(&self, feature: usize, token: Token) -> f64 {
        self.theta[feature * ANSWER_VOCAB + token.id()]
    }

    /// Panics on a structurally-zero weight; see [`is_free_weight`].
    pub fn set_weight(&mut self, feature: usize, token: Token, w: f64) {
        assert!(is_free_weight(feature, token), "`{}` does not score `<eos>`", feature_name(feature));
        self.theta[feature * ANSWER_VOCAB + token.id()] = w;
    }

    /// Sets a weight addressed by feature name, e.g. `("q:color", "brown")`.
    pub fn set_named(&mut self, feature: &str, token: &str, w: f64) -> Result<()> {
        let f = parse_feature(feature)?;
        let t = Token::parse(token)?;
        if !t.is_answer() {
            return Err(Error::UnknownToken(token.into()));
        }
        if !is_free_weight(f, t) {
            return Err(Error::InvalidParameter(format!("`{feature}` does not score `<eos>`")));
        }
        self.set_weight(f, t, w);
        Ok(())
    }

    /// `theta += step * direction`.
    pub fn apply(&mut self, step: f64, direction: &ParamVec) {
        for (t, d) in self.theta.iter_mut().zip(&direction.0) {
            *t += step * d;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    fn logits(&self, features: &[usize]) -> LogProbs {
        let mut z = [0.0; ANSWER_VOCAB];
        for &f in features {
            let row = &self.theta[f * ANSWER_VOCAB..(f + 1) * ANSWER_VOCAB];
            let first = first_scored_token(f);
            for (zk, w) in z.iter_mut().zip(row).skip(first) {
                *zk += w;
            }
        }
        z
    }

    fn log_softmax_at(&self, features: &[usize]) -> LogProbs {
        let mut z = self.logits(features);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for v in z.iter_mut() {
            *v -= lse;
        }
        z
    }

    /// Log-softmax over the answer vocabulary after `prefix`.
    pub fn next_token_logprobs(&self, prompt: &BimodalPrompt, prefix: &[Token]) -> Result<LogProbs> {
        if let Some(bad) = prefix.iter().find(|t| !t.is_answer()) {
            return Err(Error::UnknownToken(bad.as_str().into()));
        }
        Ok(self.log_softmax_at(&active_features(prompt, prefix)))
    }

    /// Per-token log-probabilities of `response` under teacher forcing.
    pub fn token_logprobs(&self, prompt: &BimodalPrompt, response: &[Token]) -> Result<Vec<f64>> {
        check_response(response)?;
        Ok((0..response.len())
            .map(|t| {
                let lp = self.log_softmax_at(&active_features(prompt, &response[..t]));
                lp[response[t].id()].max(crate::loss::PROB_FLOOR.ln())
            })
            .collect())
    }

    /// Adds `scale * d/dtheta log pi(response | prompt)` into `grad` and
    /// returns `log pi(response | prompt)`.
    pub fn accumulate_grad_logprob(
        &self,
        prompt: &BimodalPrompt,
        response: &[Token],
        scale: f64,
        grad: &mut ParamVec,
    ) -> Result<f64> {
        check_response(response)?;
        let mut total = 0.0;
        for t in 0..response.len() {
            let feats = active_features(prompt, &response[..t]);
            let lp = self.log_softmax_at(&feats);
            let target = response[t].id();
            total += lp[target].max(crate::loss::PROB_FLOOR.ln());
            if scale == 0.0 {
                continue;
            }
            let mut delta = [0.0; ANSWER_VOCAB];
            for (k, d) in delta.iter_mut().enumerate() {
                *d = -lp[k].exp();
            }
            delta[target] += 1.0;
            for &f in &feats {
                let row = &mut grad.0[f * ANSWER_VOCAB..(f + 1) * ANSWER_VOCAB];
                let first = first_scored_token(f);
                for (g, d) in row.iter_mut().zip(&delta).skip(first) {
                    *g += scale * d;
                }
            }
        }
        Ok(total)
    }

    /// Gradient of `log pi(response | prompt)`: per step `phi (x) (onehot - p)`.
    pub fn grad_logprob(&self, prompt: &BimodalPrompt, response: &[Token]) -> Result<ParamVec> {
        let mut g = ParamVec::zeros();
        self.accumulate_grad_logprob(prompt, response, 1.0, &mut g)?;
        Ok(g)
    }

    /// Greedy decoding under the masked prompt. Ties go to the lowest token id.
    /// The end token, when produced, is included in the output.
    pub fn respond(&self, prompt: &BimodalPrompt, mask: MaskMode, max_len: usize) -> Vec<Token> {
        let prompt = prompt.masked(mask);
        let mut out: Vec<Token> = Vec::new();
        while out.len() < max_len.max(1) {
            let lp = self.log_softmax_at(&active_features(&prompt, &out));
            let mut best = 0;
            for k in 1..ANSWER_VOCAB {
                if lp[k] > lp[best] {
                    best = k;
                }
            }
            let tok = Token::from_id(best).expect("answer token");
            out.push(tok);
            if tok == EOS {
                break;
            }
        }
        out
    }

    /// Flat `feature<TAB>token<TAB>weight` table of the non-zero weights.
    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CHECKPOINT_HEADER}").unwrap();
        writeln!(s, "# feature\ttoken\tweight").unwrap();
        for f in 0..N_FEATURES {
            for tok in vocab::answer_tokens() {
                let w = self.weight(f, tok);
                if w != 0.0 && is_free_weight(f, tok) {
                    writeln!(s, "{}\t{}\t{:?}", feature_name(f), tok, w).unwrap();
                }
            }
        }
        s
    }

    pub fn from_checkpoint_str(text: &str, path: &Path) -> Result<Self> {
        let malformed = |line: usize, msg: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CHECKPOINT_HEADER => {}
            Some((_, h)) if h.starts_with("napo-policy ") => {
                let found = h["napo-policy ".len()..].trim().parse().unwrap_or(0);
                return Err(Error::SchemaVersion { found, expected: 1 });
            }
            _ => return Err(malformed(1, "missing `napo-policy 1` header".into())),
        }
        let mut policy = LogLinearPolicy::zeros();
        for (i, line) in lines {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(malformed(i + 1, format!("expected 3 columns, got {}", cols.len())));
            }
            let f = parse_feature(cols[0]).map_err(|e| malformed(i + 1, e.to_string()))?;
            let t = Token::parse(cols[1]).map_err(|e| malformed(i + 1, e.to_string()))?;
            let w: f64 = cols[2]
                .parse()
                .map_err(|_| malformed(i + 1, format!("bad weight `{}`", cols[2])))?;
            if !w.is_finite() || !t.is_answer() {
                return Err(malformed(i + 1, "weight must be finite on an answer token".into()));
            }
            if !is_free_weight(f, t) {
                return Err(malformed(i + 1, format!("`{}` does not score `<eos>`", cols[0])));
            }
            policy.set_weight(f, t, w);
        }
        Ok(policy)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text, path)
    }
}

fn check_response(response: &[Token]) -> Result<()> {
    if response.is_empty() {
        return Err(Error::EmptyResponse);
    }
    if let Some(bad) = response.iter().find(|t| !t.is_answer()) {
        return Err(Error::UnknownToken(bad.as_str().into()));
    }
    Ok(())
}
