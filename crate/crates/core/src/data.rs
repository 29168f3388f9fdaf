//! Synthetic bimodal world and preference-record generation.
//!
//! Each record shows a scene (one value per attribute) and asks about one
//! attribute. Answers name the attribute, then the value: `color blue <eos>`.
//! Besides the truthful answer `y_w` and a generic wrong answer `y_l`, two
//! biased negatives are built by rule:
//!
//! * `y_lb` answers from the language prior alone: the prior-mode value of
//!   the questioned attribute. When the scene happens to show that value the
//!   response is correct and the record is flagged as LB noise.
//! * `y_vb` describes the whole scene and ignores the question. A `rho_vb`
//!   fraction is replaced by a terse correct answer (`blue <eos>`), flagged
//!   as VB noise.
//!
//! Generation is per record: every record draws from its own ChaCha stream
//! keyed by `(seed, record_id)`, so output never depends on scheduling.

use crate::error::{Error, Result};
use crate::margin::Role;
use crate::policy::{BimodalPrompt, LogLinearPolicy, MaskMode};
use crate::vocab::{self, Attribute, Token, EOS, N_ATTRIBUTES, N_VALUES, WHAT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const SCHEMA_VERSION: u64 = 1;

/// Categorical prior over each attribute's values: the mode gets `skew`,
/// the rest share `1 - skew` evenly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenePrior {
    pub skew: f64,
}

impl ScenePrior {
    pub fn probabilities(&self, attr: Attribute) -> [f64; N_VALUES] {
        let rest = (1.0 - self.skew) / (N_VALUES - 1) as f64;
        std::array::from_fn(|i| if i == attr.mode_index() { self.skew } else { rest })
    }

    fn sample(&self, attr: Attribute, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let probs = self.probabilities(attr);
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        N_VALUES - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scene {
    values: [Token; N_ATTRIBUTES],
}

impl Scene {
    pub fn new(values: [Token; N_ATTRIBUTES]) -> Result<Self> {
        for (a, v) in Attribute::ALL.iter().zip(values) {
            if a.value_index(v).is_none() {
                return Err(Error::InvalidParameter(format!("`{v}` is not a {a} value")));
            }
        }
        Ok(Scene { values })
    }

    pub fn from_visual(tokens: &[Token]) -> Result<Self> {
        if tokens.len() != N_ATTRIBUTES {
            return Err(Error::InvalidParameter(format!(
                "scene needs {N_ATTRIBUTES} visual tokens, got {}",
                tokens.len()
            )));
        }
        Scene::new(std::array::from_fn(|i| tokens[i]))
    }

    pub fn value(&self, attr: Attribute) -> Token {
        self.values[attr.index()]
    }

    pub fn tokens(&self) -> Vec<Token> {
        self.values.to_vec()
    }

    /// Attribute-by-attribute dump: `name value ... <eos>`.
    pub fn description(&self) -> Vec<Token> {
        let mut out = Vec::with_capacity(2 * N_ATTRIBUTES + 1);
        for a in Attribute::ALL {
            out.push(a.name_token());
            out.push(self.value(a));
        }
        out.push(EOS);
        out
    }
}

/// Ground-truth noise labels. Visible only to analysis code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseFlags {
    pub lb_noise: bool,
    pub vb_noise: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub id: u64,
    pub prompt: BimodalPrompt,
    pub y_w: Vec<Token>,
    pub y_l: Vec<Token>,
    pub y_lb: Vec<Token>,
    pub y_vb: Vec<Token>,
    pub noise: Option<NoiseFlags>,
    /// Unknown JSONL fields, carried through untouched.
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl PreferenceRecord {
    pub fn response(&self, role: Role) -> &[Token] {
        match role {
            Role::Rejected => &self.y_l,
            Role::LanguageBiased => &self.y_lb,
            Role::VisionBiased => &self.y_vb,
        }
    }

    pub fn question(&self) -> Result<Attribute> {
        self.prompt
            .question()
            .ok_or_else(|| Error::InvalidParameter(format!("record {} asks no question", self.id)))
    }

    pub fn scene(&self) -> Result<Scene> {
        Scene::from_visual(&self.prompt.visual_tokens)
    }

    /// Drops the noise labels; the training path only ever sees this.
    pub fn strip_noise(&self) -> PreferenceRecord {
        PreferenceRecord {
            noise: None,
            ..self.clone()
        }
    }

    pub fn flags(&self) -> Result<NoiseFlags> {
        self.noise.ok_or(Error::MissingNoiseFlags)
    }

    /// Checks the structural invariants a reader must enforce.
    pub fn validate(&self) -> Result<()> {
        let q = self.question()?;
        let scene = self.scene()?;
        if self.prompt.text_tokens.first() != Some(&WHAT) {
            return Err(Error::InvalidParameter(format!("record {}: question must start with `what`", self.id)));
        }
        for (name, r) in [("y_w", &self.y_w), ("y_l", &self.y_l), ("y_lb", &self.y_lb), ("y_vb", &self.y_vb)] {
            if r.is_empty() {
                return Err(Error::InvalidParameter(format!("record {}: `{name}` is empty", self.id)));
            }
            if let Some(t) = r.iter().find(|t| !t.is_answer()) {
                return Err(Error::UnknownToken(t.as_str().into()));
            }
        }
        if answer_value(&self.y_w, q) != Some(scene.value(q)) {
            return Err(Error::InvalidParameter(format!(
                "record {}: y_w does not answer `{q}` with `{}`",
                self.id,
                scene.value(q)
            )));
        }
        Ok(())
    }
}

/// First value token of `attr` in a response.
pub fn answer_value(response: &[Token], attr: Attribute) -> Option<Token> {
    response
        .iter()
        .copied()
        .find(|t| t.is_value() && t.attribute() == Some(attr))
}

/// `name value <eos>`.
pub fn answer(attr: Attribute, value: Token) -> Vec<Token> {
    vec![attr.name_token(), value, EOS]
}

/// First value token of any attribute: what a response commits to.
pub fn committed_value(response: &[Token]) -> Option<Token> {
    response.iter().copied().find(|t| t.is_value())
}

/// Recomputes the truthful answer from the scene alone.
pub fn oracle_answer(record: &PreferenceRecord) -> Result<Vec<Token>> {
    let q = record.question()?;
    Ok(answer(q, record.scene()?.value(q)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub n_records: usize,
    /// Probability of the mode value under the scene prior, in `(0.5, 1]`.
    pub prior_skew: f64,
    /// Fraction of records whose questioned attribute shows the prior mode.
    pub rho_lb: f64,
    /// Fraction of records whose vision-biased response is a concise correct answer.
    pub rho_vb: f64,
    /// Record ids start here; keeps held-out sets disjoint from training sets.
    pub id_offset: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            seed: 0,
            n_records: 5000,
            prior_skew: 0.8,
            rho_lb: 0.3,
            rho_vb: 0.3,
            id_offset: 0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.prior_skew > 0.5 && self.prior_skew <= 1.0) {
            return bad(format!("prior_skew must lie in (0.5, 1], got {}", self.prior_skew));
        }
        for (n, v) in [("rho_lb", self.rho_lb), ("rho_vb", self.rho_vb)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{n} must lie in [0, 1], got {v}"));
            }
        }
        if self.n_records == 0 {
            return bad("n_records must be positive".into());
        }
        Ok(())
    }
}

fn record_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn generate_record(cfg: &DataConfig, id: u64) -> PreferenceRecord {
    let mut rng = record_rng(cfg.seed, id);
    let prior = ScenePrior { skew: cfg.prior_skew };
    let q = Attribute::ALL[rng.gen_range(0..N_ATTRIBUTES)];
    let coincide = rng.gen::<f64>() < cfg.rho_lb;
    let vb_concise = rng.gen::<f64>() < cfg.rho_vb;

    let values: [Token; N_ATTRIBUTES] = std::array::from_fn(|i| {
        let a = Attribute::ALL[i];
        let idx = if a != q {
            prior.sample(a, &mut rng)
        } else if coincide {
            a.mode_index()
        } else {
            // uniform over the off-mode values
            let k = rng.gen_range(0..N_VALUES - 1);
            if k >= a.mode_index() {
                k + 1
            } else {
                k
            }
        };
        a.value(idx)
    });
    let scene = Scene { values };
    let truth = scene.value(q);
    let truth_idx = q.value_index(truth).unwrap();

    let wrong = {
        let k = rng.gen_range(0..N_VALUES - 1);
        q.value(if k >= truth_idx { k + 1 } else { k })
    };

    let y_vb = if vb_concise {
        terse_answer(truth)
    } else {
        scene.description()
    };

    PreferenceRecord {
        id,
        prompt: BimodalPrompt::new(scene.tokens(), vec![WHAT, q.name_token()]),
        y_w: answer(q, truth),
        y_l: answer(q, wrong),
        y_lb: answer(q, q.mode()),
        y_vb,
        noise: Some(NoiseFlags {
            lb_noise: truth == q.mode(),
            vb_noise: vb_concise,
        }),
        extra: Default::default(),
    }
}

/// `value <eos>`: correct, one token shorter than a full answer.
pub fn terse_answer(value: Token) -> Vec<Token> {
    vec![value, EOS]
}

/// Generates `n_records` records with ids `id_offset..id_offset + n`.
pub fn make_dataset(cfg: &DataConfig) -> Result<Vec<PreferenceRecord>> {
    cfg.validate()?;
    Ok((0..cfg.n_records as u64)
        .map(|i| generate_record(cfg, cfg.id_offset + i))
        .collect())
}

/// Replaces the rule-based biased responses with greedy decodes of `policy`
/// under the masked prompts. Noise flags become heuristic: a decode counts as
/// noise when it names the true value of the questioned attribute.
pub fn decode_biased_responses(
    records: &[PreferenceRecord],
    policy: &LogLinearPolicy,
    max_len: usize,
) -> Result<Vec<PreferenceRecord>> {
    records
        .iter()
        .map(|r| {
            let q = r.question()?;
            let truth = r.scene()?.value(q);
            let y_lb = policy.respond(&r.prompt, MaskMode::MaskVisual, max_len);
            let y_vb = policy.respond(&r.prompt, MaskMode::MaskText, max_len);
            let noise = NoiseFlags {
                lb_noise: answer_value(&y_lb, q) == Some(truth),
                vb_noise: y_vb.len() <= 3 && answer_value(&y_vb, q) == Some(truth),
            };
            Ok(PreferenceRecord {
                y_lb,
                y_vb,
                noise: Some(noise),
                ..r.clone()
            })
        })
        .collect()
}

/// Mean response length and mean length margin `|y_w| - |y_role|` for one
/// (role, noise flag) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthCell {
    pub count: usize,
    pub mean_len: f64,
    pub mean_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub mean_len_w: f64,
    pub lb_clean: LengthCell,
    pub lb_noisy: LengthCell,
    pub vb_clean: LengthCell,
    pub vb_noisy: LengthCell,
}

impl LengthStats {
    pub fn lb_gap(&self) -> f64 {
        (self.lb_clean.mean_margin - self.lb_noisy.mean_margin).abs()
    }

    pub fn vb_gap(&self) -> f64 {
        (self.vb_clean.mean_margin - self.vb_noisy.mean_margin).abs()
    }
}

pub fn length_stats(records: &[PreferenceRecord]) -> Result<LengthStats> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let cell = |role: Role, noisy: bool| -> Result<LengthCell> {
        let (mut n, mut len, mut margin) = (0usize, 0.0, 0.0);
        for r in records {
            let f = r.flags()?;
            let flag = if role == Role::LanguageBiased { f.lb_noise } else { f.vb_noise };
            if flag == noisy {
                let l = r.response(role).len() as f64;
                n += 1;
                len += l;
                margin += r.y_w.len() as f64 - l;
            }
        }
        let d = if n == 0 { f64::NAN } else { n as f64 };
        Ok(LengthCell {
            count: n,
            mean_len: len / d,
            mean_margin: margin / d,
        })
    };
    Ok(LengthStats {
        mean_len_w: records.iter().map(|r| r.y_w.len() as f64).sum::<f64>() / records.len() as f64,
        lb_clean: cell(Role::LanguageBiased, false)?,
        lb_noisy: cell(Role::LanguageBiased, true)?,
        vb_clean: cell(Role::VisionBiased, false)?,
        vb_noisy: cell(Role::VisionBiased, true)?,
    })
}

/// Realised noise rates `(lb, vb)`.
pub fn noise_rates(records: &[PreferenceRecord]) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (mut lb, mut vb) = (0usize, 0usize);
    for r in records {
        let f = r.flags()?;
        lb += f.lb_noise as usize;
        vb += f.vb_noise as usize;
    }
    let n = records.len() as f64;
    Ok((lb as f64 / n, vb as f64 / n))
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: u64,
    visual: Vec<String>,
    text: Vec<String>,
    y_w: Vec<String>,
    y_l: Vec<String>,
    y_lb: Vec<String>,
    y_vb: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lb_noise: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vb_noise: Option<bool>,
    schema: u64,
    #[serde(flatten)]
    extra: serde_json::Map<String, serde_json::Value>,
}

impl From<&PreferenceRecord> for JsonRecord {
    fn from(r: &PreferenceRecord) -> Self {
        JsonRecord {
            id: r.id,
            visual: vocab::token_strings(&r.prompt.visual_tokens),
            text: vocab::token_strings(&r.prompt.text_tokens),
            y_w: vocab::token_strings(&r.y_w),
            y_l: vocab::token_strings(&r.y_l),
            y_lb: vocab::token_strings(&r.y_lb),
            y_vb: vocab::token_strings(&r.y_vb),
            lb_noise: r.noise.map(|f| f.lb_noise),
            vb_noise: r.noise.map(|f| f.vb_noise),
            schema: SCHEMA_VERSION,
            extra: r.extra.clone(),
        }
    }
}

impl TryFrom<JsonRecord> for PreferenceRecord {
    type Error = Error;

    fn try_from(j: JsonRecord) -> Result<Self> {
        if j.schema != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: j.schema,
                expected: SCHEMA_VERSION,
            });
        }
        let noise = match (j.lb_noise, j.vb_noise) {
            (Some(lb_noise), Some(vb_noise)) => Some(NoiseFlags { lb_noise, vb_noise }),
            (None, None) => None,
            _ => return Err(Error::InvalidParameter("noise flags must be given together".into())),
        };
        let rec = PreferenceRecord {
            id: j.id,
            prompt: BimodalPrompt::new(vocab::parse_tokens(&j.visual)?, vocab::parse_tokens(&j.text)?),
            y_w: vocab::parse_tokens(&j.y_w)?,
            y_l: vocab::parse_tokens(&j.y_l)?,
            y_lb: vocab::parse_tokens(&j.y_lb)?,
            y_vb: vocab::parse_tokens(&j.y_vb)?,
            noise,
            extra: j.extra,
        };
        rec.validate()?;
        Ok(rec)
    }
}

pub fn record_to_json_line(r: &PreferenceRecord) -> Result<String> {
    Ok(serde_json::to_string(&JsonRecord::from(r))?)
}

pub fn write_jsonl(records: &[PreferenceRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = record_to_json_line(r)?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PreferenceRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |msg: String| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let j: JsonRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let rec = match PreferenceRecord::try_from(j) {
            Ok(r) => r,
            Err(e @ Error::SchemaVersion { .. }) => return Err(e),
            Err(e) => return Err(malformed(e.to_string())),
        };
        out.push(rec);
    }
    Ok(out)
}

/// Reads a dataset for training: noise flags are dropped on load.
pub fn read_jsonl_for_training(path: &Path) -> Result<Vec<PreferenceRecord>> {
    Ok(read_jsonl(path)?.iter().map(PreferenceRecord::strip_noise).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: usize, rho_lb: f64, rho_vb: f64) -> DataConfig {
        DataConfig {
            seed: 11,
            n_records: n,
            rho_lb,
            rho_vb,
            ..DataConfig::default()
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        for c in [
            DataConfig { prior_skew: 0.5, ..cfg(10, 0.1, 0.1) },
            DataConfig { prior_skew: 1.2, ..cfg(10, 0.1, 0.1) },
            cfg(10, -0.1, 0.1),
            cfg(10, 0.1, 1.5),
            cfg(0, 0.1, 0.1),
        ] {
            assert!(matches!(make_dataset(&c), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn forced_off_mode_never_coincides() {
        let c = DataConfig { prior_skew: 1.0, ..cfg(500, 0.0, 0.0) };
        let recs = make_dataset(&c).unwrap();
        assert!(recs.iter().all(|r| !r.noise.unwrap().lb_noise));
        // with a degenerate prior every non-questioned attribute sits on its mode
        for r in &recs {
            let q = r.question().unwrap();
            let s = r.scene().unwrap();
            for a in Attribute::ALL {
                assert_eq!(s.value(a) == a.mode(), a != q);
            }
        }
    }

    #[test]
    fn forced_coincidence_is_always_noise() {
        let recs = make_dataset(&cfg(500, 1.0, 1.0)).unwrap();
        assert!(recs.iter().all(|r| r.noise.unwrap().lb_noise && r.noise.unwrap().vb_noise));
        assert!(recs.iter().all(|r| r.y_lb == r.y_w));
    }

    #[test]
    fn deterministic_and_order_free() {
        let a = make_dataset(&cfg(300, 0.3, 0.3)).unwrap();
        let b = make_dataset(&cfg(300, 0.3, 0.3)).unwrap();
        assert_eq!(a, b);
        // record 250 does not depend on how many records precede it
        let shifted = make_dataset(&DataConfig { id_offset: 250, n_records: 1, ..cfg(1, 0.3, 0.3) }).unwrap();
        assert_eq!(shifted[0], a[250]);
        let other_seed = make_dataset(&DataConfig { seed: 12, ..cfg(300, 0.3, 0.3) }).unwrap();
        assert_ne!(a, other_seed);
    }

    #[test]
    fn responses_have_documented_shapes() {
        for r in make_dataset(&cfg(400, 0.4, 0.5)).unwrap() {
            r.validate().unwrap();
            let q = r.question().unwrap();
            let f = r.noise.unwrap();
            assert_eq!(r.y_w, oracle_answer(&r).unwrap());
            assert_eq!(r.y_lb, answer(q, q.mode()));
            assert_eq!(f.lb_noise, r.y_lb == r.y_w);
            assert_eq!(r.y_l[0], r.y_w[0]);
            assert_ne!(r.y_l[1], r.y_w[1]);
            assert_eq!(r.y_l[1].attribute(), Some(q));
            if f.vb_noise {
                assert_eq!(r.y_vb, terse_answer(r.y_w[1]));
                assert_eq!(answer_value(&r.y_vb, q), Some(r.y_w[1]));
            } else {
                assert_eq!(r.y_vb, r.scene().unwrap().description());
                // content tokens, end token excluded
                assert!(r.y_vb.len() - 1 >= 4 * (r.y_w.len() - 1));
            }
        }
    }

    #[test]
    fn noise_rates_track_rho() {
        let recs = make_dataset(&cfg(10_000, 0.3, 0.45)).unwrap();
        let (lb, vb) = noise_rates(&recs).unwrap();
        assert!((lb - 0.3).abs() < 0.02, "lb {lb}");
        assert!((vb - 0.45).abs() < 0.02, "vb {vb}");
    }

    #[test]
    fn prior_sums_to_one() {
        for skew in [0.55, 0.8, 1.0] {
            for a in Attribute::ALL {
                let s: f64 = ScenePrior { skew }.probabilities(a).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    fn rec(id: u64, y_w_len: usize, vb_len: usize, lb_noise: bool, vb_noise: bool) -> PreferenceRecord {
        let s = Scene::new(std::array::from_fn(|i| Attribute::ALL[i].value(0))).unwrap();
        PreferenceRecord {
            id,
            prompt: BimodalPrompt::new(s.tokens(), vec![WHAT, Attribute::Color.name_token()]),
            y_w: vec![EOS; y_w_len],
            y_l: vec![EOS; y_w_len],
            y_lb: vec![EOS; y_w_len],
            y_vb: vec![EOS; vb_len],
            noise: Some(NoiseFlags { lb_noise, vb_noise }),
            extra: Default::default(),
        }
    }

    #[test]
    fn length_stats_fixed_lengths() {
        // description length 12, answer length 2, half the VB responses noisy
        let recs: Vec<_> = (0..10)
            .map(|i| {
                let noisy = i % 2 == 0;
                rec(i, 2, if noisy { 2 } else { 12 }, i % 3 == 0, noisy)
            })
            .collect();
        let s = length_stats(&recs).unwrap();
        assert_eq!(s.vb_clean.mean_margin, -10.0);
        assert_eq!(s.vb_noisy.mean_margin, 0.0);
        assert_eq!(s.lb_clean.mean_margin, 0.0);
        assert_eq!(s.lb_noisy.mean_margin, 0.0);
        assert!(s.lb_gap() < s.vb_gap());
        assert!(length_stats(&[]).is_err());
        assert!(matches!(length_stats(&[recs[0].strip_noise()]), Err(Error::MissingNoiseFlags)));
    }

    #[test]
    fn generated_length_pattern() {
        let s = length_stats(&make_dataset(&cfg(2000, 0.3, 0.3)).unwrap()).unwrap();
        assert_eq!(s.lb_gap(), 0.0);
        assert_eq!(s.lb_clean.mean_margin, 0.0);
        assert_eq!(s.vb_clean.mean_margin, -6.0);
        assert_eq!(s.vb_noisy.mean_margin, 1.0);
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut recs = make_dataset(&cfg(20, 0.3, 0.3)).unwrap();
        recs[3].extra.insert("annotator".into(), serde_json::json!("x"));
        write_jsonl(&recs, &path).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), recs);
        let stripped = read_jsonl_for_training(&path).unwrap();
        assert!(stripped.iter().all(|r| r.noise.is_none()));

        let text = std::fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() - 10];
        std::fs::write(&path, cut).unwrap();
        match read_jsonl(&path) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 20),
            other => panic!("expected malformed error, got {other:?}"),
        }

        let bad_schema = record_to_json_line(&recs[0]).unwrap().replace("\"schema\":1", "\"schema\":2");
        std::fs::write(&path, bad_schema).unwrap();
        assert!(matches!(read_jsonl(&path), Err(Error::SchemaVersion { found: 2, .. })));

        let wrong_answer = record_to_json_line(&recs[0]).unwrap().replacen("\"y_w\":[\"", "\"y_w\":[\"x", 1);
        std::fs::write(&path, wrong_answer).unwrap();
        assert!(matches!(read_jsonl(&path), Err(Error::Malformed { line: 1, .. })));
    }

    #[test]
    fn decoded_generator_uses_masks() {
        let mut p = LogLinearPolicy::zeros();
        for a in Attribute::ALL {
            p.set_named(&format!("q:{a}"), a.name_token().as_str(), 4.0).unwrap();
            p.set_named(&format!("prev:{a}"), a.mode().as_str(), 9.0).unwrap();
            p.set_named(&format!("prev:{}", a.mode()), "<eos>", 9.0).unwrap();
        }
        let recs = make_dataset(&cfg(50, 0.5, 0.0)).unwrap();
        let dec = decode_biased_responses(&recs, &p, 10).unwrap();
        for (r, d) in recs.iter().zip(&dec) {
            let q = r.question().unwrap();
            assert_eq!(d.y_lb, answer(q, q.mode()));
            assert_eq!(d.noise.unwrap().lb_noise, r.noise.unwrap().lb_noise);
        }
    }

    proptest! {
        #[test]
        fn every_record_is_truthful(seed in 0u64..10_000, rho_lb in 0.0f64..=1.0, rho_vb in 0.0f64..=1.0) {
            let c = DataConfig { seed, n_records: 30, rho_lb, rho_vb, ..DataConfig::default() };
            for r in make_dataset(&c).unwrap() {
                prop_assert_eq!(&r.y_w, &oracle_answer(&r).unwrap());
            }
        }
    }
}
