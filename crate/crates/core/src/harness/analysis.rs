//! Margin distributions split by noise flag.

use crate::data::{length_stats, LengthStats, PreferenceRecord};
use crate::error::{Error, Result};
use crate::margin::{reward_margin, score_sequence, MarginKind, Role};
use crate::policy::LogLinearPolicy;
use serde::{Deserialize, Serialize};

/// Uniform bins over `[lo, hi]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins spanning the sample's own range. A constant sample lands in bin 0.
    pub fn from_samples(xs: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
        }
        let mut counts = vec![0usize; bins];
        if xs.is_empty() {
            return Ok(Histogram { lo: 0.0, hi: 0.0, counts });
        }
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        for &x in xs {
            let b = if width > 0.0 { ((x - lo) / width) as usize } else { 0 };
            counts[b.min(bins - 1)] += 1;
        }
        Ok(Histogram { lo, hi, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// One (role, margin kind, noise flag) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub role: Role,
    pub kind: MarginKind,
    pub noisy: bool,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingStatus {
    /// Noise-free mean is above the noisy mean.
    Holds,
    Violated,
    /// Every margin is zero, e.g. when policy and reference coincide.
    Degenerate,
    /// One of the two cells is empty.
    Undefined,
}

/// Noise-free against noisy mean for one (role, kind).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub role: Role,
    pub kind: MarginKind,
    pub clean_mean: f64,
    pub noisy_mean: f64,
    /// Pooled-variance standard error of the difference of means.
    pub pooled_se: f64,
    pub status: OrderingStatus,
}

impl OrderingCheck {
    /// `(clean_mean - noisy_mean) / pooled_se`.
    pub fn z(&self) -> f64 {
        (self.clean_mean - self.noisy_mean) / self.pooled_se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginAnalysis {
    pub beta: f64,
    pub n_records: usize,
    pub panels: Vec<Panel>,
    /// Language-biased under `psi_avg`, then vision-biased under `psi_sum`.
    pub orderings: Vec<OrderingCheck>,
    pub length_stats: LengthStats,
}

impl MarginAnalysis {
    pub fn panel(&self, role: Role, kind: MarginKind, noisy: bool) -> Option<&Panel> {
        self.panels.iter().find(|p| p.role == role && p.kind == kind && p.noisy == noisy)
    }

    pub fn ordering(&self, role: Role) -> Option<&OrderingCheck> {
        self.orderings.iter().find(|o| o.role == role)
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn pooled_se(a: &Panel, b: &Panel) -> f64 {
    let (na, nb) = (a.n as f64, b.n as f64);
    if a.n + b.n <= 2 {
        return f64::NAN;
    }
    let pooled_var = ((na - 1.0) * a.sd.powi(2) + (nb - 1.0) * b.sd.powi(2)) / (na + nb - 2.0);
    (pooled_var * (1.0 / na + 1.0 / nb)).sqrt()
}

/// Margins of `y_w` over `y_lb` and `y_vb` for every record, binned per
/// (role, kind, noise flag). With a reference these are the usual reward
/// margins; without one they are `policy`'s own beta-scaled log-probability
/// margins.
pub fn analyze_margins(
    records: &[PreferenceRecord],
    policy: &LogLinearPolicy,
    reference: Option<&LogLinearPolicy>,
    beta: f64,
    bins: usize,
) -> Result<MarginAnalysis> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let flags = records.iter().map(|r| r.flags()).collect::<Result<Vec<_>>>()?;
    let roles = [Role::LanguageBiased, Role::VisionBiased];
    let mut panels = Vec::new();
    let mut all_zero = true;
    for role in roles {
        for kind in MarginKind::ALL {
            let mut split: [Vec<f64>; 2] = Default::default();
            for (r, f) in records.iter().zip(&flags) {
                let noisy = if role == Role::LanguageBiased { f.lb_noise } else { f.vb_noise };
                let y_o = r.response(role);
                let m = match reference {
                    Some(rf) => reward_margin(policy, rf, &r.prompt, &r.y_w, y_o, beta, kind)?,
                    None => {
                        let w = score_sequence(policy, &r.prompt, &r.y_w)?;
                        let o = score_sequence(policy, &r.prompt, y_o)?;
                        beta * (w.get(kind) - o.get(kind))
                    }
                };
                all_zero &= m == 0.0;
                split[noisy as usize].push(m);
            }
            for (noisy, xs) in [false, true].into_iter().zip(&split) {
                let (mean, sd) = mean_sd(xs);
                panels.push(Panel {
                    role,
                    kind,
                    noisy,
                    n: xs.len(),
                    mean,
                    sd,
                    histogram: Histogram::from_samples(xs, bins)?,
                });
            }
        }
    }
    let find = |role, kind, noisy| {
        panels
            .iter()
            .find(|p: &&Panel| p.role == role && p.kind == kind && p.noisy == noisy)
            .expect("every panel is built")
    };
    let orderings = [(Role::LanguageBiased, MarginKind::AvgLogP), (Role::VisionBiased, MarginKind::SumLogP)]
        .into_iter()
        .map(|(role, kind)| {
            let (clean, noisy) = (find(role, kind, false), find(role, kind, true));
            let status = if all_zero {
                OrderingStatus::Degenerate
            } else if clean.n == 0 || noisy.n == 0 {
                OrderingStatus::Undefined
            } else if clean.mean > noisy.mean {
                OrderingStatus::Holds
            } else {
                OrderingStatus::Violated
            };
            OrderingCheck {
                role,
                kind,
                clean_mean: clean.mean,
                noisy_mean: noisy.mean,
                pooled_se: pooled_se(clean, noisy),
                status,
            }
        })
        .collect();
    Ok(MarginAnalysis {
        beta,
        n_records: records.len(),
        panels,
        orderings,
        length_stats: length_stats(records)?,
    })
}
