//! Action-source arbitration between the Q-table and the priors.
//!
//! Scores are rescaled by `R = max(|cq|, |cp_1|, ...)` before the soft
//! rules; when `R = 0` every source is equally likely.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the next action comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Q,
    /// Index into the agent's prior list.
    Prior(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectModel {
    /// Hard: argmax confidence, ties broken uniformly.
    Hd,
    /// Soft: tanh-rescaled probabilities.
    Sd,
    /// Soft with probability epsilon, hard otherwise.
    She,
}

impl std::str::FromStr for SelectModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hd" => Ok(SelectModel::Hd),
            "sd" => Ok(SelectModel::Sd),
            "she" | "s-h-e" => Ok(SelectModel::She),
            _ => Err(Error::Config(format!("unknown decision model `{s}` (hd, sd, she)"))),
        }
    }
}

/// Confidence of the Q source and of each prior at the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceScores {
    pub cq: f64,
    pub cps: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceChoice {
    pub source: Source,
    /// Probability with which the deciding rule picked `source`.
    pub probability_used: f64,
}

impl SourceScores {
    pub fn new(cq: f64, cps: Vec<f64>) -> Self {
        SourceScores { cq, cps }
    }

    /// `R = max(|cq|, |cp_i|)`.
    pub fn normalizer(&self) -> f64 {
        self.cps.iter().fold(self.cq.abs(), |m, c| m.max(c.abs()))
    }

    fn rescale(&self, v: f64, r: f64) -> f64 {
        if r == 0.0 {
            0.0
        } else {
            v / r
        }
    }
}

/// `(P(q), P(prior))` for exactly one prior.
pub fn sd_probabilities(scores: &SourceScores) -> Result<[f64; 2]> {
    if scores.cps.len() != 1 {
        return Err(Error::Usage(format!(
            "soft decision takes exactly one prior, got {}; use select_multi",
            scores.cps.len()
        )));
    }
    let r = scores.normalizer();
    let tq = scores.rescale(scores.cq, r).tanh();
    let tp = scores.rescale(scores.cps[0], r).tanh();
    let (wq, wp) = (tq + 1.0, tp + 1.0);
    let denom = wq + wp;
    Ok([wq / denom, wp / denom])
}

/// Probabilities proportional to `tanh(rescaled) + 1` over the included
/// sources: `q` first when `include_q`, then each prior in order. `R` is
/// taken over the included sources only.
pub fn multi_probabilities(scores: &SourceScores, include_q: bool) -> Result<Vec<f64>> {
    if scores.cps.is_empty() {
        return Err(Error::Invalid("multi-source selection needs at least one prior".into()));
    }
    let r = if include_q {
        scores.normalizer()
    } else {
        scores.cps.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    };
    let mut weights = Vec::with_capacity(scores.cps.len() + 1);
    if include_q {
        weights.push(scores.rescale(scores.cq, r).tanh() + 1.0);
    }
    weights.extend(scores.cps.iter().map(|&c| scores.rescale(c, r).tanh() + 1.0));
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

pub fn select_hd<R: Rng + ?Sized>(scores: &SourceScores, rng: &mut R) -> SourceChoice {
    let mut best = scores.cq;
    let mut ties = 1usize;
    for &c in &scores.cps {
        if c > best {
            best = c;
            ties = 1;
        } else if c == best {
            ties += 1;
        }
    }
    let pick = if ties > 1 { rng.gen_range(0..ties) } else { 0 };
    let mut seen = 0;
    let mut source = Source::Q;
    if scores.cq == best {
        if pick == 0 {
            return SourceChoice {
                source,
                probability_used: 1.0 / ties as f64,
            };
        }
        seen = 1;
    }
    for (i, &c) in scores.cps.iter().enumerate() {
        if c == best {
            if seen == pick {
                source = Source::Prior(i);
                break;
            }
            seen += 1;
        }
    }
    SourceChoice {
        source,
        probability_used: 1.0 / ties as f64,
    }
}

pub fn select_sd<R: Rng + ?Sized>(scores: &SourceScores, rng: &mut R) -> Result<SourceChoice> {
    let [pq, pp] = sd_probabilities(scores)?;
    Ok(if rng.gen::<f64>() < pq {
        SourceChoice {
            source: Source::Q,
            probability_used: pq,
        }
    } else {
        SourceChoice {
            source: Source::Prior(0),
            probability_used: pp,
        }
    })
}

pub fn select_multi<R: Rng + ?Sized>(
    scores: &SourceScores,
    include_q: bool,
    rng: &mut R,
) -> Result<SourceChoice> {
    let probs = multi_probabilities(scores, include_q)?;
    let u = rng.gen::<f64>();
    let mut acc = 0.0;
    let last = probs.len() - 1;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc || i == last {
            let source = match (include_q, i) {
                (true, 0) => Source::Q,
                (true, i) => Source::Prior(i - 1),
                (false, i) => Source::Prior(i),
            };
            return Ok(SourceChoice {
                source,
                probability_used: p,
            });
        }
    }
    unreachable!("probabilities are non-empty")
}

/// Soft rule for any number of priors: the two-source formula for one
/// prior, the multi-source formula otherwise.
pub fn select_soft<R: Rng + ?Sized>(
    scores: &SourceScores,
    include_q: bool,
    rng: &mut R,
) -> Result<SourceChoice> {
    if scores.cps.len() == 1 && include_q {
        select_sd(scores, rng)
    } else {
        select_multi(scores, include_q, rng)
    }
}

/// With probability `epsilon` the soft rule decides, otherwise the hard rule.
pub fn select_she<R: Rng + ?Sized>(
    scores: &SourceScores,
    epsilon: f64,
    include_q: bool,
    rng: &mut R,
) -> Result<SourceChoice> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    if rng.gen::<f64>() < epsilon {
        select_soft(scores, include_q, rng)
    } else {
        Ok(select_hd(scores, rng))
    }
}

/// Dispatches on `model`.
pub fn select<R: Rng + ?Sized>(
    model: SelectModel,
    scores: &SourceScores,
    epsilon: f64,
    include_q: bool,
    rng: &mut R,
) -> Result<SourceChoice> {
    match model {
        SelectModel::Hd => Ok(select_hd(scores, rng)),
        SelectModel::Sd => select_soft(scores, include_q, rng),
        SelectModel::She => select_she(scores, epsilon, include_q, rng),
    }
}
