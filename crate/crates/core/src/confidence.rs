//! TD confidence tables: `CQ` for the learned Q knowledge and one `CP` per
//! prior source.
//!
//! Every update has the form
//! `C(s) <- (1 - F) C(s) + F (G(r) + gamma C(s'))`, where
//! - CQ: `F = alpha`, `G(r) = r`;
//! - CP with DRU: `F = alpha * conf`, `G(r) = r`;
//! - CP with DCU: `F = alpha`, `G(r) = r / r_max * conf`;
//!
//! and `conf` is the prior's max-softmax output at `s`. Terminal
//! transitions bootstrap from 0.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::envs::StateKey;
use crate::error::{Error, Result};
use crate::seeding::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMethod {
    /// Dynamic rate: the confidence scales the step size.
    Dru,
    /// Dynamic confidence: the confidence rescales the reward.
    Dcu,
}

impl std::str::FromStr for UpdateMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dru" => Ok(UpdateMethod::Dru),
            "dcu" => Ok(UpdateMethod::Dcu),
            _ => Err(Error::Config(format!("unknown update method `{s}` (dru, dcu)"))),
        }
    }
}

/// Which knowledge pool a table tracks, with the rule it updates by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConfidenceRule {
    Cq,
    Cp { method: UpdateMethod, r_max: f64 },
}

/// One transition fed to [`ConfidenceModel::update`].
#[derive(Debug, Clone, Copy)]
pub struct ConfUpdate<'a> {
    pub state: &'a StateKey,
    pub next_state: &'a StateKey,
    pub reward: f64,
    pub terminal: bool,
    /// Max-softmax output of the prior at `state`; required for CP tables
    /// and ignored by CQ.
    pub prior_confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceModel {
    #[serde(with = "table_serde")]
    table: FxHashMap<StateKey, f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub rule: ConfidenceRule,
}

mod table_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &FxHashMap<StateKey, f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut rows: Vec<(&StateKey, &f64)> = t.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        s.collect_seq(rows)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FxHashMap<StateKey, f64>, D::Error> {
        let rows: Vec<(StateKey, f64)> = Vec::deserialize(d)?;
        Ok(rows.into_iter().collect())
    }
}

fn check_rates(alpha: f64, gamma: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    Ok(())
}

impl ConfidenceModel {
    pub fn cq(alpha: f64, gamma: f64) -> Result<Self> {
        check_rates(alpha, gamma)?;
        Ok(ConfidenceModel {
            table: FxHashMap::default(),
            alpha,
            gamma,
            rule: ConfidenceRule::Cq,
        })
    }

    pub fn cp(alpha: f64, gamma: f64, method: UpdateMethod, r_max: f64) -> Result<Self> {
        check_rates(alpha, gamma)?;
        if method == UpdateMethod::Dcu && !(r_max > 0.0 && r_max.is_finite()) {
            return Err(Error::Config(format!("dcu needs r_max > 0, got {r_max}")));
        }
        Ok(ConfidenceModel {
            table: FxHashMap::default(),
            alpha,
            gamma,
            rule: ConfidenceRule::Cp { method, r_max },
        })
    }

    /// Stored value, or 0 for a state never updated.
    pub fn value(&self, state: &StateKey) -> f64 {
        self.table.get(state).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, f64)> {
        self.table.iter().map(|(k, v)| (k, *v))
    }

    /// Applies one TD update and returns the new `C(state)`.
    pub fn update(&mut self, u: ConfUpdate<'_>) -> Result<f64> {
        self.update_with_alpha(u, self.alpha)
    }

    fn update_with_alpha(&mut self, u: ConfUpdate<'_>, alpha: f64) -> Result<f64> {
        let (rate, target_reward) = match self.rule {
            ConfidenceRule::Cq => (alpha, u.reward),
            ConfidenceRule::Cp { method, r_max } => {
                let conf = u.prior_confidence.ok_or_else(|| {
                    Error::Invalid("cp update needs the prior's confidence".into())
                })?;
                if !(0.0..=1.0).contains(&conf) {
                    return Err(Error::Invalid(format!("prior confidence {conf} outside [0, 1]")));
                }
                match method {
                    UpdateMethod::Dru => (alpha * conf, u.reward),
                    UpdateMethod::Dcu => (alpha, u.reward / r_max * conf),
                }
            }
        };
        let next = if u.terminal { 0.0 } else { self.value(u.next_state) };
        let entry = self.table.entry(u.state.clone()).or_insert(0.0);
        *entry = (1.0 - rate) * *entry + rate * (target_reward + self.gamma * next);
        Ok(*entry)
    }

    /// Rows of `(state, value)` sorted by state, one per stored entry.
    pub fn snapshot(&self) -> Vec<(StateKey, f64)> {
        let mut rows: Vec<(StateKey, f64)> = self.table.iter().map(|(k, v)| (k.clone(), *v)).collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        rows
    }

    /// Writes the snapshot as CSV with columns `state,value`; the state is
    /// the space-separated bin list.
    pub fn write_snapshot_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["state", "value"])?;
        for (k, v) in self.snapshot() {
            w.write_record([k.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// A small finite MDP with explicit transition and reward tables.
///
/// `transitions[s][a]` lists `(next_state, probability)`; reaching a state
/// in `terminal` ends the episode.
#[derive(Debug, Clone)]
pub struct SmallMdp {
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    pub rewards: Vec<Vec<f64>>,
    pub terminal: Vec<bool>,
}

impl SmallMdp {
    pub fn states(&self) -> usize {
        self.transitions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.states();
        if n == 0 || n > 20 {
            return Err(Error::Invalid(format!("small mdp needs 1..=20 states, got {n}")));
        }
        if self.rewards.len() != n || self.terminal.len() != n {
            return Err(Error::Invalid("reward/terminal tables do not match state count".into()));
        }
        for (s, row) in self.transitions.iter().enumerate() {
            if row.len() != self.rewards[s].len() {
                return Err(Error::Invalid(format!("state {s}: action counts differ")));
            }
            for outs in row {
                let total: f64 = outs.iter().map(|o| o.1).sum();
                if (total - 1.0).abs() > 1e-9 || outs.iter().any(|o| o.0 >= n || o.1 < 0.0) {
                    return Err(Error::Invalid(format!("state {s}: bad transition row")));
                }
            }
        }
        Ok(())
    }

    /// A deterministic chain `0 -> 1 -> ... -> n-1` with reward 1 per step
    /// under action 0; the last state is terminal.
    pub fn chain(n: usize) -> Self {
        SmallMdp {
            transitions: (0..n).map(|s| vec![vec![((s + 1).min(n - 1), 1.0)]]).collect(),
            rewards: (0..n).map(|_| vec![1.0]).collect(),
            terminal: (0..n).map(|s| s == n - 1).collect(),
        }
    }

    fn sample_next(&self, s: usize, a: usize, u: f64) -> usize {
        let mut acc = 0.0;
        let outs = &self.transitions[s][a];
        for &(next, p) in outs {
            acc += p;
            if u < acc {
                return next;
            }
        }
        outs.last().expect("validated").0
    }
}

fn key(s: usize) -> StateKey {
    StateKey(vec![s as u16])
}

/// Exact value of `policy` under the model's `G` and `gamma`, by solving
/// `(I - gamma P) v = g` over the non-terminal states.
pub fn linear_solve_values(
    mdp: &SmallMdp,
    policy: &[usize],
    model: &ConfidenceModel,
    prior_confidence: f64,
) -> Result<Vec<f64>> {
    mdp.validate()?;
    let n = mdp.states();
    let g = |r: f64| match model.rule {
        ConfidenceRule::Cp {
            method: UpdateMethod::Dcu,
            r_max,
        } => r / r_max * prior_confidence,
        _ => r,
    };
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        if mdp.terminal[s] {
            continue;
        }
        let act = policy[s];
        b[s] = g(mdp.rewards[s][act]);
        for &(next, p) in &mdp.transitions[s][act] {
            if !mdp.terminal[next] {
                a[(s, next)] -= model.gamma * p;
            }
        }
    }
    let v = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Invalid("singular value system".into()))?;
    Ok(v.iter().copied().collect())
}

/// Runs `samples` TD updates under the fixed `policy` and returns the
/// largest absolute gap to [`linear_solve_values`] over non-terminal states.
///
/// Transitions are drawn from uniformly chosen non-terminal states. The
/// step size decays per state as `alpha * k / (k + visits)`, which keeps
/// the Robbins-Monro conditions.
pub fn fixed_policy_convergence_check(
    mdp: &SmallMdp,
    policy: &[usize],
    model: &mut ConfidenceModel,
    prior_confidence: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    const DECAY: f64 = 200.0;
    let oracle = linear_solve_values(mdp, policy, model, prior_confidence)?;
    let live: Vec<usize> = (0..mdp.states()).filter(|&s| !mdp.terminal[s]).collect();
    if live.is_empty() {
        return Ok(0.0);
    }
    let conf = match model.rule {
        ConfidenceRule::Cq => None,
        ConfidenceRule::Cp { .. } => Some(prior_confidence),
    };
    let mut rng = rng_from(seed);
    let mut visits = vec![0usize; mdp.states()];
    for _ in 0..samples {
        let s = live[rng.gen_range(0..live.len())];
        let a = policy[s];
        let next = mdp.sample_next(s, a, rng.gen::<f64>());
        let alpha = model.alpha * DECAY / (DECAY + visits[s] as f64);
        visits[s] += 1;
        let (sk, nk) = (key(s), key(next));
        model.update_with_alpha(
            ConfUpdate {
                state: &sk,
                next_state: &nk,
                reward: mdp.rewards[s][a],
                terminal: mdp.terminal[next],
                prior_confidence: conf,
            },
            alpha,
        )?;
    }
    Ok(live
        .iter()
        .map(|&s| (model.value(&key(s)) - oracle[s]).abs())
        .fold(0.0, f64::max))
}

/// The snapshot CSV as a string.
pub fn snapshot_csv_string(model: &ConfidenceModel) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["state", "value"])?;
    for (k, v) in model.snapshot() {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Invalid(e.to_string()))
}
