//! Learning loops: plain Q-learning and SARSA, DRoP, HAT and CHAT.

mod qtable;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use qtable::QTable;

use crate::confidence::{ConfUpdate, ConfidenceModel, UpdateMethod};
use crate::decision::{select, SelectModel, Source, SourceScores};
use crate::envs::{ActionId, DiscretizerSpec, Env, EnvConfig, EnvKind, FeatureVector, StateKey};
use crate::error::{Error, Result};
use crate::models::{PriorKind, PriorModel};
use crate::seeding::{derive_seed, rng_from, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Qlearn,
    Sarsa,
    Drop,
    Hat,
    Chat,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Qlearn => "qlearn",
            Method::Sarsa => "sarsa",
            Method::Drop => "drop",
            Method::Hat => "hat",
            Method::Chat => "chat",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qlearn" | "q" | "q-learning" => Ok(Method::Qlearn),
            "sarsa" => Ok(Method::Sarsa),
            "drop" => Ok(Method::Drop),
            "hat" => Ok(Method::Hat),
            "chat" => Ok(Method::Chat),
            _ => Err(Error::Config(format!(
                "unknown method `{s}` (qlearn, sarsa, drop, hat, chat)"
            ))),
        }
    }
}

pub const DEFAULT_GAMMA: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_CHAT_THRESHOLD: f64 = 0.6;

/// Learning-rate default: 0.2 for Cartpole, 1/320 for GridMario.
pub fn default_alpha(env: EnvKind) -> f64 {
    match env {
        EnvKind::Cartpole => 0.2,
        EnvKind::Gridmario => 1.0 / 320.0,
    }
}

/// Reuse-decay default: 0.999 for Cartpole, 0.9999 for GridMario.
pub fn default_phi(env: EnvKind) -> f64 {
    match env {
        EnvKind::Cartpole => 0.999,
        EnvKind::Gridmario => 0.9999,
    }
}

/// Learner settings. Method-specific fields may only be set for the
/// methods that use them; unset fields take per-env defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "gamma_default")]
    pub gamma: f64,
    #[serde(default = "epsilon_default")]
    pub epsilon: f64,
    /// DRoP only (default `she`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select: Option<SelectModel>,
    /// DRoP only (default `dru`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_method: Option<UpdateMethod>,
    /// DRoP only: the soft/hard switch inside S-H-e (default `epsilon`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub she_epsilon: Option<f64>,
    /// DRoP only: whether Q competes in the multi-source rule (default true).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub include_q: Option<bool>,
    /// HAT and CHAT only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    /// CHAT only (default 0.6).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chat_threshold: Option<f64>,
}

fn gamma_default() -> f64 {
    DEFAULT_GAMMA
}

fn epsilon_default() -> f64 {
    DEFAULT_EPSILON
}

/// All settings with defaults filled in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub method: Method,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub select: SelectModel,
    pub update_method: UpdateMethod,
    pub she_epsilon: f64,
    pub include_q: bool,
    pub phi: f64,
    pub chat_threshold: f64,
}

impl AgentConfig {
    pub fn new(method: Method) -> Self {
        AgentConfig {
            method,
            alpha: None,
            gamma: DEFAULT_GAMMA,
            epsilon: DEFAULT_EPSILON,
            select: None,
            update_method: None,
            she_epsilon: None,
            include_q: None,
            phi: None,
            chat_threshold: None,
        }
    }

    pub fn qlearn() -> Self {
        AgentConfig::new(Method::Qlearn)
    }

    pub fn drop(select: SelectModel, update_method: UpdateMethod) -> Self {
        AgentConfig {
            select: Some(select),
            update_method: Some(update_method),
            ..AgentConfig::new(Method::Drop)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.method;
        let only = |set: bool, field: &str, allowed: &[Method]| -> Result<()> {
            if set && !allowed.contains(&m) {
                return Err(Error::Config(format!("`{field}` does not apply to method {m}")));
            }
            Ok(())
        };
        only(self.select.is_some(), "select", &[Method::Drop])?;
        only(self.update_method.is_some(), "update_method", &[Method::Drop])?;
        only(self.she_epsilon.is_some(), "she_epsilon", &[Method::Drop])?;
        only(self.include_q.is_some(), "include_q", &[Method::Drop])?;
        only(self.phi.is_some(), "phi", &[Method::Hat, Method::Chat])?;
        only(self.chat_threshold.is_some(), "chat_threshold", &[Method::Chat])?;
        let unit = |v: f64, name: &str| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
            Ok(())
        };
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Config(format!("alpha must lie in (0, 1], got {a}")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        unit(self.epsilon, "epsilon")?;
        if let Some(e) = self.she_epsilon {
            unit(e, "she_epsilon")?;
        }
        if let Some(p) = self.phi {
            unit(p, "phi")?;
        }
        if let Some(t) = self.chat_threshold {
            if !t.is_finite() {
                return Err(Error::Config("chat_threshold must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, env: EnvKind) -> Result<Resolved> {
        self.validate()?;
        Ok(Resolved {
            method: self.method,
            alpha: self.alpha.unwrap_or_else(|| default_alpha(env)),
            gamma: self.gamma,
            epsilon: self.epsilon,
            select: self.select.unwrap_or(SelectModel::She),
            update_method: self.update_method.unwrap_or(UpdateMethod::Dru),
            she_epsilon: self.she_epsilon.unwrap_or(self.epsilon),
            include_q: self.include_q.unwrap_or(true),
            phi: self.phi.unwrap_or_else(|| default_phi(env)),
            chat_threshold: self.chat_threshold.unwrap_or(DEFAULT_CHAT_THRESHOLD),
        })
    }
}

/// How many of an episode's steps each source supplied.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCounts {
    pub explore: usize,
    pub q: usize,
    pub priors: Vec<usize>,
}

impl SourceCounts {
    pub fn new(priors: usize) -> Self {
        SourceCounts {
            explore: 0,
            q: 0,
            priors: vec![0; priors],
        }
    }

    pub fn total(&self) -> usize {
        self.explore + self.q + self.priors.iter().sum::<usize>()
    }

    fn add(&mut self, taken: Taken) {
        match taken {
            Taken::Explore => self.explore += 1,
            Taken::Q => self.q += 1,
            Taken::Prior(i) => self.priors[i] += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub steps: usize,
    pub source_counts: SourceCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_step_cp: Option<Vec<f64>>,
}

impl EpisodeLog {
    /// Fraction of steps drawn from prior `i`.
    pub fn prior_fraction(&self, i: usize) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.source_counts.priors.get(i).copied().unwrap_or(0) as f64 / self.steps as f64
        }
    }
}

/// Which branch produced an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taken {
    Explore,
    Q,
    Prior(usize),
}

/// An action together with what is needed to learn from its outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub action: ActionId,
    pub taken: Taken,
    /// The prior's max-softmax output when `taken` is a prior.
    pub prior_confidence: Option<f64>,
}

fn fresh_rng() -> Rng {
    rng_from(0)
}

/// A learner with its tables and priors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Agent {
    pub config: AgentConfig,
    pub params: Resolved,
    pub env_kind: EnvKind,
    pub discretizer: DiscretizerSpec,
    pub q: QTable,
    pub cq: ConfidenceModel,
    pub cps: Vec<ConfidenceModel>,
    pub priors: Vec<Arc<PriorModel>>,
    pub episodes_done: usize,
    /// Mean CP of the first prior over the states visited in the latest
    /// episode (AveC), when the agent has priors.
    #[serde(default)]
    pub last_ave_c: Option<f64>,
    #[serde(skip, default = "fresh_rng")]
    rng: Rng,
}

impl Agent {
    pub fn new(
        config: &AgentConfig,
        env_kind: EnvKind,
        priors: Vec<Arc<PriorModel>>,
        seed: u64,
    ) -> Result<Self> {
        Agent::with_discretizer(config, env_kind, env_kind.default_discretizer(), priors, seed)
    }

    pub fn with_discretizer(
        config: &AgentConfig,
        env_kind: EnvKind,
        discretizer: DiscretizerSpec,
        priors: Vec<Arc<PriorModel>>,
        seed: u64,
    ) -> Result<Self> {
        let p = config.resolve(env_kind)?;
        match p.method {
            Method::Qlearn | Method::Sarsa if !priors.is_empty() => {
                return Err(Error::Config(format!("{} takes no priors", p.method)));
            }
            Method::Hat | Method::Chat if priors.len() != 1 => {
                return Err(Error::Config(format!("{} takes exactly one prior", p.method)));
            }
            _ => {}
        }
        if p.method == Method::Chat && priors[0].kind() != PriorKind::Mlp {
            return Err(Error::Config("chat needs an mlp prior".into()));
        }
        for prior in &priors {
            if prior.env_kind != env_kind {
                return Err(Error::Config(format!(
                    "prior `{}` was trained on {}, not {env_kind}",
                    prior.source_id, prior.env_kind
                )));
            }
        }
        let r_max = env_kind.r_max();
        let cps = priors
            .iter()
            .map(|_| ConfidenceModel::cp(p.alpha, p.gamma, p.update_method, r_max))
            .collect::<Result<Vec<_>>>()?;
        Ok(Agent {
            config: config.clone(),
            params: p,
            env_kind,
            discretizer,
            q: QTable::new(env_kind.action_count(), p.alpha, p.gamma)?,
            cq: ConfidenceModel::cq(p.alpha, p.gamma)?,
            cps,
            priors,
            episodes_done: 0,
            last_ave_c: None,
            rng: rng_from(seed),
        })
    }

    /// Restarts the agent's random stream (after loading from disk).
    pub fn reseed(&mut self, seed: u64) {
        self.rng = rng_from(seed);
    }

    pub fn key(&self, features: &FeatureVector) -> Result<StateKey> {
        self.discretizer.discretize(features)
    }

    /// HAT/CHAT reuse probability for the current episode, `phi^(e+1)`.
    pub fn reuse_probability(&self) -> f64 {
        self.params.phi.powi(i32::try_from(self.episodes_done + 1).unwrap_or(i32::MAX))
    }

    fn epsilon_greedy(&mut self, key: &StateKey) -> Choice {
        if self.rng.gen::<f64>() < self.params.epsilon {
            Choice {
                action: ActionId(self.rng.gen_range(0..self.q.actions)),
                taken: Taken::Explore,
                prior_confidence: None,
            }
        } else {
            Choice {
                action: self.q.greedy(key, &mut self.rng),
                taken: Taken::Q,
                prior_confidence: None,
            }
        }
    }

    /// Picks the next action at `key` (the discretized `features`).
    pub fn choose(&mut self, key: &StateKey, features: &FeatureVector) -> Result<Choice> {
        let p = self.params;
        match p.method {
            Method::Qlearn | Method::Sarsa => Ok(self.epsilon_greedy(key)),
            Method::Drop => {
                if self.priors.is_empty() {
                    return Ok(self.epsilon_greedy(key));
                }
                if self.rng.gen::<f64>() < p.epsilon {
                    return Ok(Choice {
                        action: ActionId(self.rng.gen_range(0..self.q.actions)),
                        taken: Taken::Explore,
                        prior_confidence: None,
                    });
                }
                let scores = SourceScores::new(
                    self.cq.value(key),
                    self.cps.iter().map(|c| c.value(key)).collect(),
                );
                let choice = select(p.select, &scores, p.she_epsilon, p.include_q, &mut self.rng)?;
                Ok(match choice.source {
                    Source::Q => Choice {
                        action: self.q.greedy(key, &mut self.rng),
                        taken: Taken::Q,
                        prior_confidence: None,
                    },
                    Source::Prior(i) => {
                        let pred = self.priors[i].predict(features)?;
                        Choice {
                            action: pred.action,
                            taken: Taken::Prior(i),
                            prior_confidence: Some(pred.confidence),
                        }
                    }
                })
            }
            Method::Hat | Method::Chat => {
                let reuse = self.reuse_probability();
                if reuse > 0.0 && self.rng.gen::<f64>() < reuse {
                    let pred = self.priors[0].predict(features)?;
                    if p.method == Method::Hat || pred.confidence >= p.chat_threshold {
                        return Ok(Choice {
                            action: pred.action,
                            taken: Taken::Prior(0),
                            prior_confidence: Some(pred.confidence),
                        });
                    }
                }
                Ok(self.epsilon_greedy(key))
            }
        }
    }

    /// Learns from one executed transition. `next_action` is required for
    /// SARSA on non-terminal steps and ignored otherwise.
    pub fn learn(
        &mut self,
        key: &StateKey,
        choice: &Choice,
        reward: f64,
        next_key: &StateKey,
        terminal: bool,
        next_action: Option<ActionId>,
    ) -> Result<()> {
        match self.params.method {
            Method::Sarsa => {
                let a2 = match (terminal, next_action) {
                    (true, _) => ActionId(0),
                    (false, Some(a)) => a,
                    (false, None) => {
                        return Err(Error::Usage("sarsa needs the next action".into()));
                    }
                };
                self.q.sarsa_update(key, choice.action, reward, next_key, a2, terminal);
            }
            _ => {
                self.q.q_update(key, choice.action, reward, next_key, terminal);
            }
        }
        if self.params.method == Method::Drop {
            let u = ConfUpdate {
                state: key,
                next_state: next_key,
                reward,
                terminal,
                prior_confidence: choice.prior_confidence,
            };
            match choice.taken {
                Taken::Q => {
                    self.cq.update(u)?;
                }
                Taken::Prior(i) => {
                    self.cps[i].update(u)?;
                }
                Taken::Explore => {}
            }
        }
        Ok(())
    }

    /// Q update for an action supplied from outside (a live demonstrator).
    /// Confidence tables are left alone since no source was selected.
    pub fn learn_external(
        &mut self,
        key: &StateKey,
        action: ActionId,
        reward: f64,
        next_key: &StateKey,
        terminal: bool,
    ) {
        self.q.q_update(key, action, reward, next_key, terminal);
    }

    pub(crate) fn finish_episode(&mut self, cp_sum: f64, steps: usize) {
        if !self.cps.is_empty() && steps > 0 {
            self.last_ave_c = Some(cp_sum / steps as f64);
        }
        self.episodes_done += 1;
    }

    /// Plays one episode from the environment's current reset state,
    /// learning online. `features` is the initial observation.
    pub fn run_episode(
        &mut self,
        env: &mut Env,
        features: FeatureVector,
        record_cp: bool,
    ) -> Result<EpisodeLog> {
        let mut counts = SourceCounts::new(self.priors.len());
        let mut cp_trace = (record_cp && !self.cps.is_empty()).then(Vec::new);
        let mut cp_sum = 0.0;
        let mut ret = 0.0;
        let mut steps = 0;
        let mut key = self.key(&features)?;
        let mut choice = self.choose(&key, &features)?;
        loop {
            if let Some(cp) = self.cps.first() {
                let v = cp.value(&key);
                cp_sum += v;
                if let Some(trace) = cp_trace.as_mut() {
                    trace.push(v);
                }
            }
            counts.add(choice.taken);
            let out = env.step(choice.action)?;
            ret += out.reward;
            steps += 1;
            let next_key = self.key(&out.next_state)?;
            let next_choice = if self.params.method == Method::Sarsa {
                let next = if out.terminal {
                    None
                } else {
                    Some(self.choose(&next_key, &out.next_state)?)
                };
                self.learn(&key, &choice, out.reward, &next_key, out.terminal, next.map(|c| c.action))?;
                next
            } else {
                self.learn(&key, &choice, out.reward, &next_key, out.terminal, None)?;
                if out.terminal {
                    None
                } else {
                    Some(self.choose(&next_key, &out.next_state)?)
                }
            };
            match next_choice {
                None => break,
                Some(c) => {
                    choice = c;
                    key = next_key;
                }
            }
        }
        let log = EpisodeLog {
            episode: self.episodes_done,
            ret,
            steps,
            source_counts: counts,
            per_step_cp: cp_trace,
        };
        self.finish_episode(cp_sum, steps);
        Ok(log)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Seed for the environment reset of `episode` in a run seeded by `seed`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(derive_seed(seed, 1), episode as u64)
}

pub struct TrainingRun {
    pub logs: Vec<EpisodeLog>,
    pub agent: Agent,
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    env: &'a EnvConfig,
    agent: &'a AgentConfig,
    resolved: &'a Resolved,
    priors: Vec<&'a str>,
    episodes: usize,
    seed: u64,
}

fn csv_header(priors: usize) -> String {
    let mut h = String::from("episode,return,steps,explore,q");
    for i in 0..priors {
        h.push_str(&format!(",prior_{i}"));
    }
    h
}

fn csv_row(log: &EpisodeLog) -> String {
    let c = &log.source_counts;
    let mut row = format!("{},{},{},{},{}", log.episode, log.ret, log.steps, c.explore, c.q);
    for p in &c.priors {
        row.push_str(&format!(",{p}"));
    }
    row
}

/// Trains for `episodes` episodes. Everything is a function of `seed`.
///
/// With `out_dir`, writes `episodes.csv` as it goes (so a failed run keeps
/// its partial log) and, on success, `agent.json`, `q.csv`, `cq.csv`,
/// `cp_<i>.csv` and `config.json`.
pub fn run_training(
    env_config: &EnvConfig,
    agent_config: &AgentConfig,
    priors: Vec<Arc<PriorModel>>,
    episodes: usize,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<TrainingRun> {
    run_training_with(env_config, agent_config, priors, episodes, seed, out_dir, false)
}

/// [`run_training`] with optional per-step CP traces in the logs.
pub fn run_training_with(
    env_config: &EnvConfig,
    agent_config: &AgentConfig,
    priors: Vec<Arc<PriorModel>>,
    episodes: usize,
    seed: u64,
    out_dir: Option<&Path>,
    record_cp: bool,
) -> Result<TrainingRun> {
    env_config.validate()?;
    let mut env = Env::new(env_config)?;
    let mut agent = Agent::new(agent_config, env_config.env_kind, priors, derive_seed(seed, 0))?;
    let mut writer = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("episodes.csv");
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            writeln!(w, "{}", csv_header(agent.priors.len())).map_err(|e| Error::io(&path, e))?;
            Some((w, path))
        }
        None => None,
    };
    let mut logs = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let features = env.reset(episode_seed(seed, e));
        let log = agent.run_episode(&mut env, features, record_cp);
        let log = match log {
            Ok(l) => l,
            Err(err) => {
                if let Some((w, _)) = writer.as_mut() {
                    let _ = w.flush();
                }
                return Err(err);
            }
        };
        if let Some((w, path)) = writer.as_mut() {
            writeln!(w, "{}", csv_row(&log)).map_err(|e| Error::io(&*path, e))?;
            w.flush().map_err(|e| Error::io(&*path, e))?;
        }
        logs.push(log);
    }
    if let Some(dir) = out_dir {
        agent.save(dir.join("agent.json"))?;
        write_q_csv(&agent.q, &dir.join("q.csv"))?;
        agent.cq.write_snapshot_csv(dir.join("cq.csv"))?;
        for (i, cp) in agent.cps.iter().enumerate() {
            cp.write_snapshot_csv(dir.join(format!("cp_{i}.csv")))?;
        }
        let echo = ConfigEcho {
            env: env_config,
            agent: agent_config,
            resolved: &agent.params,
            priors: agent.priors.iter().map(|p| p.source_id.as_str()).collect(),
            episodes,
            seed,
        };
        let path = dir.join("config.json");
        fs::write(&path, serde_json::to_string_pretty(&echo)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(TrainingRun { logs, agent })
}

fn write_q_csv(q: &QTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["state".to_string()];
    header.extend((0..q.actions).map(|a| format!("a{a}")));
    w.write_record(&header)?;
    for (k, v) in q.snapshot() {
        let mut row = vec![k.to_string()];
        row.extend(v.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
