//! Confidence-triggered demonstration requests and the interactive session
//! that serves a live demonstrator.
//!
//! While the agent acts, each visited state's neighbourhood CP average is
//! compared against AveC, the mean CP over the previous episode's visited
//! states. When the neighbourhood falls strictly below it, the session asks
//! the demonstrator for `horizon` actions and records them.

use std::path::Path;
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::agents::{Agent, Method};
use crate::confidence::ConfidenceModel;
use crate::demos::{collect_demonstrations, DemoDataset, DemoRecord};
use crate::envs::{ActionId, Env, EnvConfig, FeatureVector, StateKey};
use crate::error::{Error, Result};
use crate::policy::ActionSource;
use crate::seeding::{derive_seed, rng_from, Rng};

/// AveC: the mean of the CP values seen along one episode.
pub fn episode_avg_cp(per_step_cp: &[f64]) -> Result<f64> {
    if per_step_cp.is_empty() {
        return Err(Error::Invalid("AveC of an empty episode".into()));
    }
    Ok(per_step_cp.iter().sum::<f64>() / per_step_cp.len() as f64)
}

/// Mean CP over stored states whose `dims` bins lie in the half-open window
/// `[c - w/2, c + w/2)` around `center`. States never updated do not count;
/// an empty window averages to 0.
pub fn window_avg_cp(
    cp: &ConfidenceModel,
    center: &StateKey,
    dims: (usize, usize),
    window: (u16, u16),
) -> f64 {
    let inside = |bin: u16, c: u16, w: u16| {
        let (b, c, half) = (i32::from(bin), i32::from(c), i32::from(w / 2));
        b >= c - half && b < c - half + i32::from(w)
    };
    let (ca, cb) = (center.0[dims.0], center.0[dims.1]);
    let (mut sum, mut n) = (0.0, 0usize);
    for (key, v) in cp.iter() {
        if inside(key.0[dims.0], ca, window.0) && inside(key.0[dims.1], cb, window.1) {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Strict: a window exactly at AveC does not trigger.
pub fn should_request(window_avg: f64, ave_c: f64) -> bool {
    window_avg < ave_c
}

fn default_timeout() -> f64 {
    30.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestPolicy {
    pub window: (u16, u16),
    pub horizon: usize,
    pub budget_episodes: usize,
    /// Seconds to wait for each demonstrator action.
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

impl Default for RequestPolicy {
    fn default() -> Self {
        RequestPolicy {
            window: (10, 10),
            horizon: 20,
            budget_episodes: 20,
            timeout_secs: default_timeout(),
        }
    }
}

impl RequestPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.window.0 == 0 || self.window.1 == 0 || self.horizon == 0 || self.budget_episodes == 0 {
            return Err(Error::Config("window, horizon and budget_episodes must be positive".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config(format!("timeout must be positive, got {}", self.timeout_secs)));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AgentActing,
    AwaitingDemo,
    Done,
}

/// The session's mutable core. `pending_horizon > 0` exactly when the
/// phase is `AwaitingDemo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: Phase,
    pub pending_horizon: usize,
    pub collected: Vec<DemoRecord>,
}

impl SessionState {
    fn new() -> Self {
        SessionState {
            phase: Phase::AgentActing,
            pending_horizon: 0,
            collected: Vec::new(),
        }
    }

    pub fn is_consistent(&self) -> bool {
        (self.pending_horizon > 0) == (self.phase == Phase::AwaitingDemo)
    }

    fn start_request(&mut self, horizon: usize) {
        self.phase = Phase::AwaitingDemo;
        self.pending_horizon = horizon;
    }

    fn clear_request(&mut self) {
        if self.phase == Phase::AwaitingDemo {
            self.phase = Phase::AgentActing;
        }
        self.pending_horizon = 0;
    }

    fn record(&mut self, r: DemoRecord) {
        self.collected.push(r);
        self.pending_horizon -= 1;
        if self.pending_horizon == 0 {
            self.phase = Phase::AgentActing;
        }
    }
}

/// Server-to-client frames of the session protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    State {
        session: String,
        features: Vec<f64>,
        render: serde_json::Value,
        phase: Phase,
        remaining: usize,
    },
    RequestDemo {
        horizon: usize,
    },
    Ack {
        recorded: bool,
    },
    SessionDone {
        collected: usize,
        active_seconds: f64,
    },
    Error {
        message: String,
    },
}

/// Client-to-server frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    Start { env: String, artifacts_path: String },
    Action { action: usize },
}

/// Whoever supplies demonstration actions: a person behind the UI or a
/// scripted agent.
pub trait DemonstratorPort {
    /// Observes every frame the session emits.
    fn notify(&mut self, _msg: &ServerMsg) {}

    /// Blocks for the next action at `features`, giving up after `timeout`
    /// with [`Error::Demonstrator`].
    fn next_action(&mut self, env: &Env, features: &FeatureVector, timeout: Duration) -> Result<ActionId>;
}

/// Wraps an [`ActionSource`] so a scripted agent can answer requests.
pub struct ScriptedDemonstrator<S> {
    pub source: S,
    rng: Rng,
}

impl<S: ActionSource> ScriptedDemonstrator<S> {
    pub fn new(source: S, seed: u64) -> Self {
        ScriptedDemonstrator {
            source,
            rng: rng_from(seed),
        }
    }
}

impl<S: ActionSource> DemonstratorPort for ScriptedDemonstrator<S> {
    fn next_action(&mut self, env: &Env, features: &FeatureVector, _timeout: Duration) -> Result<ActionId> {
        self.source.act_in(env, features, &mut self.rng)
    }
}

/// A port fed by channels, for demonstrators on another thread (the
/// WebSocket server). Stale actions are discarded when a request starts.
pub struct ChannelPort {
    pub outgoing: Sender<ServerMsg>,
    pub incoming: Receiver<ClientMsg>,
}

impl DemonstratorPort for ChannelPort {
    fn notify(&mut self, msg: &ServerMsg) {
        if matches!(msg, ServerMsg::RequestDemo { .. }) {
            while self.incoming.try_recv().is_ok() {}
        }
        // A vanished client surfaces as a timeout on the next request.
        let _ = self.outgoing.send(msg.clone());
    }

    fn next_action(&mut self, _env: &Env, _features: &FeatureVector, timeout: Duration) -> Result<ActionId> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.incoming.recv_timeout(left) {
                Ok(ClientMsg::Action { action }) => return Ok(ActionId(action)),
                Ok(ClientMsg::Start { .. }) => {
                    let _ = self.outgoing.send(ServerMsg::Error {
                        message: "session already started".into(),
                    });
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Demonstrator(format!("no action within {:.1}s", timeout.as_secs_f64())));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Demonstrator("demonstrator disconnected".into()));
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectionReport {
    pub episodes: usize,
    pub requests: usize,
    pub abandoned: usize,
    /// Demonstrator actions executed and recorded.
    pub active_steps: usize,
    /// Wall time spent waiting on the demonstrator.
    pub active_seconds: f64,
    pub agent_steps: usize,
    /// AveC in force during each episode.
    pub ave_c: Vec<f64>,
}

pub struct Collection {
    pub dataset: DemoDataset,
    pub report: CollectionReport,
}

/// Loads the agent saved by a training run (`agent.json` in `dir`).
pub fn load_artifacts(dir: impl AsRef<Path>) -> Result<Agent> {
    Agent::load(dir.as_ref().join("agent.json"))
}

/// One live collection session.
pub struct Session<'p> {
    pub id: String,
    env: Env,
    agent: Agent,
    policy: RequestPolicy,
    dims: (usize, usize),
    port: &'p mut dyn DemonstratorPort,
    pub state: SessionState,
    ave_c: f64,
    seed: u64,
    report: CollectionReport,
}

impl<'p> Session<'p> {
    pub fn new(
        id: impl Into<String>,
        env_config: &EnvConfig,
        mut agent: Agent,
        policy: RequestPolicy,
        port: &'p mut dyn DemonstratorPort,
        seed: u64,
    ) -> Result<Self> {
        policy.validate()?;
        env_config.validate()?;
        if agent.params.method != Method::Drop || agent.cps.is_empty() {
            return Err(Error::Config("demonstration requests need a DRoP agent with a prior".into()));
        }
        if agent.env_kind != env_config.env_kind {
            return Err(Error::Config(format!(
                "agent was trained on {}, session runs {}",
                agent.env_kind, env_config.env_kind
            )));
        }
        let ave_c = agent
            .last_ave_c
            .ok_or_else(|| Error::Config("the trained agent carries no AveC; train it for at least one episode".into()))?;
        let dims = env_config.env_kind.position_dims();
        if dims.0.max(dims.1) >= agent.discretizer.dim_count() {
            return Err(Error::Config("position dims outside the discretizer".into()));
        }
        agent.reseed(derive_seed(seed, 0));
        Ok(Session {
            id: id.into(),
            env: Env::new(env_config)?,
            agent,
            policy,
            dims,
            port,
            state: SessionState::new(),
            ave_c,
            seed,
            report: CollectionReport::default(),
        })
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    fn frame(&self, features: &FeatureVector) -> ServerMsg {
        ServerMsg::State {
            session: self.id.clone(),
            features: features.as_slice().to_vec(),
            render: self.env.render(),
            phase: self.state.phase,
            remaining: self.state.pending_horizon,
        }
    }

    fn run_episode(&mut self, episode: usize) -> Result<()> {
        let mut features = self.env.reset(derive_seed(derive_seed(self.seed, 1), episode as u64));
        let (mut cp_sum, mut steps) = (0.0, 0usize);
        self.report.ave_c.push(self.ave_c);
        loop {
            let key = self.agent.key(&features)?;
            let cp = &self.agent.cps[0];
            cp_sum += cp.value(&key);
            if self.state.phase == Phase::AgentActing
                && should_request(window_avg_cp(cp, &key, self.dims, self.policy.window), self.ave_c)
            {
                self.state.start_request(self.policy.horizon);
                self.report.requests += 1;
                self.port.notify(&ServerMsg::RequestDemo {
                    horizon: self.policy.horizon,
                });
            }
            let frame = self.frame(&features);
            self.port.notify(&frame);

            let mut demo_action = None;
            if self.state.phase == Phase::AwaitingDemo {
                let t0 = Instant::now();
                let answer = self.port.next_action(&self.env, &features, self.policy.timeout());
                self.report.active_seconds += t0.elapsed().as_secs_f64();
                match answer {
                    Ok(a) if a.0 < self.env.action_count() => demo_action = Some(a),
                    Ok(a) => {
                        log::warn!("request abandoned: demonstrator sent invalid action {a}");
                        self.port.notify(&ServerMsg::Error {
                            message: format!("action {a} outside [0, {})", self.env.action_count()),
                        });
                        self.abandon();
                    }
                    Err(e) => {
                        log::warn!("request abandoned: {e}");
                        self.abandon();
                    }
                }
            }

            let out = match demo_action {
                Some(a) => {
                    debug_assert_eq!(self.env.observation(), features);
                    let out = self.env.step(a)?;
                    let next_key = self.agent.key(&out.next_state)?;
                    self.agent.learn_external(&key, a, out.reward, &next_key, out.terminal);
                    self.state.record(DemoRecord {
                        episode,
                        step: steps,
                        features: features.clone(),
                        action: a,
                        reward: out.reward,
                        terminal: out.terminal,
                    });
                    self.report.active_steps += 1;
                    self.port.notify(&ServerMsg::Ack { recorded: true });
                    out
                }
                None => {
                    let choice = self.agent.choose(&key, &features)?;
                    let out = self.env.step(choice.action)?;
                    let next_key = self.agent.key(&out.next_state)?;
                    self.agent.learn(&key, &choice, out.reward, &next_key, out.terminal, None)?;
                    self.report.agent_steps += 1;
                    out
                }
            };
            steps += 1;
            if out.terminal {
                break;
            }
            features = out.next_state;
        }
        self.state.clear_request();
        self.ave_c = cp_sum / steps as f64;
        self.agent.finish_episode(cp_sum, steps);
        self.report.episodes += 1;
        Ok(())
    }

    fn abandon(&mut self) {
        self.report.abandoned += 1;
        self.state.clear_request();
    }

    /// Runs the whole budget and returns the requested demonstrations.
    pub fn run(mut self) -> Result<(Collection, Agent)> {
        for e in 0..self.policy.budget_episodes {
            self.run_episode(e)?;
        }
        self.state.phase = Phase::Done;
        self.port.notify(&ServerMsg::SessionDone {
            collected: self.state.collected.len(),
            active_seconds: self.report.active_seconds,
        });
        let dataset = DemoDataset::new(
            format!("requested-{}", self.id),
            self.agent.env_kind,
            std::mem::take(&mut self.state.collected),
        )?;
        Ok((
            Collection {
                dataset,
                report: self.report,
            },
            self.agent,
        ))
    }
}

/// Runs `policy.budget_episodes` episodes with the trained `agent`,
/// requesting demonstrations from `port` wherever local confidence is low.
pub fn run_interactive_collection(
    env_config: &EnvConfig,
    agent: Agent,
    policy: RequestPolicy,
    port: &mut dyn DemonstratorPort,
    seed: u64,
) -> Result<Collection> {
    Session::new("local", env_config, agent, policy, port, seed)?.run().map(|(c, _)| c)
}

/// The comparison point: the same demonstrator recording `episodes` full
/// episodes. Returns the dataset and the seconds it took.
pub fn full_episode_baseline(
    env_config: &EnvConfig,
    source: &mut dyn ActionSource,
    episodes: usize,
    seed: u64,
) -> Result<(DemoDataset, f64)> {
    let t0 = Instant::now();
    let ds = collect_demonstrations(env_config, source, episodes, seed, "full-episodes")?;
    Ok((ds, t0.elapsed().as_secs_f64()))
}
