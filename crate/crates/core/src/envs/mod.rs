//! Environments and the state discretizer shared by every value table.

mod cartpole;
mod discretize;
mod gridmario;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cartpole::{CartPole, CartPoleState};
pub use discretize::{DimSpec, DiscretizerSpec, StateKey};
pub use gridmario::{GridMario, Level, MarioAction, MarioState, Tile, ENEMY_PERIOD, GROUND_TOP, LEVEL_COUNT};

/// Numeric feature encoding of an environment observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "feature {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of a discrete action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: FeatureVector,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Cartpole,
    Gridmario,
}

impl EnvKind {
    pub fn feature_count(self) -> usize {
        match self {
            EnvKind::Cartpole => cartpole::FEATURE_COUNT,
            EnvKind::Gridmario => gridmario::FEATURE_COUNT,
        }
    }

    pub fn action_count(self) -> usize {
        match self {
            EnvKind::Cartpole => cartpole::ACTION_COUNT,
            EnvKind::Gridmario => gridmario::ACTION_COUNT,
        }
    }

    pub fn default_max_steps(self) -> usize {
        match self {
            EnvKind::Cartpole => 2500,
            EnvKind::Gridmario => 600,
        }
    }

    /// Largest absolute single-step reward; the DCU reward normalizer.
    pub fn r_max(self) -> f64 {
        match self {
            EnvKind::Cartpole => 500.0,
            EnvKind::Gridmario => 200.0,
        }
    }

    /// Discretized dimensions treated as the two "position" axes of the
    /// demonstration-request window.
    pub fn position_dims(self) -> (usize, usize) {
        match self {
            EnvKind::Cartpole => (0, 2),
            EnvKind::Gridmario => (0, 1),
        }
    }

    pub fn default_discretizer(self) -> DiscretizerSpec {
        match self {
            EnvKind::Cartpole => DiscretizerSpec::cartpole(),
            EnvKind::Gridmario => DiscretizerSpec::gridmario(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Cartpole => "cartpole",
            EnvKind::Gridmario => "gridmario",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cartpole" => Ok(EnvKind::Cartpole),
            "gridmario" | "mario" => Ok(EnvKind::Gridmario),
            other => Err(Error::Config(format!("unknown environment kind `{other}`"))),
        }
    }
}

/// Looks up the request-window dimensions by environment name.
pub fn position_dims(env_kind: &str) -> Result<(usize, usize)> {
    Ok(env_kind.parse::<EnvKind>()?.position_dims())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub env_kind: EnvKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub level_id: u32,
}

impl EnvConfig {
    pub fn cartpole() -> Self {
        EnvConfig {
            env_kind: EnvKind::Cartpole,
            seed: 0,
            max_steps: None,
            level_id: 0,
        }
    }

    pub fn gridmario(level_id: u32) -> Self {
        EnvConfig {
            env_kind: EnvKind::Gridmario,
            seed: 0,
            max_steps: None,
            level_id,
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = Some(max_steps);
        self
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
            .unwrap_or_else(|| self.env_kind.default_max_steps())
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps() == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.env_kind == EnvKind::Gridmario && self.level_id >= LEVEL_COUNT {
            return Err(Error::Config(format!(
                "level_id {} outside [0, {LEVEL_COUNT})",
                self.level_id
            )));
        }
        Ok(())
    }
}

/// A live environment instance. Single owner, mutable.
#[derive(Debug, Clone)]
pub enum Env {
    Cartpole(CartPole),
    Gridmario(GridMario),
}

impl Env {
    pub fn new(config: &EnvConfig) -> Result<Env> {
        config.validate()?;
        Ok(match config.env_kind {
            EnvKind::Cartpole => Env::Cartpole(CartPole::new(config.max_steps())),
            EnvKind::Gridmario => {
                Env::Gridmario(GridMario::new(config.level_id, config.max_steps()))
            }
        })
    }

    /// Starts a new episode. `rng_seed` drives any randomness in the
    /// initial state.
    pub fn reset(&mut self, rng_seed: u64) -> FeatureVector {
        match self {
            Env::Cartpole(e) => e.reset(rng_seed),
            Env::Gridmario(e) => e.reset(rng_seed),
        }
    }

    pub fn step(&mut self, action: ActionId) -> Result<StepOutcome> {
        if action.0 >= self.action_count() {
            return Err(Error::Invalid(format!(
                "action {} outside [0, {})",
                action.0,
                self.action_count()
            )));
        }
        match self {
            Env::Cartpole(e) => e.step(action),
            Env::Gridmario(e) => e.step(action),
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            Env::Cartpole(_) => EnvKind::Cartpole,
            Env::Gridmario(_) => EnvKind::Gridmario,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.kind().feature_count()
    }

    pub fn action_count(&self) -> usize {
        self.kind().action_count()
    }

    pub fn observation(&self) -> FeatureVector {
        match self {
            Env::Cartpole(e) => e.observation(),
            Env::Gridmario(e) => e.observation(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        match self {
            Env::Cartpole(e) => e.is_done(),
            Env::Gridmario(e) => e.is_done(),
        }
    }

    /// Drawable summary for remote viewers.
    pub fn render(&self) -> serde_json::Value {
        match self {
            Env::Cartpole(e) => e.render(),
            Env::Gridmario(e) => e.render(),
        }
    }
}

/// Builds an environment from `config` and resets it.
pub fn reset(config: &EnvConfig, rng_seed: u64) -> Result<(Env, FeatureVector)> {
    let mut env = Env::new(config)?;
    let s = env.reset(rng_seed);
    Ok((env, s))
}
