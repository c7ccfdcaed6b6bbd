//! Action sources used to record demonstrations: random, scripted
//! demonstrators of graded quality, and trained priors.

use std::str::FromStr;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use rustc_hash::FxHashSet;

use crate::envs::{ActionId, Env, EnvKind, FeatureVector, GridMario, MarioState};
use crate::error::{Error, Result};
use crate::models::PriorModel;
use crate::seeding::Rng;

/// Anything that picks an action from an observation.
pub trait ActionSource {
    fn act(&mut self, features: &FeatureVector, rng: &mut Rng) -> Result<ActionId>;

    /// Same as [`ActionSource::act`] but with read access to the live
    /// environment, for scripted demonstrators that plan ahead.
    fn act_in(&mut self, env: &Env, features: &FeatureVector, rng: &mut Rng) -> Result<ActionId> {
        let _ = env;
        self.act(features, rng)
    }
}

impl<T: ActionSource + ?Sized> ActionSource for Box<T> {
    fn act(&mut self, features: &FeatureVector, rng: &mut Rng) -> Result<ActionId> {
        (**self).act(features, rng)
    }

    fn act_in(&mut self, env: &Env, features: &FeatureVector, rng: &mut Rng) -> Result<ActionId> {
        (**self).act_in(env, features, rng)
    }
}

/// Uniform over `[0, actions)`.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    actions: usize,
}

impl RandomPolicy {
    pub fn new(actions: usize) -> Self {
        RandomPolicy { actions }
    }
}

impl ActionSource for RandomPolicy {
    fn act(&mut self, _: &FeatureVector, rng: &mut Rng) -> Result<ActionId> {
        Ok(ActionId(rng.gen_range(0..self.actions)))
    }
}

/// Always the same action.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub ActionId);

impl ActionSource for Constant {
    fn act(&mut self, _: &FeatureVector, _: &mut Rng) -> Result<ActionId> {
        Ok(self.0)
    }
}

/// A trained prior used as a demonstrator (argmax action).
#[derive(Debug, Clone)]
pub struct PriorPolicy(pub Arc<PriorModel>);

impl ActionSource for PriorPolicy {
    fn act(&mut self, features: &FeatureVector, _: &mut Rng) -> Result<ActionId> {
        Ok(self.0.predict(features)?.action)
    }
}

/// Demonstrator quality levels. `Rand` is uniform random; `L1`..`L4` are
/// increasingly reliable scripted controllers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoLevel {
    Rand,
    L1,
    L2,
    L3,
    L4,
}

impl DemoLevel {
    pub const ALL: [DemoLevel; 5] = [
        DemoLevel::Rand,
        DemoLevel::L1,
        DemoLevel::L2,
        DemoLevel::L3,
        DemoLevel::L4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DemoLevel::Rand => "rand",
            DemoLevel::L1 => "l1",
            DemoLevel::L2 => "l2",
            DemoLevel::L3 => "l3",
            DemoLevel::L4 => "l4",
        }
    }
}

impl std::fmt::Display for DemoLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DemoLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DemoLevel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown demonstrator level `{s}` (rand, l1..l4)")))
    }
}

/// Bang-bang linear state feedback with two degradations: a constant
/// offset that pushes the cart off-centre, and a probability of taking a
/// uniformly random action.
#[derive(Debug, Clone, PartialEq)]
pub struct CartpoleController {
    pub gains: [f64; 4],
    pub bias: f64,
    pub noise: f64,
}

impl CartpoleController {
    const GAINS: [f64; 4] = [0.6, 1.2, 16.0, 2.5];
    /// Angle-only feedback: balances the pole but lets the cart wander.
    const ANGLE_GAINS: [f64; 4] = [0.0, 0.0, 16.0, 2.5];

    pub fn new(bias: f64, noise: f64) -> Self {
        CartpoleController {
            gains: Self::GAINS,
            bias,
            noise,
        }
    }

    /// Calibrated so that mean episode lengths land near 15, 217, 435, 613
    /// and 821 steps for `Rand`, `L1`..`L4`.
    ///
    /// The graded levels use angle-only feedback with a push bias, so the
    /// cart drifts off the track sooner the larger the bias.
    pub fn level(level: DemoLevel) -> Self {
        let bias = match level {
            DemoLevel::Rand => return CartpoleController::new(0.0, 1.0),
            DemoLevel::L1 => 0.5,
            DemoLevel::L2 => 0.19,
            DemoLevel::L3 => 0.11,
            DemoLevel::L4 => 0.07,
        };
        CartpoleController {
            gains: Self::ANGLE_GAINS,
            bias,
            noise: 0.1,
        }
    }
}

impl ActionSource for CartpoleController {
    fn act(&mut self, features: &FeatureVector, rng: &mut Rng) -> Result<ActionId> {
        if self.noise > 0.0 && rng.gen::<f64>() < self.noise {
            return Ok(ActionId(rng.gen_range(0..2)));
        }
        let x = features.as_slice();
        if x.len() != 4 {
            return Err(Error::Invalid("cartpole controller needs 4 features".into()));
        }
        let u: f64 = self.gains.iter().zip(x).map(|(g, v)| g * v).sum::<f64>() + self.bias;
        Ok(ActionId(usize::from(u > 0.0)))
    }
}

/// Scripted GridMario player: a breadth-first lookahead over copies of the
/// live environment that picks the first action of the best-scoring
/// `horizon`-tick plan. Needs [`ActionSource::act_in`].
#[derive(Debug, Clone)]
pub struct MarioPlanner {
    pub horizon: usize,
    /// Probability of a uniformly random action.
    pub noise: f64,
}

impl Default for MarioPlanner {
    fn default() -> Self {
        MarioPlanner {
            horizon: 8,
            noise: 0.0,
        }
    }
}

impl MarioPlanner {
    fn plan(&self, root: &GridMario) -> Result<ActionId> {
        let actions = EnvKind::Gridmario.action_count();
        // (first action, return so far, env)
        let mut layer: Vec<(usize, f64, GridMario)> = Vec::new();
        let mut best: Option<(f64, usize)> = None;
        let consider = |score: f64, first: usize, best: &mut Option<(f64, usize)>| {
            if best.is_none_or(|(s, _)| score > s) {
                *best = Some((score, first));
            }
        };
        let mut seen: FxHashSet<MarioState> = FxHashSet::default();
        for a in 0..actions {
            let mut g = root.clone();
            let out = g.step(ActionId(a))?;
            if out.terminal {
                consider(out.reward, a, &mut best);
            } else if seen.insert(g.state().clone()) {
                layer.push((a, out.reward, g));
            }
        }
        // discounting makes earlier progress win over waiting
        let mut weight = 1.0;
        for _ in 1..self.horizon {
            weight *= 0.95;
            let mut next = Vec::with_capacity(layer.len() * 4);
            seen.clear();
            for (first, ret, g) in &layer {
                for a in 0..actions {
                    let mut c = g.clone();
                    let out = c.step(ActionId(a))?;
                    let r = ret + weight * out.reward;
                    if out.terminal {
                        consider(r, *first, &mut best);
                    } else if seen.insert(c.state().clone()) {
                        next.push((*first, r, c));
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            layer = next;
        }
        for (first, ret, g) in &layer {
            // break ties toward plans that end further right
            consider(ret + 0.01 * weight * f64::from(g.state().x), *first, &mut best);
        }
        Ok(ActionId(best.map_or(0, |(_, a)| a)))
    }
}

impl ActionSource for MarioPlanner {
    fn act(&mut self, _: &FeatureVector, _: &mut Rng) -> Result<ActionId> {
        Err(Error::Usage("the mario planner needs the live environment".into()))
    }

    fn act_in(&mut self, env: &Env, _: &FeatureVector, rng: &mut Rng) -> Result<ActionId> {
        if self.noise > 0.0 && rng.gen::<f64>() < self.noise {
            return Ok(ActionId(rng.gen_range(0..EnvKind::Gridmario.action_count())));
        }
        match env {
            Env::Gridmario(g) => self.plan(g),
            Env::Cartpole(_) => Err(Error::Usage("the mario planner only plays gridmario".into())),
        }
    }
}

/// Builds the scripted demonstrator of `level` for `env`.
pub fn demonstrator(env: EnvKind, level: DemoLevel) -> Box<dyn ActionSource + Send> {
    match (env, level) {
        (_, DemoLevel::Rand) => Box::new(RandomPolicy::new(env.action_count())),
        (EnvKind::Cartpole, l) => Box::new(CartpoleController::level(l)),
        (EnvKind::Gridmario, l) => Box::new(MarioPlanner {
            horizon: 8,
            noise: match l {
                DemoLevel::L1 => 0.4,
                DemoLevel::L2 => 0.25,
                DemoLevel::L3 => 0.1,
                _ => 0.0,
            },
        }),
    }
}
