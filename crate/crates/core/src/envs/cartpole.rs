//! Cart-pole balancing with the classic Euler-integrated dynamics.

use rand::Rng;
use serde_json::json;

use super::{ActionId, FeatureVector, StepOutcome};
use crate::error::{Error, Result};
use crate::seeding::rng_from;

pub(super) const FEATURE_COUNT: usize = 4;
pub(super) const ACTION_COUNT: usize = 2;

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
/// Half of the pole length.
pub const HALF_LENGTH: f64 = 0.5;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const X_LIMIT: f64 = 2.4;
pub const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;

pub const SURVIVE_REWARD: f64 = 1.0;
pub const FALL_REWARD: f64 = -500.0;

/// `[x, x_dot, theta, theta_dot]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        CartPoleState {
            x: v[0],
            x_dot: v[1],
            theta: v[2],
            theta_dot: v[3],
        }
    }

    /// Linear and angular accelerations under horizontal `force`.
    pub fn accelerations(&self, force: f64) -> (f64, f64) {
        let total_mass = CART_MASS + POLE_MASS;
        let pole_mass_length = POLE_MASS * HALF_LENGTH;
        let (sin, cos) = self.theta.sin_cos();
        let temp = (force + pole_mass_length * self.theta_dot * self.theta_dot * sin) / total_mass;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        (x_acc, theta_acc)
    }

    pub fn fallen(&self) -> bool {
        self.x.abs() > X_LIMIT || self.theta.abs() > THETA_LIMIT
    }
}

/// Horizontal force for an action: 0 pushes left, 1 pushes right.
pub fn force_for(action: ActionId) -> f64 {
    if action.0 == 1 {
        FORCE_MAG
    } else {
        -FORCE_MAG
    }
}

#[derive(Debug, Clone)]
pub struct CartPole {
    state: CartPoleState,
    steps: usize,
    max_steps: usize,
    done: bool,
}

impl CartPole {
    pub fn new(max_steps: usize) -> Self {
        CartPole {
            state: CartPoleState::default(),
            steps: 0,
            max_steps,
            done: true,
        }
    }

    pub fn reset(&mut self, rng_seed: u64) -> FeatureVector {
        let mut rng = rng_from(rng_seed);
        let mut v = [0.0; 4];
        for x in &mut v {
            *x = rng.gen_range(-0.05..=0.05);
        }
        self.reset_to(CartPoleState::from_array(v))
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, state: CartPoleState) -> FeatureVector {
        self.state = state;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observation(&self) -> FeatureVector {
        FeatureVector(self.state.to_array().to_vec())
    }

    pub fn step(&mut self, action: ActionId) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage("step called on a terminal cartpole episode".into()));
        }
        let s = self.state;
        let (x_acc, theta_acc) = s.accelerations(force_for(action));
        self.state = CartPoleState {
            x: s.x + TAU * s.x_dot,
            x_dot: s.x_dot + TAU * x_acc,
            theta: s.theta + TAU * s.theta_dot,
            theta_dot: s.theta_dot + TAU * theta_acc,
        };
        self.steps += 1;

        let fell = self.state.fallen();
        self.done = fell || self.steps >= self.max_steps;
        // the fall penalty replaces the survival reward on that transition
        let reward = if fell { FALL_REWARD } else { SURVIVE_REWARD };
        Ok(StepOutcome {
            next_state: self.observation(),
            reward,
            terminal: self.done,
        })
    }

    pub fn render(&self) -> serde_json::Value {
        json!({
            "kind": "cartpole",
            "x": self.state.x,
            "theta": self.state.theta,
            "x_limit": X_LIMIT,
            "theta_limit": THETA_LIMIT,
            "step": self.steps,
        })
    }
}
