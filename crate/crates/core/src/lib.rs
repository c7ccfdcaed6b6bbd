//! Dynamic reuse of prior demonstration knowledge for tabular reinforcement
//! learning.
//!
//! An agent learns a Q-table while arbitrating, state by state, between its
//! own greedy action and the actions suggested by one or more classifiers
//! trained on demonstrations. The arbitration is driven by temporal-difference
//! confidence tables that are learned online from the agent's own experience.
//!
//! Module map:
//! - [`envs`]: Cartpole and GridMario environments and the shared discretizer.
//! - [`demos`]: demonstration recording and the `.demo.jsonl` format.
//! - [`models`]: the softmax MLP and the decision-tree rule learner.
//! - [`confidence`]: TD confidence tables (CQ and CP with DRU/DCU updates).
//! - [`decision`]: hard, soft, soft-hard-epsilon and multi-source selection.
//! - [`agents`]: Q-learning, SARSA, DRoP, HAT and CHAT learning loops.
//! - [`request`]: confidence-triggered demonstration requests and sessions.
//! - [`bench`]: metrics, Welch's t-test and the experiment battery.

pub mod agents;
pub mod bench;
pub mod confidence;
pub mod decision;
pub mod demos;
pub mod envs;
pub mod error;
pub mod models;
pub mod policy;
pub mod request;
pub mod seeding;

pub use agents::{AgentConfig, EpisodeLog, Method, QTable, SourceCounts};
pub use confidence::{ConfidenceModel, ConfidenceRule, UpdateMethod};
pub use decision::{SelectModel, Source, SourceChoice, SourceScores};
pub use demos::{DemoDataset, DemoRecord};
pub use envs::{
    ActionId, DiscretizerSpec, Env, EnvConfig, EnvKind, FeatureVector, StateKey, StepOutcome,
};
pub use error::{Error, Result};
pub use models::{MlpLayout, Prediction, PriorModel, TrainSpec};
pub use policy::ActionSource;
