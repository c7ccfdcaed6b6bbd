//! Supervised models over demonstrations: a softmax MLP (DRoP, CHAT) and a
//! decision-tree rule learner (HAT).

pub mod mlp;
pub mod tree;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::demos::DemoDataset;
use crate::envs::{ActionId, EnvKind, FeatureVector};
use crate::error::{Error, Result};
use crate::seeding::rng_from;

pub use mlp::{Mlp, Normalizer, TrainReport};
pub use tree::DecisionTree;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Invalid("softmax of an empty vector".into()));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Invalid("softmax input is not finite".into()));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpLayout {
    pub layer_sizes: Vec<usize>,
}

impl MlpLayout {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        let l = MlpLayout { layer_sizes };
        l.validate()?;
        Ok(l)
    }

    /// "4-15-15-2" for Cartpole, "27-50-50-12" for GridMario.
    pub fn default_for(env: EnvKind) -> Self {
        match env {
            EnvKind::Cartpole => MlpLayout {
                layer_sizes: vec![4, 15, 15, 2],
            },
            EnvKind::Gridmario => MlpLayout {
                layer_sizes: vec![27, 50, 50, 12],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 3 {
            return Err(Error::Config("layout needs input, >=1 hidden and output layers".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn check_env(&self, env: EnvKind) -> Result<()> {
        self.validate()?;
        if self.inputs() != env.feature_count() || self.outputs() != env.action_count() {
            return Err(Error::Config(format!(
                "layout {self} does not match {env} ({} features, {} actions)",
                env.feature_count(),
                env.action_count()
            )));
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.layer_sizes.last().expect("validated layout")
    }
}

impl std::fmt::Display for MlpLayout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

impl std::str::FromStr for MlpLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let sizes = s
            .split('-')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("bad layout `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        MlpLayout::new(sizes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Mlp,
    Rules,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelBody {
    Mlp {
        layout: MlpLayout,
        normalizer: Normalizer,
        net: Mlp,
    },
    Rules {
        tree: DecisionTree,
    },
}

const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained classifier from features to an action and a confidence
/// distribution over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    pub format_version: u32,
    pub source_id: String,
    pub env_kind: EnvKind,
    pub feature_count: usize,
    pub action_count: usize,
    pub body: ModelBody,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub action: ActionId,
    /// Max of `distribution`.
    pub confidence: f64,
    pub distribution: Vec<f64>,
}

impl Prediction {
    fn from_distribution(distribution: Vec<f64>) -> Self {
        let a = argmax(&distribution);
        Prediction {
            action: ActionId(a),
            confidence: distribution[a],
            distribution,
        }
    }
}

fn dataset_xy(ds: &DemoDataset) -> (Vec<Vec<f64>>, Vec<usize>) {
    ds.records
        .iter()
        .map(|r| (r.features.as_slice().to_vec(), r.action.0))
        .unzip()
}

impl PriorModel {
    pub fn kind(&self) -> PriorKind {
        match self.body {
            ModelBody::Mlp { .. } => PriorKind::Mlp,
            ModelBody::Rules { .. } => PriorKind::Rules,
        }
    }

    pub fn predict(&self, features: &FeatureVector) -> Result<Prediction> {
        self.predict_slice(features.as_slice())
    }

    pub fn predict_slice(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.feature_count {
            return Err(Error::Invalid(format!(
                "model expects {} features, got {}",
                self.feature_count,
                x.len()
            )));
        }
        Ok(match &self.body {
            ModelBody::Mlp { normalizer, net, .. } => {
                Prediction::from_distribution(net.probabilities(&normalizer.apply(x)))
            }
            ModelBody::Rules { tree } => {
                let counts = tree.leaf_counts(x);
                let total = counts.iter().sum::<usize>().max(1) as f64;
                Prediction::from_distribution(counts.iter().map(|&c| c as f64 / total).collect())
            }
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: PriorModel = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}

/// Trains the softmax network on a demonstration set.
pub fn train_mlp(
    ds: &DemoDataset,
    layout: &MlpLayout,
    spec: &TrainSpec,
) -> Result<(PriorModel, TrainReport)> {
    if ds.records.is_empty() {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    layout.check_env(ds.env_kind)?;
    let (xs, ys) = dataset_xy(ds);
    let normalizer = Normalizer::fit(xs.iter().map(|x| x.as_slice()), layout.inputs());
    let xs: Vec<Vec<f64>> = xs.iter().map(|x| normalizer.apply(x)).collect();
    let mut rng = rng_from(spec.seed);
    let mut net = Mlp::init(layout, &mut rng);
    let report = mlp::train(&mut net, &xs, &ys, spec, &mut rng)?;
    let model = PriorModel {
        format_version: MODEL_FORMAT_VERSION,
        source_id: ds.source_id.clone(),
        env_kind: ds.env_kind,
        feature_count: ds.env_kind.feature_count(),
        action_count: ds.env_kind.action_count(),
        body: ModelBody::Mlp {
            layout: layout.clone(),
            normalizer,
            net,
        },
    };
    Ok((model, report))
}

/// Grows the rule tree (max depth 10, min leaf 2) on a demonstration set.
pub fn train_rules(ds: &DemoDataset) -> Result<PriorModel> {
    if ds.records.is_empty() {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    let (xs, ys) = dataset_xy(ds);
    let tree = DecisionTree::fit(&xs, &ys, ds.env_kind.action_count())?;
    Ok(PriorModel {
        format_version: MODEL_FORMAT_VERSION,
        source_id: ds.source_id.clone(),
        env_kind: ds.env_kind,
        feature_count: ds.env_kind.feature_count(),
        action_count: ds.env_kind.action_count(),
        body: ModelBody::Rules { tree },
    })
}

/// Gradient check of the hand-written backprop, see [`mlp::gradient_check`].
pub fn mlp_gradient_check(layout: &MlpLayout, seed: u64) -> Result<f64> {
    mlp::gradient_check(layout, seed, 1e-5)
}

/// Fraction of dataset records whose action the model reproduces.
pub fn accuracy(model: &PriorModel, ds: &DemoDataset) -> Result<f64> {
    if ds.records.is_empty() {
        return Err(Error::Invalid("empty dataset".into()));
    }
    let mut hit = 0usize;
    for r in &ds.records {
        if model.predict(&r.features)?.action == r.action {
            hit += 1;
        }
    }
    Ok(hit as f64 / ds.records.len() as f64)
}
