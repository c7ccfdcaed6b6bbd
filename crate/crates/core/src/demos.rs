//! Demonstration datasets and the `.demo.jsonl` file format.
//!
//! A file is one header line followed by one JSON record per line:
//!
//! ```text
//! {"format":"drop-demo","version":1,"source_id":"l4","env_kind":"cartpole","feature_count":4,"action_count":2}
//! {"episode":0,"step":0,"features":[0.01,-0.02,0.03,0.0],"action":1,"reward":1.0,"terminal":false}
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{ActionId, Env, EnvConfig, EnvKind, FeatureVector};
use crate::error::{Error, Result};
use crate::policy::ActionSource;
use crate::seeding::{derive_seed, rng_from};

const FORMAT: &str = "drop-demo";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub episode: usize,
    pub step: usize,
    pub features: FeatureVector,
    pub action: ActionId,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    source_id: String,
    env_kind: EnvKind,
    feature_count: usize,
    action_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub source_id: String,
    pub env_kind: EnvKind,
    pub records: Vec<DemoRecord>,
    /// Mean per-episode reward sum; 0 for an empty dataset.
    pub avg_performance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub episodes: usize,
    pub steps: usize,
    pub avg_performance: f64,
    pub mean_episode_steps: f64,
    pub action_histogram: Vec<f64>,
}

fn check_record(env_kind: EnvKind, r: &DemoRecord) -> Result<()> {
    if r.features.len() != env_kind.feature_count() {
        return Err(Error::Invalid(format!(
            "{} record has {} features, expected {}",
            env_kind,
            r.features.len(),
            env_kind.feature_count()
        )));
    }
    if r.action.0 >= env_kind.action_count() {
        return Err(Error::Invalid(format!("action {} out of range for {env_kind}", r.action.0)));
    }
    if !r.reward.is_finite() {
        return Err(Error::Invalid("record reward is not finite".into()));
    }
    Ok(())
}

/// Per-episode reward sums in order of first appearance.
fn episode_returns(records: &[DemoRecord]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    let mut current = None;
    for r in records {
        if current != Some(r.episode) {
            current = Some(r.episode);
            out.push(0.0);
        }
        *out.last_mut().expect("pushed above") += r.reward;
    }
    out
}

impl DemoDataset {
    /// Validates record shapes and ordering and computes `avg_performance`.
    pub fn new(source_id: String, env_kind: EnvKind, records: Vec<DemoRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            check_record(env_kind, r)?;
            if i > 0 {
                let p = &records[i - 1];
                if (r.episode, r.step) <= (p.episode, p.step) {
                    return Err(Error::Invalid(format!(
                        "record {i}: (episode, step) = ({}, {}) does not increase",
                        r.episode, r.step
                    )));
                }
            }
        }
        let returns = episode_returns(&records);
        let avg_performance = if returns.is_empty() {
            0.0
        } else {
            returns.iter().sum::<f64>() / returns.len() as f64
        };
        Ok(DemoDataset {
            source_id,
            env_kind,
            records,
            avg_performance,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn episode_count(&self) -> usize {
        episode_returns(&self.records).len()
    }

    /// Concatenates datasets of one env, renumbering episodes so that
    /// ordering stays strictly increasing.
    pub fn merged(source_id: &str, parts: &[&DemoDataset]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::Invalid("nothing to merge".into()));
        };
        let env_kind = first.env_kind;
        let mut records = Vec::new();
        let mut next_episode = 0;
        for part in parts {
            if part.env_kind != env_kind {
                return Err(Error::Invalid("cannot merge datasets of different envs".into()));
            }
            let mut last = None;
            for r in &part.records {
                if last != Some(r.episode) {
                    if last.is_some() {
                        next_episode += 1;
                    }
                    last = Some(r.episode);
                }
                records.push(DemoRecord {
                    episode: next_episode,
                    ..r.clone()
                });
            }
            if last.is_some() {
                next_episode += 1;
            }
        }
        DemoDataset::new(source_id.to_string(), env_kind, records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let result = (|| {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            write_header(&mut w, &self.source_id, self.env_kind).map_err(|e| Error::io(path, e))?;
            for r in &self.records {
                write_record(&mut w, r).map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        })();
        if result.is_err() {
            let _ = fs::remove_file(path);
        }
        result
    }
}

fn write_header(w: &mut impl Write, source_id: &str, env_kind: EnvKind) -> std::io::Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        source_id: source_id.into(),
        env_kind,
        feature_count: env_kind.feature_count(),
        action_count: env_kind.action_count(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")
}

fn write_record(w: &mut impl Write, r: &DemoRecord) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, r)?;
    w.write_all(b"\n")
}

/// Runs `episodes` full episodes of `policy`, collecting records in memory.
/// Episode `e` resets the environment with `derive_seed(seed, e)`.
pub fn collect_demonstrations(
    config: &EnvConfig,
    policy: &mut dyn ActionSource,
    episodes: usize,
    seed: u64,
    source_id: &str,
) -> Result<DemoDataset> {
    let mut records = Vec::new();
    run_demonstrations(config, policy, episodes, seed, |r| {
        records.push(r);
        Ok(())
    })?;
    DemoDataset::new(source_id.to_string(), config.env_kind, records)
}

fn run_demonstrations(
    config: &EnvConfig,
    policy: &mut dyn ActionSource,
    episodes: usize,
    seed: u64,
    mut sink: impl FnMut(DemoRecord) -> Result<()>,
) -> Result<()> {
    if episodes == 0 {
        return Err(Error::Invalid("zero demonstration episodes give an empty dataset".into()));
    }
    let mut env = Env::new(config)?;
    let mut rng = rng_from(derive_seed(seed, u64::MAX));
    for episode in 0..episodes {
        let mut features = env.reset(derive_seed(seed, episode as u64));
        let mut step = 0;
        loop {
            let action = policy.act_in(&env, &features, &mut rng)?;
            let out = env.step(action)?;
            sink(DemoRecord {
                episode,
                step,
                features,
                action,
                reward: out.reward,
                terminal: out.terminal,
            })?;
            step += 1;
            features = out.next_state;
            if out.terminal {
                break;
            }
        }
    }
    Ok(())
}

/// Streams `episodes` full episodes of `policy` into `sink` and returns the
/// dataset. The file is removed if anything fails part way.
pub fn record_demonstrations(
    config: &EnvConfig,
    policy: &mut dyn ActionSource,
    episodes: usize,
    sink: impl AsRef<Path>,
    seed: u64,
    source_id: &str,
) -> Result<DemoDataset> {
    let path = sink.as_ref();
    let result = (|| {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_header(&mut w, source_id, config.env_kind).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        run_demonstrations(config, policy, episodes, seed, |r| {
            write_record(&mut w, &r).map_err(|e| Error::io(path, e))?;
            records.push(r);
            Ok(())
        })?;
        w.flush().map_err(|e| Error::io(path, e))?;
        DemoDataset::new(source_id.to_string(), config.env_kind, records)
    })();
    if result.is_err() {
        let _ = fs::remove_file(path);
    }
    result
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DemoDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(parse_err(1, "missing header line".into())),
    };
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(parse_err(
            1,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let kind = header.env_kind;
    if header.feature_count != kind.feature_count() || header.action_count != kind.action_count() {
        return Err(parse_err(1, format!("header counts do not match {kind}")));
    }
    let mut records: Vec<DemoRecord> = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: DemoRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(n, e.to_string()))?;
        check_record(kind, &r).map_err(|e| parse_err(n, e.to_string()))?;
        if let Some(p) = records.last() {
            if (r.episode, r.step) <= (p.episode, p.step) {
                return Err(parse_err(n, "(episode, step) does not increase".into()));
            }
        }
        records.push(r);
    }
    DemoDataset::new(header.source_id, kind, records)
}

pub fn dataset_stats(ds: &DemoDataset) -> Result<DatasetStats> {
    if ds.records.is_empty() {
        return Err(Error::Invalid("dataset is empty".into()));
    }
    let episodes = ds.episode_count();
    let mut histogram = vec![0.0; ds.env_kind.action_count()];
    for r in &ds.records {
        histogram[r.action.0] += 1.0;
    }
    let n = ds.records.len() as f64;
    histogram.iter_mut().for_each(|h| *h /= n);
    Ok(DatasetStats {
        episodes,
        steps: ds.records.len(),
        avg_performance: ds.avg_performance,
        mean_episode_steps: n / episodes as f64,
        action_histogram: histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Constant, RandomPolicy};
    use proptest::prelude::*;

    fn rec(episode: usize, step: usize, reward: f64) -> DemoRecord {
        DemoRecord {
            episode,
            step,
            features: FeatureVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            action: ActionId(step % 2),
            reward,
            terminal: false,
        }
    }

    #[test]
    fn avg_performance_is_mean_episode_return() {
        let records = vec![rec(0, 0, 4.0), rec(0, 1, 6.0), rec(1, 0, 20.0)];
        let ds = DemoDataset::new("t".into(), EnvKind::Cartpole, records).unwrap();
        assert_eq!(ds.avg_performance, 15.0);
        let stats = dataset_stats(&ds).unwrap();
        assert_eq!(stats.episodes, 2);
        assert_eq!(stats.steps, 3);
        assert_eq!(stats.mean_episode_steps, 1.5);
    }

    #[test]
    fn single_action_histogram() {
        let mut policy = Constant(ActionId(1));
        let ds =
            collect_demonstrations(&EnvConfig::cartpole(), &mut policy, 2, 3, "const").unwrap();
        let stats = dataset_stats(&ds).unwrap();
        assert_eq!(stats.action_histogram, vec![0.0, 1.0]);
    }

    #[test]
    fn zero_episodes_is_an_error() {
        let mut policy = RandomPolicy::new(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.demo.jsonl");
        assert!(record_demonstrations(&EnvConfig::cartpole(), &mut policy, 0, &path, 1, "r").is_err());
        assert!(!path.exists());
        let empty = DemoDataset::new("e".into(), EnvKind::Cartpole, vec![]).unwrap();
        assert!(dataset_stats(&empty).is_err());
    }

    #[test]
    fn record_then_load_round_trips() {
        let mut policy = RandomPolicy::new(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.demo.jsonl");
        let ds = record_demonstrations(&EnvConfig::cartpole(), &mut policy, 5, &path, 9, "rand")
            .unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
        // recomputed independently from the records
        let mut sums = vec![0.0; 5];
        for r in &back.records {
            sums[r.episode] += r.reward;
        }
        let mean = sums.iter().sum::<f64>() / 5.0;
        assert!((back.avg_performance - mean).abs() < 1e-9);
    }

    #[test]
    fn truncated_file_reports_line() {
        let mut policy = RandomPolicy::new(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.demo.jsonl");
        record_demonstrations(&EnvConfig::cartpole(), &mut policy, 2, &path, 2, "rand").unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let mut cut = lines[..4].join("\n");
        cut.push('\n');
        cut.push_str(&lines[4][..lines[4].len() / 2]);
        fs::write(&path, cut).unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn feature_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.demo.jsonl");
        let header = r#"{"format":"drop-demo","version":1,"source_id":"x","env_kind":"cartpole","feature_count":4,"action_count":2}"#;
        let features = vec!["0.0"; 27].join(",");
        let line = format!(
            r#"{{"episode":0,"step":0,"features":[{features}],"action":0,"reward":1.0,"terminal":false}}"#
        );
        fs::write(&path, format!("{header}\n{line}\n")).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn merge_renumbers_episodes() {
        let a = DemoDataset::new("a".into(), EnvKind::Cartpole, vec![rec(0, 0, 1.0), rec(3, 0, 1.0)])
            .unwrap();
        let b = DemoDataset::new("b".into(), EnvKind::Cartpole, vec![rec(0, 5, 2.0), rec(0, 6, 2.0)])
            .unwrap();
        let m = DemoDataset::merged("ab", &[&a, &b]).unwrap();
        let eps: Vec<usize> = m.records.iter().map(|r| r.episode).collect();
        assert_eq!(eps, vec![0, 1, 2, 2]);
        assert_eq!(m.avg_performance, 2.0);
    }

    fn arb_record() -> impl Strategy<Value = (Vec<f64>, usize, f64, bool)> {
        (
            proptest::collection::vec(-1e6f64..1e6, 4),
            0usize..2,
            -1e3f64..1e3,
            any::<bool>(),
        )
    }

    proptest! {
        #[test]
        fn save_load_identity(rows in proptest::collection::vec(arb_record(), 0..40), split in 1usize..5) {
            let records: Vec<DemoRecord> = rows
                .into_iter()
                .enumerate()
                .map(|(i, (f, a, r, t))| DemoRecord {
                    episode: i / split,
                    step: i % split,
                    features: FeatureVector::new(f).unwrap(),
                    action: ActionId(a),
                    reward: r,
                    terminal: t,
                })
                .collect();
            let ds = DemoDataset::new("p".into(), EnvKind::Cartpole, records).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.demo.jsonl");
            ds.save(&path).unwrap();
            prop_assert_eq!(load_dataset(&path).unwrap(), ds);
        }
    }
}
