//! Experiment harness: learning-curve metrics, Welch's t-test and trial
//! batteries that write `curves.csv`, `summary.csv` and `table.txt`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::agents::{run_training, AgentConfig, EpisodeLog, Method};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::models::PriorModel;
use crate::seeding::derive_seed;

pub const DEFAULT_HEAD: usize = 50;
pub const DEFAULT_TAIL: f64 = 0.05;
pub const CHECKPOINTS: usize = 20;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn tail_len(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1))
}

/// Mean over trials of the first-`head`-episode mean, transfer minus
/// baseline.
pub fn jumpstart(transfer: &[Vec<f64>], baseline: &[Vec<f64>], head: usize) -> Result<f64> {
    if transfer.is_empty() || baseline.is_empty() || head == 0 {
        return Err(Error::Invalid("jumpstart needs curves and a positive head".into()));
    }
    let head_mean = |set: &[Vec<f64>]| -> Result<f64> {
        let mut per_trial = Vec::with_capacity(set.len());
        for c in set {
            if c.len() < head {
                return Err(Error::Invalid(format!("curve of {} episodes is shorter than head {head}", c.len())));
            }
            per_trial.push(mean(&c[..head]));
        }
        Ok(mean(&per_trial))
    };
    Ok(head_mean(transfer)? - head_mean(baseline)?)
}

/// Sum over `checkpoints` equal segments of each segment's mean return.
/// Segment length is `n / checkpoints`; the last segment absorbs the rest.
pub fn total_reward(curve: &[f64], checkpoints: usize) -> Result<f64> {
    if checkpoints == 0 || curve.len() < checkpoints {
        return Err(Error::Invalid(format!(
            "total reward needs at least {checkpoints} episodes, got {}",
            curve.len()
        )));
    }
    let seg = curve.len() / checkpoints;
    Ok((0..checkpoints)
        .map(|k| {
            let hi = if k + 1 == checkpoints { curve.len() } else { (k + 1) * seg };
            mean(&curve[k * seg..hi])
        })
        .sum())
}

/// Mean and sample std across trials of each trial's tail mean.
pub fn final_reward(curves: &[Vec<f64>], tail_fraction: f64) -> Result<(f64, f64)> {
    if curves.is_empty() || curves.iter().any(Vec::is_empty) {
        return Err(Error::Invalid("final reward needs non-empty curves".into()));
    }
    let tails: Vec<f64> = curves
        .iter()
        .map(|c| mean(&c[c.len() - tail_len(c.len(), tail_fraction)..]))
        .collect();
    Ok((mean(&tails), sample_std(&tails)))
}

/// Per-trial tail means, the samples behind [`final_reward`].
pub fn tail_means(curves: &[Vec<f64>], tail_fraction: f64) -> Vec<f64> {
    curves
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| mean(&c[c.len() - tail_len(c.len(), tail_fraction)..]))
        .collect()
}

/// For each prior source, the mean and std across trials of the fraction of
/// tail-episode steps it supplied.
pub fn reuse_frequency(logs: &[Vec<EpisodeLog>], tail_fraction: f64) -> Result<Vec<(f64, f64)>> {
    if logs.is_empty() || logs.iter().any(Vec::is_empty) {
        return Err(Error::Invalid("reuse frequency needs non-empty logs".into()));
    }
    let sources = logs[0][0].source_counts.priors.len();
    let mut out = Vec::with_capacity(sources);
    for i in 0..sources {
        let per_trial: Vec<f64> = logs
            .iter()
            .map(|trial| {
                let tail = &trial[trial.len() - tail_len(trial.len(), tail_fraction)..];
                let (used, steps) = tail.iter().fold((0usize, 0usize), |(u, s), e| {
                    (u + e.source_counts.priors.get(i).copied().unwrap_or(0), s + e.steps)
                });
                if steps == 0 {
                    0.0
                } else {
                    used as f64 / steps as f64
                }
            })
            .collect();
        out.push((mean(&per_trial), sample_std(&per_trial)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Welch {
    pub t: f64,
    pub df: f64,
    /// Two-tailed.
    pub p: f64,
}

impl Welch {
    /// One-tailed p for the alternative `mean(a) > mean(b)`.
    pub fn p_greater(&self) -> f64 {
        if self.t > 0.0 {
            self.p / 2.0
        } else {
            1.0 - self.p / 2.0
        }
    }

    /// One-tailed p for the alternative `mean(a) < mean(b)`.
    pub fn p_less(&self) -> f64 {
        1.0 - self.p_greater()
    }
}

/// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of
/// freedom.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<Welch> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Invalid("welch test needs at least two values per sample".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Invalid("welch test input is not finite".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_std(a).powi(2) / na, sample_std(b).powi(2) / nb);
    let se2 = va + vb;
    if se2 == 0.0 {
        return Err(Error::Invalid("welch test needs nonzero variance in at least one sample".into()));
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let p = if t == 0.0 { 1.0 } else { beta_reg(df / 2.0, 0.5, df / (df + t * t)) };
    Ok(Welch { t, df, p: p.clamp(0.0, 1.0) })
}

/// One method block of an experiment file: a name, the prior model files
/// and the agent fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    #[serde(default)]
    pub priors: Vec<PathBuf>,
    pub agent: AgentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub env: EnvConfig,
    pub episodes: usize,
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Method compared against; defaults to the first `qlearn` block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    #[serde(default = "default_head")]
    pub head: usize,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
    pub methods: Vec<MethodSpec>,
}

fn default_head() -> usize {
    DEFAULT_HEAD
}

fn default_tail() -> f64 {
    DEFAULT_TAIL
}

impl ExperimentSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: ExperimentSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for m in &mut spec.methods {
            for p in &mut m.priors {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.episodes < CHECKPOINTS {
            return Err(Error::Config(format!("episodes must be at least {CHECKPOINTS}")));
        }
        if self.head == 0 || self.head > self.episodes {
            return Err(Error::Config(format!("head must lie in [1, {}]", self.episodes)));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("the experiment lists no methods".into()));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(Error::Config("tail_fraction must lie in (0, 1]".into()));
        }
        let mut seen = HashSet::new();
        for m in &self.methods {
            if !seen.insert(m.name.as_str()) {
                return Err(Error::Config(format!("duplicate method name `{}`", m.name)));
            }
            m.agent.validate()?;
        }
        if let Some(b) = &self.baseline {
            if !seen.contains(b.as_str()) {
                return Err(Error::Config(format!("baseline `{b}` is not a listed method")));
            }
        }
        Ok(())
    }

    fn baseline_index(&self) -> Option<usize> {
        match &self.baseline {
            Some(b) => self.methods.iter().position(|m| &m.name == b),
            None => self.methods.iter().position(|m| m.agent.method == Method::Qlearn),
        }
    }

    /// Seed of trial `t`, shared by every method.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.master_seed, trial as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    pub trials: usize,
    pub failed: usize,
    pub jumpstart: Option<f64>,
    pub total_reward: f64,
    pub final_reward: (f64, f64),
    pub reuse: Vec<(f64, f64)>,
    /// Two-tailed Welch p of final reward against the baseline.
    pub p_final: Option<f64>,
    /// Two-tailed Welch p of total reward against the baseline.
    pub p_total: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub method: String,
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct BatteryReport {
    pub summaries: Vec<MethodSummary>,
    pub failures: Vec<TrialFailure>,
    /// Per method, the logs of each trial that finished (in trial order).
    pub logs: Vec<Vec<Vec<EpisodeLog>>>,
}

impl BatteryReport {
    pub fn summary(&self, name: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.name == name)
    }

    pub fn curves(&self, method: usize) -> Vec<Vec<f64>> {
        self.logs[method]
            .iter()
            .map(|t| t.iter().map(|e| e.ret).collect())
            .collect()
    }
}

fn load_priors(spec: &ExperimentSpec) -> Result<Vec<Vec<Arc<PriorModel>>>> {
    spec.methods
        .iter()
        .map(|m| {
            m.priors
                .iter()
                .map(|p| PriorModel::load(p).map(Arc::new))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

fn panic_message(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| e.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Runs every method for every trial, concurrently, then summarizes.
/// A failing trial is recorded and left out of the summary.
pub fn run_experiment(spec: &ExperimentSpec, priors: &[Vec<Arc<PriorModel>>]) -> Result<BatteryReport> {
    spec.validate()?;
    if priors.len() != spec.methods.len() {
        return Err(Error::Usage("one prior list per method expected".into()));
    }
    if spec.trials == 1 {
        log::warn!("a single trial: standard deviations are reported as 0 and no p-values are computed");
    }
    let jobs: Vec<(usize, usize)> = (0..spec.methods.len())
        .flat_map(|m| (0..spec.trials).map(move |t| (m, t)))
        .collect();
    let results: Vec<Result<Vec<EpisodeLog>>> = jobs
        .par_iter()
        .map(|&(m, t)| {
            let method = &spec.methods[m];
            let run = catch_unwind(AssertUnwindSafe(|| {
                run_training(
                    &spec.env,
                    &method.agent,
                    priors[m].clone(),
                    spec.episodes,
                    spec.trial_seed(t),
                    None,
                )
            }));
            match run {
                Ok(r) => r.map(|r| r.logs),
                Err(p) => Err(Error::Invalid(format!("trial panicked: {}", panic_message(p)))),
            }
        })
        .collect();

    let mut logs: Vec<Vec<Vec<EpisodeLog>>> = vec![Vec::new(); spec.methods.len()];
    let mut failures = Vec::new();
    for (&(m, t), r) in jobs.iter().zip(results) {
        match r {
            Ok(l) => logs[m].push(l),
            Err(e) => {
                log::error!("{} trial {t} failed: {e}", spec.methods[m].name);
                failures.push(TrialFailure {
                    method: spec.methods[m].name.clone(),
                    trial: t,
                    message: e.to_string(),
                });
            }
        }
    }
    let summaries = summarize(spec, &logs)?;
    Ok(BatteryReport {
        summaries,
        failures,
        logs,
    })
}

fn summarize(spec: &ExperimentSpec, logs: &[Vec<Vec<EpisodeLog>>]) -> Result<Vec<MethodSummary>> {
    let curves: Vec<Vec<Vec<f64>>> = logs
        .iter()
        .map(|m| m.iter().map(|t| t.iter().map(|e| e.ret).collect()).collect())
        .collect();
    let totals: Vec<Vec<f64>> = curves
        .iter()
        .map(|m| m.iter().map(|c| total_reward(c, CHECKPOINTS)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let base = spec.baseline_index().filter(|&b| !curves[b].is_empty());
    let mut out = Vec::with_capacity(spec.methods.len());
    for (i, m) in spec.methods.iter().enumerate() {
        let ok = curves[i].len();
        if ok == 0 {
            out.push(MethodSummary {
                name: m.name.clone(),
                trials: 0,
                failed: spec.trials,
                jumpstart: None,
                total_reward: f64::NAN,
                final_reward: (f64::NAN, f64::NAN),
                reuse: Vec::new(),
                p_final: None,
                p_total: None,
            });
            continue;
        }
        let vs_base = base.filter(|&b| b != i);
        let welch = |x: &[f64], y: &[f64]| welch_ttest(x, y).ok().map(|w| w.p);
        out.push(MethodSummary {
            name: m.name.clone(),
            trials: ok,
            failed: spec.trials - ok,
            jumpstart: vs_base
                .map(|b| jumpstart(&curves[i], &curves[b], spec.head))
                .transpose()?,
            total_reward: mean(&totals[i]),
            final_reward: final_reward(&curves[i], spec.tail_fraction)?,
            reuse: reuse_frequency(&logs[i], spec.tail_fraction)?,
            p_final: vs_base.and_then(|b| {
                welch(
                    &tail_means(&curves[i], spec.tail_fraction),
                    &tail_means(&curves[b], spec.tail_fraction),
                )
            }),
            p_total: vs_base.and_then(|b| welch(&totals[i], &totals[b])),
        });
    }
    Ok(out)
}

/// `method,trial,episode,return`, in method, trial, episode order.
pub fn curves_csv(spec: &ExperimentSpec, report: &BatteryReport) -> String {
    let failed: HashSet<(&str, usize)> = report
        .failures
        .iter()
        .map(|f| (f.method.as_str(), f.trial))
        .collect();
    let mut s = String::from("method,trial,episode,return\n");
    for (m, method) in spec.methods.iter().enumerate() {
        let trials = (0..spec.trials).filter(|t| !failed.contains(&(method.name.as_str(), *t)));
        for (t, log) in trials.zip(&report.logs[m]) {
            for e in log {
                let _ = writeln!(s, "{},{t},{},{}", method.name, e.episode, e.ret);
            }
        }
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn summary_csv(report: &BatteryReport) -> String {
    let mut s = String::from(
        "method,trials,failed,jumpstart,total_reward,final_mean,final_std,reuse_mean,reuse_std,p_final,p_total\n",
    );
    for m in &report.summaries {
        let (rm, rs) = if m.reuse.is_empty() {
            (String::new(), String::new())
        } else {
            let join = |f: fn(&(f64, f64)) -> f64| m.reuse.iter().map(|r| f(r).to_string()).collect::<Vec<_>>().join(";");
            (join(|r| r.0), join(|r| r.1))
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            m.name,
            m.trials,
            m.failed,
            opt(m.jumpstart),
            m.total_reward,
            m.final_reward.0,
            m.final_reward.1,
            rm,
            rs,
            opt(m.p_final),
            opt(m.p_total),
        );
    }
    s
}

/// Plain-text table: jumpstart, total reward and final reward per method.
pub fn table_text(report: &BatteryReport) -> String {
    let width = report.summaries.iter().map(|m| m.name.len()).max().unwrap_or(6).max(6);
    let mut s = format!(
        "{:<width$} | {:>10} | {:>12} | {:>20} | {:>9}\n",
        "Method", "Jumpstart", "Total Reward", "Final Reward", "p(final)"
    );
    s.push_str(&"-".repeat(width + 64));
    s.push('\n');
    for m in &report.summaries {
        let js = m.jumpstart.map(|j| format!("{j:.1}")).unwrap_or_else(|| "N/A".into());
        let fin = if m.trials > 1 {
            format!("{:.1} ± {:.1}", m.final_reward.0, m.final_reward.1)
        } else {
            format!("{:.1}", m.final_reward.0)
        };
        let p = m.p_final.map(|p| format!("{p:.2e}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, "{:<width$} | {:>10} | {:>12.1} | {:>20} | {:>9}", m.name, js, m.total_reward, fin, p);
    }
    s
}

/// Loads `spec_path`, runs it and writes the report files into `out_dir`.
pub fn run_battery(spec_path: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<BatteryReport> {
    let spec = ExperimentSpec::load(spec_path)?;
    let priors = load_priors(&spec)?;
    let report = run_experiment(&spec, &priors)?;
    write_report(&spec, &report, out_dir)?;
    Ok(report)
}

pub fn write_report(spec: &ExperimentSpec, report: &BatteryReport, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("curves.csv", curves_csv(spec, report))?;
    write("summary.csv", summary_csv(report))?;
    write("table.txt", table_text(report))?;
    if !report.failures.is_empty() {
        write("failures.json", serde_json::to_string_pretty(&report.failures)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Two-tailed p by Simpson integration of the t density.
    fn t_tail_oracle(t: f64, df: f64) -> f64 {
        let ln_c = statrs::function::gamma::ln_gamma((df + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(df / 2.0)
            - 0.5 * (df * std::f64::consts::PI).ln();
        let pdf = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
        let n = 200_000;
        let h = t.abs() / n as f64;
        let mut s = pdf(0.0) + pdf(t.abs());
        for i in 1..n {
            s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        1.0 - 2.0 * s * h / 3.0
    }

    #[test]
    fn jumpstart_examples() {
        let t = vec![vec![10.0; 60]];
        let b = vec![vec![5.0; 60]];
        assert_eq!(jumpstart(&t, &b, 50).unwrap(), 5.0);
        assert_eq!(jumpstart(&t, &t, 50).unwrap(), 0.0);
        assert!(jumpstart(&[], &b, 50).is_err());
        assert!(jumpstart(&t, &b, 61).is_err());
    }

    #[test]
    fn total_reward_examples() {
        assert_eq!(total_reward(&[3.5; 137], 20).unwrap(), 70.0);
        let lin: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((total_reward(&lin, 20).unwrap() - 1010.0).abs() < 1e-9);
        assert!(total_reward(&[1.0; 19], 20).is_err());
        // 21 episodes: segments of one, the last holding two
        let c: Vec<f64> = (0..21).map(f64::from).collect();
        assert_eq!(total_reward(&c, 20).unwrap(), (0..19).sum::<i32>() as f64 + 19.5);
    }

    #[test]
    fn final_reward_examples() {
        assert_eq!(final_reward(&[vec![7.0; 40]], 0.05).unwrap(), (7.0, 0.0));
        let (m, s) = final_reward(&[vec![6.0; 20], vec![8.0; 20]], 0.05).unwrap();
        assert_eq!(m, 7.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
        let (m, _) = final_reward(&[(0..100).map(f64::from).collect()], 0.05).unwrap();
        assert_eq!(m, 97.0);
    }

    fn log(steps: usize, prior: usize) -> EpisodeLog {
        EpisodeLog {
            episode: 0,
            ret: 0.0,
            steps,
            source_counts: crate::agents::SourceCounts {
                explore: 0,
                q: steps - prior,
                priors: vec![prior],
            },
            per_step_cp: None,
        }
    }

    #[test]
    fn reuse_examples() {
        assert_eq!(reuse_frequency(&[vec![log(10, 0); 20]], 0.05).unwrap(), vec![(0.0, 0.0)]);
        assert_eq!(reuse_frequency(&[vec![log(10, 5); 20]], 0.05).unwrap(), vec![(0.5, 0.0)]);
        let r = reuse_frequency(&[vec![log(10, 2); 20], vec![log(10, 4); 20]], 0.05).unwrap();
        assert!((r[0].0 - 0.3).abs() < 1e-12);
    }

    #[test]
    fn welch_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(welch_ttest(&a, &a).unwrap().p, 1.0);
        let w = welch_ttest(&a, &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((w.t + 1.0).abs() < 1e-12);
        assert_eq!(w.df, 8.0);
        assert!((w.p - 0.347).abs() < 1e-3);
        assert!((w.p - t_tail_oracle(w.t, w.df)).abs() < 1e-9, "{} vs oracle", w.p);
        let lo: Vec<f64> = (0..10).map(|i| f64::from(i) * 1e-3).collect();
        let hi: Vec<f64> = (0..10).map(|i| 100.0 + f64::from(i) * 1e-3).collect();
        assert!(welch_ttest(&lo, &hi).unwrap().p < 1e-4);
        assert!(welch_ttest(&[1.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(welch_ttest(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn one_sided_helpers() {
        let w = welch_ttest(&[5.0, 6.0, 7.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(w.p_greater() < 0.01);
        assert!(w.p_less() > 0.99);
        assert!((w.p_greater() * 2.0 - w.p).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn welch_is_symmetric(
            a in proptest::collection::vec(-100f64..100.0, 2..12),
            b in proptest::collection::vec(-100f64..100.0, 2..12),
        ) {
            if let (Ok(x), Ok(y)) = (welch_ttest(&a, &b), welch_ttest(&b, &a)) {
                prop_assert!((x.t + y.t).abs() <= 1e-9 * x.t.abs().max(1.0));
                prop_assert!((x.p - y.p).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&x.p));
            }
        }

        #[test]
        fn jumpstart_of_identical_sets_is_zero(
            c in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 50..60), 1..4)
        ) {
            prop_assert_eq!(jumpstart(&c, &c, 50).unwrap(), 0.0);
        }

        #[test]
        fn constant_total_is_exact(v in -1e3f64..1e3, n in 20usize..500) {
            prop_assert!((total_reward(&vec![v; n], 20).unwrap() - 20.0 * v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }

    fn small_spec(methods: Vec<MethodSpec>) -> ExperimentSpec {
        ExperimentSpec {
            env: EnvConfig::cartpole().with_max_steps(200),
            episodes: 40,
            trials: 3,
            master_seed: 5,
            baseline: None,
            head: 10,
            tail_fraction: 0.05,
            methods,
        }
    }

    fn method(name: &str, agent: AgentConfig) -> MethodSpec {
        MethodSpec {
            name: name.into(),
            priors: vec![],
            agent,
        }
    }

    #[test]
    fn spec_parsing_and_validation() {
        let text = r#"{
            "env": {"env_kind": "cartpole"},
            "episodes": 100, "trials": 2,
            "methods": [
                {"name": "q", "agent": {"method": "qlearn"}},
                {"name": "d", "priors": ["l4.json"], "agent": {"method": "drop", "select": "she", "update_method": "dru"}}
            ]
        }"#;
        let spec: ExperimentSpec = serde_json::from_str(text).unwrap();
        assert!(spec.validate().is_ok());
        assert_eq!(spec.head, 50);
        let mut dup = spec.clone();
        dup.methods[1].name = "q".into();
        assert!(dup.validate().is_err());
        let bad = text.replace("\"trials\": 2", "\"trials\": 2, \"extra\": 1");
        assert!(serde_json::from_str::<ExperimentSpec>(&bad).is_err());
    }

    #[test]
    fn battery_reports_and_files() {
        let spec = small_spec(vec![
            method("qlearn", AgentConfig::qlearn()),
            method("sarsa", AgentConfig::new(Method::Sarsa)),
        ]);
        let priors = vec![vec![], vec![]];
        let report = run_experiment(&spec, &priors).unwrap();
        assert!(report.failures.is_empty());
        let q = report.summary("qlearn").unwrap();
        assert!(q.jumpstart.is_none() && q.p_final.is_none());
        let s = report.summary("sarsa").unwrap();
        assert!(s.jumpstart.is_some() && s.p_final.is_some());
        let dir = tempfile::tempdir().unwrap();
        write_report(&spec, &report, dir.path()).unwrap();
        let curves = fs::read_to_string(dir.path().join("curves.csv")).unwrap();
        assert_eq!(curves.lines().count(), 1 + 2 * 3 * 40);
        assert!(fs::read_to_string(dir.path().join("table.txt")).unwrap().contains("N/A"));
        let again = run_experiment(&spec, &priors).unwrap();
        assert_eq!(curves, curves_csv(&spec, &again));
    }

    #[test]
    fn failed_trials_are_recorded() {
        let mut bad = AgentConfig::new(Method::Hat);
        bad.phi = Some(0.5);
        let spec = small_spec(vec![method("qlearn", AgentConfig::qlearn()), method("hat", bad)]);
        // hat without a prior fails at agent construction in every trial
        let report = run_experiment(&spec, &[vec![], vec![]]).unwrap();
        assert_eq!(report.failures.len(), 3);
        assert_eq!(report.summary("hat").unwrap().trials, 0);
        assert_eq!(report.summary("qlearn").unwrap().trials, 3);
    }

    #[test]
    fn single_trial_has_zero_std() {
        let mut spec = small_spec(vec![method("qlearn", AgentConfig::qlearn())]);
        spec.trials = 1;
        let report = run_experiment(&spec, &[vec![]]).unwrap();
        assert_eq!(report.summaries[0].final_reward.1, 0.0);
    }
}
