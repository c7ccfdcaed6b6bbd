use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use drop_core::agents::{run_training, AgentConfig, Method};
use drop_core::bench::run_battery;
use drop_core::demos::{dataset_stats, load_dataset, record_demonstrations, DemoDataset};
use drop_core::models::{accuracy, train_mlp, train_rules, MlpLayout, PriorModel, TrainSpec};
use drop_core::policy::{demonstrator, DemoLevel};
use drop_core::request::{full_episode_baseline, load_artifacts, run_interactive_collection, RequestPolicy, ScriptedDemonstrator};
use drop_core::{EnvConfig, EnvKind, SelectModel, UpdateMethod};

mod serve;

#[derive(Parser)]
#[command(name = "drop", version, about = "Confidence-based reuse of demonstrations in reinforcement learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record full demonstration episodes from a scripted demonstrator.
    DemoRecord(DemoRecordArgs),
    /// Train a prior model (MLP or rule tree) on demonstrations.
    TrainPrior(TrainPriorArgs),
    /// Train one agent and save its tables and episode log.
    Train(TrainArgs),
    /// Run an experiment file: methods x trials, metrics and t-tests.
    Battery(BatteryArgs),
    /// Collect requested demonstrations with a scripted demonstrator.
    RequestCollect(RequestArgs),
    /// Host demonstration sessions over WebSocket.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct EnvArgs {
    #[arg(long, default_value = "cartpole")]
    env: EnvKind,
    /// GridMario level.
    #[arg(long, default_value_t = 0)]
    level_id: u32,
    #[arg(long)]
    max_steps: Option<usize>,
}

impl EnvArgs {
    fn config(&self) -> Result<EnvConfig> {
        let cfg = EnvConfig {
            env_kind: self.env,
            seed: 0,
            max_steps: self.max_steps,
            level_id: self.level_id,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DemoRecordArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// rand, l1, l2, l3 or l4.
    #[arg(long, default_value = "l4")]
    demonstrator: DemoLevel,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorKindArg {
    Mlp,
    Rules,
}

#[derive(Args)]
struct TrainPriorArgs {
    /// One or more `.demo.jsonl` files, merged in order.
    #[arg(long = "demos", required = true, num_args = 1..)]
    demos: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "mlp")]
    kind: PriorKindArg,
    /// Hidden layer widths, e.g. `15,15`; defaults per environment.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AgentArgs {
    /// JSON agent config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// hd, sd or she.
    #[arg(long)]
    select: Option<SelectModel>,
    /// dru or dcu.
    #[arg(long)]
    update_method: Option<UpdateMethod>,
    #[arg(long)]
    she_epsilon: Option<f64>,
    #[arg(long)]
    include_q: Option<bool>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    chat_threshold: Option<f64>,
}

impl AgentArgs {
    fn config(&self) -> Result<AgentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => AgentConfig::new(self.method.unwrap_or(Method::Qlearn)),
        };
        if let Some(m) = self.method {
            cfg.method = m;
        }
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f { cfg.$f = Some(v); }
            )*};
        }
        set!(alpha, select, update_method, she_epsilon, include_q, phi, chat_threshold);
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[command(flatten)]
    agent: AgentArgs,
    /// Prior model files, in source order.
    #[arg(long = "prior")]
    priors: Vec<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BatteryArgs {
    /// Experiment JSON file.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct PolicyArgs {
    /// Window width and height in bins, e.g. `10,10`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [10u16, 10])]
    window: Vec<u16>,
    #[arg(long, default_value_t = 20)]
    horizon: usize,
    #[arg(long, default_value_t = 20)]
    budget_episodes: usize,
    #[arg(long, default_value_t = 30.0)]
    timeout_secs: f64,
}

impl PolicyArgs {
    fn policy(&self) -> Result<RequestPolicy> {
        let p = RequestPolicy {
            window: (self.window[0], self.window[1]),
            horizon: self.horizon,
            budget_episodes: self.budget_episodes,
            timeout_secs: self.timeout_secs,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct RequestArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Output directory of a DRoP `train` run.
    #[arg(long)]
    artifacts: PathBuf,
    /// Scripted demonstrator answering requests and recording the
    /// full-episode baseline.
    #[arg(long, default_value = "l4")]
    demonstrator: DemoLevel,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Collected session datasets are written here.
    #[arg(long)]
    out: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn demo_record(a: DemoRecordArgs) -> Result<()> {
    let cfg = a.env.config()?;
    create_dir(&a.out)?;
    let source_id = format!("{}-{}", cfg.env_kind, a.demonstrator);
    let path = a.out.join(format!("{source_id}.demo.jsonl"));
    let mut policy = demonstrator(cfg.env_kind, a.demonstrator);
    let ds = record_demonstrations(&cfg, policy.as_mut(), a.episodes, &path, a.seed, &source_id)?;
    let stats = dataset_stats(&ds)?;
    write_json(&a.out.join("stats.json"), &stats)?;
    println!(
        "recorded {} steps over {} episodes (avg performance {:.1}) to {}",
        stats.steps,
        stats.episodes,
        stats.avg_performance,
        path.display()
    );
    Ok(())
}

fn load_demos(paths: &[PathBuf]) -> Result<DemoDataset> {
    let parts = paths
        .iter()
        .map(|p| load_dataset(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    if parts.len() == 1 {
        return Ok(parts.into_iter().next().expect("one part"));
    }
    let refs: Vec<&DemoDataset> = parts.iter().collect();
    Ok(DemoDataset::merged(&parts[0].source_id, &refs)?)
}

fn train_prior(a: TrainPriorArgs) -> Result<()> {
    let ds = load_demos(&a.demos)?;
    create_dir(&a.out)?;
    let (model, report) = match a.kind {
        PriorKindArg::Mlp => {
            let layout = match &a.hidden {
                Some(h) => {
                    let mut sizes = vec![ds.env_kind.feature_count()];
                    sizes.extend(h);
                    sizes.push(ds.env_kind.action_count());
                    MlpLayout::new(sizes)?
                }
                None => MlpLayout::default_for(ds.env_kind),
            };
            let spec = TrainSpec {
                learning_rate: a.learning_rate,
                epochs: a.epochs,
                batch_size: a.batch_size,
                seed: a.seed,
            };
            let (model, report) = train_mlp(&ds, &layout, &spec)?;
            let loss = report.loss_history.last().copied();
            (model, json!({ "kind": "mlp", "layout": layout, "final_loss": loss }))
        }
        PriorKindArg::Rules => {
            if a.hidden.is_some() {
                bail!("--hidden applies to mlp priors only");
            }
            (train_rules(&ds)?, json!({ "kind": "rules" }))
        }
    };
    let acc = accuracy(&model, &ds)?;
    let path = a.out.join("prior.json");
    model.save(&path)?;
    let mut report = report;
    report["training_accuracy"] = json!(acc);
    report["records"] = json!(ds.len());
    write_json(&a.out.join("train_report.json"), &report)?;
    println!("prior saved to {} (training accuracy {:.3})", path.display(), acc);
    Ok(())
}

fn load_priors(paths: &[PathBuf]) -> Result<Vec<Arc<PriorModel>>> {
    paths
        .iter()
        .map(|p| {
            PriorModel::load(p)
                .map(Arc::new)
                .with_context(|| format!("loading prior {}", p.display()))
        })
        .collect()
}

fn train(a: TrainArgs) -> Result<()> {
    let env = a.env.config()?;
    let agent = a.agent.config()?;
    let priors = load_priors(&a.priors)?;
    let run = run_training(&env, &agent, priors, a.episodes, a.seed, Some(&a.out))?;
    let n = run.logs.len();
    let tail = &run.logs[n - (n / 20).max(1)..];
    let tail_mean = tail.iter().map(|l| l.ret).sum::<f64>() / tail.len() as f64;
    println!(
        "{} episodes of {} done; last {} episodes average return {:.1}; output in {}",
        n,
        agent.method,
        tail.len(),
        tail_mean,
        a.out.display()
    );
    Ok(())
}

fn battery(a: BatteryArgs) -> Result<()> {
    let report = run_battery(&a.spec, &a.out)?;
    print!("{}", drop_core::bench::table_text(&report));
    if !report.failures.is_empty() {
        eprintln!("{} trial(s) failed; see failures.json", report.failures.len());
    }
    Ok(())
}

fn request_collect(a: RequestArgs) -> Result<()> {
    let env = a.env.config()?;
    let policy = a.policy.policy()?;
    let agent = load_artifacts(&a.artifacts).with_context(|| format!("loading artifacts from {}", a.artifacts.display()))?;
    create_dir(&a.out)?;
    let mut port = ScriptedDemonstrator::new(demonstrator(env.env_kind, a.demonstrator), a.seed);
    let collection = run_interactive_collection(&env, agent, policy, &mut port, a.seed)?;
    let mut source = demonstrator(env.env_kind, a.demonstrator);
    let (full, full_secs) = full_episode_baseline(&env, source.as_mut(), policy.budget_episodes, a.seed)?;
    collection.dataset.save(a.out.join("requested.demo.jsonl"))?;
    full.save(a.out.join("full.demo.jsonl"))?;
    let r = &collection.report;
    write_json(
        &a.out.join("report.json"),
        &json!({
            "collection": r,
            "full_episode_steps": full.len(),
            "full_episode_seconds": full_secs,
            "step_savings": 1.0 - r.active_steps as f64 / full.len().max(1) as f64,
        }),
    )?;
    println!(
        "{} requests, {} demonstrated steps vs {} for {} full episodes",
        r.requests,
        r.active_steps,
        full.len(),
        policy.budget_episodes
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::DemoRecord(a) => demo_record(a),
        Command::TrainPrior(a) => train_prior(a),
        Command::Train(a) => train(a),
        Command::Battery(a) => battery(a),
        Command::RequestCollect(a) => request_collect(a),
        Command::Serve(a) => serve::run(&a.addr, a.policy.policy()?, a.seed, a.out),
    }
}
