use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};

use drop_core::agents::{Agent, AgentConfig};
use drop_core::confidence::ConfUpdate;
use drop_core::decision::{select, SelectModel, SourceScores};
use drop_core::demos::collect_demonstrations;
use drop_core::models::{train_mlp, MlpLayout, TrainSpec};
use drop_core::policy::{demonstrator, DemoLevel};
use drop_core::seeding::rng_from;
use drop_core::{ActionId, ConfidenceModel, Env, EnvConfig, EnvKind, StateKey, UpdateMethod};

fn envs(c: &mut Criterion) {
    for cfg in [EnvConfig::cartpole(), EnvConfig::gridmario(0)] {
        let mut env = Env::new(&cfg).unwrap();
        let actions = env.action_count();
        env.reset(1);
        let mut i = 0usize;
        c.bench_function(&format!("{}_step", cfg.env_kind), |b| {
            b.iter(|| {
                i += 1;
                let out = env.step(ActionId(i % actions)).unwrap();
                if out.terminal {
                    env.reset(i as u64);
                }
                black_box(out.reward)
            })
        });
        let spec = cfg.env_kind.default_discretizer();
        let f = env.observation();
        c.bench_function(&format!("{}_discretize", cfg.env_kind), |b| {
            b.iter(|| spec.discretize(black_box(&f)).unwrap())
        });
    }
}

fn prior_predict(c: &mut Criterion) {
    for env in [EnvKind::Cartpole, EnvKind::Gridmario] {
        let cfg = match env {
            EnvKind::Cartpole => EnvConfig::cartpole().with_max_steps(300),
            EnvKind::Gridmario => EnvConfig::gridmario(0),
        };
        let mut demo = demonstrator(env, DemoLevel::L4);
        let ds = collect_demonstrations(&cfg, demo.as_mut(), 1, 0, "bench").unwrap();
        let spec = TrainSpec {
            epochs: 2,
            ..TrainSpec::default()
        };
        let (model, _) = train_mlp(&ds, &MlpLayout::default_for(env), &spec).unwrap();
        let x = ds.records[0].features.clone();
        c.bench_function(&format!("{env}_mlp_predict"), |b| {
            b.iter(|| model.predict(black_box(&x)).unwrap())
        });
    }
}

fn confidence_and_select(c: &mut Criterion) {
    let mut cp = ConfidenceModel::cp(0.2, 0.9, UpdateMethod::Dru, 1.0).unwrap();
    let keys: Vec<StateKey> = (0..64u16).map(|k| StateKey(vec![k % 8, k / 8, 3, 4])).collect();
    let mut i = 0usize;
    c.bench_function("cp_update", |b| {
        b.iter(|| {
            i += 1;
            cp.update(ConfUpdate {
                state: &keys[i % 64],
                next_state: &keys[(i + 1) % 64],
                reward: 1.0,
                terminal: false,
                prior_confidence: Some(0.8),
            })
            .unwrap()
        })
    });
    let mut rng = rng_from(3);
    let one = SourceScores::new(2.0, vec![1.5]);
    let many = SourceScores::new(2.0, vec![1.5, -0.3, 0.9, 2.2]);
    for (name, model) in [("hd", SelectModel::Hd), ("sd", SelectModel::Sd), ("she", SelectModel::She)] {
        c.bench_function(&format!("select_{name}_1prior"), |b| {
            b.iter(|| select(model, black_box(&one), 0.1, true, &mut rng).unwrap())
        });
    }
    c.bench_function("select_sd_4priors", |b| {
        b.iter(|| select(SelectModel::Sd, black_box(&many), 0.1, true, &mut rng).unwrap())
    });
}

fn drop_episode(c: &mut Criterion) {
    let cfg = EnvConfig::cartpole().with_max_steps(500);
    let mut demo = demonstrator(EnvKind::Cartpole, DemoLevel::L4);
    let ds = collect_demonstrations(&cfg, demo.as_mut(), 2, 0, "bench").unwrap();
    let spec = TrainSpec {
        epochs: 5,
        ..TrainSpec::default()
    };
    let (model, _) = train_mlp(&ds, &MlpLayout::default_for(EnvKind::Cartpole), &spec).unwrap();
    let prior = Arc::new(model);
    let agent_cfg = AgentConfig::drop(SelectModel::She, UpdateMethod::Dru);
    let mut agent = Agent::new(&agent_cfg, EnvKind::Cartpole, vec![prior], 7).unwrap();
    let mut env = Env::new(&cfg).unwrap();
    let mut seed = 0u64;
    c.bench_function("cartpole_drop_episode", |b| {
        b.iter(|| {
            seed += 1;
            let f = env.reset(seed);
            agent.run_episode(&mut env, f, false).unwrap().steps
        })
    });
}

criterion_group!(benches, envs, prior_predict, confidence_and_select, drop_episode);
criterion_main!(benches);
