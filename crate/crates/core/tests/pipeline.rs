use std::sync::{mpsc, Arc};
use std::thread;

use drop_core::agents::{run_training, AgentConfig};
use drop_core::demos::{load_dataset, record_demonstrations};
use drop_core::models::{train_mlp, PriorModel};
use drop_core::policy::{demonstrator, DemoLevel};
use drop_core::request::{load_artifacts, ChannelPort, ClientMsg, Phase, RequestPolicy, ServerMsg, Session};
use drop_core::{EnvConfig, EnvKind, MlpLayout, SelectModel, TrainSpec, UpdateMethod};

#[test]
fn record_train_save_and_serve_a_session() {
    let dir = tempfile::tempdir().unwrap();
    let env = EnvConfig::cartpole().with_max_steps(400);

    let demo_path = dir.path().join("l4.demo.jsonl");
    let mut d = demonstrator(EnvKind::Cartpole, DemoLevel::L4);
    let recorded = record_demonstrations(&env, d.as_mut(), 3, &demo_path, 1, "l4").unwrap();
    let loaded = load_dataset(&demo_path).unwrap();
    assert_eq!(recorded, loaded);

    let spec = TrainSpec {
        epochs: 30,
        ..TrainSpec::default()
    };
    let (prior, _) = train_mlp(&loaded, &MlpLayout::default_for(EnvKind::Cartpole), &spec).unwrap();
    let prior_path = dir.path().join("prior.json");
    prior.save(&prior_path).unwrap();
    let prior = Arc::new(PriorModel::load(&prior_path).unwrap());

    let run_dir = dir.path().join("run");
    let cfg = AgentConfig::drop(SelectModel::She, UpdateMethod::Dru);
    let run = run_training(&env, &cfg, vec![prior], 40, 8, Some(&run_dir)).unwrap();
    let agent = load_artifacts(&run_dir).unwrap();
    assert_eq!(agent.q, run.agent.q);
    assert_eq!(agent.last_ave_c, run.agent.last_ave_c);

    let (out_tx, out_rx) = mpsc::channel();
    let (in_tx, in_rx) = mpsc::channel();
    let client = thread::spawn(move || {
        let (mut phase, mut requests, mut sent) = (Phase::AgentActing, 0, 0);
        for msg in out_rx {
            match msg {
                ServerMsg::RequestDemo { horizon } => {
                    assert_eq!(horizon, 4);
                    requests += 1;
                }
                ServerMsg::State { phase: p, features, .. } => {
                    phase = p;
                    if p == Phase::AwaitingDemo {
                        let action = usize::from(features[2] + 0.5 * features[3] > 0.0);
                        in_tx.send(ClientMsg::Action { action }).unwrap();
                        sent += 1;
                    }
                }
                ServerMsg::SessionDone { collected, .. } => return (requests, sent, collected, phase),
                ServerMsg::Ack { recorded } => assert!(recorded),
                ServerMsg::Error { message } => panic!("{message}"),
            }
        }
        panic!("session ended without session_done");
    });
    let policy = RequestPolicy {
        horizon: 4,
        budget_episodes: 3,
        ..RequestPolicy::default()
    };
    let mut port = ChannelPort {
        outgoing: out_tx,
        incoming: in_rx,
    };
    let (collection, _) = Session::new("t", &env, agent, policy, &mut port, 2).unwrap().run().unwrap();
    drop(port);
    let (requests, sent, collected, _) = client.join().unwrap();
    assert_eq!(collection.report.requests, requests);
    assert_eq!(collected, sent);
    assert_eq!(collection.dataset.len(), collected);
    assert_eq!(collection.report.active_steps, collection.dataset.len());
    assert!(collection.dataset.len() <= policy.budget_episodes * env.max_steps());
}
