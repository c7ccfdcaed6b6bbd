use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn run(args: &[&str], cwd: &Path) {
    let st = Command::new(env!("CARGO_BIN_EXE_drop"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(st.success(), "{args:?}");
}

fn start_server(cwd: &Path, extra: &[&str]) -> (Server, String) {
    let mut args = vec!["serve", "--addr", "127.0.0.1:0", "--out", "sessions"];
    args.extend_from_slice(extra);
    let mut child = Command::new(env!("CARGO_BIN_EXE_drop"))
        .args(&args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    (Server(child), addr)
}

async fn next_json<S>(ws: &mut S) -> Value
where
    S: StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(60), ws.next())
            .await
            .expect("frame in time")
            .expect("stream open")
            .unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

fn prepare(dir: &Path) {
    run(&["demo-record", "--episodes", "2", "--max-steps", "200", "--out", "demos"], dir);
    run(&["train-prior", "--demos", "demos/cartpole-l4.demo.jsonl", "--epochs", "10", "--out", "prior"], dir);
    run(
        &["train", "--method", "drop", "--prior", "prior/prior.json", "--episodes", "20", "--seed", "1", "--out", "run"],
        dir,
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn websocket_session_follows_the_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    let (_server, addr) = start_server(dir, &["--budget-episodes", "1", "--horizon", "3"]);
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();

    ws.send(Message::text(json!({"type": "action", "action": 0}).to_string())).await.unwrap();
    assert_eq!(next_json(&mut ws).await["type"], "error");

    let artifacts = dir.join("run").to_string_lossy().to_string();
    ws.send(Message::text(json!({"type": "start", "env": "cartpole", "artifacts_path": artifacts}).to_string()))
        .await
        .unwrap();

    let (mut requests, mut acks, mut awaiting_frames) = (0, 0, 0);
    let done = loop {
        let m = next_json(&mut ws).await;
        match m["type"].as_str().unwrap() {
            "state" => {
                assert_eq!(m["features"].as_array().unwrap().len(), 4);
                assert!(m["render"].is_object());
                if m["phase"] == "awaiting_demo" {
                    awaiting_frames += 1;
                    assert!(m["remaining"].as_u64().unwrap() >= 1);
                    let x = &m["features"][2];
                    let action = if x.as_f64().unwrap() > 0.0 { 1 } else { 0 };
                    ws.send(Message::text(json!({"type": "action", "action": action}).to_string()))
                        .await
                        .unwrap();
                } else {
                    assert_eq!(m["phase"], "agent_acting");
                    assert_eq!(m["remaining"], 0);
                }
            }
            "request_demo" => {
                requests += 1;
                assert_eq!(m["horizon"], 3);
            }
            "ack" => {
                acks += 1;
                assert_eq!(m["recorded"], true);
            }
            "session_done" => break m,
            other => panic!("unexpected frame {other}: {m}"),
        }
    };
    assert!(requests > 0);
    assert_eq!(acks, awaiting_frames);
    assert_eq!(done["collected"].as_u64().unwrap(), acks as u64);
    assert!(done["active_seconds"].as_f64().unwrap() >= 0.0);
    let _ = ws.close(None).await;

    let saved = dir.join("sessions/s0.demo.jsonl");
    for _ in 0..100 {
        if saved.exists() {
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert!(saved.exists());
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_start_reports_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (_server, addr) = start_server(tmp.path(), &[]);
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    ws.send(Message::text(json!({"type": "start", "env": "cartpole", "artifacts_path": "/nonexistent"}).to_string()))
        .await
        .unwrap();
    let m = next_json(&mut ws).await;
    assert_eq!(m["type"], "error");
    assert!(m["message"].as_str().unwrap().contains("nonexistent"));

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap();
    ws.send(Message::text("not json")).await.unwrap();
    assert_eq!(next_json(&mut ws).await["type"], "error");
}
