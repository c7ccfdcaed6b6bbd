//! WebSocket host for demonstration sessions. Each connection drives one
//! session: the client sends `start`, then answers `request_demo` frames
//! with `action` frames until `session_done`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc};

use anyhow::{Context, Result};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use tokio::sync::mpsc as ampsc;

use drop_core::request::{load_artifacts, ChannelPort, ClientMsg, RequestPolicy, ServerMsg, Session};
use drop_core::seeding::derive_seed;
use drop_core::{EnvConfig, EnvKind};

struct Shared {
    policy: RequestPolicy,
    seed: u64,
    out: PathBuf,
    next_id: AtomicU64,
}

/// `cartpole`, `gridmario` or `gridmario:<level>`.
fn parse_env(s: &str) -> Result<EnvConfig> {
    let (kind, level) = match s.split_once(':') {
        Some((k, l)) => (k, l.parse::<u32>().with_context(|| format!("bad level in `{s}`"))?),
        None => (s, 0),
    };
    let cfg = match kind.parse::<EnvKind>()? {
        EnvKind::Cartpole => EnvConfig::cartpole(),
        EnvKind::Gridmario => EnvConfig::gridmario(level),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(addr: &str, policy: RequestPolicy, seed: u64, out: PathBuf) -> Result<()> {
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let shared = Arc::new(Shared {
        policy,
        seed,
        out,
        next_id: AtomicU64::new(0),
    });
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let app = Router::new()
            .route("/ws", get(upgrade))
            .route("/health", get(|| async { "ok" }))
            .with_state(shared);
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        let local: SocketAddr = listener.local_addr()?;
        println!("listening on {local}");
        log::info!("session endpoint ws://{local}/ws");
        axum::serve(listener, app).await?;
        Ok(())
    })
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| handle(socket, shared))
}

async fn send(socket: &mut WebSocket, msg: &ServerMsg) -> bool {
    let text = serde_json::to_string(msg).expect("server frames serialize");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn error(socket: &mut WebSocket, message: String) {
    let _ = send(socket, &ServerMsg::Error { message }).await;
}

async fn handle(mut socket: WebSocket, shared: Arc<Shared>) {
    let (env, artifacts) = loop {
        match socket.recv().await {
            Some(Ok(Message::Text(t))) => match serde_json::from_str::<ClientMsg>(&t) {
                Ok(ClientMsg::Start { env, artifacts_path }) => break (env, artifacts_path),
                Ok(ClientMsg::Action { .. }) => error(&mut socket, "no session: send start first".into()).await,
                Err(e) => error(&mut socket, format!("bad frame: {e}")).await,
            },
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
            Some(Ok(_)) => {}
        }
    };
    let env_cfg = match parse_env(&env) {
        Ok(c) => c,
        Err(e) => return error(&mut socket, format!("{e:#}")).await,
    };
    let agent = match load_artifacts(&artifacts) {
        Ok(a) => a,
        Err(e) => return error(&mut socket, format!("loading {artifacts}: {e}")).await,
    };

    let n = shared.next_id.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{n}");
    let (out_tx, out_rx) = mpsc::channel::<ServerMsg>();
    let (in_tx, in_rx) = mpsc::channel::<ClientMsg>();
    let (fwd_tx, mut fwd_rx) = ampsc::unbounded_channel::<ServerMsg>();

    let worker = {
        let shared = shared.clone();
        let id = id.clone();
        let err_tx = out_tx.clone();
        tokio::task::spawn_blocking(move || {
            let mut port = ChannelPort {
                outgoing: out_tx,
                incoming: in_rx,
            };
            let seed = derive_seed(shared.seed, n);
            let result = Session::new(id.clone(), &env_cfg, agent, shared.policy, &mut port, seed)
                .and_then(Session::run)
                .map_err(anyhow::Error::from)
                .and_then(|(collection, _)| save(&shared.out, &id, &collection));
            if let Err(e) = result {
                log::error!("session {id}: {e:#}");
                let _ = err_tx.send(ServerMsg::Error {
                    message: format!("{e:#}"),
                });
            }
        })
    };
    tokio::task::spawn_blocking(move || {
        while let Ok(m) = out_rx.recv() {
            if fwd_tx.send(m).is_err() {
                break;
            }
        }
    });

    log::info!("session {id} started on {env}");
    loop {
        tokio::select! {
            out = fwd_rx.recv() => match out {
                Some(m) => {
                    if !send(&mut socket, &m).await {
                        break;
                    }
                }
                None => break,
            },
            inc = socket.recv() => match inc {
                Some(Ok(Message::Text(t))) => match serde_json::from_str::<ClientMsg>(&t) {
                    Ok(m) => {
                        let _ = in_tx.send(m);
                    }
                    Err(e) => error(&mut socket, format!("bad frame: {e}")).await,
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    // Dropping the sender makes any pending request time out immediately.
    drop(in_tx);
    let _ = worker.await;
    log::info!("session {id} closed");
}

fn save(out: &Path, id: &str, collection: &drop_core::request::Collection) -> Result<()> {
    collection.dataset.save(out.join(format!("{id}.demo.jsonl")))?;
    let path = out.join(format!("{id}.report.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&collection.report)?)
        .with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_strings() {
        assert_eq!(parse_env("cartpole").unwrap(), EnvConfig::cartpole());
        assert_eq!(parse_env("gridmario:2").unwrap(), EnvConfig::gridmario(2));
        assert!(parse_env("gridmario:x").is_err());
        assert!(parse_env("pong").is_err());
    }
}
