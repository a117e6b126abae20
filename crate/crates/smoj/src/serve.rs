//! HTTP server for the browser viewer: static files, the asset bytes and a
//! live-drive WebSocket relay.
//!
//! | route          | behavior                                                   |
//! |----------------|------------------------------------------------------------|
//! | `GET /`        | viewer bundle if a directory was given, else an index page |
//! | `GET /asset.smoj` | the asset file, byte for byte                          |
//! | `WS /drive`    | text frames `w1 ... wK`; valid frames are relayed as sent, malformed ones get an `error: ...` reply |
//! | `WS /viewers`  | receives every relayed frame, in relay order               |

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::header;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use smoj_core::BlendWeights;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, watch};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

/// Frames buffered per slow viewer before it starts skipping.
const RELAY_CAPACITY: usize = 256;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DriveFrameError {
    #[error("expected {expected} weights, found {found}")]
    Count { expected: usize, found: usize },
    #[error("weight {index} ({token:?}) is not a finite decimal")]
    Number { index: usize, token: String },
    #[error("weight {index} = {value} is outside [0, 1]")]
    Range { index: usize, value: f32 },
}

/// Parses a live-drive frame: exactly `channels` whitespace-separated
/// decimals in `[0, 1]`.
pub fn parse_drive_frame(text: &str, channels: usize) -> Result<BlendWeights, DriveFrameError> {
    let tokens: Vec<&str> = text.split_ascii_whitespace().collect();
    if tokens.len() != channels {
        return Err(DriveFrameError::Count {
            expected: channels,
            found: tokens.len(),
        });
    }
    let values = tokens
        .iter()
        .enumerate()
        .map(|(index, t)| {
            t.parse::<f32>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DriveFrameError::Number {
                    index,
                    token: (*t).into(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let w = BlendWeights(values);
    if let Some((index, &value)) =
        w.0.iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(DriveFrameError::Range { index, value });
    }
    Ok(w)
}

#[derive(Clone, Debug)]
pub struct ServeConfig {
    /// Raw asset file bytes, served unchanged.
    pub asset: Bytes,
    /// Channel count `K` expected in drive frames.
    pub channels: usize,
    /// Static viewer bundle; `None` serves a small index page.
    pub viewer_dir: Option<PathBuf>,
}

struct AppState {
    asset: Bytes,
    channels: usize,
    relay: broadcast::Sender<String>,
    stop: watch::Receiver<bool>,
}

const INDEX: &str = "<!doctype html>
<meta charset=utf-8><title>smoj</title>
<h1>smoj live drive</h1>
<ul>
<li><a href=/asset.smoj>/asset.smoj</a>: avatar asset</li>
<li><code>ws /drive</code>: send <code>w1 ... wK</code> text frames</li>
<li><code>ws /viewers</code>: receive relayed frames</li>
</ul>
";

async fn asset(State(s): State<Arc<AppState>>) -> Response {
    (
        [(header::CONTENT_TYPE, "application/octet-stream")],
        s.asset.clone(),
    )
        .into_response()
}

async fn drive(ws: WebSocketUpgrade, State(s): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| drive_session(socket, s))
}

async fn drive_session(mut socket: WebSocket, s: Arc<AppState>) {
    let mut stop = s.stop.clone();
    loop {
        let msg = tokio::select! {
            m = socket.recv() => m,
            _ = stop.changed() => break,
        };
        let text = match msg {
            Some(Ok(Message::Text(t))) => t,
            Some(Ok(Message::Binary(_))) => {
                if socket
                    .send(Message::Text("error: expected a text frame".into()))
                    .await
                    .is_err()
                {
                    break;
                }
                continue;
            }
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
            Some(Ok(_)) => continue,
        };
        match parse_drive_frame(&text, s.channels) {
            Ok(_) => {
                // No viewers is fine.
                let _ = s.relay.send(text.as_str().to_owned());
            }
            Err(e) => {
                if socket
                    .send(Message::Text(format!("error: {e}").into()))
                    .await
                    .is_err()
                {
                    break;
                }
            }
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

async fn viewers(ws: WebSocketUpgrade, State(s): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| viewer_session(socket, s))
}

async fn viewer_session(mut socket: WebSocket, s: Arc<AppState>) {
    let mut rx = s.relay.subscribe();
    let mut stop = s.stop.clone();
    loop {
        tokio::select! {
            frame = rx.recv() => match frame {
                Ok(text) => {
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            _ = stop.changed() => break,
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

pub fn router(cfg: ServeConfig) -> (Router, watch::Sender<bool>) {
    let (stop_tx, stop) = watch::channel(false);
    let state = Arc::new(AppState {
        asset: cfg.asset,
        channels: cfg.channels,
        relay: broadcast::channel(RELAY_CAPACITY).0,
        stop,
    });
    let app = Router::new()
        .route("/asset.smoj", get(asset))
        .route("/drive", get(drive))
        .route("/viewers", get(viewers));
    let app = match cfg.viewer_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(INDEX) })),
    };
    (app.with_state(state), stop_tx)
}

#[derive(Debug)]
pub struct ServeHandle {
    pub addr: SocketAddr,
    stop: watch::Sender<bool>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ServeHandle {
    /// Closes open sockets, stops accepting and waits for the server task.
    pub async fn shutdown(self) -> std::io::Result<()> {
        let _ = self.stop.send(true);
        self.task.await.map_err(std::io::Error::other)?
    }

    /// Resolves when the server exits on its own.
    pub async fn join(self) -> std::io::Result<()> {
        self.task.await.map_err(std::io::Error::other)?
    }
}

/// Binds `addr` and serves until [`ServeHandle::shutdown`]. Fails if the
/// port is busy.
pub async fn run_server(addr: SocketAddr, cfg: ServeConfig) -> std::io::Result<ServeHandle> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (app, stop) = router(cfg);
    let mut stopped = stop.subscribe();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stopped.wait_for(|s| *s).await;
            })
            .await
    });
    Ok(ServeHandle { addr, stop, task })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drive_frames() {
        let w = parse_drive_frame(" 0 0.5\t1 ", 3).unwrap();
        assert_eq!(w.0, vec![0.0, 0.5, 1.0]);
        assert_eq!(
            parse_drive_frame("0 1", 3),
            Err(DriveFrameError::Count {
                expected: 3,
                found: 2
            })
        );
        assert!(matches!(
            parse_drive_frame("0 x 1", 3),
            Err(DriveFrameError::Number { index: 1, .. })
        ));
        assert!(matches!(
            parse_drive_frame("0 NaN 1", 3),
            Err(DriveFrameError::Number { index: 1, .. })
        ));
        assert!(matches!(
            parse_drive_frame("0 0 1.5", 3),
            Err(DriveFrameError::Range { index: 2, .. })
        ));
        assert!(parse_drive_frame("", 0).is_ok());
    }
}
