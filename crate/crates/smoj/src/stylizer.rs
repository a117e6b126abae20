//! Client for an external dual-stylization service and a deterministic mock
//! of that service.
//!
//! Wire contract: `POST /v1/stylize` with a multipart body holding a PNG
//! part `image` and a text part `params`. `params` is TOML with every value
//! a string; the numbers are decimals in `[0, 1]`:
//!
//! ```toml
//! prompt = "watercolor"
//! strength = "0.5"
//! edge = "0.8"
//! identity = "0.9"
//! ```
//!
//! A success is `200` with a PNG body of the same size plus the headers
//! `X-Latency-Seconds` and `X-Service-Mode`; failures are 4xx/5xx with a
//! text body.

use std::collections::BTreeMap;
use std::fmt;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::image::Image8;

pub const STYLIZE_PATH: &str = "/v1/stylize";
pub const LATENCY_HEADER: &str = "x-latency-seconds";
pub const MODE_HEADER: &str = "x-service-mode";
/// Per-channel RGB shift applied by the mock's `tint` mode at strength 1.
pub const TINT: [i32; 3] = [48, -32, 16];
const BODY_LIMIT: usize = 64 << 20;

#[derive(Debug, thiserror::Error)]
pub enum StylizeError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("cannot reach service: {0}")]
    Connect(String),
    #[error("service returned {status}: {body}")]
    Service { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("response image is {found:?}, request was {expected:?}")]
    Dimension {
        expected: (u32, u32),
        found: (u32, u32),
    },
}

/// The three user-facing stylization knobs plus the text prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct StylizeParams {
    pub prompt: String,
    /// Style transition strength.
    pub strength: f64,
    /// Edge preservation level.
    pub edge: f64,
    /// Identity consistency factor.
    pub identity: f64,
}

impl StylizeParams {
    pub fn validate(&self) -> Result<(), StylizeError> {
        if self.prompt.trim().is_empty() {
            return Err(StylizeError::InvalidRequest("prompt is empty".into()));
        }
        for (name, v) in [
            ("strength", self.strength),
            ("edge", self.edge),
            ("identity", self.identity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(StylizeError::InvalidRequest(format!(
                    "{name} {v} is outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> String {
        let fields = BTreeMap::from([
            ("prompt", self.prompt.clone()),
            ("strength", self.strength.to_string()),
            ("edge", self.edge.to_string()),
            ("identity", self.identity.to_string()),
        ]);
        toml::to_string(&fields).expect("string map serializes")
    }

    pub fn decode(text: &str) -> Result<Self, StylizeError> {
        let bad = |m: String| StylizeError::InvalidRequest(m);
        let mut fields: BTreeMap<String, String> =
            toml::from_str(text).map_err(|e| bad(format!("params: {e}")))?;
        let mut take = |k: &str| {
            fields
                .remove(k)
                .ok_or_else(|| bad(format!("params: missing {k}")))
        };
        let number = |k: &str, v: String| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("params: {k} = {v:?}")))
        };
        let prompt = take("prompt")?;
        let strength = number("strength", take("strength")?)?;
        let edge = number("edge", take("edge")?)?;
        let identity = number("identity", take("identity")?)?;
        if let Some(k) = fields.keys().next() {
            return Err(bad(format!("params: unknown field {k}")));
        }
        let params = Self {
            prompt,
            strength,
            edge,
            identity,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StylizeRequest {
    /// PNG-encoded frontal render.
    pub image: Vec<u8>,
    pub params: StylizeParams,
    pub timeout: Duration,
}

impl StylizeRequest {
    /// Checks the parameters and timeout and returns the image size.
    pub fn validate(&self) -> Result<(u32, u32), StylizeError> {
        self.params.validate()?;
        if self.timeout.is_zero() {
            return Err(StylizeError::InvalidRequest(
                "timeout must be positive".into(),
            ));
        }
        let img = Image8::decode_png(&self.image)
            .map_err(|e| StylizeError::InvalidRequest(format!("image: {e}")))?;
        Ok((img.width, img.height))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StylizeResponse {
    /// PNG bytes as returned by the service.
    pub image: Vec<u8>,
    pub width: u32,
    pub height: u32,
    /// Client-side round trip.
    pub latency: Duration,
    /// Service-reported processing time, if present.
    pub service_latency: Option<f64>,
    pub mode: Option<String>,
}

/// Reusable client; requests may run concurrently.
#[derive(Clone, Debug)]
pub struct StylizerClient {
    http: reqwest::Client,
    url: String,
}

impl StylizerClient {
    /// `endpoint` is the service base URL, e.g. `http://127.0.0.1:8188`.
    pub fn new(endpoint: &str) -> Self {
        Self {
            http: reqwest::Client::new(),
            url: format!("{}{STYLIZE_PATH}", endpoint.trim_end_matches('/')),
        }
    }

    pub async fn stylize(&self, req: &StylizeRequest) -> Result<StylizeResponse, StylizeError> {
        let expected = req.validate()?;
        let start = Instant::now();
        let exchange = async {
            let part = reqwest::multipart::Part::bytes(req.image.clone())
                .file_name("image.png")
                .mime_str("image/png")
                .map_err(|e| StylizeError::InvalidRequest(e.to_string()))?;
            let form = reqwest::multipart::Form::new()
                .part("image", part)
                .text("params", req.params.encode());
            let resp = self
                .http
                .post(&self.url)
                .multipart(form)
                .send()
                .await
                .map_err(|e| StylizeError::Connect(e.to_string()))?;
            let status = resp.status();
            let headers = resp.headers().clone();
            let body = resp
                .bytes()
                .await
                .map_err(|e| StylizeError::Malformed(format!("body: {e}")))?;
            Ok::<_, StylizeError>((status, headers, body))
        };
        let (status, headers, body) = tokio::time::timeout(req.timeout, exchange)
            .await
            .map_err(|_| StylizeError::Timeout(req.timeout))??;
        let latency = start.elapsed();
        if !status.is_success() {
            return Err(StylizeError::Service {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&body).into_owned(),
            });
        }
        let img = Image8::decode_png(&body)
            .map_err(|e| StylizeError::Malformed(format!("image: {e}")))?;
        let found = (img.width, img.height);
        if found != expected {
            return Err(StylizeError::Dimension { expected, found });
        }
        let header = |name: &str| {
            headers
                .get(name)
                .and_then(|v| v.to_str().ok())
                .map(str::to_owned)
        };
        Ok(StylizeResponse {
            image: body.to_vec(),
            width: img.width,
            height: img.height,
            latency,
            service_latency: header(LATENCY_HEADER).and_then(|v| v.parse().ok()),
            mode: header(MODE_HEADER),
        })
    }
}

/// One-shot convenience wrapper around [`StylizerClient`].
pub async fn stylize(
    req: &StylizeRequest,
    endpoint: &str,
) -> Result<StylizeResponse, StylizeError> {
    StylizerClient::new(endpoint).stylize(req).await
}

/// Applies the mock's tint: `c' = clamp(c + round(strength · TINT[c]))` on
/// RGB, alpha untouched.
pub fn tint(img: &Image8, strength: f64) -> Image8 {
    let mut out = img.clone();
    for px in out.data.chunks_exact_mut(img.channels) {
        for (c, shift) in px.iter_mut().zip(TINT) {
            let delta = (strength * f64::from(shift)).round() as i32;
            *c = (i32::from(*c) + delta).clamp(0, 255) as u8;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MockMode {
    /// Returns the request image bytes unchanged.
    Echo,
    /// Shifts RGB by [`TINT`] scaled by the request strength.
    Tint,
    /// Always answers 500.
    Fail,
    /// Waits, then echoes.
    Slow,
}

impl fmt::Display for MockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MockMode::Echo => "echo",
            MockMode::Tint => "tint",
            MockMode::Fail => "fail",
            MockMode::Slow => "slow",
        })
    }
}

impl std::str::FromStr for MockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "echo" => Ok(MockMode::Echo),
            "tint" => Ok(MockMode::Tint),
            "fail" => Ok(MockMode::Fail),
            "slow" => Ok(MockMode::Slow),
            other => Err(format!(
                "unknown mock mode {other:?} (echo, tint, fail, slow)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MockConfig {
    pub mode: MockMode,
    /// Delay before answering in `slow` mode.
    pub delay: Duration,
}

impl MockConfig {
    pub fn new(mode: MockMode) -> Self {
        Self {
            mode,
            delay: Duration::from_secs(5),
        }
    }
}

/// A running mock; dropping it without [`MockHandle::shutdown`] leaves the
/// server running until the runtime stops.
#[derive(Debug)]
pub struct MockHandle {
    pub addr: SocketAddr,
    stop: oneshot::Sender<()>,
    task: JoinHandle<std::io::Result<()>>,
}

impl MockHandle {
    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections and waits for in-flight requests.
    pub async fn shutdown(self) -> std::io::Result<()> {
        let _ = self.stop.send(());
        self.task.await.map_err(std::io::Error::other)?
    }
}

fn text_error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, msg.into()).into_response()
}

async fn handle_stylize(State(cfg): State<Arc<MockConfig>>, mut form: Multipart) -> Response {
    let start = Instant::now();
    let (mut image, mut params) = (None, None);
    loop {
        match form.next_field().await {
            Ok(Some(field)) => {
                let name = field.name().map(str::to_owned);
                let Ok(bytes) = field.bytes().await else {
                    return text_error(StatusCode::BAD_REQUEST, "unreadable multipart field");
                };
                match name.as_deref() {
                    Some("image") => image = Some(bytes),
                    Some("params") => params = Some(bytes),
                    _ => {}
                }
            }
            Ok(None) => break,
            Err(e) => return text_error(StatusCode::BAD_REQUEST, format!("multipart: {e}")),
        }
    }
    let (Some(image), Some(params)) = (image, params) else {
        return text_error(
            StatusCode::BAD_REQUEST,
            "expected parts \"image\" and \"params\"",
        );
    };
    let params = match std::str::from_utf8(&params)
        .map_err(|_| StylizeError::InvalidRequest("params are not UTF-8".into()))
        .and_then(StylizeParams::decode)
    {
        Ok(p) => p,
        Err(e) => return text_error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let decoded = match Image8::decode_png(&image) {
        Ok(img) => img,
        Err(e) => return text_error(StatusCode::BAD_REQUEST, format!("image: {e}")),
    };
    let body = match cfg.mode {
        MockMode::Fail => {
            return text_error(
                StatusCode::INTERNAL_SERVER_ERROR,
                "mock stylizer failure (mode fail)",
            )
        }
        MockMode::Echo => image.to_vec(),
        MockMode::Slow => {
            tokio::time::sleep(cfg.delay).await;
            image.to_vec()
        }
        MockMode::Tint => match tint(&decoded, params.strength).encode_png() {
            Ok(png) => png,
            Err(e) => return text_error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        },
    };
    let mut headers = HeaderMap::new();
    headers.insert("content-type", HeaderValue::from_static("image/png"));
    let latency = start.elapsed().as_secs_f64().to_string();
    headers.insert(
        LATENCY_HEADER,
        HeaderValue::from_str(&latency).expect("decimal header"),
    );
    headers.insert(
        MODE_HEADER,
        HeaderValue::from_str(&cfg.mode.to_string()).expect("ascii mode"),
    );
    (StatusCode::OK, headers, body).into_response()
}

pub fn mock_router(cfg: MockConfig) -> Router {
    Router::new()
        .route(STYLIZE_PATH, post(handle_stylize))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(Arc::new(cfg))
}

/// Binds `addr` (port 0 picks a free port) and serves the mock until
/// shut down. Fails if the port is busy.
pub async fn run_mock_server(addr: SocketAddr, cfg: MockConfig) -> std::io::Result<MockHandle> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, mock_router(cfg))
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    Ok(MockHandle { addr, stop, task })
}
