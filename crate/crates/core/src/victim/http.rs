//! HTTP face of the victim: a small prediction service and the matching
//! blocking client.
//!
//! The wire format is JSON. `serde_json` prints `f64` values with enough
//! digits to round-trip exactly, so remote answers are bit-identical to
//! in-process ones.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSpec, FeatureValue};
use crate::error::{Error, Result};
use crate::querygen::{Provenance, QueryBatch};
use crate::victim::VictimDeployment;

#[derive(Debug, Serialize, Deserialize)]
struct PredictRequest {
    rows: Vec<Vec<FeatureValue>>,
    #[serde(default)]
    pre_normalized: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictResponse {
    probabilities: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaResponse {
    features: Vec<FeatureSpec>,
    class_names: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsResponse {
    queries_served: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ErrorBody {
    error: String,
}

struct ServiceState {
    deployment: VictimDeployment,
    served: AtomicU64,
}

async fn predict_handler(
    State(state): State<Arc<ServiceState>>,
    Json(req): Json<PredictRequest>,
) -> Response {
    let n = req.rows.len();
    let batch = QueryBatch {
        rows: req.rows,
        provenance: vec![Provenance::Generated; n],
        pre_normalized: req.pre_normalized,
    };
    match state.deployment.predict(&batch) {
        Ok(probabilities) => {
            state.served.fetch_add(n as u64, Ordering::SeqCst);
            Json(PredictResponse { probabilities }).into_response()
        }
        Err(e @ Error::RejectedQuery(_)) => (
            StatusCode::BAD_REQUEST,
            Json(ErrorBody {
                error: e.to_string(),
            }),
        )
            .into_response(),
        Err(e) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(ErrorBody {
                error: e.to_string(),
            }),
        )
            .into_response(),
    }
}

/// The schema endpoint documents the input format the way a real prediction
/// API would. It never includes normalization parameters.
async fn schema_handler(State(state): State<Arc<ServiceState>>) -> Json<SchemaResponse> {
    Json(SchemaResponse {
        features: state.deployment.schema().to_vec(),
        class_names: state.deployment.class_names().to_vec(),
    })
}

async fn health_handler() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn metrics_handler(State(state): State<Arc<ServiceState>>) -> Json<MetricsResponse> {
    Json(MetricsResponse {
        queries_served: state.served.load(Ordering::SeqCst),
    })
}

/// Builds the service router; exposed so tests can wrap it in recording
/// layers.
pub fn router(deployment: VictimDeployment) -> Router {
    let state = Arc::new(ServiceState {
        deployment,
        served: AtomicU64::new(0),
    });
    Router::new()
        .route("/predict", post(predict_handler))
        .route("/schema", get(schema_handler))
        .route("/health", get(health_handler))
        .route("/metrics", get(metrics_handler))
        .with_state(state)
}

/// A running prediction service on its own runtime thread.
#[derive(Debug)]
pub struct RunningService {
    local_addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RunningService {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.local_addr)
    }

    /// Signals shutdown and joins the server thread.
    pub fn shutdown(mut self) {
        self.shutdown_inner();
    }

    /// Blocks until the service stops (for the CLI foreground mode).
    pub fn wait(mut self) {
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }

    fn shutdown_inner(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        self.shutdown_inner();
    }
}

/// Binds `addr` and serves the deployment until shutdown. Use port 0 for an
/// ephemeral port; the bound address is available on the returned handle.
pub fn serve(deployment: VictimDeployment, addr: &str) -> Result<RunningService> {
    serve_router(router(deployment), addr)
}

/// Serves an arbitrary router (the plain deployment router, or one wrapped in
/// test middleware).
pub fn serve_router(app: Router, addr: &str) -> Result<RunningService> {
    let addr: SocketAddr = addr
        .parse()
        .map_err(|e| Error::Startup(format!("bad address {addr:?}: {e}")))?;
    let listener = std::net::TcpListener::bind(addr)
        .map_err(|e| Error::Startup(format!("cannot bind {addr}: {e}")))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| Error::Startup(e.to_string()))?;
    let local_addr = listener
        .local_addr()
        .map_err(|e| Error::Startup(e.to_string()))?;

    let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("tokio runtime");
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("tokio listener");
            let server = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = shutdown_rx.await;
            });
            if let Err(e) = server.await {
                eprintln!("victim service stopped with error: {e}");
            }
        });
    });

    Ok(RunningService {
        local_addr,
        shutdown: Some(shutdown_tx),
        thread: Some(thread),
    })
}

const DEFAULT_RETRIES: u32 = 3;
const RETRY_BACKOFF: Duration = Duration::from_millis(100);

/// Blocking client for a remote victim service. `/predict` is idempotent, so
/// transport failures are retried with linear backoff.
#[derive(Debug)]
pub struct RemoteVictim {
    base_url: String,
    client: reqwest::blocking::Client,
    schema: Vec<FeatureSpec>,
    class_names: Vec<String>,
    retries: u32,
}

impl RemoteVictim {
    /// Connects and fetches `/schema` so the adversary knows the input
    /// format.
    pub fn connect(base_url: &str) -> Result<RemoteVictim> {
        let base_url = base_url.trim_end_matches('/').to_string();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let schema: SchemaResponse = get_json(&client, &format!("{base_url}/schema"))?;
        Ok(RemoteVictim {
            base_url,
            client,
            schema: schema.features,
            class_names: schema.class_names,
            retries: DEFAULT_RETRIES,
        })
    }

    pub fn with_retries(mut self, retries: u32) -> RemoteVictim {
        self.retries = retries;
        self
    }

    pub fn schema(&self) -> &[FeatureSpec] {
        &self.schema
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn predict(&self, batch: &QueryBatch) -> Result<Vec<Vec<f64>>> {
        let request = PredictRequest {
            rows: batch.rows.clone(),
            pre_normalized: batch.pre_normalized,
        };
        let url = format!("{}/predict", self.base_url);
        let mut last_err = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(RETRY_BACKOFF * attempt);
            }
            let sent = self.client.post(&url).json(&request).send();
            match sent {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        let body: PredictResponse = response
                            .json()
                            .map_err(|e| Error::Transport(format!("bad response body: {e}")))?;
                        return Ok(body.probabilities);
                    }
                    let text = response.text().unwrap_or_default();
                    if status.is_client_error() {
                        // The service rejected the query; retrying cannot help.
                        let message = serde_json::from_str::<ErrorBody>(&text)
                            .map(|b| b.error)
                            .unwrap_or(text);
                        return Err(Error::RejectedQuery(message));
                    }
                    last_err = format!("status {status}: {text}");
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::Transport(format!(
            "predict failed after {} attempts: {last_err}",
            self.retries + 1
        )))
    }

    /// Queries served according to the service's own counter.
    pub fn remote_query_count(&self) -> Result<u64> {
        let metrics: MetricsResponse =
            get_json(&self.client, &format!("{}/metrics", self.base_url))?;
        Ok(metrics.queries_served)
    }
}

fn get_json<T: serde::de::DeserializeOwned>(
    client: &reqwest::blocking::Client,
    url: &str,
) -> Result<T> {
    let response = client
        .get(url)
        .send()
        .map_err(|e| Error::Transport(e.to_string()))?;
    if !response.status().is_success() {
        return Err(Error::Transport(format!(
            "GET {url} returned {}",
            response.status()
        )));
    }
    response
        .json()
        .map_err(|e| Error::Transport(format!("bad response body: {e}")))
}
