use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use sonoma_core::api::TaskRef;
use sonoma_core::error::ErrorBody;
use sonoma_core::model::AtomicTask;
use sonoma_core::{Error, Result};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;

use crate::backend::real::RealBackend;
use crate::backend::sim::SimBackend;
use crate::backend::Backend;
use crate::config::{AgentConfig, BackendKind};
use crate::state::Agent;

pub struct ApiError(pub Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(ErrorBody { error: self.0 })).into_response()
    }
}

type Reply<T> = std::result::Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(Error::param(format!("bad request body: {e}"))))
}

fn reply<T>(r: Result<T>) -> Reply<T> {
    r.map(Json).map_err(ApiError)
}

pub fn router(agent: Arc<Agent>) -> Router {
    Router::new()
        .route("/instructor/getCapabilities", post(capabilities))
        .route("/instructor/startTask", post(start_task))
        .route("/instructor/abortTask", post(abort_task))
        .route("/instructor/fetchTaskData", post(fetch_task_data))
        .route("/instructor/getExecutionLog", post(execution_log))
        .with_state(agent)
}

async fn capabilities(State(a): State<Arc<Agent>>) -> Json<sonoma_core::api::CapabilitiesResponse> {
    Json(a.capabilities())
}

async fn start_task(State(a): State<Arc<Agent>>, body: Bytes) -> Reply<sonoma_core::api::StartTaskResponse> {
    let task: AtomicTask = parse(&body)?;
    reply(a.start_task(task))
}

async fn abort_task(State(a): State<Arc<Agent>>, body: Bytes) -> Reply<sonoma_core::api::Ack> {
    let r: TaskRef = parse(&body)?;
    reply(a.abort_task(&r.task_id))
}

async fn fetch_task_data(State(a): State<Arc<Agent>>, body: Bytes) -> Reply<sonoma_core::api::TaskData> {
    let r: TaskRef = parse(&body)?;
    reply(a.fetch_task_data(&r.task_id))
}

async fn execution_log(State(a): State<Arc<Agent>>) -> Json<sonoma_core::api::ExecutionLog> {
    Json(a.execution_log())
}

pub async fn build_backend(config: &AgentConfig) -> Result<Backend> {
    match config.backend {
        BackendKind::Sim => {
            let path = config
                .topology_path
                .as_ref()
                .ok_or_else(|| Error::param("the SIM backend requires topologyPath"))?;
            let topo = sonoma_core::simnet::SimTopology::load(path)?;
            Ok(Backend::Sim(SimBackend::new(topo, &config.node_id)?))
        }
        BackendKind::Real => {
            let real = config
                .real
                .clone()
                .ok_or_else(|| Error::param("the REAL backend requires a `real` section"))?;
            Ok(Backend::Real(RealBackend::bind(real).await?))
        }
    }
}

/// A running agent daemon.
pub struct AgentServer {
    pub addr: SocketAddr,
    pub agent: Arc<Agent>,
    shutdown: CancellationToken,
    join: JoinHandle<()>,
}

impl AgentServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(self) {
        self.shutdown.cancel();
        let _ = self.join.await;
    }
}

/// Serves `agent` on `config.listenAddress` (port 0 picks a free port).
pub async fn serve(agent: Arc<Agent>) -> Result<AgentServer> {
    let listener = TcpListener::bind(agent.config().listen_address.as_str()).await?;
    let addr = listener.local_addr()?;
    let shutdown = CancellationToken::new();
    let stop = shutdown.clone();
    let app = router(agent.clone());
    let join = tokio::spawn(async move {
        let r = axum::serve(listener, app)
            .with_graceful_shutdown(async move { stop.cancelled().await })
            .await;
        if let Err(e) = r {
            tracing::error!("agent server stopped: {e}");
        }
    });
    Ok(AgentServer {
        addr,
        agent,
        shutdown,
        join,
    })
}

/// Builds the backend from `config` and serves it.
pub async fn start(config: AgentConfig) -> Result<AgentServer> {
    config.validate()?;
    let backend = build_backend(&config).await?;
    serve(Agent::new(config, backend)?).await
}
