use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sonoma_core::api::*;
use sonoma_core::error::ErrorBody;
use sonoma_core::{Error, Result};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::catalog::catalog;
use crate::config::MlConfig;
use crate::service::Ml;

pub struct ApiError(pub Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(ErrorBody { error: self.0 })).into_response()
    }
}

type Reply<T> = std::result::Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> std::result::Result<T, ApiError> {
    let body: &[u8] = if body.is_empty() { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| ApiError(Error::param(format!("bad request body: {e}"))))
}

fn reply<T: Serialize>(r: Result<T>) -> Reply<T> {
    r.map(Json).map_err(ApiError)
}

type S = State<Arc<Ml>>;

macro_rules! op {
    ($name:ident, $req:ty, |$ml:ident, $r:ident| $body:expr) => {
        async fn $name(State($ml): S, body: Bytes) -> Response {
            let $r: $req = match parse(&body) {
                Ok(r) => r,
                Err(e) => return e.into_response(),
            };
            reply($body).into_response()
        }
    };
}

op!(request_session, RequestSession, |ml, r| ml.request_session(&r));
op!(close_session, SessionOnly, |ml, r| ml.close_session(&r.session_id).await);
op!(get_node_list, GetNodeList, |ml, r| ml.get_node_list(&r));
op!(short_ping, PingRequest, |ml, r| ml.short_ping(&r).await);
op!(long_ping, PingRequest, |ml, r| ml.long_ping(&r).await);
op!(parallel_ping, ParallelPingRequest, |ml, r| ml.parallel_ping(&r).await);
op!(ensemble_ping, EnsemblePingRequest, |ml, r| ml.ensemble_ping(&r).await);
op!(short_traceroute, TracerouteRequest, |ml, r| ml.short_traceroute(&r).await);
op!(long_traceroute, TracerouteRequest, |ml, r| ml.long_traceroute(&r).await);
op!(parallel_traceroute, ParallelTracerouteRequest, |ml, r| ml.parallel_traceroute(&r).await);
op!(ensemble_traceroute, EnsembleTracerouteRequest, |ml, r| ml.ensemble_traceroute(&r).await);
op!(topology, TopologyRequest, |ml, r| ml.topology(&r).await);
op!(short_chirp, ChirpRequest, |ml, r| ml.short_chirp(&r).await);
op!(long_chirp, ChirpRequest, |ml, r| ml.long_chirp(&r).await);
op!(short_train, TrainRequest, |ml, r| ml.short_train(&r).await);
op!(long_train, TrainRequest, |ml, r| ml.long_train(&r).await);
op!(available_bandwidth, BandwidthRequest, |ml, r| ml.available_bandwidth(&r).await);
op!(process_info, ProcessRequest, |ml, r| ml.process_info(&r));
op!(kill_process, ProcessRequest, |ml, r| ml.kill_process(&r).await);
op!(get_results, GetResultsRequest, |ml, r| ml.get_results(&r));
op!(register_agent, AgentRegistration, |ml, r| ml.register_agent(r).await);
op!(vo_retrieve, VoRetrieveRequest, |ml, r| Ok::<_, Error>(ml.vo_retrieve(&r)));
op!(vo_export, VoExportRequest, |ml, r| ml.vo_export(&r));

async fn callback(State(ml): S, body: Bytes) -> Response {
    let r: TaskRef = match parse(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    // the agent only needs to know the signal arrived
    match ml.task_known(&r.task_id) {
        Err(e) => ApiError(e).into_response(),
        Ok(()) => {
            tokio::spawn(async move {
                if let Err(e) = ml.complete_task(&r.task_id).await {
                    tracing::warn!(task = r.task_id.as_str(), "completion failed: {e}");
                }
            });
            Json(Ack::YES).into_response()
        }
    }
}

async fn get_version(State(ml): S) -> Json<VersionResponse> {
    Json(ml.version())
}

async fn describe(State(ml): S) -> Json<Catalog> {
    Json(catalog(&ml.config().version))
}

async fn accounting(State(ml): S) -> Json<Accounting> {
    Json(ml.accounting())
}

pub fn router(ml: Arc<Ml>) -> Router {
    Router::new()
        .route("/api/requestSession", post(request_session))
        .route("/api/closeSession", post(close_session))
        .route("/api/getVersion", get(get_version).post(get_version))
        .route("/api/describe", get(describe).post(describe))
        .route("/api/getNodeList", post(get_node_list))
        .route("/api/shortPing", post(short_ping))
        .route("/api/longPing", post(long_ping))
        .route("/api/parallelPing", post(parallel_ping))
        .route("/api/ensemblePing", post(ensemble_ping))
        .route("/api/shortTraceroute", post(short_traceroute))
        .route("/api/longTraceroute", post(long_traceroute))
        .route("/api/parallelTraceroute", post(parallel_traceroute))
        .route("/api/ensembleTraceroute", post(ensemble_traceroute))
        .route("/api/topology", post(topology))
        .route("/api/shortChirp", post(short_chirp))
        .route("/api/longChirp", post(long_chirp))
        .route("/api/shortTrain", post(short_train))
        .route("/api/longTrain", post(long_train))
        .route("/api/getAvailableBandwidth", post(available_bandwidth))
        .route("/api/getProcessInfo", post(process_info))
        .route("/api/killProcess", post(kill_process))
        .route("/api/getResults", post(get_results))
        .route("/api/getData", post(get_results))
        .route("/callback", post(callback))
        .route("/admin/accounting", get(accounting))
        .route("/admin/agents", post(register_agent))
        .route("/admin/vo/retrieve", post(vo_retrieve))
        .route("/admin/vo/export", post(vo_export))
        .with_state(ml)
}

/// A running management daemon.
pub struct MlServer {
    pub addr: SocketAddr,
    pub ml: Arc<Ml>,
    stop: oneshot::Sender<()>,
    join: JoinHandle<()>,
}

impl MlServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(());
        let _ = self.join.await;
    }
}

/// Serves the management layer and starts health probing.
pub async fn start(config: MlConfig) -> Result<MlServer> {
    let listener = TcpListener::bind(config.listen_address.as_str()).await?;
    let addr = listener.local_addr()?;
    let ml = Ml::new(config)?;
    ml.spawn_health_loop();
    let (stop, stopped) = oneshot::channel();
    let app = router(ml.clone());
    let join = tokio::spawn(async move {
        let r = axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stopped.await;
            })
            .await;
        if let Err(e) = r {
            tracing::error!("management server stopped: {e}");
        }
    });
    Ok(MlServer { addr, ml, stop, join })
}
