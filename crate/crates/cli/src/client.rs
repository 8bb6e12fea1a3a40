//! Blocking JSON client for the management layer's `/api` interface.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sonoma_core::api::{RequestSession, SessionResponse};
use sonoma_core::error::ErrorBody;
use sonoma_core::model::SessionId;
use sonoma_core::{Error, ErrorCode, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientConfig {
    pub ml_url: String,
    pub user: String,
    pub credential: String,
    pub format: String,
    pub zip: bool,
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = reqwest::Url::parse(&self.ml_url)
            .map(|u| matches!(u.scheme(), "http" | "https") && u.host().is_some())
            .unwrap_or(false);
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("bad ML URL {:?}", self.ml_url)))
        }
    }
}

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(ml_url: &str) -> Self {
        Self {
            base: ml_url.trim_end_matches('/').to_owned(),
            http: reqwest::blocking::Client::builder()
                // synchronous measurements block the request
                .timeout(Duration::from_secs(600))
                .build()
                .expect("static client configuration"),
        }
    }

    /// POSTs `body` to `/api/<op>` and returns the raw JSON reply.
    pub fn call_value(&self, op: &str, body: &Value) -> Result<Value> {
        let url = format!("{}/api/{op}", self.base);
        let resp = self
            .http
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| Error::new(ErrorCode::NodeUnavailable, format!("{url}: {e}")))?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .map_err(|e| Error::new(ErrorCode::NodeUnavailable, format!("{url}: {e}")))?;
        if status.is_success() {
            serde_json::from_slice(&bytes).map_err(|e| Error::new(ErrorCode::Internal, format!("{url}: bad reply: {e}")))
        } else {
            Err(serde_json::from_slice::<ErrorBody>(&bytes)
                .map(|b| b.error)
                .unwrap_or_else(|_| Error::new(ErrorCode::Internal, format!("{url}: HTTP {status}"))))
        }
    }

    pub fn call<B: Serialize, R: DeserializeOwned>(&self, op: &str, body: &B) -> Result<R> {
        let body = serde_json::to_value(body).map_err(|e| Error::param(e.to_string()))?;
        let v = self.call_value(op, &body)?;
        serde_json::from_value(v).map_err(|e| Error::new(ErrorCode::Internal, format!("{op}: bad reply: {e}")))
    }

    pub fn open_session(&self, cfg: &ClientConfig) -> Result<SessionId> {
        let r: SessionResponse = self.call(
            "requestSession",
            &RequestSession {
                user: cfg.user.clone(),
                credential: cfg.credential.clone(),
                zip_results: cfg.zip,
                format_results: cfg.format.clone(),
            },
        )?;
        Ok(r.session_id)
    }

    pub fn close_session(&self, id: &SessionId) -> Result<()> {
        self.call_value("closeSession", &serde_json::json!({ "sessionId": id }))
            .map(drop)
    }
}
