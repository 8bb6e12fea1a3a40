//! Outbound calls to the agents' instructor interface.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sonoma_core::api::{Ack, CapabilitiesResponse, ExecutionLog, StartTaskResponse, TaskData, TaskRef};
use sonoma_core::error::ErrorBody;
use sonoma_core::model::{AtomicTask, TaskId};
use sonoma_core::{Error, ErrorCode, Result};

#[derive(Clone)]
pub struct AgentClient {
    http: reqwest::Client,
}

impl Default for AgentClient {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

impl AgentClient {
    pub fn new(timeout: Duration) -> Self {
        Self {
            http: reqwest::Client::builder()
                .timeout(timeout)
                .build()
                .expect("static client configuration"),
        }
    }

    async fn call<B: Serialize, R: DeserializeOwned>(&self, base: &str, op: &str, body: &B) -> Result<R> {
        let url = format!("{}/instructor/{op}", base.trim_end_matches('/'));
        let resp = self.http.post(&url).json(body).send().await.map_err(|e| {
            let code = if e.is_timeout() { ErrorCode::Timeout } else { ErrorCode::NodeUnavailable };
            Error::new(code, format!("{url}: {e}"))
        })?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| Error::new(ErrorCode::AgentError, format!("{url}: {e}")))?;
        if status.is_success() {
            serde_json::from_slice(&bytes).map_err(|e| Error::new(ErrorCode::AgentError, format!("{url}: bad reply: {e}")))
        } else {
            Err(serde_json::from_slice::<ErrorBody>(&bytes)
                .map(|b| b.error)
                .unwrap_or_else(|_| Error::new(ErrorCode::AgentError, format!("{url}: HTTP {status}"))))
        }
    }

    pub async fn capabilities(&self, base: &str) -> Result<CapabilitiesResponse> {
        self.call(base, "getCapabilities", &serde_json::json!({})).await
    }

    pub async fn start_task(&self, base: &str, task: &AtomicTask) -> Result<StartTaskResponse> {
        self.call(base, "startTask", task).await
    }

    pub async fn abort_task(&self, base: &str, id: &TaskId) -> Result<Ack> {
        self.call(base, "abortTask", &TaskRef { task_id: id.clone() }).await
    }

    pub async fn fetch_task_data(&self, base: &str, id: &TaskId) -> Result<TaskData> {
        self.call(base, "fetchTaskData", &TaskRef { task_id: id.clone() }).await
    }

    pub async fn execution_log(&self, base: &str) -> Result<ExecutionLog> {
        self.call(base, "getExecutionLog", &serde_json::json!({})).await
    }
}
