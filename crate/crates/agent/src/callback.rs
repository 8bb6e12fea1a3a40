//! Completion signal to the management layer. Signal only: the ML pulls the
//! rows with `fetchTaskData`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use sonoma_core::api::TaskRef;
use sonoma_core::model::TaskId;

#[derive(Debug, Default)]
pub struct CallbackStats {
    pub attempts: AtomicU64,
    pub delivered: AtomicU64,
    pub abandoned: AtomicU64,
}

#[derive(Clone)]
pub struct Notifier {
    client: reqwest::Client,
    url: Option<String>,
    backoff_ms: Arc<[u64]>,
    stats: Arc<CallbackStats>,
}

impl Notifier {
    pub fn new(base_url: Option<String>, backoff_ms: Vec<u64>) -> Self {
        Self {
            client: reqwest::Client::builder()
                .timeout(Duration::from_secs(10))
                .build()
                .expect("static client configuration"),
            url: base_url.map(|u| format!("{}/callback", u.trim_end_matches('/'))),
            backoff_ms: backoff_ms.into(),
            stats: Arc::default(),
        }
    }

    pub fn stats(&self) -> &CallbackStats {
        &self.stats
    }

    /// Fire-and-forget delivery: one attempt now, then one after each
    /// backoff delay until a response below 500 arrives.
    pub fn notify(&self, task_id: TaskId) {
        let Some(url) = self.url.clone() else { return };
        let this = self.clone();
        tokio::spawn(async move {
            let body = TaskRef { task_id };
            let delays = std::iter::once(0).chain(this.backoff_ms.iter().copied());
            for delay in delays {
                tokio::time::sleep(Duration::from_millis(delay)).await;
                this.stats.attempts.fetch_add(1, Ordering::Relaxed);
                match this.client.post(&url).json(&body).send().await {
                    Ok(resp) if resp.status().as_u16() < 500 => {
                        this.stats.delivered.fetch_add(1, Ordering::Relaxed);
                        return;
                    }
                    Ok(resp) => tracing::debug!(status = %resp.status(), "callback rejected"),
                    Err(e) => tracing::debug!("callback failed: {e}"),
                }
            }
            this.stats.abandoned.fetch_add(1, Ordering::Relaxed);
            tracing::warn!(task = %body.task_id.as_str(), "callback abandoned; the ML will poll");
        });
    }
}
