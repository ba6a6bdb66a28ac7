//! Label client for a remote text-completion service.
//!
//! The endpoint receives `{"prompt": ..., "documents": [...]}` as JSON and answers with either
//! plain text or a JSON object carrying a `label` or `text` string.

use std::sync::Arc;
use std::time::Duration;

use driftmap_core::labeling::LabelRequest;
use driftmap_core::{LabelBackend, LabelClient, LabelError, LabelSource, MockLabelClient, OfflineLabelClient, RunConfig};

pub const ENDPOINT_VAR: &str = "DRIFTMAP_LABEL_ENDPOINT";
pub const API_KEY_VAR: &str = "DRIFTMAP_LABEL_API_KEY";

pub struct HttpLabelClient {
    endpoint: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpLabelClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, LabelError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LabelError::ServiceUnavailable(e.to_string()))?;
        Ok(HttpLabelClient {
            endpoint: endpoint.into(),
            api_key,
            http,
        })
    }

    /// `None` when the endpoint variable is unset or empty.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR).ok().filter(|s| !s.trim().is_empty())?;
        let key = std::env::var(API_KEY_VAR).ok().filter(|s| !s.is_empty());
        Self::new(endpoint, key, Duration::from_secs(30)).ok()
    }
}

fn extract_label(body: &str) -> String {
    match serde_json::from_str::<serde_json::Value>(body) {
        Ok(serde_json::Value::Object(map)) => ["label", "text", "completion"]
            .iter()
            .find_map(|k| map.get(*k).and_then(|v| v.as_str()))
            .unwrap_or_default()
            .to_string(),
        Ok(serde_json::Value::String(s)) => s,
        _ => body.to_string(),
    }
}

impl LabelClient for HttpLabelClient {
    fn complete(&self, request: &LabelRequest) -> Result<String, LabelError> {
        let mut req = self.http.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LabelError::ServiceUnavailable(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| LabelError::BadResponse(e.to_string()))?;
        if !status.is_success() {
            return Err(LabelError::ServiceUnavailable(format!("status {status}")));
        }
        Ok(extract_label(&body))
    }
}

/// Picks the client a run should use. Remote labeling without a configured endpoint falls
/// back to the offline client, so clusters keep their TF-IDF labels only.
pub fn client_for(config: &RunConfig) -> Option<Arc<dyn LabelClient>> {
    match config.labels {
        LabelSource::TfIdf { .. } => None,
        LabelSource::ExternalModel { backend: LabelBackend::Mock, .. } => Some(Arc::new(MockLabelClient)),
        LabelSource::ExternalModel { backend: LabelBackend::Http, .. } => match HttpLabelClient::from_env() {
            Some(c) => Some(Arc::new(c)),
            None => {
                tracing::warn!("{ENDPOINT_VAR} is not set; external labels disabled");
                Some(Arc::new(OfflineLabelClient))
            }
        },
    }
}
