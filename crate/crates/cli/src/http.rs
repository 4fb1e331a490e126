//! Chat-completions transport over HTTP.

use std::time::Duration;

use promptpress::distill::{ChatResponse, CompressionRequest, Transport, TransportError};

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            agent: ureq::Agent::new_with_defaults(),
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
        }
    }
}

impl Transport for HttpTransport {
    fn complete(&self, request: &CompressionRequest, timeout: Duration) -> Result<String, TransportError> {
        let mut builder = self
            .agent
            .post(&self.endpoint)
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            builder = builder.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = builder
            .send_json(request.to_wire(&self.model))
            .map_err(|e| TransportError(format!("{}: {e}", self.endpoint)))?;
        let reply: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| TransportError(format!("unreadable response: {e}")))?;
        reply
            .into_text()
            .ok_or_else(|| TransportError("response has no choices".into()))
    }
}
