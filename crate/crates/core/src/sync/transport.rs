use std::future::Future;
use std::time::Duration;

use reqwest::StatusCode;

use super::{SendError, SyncAck, SyncEnvelope};

/// Something that can deliver an envelope upstream.
pub trait CloudTransport: Send + Sync {
    fn send(&self, envelope: &SyncEnvelope) -> impl Future<Output = Result<SyncAck, SendError>> + Send;
}

/// JSON-over-HTTP POST to the configured cloud URL.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: reqwest::Client,
    url: String,
    bearer_token: Option<String>,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, bearer_token: Option<String>, timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("reqwest client with default TLS settings");
        Self {
            client,
            url: url.into(),
            bearer_token,
        }
    }

    /// Same client and connection pool, different endpoint.
    pub fn with_url(&self, url: impl Into<String>, bearer_token: Option<String>) -> Self {
        Self {
            client: self.client.clone(),
            url: url.into(),
            bearer_token,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn classify(status: StatusCode, body: &str) -> SendError {
    let msg = format!("{status}: {}", body.trim());
    if status.is_server_error()
        || status == StatusCode::REQUEST_TIMEOUT
        || status == StatusCode::TOO_MANY_REQUESTS
    {
        SendError::Transient(msg)
    } else {
        SendError::Permanent(msg)
    }
}

impl CloudTransport for HttpTransport {
    async fn send(&self, envelope: &SyncEnvelope) -> Result<SyncAck, SendError> {
        let mut req = self.client.post(&self.url).json(envelope);
        if let Some(token) = &self.bearer_token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| SendError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            resp.json::<SyncAck>()
                .await
                .map_err(|e| SendError::Transient(format!("unreadable ack: {e}")))
        } else {
            let body = resp.text().await.unwrap_or_default();
            Err(classify(status, &body))
        }
    }
}
