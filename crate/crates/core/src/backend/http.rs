//! HTTP client for the logprob wire protocol.
//!
//! POST {endpoint}/v1/logprob with
//!   {"model": .., "prefix": .., "continuation": .., "chat_wrap": ..}
//! expecting 200 {"logprob": .., "scored_variant": .., "token_count": ..}
//! or an error body {"error": {"code": .., "message": ..}}.
//! Timeouts, connection failures, 429 and 5xx responses are retried with
//! exponential backoff; other 4xx responses are not.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, ScoreBackend, ScoreRequest, ScoreResponse};

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prefix: &'a str,
    continuation: &'a str,
    chat_wrap: bool,
}

#[derive(Deserialize)]
struct WireResponse {
    logprob: f64,
    scored_variant: String,
    token_count: u32,
}

#[derive(Deserialize)]
struct WireErrorBody {
    code: String,
    message: String,
}

#[derive(Deserialize)]
struct WireError {
    error: WireErrorBody,
}

pub struct HttpBackend {
    endpoint: String,
    client: reqwest::blocking::Client,
    max_attempts: u32,
    backoff: Duration,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>) -> Result<Self, BackendError> {
        let endpoint = endpoint.into().trim_end_matches('/').to_string();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| BackendError::Network {
                endpoint: endpoint.clone(),
                message: e.to_string(),
            })?;
        Ok(HttpBackend {
            endpoint,
            client,
            max_attempts: 3,
            backoff: Duration::from_millis(50),
        })
    }

    pub fn with_max_attempts(mut self, attempts: u32) -> Self {
        self.max_attempts = attempts.max(1);
        self
    }

    fn network_error(&self, message: impl ToString) -> BackendError {
        BackendError::Network {
            endpoint: self.endpoint.clone(),
            message: message.to_string(),
        }
    }

    fn attempt(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        let url = format!("{}/v1/logprob", self.endpoint);
        let body = WireRequest {
            model: &req.model_id,
            prefix: &req.prefix,
            continuation: &req.continuation,
            chat_wrap: req.chat_wrap,
        };
        let response = self
            .client
            .post(&url)
            .json(&body)
            .send()
            .map_err(|e| self.network_error(e))?;

        let status = response.status();
        let text = response.text().map_err(|e| self.network_error(e))?;
        if status.is_success() {
            let wire: WireResponse = serde_json::from_str(&text)
                .map_err(|e| BackendError::Protocol(format!("bad success body: {e}")))?;
            if wire.token_count < 1 {
                return Err(BackendError::Protocol(
                    "server reported token_count < 1".into(),
                ));
            }
            return Ok(ScoreResponse {
                logprob: wire.logprob,
                scored_variant: wire.scored_variant,
                token_count: wire.token_count,
            });
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(self.network_error(format!("status {status}: {text}")));
        }
        match serde_json::from_str::<WireError>(&text) {
            Ok(err) => Err(BackendError::Remote {
                code: err.error.code,
                message: err.error.message,
            }),
            Err(_) => Err(BackendError::Remote {
                code: status.as_u16().to_string(),
                message: text,
            }),
        }
    }
}

impl ScoreBackend for HttpBackend {
    fn conditional_logprob(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        let mut last = None;
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.attempt(req) {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_retryable() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}
