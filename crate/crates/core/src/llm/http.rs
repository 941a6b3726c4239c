use std::fs::OpenOptions;
use std::io::Write;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendConfig, BackendError, BackendKind, CompletionRequest};

/// Chat-completions endpoint: `POST {base_url}/chat/completions` with a
/// system and a user message, reading `choices[0].message.content`.
pub struct HttpBackend {
    endpoint: String,
    api_key: String,
    http: reqwest::blocking::Client,
    request_log: Option<Mutex<std::fs::File>>,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 2],
    temperature: f64,
    top_p: f64,
    n: u32,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Deserialize)]
struct WireReply {
    content: Option<String>,
}

impl HttpBackend {
    /// Reads the API key from the configured environment variable; fails
    /// with [`BackendError::AuthMissing`] before any network activity.
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| BackendError::AuthMissing {
                var: config.api_key_env.clone(),
            })?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let request_log = match &config.log_requests {
            Some(p) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| BackendError::Config(format!("{}: {e}", p.display())))?,
            )),
            None => None,
        };
        Ok(HttpBackend {
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
            http,
            request_log,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn body(request: &CompletionRequest) -> Vec<u8> {
        serde_json::to_vec(&WireRequest {
            model: &request.model_id,
            messages: [
                WireMessage {
                    role: "system",
                    content: &request.system_message,
                },
                WireMessage {
                    role: "user",
                    content: &request.user_message,
                },
            ],
            temperature: request.temperature,
            top_p: request.top_p,
            n: 1,
        })
        .expect("request serializes")
    }
}

fn is_transient_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

impl Backend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn send(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = Self::body(request);
        if let Some(log) = &self.request_log {
            let mut f = log.lock().expect("request log lock");
            let _ = f.write_all(&body).and_then(|_| f.write_all(b"\n"));
        }
        let response = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .send()
            .map_err(|e| BackendError::Transient {
                status: e.status().map(|s| s.as_u16()),
                message: e.to_string(),
            })?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| BackendError::Transient {
            status: Some(status),
            message: e.to_string(),
        })?;
        if !(200..300).contains(&status) {
            let message: String = text.chars().take(500).collect();
            return Err(if is_transient_status(status) {
                BackendError::Transient {
                    status: Some(status),
                    message,
                }
            } else {
                BackendError::Rejected { status, message }
            });
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::MalformedResponse("response has no message text".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_key_fails_before_network() {
        let config = BackendConfig {
            api_key_env: "PHRASEBREAK_TEST_KEY_THAT_IS_NOT_SET".into(),
            base_url: "http://192.0.2.1:9".into(),
            ..Default::default()
        };
        assert_eq!(
            HttpBackend::new(&config).err(),
            Some(BackendError::AuthMissing {
                var: "PHRASEBREAK_TEST_KEY_THAT_IS_NOT_SET".into()
            })
        );
    }

    #[test]
    fn wire_body_shape() {
        let r = CompletionRequest::new("sys", "usr", "gpt-4o-mini-2024-07-18", 0.0, 1.0);
        let v: serde_json::Value = serde_json::from_slice(&HttpBackend::body(&r)).unwrap();
        assert_eq!(v["model"], "gpt-4o-mini-2024-07-18");
        assert_eq!(v["messages"][0]["role"], "system");
        assert_eq!(v["messages"][1]["content"], "usr");
        assert_eq!(v["temperature"], 0.0);
        assert_eq!(v["top_p"], 1.0);
    }

    #[test]
    fn transient_statuses() {
        assert!(is_transient_status(429));
        assert!(is_transient_status(503));
        assert!(!is_transient_status(400));
        assert!(!is_transient_status(401));
    }
}
