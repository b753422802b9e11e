//! Chat-completions client that reads the answer posterior from the
//! log-probabilities of the first generated token.

use std::io::Cursor;
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::imaging::{compose_tiles, render_frame};
use super::letter::letter_posterior_from_logprobs;
use super::{BackendResponse, InputMode, PosteriorBackend, ProbeRequest};
use crate::error::BackendError;

/// Environment variable holding the bearer token, when one is needed.
pub const API_KEY_ENV: &str = "GRIDPROBE_API_KEY";

const DEFAULT_PATH: &str = "/v1/chat/completions";
const EXCERPT_LEN: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerEndpoint {
    pub base_url: String,
    pub path: String,
    pub model: String,
    /// Name of the environment variable with the API key; unset means no auth.
    pub api_key_env: Option<String>,
    #[serde(with = "millis")]
    pub timeout: Duration,
    /// Alternatives requested per position; raised to |Y| when smaller.
    pub top_logprobs: usize,
    pub max_in_flight: Option<usize>,
}

impl Default for ServerEndpoint {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            path: DEFAULT_PATH.into(),
            model: "default".into(),
            api_key_env: Some(API_KEY_ENV.into()),
            timeout: Duration::from_secs(60),
            top_logprobs: 20,
            max_in_flight: None,
        }
    }
}

impl ServerEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            ..Self::default()
        }
    }

    pub fn url(&self) -> String {
        format!(
            "{}/{}",
            self.base_url.trim_end_matches('/'),
            self.path.trim_start_matches('/')
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
    #[serde(with = "millis")]
    pub max_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(250),
            max_backoff: Duration::from_secs(8),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            ..Self::default()
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = self
            .multiplier
            .max(1.0)
            .powi(retry.saturating_sub(1) as i32);
        self.initial_backoff.mul_f64(factor).min(self.max_backoff)
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

pub struct RemoteBackend {
    endpoint: ServerEndpoint,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

enum Attempt {
    Retryable(BackendError),
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(endpoint: ServerEndpoint, retry: RetryPolicy) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(endpoint.timeout)
            .build()
            .map_err(|e| BackendError::Config(format!("http client: {e}")))?;
        let api_key = endpoint
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        Ok(Self {
            endpoint,
            retry,
            client,
            api_key,
        })
    }

    pub fn endpoint(&self) -> &ServerEndpoint {
        &self.endpoint
    }

    /// The JSON body sent for `request`.
    pub fn request_body(&self, request: &ProbeRequest) -> Result<Value, BackendError> {
        let mut content: Vec<Value> = encode_images(request)?
            .into_iter()
            .map(|url| json!({"type": "image_url", "image_url": {"url": url}}))
            .collect();
        content.push(json!({"type": "text", "text": prompt_text(request)}));
        let alternatives = self.endpoint.top_logprobs.max(request.answer_space.len());
        Ok(json!({
            "model": self.endpoint.model,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": 1,
            "temperature": 0.0,
            "logprobs": true,
            "top_logprobs": alternatives,
        }))
    }

    fn attempt(&self, body: &Value, request: &ProbeRequest) -> Result<BackendResponse, Attempt> {
        let mut builder = self.client.post(self.endpoint.url()).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                Attempt::Retryable(BackendError::Timeout(self.endpoint.timeout))
            } else {
                Attempt::Retryable(BackendError::Transport {
                    attempts: 1,
                    message: e.to_string(),
                })
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            Attempt::Retryable(BackendError::Transport {
                attempts: 1,
                message: format!("reading body: {e}"),
            })
        })?;
        if !status.is_success() {
            let err = BackendError::Status {
                status: status.as_u16(),
                excerpt: text.chars().take(EXCERPT_LEN).collect(),
            };
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retryable(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(BackendError::Protocol(format!("invalid json: {e}"))))?;
        let candidates = first_token_candidates(&value).map_err(Attempt::Fatal)?;
        let posterior = letter_posterior_from_logprobs(&candidates, &request.answer_space)
            .map_err(Attempt::Fatal)?;
        Ok(BackendResponse {
            posterior,
            retries: 0,
        })
    }
}

impl PosteriorBackend for RemoteBackend {
    fn identity(&self) -> String {
        format!("remote({}@{})", self.endpoint.model, self.endpoint.url())
    }

    fn posterior(&self, request: &ProbeRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        let body = self.request_body(request)?;
        let mut retries = 0;
        loop {
            match self.attempt(&body, request) {
                Ok(mut ok) => {
                    ok.retries = retries;
                    return Ok(ok);
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(e)) if retries < self.retry.max_retries => {
                    retries += 1;
                    let wait = self.retry.backoff(retries);
                    warn!(error = %e, retry = retries, ?wait, "retrying posterior request");
                    thread::sleep(wait);
                }
                Err(Attempt::Retryable(e)) => {
                    return Err(BackendError::Transport {
                        attempts: retries + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
    }

    fn max_in_flight(&self) -> Option<usize> {
        self.endpoint.max_in_flight
    }
}

fn prompt_text(request: &ProbeRequest) -> String {
    format!(
        "{}\nAnswer with the option's letter from the given choices directly ({}).",
        request.question.trim_end(),
        request.answer_space.labels().join(", ")
    )
}

fn encode_images(request: &ProbeRequest) -> Result<Vec<String>, BackendError> {
    match request.input_mode {
        InputMode::FrameSequence => request
            .frames
            .iter()
            .map(|f| render_frame(f, request.resolution).and_then(|img| data_uri(&img)))
            .collect(),
        InputMode::TiledCollage => {
            let side = (request.frames.len() as f64).sqrt().ceil() as u32;
            let slot = super::Resolution::new(
                (request.resolution.width / side).max(1),
                (request.resolution.height / side).max(1),
            );
            let tiles = request
                .frames
                .iter()
                .map(|f| render_frame(f, slot))
                .collect::<Result<Vec<_>, _>>()?;
            data_uri(&compose_tiles(&tiles, side, request.resolution)).map(|u| vec![u])
        }
    }
}

fn data_uri(img: &RgbImage) -> Result<String, BackendError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| BackendError::Config(format!("png encode: {e}")))?;
    Ok(format!(
        "data:image/png;base64,{}",
        BASE64.encode(buf.into_inner())
    ))
}

/// Candidate tokens for the first generated position: the sampled token plus
/// its `top_logprobs` alternatives.
fn first_token_candidates(value: &Value) -> Result<Vec<(String, f64)>, BackendError> {
    let first = value
        .pointer("/choices/0/logprobs/content/0")
        .ok_or_else(|| BackendError::Protocol("response has no token log-probabilities".into()))?;
    let mut out = Vec::new();
    if let Some(alts) = first.get("top_logprobs").and_then(Value::as_array) {
        for alt in alts {
            if let (Some(t), Some(lp)) = (
                alt.get("token").and_then(Value::as_str),
                alt.get("logprob").and_then(Value::as_f64),
            ) {
                out.push((t.to_string(), lp));
            }
        }
    }
    if let (Some(t), Some(lp)) = (
        first.get("token").and_then(Value::as_str),
        first.get("logprob").and_then(Value::as_f64),
    ) {
        if !out.iter().any(|(seen, _)| seen == t) {
            out.push((t.to_string(), lp));
        }
    }
    debug!(candidates = out.len(), "parsed first-token candidates");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_is_exponential_and_capped() {
        let p = RetryPolicy {
            max_retries: 5,
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_millis(500),
            multiplier: 2.0,
        };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(400));
        assert_eq!(p.backoff(4), Duration::from_millis(500));
    }

    #[test]
    fn endpoint_url_joins_cleanly() {
        let mut e = ServerEndpoint::new("http://h:1/");
        assert_eq!(e.url(), "http://h:1/v1/chat/completions");
        e.path = "chat".into();
        assert_eq!(e.url(), "http://h:1/chat");
    }

    #[test]
    fn candidates_include_sampled_token_once() {
        let v = json!({"choices": [{"logprobs": {"content": [{
            "token": "B", "logprob": -0.1,
            "top_logprobs": [{"token": "B", "logprob": -0.1}, {"token": "A", "logprob": -3.0}]
        }]}}]});
        let c = first_token_candidates(&v).unwrap();
        assert_eq!(c, vec![("B".to_string(), -0.1), ("A".to_string(), -3.0)]);
        assert!(first_token_candidates(&json!({"choices": []})).is_err());
    }
}
