//! Scriptable OpenAI-style chat-completions server for tests.
//!
//! The server binds an ephemeral localhost port on a private runtime thread,
//! answers `POST` requests on any path with scripted replies, and records every
//! request it sees. Replies come from a FIFO script first, then from the
//! default reply (or a responder closure, if one is set).
//!
//! ```no_run
//! use gridprobe_mock::{MockReply, MockServer};
//!
//! let server = MockServer::start();
//! server.enqueue(MockReply::letters(&[("B", 0.9), ("A", 0.1)]));
//! // point a client at server.url() ...
//! assert_eq!(server.requests().len(), 0);
//! ```

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use serde_json::{json, Value};
use tokio::sync::oneshot;

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    /// First-token candidates as `(token, logprob)`, most likely first.
    Logprobs(Vec<(String, f64)>),
    /// Arbitrary status and body.
    Raw { status: u16, body: String },
    /// Waits before replying; longer than the client timeout simulates a hang.
    Delayed(Duration, Box<MockReply>),
}

impl MockReply {
    /// Candidates from plain probabilities.
    pub fn letters(probs: &[(&str, f64)]) -> Self {
        MockReply::Logprobs(probs.iter().map(|(t, p)| (t.to_string(), p.ln())).collect())
    }

    pub fn status(status: u16, body: impl Into<String>) -> Self {
        MockReply::Raw {
            status,
            body: body.into(),
        }
    }

    pub fn delayed(self, by: Duration) -> Self {
        MockReply::Delayed(by, Box::new(self))
    }
}

/// What the server saw for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub path: String,
    pub authorization: Option<String>,
    pub body: Value,
}

impl RecordedRequest {
    fn content(&self) -> impl Iterator<Item = &Value> {
        self.body
            .pointer("/messages")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
            .filter_map(|m| m.get("content").and_then(Value::as_array))
            .flatten()
    }

    /// Number of `image_url` parts across all messages.
    pub fn image_count(&self) -> usize {
        self.content()
            .filter(|p| p.get("type").and_then(Value::as_str) == Some("image_url"))
            .count()
    }

    pub fn image_urls(&self) -> Vec<String> {
        self.content()
            .filter_map(|p| p.pointer("/image_url/url").and_then(Value::as_str))
            .map(str::to_string)
            .collect()
    }

    pub fn text(&self) -> String {
        self.content()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn max_tokens(&self) -> Option<u64> {
        self.body.get("max_tokens").and_then(Value::as_u64)
    }

    pub fn logprobs(&self) -> Option<bool> {
        self.body.get("logprobs").and_then(Value::as_bool)
    }

    pub fn top_logprobs(&self) -> Option<u64> {
        self.body.get("top_logprobs").and_then(Value::as_u64)
    }

    pub fn model(&self) -> Option<&str> {
        self.body.get("model").and_then(Value::as_str)
    }
}

type Responder = dyn Fn(&RecordedRequest) -> MockReply + Send + Sync;

struct Shared {
    script: Mutex<VecDeque<MockReply>>,
    default: Mutex<MockReply>,
    responder: Mutex<Option<Arc<Responder>>>,
    log: Mutex<Vec<RecordedRequest>>,
}

pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Starts a server whose default reply is a confident `A` over four letters.
    pub fn start() -> Self {
        Self::with_default(MockReply::letters(&[
            ("A", 0.7),
            ("B", 0.1),
            ("C", 0.1),
            ("D", 0.1),
        ]))
    }

    pub fn with_default(default: MockReply) -> Self {
        let shared = Arc::new(Shared {
            script: Mutex::new(VecDeque::new()),
            default: Mutex::new(default),
            responder: Mutex::new(None),
            log: Mutex::new(Vec::new()),
        });
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let state = shared.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()
                .expect("mock runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
                    .await
                    .expect("bind mock server");
                addr_tx
                    .send(listener.local_addr().expect("local addr"))
                    .expect("report address");
                let app = Router::new().fallback(handle).with_state(state);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .expect("mock server");
            });
        });
        let addr = addr_rx.recv().expect("mock server failed to start");
        Self {
            addr,
            shared,
            shutdown: Some(stop_tx),
            thread: Some(thread),
        }
    }

    /// Base URL, e.g. `http://127.0.0.1:41234`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn enqueue(&self, reply: MockReply) {
        self.shared.script.lock().unwrap().push_back(reply);
    }

    pub fn set_default(&self, reply: MockReply) {
        *self.shared.default.lock().unwrap() = reply;
    }

    /// Computes replies from the request once the script is exhausted.
    pub fn set_responder(&self, f: impl Fn(&RecordedRequest) -> MockReply + Send + Sync + 'static) {
        *self.shared.responder.lock().unwrap() = Some(Arc::new(f));
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.shared.log.lock().unwrap().clone()
    }

    pub fn clear_requests(&self) {
        self.shared.log.lock().unwrap().clear();
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

async fn handle(
    State(shared): State<Arc<Shared>>,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let parsed: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return (StatusCode::BAD_REQUEST, format!("invalid json: {e}")).into_response(),
    };
    let request = RecordedRequest {
        path: uri.path().to_string(),
        authorization: headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
        body: parsed,
    };
    shared.log.lock().unwrap().push(request.clone());
    let scripted = shared.script.lock().unwrap().pop_front();
    let reply = match scripted {
        Some(r) => r,
        None => {
            let responder = shared.responder.lock().unwrap().clone();
            match responder {
                Some(f) => f(&request),
                None => shared.default.lock().unwrap().clone(),
            }
        }
    };
    render(reply, &request).await
}

async fn render(mut reply: MockReply, request: &RecordedRequest) -> Response {
    while let MockReply::Delayed(by, inner) = reply {
        tokio::time::sleep(by).await;
        reply = *inner;
    }
    match reply {
        MockReply::Raw { status, body } => (
            StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            body,
        )
            .into_response(),
        MockReply::Logprobs(candidates) => {
            let keep = request
                .top_logprobs()
                .map_or(candidates.len(), |n| n as usize);
            let top: Vec<Value> = candidates
                .iter()
                .take(keep)
                .map(|(t, lp)| json!({"token": t, "logprob": lp, "bytes": t.as_bytes()}))
                .collect();
            let (token, logprob) = candidates
                .first()
                .cloned()
                .unwrap_or_else(|| (String::new(), 0.0));
            let body = json!({
                "id": "chatcmpl-mock",
                "object": "chat.completion",
                "model": request.model().unwrap_or("mock"),
                "choices": [{
                    "index": 0,
                    "message": {"role": "assistant", "content": token},
                    "finish_reason": "length",
                    "logprobs": {"content": [{
                        "token": token,
                        "logprob": logprob,
                        "top_logprobs": top,
                    }]},
                }],
                "usage": {"prompt_tokens": 0, "completion_tokens": 1, "total_tokens": 1},
            });
            (StatusCode::OK, axum::Json(body)).into_response()
        }
        MockReply::Delayed(..) => unreachable!("delays unwrapped above"),
    }
}
