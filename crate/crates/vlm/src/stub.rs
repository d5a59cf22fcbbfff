//! A scripted chat-completions server for tests and offline demos.
//!
//! Replies are served in order; once the script runs out the last reply
//! repeats. Every request is recorded.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

use poivre_core::canvas::{from_data_url, Raster};

#[derive(Debug, Clone, PartialEq)]
pub enum StubReply {
    /// HTTP 200 with a chat completion whose assistant text is this.
    Text(String),
    /// An error status with a plain-text body.
    Status(u16, String),
    /// HTTP 200 with this exact body.
    Raw(String),
}

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub authorization: Option<String>,
    pub body: String,
}

impl RecordedRequest {
    pub fn json(&self) -> Option<Value> {
        serde_json::from_str(&self.body).ok()
    }

    /// Text of the first text part of the user message.
    pub fn prompt(&self) -> Option<String> {
        self.parts()?
            .into_iter()
            .find(|p| p.get("type").and_then(Value::as_str) == Some("text"))
            .and_then(|p| p.get("text").and_then(Value::as_str).map(str::to_string))
    }

    /// Every image attached to the request, decoded.
    pub fn images(&self) -> Vec<Raster> {
        self.parts()
            .unwrap_or_default()
            .into_iter()
            .filter_map(|p| p.pointer("/image_url/url").and_then(Value::as_str).map(str::to_string))
            .filter_map(|url| from_data_url(&url).ok())
            .collect()
    }

    fn parts(&self) -> Option<Vec<Value>> {
        let v = self.json()?;
        v.pointer("/messages/0/content")?.as_array().cloned()
    }
}

pub struct StubServer {
    server: Arc<Server>,
    url: String,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds an ephemeral localhost port.
    pub fn start(script: Vec<StubReply>) -> std::io::Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("stub server has no IP address"))?;
        let server = Arc::new(server);
        let requests = Arc::new(Mutex::new(Vec::new()));
        let handle = {
            let server = Arc::clone(&server);
            let requests = Arc::clone(&requests);
            let mut script: VecDeque<StubReply> = script.into();
            std::thread::spawn(move || {
                let mut last = StubReply::Status(500, "stub has no script".into());
                for mut req in server.incoming_requests() {
                    let mut body = String::new();
                    let _ = req.as_reader().read_to_string(&mut body);
                    let authorization = req
                        .headers()
                        .iter()
                        .find(|h| h.field.equiv("Authorization"))
                        .map(|h| h.value.to_string());
                    requests.lock().unwrap_or_else(|p| p.into_inner()).push(RecordedRequest {
                        method: req.method().to_string(),
                        path: req.url().to_string(),
                        authorization,
                        body,
                    });
                    if let Some(next) = script.pop_front() {
                        last = next;
                    }
                    let _ = req.respond(render(&last));
                }
            })
        };
        Ok(Self {
            server,
            url: format!("http://{addr}/v1"),
            requests,
            handle: Some(handle),
        })
    }

    /// Base URL to put in an endpoint config.
    pub fn base_url(&self) -> &str {
        &self.url
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn render(reply: &StubReply) -> Response<std::io::Cursor<Vec<u8>>> {
    let json_header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    match reply {
        StubReply::Text(text) => {
            let body = json!({
                "id": "stub-completion",
                "object": "chat.completion",
                "model": "stub",
                "choices": [{
                    "index": 0,
                    "message": {"role": "assistant", "content": text},
                    "finish_reason": "stop",
                }],
            });
            Response::from_string(body.to_string()).with_header(json_header)
        }
        StubReply::Status(code, body) => Response::from_string(body.clone()).with_status_code(*code),
        StubReply::Raw(body) => Response::from_string(body.clone()),
    }
}
