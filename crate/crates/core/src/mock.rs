//! A minimal in-process HTTP server replaying canned completions and judge
//! verdicts, so the whole pipeline runs and tests offline.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::json;

#[derive(Debug, Clone)]
pub struct CannedCompletion {
    pub text: String,
    /// "stop" or "length".
    pub finish_reason: String,
}

enum Behavior {
    /// OpenAI-style completions keyed by exact prompt.
    Completions(HashMap<String, CannedCompletion>),
    /// Always answer with this HTTP status and an empty JSON body.
    Status(u16),
    /// Always answer 200 with this exact body.
    RawBody(String),
    /// Judge endpoint keyed by subject.
    Judge(HashMap<String, Vec<crate::label::JudgedFact>>),
}

pub struct MockServer {
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

fn read_request(stream: &mut TcpStream) -> Option<String> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end;
    loop {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            header_end = pos + 4;
            break;
        }
        if buf.len() > 1 << 20 {
            return None;
        }
    }
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length = headers
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length").then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    while buf.len() < header_end + content_length {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    Some(String::from_utf8_lossy(&buf[header_end..header_end + content_length.min(buf.len() - header_end)]).to_string())
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) {
    let reason = match status {
        200 => "OK",
        401 => "Unauthorized",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        _ => "Response",
    };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

fn handle(behavior: &Behavior, body: &str, stream: &mut TcpStream) {
    match behavior {
        Behavior::Status(code) => respond(stream, *code, "{}"),
        Behavior::RawBody(raw) => respond(stream, 200, raw),
        Behavior::Completions(canned) => {
            let parsed: serde_json::Value = match serde_json::from_str(body) {
                Ok(v) => v,
                Err(_) => return respond(stream, 400, r#"{"error":"bad json"}"#),
            };
            let prompt = parsed.get("prompt").and_then(|p| p.as_str()).unwrap_or("");
            match canned.get(prompt) {
                Some(c) => {
                    let reply = json!({
                        "id": "cmpl-mock",
                        "object": "text_completion",
                        "model": parsed.get("model").and_then(|m| m.as_str()).unwrap_or("mock"),
                        "choices": [{
                            "text": c.text,
                            "index": 0,
                            "finish_reason": c.finish_reason,
                        }],
                    });
                    respond(stream, 200, &reply.to_string());
                }
                None => respond(
                    stream,
                    404,
                    &json!({ "error": format!("no canned completion for prompt: {prompt}") })
                        .to_string(),
                ),
            }
        }
        Behavior::Judge(subjects) => {
            let parsed: serde_json::Value = match serde_json::from_str(body) {
                Ok(v) => v,
                Err(_) => return respond(stream, 400, r#"{"error":"bad json"}"#),
            };
            let subject = parsed.get("subject").and_then(|s| s.as_str()).unwrap_or("");
            match subjects.get(subject) {
                Some(facts) => respond(stream, 200, &json!({ "facts": facts }).to_string()),
                None => respond(
                    stream,
                    404,
                    &json!({ "error": format!("no facts for subject: {subject}") }).to_string(),
                ),
            }
        }
    }
}

impl MockServer {
    fn start(behavior: Behavior) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = listener.local_addr().expect("local addr");
        let requests = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let requests = requests.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(mut stream) = stream else { continue };
                    let Some(body) = read_request(&mut stream) else { continue };
                    requests.fetch_add(1, Ordering::SeqCst);
                    handle(&behavior, &body, &mut stream);
                }
            })
        };
        MockServer { addr, requests, stop, handle: Some(handle) }
    }

    pub fn completions(canned: HashMap<String, CannedCompletion>) -> Self {
        Self::start(Behavior::Completions(canned))
    }

    pub fn status(code: u16) -> Self {
        Self::start(Behavior::Status(code))
    }

    pub fn raw_body(body: impl Into<String>) -> Self {
        Self::start(Behavior::RawBody(body.into()))
    }

    pub fn judge(subjects: HashMap<String, Vec<crate::label::JudgedFact>>) -> Self {
        Self::start(Behavior::Judge(subjects))
    }

    /// Full URL clients should post to.
    pub fn endpoint(&self) -> String {
        format!("http://{}/v1/completions", self.addr)
    }

    /// Requests answered so far — lets tests assert "zero network calls".
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // poke the listener out of accept()
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
