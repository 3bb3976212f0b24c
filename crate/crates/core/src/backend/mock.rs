//! Minimal scripted HTTP server for offline tests. Responses are served in
//! the order they were scripted; every received request is recorded so tests
//! can assert on retry counts, headers, and payloads.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

#[derive(Debug, Clone)]
pub struct MockResponse {
    pub status: u16,
    pub body: String,
}

impl MockResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        MockResponse { status: 200, body: body.into() }
    }

    pub fn error(status: u16) -> Self {
        MockResponse { status, body: format!("{{\"error\":\"scripted {status}\"}}") }
    }
}

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub headers: String,
    pub body: String,
}

pub struct MockServer {
    base_url: String,
    script: Arc<Mutex<VecDeque<MockResponse>>>,
    requests: Arc<Mutex<Vec<RecordedRequest>>>,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    local_addr: std::net::SocketAddr,
}

impl MockServer {
    /// Bind an ephemeral localhost port and serve the scripted responses in
    /// order. Requests beyond the script get a 500 with a telltale body.
    pub fn start(script: Vec<MockResponse>) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let local_addr = listener.local_addr().unwrap();
        let script = Arc::new(Mutex::new(VecDeque::from(script)));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let shutdown = Arc::new(AtomicBool::new(false));

        let thread_script = Arc::clone(&script);
        let thread_requests = Arc::clone(&requests);
        let thread_shutdown = Arc::clone(&shutdown);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if thread_shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { break };
                handle_connection(stream, &thread_script, &thread_requests);
            }
        });

        MockServer {
            base_url: format!("http://{local_addr}"),
            script,
            requests,
            shutdown,
            handle: Some(handle),
            local_addr,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn received(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }

    /// Append more scripted responses after startup.
    pub fn enqueue(&self, responses: Vec<MockResponse>) {
        self.script.lock().unwrap().extend(responses);
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the accept loop so the thread can observe the flag.
        let _ = TcpStream::connect(self.local_addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(
    mut stream: TcpStream,
    script: &Arc<Mutex<VecDeque<MockResponse>>>,
    requests: &Arc<Mutex<Vec<RecordedRequest>>>,
) {
    let mut buffer = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        match stream.read(&mut chunk) {
            Ok(0) => return,
            Ok(n) => {
                buffer.extend_from_slice(&chunk[..n]);
                if let Some(pos) = find_header_end(&buffer) {
                    break pos;
                }
                if buffer.len() > 1 << 20 {
                    return;
                }
            }
            Err(_) => return,
        }
    };

    let headers = String::from_utf8_lossy(&buffer[..header_end]).to_string();
    let content_length = headers
        .lines()
        .find_map(|line| {
            let (name, value) = line.split_once(':')?;
            if name.eq_ignore_ascii_case("content-length") {
                value.trim().parse::<usize>().ok()
            } else {
                None
            }
        })
        .unwrap_or(0);

    let body_start = header_end + 4;
    while buffer.len() < body_start + content_length {
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => buffer.extend_from_slice(&chunk[..n]),
            Err(_) => return,
        }
    }
    let body = String::from_utf8_lossy(&buffer[body_start..]).to_string();
    requests.lock().unwrap().push(RecordedRequest { headers, body });

    let response = script
        .lock()
        .unwrap()
        .pop_front()
        .unwrap_or(MockResponse { status: 500, body: "{\"error\":\"script exhausted\"}".into() });
    let reason = match response.status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Mock",
    };
    let payload = format!(
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        reason,
        response.body.len(),
        response.body
    );
    let _ = stream.write_all(payload.as_bytes());
    let _ = stream.flush();
}

fn find_header_end(buffer: &[u8]) -> Option<usize> {
    buffer.windows(4).position(|w| w == b"\r\n\r\n")
}

/// Fixture: a completion whose per-token logprobs are exactly `tokens`.
/// The reported usage matches the logprob count.
pub fn completion_body(text: &str, tokens: &[(&str, f64)]) -> String {
    let content: Vec<serde_json::Value> = tokens
        .iter()
        .map(|(surface, logprob)| {
            serde_json::json!({ "token": surface, "logprob": logprob, "top_logprobs": [] })
        })
        .collect();
    serde_json::json!({
        "id": "mock-cmpl",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": { "role": "assistant", "content": text },
            "logprobs": { "content": content },
            "finish_reason": "stop"
        }],
        "usage": {
            "prompt_tokens": 64,
            "completion_tokens": tokens.len(),
            "total_tokens": 64 + tokens.len()
        }
    })
    .to_string()
}

/// Fixture: a one-token completion whose top alternatives are `alternatives`
/// (highest probability first; the first entry doubles as the chosen token).
pub fn single_token_body(alternatives: &[(&str, f64)]) -> String {
    let (chosen, chosen_lp) = alternatives.first().copied().unwrap_or(("?", -1.0));
    let top: Vec<serde_json::Value> = alternatives
        .iter()
        .map(|(surface, logprob)| serde_json::json!({ "token": surface, "logprob": logprob }))
        .collect();
    serde_json::json!({
        "id": "mock-cmpl",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": { "role": "assistant", "content": chosen },
            "logprobs": { "content": [{
                "token": chosen,
                "logprob": chosen_lp,
                "top_logprobs": top
            }] },
            "finish_reason": "length"
        }],
        "usage": { "prompt_tokens": 64, "completion_tokens": 1, "total_tokens": 65 }
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serves_scripted_responses_in_order_and_records_requests() {
        let server = MockServer::start(vec![
            MockResponse::ok("{\"first\":true}"),
            MockResponse::error(503),
        ]);
        let client = reqwest::blocking::Client::new();
        let url = format!("{}/v1/chat/completions", server.base_url());

        let first = client.post(&url).body("{\"n\":1}").send().unwrap();
        assert_eq!(first.status().as_u16(), 200);
        assert_eq!(first.text().unwrap(), "{\"first\":true}");

        let second = client.post(&url).body("{\"n\":2}").send().unwrap();
        assert_eq!(second.status().as_u16(), 503);

        let third = client.post(&url).body("{}").send().unwrap();
        assert_eq!(third.status().as_u16(), 500);
        assert!(third.text().unwrap().contains("script exhausted"));

        let received = server.received();
        assert_eq!(received.len(), 3);
        assert_eq!(received[0].body, "{\"n\":1}");
        assert_eq!(received[1].body, "{\"n\":2}");
        assert_eq!(server.remaining(), 0);
    }

    #[test]
    fn completion_fixture_is_wire_parseable() {
        let body = completion_body("hello world", &[("hello", -0.1), (" world", -0.4)]);
        let parsed: crate::backend::parse::ChatCompletionResponse =
            serde_json::from_str(&body).unwrap();
        assert_eq!(parsed.choices[0].message.content, "hello world");
        assert_eq!(parsed.usage.unwrap().completion_tokens, 2);
    }
}
