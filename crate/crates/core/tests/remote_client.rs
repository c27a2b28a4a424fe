//! RemoteChatClient against a scripted HTTP server on loopback.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use ossa_core::backends::{ChatError, ChatMessage, ChatModel, ChatRequest, ContentPart, RemoteChatClient, RemoteConfig};

#[derive(Clone)]
struct Reply {
    status: u16,
    body: String,
    delay: Duration,
}

fn ok(text: &str) -> Reply {
    let body = serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 10, "completion_tokens": 5, "total_tokens": 15}
    });
    Reply { status: 200, body: body.to_string(), delay: Duration::ZERO }
}

fn status(code: u16) -> Reply {
    Reply { status: code, body: "{\"error\": \"nope\"}".into(), delay: Duration::ZERO }
}

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    authorization: Option<String>,
    body: serde_json::Value,
}

struct Stub {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

/// Serve the scripted replies in order; the last one repeats.
fn stub(replies: Vec<Reply>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let mut queue: VecDeque<Reply> = replies.into();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                continue;
            }
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Seen {
                path: request_line.split_whitespace().nth(1).unwrap_or_default().to_string(),
                authorization,
                body: serde_json::from_slice(&body).unwrap_or_default(),
            });
            let reply = if queue.len() > 1 { queue.pop_front().unwrap() } else { queue[0].clone() };
            thread::sleep(reply.delay);
            let response = format!(
                "HTTP/1.1 {} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                reply.status,
                reply.body.len(),
                reply.body
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    Stub { url, seen }
}

fn client(url: &str, key: Option<&str>) -> RemoteChatClient {
    let mut config = RemoteConfig::new(url, key.map(String::from));
    config.initial_backoff = Duration::from_millis(5);
    RemoteChatClient::new(config).unwrap()
}

fn request() -> ChatRequest {
    ChatRequest::new("test-model", vec![ChatMessage::user(vec![ContentPart::Text { text: "plan the table".into() }])])
}

#[test]
fn returns_completion_text_and_usage() {
    let s = stub(vec![ok("{\"cup\": {}}")]);
    let r = client(&s.url, Some("k-123")).complete(&request()).unwrap();
    assert_eq!(r.text, "{\"cup\": {}}");
    assert_eq!(r.attempts, 1);
    assert_eq!(r.usage.unwrap().total_tokens, 15);
}

#[test]
fn request_shape() {
    let s = stub(vec![ok("x")]);
    client(&s.url, Some("k-123")).complete(&request()).unwrap();
    let seen = s.seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer k-123"));
    assert_eq!(seen[0].body["model"], "test-model");
    assert_eq!(seen[0].body["temperature"], 0.0);
    assert_eq!(seen[0].body["messages"][0]["role"], "user");
}

#[test]
fn retries_rate_limits_then_succeeds() {
    let s = stub(vec![status(429), status(429), ok("done")]);
    let r = client(&s.url, Some("k")).complete(&request()).unwrap();
    assert_eq!(r.text, "done");
    assert_eq!(r.attempts, 3);
    assert_eq!(s.seen.lock().unwrap().len(), 3);
}

#[test]
fn persistent_rate_limit_gives_up() {
    let s = stub(vec![status(429)]);
    let e = client(&s.url, Some("k")).complete(&request()).unwrap_err();
    assert_eq!(e, ChatError::RateLimited { attempts: 3 });
}

#[test]
fn missing_key_sends_nothing() {
    let s = stub(vec![ok("x")]);
    let e = client(&s.url, None).complete(&request()).unwrap_err();
    assert!(matches!(e, ChatError::AuthError(_)));
    thread::sleep(Duration::from_millis(50));
    assert!(s.seen.lock().unwrap().is_empty());
}

#[test]
fn unauthorized_is_not_retried() {
    let s = stub(vec![status(401)]);
    let e = client(&s.url, Some("bad")).complete(&request()).unwrap_err();
    assert!(matches!(e, ChatError::AuthError(_)));
    assert_eq!(s.seen.lock().unwrap().len(), 1);
}

#[test]
fn server_errors_exhaust_retries() {
    let s = stub(vec![status(500)]);
    let e = client(&s.url, Some("k")).complete(&request()).unwrap_err();
    assert!(matches!(e, ChatError::TransportError(_)));
    assert_eq!(s.seen.lock().unwrap().len(), 3);
}

#[test]
fn bad_request_is_fatal() {
    let s = stub(vec![status(400)]);
    let e = client(&s.url, Some("k")).complete(&request()).unwrap_err();
    assert!(matches!(e, ChatError::TransportError(_)));
    assert_eq!(s.seen.lock().unwrap().len(), 1);
}

#[test]
fn slow_server_times_out() {
    let slow = Reply { delay: Duration::from_millis(400), ..ok("late") };
    let s = stub(vec![slow]);
    let mut req = request();
    req.timeout = Duration::from_millis(100);
    let e = client(&s.url, Some("k")).complete(&req).unwrap_err();
    assert_eq!(e, ChatError::Timeout { attempts: 3 });
}

#[test]
fn malformed_body() {
    let s = stub(vec![Reply { status: 200, body: "{\"choices\": []}".into(), delay: Duration::ZERO }]);
    let e = client(&s.url, Some("k")).complete(&request()).unwrap_err();
    assert!(matches!(e, ChatError::MalformedResponse(_)));
}
