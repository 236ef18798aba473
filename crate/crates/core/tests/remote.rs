use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use autorpa_core::llm::{AgentTag, ChatRequest, Gateway, LlmError, Message, RemoteBackend, RemoteConfig};

struct Seen {
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serves one canned (status, extra headers, body, delay) per connection.
fn serve(replies: Vec<(u16, &'static str, String, u64)>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, headers, body, delay) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                let lower = l.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = Some(l["authorization:".len()..].trim().to_string());
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let _ = tx.send(Seen { auth, body: serde_json::from_slice(&buf).unwrap() });
            thread::sleep(Duration::from_millis(delay));
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n{headers}\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    (format!("http://{addr}/v1"), rx)
}

fn cfg(endpoint: String, key_env: &str) -> RemoteConfig {
    RemoteConfig { endpoint, model: "test-model".into(), api_key_env: key_env.into(), timeout_ms: 2_000, max_retries: 2 }
}

fn req() -> ChatRequest {
    ChatRequest::new(AgentTag::Executor, vec![Message::system("sys"), Message::user("hi")])
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"f(x=1)"}}],"usage":{"prompt_tokens":12,"completion_tokens":4}}"#;

#[test]
fn retries_after_429_and_maps_fields() {
    std::env::set_var("AUTORPA_TEST_KEY_A", "sekrit");
    let (url, rx) = serve(vec![(429, "Retry-After: 0\r\n", "{}".into(), 0), (200, "", OK.into(), 0)]);
    let backend = RemoteBackend::new(cfg(url, "AUTORPA_TEST_KEY_A")).unwrap();
    let gw = Gateway::new(Box::new(backend));
    let r = gw.complete(&req()).unwrap();
    assert_eq!(r.content, "f(x=1)");
    assert_eq!((r.prompt_tokens, r.completion_tokens, r.estimated), (12, 4, false));
    let first = rx.recv().unwrap();
    let second = rx.recv().unwrap();
    assert_eq!(first.auth.as_deref(), Some("Bearer sekrit"));
    assert_eq!(second.body["model"], "test-model");
    assert_eq!(second.body["temperature"], 0.0);
    assert_eq!(second.body["messages"][1]["role"], "user");
    assert_eq!(second.body["messages"][1]["content"], "hi");
    assert_eq!(gw.ledger().total(), 16);
}

#[test]
fn http_errors_carry_status_and_body() {
    let (url, _rx) = serve(vec![(500, "", "{\"error\":\"boom\"}".into(), 0)]);
    let gw = Gateway::new(Box::new(RemoteBackend::new(cfg(url, "AUTORPA_TEST_KEY_UNSET")).unwrap()));
    match gw.complete(&req()) {
        Err(LlmError::RemoteError { status, body }) => {
            assert_eq!(status, 500);
            assert!(body.contains("boom"));
        }
        other => panic!("{other:?}"),
    }
    assert!(gw.ledger().is_empty());
}

#[test]
fn slow_server_times_out() {
    let (url, _rx) = serve(vec![(200, "", OK.into(), 1_500)]);
    let mut c = cfg(url, "AUTORPA_TEST_KEY_UNSET");
    c.timeout_ms = 300;
    let gw = Gateway::new(Box::new(RemoteBackend::new(c).unwrap()));
    assert!(matches!(gw.complete(&req()), Err(LlmError::Timeout(300))));
}

#[test]
fn missing_usage_is_estimated() {
    let body = r#"{"choices":[{"message":{"content":"a b c"}}]}"#;
    let (url, _rx) = serve(vec![(200, "", body.into(), 0)]);
    let gw = Gateway::new(Box::new(RemoteBackend::new(cfg(url, "AUTORPA_TEST_KEY_UNSET")).unwrap()));
    let r = gw.complete(&req()).unwrap();
    assert!(r.estimated);
    assert_eq!(r.completion_tokens, 4);
}

#[test]
fn empty_endpoint_is_a_config_error() {
    assert!(matches!(RemoteBackend::new(cfg(String::new(), "X")), Err(LlmError::Config(_))));
}
