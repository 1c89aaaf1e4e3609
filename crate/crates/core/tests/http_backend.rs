//! HttpBackend against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use prefsynth::llm::{
    bulk_complete, BackendConfig, BackendKind, CompletionBackend, CompletionRequest, HttpBackend,
    LlmError,
};

struct Seen {
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serves each connection with `reply(request_index, body) -> (status, body)`.
fn serve(
    reply: impl Fn(usize, &serde_json::Value) -> (u16, String) + Send + Sync + 'static,
) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/complete", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let seen2 = Arc::clone(&seen);
    let count = AtomicUsize::new(0);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = None;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = Some(line["authorization:".len()..].trim().to_string());
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let body: serde_json::Value = serde_json::from_slice(&body).unwrap();
            let i = count.fetch_add(1, Ordering::SeqCst);
            let (status, payload) = reply(i, &body);
            seen2.lock().unwrap().push(Seen { auth, body });
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                payload.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    (url, seen)
}

fn request(prompt: &str, seed: u64) -> CompletionRequest {
    CompletionRequest {
        prompt: prompt.into(),
        temperature: 0.0,
        max_tokens: 32,
        seed,
        sim_task: None,
    }
}

fn config(url: &str) -> BackendConfig {
    BackendConfig {
        kind: BackendKind::HttpApi,
        endpoint_url: Some(url.into()),
        max_parallel: 1,
        retry_limit: 2,
        backoff_ms: 1,
        ..BackendConfig::default()
    }
}

#[test]
fn wire_format_and_bearer_token() {
    let (url, seen) = serve(|_, body| {
        let prompt = body["prompt"].as_str().unwrap().to_uppercase();
        (200, format!(r#"{{"text":"{prompt}","usage":{{"prompt_tokens":3,"completion_tokens":5}}}}"#))
    });
    let backend = HttpBackend::new(&url, Some("sekret".into()), Duration::from_secs(5)).unwrap();
    let c = backend.complete(&request("hello", 7)).unwrap();
    assert_eq!(c.text, "HELLO");
    assert_eq!((c.prompt_tokens, c.completion_tokens), (Some(3), Some(5)));
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer sekret"));
    assert_eq!(
        seen[0].body,
        serde_json::json!({"prompt":"hello","temperature":0.0,"max_tokens":32,"seed":7})
    );
}

#[test]
fn missing_usage_is_reported() {
    let (url, _) = serve(|_, _| (200, r#"{"text":"x"}"#.into()));
    let backend = HttpBackend::new(&url, None, Duration::from_secs(5)).unwrap();
    let out = bulk_complete(&[request("a", 1)], &backend, &config(&url)).unwrap();
    assert_eq!(out.results[0].as_ref().unwrap().prompt_tokens, None);
    assert_eq!(out.report.missing_usage, 1);
}

#[test]
fn server_errors_are_retried() {
    let (url, seen) = serve(|i, _| {
        if i < 2 {
            (503, "{}".into())
        } else {
            (200, r#"{"text":"ok","usage":{"prompt_tokens":1,"completion_tokens":1}}"#.into())
        }
    });
    let backend = HttpBackend::new(&url, None, Duration::from_secs(5)).unwrap();
    let out = bulk_complete(&[request("a", 1)], &backend, &config(&url)).unwrap();
    assert_eq!(out.results[0].as_ref().unwrap().text, "ok");
    assert_eq!(out.report.attempts, 3);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn unauthorized_aborts_the_batch() {
    let (url, _) = serve(|_, _| (401, "{}".into()));
    let backend = HttpBackend::new(&url, Some("bad".into()), Duration::from_secs(5)).unwrap();
    let reqs: Vec<_> = (0..5).map(|i| request("a", i)).collect();
    let err = bulk_complete(&reqs, &backend, &config(&url)).unwrap_err();
    assert!(matches!(err, LlmError::Auth(_)), "{err}");
}
