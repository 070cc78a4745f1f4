//! Remote embedding and language-model clients against a local HTTP stub.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};
use solaudit_core::embedding::{provider_from_config, Embedder, ProviderConfig, RemoteEmbedder};
use solaudit_core::error::{EmbeddingError, ProviderError};
use solaudit_core::llm::{llm_from_config, ChatRequest, LlmConfig, LlmKind};

struct Seen {
    body: Value,
    auth: Option<String>,
}

type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

fn answer(mut stream: TcpStream, handler: &Handler, calls: &AtomicUsize, log: &Mutex<Vec<Seen>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0;
    let mut auth = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
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
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let n = calls.fetch_add(1, Ordering::SeqCst);
    let (status, reply) = handler(n, &body);
    log.lock().unwrap().push(Seen { body, auth });
    let response = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    );
    let _ = stream.write_all(response.as_bytes());
}

/// Serves `handler(call_index, request_json)` until the process exits.
fn serve(handler: Box<Handler>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let calls = Arc::new(AtomicUsize::new(0));
    let handler: Arc<Handler> = Arc::from(handler);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let (handler, calls, log) = (Arc::clone(&handler), Arc::clone(&calls), Arc::clone(&log));
            thread::spawn(move || answer(stream, &*handler, &calls, &log));
        }
    });
    (url, seen)
}

fn embeddings_for(body: &Value, dim: usize) -> String {
    let inputs = body["input"].as_array().unwrap();
    let data: Vec<Value> = inputs
        .iter()
        .map(|t| {
            let len = t.as_str().unwrap().len() as f64;
            let mut v = vec![0.0; dim];
            v[0] = 1.0;
            v[1] = len;
            json!({ "embedding": v })
        })
        .collect();
    json!({ "data": data }).to_string()
}

fn remote(url: &str, dim: usize) -> ProviderConfig {
    ProviderConfig {
        backoff_ms: 1,
        timeout_ms: 5_000,
        ..ProviderConfig::remote(url, "stub-model", dim)
    }
}

#[test]
fn embeds_and_batches() {
    let (url, seen) = serve(Box::new(|_, body| (200, embeddings_for(body, 8))));
    let cfg = ProviderConfig { batch_size: 2, ..remote(&url, 8) };
    let embedder = provider_from_config(&cfg).unwrap();
    let one = embedder.embed("abc").unwrap();
    assert_eq!(one.dim(), 8);
    assert_eq!(one.values()[1], 3.0);
    let batch = embedder.embed_batch(&["a", "bb", "ccc", "dddd", "e"]).unwrap();
    assert_eq!(batch.iter().map(|v| v.values()[1]).collect::<Vec<_>>(), [1.0, 2.0, 3.0, 4.0, 1.0]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 4);
    assert_eq!(seen[0].body["model"], "stub-model");
    assert_eq!(seen[1].body["input"], json!(["a", "bb"]));
}

#[test]
fn retries_then_succeeds() {
    let (url, seen) = serve(Box::new(|n, body| {
        if n < 2 {
            (503, "{}".into())
        } else {
            (200, embeddings_for(body, 8))
        }
    }));
    let embedder = RemoteEmbedder::new(&remote(&url, 8)).unwrap();
    assert!(embedder.embed("x").is_ok());
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn gives_up_after_max_retries() {
    let (url, seen) = serve(Box::new(|_, _| (500, "{}".into())));
    let cfg = ProviderConfig { max_retries: 1, ..remote(&url, 8) };
    let err = RemoteEmbedder::new(&cfg).unwrap().embed("x").unwrap_err();
    assert!(matches!(err, EmbeddingError::ProviderUnavailable(_)));
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn dimension_and_payload_checks() {
    let (url, _) = serve(Box::new(|_, body| (200, embeddings_for(body, 8))));
    let err = RemoteEmbedder::new(&remote(&url, 16)).unwrap().embed("x").unwrap_err();
    assert!(matches!(err, EmbeddingError::DimensionMismatch { expected: 16, got: 8 }));

    let (url, _) = serve(Box::new(|_, _| (200, json!({"data": [{"embedding": vec![0.0; 8]}]}).to_string())));
    let err = RemoteEmbedder::new(&remote(&url, 8)).unwrap().embed("x").unwrap_err();
    assert!(matches!(err, EmbeddingError::ZeroVector));

    let (url, _) = serve(Box::new(|_, _| (200, json!({"data": []}).to_string())));
    let err = RemoteEmbedder::new(&remote(&url, 8)).unwrap().embed("x").unwrap_err();
    assert!(matches!(err, EmbeddingError::ProviderUnavailable(_)));
}

#[test]
fn batch_error_reports_index() {
    let (url, _) = serve(Box::new(|n, body| {
        if n == 1 {
            (200, "not json".into())
        } else {
            (200, embeddings_for(body, 8))
        }
    }));
    let cfg = ProviderConfig { batch_size: 2, max_retries: 0, ..remote(&url, 8) };
    let err = RemoteEmbedder::new(&cfg).unwrap().embed_batch(&["a", "b", "c"]).unwrap_err();
    assert_eq!(err.batch_index(), Some(2));
    let err = RemoteEmbedder::new(&cfg).unwrap().embed_batch(&["a", ""]).unwrap_err();
    assert_eq!(err.batch_index(), Some(1));
}

#[test]
fn unreachable_endpoint() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let cfg = ProviderConfig { max_retries: 0, ..remote(&url, 8) };
    assert!(matches!(
        RemoteEmbedder::new(&cfg).unwrap().embed("x"),
        Err(EmbeddingError::ProviderUnavailable(_))
    ));
}

#[test]
fn invalid_configs() {
    let no_model = ProviderConfig { model_name: None, ..remote("http://127.0.0.1:9", 8) };
    assert!(matches!(provider_from_config(&no_model), Err(EmbeddingError::InvalidConfig(_))));
    assert!(provider_from_config(&ProviderConfig::local(4)).is_err());
}

#[test]
fn llm_round_trip_with_bearer_key() {
    // The only test touching this variable.
    std::env::set_var("SOLAUDIT_TEST_LLM_KEY", "sekrit");
    let (url, seen) = serve(Box::new(|_, body| {
        let reply = format!("[{{\"title\": \"echo {}\"}}]", body["user"].as_str().unwrap().len());
        (200, json!({ "content": reply }).to_string())
    }));
    let cfg = LlmConfig {
        kind: LlmKind::Remote,
        endpoint: Some(url),
        backoff_ms: 1,
        api_key_env: "SOLAUDIT_TEST_LLM_KEY".into(),
        ..LlmConfig::default()
    };
    let llm = llm_from_config(&cfg).unwrap();
    let out = llm
        .complete(&ChatRequest {
            system: "s".into(),
            user: "12345".into(),
        })
        .unwrap();
    assert_eq!(out, r#"[{"title": "echo 5"}]"#);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer sekrit"));
    assert_eq!(seen[0].body, json!({"system": "s", "user": "12345"}));
}

#[test]
fn llm_bad_payload_is_unavailable() {
    let (url, _) = serve(Box::new(|_, _| (200, json!({"text": "x"}).to_string())));
    let cfg = LlmConfig {
        kind: LlmKind::Remote,
        endpoint: Some(url),
        max_retries: 0,
        ..LlmConfig::default()
    };
    let err = llm_from_config(&cfg)
        .unwrap()
        .complete(&ChatRequest {
            system: String::new(),
            user: String::new(),
        })
        .unwrap_err();
    assert!(matches!(err, ProviderError::Unavailable(_)));
}

#[test]
fn in_flight_cap_is_respected() {
    let active = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (a, p) = (Arc::clone(&active), Arc::clone(&peak));
    let (url, _) = serve(Box::new(move |_, body| {
        let now = a.fetch_add(1, Ordering::SeqCst) + 1;
        p.fetch_max(now, Ordering::SeqCst);
        thread::sleep(std::time::Duration::from_millis(5));
        a.fetch_sub(1, Ordering::SeqCst);
        (200, embeddings_for(body, 8))
    }));
    let cfg = ProviderConfig { max_in_flight: 1, ..remote(&url, 8) };
    let embedder = Arc::new(RemoteEmbedder::new(&cfg).unwrap());
    let handles: Vec<_> = (0..6)
        .map(|i| {
            let e = Arc::clone(&embedder);
            thread::spawn(move || e.embed(&"x".repeat(i + 1)).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(embedder.dim(), 8);
    assert_eq!(peak.load(Ordering::SeqCst), 1);
}

#[test]
fn explicit_key_wins_over_environment() {
    use solaudit_core::embedding::Secret;
    let (url, seen) = serve(Box::new(|_, body| (200, embeddings_for(body, 8))));
    let cfg = ProviderConfig {
        api_key: Some(Secret::new("from-config")),
        api_key_env: "SOLAUDIT_TEST_UNSET_KEY".into(),
        ..remote(&url, 8)
    };
    RemoteEmbedder::new(&cfg).unwrap().embed("x").unwrap();
    assert_eq!(seen.lock().unwrap()[0].auth.as_deref(), Some("Bearer from-config"));
    assert_eq!(format!("{:?}", cfg.api_key), "Some(Secret(***))");
}
