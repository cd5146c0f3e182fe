mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use common::{chat_reply, Reply, StubServer};
use hatequad::embed::{embed_texts, HttpEmbedder};
use hatequad::http::RetryPolicy;
use hatequad::llm::{generate, ChatClient, ConcurrencyLimit, GenError, GenParams, GenRequest, Generator};

fn fast_retry(attempts: u32) -> RetryPolicy {
    RetryPolicy {
        attempts,
        initial_backoff_ms: 5,
        max_backoff_ms: 20,
    }
}

fn client(server: &StubServer, attempts: u32) -> ChatClient {
    ChatClient::new(
        &format!("{}/v1/chat/completions", server.url),
        "srag-test-model",
        Some("sekrit".into()),
        Duration::from_secs(5),
        fast_retry(attempts),
    )
}

#[test]
fn request_body_carries_exactly_model_temperature_and_messages() {
    let server = StubServer::start(vec![Reply::ok(chat_reply("甲 | 乙 | Racism [END]"))]);
    let params = GenParams {
        temperature: 0.1,
        max_tokens: 128,
        stop: vec!["[END]".into()],
    };
    let out = generate("提示词", &params, &client(&server, 1)).unwrap();
    assert_eq!(out, "甲 | 乙 | Racism [END]");

    let reqs = server.recorded();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].path, "/v1/chat/completions");
    assert_eq!(reqs[0].header("authorization"), Some("Bearer sekrit"));
    let body = reqs[0].json();
    assert_eq!(body["model"], "srag-test-model");
    assert_eq!(body["temperature"], 0.1);
    assert_eq!(body["max_tokens"], 128);
    assert_eq!(body["messages"], serde_json::json!([{"role": "user", "content": "提示词"}]));
    let mut keys: Vec<_> = body.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["max_tokens", "messages", "model", "temperature"]);
}

#[test]
fn output_is_cut_after_the_stop_sequence() {
    let server = StubServer::start(vec![Reply::ok(chat_reply("a | b | c [END] trailing chatter"))]);
    let out = generate("p", &GenParams::default(), &client(&server, 1)).unwrap();
    assert_eq!(out, "a | b | c [END]");
}

#[test]
fn transient_failures_are_retried() {
    let server = StubServer::start(vec![
        Reply::status(503, "busy"),
        Reply::status(429, "slow down"),
        Reply::ok(chat_reply("ok [END]")),
    ]);
    let out = generate("p", &GenParams::default(), &client(&server, 3)).unwrap();
    assert_eq!(out, "ok [END]");
    assert_eq!(server.recorded().len(), 3);
}

#[test]
fn retries_stop_at_the_attempt_limit() {
    let server = StubServer::start(vec![Reply::status(500, "boom")]);
    let err = generate("p", &GenParams::default(), &client(&server, 2)).unwrap_err();
    assert!(matches!(err, GenError::Http { status: 500, .. }), "{err:?}");
    assert_eq!(server.recorded().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubServer::start(vec![Reply::status(400, "bad request")]);
    let err = generate("p", &GenParams::default(), &client(&server, 4)).unwrap_err();
    assert_eq!(
        err,
        GenError::Http {
            status: 400,
            body: "bad request".into()
        }
    );
    assert_eq!(server.recorded().len(), 1);
}

#[test]
fn slow_backend_times_out() {
    let server = StubServer::start(vec![Reply::ok(chat_reply("late")).slow(Duration::from_millis(800))]);
    let c = ChatClient::new(&server.url, "m", None, Duration::from_millis(150), fast_retry(1));
    let err = generate("p", &GenParams::default(), &c).unwrap_err();
    assert_eq!(err, GenError::Timeout);
}

#[test]
fn unreachable_backend_is_unavailable() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let c = ChatClient::new(&format!("http://127.0.0.1:{port}"), "m", None, Duration::from_secs(1), fast_retry(1));
    let err = generate("p", &GenParams::default(), &c).unwrap_err();
    assert!(matches!(err, GenError::BackendUnavailable(_)), "{err:?}");
}

#[test]
fn malformed_response_is_a_decode_error() {
    let server = StubServer::start(vec![Reply::ok(serde_json::json!({"unexpected": true}))]);
    let err = generate("p", &GenParams::default(), &client(&server, 3)).unwrap_err();
    assert!(matches!(err, GenError::Decode(_)), "{err:?}");
    assert_eq!(server.recorded().len(), 1);
}

#[test]
fn in_flight_cap_holds_across_threads() {
    let live = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (l, p) = (Arc::clone(&live), Arc::clone(&peak));
    let server = StubServer::start_with(move |_, _| {
        let now = l.fetch_add(1, Ordering::SeqCst) + 1;
        p.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(30));
        l.fetch_sub(1, Ordering::SeqCst);
        Reply::ok(chat_reply("x"))
    });
    let limited = ConcurrencyLimit::new(client(&server, 1), 2);
    let params = GenParams::default();
    thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| {
                limited
                    .generate(&GenRequest {
                        prompt: "p",
                        params: &params,
                        draw: None,
                    })
                    .unwrap()
            });
        }
    });
    assert_eq!(server.recorded().len(), 8);
    assert!(peak.load(Ordering::SeqCst) <= 2, "peak {}", peak.load(Ordering::SeqCst));
}

#[test]
fn embeddings_protocol_round_trip() {
    let server = StubServer::start_with(|_, req| {
        let body = req.json();
        let inputs = body["input"].as_array().unwrap();
        // Answer in reverse order with explicit indices.
        let data: Vec<_> = inputs
            .iter()
            .enumerate()
            .rev()
            .map(|(i, t)| serde_json::json!({"index": i, "embedding": [t.as_str().unwrap().chars().count() as f32, 1.0]}))
            .collect();
        Reply::ok(serde_json::json!({ "data": data }))
    });
    let e = HttpEmbedder::new(&server.url, "bge", None, Duration::from_secs(5), fast_retry(1), 2);
    let texts: Vec<String> = ["a", "bb", "ccc"].iter().map(|s| s.to_string()).collect();
    let out = embed_texts(&texts, &e).unwrap();
    assert_eq!(out, vec![vec![1.0, 1.0], vec![2.0, 1.0], vec![3.0, 1.0]]);
    let reqs = server.recorded();
    assert_eq!(reqs.len(), 2, "batch size 2 splits three texts into two calls");
    assert_eq!(reqs[0].json()["model"], "bge");
    assert_eq!(reqs[0].json()["input"], serde_json::json!(["a", "bb"]));
}

#[test]
fn embeddings_with_wrong_count_are_rejected() {
    let server = StubServer::start(vec![Reply::ok(serde_json::json!({"data": [{"embedding": [1.0]}]}))]);
    let e = HttpEmbedder::new(&server.url, "m", None, Duration::from_secs(5), fast_retry(1), 8);
    let texts = vec!["a".to_string(), "b".to_string()];
    assert!(embed_texts(&texts, &e).is_err());
}

#[test]
fn backoff_delays_accumulate() {
    let server = StubServer::start(vec![Reply::status(503, ""), Reply::status(503, ""), Reply::ok(chat_reply("x"))]);
    let c = ChatClient::new(
        &server.url,
        "m",
        None,
        Duration::from_secs(5),
        RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 60,
            max_backoff_ms: 1000,
        },
    );
    let start = Instant::now();
    generate("p", &GenParams::default(), &c).unwrap();
    // 60 ms then 120 ms of backoff.
    assert!(start.elapsed() >= Duration::from_millis(180));
}
