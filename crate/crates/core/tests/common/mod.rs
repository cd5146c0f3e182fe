#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use hatequad::dataset::{write_jsonl, Sample};
use hatequad::llm::{Categorical, MockRule, MockSpec, Outcome};

/// A request as seen by the stub server.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Recorded {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).expect("request body is JSON")
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// One scripted reply; `delay` is slept before answering.
#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl Reply {
    pub fn ok(body: serde_json::Value) -> Self {
        Self {
            status: 200,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16, body: &str) -> Self {
        Self {
            status,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }

    pub fn slow(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

/// HTTP/1.1 server (one request per connection) answering each request with the next scripted reply (the
/// last one repeats) and recording what it received.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Recorded>>>,
}

impl StubServer {
    pub fn start(script: Vec<Reply>) -> Self {
        Self::start_with(move |i, _| script[i.min(script.len() - 1)].clone())
    }

    /// `respond(request_number, request)` picks each reply.
    pub fn start_with<F>(respond: F) -> Self
    where
        F: Fn(usize, &Recorded) -> Reply + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        let respond = Arc::new(respond);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let log = Arc::clone(&log);
                let respond = Arc::clone(&respond);
                thread::spawn(move || serve(stream, &log, respond.as_ref()));
            }
        });
        Self { url, requests }
    }

    pub fn recorded(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve<F: Fn(usize, &Recorded) -> Reply>(stream: TcpStream, log: &Mutex<Vec<Recorded>>, respond: &F) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut headers = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let len: usize = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; len];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let rec = Recorded {
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    let n = {
        let mut log = log.lock().unwrap();
        log.push(rec.clone());
        log.len() - 1
    };
    let reply = respond(n, &rec);
    thread::sleep(reply.delay);
    let text = format!(
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.status,
        reply.body.len(),
        reply.body
    );
    let _ = writer.write_all(text.as_bytes());
    let _ = writer.flush();
}

pub fn chat_reply(content: &str) -> serde_json::Value {
    serde_json::json!({
        "id": "stub",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
}

const GROUPS: [&str; 5] = ["Racism", "Sexism", "Region", "LGBTQ", "others"];
const TARGETS: [&str; 6] = ["他们", "这些人", "某地人", "那群人", "女司机", "外地人"];
const ARGUMENTS: [&str; 6] = ["真是太差劲了", "都不靠谱", "素质低", "应该滚出去", "没救了", "就会添乱"];

/// Deterministic quadruplet-annotated samples; every fifth is non-hateful.
/// Contents carry a unique tag so mock rules can address single samples.
pub fn synthetic_samples(n: usize, tag: &str) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let t = TARGETS[i % TARGETS.len()];
            let a = ARGUMENTS[(i * 7 + 3) % ARGUMENTS.len()];
            let (group, label) = if i % 5 == 4 {
                ("non-hate", "non-hate")
            } else {
                (GROUPS[i % GROUPS.len()], "hate")
            };
            let mut output = format!("{t} | {a} | {group} | {label} [END]");
            if i % 7 == 0 {
                let t2 = TARGETS[(i + 2) % TARGETS.len()];
                output = format!("{t} | {a} | {group} | {label} [SEP] {t2} | 不行 | Sexism | hate [END]");
            }
            Sample {
                id: i as u64 + 1,
                content: format!("{tag}{:04}：{t}{a}，大家怎么看", i + 1),
                output,
            }
        })
        .collect()
}

/// Mock answering each tagged test sample with its gold triplets with
/// probability `p_correct`, otherwise a wrong triplet or junk.
pub fn mock_for(samples: &[Sample], p_correct: f64, seed: u64) -> MockSpec {
    let wrong = (1.0 - p_correct) * 0.75;
    let junk = 1.0 - p_correct - wrong;
    let rules = samples
        .iter()
        .map(|s| {
            let triplets = s
                .output
                .replace(" | hate [", " [")
                .replace(" | non-hate [", " [");
            let tag: String = s.content.split('：').next().unwrap().to_string();
            MockRule {
                key: None,
                contains: Some(format!("输入：{tag}")),
                outcomes: Categorical(vec![
                    Outcome::answer(triplets, p_correct),
                    Outcome::answer("错误目标 | 错误论点 | Region [END]", wrong),
                    Outcome::answer("我不知道", junk),
                ]),
            }
        })
        .collect();
    MockSpec {
        seed,
        default: Categorical(vec![Outcome::answer("我不知道", 1.0)]),
        rules,
    }
}

pub fn write_samples(path: &Path, samples: &[Sample]) {
    write_jsonl(path, samples).unwrap();
}
