#![allow(dead_code)]

use consult_core::model::{read_corpus, ConsultationCase};
use serde_json::{json, Value};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn demo_dir() -> PathBuf {
    repo_root().join("data/demo")
}

pub fn demo_corpus() -> Vec<ConsultationCase> {
    read_corpus(&demo_dir().join("corpus.jsonl")).expect("demo corpus")
}

pub type Handler = fn(&Value) -> String;

/// Minimal OpenAI-style chat endpoint on localhost. One request per connection.
pub struct MockChatServer {
    pub base_url: String,
    pub requests: Arc<AtomicUsize>,
}

impl MockChatServer {
    pub fn start(handler: Handler) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let counter = requests.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let counter = counter.clone();
                std::thread::spawn(move || serve(stream, handler, &counter));
            }
        });
        MockChatServer { base_url, requests }
    }

    pub fn count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, handler: Handler, counter: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone"));
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    counter.fetch_add(1, Ordering::SeqCst);
    let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let reply = json!({
        "id": "mock",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": handler(&request)}}],
    })
    .to_string();
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.len(),
        reply
    );
    let _ = stream.flush();
}

/// Doctor asks three questions then concludes; patient gives a fixed answer;
/// solver always answers A.
pub fn scripted_chat(request: &Value) -> String {
    let model = request["model"].as_str().unwrap_or_default();
    let messages = request["messages"].as_array().cloned().unwrap_or_default();
    match model {
        "mock-doctor" => {
            let asked = messages.iter().filter(|m| m["role"] == "assistant").count();
            if asked < 3 {
                format!("Do you have any other symptoms I should know about, part {}?", asked + 1)
            } else {
                "You most likely need urgent treatment. I will arrange it now.".to_string()
            }
        }
        "mock-patient" => "Marv: I feel worse every hour.".to_string(),
        _ => "The answer is (A).".to_string(),
    }
}
