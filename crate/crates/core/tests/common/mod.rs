#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use consistfair::client::{RuleTable, SyntheticConfig};
use consistfair::{Record, SchemaConfig, Verdict};

/// Local chat-completions stand-in. Answers with a rule table and counts
/// every request it receives.
pub struct MockServer {
    pub url: String,
    requests: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start(rules: RuleTable) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let counter = requests.clone();
        let rules = Arc::new(rules);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (counter, rules) = (counter.clone(), rules.clone());
                std::thread::spawn(move || serve(stream, &counter, &rules));
            }
        });
        Self { url, requests }
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, counter: &AtomicUsize, rules: &RuleTable) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0usize;
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
                length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    counter.fetch_add(1, Ordering::SeqCst);

    let request: serde_json::Value = serde_json::from_slice(&body).unwrap();
    let prompt = request["messages"].as_array().unwrap().last().unwrap()["content"]
        .as_str()
        .unwrap();
    let answer = format!("Answer: {}", rules.classify(prompt));
    let response = serde_json::json!({
        "id": "mock",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": answer}, "finish_reason": "stop"}]
    })
    .to_string();
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.len(),
        response
    );
}

pub fn rule_table_from_backend_toml(text: &str) -> RuleTable {
    #[derive(serde::Deserialize)]
    struct Wrapper {
        synthetic: SyntheticConfig,
    }
    let w: Wrapper = toml::from_str(text).unwrap();
    RuleTable::new(&w.synthetic).unwrap()
}

/// A COMPAS-schema record with fixed non-sensitive features.
pub fn compas_record(id: &str, race: &str, label: Verdict) -> Record {
    let raw: BTreeMap<String, String> = [
        ("sex", "Male"),
        ("age", "30"),
        ("race", race),
        ("juv_fel_count", "0"),
        ("juv_misd_count", "0"),
        ("priors_count", "1"),
        ("c_charge_desc", "Battery"),
        ("c_charge_degree", "M"),
        ("decile_score", "4"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    SchemaConfig::compas().record_from_raw(id, &raw, label).unwrap()
}
