#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use futures_util::StreamExt;
use preictal_core::ais::{AisParams, Population};
use preictal_core::eval::{synthetic_corpus, train_population, Corpus, CorpusSpec};
use preictal_core::ingest::{write_recording, FileFormat};
use preictal_core::par::Execution;
use preictal_core::EngineConfig;
use preictal_service::{serve, ServiceOptions};
use serde_json::Value;
use tokio_tungstenite::tungstenite::Message;

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub base: String,
    pub ws_base: String,
    pub population: PathBuf,
    pub recordings: Vec<PathBuf>,
    pub http: reqwest::Client,
}

pub fn corpus() -> Corpus {
    let spec = CorpusSpec { train_recordings: 3, test_recordings: 2, seed: 31, ..CorpusSpec::default() };
    synthetic_corpus(&spec, Execution::Parallel).unwrap()
}

pub fn population(corpus: &Corpus) -> Population {
    train_population(&corpus.train, &EngineConfig::default(), &AisParams::default(), 2, Execution::Parallel).unwrap()
}

/// A server on an ephemeral port, a trained population bundle and the test
/// recordings on disk.
pub async fn start() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let (population, recordings) = tokio::task::spawn_blocking(move || {
        let c = corpus();
        let pop_path = root.join("population.ais");
        population(&c).save(&pop_path).unwrap();
        let recs = c
            .test
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let p = root.join(format!("test{i}.csv"));
                write_recording(r, &p, FileFormat::Csv).unwrap();
                p
            })
            .collect();
        (pop_path, recs)
    })
    .await
    .unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let options = ServiceOptions { data_dir: dir.path().join("logs") };
    tokio::spawn(serve(listener, options));
    Fixture {
        dir,
        base: format!("http://{addr}"),
        ws_base: format!("ws://{addr}"),
        population,
        recordings,
        http: reqwest::Client::new(),
    }
}

impl Fixture {
    pub async fn create(&self, body: Value) -> reqwest::Response {
        self.http.post(format!("{}/sessions", self.base)).json(&body).send().await.unwrap()
    }

    pub async fn create_ok(&self, body: Value) -> String {
        let r = self.create(body).await;
        assert_eq!(r.status(), 201, "{}", r.text().await.unwrap());
        r.json::<Value>().await.unwrap()["session_id"].as_str().unwrap().to_owned()
    }

    pub fn replay_body(&self, rec: usize, rate: Value, paused: bool) -> Value {
        serde_json::json!({
            "source": { "kind": "replay", "path": self.recordings[rec], "rate": rate },
            "population": { "kind": "bundle", "path": self.population },
            "start_paused": paused,
        })
    }

    pub async fn status(&self, id: &str) -> Value {
        self.http.get(format!("{}/sessions/{id}", self.base)).send().await.unwrap().json().await.unwrap()
    }

    pub async fn set_state(&self, id: &str, state: &str) {
        let r = self
            .http
            .put(format!("{}/sessions/{id}/state", self.base))
            .json(&serde_json::json!({ "state": state }))
            .send()
            .await
            .unwrap();
        assert!(r.status().is_success());
    }

    pub async fn wait_ended(&self, id: &str) -> Value {
        for _ in 0..6000 {
            let s = self.status(id).await;
            if s["state"] == "ended" {
                return s;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        panic!("session {id} did not end");
    }

    pub async fn export(&self, id: &str) -> Vec<u8> {
        let r = self.http.get(format!("{}/sessions/{id}/export", self.base)).send().await.unwrap();
        assert_eq!(r.status(), 200);
        r.bytes().await.unwrap().to_vec()
    }

    pub fn log_path(&self, id: &str) -> PathBuf {
        self.dir.path().join("logs").join(format!("{id}.events.log"))
    }

    pub async fn subscribe(&self, id: &str, from_seq: usize) -> Subscriber {
        let url = format!("{}/sessions/{id}/events?from_seq={from_seq}", self.ws_base);
        let (ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
        Subscriber { ws }
    }
}

pub struct Subscriber {
    ws: tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>,
}

/// Everything one subscriber saw.
#[derive(Debug, Default)]
pub struct Transcript {
    pub hello: Value,
    pub lines: Vec<String>,
    pub end: Option<Value>,
}

impl Subscriber {
    async fn next_text(&mut self) -> Option<String> {
        while let Some(msg) = self.ws.next().await {
            match msg.ok()? {
                Message::Text(t) => return Some(t.to_string()),
                Message::Close(_) => return None,
                _ => {}
            }
        }
        None
    }

    pub async fn hello(&mut self) -> Value {
        serde_json::from_str(&self.next_text().await.expect("hello frame")).unwrap()
    }

    /// Reads until the end marker or the socket closes.
    pub async fn drain(mut self, hello: Value) -> Transcript {
        let mut t = Transcript { hello, ..Transcript::default() };
        while let Some(text) = self.next_text().await {
            let v: Value = serde_json::from_str(&text).unwrap();
            if v.get("end_of_session").is_some() {
                t.end = Some(v);
                break;
            }
            t.lines.push(text);
        }
        t
    }
}

pub fn file_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}
