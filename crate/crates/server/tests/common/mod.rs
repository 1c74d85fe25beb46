#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::thread::JoinHandle;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde_json::Value;

use crseval::ingest::SituationPool;
use crseval::rng::Rng;
use crseval::session::attention_instruction;
use crseval::{synth, MemoryStore, RecordStore, Study};
use crseval_server::view::{CompletionResponse, CreateSessionResponse, NextStep, PageView};
use crseval_server::{serve, AppState};

/// The service running on a background runtime, bound to a free port.
pub struct TestServer {
    pub base: String,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(state: AppState) -> Self {
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(serve(
                state,
                "127.0.0.1:0".parse().unwrap(),
                move |a| addr_tx.send(a).unwrap(),
                async {
                    let _ = stop_rx.await;
                },
            ))
            .unwrap();
        });
        let addr = addr_rx.recv().unwrap();
        Self {
            base: format!("http://{addr}"),
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }

    /// Default study over a synthetic pool, with an in-memory store.
    pub fn with_memory_store(study: Study, pool: SituationPool) -> (Self, Arc<MemoryStore>) {
        let store = Arc::new(MemoryStore::new());
        store.put_study(&study).unwrap();
        let state = AppState::new(study, pool, store.clone());
        (Self::start(state), store)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// The release binary, started as a child process.
pub struct ServerProcess {
    pub base: String,
    pub child: Child,
}

impl ServerProcess {
    pub fn spawn(pool: &Path, store: &Path) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_crseval-server"))
            .args(["--listen", "127.0.0.1:0", "--pool"])
            .arg(pool)
            .arg("--store")
            .arg(store)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_owned();
        Self { base, child }
    }

    /// SIGKILL, no chance to flush anything.
    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for ServerProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct Api {
    pub base: String,
    pub client: Client,
}

impl Api {
    pub fn new(base: &str) -> Self {
        Self {
            base: base.to_owned(),
            client: Client::new(),
        }
    }

    pub fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        let resp = self
            .client
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .unwrap();
        let status = resp.status();
        (status, resp.json().unwrap_or(Value::Null))
    }

    pub fn get(&self, path: &str) -> (StatusCode, Value) {
        let resp = self.client.get(format!("{}{path}", self.base)).send().unwrap();
        let status = resp.status();
        (status, resp.json().unwrap_or(Value::Null))
    }

    pub fn post_ok<T: DeserializeOwned>(&self, path: &str, body: &Value) -> T {
        let (status, v) = self.post(path, body);
        assert_eq!(status, StatusCode::OK, "{path}: {v}");
        serde_json::from_value(v).unwrap()
    }
}

/// A simulated participant talking to the API the way the browser does. It
/// finds the attention check by reading the response texts.
pub struct Participant<'a> {
    pub api: &'a Api,
    pub study: &'a Study,
    pub attentive: bool,
    pub rng: Rng,
}

impl Participant<'_> {
    pub fn ratings_for(&mut self, page: &PageView) -> Value {
        let instruction = attention_instruction(&self.study.scale, self.study.attention_required_rating);
        let points = self.study.scale.points as usize;
        let required = self.study.attention_required_rating;
        let mut ratings = serde_json::Map::new();
        for r in &page.responses {
            let rating = if r.text == instruction {
                if self.attentive {
                    required
                } else if required == 1 {
                    points as u8
                } else {
                    1
                }
            } else {
                1 + self.rng.below(points) as u8
            };
            ratings.insert(r.slot.to_string(), rating.into());
        }
        Value::Object(ratings)
    }

    /// Runs the whole workflow and returns the session id and hit code.
    pub fn complete(&mut self, worker_id: &str) -> (String, String) {
        let created: CreateSessionResponse = self
            .api
            .post_ok("/api/session", &serde_json::json!({ "worker_id": worker_id }));
        let id = created.session_id;
        let mut step: NextStep = self
            .api
            .post_ok(&format!("/api/session/{id}/ack-instructions"), &Value::Null);
        loop {
            match step {
                NextStep::Task { page } => {
                    let body = serde_json::json!({
                        "ratings": self.ratings_for(&page),
                        "timings": { "events_ms": vec![2500; page.responses.len() + 1] },
                    });
                    step = self
                        .api
                        .post_ok(&format!("/api/session/{id}/task/{}", page.task_index), &body);
                }
                NextStep::Questionnaire(_) => break,
                other => panic!("unexpected step {other:?}"),
            }
        }
        let answers = synth::questionnaire_answers(self.study, &mut self.rng);
        let done: CompletionResponse = self.api.post_ok(
            &format!("/api/session/{id}/questionnaire"),
            &serde_json::json!({ "answers": answers }),
        );
        (id, done.hit_code)
    }
}

pub fn write_pool(dir: &Path, size: usize, seed: u64) -> std::path::PathBuf {
    let path = dir.join("pool.json");
    crseval::ingest::write_pool_file(&synth::random_pool(size, 3, seed), &path).unwrap();
    path
}
