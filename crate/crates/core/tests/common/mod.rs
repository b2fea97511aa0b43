#![allow(dead_code)]

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use alguide::corpus::{Instance, Pool, PoolKind, Taxonomy};
use alguide::featurize::Vocabulary;
use alguide::learner::{fit_native, NativeLearner, NativeLearnerParams};
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

/// An axum app on its own runtime, torn down on drop.
pub struct TestServer {
    pub addr: SocketAddr,
    _rt: tokio::runtime::Runtime,
}

impl TestServer {
    pub fn start(app: Router) -> TestServer {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let std_listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        std_listener.set_nonblocking(true).unwrap();
        let addr = std_listener.local_addr().unwrap();
        rt.spawn(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
        TestServer { addr, _rt: rt }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }
}

#[derive(Clone, Debug)]
pub struct Recorded {
    pub body: Value,
    pub authorization: Option<String>,
}

#[derive(Default)]
struct Script {
    replies: VecDeque<(u16, Value)>,
    last: Option<(u16, Value)>,
    seen: Vec<Recorded>,
}

/// Answers every POST with the next scripted reply; the final reply repeats.
#[derive(Clone)]
pub struct ScriptedServer {
    script: Arc<Mutex<Script>>,
    server: Arc<TestServer>,
}

async fn scripted(State(script): State<Arc<Mutex<Script>>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let mut s = script.lock().unwrap();
    s.seen.push(Recorded {
        body,
        authorization: headers.get("authorization").and_then(|v| v.to_str().ok()).map(str::to_string),
    });
    let reply = match s.replies.pop_front() {
        Some(r) => {
            s.last = Some(r.clone());
            r
        }
        None => s.last.clone().unwrap_or((500, json!({"error": "script exhausted"}))),
    };
    (StatusCode::from_u16(reply.0).unwrap(), Json(reply.1)).into_response()
}

impl ScriptedServer {
    pub fn start(replies: Vec<(u16, Value)>) -> ScriptedServer {
        let script = Arc::new(Mutex::new(Script {
            replies: replies.into(),
            ..Script::default()
        }));
        let app = Router::new().fallback(post(scripted)).with_state(script.clone());
        ScriptedServer {
            script,
            server: Arc::new(TestServer::start(app)),
        }
    }

    pub fn url(&self, path: &str) -> String {
        self.server.url(path)
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.script.lock().unwrap().seen.clone()
    }
}

pub fn chat_reply(content: &str) -> Value {
    json!({ "choices": [{ "index": 0, "message": { "role": "assistant", "content": content } }] })
}

/// How the mock model server corrupts its `/predict_proba` answers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Fault {
    #[default]
    None,
    /// Multiply every probability by this factor.
    Scale(f64),
    /// Return one row fewer than requested.
    DropRow,
}

struct Trained {
    vocab: Vocabulary,
    learner: NativeLearner,
}

#[derive(Default)]
struct ModelState {
    trained: Option<Trained>,
    fault: Fault,
    train_calls: usize,
    last_train: Option<Value>,
}

/// A model server implementing the protocol with the native learner.
pub struct MockModelServer {
    state: Arc<Mutex<ModelState>>,
    server: TestServer,
}

fn reject(status: StatusCode, msg: &str) -> Response {
    (status, Json(json!({ "error": msg }))).into_response()
}

async fn train(State(state): State<Arc<Mutex<ModelState>>>, Json(body): Json<Value>) -> Response {
    let Some(classes) = body.get("classes").and_then(Value::as_array) else {
        return reject(StatusCode::UNPROCESSABLE_ENTITY, "missing classes");
    };
    let classes: Vec<String> = classes.iter().filter_map(|c| c.as_str().map(str::to_string)).collect();
    let Ok(tax) = Taxonomy::new(classes) else {
        return reject(StatusCode::UNPROCESSABLE_ENTITY, "invalid classes");
    };
    let instances = body.get("instances").and_then(Value::as_array).cloned().unwrap_or_default();
    if instances.is_empty() {
        return reject(StatusCode::BAD_REQUEST, "no instances");
    }
    let mut pool = Pool::new(PoolKind::Labeled);
    for (i, inst) in instances.iter().enumerate() {
        let text = inst["text"].as_str().unwrap_or_default();
        let label = inst["label"].as_str().unwrap_or_default();
        if !tax.contains(label) {
            return reject(StatusCode::UNPROCESSABLE_ENTITY, "unknown class");
        }
        if pool.insert(Instance::labeled(format!("i{i}"), text, label)).is_err() {
            return reject(StatusCode::BAD_REQUEST, "bad instance");
        }
    }
    let vocab = Vocabulary::fit(&pool).unwrap();
    let params = NativeLearnerParams {
        seed: body.pointer("/config/seed").and_then(Value::as_u64).unwrap_or(0),
        ..NativeLearnerParams::default()
    };
    let learner = fit_native(&pool, &vocab, &tax, &params).unwrap();
    let mut s = state.lock().unwrap();
    s.trained = Some(Trained { vocab, learner });
    s.train_calls += 1;
    s.last_train = Some(body);
    Json(json!({ "status": "trained", "n": instances.len() })).into_response()
}

async fn predict(State(state): State<Arc<Mutex<ModelState>>>, Json(body): Json<Value>) -> Response {
    let s = state.lock().unwrap();
    let Some(t) = &s.trained else {
        return reject(StatusCode::CONFLICT, "not trained");
    };
    let texts = body.get("texts").and_then(Value::as_array).cloned().unwrap_or_default();
    let mut rows: Vec<Vec<f64>> = texts
        .iter()
        .map(|x| {
            let v = t.vocab.transform(x.as_str().unwrap_or_default());
            t.learner.predict_proba(&v).unwrap().as_slice().to_vec()
        })
        .collect();
    match s.fault {
        Fault::None => {}
        Fault::Scale(f) => rows.iter_mut().flatten().for_each(|p| *p *= f),
        Fault::DropRow => {
            rows.pop();
        }
    }
    Json(json!({ "probs": rows })).into_response()
}

async fn reset(State(state): State<Arc<Mutex<ModelState>>>) -> Response {
    state.lock().unwrap().trained = None;
    Json(json!({ "status": "reset" })).into_response()
}

impl MockModelServer {
    pub fn start() -> MockModelServer {
        let state = Arc::new(Mutex::new(ModelState::default()));
        let app = Router::new()
            .route("/train", post(train))
            .route("/predict_proba", post(predict))
            .route("/reset", post(reset))
            .with_state(state.clone());
        MockModelServer {
            state,
            server: TestServer::start(app),
        }
    }

    pub fn base_url(&self) -> String {
        self.server.url("")
    }

    pub fn set_fault(&self, fault: Fault) {
        self.state.lock().unwrap().fault = fault;
    }

    pub fn train_calls(&self) -> usize {
        self.state.lock().unwrap().train_calls
    }

    pub fn last_train(&self) -> Option<Value> {
        self.state.lock().unwrap().last_train.clone()
    }
}

/// Two-class corpus with one keyword per class, plus scripted answers.
pub fn keyword_corpus(n: usize) -> (Taxonomy, Pool, Pool, std::collections::HashMap<String, String>) {
    let tax = Taxonomy::new(["alpha", "beta"]).unwrap();
    let words = [["sun", "warm", "bright", "day"], ["rain", "cold", "dark", "night"]];
    let mut answers = std::collections::HashMap::new();
    let u = Pool::from_instances(
        PoolKind::Unlabeled,
        (0..n).map(|i| {
            let c = i % 2;
            answers.insert(format!("u{i:03}"), tax.classes()[c].clone());
            let w = &words[c];
            Instance::unlabeled(format!("u{i:03}"), format!("{} {} item{i}", w[i % 4], w[(i / 2) % 4]))
        }),
    )
    .unwrap();
    let b = Pool::from_instances(
        PoolKind::Labeled,
        [
            Instance::labeled("b0", "sun warm", "alpha"),
            Instance::labeled("b1", "rain cold", "beta"),
        ],
    )
    .unwrap();
    (tax, u, b, answers)
}

/// Thin JSON client for the `/v1` API.
pub struct Api {
    pub base: String,
    pub token: Option<String>,
    agent: ureq::Agent,
}

impl Api {
    pub fn new(base: impl Into<String>, token: Option<&str>) -> Api {
        Api {
            base: base.into(),
            token: token.map(str::to_string),
            agent: ureq::Agent::config_builder().http_status_as_error(false).build().into(),
        }
    }

    fn finish(mut resp: ureq::http::Response<ureq::Body>) -> (u16, Value) {
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_json().unwrap_or(Value::Null);
        (status, body)
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        let mut req = self.agent.get(format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        Self::finish(req.call().unwrap())
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        self.post_with(path, body, &[])
    }

    pub fn post_with(&self, path: &str, body: &Value, headers: &[(&str, &str)]) -> (u16, Value) {
        let mut req = self.agent.post(format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        Self::finish(req.send_json(body).unwrap())
    }

    /// Polls the run until `done` holds, panicking after 60s.
    pub fn wait_for(&self, run: &str, done: impl Fn(&Value) -> bool) -> Value {
        let start = std::time::Instant::now();
        loop {
            let (status, body) = self.get(&format!("/runs/{run}"));
            assert_eq!(status, 200, "{body}");
            if done(&body) {
                return body;
            }
            assert_ne!(body["phase"], "failed", "{body}");
            assert!(start.elapsed().as_secs() < 60, "timed out: {body}");
            std::thread::sleep(std::time::Duration::from_millis(10));
        }
    }

    pub fn awaiting(&self, run: &str) -> Value {
        self.wait_for(run, |s| s["phase"] == "awaiting_labels" || s["phase"] == "finished")
    }

    /// Labels every pending item in the current batch from `answers`.
    pub fn drain(&self, run: &str, answers: &std::collections::HashMap<String, String>) -> usize {
        let (status, q) = self.get(&format!("/runs/{run}/queue"));
        assert_eq!(status, 200);
        let items = q["items"].as_array().unwrap().clone();
        for item in &items {
            let id = item["instance_id"].as_str().unwrap();
            let (status, body) = self.post(
                &format!("/runs/{run}/labels"),
                &json!({ "instance_id": id, "label": answers[id] }),
            );
            assert_eq!(status, 200, "{body}");
        }
        items.len()
    }
}

/// A small synthetic corpus written to `dir`, with its answers.
pub fn synthetic_files(dir: &std::path::Path, n_unlabeled: usize) -> std::collections::HashMap<String, String> {
    let spec = alguide::synthetic::SyntheticSpec {
        n_unlabeled,
        n_bootstrap: 30,
        n_dev: 60,
        n_test: 60,
        seed: 3,
        ..Default::default()
    };
    let corpus = alguide::synthetic::generate(&spec, &Taxonomy::safety_default()).unwrap();
    corpus.write(dir).unwrap();
    corpus.answers
}
