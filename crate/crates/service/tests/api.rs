use std::sync::Arc;

use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio::sync::oneshot;
use wlac::corpus::Vocabulary;
use wlac::model::{file_hash, Arch, Codec, JointModel, ModelBundle, ModelConfig};
use wlac_service::{router, AppState, CompleteResponse, HealthResponse, Snapshot, TranslateResponse};

fn bundle(with_mt: bool, seed: u64) -> ModelBundle {
    let vocab = Vocabulary::new(["step", "small", "stop", "one", "that's", "for", "man", "一", "小", "步"], "abcdefghijklmnopqrstuvwxyz'".chars());
    let model = JointModel::new(ModelConfig::micro(Arch::Aioe, vocab.len(), 0), seed, with_mt).unwrap();
    ModelBundle::new(model, Codec::new(vocab, None))
}

fn snapshot(dir: &std::path::Path, with_mt: bool, seed: u64) -> Snapshot {
    bundle(with_mt, seed).save(dir).unwrap();
    Snapshot::load(dir, None).unwrap()
}

struct Server {
    base: String,
    stop: Option<oneshot::Sender<()>>,
    done: tokio::task::JoinHandle<std::io::Result<()>>,
}

async fn start(state: Arc<AppState>) -> Server {
    let listener = wlac_service::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = oneshot::channel();
    let app = router(state, &["http://localhost:3000".to_string()]);
    let done = tokio::spawn(wlac_service::serve(listener, app, async {
        let _ = rx.await;
    }));
    Server { base, stop: Some(tx), done }
}

fn figure_one(typed: &str, k: Option<usize>) -> Value {
    json!({"source": "一 小 步", "left_context": "that's one small", "right_context": "", "typed": typed, "k": k})
}

#[tokio::test]
async fn complete_respects_k_prefix_and_order() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(Arc::new(AppState::with_snapshot(snapshot(dir.path(), true, 1)))).await;
    let client = reqwest::Client::new();
    let r: CompleteResponse = client
        .post(format!("{}/v1/complete", server.base))
        .json(&figure_one("s", Some(1)))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(r.candidates.len(), 1);
    let r: CompleteResponse = client
        .post(format!("{}/v1/complete", server.base))
        .json(&figure_one("s", None))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(r.candidates.len(), 3);
    assert!(r.candidates.iter().all(|c| c.word.starts_with('s')));
    assert!(r.candidates.windows(2).all(|w| w[0].score >= w[1].score));
    assert_eq!(r.model_id, file_hash(ModelBundle::model_path(dir.path())).unwrap());
}

#[tokio::test]
async fn request_errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(Arc::new(AppState::with_snapshot(snapshot(dir.path(), true, 1)))).await;
    let client = reqwest::Client::new();
    let url = format!("{}/v1/complete", server.base);
    let bad = client
        .post(&url)
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(bad.status(), StatusCode::BAD_REQUEST);
    let body: Value = bad.json().await.unwrap();
    assert_eq!(body["error"]["category"], "bad_request");
    let empty = client.post(&url).json(&figure_one("", None)).send().await.unwrap();
    assert_eq!(empty.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let zero = client.post(&url).json(&figure_one("s", Some(0))).send().await.unwrap();
    assert_eq!(zero.status(), StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn translate_needs_the_mt_decoder() {
    let full_dir = tempfile::tempdir().unwrap();
    let server = start(Arc::new(AppState::with_snapshot(snapshot(full_dir.path(), true, 2)))).await;
    let client = reqwest::Client::new();
    let r: TranslateResponse = client
        .post(format!("{}/v1/translate", server.base))
        .json(&figure_one("s", None))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(!r.hypotheses.is_empty() && r.hypotheses.len() <= 5);
    assert!(r.hypotheses.windows(2).all(|w| w[0].score >= w[1].score));

    let stripped_dir = tempfile::tempdir().unwrap();
    let server = start(Arc::new(AppState::with_snapshot(snapshot(stripped_dir.path(), false, 2)))).await;
    let resp = client
        .post(format!("{}/v1/translate", server.base))
        .json(&figure_one("s", None))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::CONFLICT);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["error"]["category"], "capability");
}

#[tokio::test]
async fn health_reports_loading_then_ready_and_hot_swaps() {
    let state = Arc::new(AppState::default());
    let server = start(state.clone()).await;
    let client = reqwest::Client::new();
    let health = || async {
        client
            .get(format!("{}/v1/health", server.base))
            .send()
            .await
            .unwrap()
            .json::<HealthResponse>()
            .await
            .unwrap()
    };
    let h = health().await;
    assert_eq!((h.status.as_str(), h.model_id), ("loading", None));
    let loading = client
        .post(format!("{}/v1/complete", server.base))
        .json(&figure_one("s", None))
        .send()
        .await
        .unwrap();
    assert_eq!(loading.status(), StatusCode::SERVICE_UNAVAILABLE);

    let a = tempfile::tempdir().unwrap();
    bundle(true, 3).save(a.path()).unwrap();
    wlac_service::load_in_background(state.clone(), a.path().to_path_buf(), None)
        .await
        .unwrap()
        .unwrap();
    let h = health().await;
    assert_eq!(h.status, "ready");
    assert_eq!(h.model_id.as_deref(), Some(file_hash(ModelBundle::model_path(a.path())).unwrap().as_str()));

    let b = tempfile::tempdir().unwrap();
    state.install(snapshot(b.path(), true, 4));
    assert_eq!(health().await.model_id.unwrap(), file_hash(ModelBundle::model_path(b.path())).unwrap());
}

#[tokio::test]
async fn concurrent_identical_requests_agree() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(Arc::new(AppState::with_snapshot(snapshot(dir.path(), true, 5)))).await;
    let client = reqwest::Client::new();
    let url = format!("{}/v1/complete", server.base);
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let (client, url) = (client.clone(), url.clone());
            tokio::spawn(async move {
                let r: CompleteResponse = client.post(url).json(&figure_one("s", None)).send().await.unwrap().json().await.unwrap();
                r.candidates.into_iter().map(|c| (c.word, c.score.to_bits())).collect::<Vec<_>>()
            })
        })
        .collect();
    let mut results = Vec::new();
    for t in tasks {
        results.push(t.await.unwrap());
    }
    assert!(results.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn cors_allows_listed_origin_only() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(Arc::new(AppState::with_snapshot(snapshot(dir.path(), true, 1)))).await;
    let client = reqwest::Client::new();
    let get = |origin: &'static str| {
        client.get(format!("{}/v1/health", server.base)).header("origin", origin).send()
    };
    let ok = get("http://localhost:3000").await.unwrap();
    assert_eq!(ok.headers()["access-control-allow-origin"], "http://localhost:3000");
    let other = get("http://evil.example").await.unwrap();
    assert!(other.headers().get("access-control-allow-origin").is_none());
}

#[tokio::test]
async fn shutdown_drains_in_flight_requests() {
    // An untrained desk-scale model rarely emits <eos>, so translation runs to
    // the length limit and is still in flight when shutdown starts.
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(true, 1);
    let config = ModelConfig::desk_scale(Arch::Aioe, b.codec.vocab.len(), 0);
    ModelBundle::new(JointModel::new(config, 1, true).unwrap(), b.codec).save(dir.path()).unwrap();
    let mut server = start(Arc::new(AppState::with_snapshot(Snapshot::load(dir.path(), None).unwrap()))).await;
    let client = reqwest::Client::new();
    let pending = tokio::spawn(client.post(format!("{}/v1/translate", server.base)).json(&figure_one("s", None)).send());
    tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    server.stop.take().unwrap().send(()).unwrap();
    let resp = pending.await.unwrap().unwrap();
    assert!(resp.status().is_success());
    server.done.await.unwrap().unwrap();
    assert!(client.get(format!("{}/v1/health", server.base)).send().await.is_err());
}

#[tokio::test]
async fn port_in_use_is_a_startup_error() {
    let held = wlac_service::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    assert!(wlac_service::bind(held.local_addr().unwrap()).await.is_err());
}
