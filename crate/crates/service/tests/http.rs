use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use vqclab_core::agent::{LoggedEvent, RunConfig, RunEvent, RunRecorder, RunStatus, PROMPT_VERSION};
use vqclab_service::http::{router, AppState};
use vqclab_service::registry::Registry;

const CIRCUIT: &str = include_str!("../../core/tests/fixtures/simple_iter1.json");

async fn start(dir: &Path, token: Option<&str>) -> String {
    let registry = Arc::new(Registry::open(dir).unwrap());
    let app = router(AppState { registry, token: token.map(str::to_string) });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

fn call(content: &str, epochs: usize) -> Value {
    json!({"content": content, "tool_call": {"name": "TrainCustomSimpleQNNTool", "arguments": {
        "VQC_code": CIRCUIT, "VQC_weights_shape": [5], "q_enc_size": 5, "q_out_size": 5, "epochs": epochs}}})
}

fn run_config(budget: usize, entries: Vec<Value>, wait_ms: u64) -> Value {
    json!({
        "variant": "simple",
        "budget": budget,
        "prompt": "design circuits",
        "backend": {"kind": "scripted", "playlist": {"entries": entries}},
        "master_seed": 3,
        "steering_wait_ms": wait_ms,
    })
}

async fn create(client: &reqwest::Client, base: &str, body: &Value) -> String {
    let resp = client.post(format!("{base}/runs")).json(body).send().await.unwrap();
    assert_eq!(resp.status(), 201);
    resp.json::<Value>().await.unwrap()["id"].as_str().unwrap().to_string()
}

async fn status(client: &reqwest::Client, base: &str, id: &str) -> String {
    let v: Value = client.get(format!("{base}/runs/{id}")).send().await.unwrap().json().await.unwrap();
    v["summary"]["status"].as_str().unwrap().to_string()
}

async fn wait_for(client: &reqwest::Client, base: &str, id: &str, want: &[&str]) -> String {
    for _ in 0..600 {
        let s = status(client, base, id).await;
        if want.contains(&s.as_str()) {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("run {id} never reached {want:?}");
}

/// (id, data) pairs from a finished SSE body.
fn parse_sse(body: &str) -> Vec<(u64, LoggedEvent)> {
    let mut out = Vec::new();
    for block in body.split("\n\n") {
        let mut id = None;
        let mut data = None;
        for line in block.lines() {
            if let Some(v) = line.strip_prefix("id: ") {
                id = v.parse().ok();
            } else if let Some(v) = line.strip_prefix("data: ") {
                data = Some(v.to_string());
            }
        }
        if let (Some(id), Some(data)) = (id, data) {
            out.push((id, serde_json::from_str(&data).unwrap()));
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread")]
async fn health_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(dir.path(), None).await;
    let client = reqwest::Client::new();
    let h: Value = client.get(format!("{base}/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(h["status"], "ok");
    let s: Value = client.get(format!("{base}/schema")).send().await.unwrap().json().await.unwrap();
    assert_eq!(s["tools"].as_array().unwrap().len(), 3);
    assert_eq!(s["prompt_version"], PROMPT_VERSION);
}

#[tokio::test(flavor = "multi_thread")]
async fn scripted_run_streams_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(dir.path(), None).await;
    let client = reqwest::Client::new();
    let id = create(&client, &base, &run_config(5, vec![call("a", 1), call("b", 1), json!({"content": "DONE: ok"})], 0)).await;
    // subscribe immediately: replay plus live tail until the run ends
    let live = client.get(format!("{base}/runs/{id}/events")).send().await.unwrap().text().await.unwrap();
    assert_eq!(wait_for(&client, &base, &id, &["agent_stopped"]).await, "agent_stopped");
    let live = parse_sse(&live);
    let ids: Vec<u64> = live.iter().map(|(i, _)| *i).collect();
    assert_eq!(ids, (0..ids.len() as u64).collect::<Vec<_>>());
    assert!(matches!(live.last().unwrap().1.event, RunEvent::Status { status: RunStatus::AgentStopped, .. }));

    // a late subscriber sees the same sequence, matching the file on disk
    let late = parse_sse(&client.get(format!("{base}/runs/{id}/events")).send().await.unwrap().text().await.unwrap());
    assert_eq!(late.len(), live.len());
    let on_disk = vqclab_core::agent::read_events(&dir.path().join(&id).join("events.jsonl")).unwrap();
    assert_eq!(on_disk, late.iter().map(|(_, e)| e.clone()).collect::<Vec<_>>());

    // resume after event 3
    let resumed = client
        .get(format!("{base}/runs/{id}/events"))
        .header("Last-Event-ID", "3")
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert_eq!(parse_sse(&resumed).first().unwrap().0, 4);

    let list: Value = client.get(format!("{base}/runs")).send().await.unwrap().json().await.unwrap();
    assert_eq!(list[0]["id"], id.as_str());
    assert_eq!(list[0]["summary"]["iterations"], 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn steering_is_idempotent_and_rejected_after_finish() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(dir.path(), None).await;
    let client = reqwest::Client::new();
    let mut steered = call("retraining", 3);
    steered["after_user"] = json!("3 epochs");
    let id = create(&client, &base, &run_config(2, vec![call("a", 1), steered, call("c", 1)], 30_000)).await;
    wait_for(&client, &base, &id, &["waiting_steering"]).await;
    let url = format!("{base}/runs/{id}/message");
    let body = json!({"text": "train it again with 3 epochs", "idempotency_key": "k-1"});
    let first: Value = client.post(&url).json(&body).send().await.unwrap().json().await.unwrap();
    let second: Value = client.post(&url).json(&body).send().await.unwrap().json().await.unwrap();
    assert_eq!((first["duplicate"].as_bool(), second["duplicate"].as_bool()), (Some(false), Some(true)));
    let empty = client.post(&url).json(&json!({"text": " "})).send().await.unwrap();
    assert_eq!(empty.status(), 400);

    wait_for(&client, &base, &id, &["budget_exhausted"]).await;
    let from = parse_sse(&client.get(format!("{base}/runs/{id}/events?from=2")).send().await.unwrap().text().await.unwrap());
    assert_eq!(from.first().unwrap().0, 2);

    let log = vqclab_core::agent::RunLog::load(&dir.path().join(&id)).unwrap();
    assert_eq!(log.steering.len(), 1);
    assert_eq!(log.iterations[1].request.as_ref().unwrap().epochs, 3);

    let late = client.post(&url).json(&json!({"text": "more"})).send().await.unwrap();
    assert_eq!(late.status(), 409);
    let late = client.post(format!("{base}/runs/{id}/interrupt")).send().await.unwrap();
    assert_eq!(late.status(), 409);
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_lists_prior_runs_with_terminal_status() {
    let dir = tempfile::tempdir().unwrap();
    {
        let base = start(dir.path(), None).await;
        let client = reqwest::Client::new();
        let id = create(&client, &base, &run_config(1, vec![call("a", 1)], 0)).await;
        wait_for(&client, &base, &id, &["budget_exhausted"]).await;
    }
    // a run whose process died mid-way: started, never finished
    let cfg: RunConfig = serde_json::from_value(run_config(1, vec![], 0)).unwrap();
    let rec = RunRecorder::start("crashed", cfg, PROMPT_VERSION, Some(&dir.path().join("crashed")), None).unwrap();
    drop(rec);

    let base = start(dir.path(), None).await;
    let client = reqwest::Client::new();
    let list: Vec<Value> = client.get(format!("{base}/runs")).send().await.unwrap().json().await.unwrap();
    let mut statuses: Vec<String> = list.iter().map(|h| h["status"].as_str().unwrap().to_string()).collect();
    statuses.sort();
    assert_eq!(statuses, vec!["aborted", "budget_exhausted"]);
    let again = Registry::open(dir.path()).unwrap();
    assert_eq!(again.get("crashed").unwrap().status(), RunStatus::Aborted);
    assert_eq!(again.get("crashed").unwrap().events_from(0).len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn bearer_token_guards_everything_but_health() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(dir.path(), Some("s3cret")).await;
    let client = reqwest::Client::new();
    assert_eq!(client.get(format!("{base}/health")).send().await.unwrap().status(), 200);
    assert_eq!(client.get(format!("{base}/runs")).send().await.unwrap().status(), 401);
    let ok = client.get(format!("{base}/runs")).bearer_auth("s3cret").send().await.unwrap();
    assert_eq!(ok.status(), 200);
    let bad = client.post(format!("{base}/runs")).bearer_auth("s3cret").json(&json!({"budget": 0})).send().await.unwrap();
    assert_eq!(bad.status(), 400);
    assert_eq!(client.get(format!("{base}/runs/nope")).bearer_auth("s3cret").send().await.unwrap().status(), 404);
}
