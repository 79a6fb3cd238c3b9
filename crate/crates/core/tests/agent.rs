mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use common::fixture;
use serde_json::{json, Value};
use vqclab_core::agent::{
    llm_chat, replay, run_agent_loop, run_agent_loop_with, BackendConfig, BackendError, ChatBackend, EndpointConfig,
    HttpBackend, LoopOptions, Message, Outcome, Playlist, RetryPolicy, Role, RunConfig, RunEvent, RunLog, RunStatus,
    SteeringHandle, ToolSchema,
};
use vqclab_core::tools::{Phase, Variant};

const TOOL: &str = "TrainCustomSimpleQNNTool";

fn args(epochs: usize) -> Value {
    json!({
        "VQC_code": fixture("simple_iter1.json"),
        "VQC_weights_shape": [5],
        "q_enc_size": 5,
        "q_out_size": 5,
        "epochs": epochs,
    })
}

fn call(content: &str, arguments: Value) -> Value {
    json!({"content": content, "tool_call": {"name": TOOL, "arguments": arguments}})
}

fn broken_args() -> Value {
    let mut a = args(1);
    a["q_out_size"] = json!(4);
    a
}

fn playlist(entries: Vec<Value>) -> Playlist {
    serde_json::from_value(json!({ "entries": entries })).unwrap()
}

fn config(budget: usize, entries: Vec<Value>) -> RunConfig {
    RunConfig::scripted(Variant::Simple, budget, "design circuits", playlist(entries))
}

#[test]
fn three_valid_requests() {
    let entries = vec![call("first", args(1)), call("second", args(2)), call("third", args(1))];
    let log = run_agent_loop(config(3, entries), LoopOptions::default()).unwrap();
    assert_eq!(log.status, RunStatus::BudgetExhausted);
    assert_eq!(log.iterations.len(), 3);
    assert_eq!(log.iterations.iter().map(|r| r.index).collect::<Vec<_>>(), vec![1, 2, 3]);
    let min = log
        .iterations
        .iter()
        .map(|r| r.outcome.result().unwrap().test_RMSE)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(log.summary().best_test_RMSE, Some(min));
    // identical requests under the same seed give identical metrics
    let (a, c) = (log.iterations[0].outcome.result().unwrap(), log.iterations[2].outcome.result().unwrap());
    assert!(a.same_metrics(c));
}

#[test]
fn invalid_then_corrected() {
    let entries = vec![call("oops", broken_args()), call("fixed", args(1))];
    let log = run_agent_loop(config(1, entries), LoopOptions::default()).unwrap();
    assert_eq!(log.status, RunStatus::BudgetExhausted);
    assert_eq!(log.iterations.len(), 2);
    let Outcome::Error(e) = &log.iterations[0].outcome else { panic!("expected an error") };
    assert_eq!(e.phase, Phase::Validate);
    assert!(log.iterations[1].outcome.result().is_some());
    assert_eq!((log.iterations[1].design_iteration, log.iterations[1].repair_attempt), (1, 1));
    // the error text reached the transcript as a tool message
    let tool_msgs: Vec<&Message> = log.messages.iter().filter(|m| m.role == Role::Tool).collect();
    assert_eq!(tool_msgs[0].content, e.agent_text());
}

#[test]
fn repair_cap_consumes_the_slot() {
    let mut entries: Vec<Value> = (0..4).map(|_| call("bad", broken_args())).collect();
    entries.push(call("good", args(1)));
    let log = run_agent_loop(config(2, entries), LoopOptions::default()).unwrap();
    let slots: Vec<(usize, usize)> = log.iterations.iter().map(|r| (r.design_iteration, r.repair_attempt)).collect();
    assert_eq!(slots, vec![(1, 0), (1, 1), (1, 2), (1, 3), (2, 0)]);
    assert_eq!(log.status, RunStatus::BudgetExhausted);
}

#[test]
fn early_completion() {
    let mut entries: Vec<Value> = (0..3).map(|_| call("try", args(1))).collect();
    entries.push(json!({"content": "That is enough.\nDONE: best was iteration 1"}));
    let log = run_agent_loop(config(10, entries), LoopOptions::default()).unwrap();
    assert_eq!(log.iterations.len(), 3);
    assert_eq!(log.status, RunStatus::AgentStopped);
}

#[test]
fn malformed_arguments_become_parse_errors() {
    let entries = vec![call("garbled", json!("{\"VQC_code\": ")), call("ok", args(1))];
    let log = run_agent_loop(config(1, entries), LoopOptions::default()).unwrap();
    let Outcome::Error(e) = &log.iterations[0].outcome else { panic!("expected an error") };
    assert_eq!(e.phase, Phase::Parse);
    assert!(log.iterations[0].request.is_none());
    assert!(log.iterations[1].outcome.result().is_some());
}

#[test]
fn steering_redirects_next_request() {
    let entries = vec![
        call("first", args(1)),
        call("retraining longer", args(20)),
        call("unsteered", args(1)),
    ];
    let mut entries = entries;
    entries[1]["after_user"] = json!("20 epochs");
    let steering = SteeringHandle::new();
    let handle = steering.clone();
    let options = LoopOptions {
        steering,
        listener: Some(Box::new(move |ev| {
            if let RunEvent::Iteration { record } = &ev.event {
                if record.index == 1 {
                    handle.send("retrain the best model for 20 epochs", Some("k1".into())).unwrap();
                }
            }
        })),
        ..LoopOptions::default()
    };
    let log = run_agent_loop(config(2, entries), options).unwrap();
    assert_eq!(log.steering.len(), 1);
    assert_eq!(log.steering[0].after_iteration, 1);
    assert_eq!(log.iterations[1].request.as_ref().unwrap().epochs, 20);
    assert_eq!(log.iterations[1].outcome.result().unwrap().val_RMSE_history.len(), 20);
    // the steering message precedes the assistant turn that reacted to it
    let user_pos = log.messages.iter().position(|m| m.role == Role::User && m.content.contains("20 epochs")).unwrap();
    let reply_pos = log.messages.iter().position(|m| m.content == "retraining longer").unwrap();
    assert!(user_pos < reply_pos);
}

#[test]
fn persisted_log_replays_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let entries = vec![call("a", broken_args()), call("b", args(2)), call("c", args(1))];
    let options = LoopOptions { run_id: Some("r1".into()), dir: Some(dir.path().join("r1")), ..LoopOptions::default() };
    let live = run_agent_loop(config(2, entries), options).unwrap();
    let loaded = RunLog::load(&dir.path().join("r1")).unwrap();
    assert_eq!(loaded, live);
    let report = replay(&loaded);
    assert_eq!(report.checked, 3);
    assert!(report.mismatches.is_empty(), "{:?}", report.mismatches);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r1/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "budget_exhausted");
    let csv = loaded.trajectory_csv();
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(csv.lines().nth(1).unwrap().contains("error:validate"));
}

#[test]
fn context_budget_truncation_is_logged() {
    let entries: Vec<Value> = (0..3).map(|_| call("try", args(1))).collect();
    let without = run_agent_loop(config(3, entries.clone()), LoopOptions::default()).unwrap();
    assert_eq!(without.truncations, 0);
    let total: usize = without.messages.iter().map(Message::char_len).sum();
    let mut cfg = config(3, entries);
    cfg.context_budget_chars = Some(total * 3 / 4);
    let log = run_agent_loop(cfg, LoopOptions::default()).unwrap();
    assert!(log.truncations > 0);
    assert_eq!(log.iterations.len(), 3);
}

struct Recording {
    seen: Arc<Mutex<Vec<usize>>>,
    inner: vqclab_core::agent::ScriptedBackend,
}

impl ChatBackend for Recording {
    fn complete(&mut self, messages: &[Message], tools: &[ToolSchema]) -> Result<Message, BackendError> {
        self.seen.lock().unwrap().push(messages.len());
        self.inner.complete(messages, tools)
    }
}

#[test]
fn each_turn_sees_full_history() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let entries = vec![call("a", args(1)), call("b", args(1))];
    let backend = Recording { seen: seen.clone(), inner: vqclab_core::agent::ScriptedBackend::new(playlist(entries.clone())) };
    let log = run_agent_loop_with(config(2, entries), Box::new(backend), LoopOptions::default()).unwrap();
    // system + prompt, then + assistant + tool
    assert_eq!(*seen.lock().unwrap(), vec![2, 4]);
    assert_eq!(log.messages.len(), 6);
}

/// Serves the given (status, body) responses in order, one per connection,
/// and records the request bodies.
fn fake_endpoint(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let log = bodies.clone();
    thread::spawn(move || {
        for (status, body) in responses {
            let Ok((mut stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(String::from_utf8(buf).unwrap());
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1"), bodies)
}

fn endpoint(url: &str, env: &str) -> EndpointConfig {
    EndpointConfig { base_url: url.into(), model: "m".into(), api_key_env: env.into(), temperature: Some(0.2), timeout_secs: 10 }
}

const FAST: RetryPolicy = RetryPolicy { attempts: 3, base_delay_ms: 1 };

#[test]
fn http_backend_round_trip_and_retry() {
    let ok = json!({
        "choices": [{"message": {"role": "assistant", "content": "trying", "tool_calls": [
            {"id": "abc", "type": "function", "function": {"name": TOOL, "arguments": "{\"epochs\": 1}"}}]}}],
        "usage": {"prompt_tokens": 7, "completion_tokens": 2}
    });
    let (url, bodies) = fake_endpoint(vec![(500, "{}".into()), (200, ok.to_string())]);
    std::env::set_var("VQCLAB_TEST_KEY_OK", "secret-value");
    let mut backend = HttpBackend::new(endpoint(&url, "VQCLAB_TEST_KEY_OK")).unwrap();
    let tools = vec![vqclab_core::agent::tool_schema(Variant::Simple)];
    let m = llm_chat(&mut backend, &[Message::system("s"), Message::user("u")], &tools, FAST).unwrap();
    assert_eq!(m.tool_calls[0].id, "abc");
    assert_eq!(m.usage.unwrap().completion_tokens, 2);
    let sent: Value = serde_json::from_str(&bodies.lock().unwrap()[1]).unwrap();
    assert_eq!(sent["model"], "m");
    assert_eq!(sent["tools"][0]["function"]["name"], TOOL);
    assert_eq!(sent["messages"][1]["content"], "u");
}

#[test]
fn http_auth_failure_names_variable_only() {
    let (url, _) = fake_endpoint(vec![(401, "{\"error\": \"bad key\"}".into())]);
    std::env::set_var("VQCLAB_TEST_KEY_BAD", "hunter2-credential");
    let mut backend = HttpBackend::new(endpoint(&url, "VQCLAB_TEST_KEY_BAD")).unwrap();
    let err = llm_chat(&mut backend, &[Message::user("u")], &[], FAST).unwrap_err();
    let text = err.to_string();
    assert!(matches!(err, BackendError::Auth(_)));
    assert!(text.contains("VQCLAB_TEST_KEY_BAD"));
    assert!(!text.contains("hunter2"));

    let mut missing = HttpBackend::new(endpoint(&url, "VQCLAB_TEST_KEY_UNSET")).unwrap();
    let err = llm_chat(&mut missing, &[], &[], FAST).unwrap_err();
    assert!(err.to_string().contains("VQCLAB_TEST_KEY_UNSET"));
}

#[test]
fn unreachable_endpoint_aborts_with_partial_log() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    std::env::set_var("VQCLAB_TEST_KEY_DOWN", "k");
    let mut cfg = config(2, vec![]);
    cfg.backend = BackendConfig::Endpoint(endpoint(&format!("http://127.0.0.1:{port}/v1"), "VQCLAB_TEST_KEY_DOWN"));
    cfg.retry = FAST;
    let dir = tempfile::tempdir().unwrap();
    let log = run_agent_loop(cfg, LoopOptions { dir: Some(dir.path().to_path_buf()), ..LoopOptions::default() }).unwrap();
    assert_eq!(log.status, RunStatus::Aborted);
    assert!(log.reason.as_deref().unwrap().contains("transport"));
    assert_eq!(RunLog::load(dir.path()).unwrap().status, RunStatus::Aborted);
}

#[test]
fn interrupt_stops_the_run() {
    let steering = SteeringHandle::new();
    let handle = steering.clone();
    let options = LoopOptions {
        steering,
        listener: Some(Box::new(move |ev| {
            if matches!(ev.event, RunEvent::Iteration { .. }) {
                handle.interrupt();
            }
        })),
        ..LoopOptions::default()
    };
    let log = run_agent_loop(config(5, (0..5).map(|_| call("x", args(1))).collect()), options).unwrap();
    assert_eq!(log.status, RunStatus::Aborted);
    assert_eq!(log.iterations.len(), 1);
}

#[test]
fn scripted_runs_are_deterministic() {
    let entries = vec![call("a", args(1)), call("b", broken_args()), call("c", args(2))];
    let a = run_agent_loop(config(2, entries.clone()), LoopOptions::default()).unwrap();
    let b = run_agent_loop(config(2, entries), LoopOptions::default()).unwrap();
    assert_eq!(a.messages.len(), b.messages.len());
    for (x, y) in a.messages.iter().zip(&b.messages) {
        if x.role == Role::Tool {
            // tool results carry wall time
            let (vx, vy): (Value, Value) = (
                serde_json::from_str(&x.content).unwrap_or(Value::String(x.content.clone())),
                serde_json::from_str(&y.content).unwrap_or(Value::String(y.content.clone())),
            );
            let strip = |mut v: Value| {
                if let Some(o) = v.as_object_mut() {
                    o.remove("wall_time");
                }
                v
            };
            assert_eq!(strip(vx), strip(vy));
        } else {
            assert_eq!(x, y);
        }
    }
}
