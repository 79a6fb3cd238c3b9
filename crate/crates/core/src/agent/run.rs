use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use super::backend::{llm_chat, BackendError, ChatBackend, HttpBackend, ScriptedBackend};
use super::message::{Message, Role, ToolCall};
use super::runlog::{
    now_secs, BackendConfig, IterationRecord, Listener, Outcome, RunConfig, RunEvent, RunLog, RunLogError,
    RunRecorder, RunStatus, SteeringEvent,
};
use super::schema::{system_prompt, tool_schemas, PROMPT_VERSION};
use crate::dataset::{generate_splits, DatasetSplit};
use crate::tools::{execute_tool_request, Phase, ToolError, ToolRequest, TrainSettings};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Log(#[from] RunLogError),
    #[error("steering message is empty")]
    EmptySteering,
    #[error("run has finished; steering is no longer accepted")]
    RunFinished,
}

const NUDGE: &str = "Please continue: call the training tool with your next circuit, or write a line \
starting with DONE: if you are finished.";

#[derive(Default)]
struct SteeringQueue {
    pending: VecDeque<(String, Option<String>)>,
    interrupted: bool,
    closed: bool,
}

/// Cross-thread input to a running loop. Messages sent while a tool is
/// executing stay queued and are delivered before the next assistant turn.
#[derive(Clone, Default)]
pub struct SteeringHandle {
    inner: Arc<(Mutex<SteeringQueue>, Condvar)>,
}

impl SteeringHandle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&self, text: &str, key: Option<String>) -> Result<(), AgentError> {
        if text.trim().is_empty() {
            return Err(AgentError::EmptySteering);
        }
        let (lock, cv) = &*self.inner;
        let mut q = lock.lock().expect("steering lock");
        if q.closed {
            return Err(AgentError::RunFinished);
        }
        q.pending.push_back((text.to_string(), key));
        cv.notify_all();
        Ok(())
    }

    pub fn interrupt(&self) {
        let (lock, cv) = &*self.inner;
        lock.lock().expect("steering lock").interrupted = true;
        cv.notify_all();
    }

    pub fn is_interrupted(&self) -> bool {
        self.inner.0.lock().expect("steering lock").interrupted
    }

    pub fn is_closed(&self) -> bool {
        self.inner.0.lock().expect("steering lock").closed
    }

    fn drain(&self) -> Vec<(String, Option<String>)> {
        self.inner.0.lock().expect("steering lock").pending.drain(..).collect()
    }

    /// Blocks until a message or interrupt arrives or `timeout` passes.
    fn wait(&self, timeout: Duration) {
        let (lock, cv) = &*self.inner;
        let deadline = Instant::now() + timeout;
        let mut q = lock.lock().expect("steering lock");
        while q.pending.is_empty() && !q.interrupted {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            q = cv.wait_timeout(q, deadline - now).expect("steering lock").0;
        }
    }

    fn close(&self) {
        let (lock, cv) = &*self.inner;
        lock.lock().expect("steering lock").closed = true;
        cv.notify_all();
    }
}

pub fn inject_user_steering(handle: &SteeringHandle, text: &str) -> Result<(), AgentError> {
    handle.send(text, None)
}

#[derive(Default)]
pub struct LoopOptions {
    pub run_id: Option<String>,
    /// Directory receiving the event log and summary; nothing is written
    /// when absent.
    pub dir: Option<PathBuf>,
    pub steering: SteeringHandle,
    pub listener: Option<Listener>,
}

pub fn backend_for(config: &RunConfig) -> Result<Box<dyn ChatBackend>, AgentError> {
    Ok(match &config.backend {
        BackendConfig::Scripted { playlist } => Box::new(ScriptedBackend::new(playlist.clone())),
        BackendConfig::Endpoint(ep) => Box::new(HttpBackend::new(ep.clone())?),
    })
}

pub fn train_settings(config: &RunConfig) -> TrainSettings {
    TrainSettings { quanv_pool_len: config.quanv_pool_len, ..TrainSettings::with_seed(config.master_seed) }
}

/// Turns one tool call into a request and runs it.
pub fn execute_call(call: &ToolCall, config: &RunConfig, splits: &DatasetSplit) -> (Option<ToolRequest>, Outcome) {
    let parsed = serde_json::from_str::<serde_json::Value>(&call.arguments)
        .map_err(|e| ToolError::new(Phase::Parse, format!("tool arguments are not a valid JSON document: {e}")))
        .and_then(|args| ToolRequest::from_tool_call(&call.name, &args));
    let req = match parsed {
        Ok(r) => r,
        Err(e) => return (None, Outcome::Error(e)),
    };
    if req.variant != config.variant {
        let e = ToolError::new(
            Phase::Validate,
            format!("{} is not available in this run; use {}", call.name, config.variant.tool_name()),
        );
        return (Some(req), Outcome::Error(e));
    }
    let outcome = match execute_tool_request(&req, splits, &train_settings(config)) {
        Ok(r) => Outcome::Result(r),
        Err(e) => Outcome::Error(e),
    };
    (Some(req), outcome)
}

fn tool_message_text(outcome: &Outcome) -> String {
    match outcome {
        Outcome::Result(r) => serde_json::to_string(r).expect("result serializes"),
        Outcome::Error(e) => e.agent_text(),
    }
}

/// Start of the visible window: messages before it (other than the system
/// message and the opening prompt) are dropped to respect the budget.
fn visible_start(messages: &[Message], budget: Option<usize>) -> usize {
    let head = messages.len().min(2);
    let Some(budget) = budget else { return head };
    let mut total: usize = messages.iter().map(Message::char_len).sum();
    let mut start = head;
    while total > budget && start + 1 < messages.len() {
        total -= messages[start].char_len();
        start += 1;
    }
    while start < messages.len() && messages[start].role == Role::Tool {
        start += 1;
    }
    start
}

struct Driver<'a> {
    config: RunConfig,
    rec: RunRecorder,
    backend: Box<dyn ChatBackend>,
    steering: SteeringHandle,
    splits: &'a DatasetSplit,
    dropped: usize,
}

impl Driver<'_> {
    fn deliver_steering(&mut self) -> Result<bool, AgentError> {
        let pending = self.steering.drain();
        let any = !pending.is_empty();
        for (text, key) in pending {
            let after_iteration = self.rec.log().iterations.len();
            self.rec.emit(RunEvent::Steering { steering: SteeringEvent { text: text.clone(), after_iteration, key } })?;
            self.rec.emit(RunEvent::Message { message: Message::user(text) })?;
        }
        Ok(any)
    }

    fn visible_history(&mut self) -> Result<Vec<Message>, AgentError> {
        let msgs = &self.rec.log().messages;
        let start = visible_start(msgs, self.config.context_budget_chars);
        let head = msgs.len().min(2);
        let dropped = start - head;
        let mut visible: Vec<Message> = msgs[..head].to_vec();
        visible.extend_from_slice(&msgs[start..]);
        if dropped != self.dropped {
            self.dropped = dropped;
            let visible_messages = visible.len();
            self.rec.emit(RunEvent::ContextTruncated { dropped_messages: dropped, visible_messages })?;
        }
        Ok(visible)
    }

    fn status(&mut self, status: RunStatus, reason: Option<String>) -> Result<(), AgentError> {
        self.rec.emit(RunEvent::Status { status, reason })?;
        Ok(())
    }

    fn run(&mut self) -> Result<(), AgentError> {
        let tools = tool_schemas(self.config.variant);
        self.rec.emit(RunEvent::Message { message: Message::system(system_prompt(self.config.variant)) })?;
        self.rec.emit(RunEvent::Message { message: Message::user(self.config.prompt.clone()) })?;
        let (mut design, mut repair, mut idle_turns) = (1usize, 0usize, 0usize);
        loop {
            if self.steering.is_interrupted() {
                return self.status(RunStatus::Aborted, Some("interrupted".into()));
            }
            self.deliver_steering()?;
            let visible = self.visible_history()?;
            let reply = match llm_chat(self.backend.as_mut(), &visible, &tools, self.config.retry) {
                Ok(m) => m,
                Err(e) => return self.status(RunStatus::Aborted, Some(e.to_string())),
            };
            let done = reply.signals_done();
            self.rec.emit(RunEvent::Message { message: reply.clone() })?;
            if reply.tool_calls.is_empty() {
                if done {
                    return self.status(RunStatus::AgentStopped, None);
                }
                idle_turns += 1;
                if idle_turns > self.config.max_repairs {
                    return self.status(RunStatus::AgentStopped, Some("assistant stopped calling tools".into()));
                }
                if !self.wait_for_steering()? {
                    self.rec.emit(RunEvent::Message { message: Message::user(NUDGE) })?;
                }
                continue;
            }
            idle_turns = 0;
            for call in &reply.tool_calls {
                if design > self.config.budget {
                    let text = "not executed: the iteration budget is used up";
                    self.rec.emit(RunEvent::Message { message: Message::tool(call.id.clone(), text) })?;
                    continue;
                }
                let started_at = now_secs();
                let (request, outcome) = execute_call(call, &self.config, self.splits);
                let record = IterationRecord {
                    index: self.rec.log().iterations.len() + 1,
                    design_iteration: design,
                    repair_attempt: repair,
                    rationale: reply.content.clone(),
                    tool_call: call.clone(),
                    request,
                    outcome,
                    started_at,
                    finished_at: now_secs(),
                };
                let text = tool_message_text(&record.outcome);
                let success = record.outcome.result().is_some();
                self.rec.emit(RunEvent::Message { message: Message::tool(call.id.clone(), text) })?;
                self.rec.emit(RunEvent::Iteration { record: Box::new(record) })?;
                if success || repair >= self.config.max_repairs {
                    design += 1;
                    repair = 0;
                } else {
                    repair += 1;
                }
            }
            if design > self.config.budget {
                return self.status(RunStatus::BudgetExhausted, None);
            }
            if done {
                return self.status(RunStatus::AgentStopped, None);
            }
            self.wait_for_steering()?;
        }
    }

    /// Steering window after a tool result. Returns whether a message arrived.
    fn wait_for_steering(&mut self) -> Result<bool, AgentError> {
        if self.config.steering_wait_ms == 0 {
            return Ok(false);
        }
        self.status(RunStatus::WaitingSteering, None)?;
        self.steering.wait(Duration::from_millis(self.config.steering_wait_ms));
        self.status(RunStatus::Running, None)?;
        self.deliver_steering()
    }
}

/// Runs the design loop with the backend named in the configuration.
pub fn run_agent_loop(config: RunConfig, options: LoopOptions) -> Result<RunLog, AgentError> {
    config.validate().map_err(AgentError::Config)?;
    let backend = backend_for(&config)?;
    run_agent_loop_with(config, backend, options)
}

/// Runs the design loop with an explicit backend. Backend failures end the
/// run with status `aborted`; the partial log is returned and persisted.
pub fn run_agent_loop_with(
    config: RunConfig,
    backend: Box<dyn ChatBackend>,
    options: LoopOptions,
) -> Result<RunLog, AgentError> {
    config.validate().map_err(AgentError::Config)?;
    let run_id = options.run_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    let rec = RunRecorder::start(&run_id, config.clone(), PROMPT_VERSION, options.dir.as_deref(), options.listener)?;
    let splits = generate_splits(config.master_seed);
    let mut driver = Driver { config, rec, backend, steering: options.steering.clone(), splits: &splits, dropped: 0 };
    let result = driver.run();
    options.steering.close();
    result?;
    Ok(driver.rec.into_log())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub checked: usize,
    /// Indices of records whose recomputed outcome differs from the log.
    pub mismatches: Vec<usize>,
}

/// Recomputes every logged tool execution from its tool call and the run's
/// seed and compares outcomes, ignoring wall time.
pub fn replay(log: &RunLog) -> ReplayReport {
    let splits = generate_splits(log.config.master_seed);
    let mut mismatches = Vec::new();
    for r in &log.iterations {
        let (request, outcome) = execute_call(&r.tool_call, &log.config, &splits);
        let same = request == r.request
            && match (&outcome, &r.outcome) {
                (Outcome::Result(a), Outcome::Result(b)) => a.same_metrics(b),
                (Outcome::Error(a), Outcome::Error(b)) => a == b,
                _ => false,
            };
        if !same {
            mismatches.push(r.index);
        }
    }
    ReplayReport { checked: log.iterations.len(), mismatches }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_steering_rejected() {
        let h = SteeringHandle::new();
        assert!(matches!(inject_user_steering(&h, "  "), Err(AgentError::EmptySteering)));
        h.close();
        assert!(matches!(inject_user_steering(&h, "x"), Err(AgentError::RunFinished)));
    }

    #[test]
    fn window_keeps_head_and_skips_orphan_tool_messages() {
        let mut msgs = vec![Message::system("s"), Message::user("p")];
        for i in 0..5 {
            let mut a = Message::assistant("a".repeat(10));
            a.tool_calls.push(ToolCall { id: format!("c{i}"), name: "T".into(), arguments: "{}".into() });
            msgs.push(a);
            msgs.push(Message::tool(format!("c{i}"), "r".repeat(10)));
        }
        assert_eq!(visible_start(&msgs, None), 2);
        let start = visible_start(&msgs, Some(40));
        assert!(start > 2);
        assert_ne!(msgs[start].role, Role::Tool);
    }
}
