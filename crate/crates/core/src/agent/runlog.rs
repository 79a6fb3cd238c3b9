//! Run configuration and the append-only run log.
//!
//! Everything that happens in a run is an [`RunEvent`]. The [`RunLog`] is a
//! fold over the event sequence, so a log loaded from disk and a log built
//! live are the same value.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::backend::{EndpointConfig, Playlist, RetryPolicy};
use super::message::{Message, ToolCall, Usage};
use crate::tools::{ToolError, ToolRequest, ToolResult, Variant};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Scripted { playlist: Playlist },
    Endpoint(EndpointConfig),
}

fn default_repairs() -> usize {
    3
}

fn default_pool() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    /// Number of design iterations the agent may spend.
    pub budget: usize,
    pub prompt: String,
    pub backend: BackendConfig,
    #[serde(default)]
    pub master_seed: u64,
    /// Failed tool calls allowed after the first attempt before the failure
    /// consumes a budget slot.
    #[serde(default = "default_repairs")]
    pub max_repairs: usize,
    /// Upper bound on the characters of history sent to the model. Older
    /// turns are dropped (and an event logged) when it is exceeded.
    #[serde(default)]
    pub context_budget_chars: Option<usize>,
    #[serde(default = "default_pool")]
    pub quanv_pool_len: usize,
    /// How long the loop waits for steering after each tool result.
    #[serde(default)]
    pub steering_wait_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl RunConfig {
    pub fn scripted(variant: Variant, budget: usize, prompt: &str, playlist: Playlist) -> Self {
        RunConfig {
            variant,
            budget,
            prompt: prompt.to_string(),
            backend: BackendConfig::Scripted { playlist },
            master_seed: 0,
            max_repairs: default_repairs(),
            context_budget_chars: None,
            quanv_pool_len: default_pool(),
            steering_wait_ms: 0,
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.budget == 0 {
            return Err("budget must be at least 1".into());
        }
        if self.prompt.trim().is_empty() {
            return Err("prompt must not be empty".into());
        }
        if self.quanv_pool_len == 0 {
            return Err("quanv_pool_len must be at least 1".into());
        }
        if self.retry.attempts == 0 {
            return Err("retry.attempts must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    WaitingSteering,
    AgentStopped,
    BudgetExhausted,
    Aborted,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::AgentStopped | RunStatus::BudgetExhausted | RunStatus::Aborted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Result(ToolResult),
    Error(ToolError),
}

impl Outcome {
    pub fn result(&self) -> Option<&ToolResult> {
        match self {
            Outcome::Result(r) => Some(r),
            Outcome::Error(_) => None,
        }
    }
}

/// One tool execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Position among all tool executions, from 1.
    pub index: usize,
    /// Design iteration (budget slot) this execution belongs to, from 1.
    pub design_iteration: usize,
    /// 0 for the first try of a design iteration, then 1, 2, ... for repairs.
    pub repair_attempt: usize,
    pub rationale: String,
    pub tool_call: ToolCall,
    /// `None` when the arguments could not be turned into a request.
    pub request: Option<ToolRequest>,
    pub outcome: Outcome,
    pub started_at: f64,
    pub finished_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringEvent {
    pub text: String,
    /// Number of iteration records that existed when the message was delivered.
    pub after_iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct RunSummary {
    pub run_id: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub variant: Variant,
    pub prompt_version: String,
    pub iterations: usize,
    pub successful: usize,
    pub best_iteration: Option<usize>,
    pub best_test_RMSE: Option<f64>,
    pub usage: Usage,
    pub started_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunEvent {
    Started { run_id: String, config: Box<RunConfig>, prompt_version: String },
    Message { message: Message },
    Iteration { record: Box<IterationRecord> },
    Steering { steering: SteeringEvent },
    ContextTruncated { dropped_messages: usize, visible_messages: usize },
    Status { status: RunStatus, #[serde(default, skip_serializing_if = "Option::is_none")] reason: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub index: u64,
    pub time: f64,
    #[serde(flatten)]
    pub event: RunEvent,
}

#[derive(Debug, thiserror::Error)]
pub enum RunLogError {
    #[error("run log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("run log line {line}: {message}")]
    Format { line: usize, message: String },
}

pub fn now_secs() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub run_id: String,
    pub config: RunConfig,
    pub prompt_version: String,
    pub started_at: f64,
    pub messages: Vec<Message>,
    pub iterations: Vec<IterationRecord>,
    pub steering: Vec<SteeringEvent>,
    pub truncations: usize,
    pub status: RunStatus,
    pub reason: Option<String>,
    pub usage: Usage,
    pub events: Vec<LoggedEvent>,
}

impl RunLog {
    /// Rebuilds a log from its event sequence. The first event must be
    /// `Started` and indices must be contiguous from 0.
    pub fn from_events(events: Vec<LoggedEvent>) -> Result<Self, RunLogError> {
        let mut it = events.into_iter();
        let first = it.next().ok_or(RunLogError::Format { line: 1, message: "empty event log".into() })?;
        let RunEvent::Started { run_id, config, prompt_version } = first.event.clone() else {
            return Err(RunLogError::Format { line: 1, message: "first event must be `started`".into() });
        };
        let mut log = RunLog {
            run_id,
            config: *config,
            prompt_version,
            started_at: first.time,
            messages: Vec::new(),
            iterations: Vec::new(),
            steering: Vec::new(),
            truncations: 0,
            status: RunStatus::Running,
            reason: None,
            usage: Usage::default(),
            events: vec![first],
        };
        for ev in it {
            if ev.index != log.events.len() as u64 {
                return Err(RunLogError::Format {
                    line: log.events.len() + 1,
                    message: format!("expected event index {}, found {}", log.events.len(), ev.index),
                });
            }
            log.apply(ev);
        }
        Ok(log)
    }

    pub fn apply(&mut self, ev: LoggedEvent) {
        match &ev.event {
            RunEvent::Started { .. } => {}
            RunEvent::Message { message } => {
                if let Some(u) = message.usage {
                    self.usage.add(u);
                }
                self.messages.push(message.clone());
            }
            RunEvent::Iteration { record } => self.iterations.push((**record).clone()),
            RunEvent::Steering { steering } => self.steering.push(steering.clone()),
            RunEvent::ContextTruncated { .. } => self.truncations += 1,
            RunEvent::Status { status, reason } => {
                self.status = *status;
                self.reason = reason.clone();
            }
        }
        self.events.push(ev);
    }

    /// Best successful iteration by test RMSE (earliest on ties).
    pub fn best(&self) -> Option<(usize, f64)> {
        self.iterations
            .iter()
            .filter_map(|r| r.outcome.result().map(|res| (r.index, res.test_RMSE)))
            .fold(None, |best, (i, v)| match best {
                Some((_, b)) if b <= v => best,
                _ => Some((i, v)),
            })
    }

    pub fn summary(&self) -> RunSummary {
        let best = self.best();
        RunSummary {
            run_id: self.run_id.clone(),
            status: self.status,
            reason: self.reason.clone(),
            variant: self.config.variant,
            prompt_version: self.prompt_version.clone(),
            iterations: self.iterations.len(),
            successful: self.iterations.iter().filter(|r| r.outcome.result().is_some()).count(),
            best_iteration: best.map(|b| b.0),
            best_test_RMSE: best.map(|b| b.1),
            usage: self.usage,
            started_at: self.started_at,
        }
    }

    pub fn load(dir: &Path) -> Result<Self, RunLogError> {
        Self::from_events(read_events(&dir.join(EVENTS_FILE))?)
    }

    /// One row per iteration record: the data behind RMSE-vs-iteration and
    /// RMSE-vs-parameter-count plots.
    pub fn trajectory_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "iteration",
            "design_iteration",
            "repair_attempt",
            "status",
            "test_RMSE",
            "n_trainable_params_VQC",
            "n_trainable_params_total",
            "n_gates_in_VQC",
            "circuit_depth",
            "steering_before",
        ])
        .expect("in-memory write");
        for r in &self.iterations {
            let steered = self.steering.iter().any(|s| s.after_iteration + 1 == r.index);
            let mut row = vec![r.index.to_string(), r.design_iteration.to_string(), r.repair_attempt.to_string()];
            match &r.outcome {
                Outcome::Result(res) => row.extend([
                    "ok".to_string(),
                    format!("{:?}", res.test_RMSE),
                    res.n_trainable_params_VQC.to_string(),
                    res.n_trainable_params_total.to_string(),
                    res.n_gates_in_VQC.to_string(),
                    res.circuit_depth.to_string(),
                ]),
                Outcome::Error(e) => {
                    row.push(format!("error:{}", e.phase));
                    row.extend(std::iter::repeat_n(String::new(), 5));
                }
            }
            row.push(steered.to_string());
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

pub fn read_events(path: &Path) -> Result<Vec<LoggedEvent>, RunLogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| RunLogError::Format { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

pub type Listener = Box<dyn FnMut(&LoggedEvent) + Send>;

/// Single writer of a run log: stamps events, folds them into the log,
/// appends them to disk and notifies a listener.
pub struct RunRecorder {
    log: RunLog,
    dir: Option<PathBuf>,
    file: Option<File>,
    listener: Option<Listener>,
}

impl RunRecorder {
    pub fn start(
        run_id: &str,
        config: RunConfig,
        prompt_version: &str,
        dir: Option<&Path>,
        listener: Option<Listener>,
    ) -> Result<Self, RunLogError> {
        let first = LoggedEvent {
            index: 0,
            time: now_secs(),
            event: RunEvent::Started {
                run_id: run_id.to_string(),
                config: Box::new(config),
                prompt_version: prompt_version.to_string(),
            },
        };
        let file = match dir {
            Some(d) => {
                fs::create_dir_all(d)?;
                Some(OpenOptions::new().create(true).append(true).open(d.join(EVENTS_FILE))?)
            }
            None => None,
        };
        let mut rec = RunRecorder {
            log: RunLog::from_events(vec![first.clone()]).expect("started event"),
            dir: dir.map(Path::to_path_buf),
            file,
            listener,
        };
        rec.write(&first)?;
        rec.write_summary()?;
        Ok(rec)
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn into_log(self) -> RunLog {
        self.log
    }

    fn write(&mut self, ev: &LoggedEvent) -> Result<(), RunLogError> {
        if let Some(f) = &mut self.file {
            let mut line = serde_json::to_string(ev).map_err(|e| RunLogError::Format { line: 0, message: e.to_string() })?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        if let Some(l) = &mut self.listener {
            l(ev);
        }
        Ok(())
    }

    fn write_summary(&self) -> Result<(), RunLogError> {
        if let Some(d) = &self.dir {
            let text = serde_json::to_string_pretty(&self.log.summary()).expect("summary serializes");
            let tmp = d.join(format!("{SUMMARY_FILE}.tmp"));
            fs::write(&tmp, text)?;
            fs::rename(tmp, d.join(SUMMARY_FILE))?;
        }
        Ok(())
    }

    pub fn emit(&mut self, event: RunEvent) -> Result<(), RunLogError> {
        let is_summary_change = matches!(event, RunEvent::Status { .. } | RunEvent::Iteration { .. });
        let ev = LoggedEvent { index: self.log.events.len() as u64, time: now_secs(), event };
        self.log.apply(ev.clone());
        self.write(&ev)?;
        if is_summary_change {
            self.write_summary()?;
        }
        Ok(())
    }
}
