//! In-memory index of runs backed by one directory per run.

use std::collections::{HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use tokio::sync::watch;
use vqclab_core::agent::{
    now_secs, read_events, run_agent_loop, LoggedEvent, LoopOptions, RunConfig, RunEvent, RunLog, RunStatus, RunSummary,
    SteeringHandle, EVENTS_FILE, SUMMARY_FILE,
};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("run `{0}` not found")]
    NotFound(String),
    #[error("run is {0:?}; it no longer accepts input")]
    Terminal(RunStatus),
    #[error("{0}")]
    BadRequest(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize)]
pub struct RunHandle {
    pub id: String,
    pub status: RunStatus,
    pub dir: PathBuf,
    pub summary: RunSummary,
}

pub struct RunEntry {
    pub id: String,
    pub dir: PathBuf,
    log: Mutex<Option<RunLog>>,
    steering: SteeringHandle,
    seen_keys: Mutex<HashSet<String>>,
    /// Number of events recorded so far; subscribers wait on changes.
    pub event_count: watch::Sender<usize>,
}

impl RunEntry {
    fn new(id: String, dir: PathBuf, log: Option<RunLog>) -> Arc<Self> {
        let count = log.as_ref().map_or(0, |l| l.events.len());
        Arc::new(RunEntry {
            id,
            dir,
            log: Mutex::new(log),
            steering: SteeringHandle::new(),
            seen_keys: Mutex::new(HashSet::new()),
            event_count: watch::channel(count).0,
        })
    }

    fn record(&self, ev: &LoggedEvent) {
        let mut guard = self.log.lock().expect("run lock");
        match guard.as_mut() {
            Some(log) => log.apply(ev.clone()),
            None => *guard = RunLog::from_events(vec![ev.clone()]).ok(),
        }
        let n = guard.as_ref().map_or(0, |l| l.events.len());
        drop(guard);
        self.event_count.send_replace(n);
    }

    pub fn status(&self) -> RunStatus {
        self.log.lock().expect("run lock").as_ref().map_or(RunStatus::Running, |l| l.status)
    }

    pub fn is_finished(&self) -> bool {
        self.steering.is_closed() || self.status().is_terminal()
    }

    pub fn events_from(&self, from: usize) -> Vec<LoggedEvent> {
        self.log
            .lock()
            .expect("run lock")
            .as_ref()
            .map(|l| l.events.iter().skip(from).cloned().collect())
            .unwrap_or_default()
    }

    pub fn snapshot(&self) -> Option<RunLog> {
        self.log.lock().expect("run lock").clone()
    }

    pub fn handle(&self) -> Option<RunHandle> {
        let guard = self.log.lock().expect("run lock");
        let log = guard.as_ref()?;
        Some(RunHandle { id: self.id.clone(), status: log.status, dir: self.dir.clone(), summary: log.summary() })
    }

    /// Queues a steering message. Returns `false` if the key was seen before.
    pub fn steer(&self, text: &str, key: Option<String>) -> Result<bool, ServiceError> {
        if self.is_finished() {
            return Err(ServiceError::Terminal(self.status()));
        }
        if text.trim().is_empty() {
            return Err(ServiceError::BadRequest("message text is empty".into()));
        }
        if let Some(k) = &key {
            if !self.seen_keys.lock().expect("keys lock").insert(k.clone()) {
                return Ok(false);
            }
        }
        self.steering.send(text, key).map_err(|_| ServiceError::Terminal(self.status()))?;
        Ok(true)
    }

    pub fn interrupt(&self) -> Result<(), ServiceError> {
        if self.is_finished() {
            return Err(ServiceError::Terminal(self.status()));
        }
        self.steering.interrupt();
        Ok(())
    }
}

pub struct Registry {
    pub data_dir: PathBuf,
    runs: Mutex<HashMap<String, Arc<RunEntry>>>,
}

/// Appends a terminal status to a run that was cut off by a restart.
fn close_interrupted_run(dir: &Path, mut log: RunLog) -> Result<RunLog, ServiceError> {
    let ev = LoggedEvent {
        index: log.events.len() as u64,
        time: now_secs(),
        event: RunEvent::Status { status: RunStatus::Aborted, reason: Some("service restarted".into()) },
    };
    let mut f = OpenOptions::new().append(true).open(dir.join(EVENTS_FILE))?;
    writeln!(f, "{}", serde_json::to_string(&ev).expect("event serializes"))?;
    log.apply(ev);
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&log.summary()).expect("summary serializes"))?;
    Ok(log)
}

impl Registry {
    /// Opens `data_dir`, indexing every run found there. Runs that were still
    /// active when the previous process stopped are marked aborted.
    pub fn open(data_dir: &Path) -> Result<Self, ServiceError> {
        fs::create_dir_all(data_dir)?;
        let probe = data_dir.join(".write-probe");
        fs::write(&probe, b"")?;
        fs::remove_file(probe)?;
        let mut runs = HashMap::new();
        for entry in fs::read_dir(data_dir)? {
            let dir = entry?.path();
            if !dir.join(EVENTS_FILE).is_file() {
                continue;
            }
            let Ok(events) = read_events(&dir.join(EVENTS_FILE)) else { continue };
            let Ok(mut log) = RunLog::from_events(events) else { continue };
            if !log.status.is_terminal() {
                log = close_interrupted_run(&dir, log)?;
            }
            let id = log.run_id.clone();
            let entry = RunEntry::new(id.clone(), dir, Some(log));
            runs.insert(id, entry);
        }
        Ok(Registry { data_dir: data_dir.to_path_buf(), runs: Mutex::new(runs) })
    }

    pub fn get(&self, id: &str) -> Result<Arc<RunEntry>, ServiceError> {
        self.runs.lock().expect("registry lock").get(id).cloned().ok_or_else(|| ServiceError::NotFound(id.into()))
    }

    pub fn list(&self) -> Vec<RunHandle> {
        let mut out: Vec<RunHandle> = self.runs.lock().expect("registry lock").values().filter_map(|e| e.handle()).collect();
        out.sort_by(|a, b| a.summary.started_at.total_cmp(&b.summary.started_at).then(a.id.cmp(&b.id)));
        out
    }

    /// Starts a run on its own worker thread and returns its id.
    pub fn create(&self, config: RunConfig) -> Result<String, ServiceError> {
        config.validate().map_err(ServiceError::BadRequest)?;
        let id = uuid::Uuid::new_v4().to_string();
        let dir = self.data_dir.join(&id);
        let entry = RunEntry::new(id.clone(), dir.clone(), None);
        self.runs.lock().expect("registry lock").insert(id.clone(), entry.clone());
        let worker = entry.clone();
        let (started_tx, started_rx) = std::sync::mpsc::channel();
        let options = LoopOptions {
            run_id: Some(id.clone()),
            dir: Some(dir),
            steering: entry.steering.clone(),
            listener: Some(Box::new(move |ev: &LoggedEvent| {
                worker.record(ev);
                let _ = started_tx.send(());
            })),
        };
        let finisher = entry.clone();
        std::thread::Builder::new().name(format!("run-{id}")).spawn(move || {
            if let Err(e) = run_agent_loop(config, options) {
                eprintln!("run {}: {e}", finisher.id);
            }
            // wake subscribers so they notice the end of the stream
            finisher.event_count.send_modify(|_| {});
        })?;
        // the run is visible to readers once its first event is recorded
        let _ = started_rx.recv();
        Ok(id)
    }
}
