use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vqclab_core::agent::{
    run_agent_loop, BackendConfig, EndpointConfig, LoopOptions, Playlist, RunConfig, RunLog,
};
use vqclab_core::circuit::{parse_circuit, render_ascii, unroll_and_validate};
use vqclab_core::dataset::{baseline_rmse, generate_splits, write_splits};
use vqclab_core::tools::{execute_tool_request, ToolRequest, TrainSettings, Variant};

use crate::http::{router, AppState};
use crate::registry::Registry;

#[derive(Parser)]
#[command(name = "vqclab", version, about = "Agent-driven design and training of variational quantum circuits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Write the train/val/test splits as CSV files.
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model from a circuit file and print the result document.
    Train(TrainArgs),
    /// Run the design loop headless.
    Agent(AgentArgs),
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long)]
        data_dir: PathBuf,
        /// Require this bearer token on every endpoint except /health.
        #[arg(long, env = "VQCLAB_TOKEN")]
        token: Option<String>,
    },
    /// Draw a circuit as ASCII art.
    Render {
        #[arg(long)]
        circuit: PathBuf,
        /// Number of inputs the circuit may read (defaults to 21).
        #[arg(long)]
        inputs: Option<usize>,
    },
    /// Emit the iteration trajectory of a run as CSV.
    Trajectory {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Arch {
    Simple,
    Quanv,
    Full,
}

impl From<Arch> for Variant {
    fn from(a: Arch) -> Self {
        match a {
            Arch::Simple => Variant::Simple,
            Arch::Quanv => Variant::Quanv,
            Arch::Full => Variant::FullQuantum,
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    arch: Arch,
    #[arg(long)]
    circuit: PathBuf,
    #[arg(long)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated; defaults to the document's weights_shape.
    #[arg(long, value_delimiter = ',')]
    weights_shape: Option<Vec<usize>>,
    #[arg(long)]
    q_enc_size: Option<usize>,
    #[arg(long)]
    q_out_size: Option<usize>,
    #[arg(long)]
    kernel_size: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    vqc_output_dim: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pool_len: usize,
}

#[derive(Args)]
pub struct AgentArgs {
    #[arg(long, value_enum)]
    arch: Arch,
    #[arg(long)]
    budget: usize,
    /// Playlist file for a scripted assistant.
    #[arg(long, conflicts_with = "endpoint")]
    scripted: Option<PathBuf>,
    /// Base URL of a chat-completions endpoint, e.g. https://host/v1.
    #[arg(long, requires = "model")]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, conflicts_with = "prompt_file")]
    prompt: Option<String>,
    #[arg(long)]
    prompt_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    max_repairs: usize,
    #[arg(long)]
    context_budget_chars: Option<usize>,
    /// Parent directory for the run directory.
    #[arg(long, default_value = "runs")]
    data_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Failed(String),
}

fn read(path: &PathBuf) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read { path: path.clone(), source })
}

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let code = read(&a.circuit)?;
    let shape = match a.weights_shape {
        Some(s) => s,
        None => parse_circuit(&code).map(|ir| ir.weights_shape).unwrap_or_default(),
    };
    let req = ToolRequest {
        variant: a.arch.into(),
        VQC_code: code,
        VQC_weights_shape: shape,
        q_enc_size: a.q_enc_size,
        q_out_size: a.q_out_size,
        kernel_size: a.kernel_size,
        stride: a.stride,
        VQC_output_dim: a.vqc_output_dim,
        epochs: a.epochs,
    };
    let splits = generate_splits(a.seed);
    let settings = TrainSettings { quanv_pool_len: a.pool_len, ..TrainSettings::with_seed(a.seed) };
    let (doc, code) = match execute_tool_request(&req, &splits, &settings) {
        Ok(r) => (serde_json::to_value(&r).expect("result serializes"), 0),
        Err(e) => (serde_json::json!({ "error": e }), 1),
    };
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("json")).map_err(fail)?;
    Ok(code)
}

fn agent(a: AgentArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let backend = match (&a.scripted, &a.endpoint) {
        (Some(path), None) => BackendConfig::Scripted {
            playlist: Playlist::from_json(&read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
        },
        (None, Some(url)) => BackendConfig::Endpoint(EndpointConfig {
            base_url: url.clone(),
            model: a.model.clone().unwrap_or_default(),
            api_key_env: a.api_key_env.clone(),
            temperature: a.temperature,
            timeout_secs: 300,
        }),
        _ => return Err(CliError::Usage("pass exactly one of --scripted or --endpoint".into())),
    };
    let prompt = match (&a.prompt, &a.prompt_file) {
        (Some(p), _) => p.clone(),
        (None, Some(f)) => read(f)?,
        (None, None) => return Err(CliError::Usage("pass --prompt or --prompt-file".into())),
    };
    let mut config = RunConfig::scripted(a.arch.into(), a.budget, &prompt, Playlist::default());
    config.backend = backend;
    config.master_seed = a.seed;
    config.max_repairs = a.max_repairs;
    config.context_budget_chars = a.context_budget_chars;
    config.validate().map_err(CliError::Usage)?;
    let run_id = uuid::Uuid::new_v4().to_string();
    let dir = a.data_dir.join(&run_id);
    let options = LoopOptions { run_id: Some(run_id), dir: Some(dir.clone()), ..LoopOptions::default() };
    let log = run_agent_loop(config, options).map_err(fail)?;
    let doc = serde_json::json!({ "dir": dir, "summary": log.summary() });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("json")).map_err(fail)?;
    Ok(if log.status == vqclab_core::agent::RunStatus::Aborted { 1 } else { 0 })
}

fn serve(addr: String, data_dir: PathBuf, token: Option<String>) -> Result<i32, CliError> {
    let registry = Registry::open(&data_dir).map_err(|e| fail(format!("data dir {}: {e}", data_dir.display())))?;
    let state = AppState { registry: Arc::new(registry), token };
    let rt = tokio::runtime::Runtime::new().map_err(fail)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| fail(format!("bind {addr}: {e}")))?;
        eprintln!("listening on {}", listener.local_addr().map_err(fail)?);
        axum::serve(listener, router(state)).await.map_err(fail)
    })?;
    Ok(0)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    match cli.command {
        Command::GenData { seed, out: dir } => {
            let splits = generate_splits(seed);
            write_splits(&dir, &splits).map_err(fail)?;
            writeln!(
                out,
                "wrote {} / {} / {} samples to {} (test baseline RMSE {:.4})",
                splits.train.len(),
                splits.val.len(),
                splits.test.len(),
                dir.display(),
                baseline_rmse(&splits.test)
            )
            .map_err(fail)?;
            Ok(0)
        }
        Command::Train(a) => train(a, out),
        Command::Agent(a) => agent(a, out),
        Command::Serve { addr, data_dir, token } => serve(addr, data_dir, token),
        Command::Render { circuit, inputs } => {
            let ir = parse_circuit(&read(&circuit)?).map_err(fail)?;
            // the measurement count is whatever the document declares
            let fc = unroll_and_validate(&ir, inputs.unwrap_or(21), 0).or_else(|e| match e {
                vqclab_core::circuit::ValidationError::MeasurementCount { found, .. } => {
                    unroll_and_validate(&ir, inputs.unwrap_or(21), found)
                }
                other => Err(other),
            });
            let fc = fc.map_err(fail)?;
            write!(out, "{}", render_ascii(&fc)).map_err(fail)?;
            Ok(0)
        }
        Command::Trajectory { run } => {
            let log = RunLog::load(&run).map_err(fail)?;
            write!(out, "{}", log.trajectory_csv()).map_err(fail)?;
            Ok(0)
        }
    }
}
