//! The three training tools exposed to the design agent.
//!
//! A [`ToolRequest`] carries a circuit document plus architecture fields;
//! [`execute_tool_request`] parses, validates, builds and trains, and returns
//! either the metric record or a [`ToolError`] whose message is written for
//! the agent to read and act on.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize};

use crate::arch::{build_model, param_report, ArchConfig, FullConfig, Model, QuanvConfig, SimpleConfig};
use crate::circuit::{parse_circuit, unroll_and_validate};
use crate::dataset::{DatasetSplit, Sample};
use crate::nn::{rmse, AdamW, AdamWConfig, LrSchedule, Tape};
use crate::rng::{stream, Domain};

pub const BATCH_SIZE: usize = 16;
/// Tool errors longer than this are cut before being shown to the agent.
pub const MAX_ERROR_LEN: usize = 16 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Simple,
    Quanv,
    FullQuantum,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Simple, Variant::Quanv, Variant::FullQuantum];

    pub fn tool_name(self) -> &'static str {
        match self {
            Variant::Simple => "TrainCustomSimpleQNNTool",
            Variant::Quanv => "TrainCustomQuanvNNTool",
            Variant::FullQuantum => "TrainCustomFullQuantumQNN",
        }
    }

    pub fn from_tool_name(name: &str) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.tool_name() == name)
    }

    pub fn from_short(name: &str) -> Option<Self> {
        match name {
            "simple" => Some(Variant::Simple),
            "quanv" => Some(Variant::Quanv),
            "full" | "full_quantum" => Some(Variant::FullQuantum),
            _ => None,
        }
    }
}

/// Accepts the circuit either as a JSON string holding the document or as
/// an inline JSON object.
fn circuit_text<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    let v = serde_json::Value::deserialize(d)?;
    match v {
        serde_json::Value::String(s) => Ok(s),
        other => Ok(serde_json::to_string_pretty(&other).map_err(serde::de::Error::custom)?),
    }
}

/// One training-tool invocation. Field names follow the tool signatures the
/// agent sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ToolRequest {
    pub variant: Variant,
    #[serde(deserialize_with = "circuit_text")]
    pub VQC_code: String,
    pub VQC_weights_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_enc_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_out_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub VQC_output_dim: Option<usize>,
    pub epochs: usize,
}

impl ToolRequest {
    /// Builds a request from a tool name and its argument object.
    pub fn from_tool_call(tool: &str, arguments: &serde_json::Value) -> Result<Self, ToolError> {
        let variant = Variant::from_tool_name(tool).ok_or_else(|| {
            ToolError::new(
                Phase::Parse,
                format!(
                    "unknown tool `{tool}`; available tools: {}",
                    Variant::ALL.map(Variant::tool_name).join(", ")
                ),
            )
        })?;
        let mut args = arguments.clone();
        let obj = args
            .as_object_mut()
            .ok_or_else(|| ToolError::new(Phase::Parse, "tool arguments must be a JSON object"))?;
        obj.insert("variant".into(), serde_json::to_value(variant).expect("variant serializes"));
        serde_json::from_value(args)
            .map_err(|e| ToolError::new(Phase::Parse, format!("invalid arguments for {tool}: {e}")))
    }

    /// Tool-call arguments as the agent would send them.
    pub fn arguments(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("request serializes");
        v.as_object_mut().expect("object").remove("variant");
        v
    }

    /// Architecture configuration; a field belonging to another variant or a
    /// missing required field is a validation error.
    pub fn arch_config(&self, quanv_pool_len: usize) -> Result<ArchConfig, ToolError> {
        let fields = [
            ("q_enc_size", self.q_enc_size),
            ("q_out_size", self.q_out_size),
            ("kernel_size", self.kernel_size),
            ("stride", self.stride),
            ("VQC_output_dim", self.VQC_output_dim),
        ];
        let needed: &[&str] = match self.variant {
            Variant::Simple => &["q_enc_size", "q_out_size"],
            Variant::Quanv => &["kernel_size", "stride", "VQC_output_dim"],
            Variant::FullQuantum => &["q_out_size"],
        };
        let tool = self.variant.tool_name();
        for (name, value) in fields {
            match (needed.contains(&name), value) {
                (true, None) => {
                    return Err(ToolError::new(Phase::Validate, format!("{tool} requires `{name}`")))
                }
                (false, Some(_)) => {
                    return Err(ToolError::new(
                        Phase::Validate,
                        format!("`{name}` is not a parameter of {tool}; expected only {}", needed.join(", ")),
                    ))
                }
                (true, Some(0)) => {
                    return Err(ToolError::new(Phase::Validate, format!("`{name}` must be positive")))
                }
                _ => {}
            }
        }
        let config = match self.variant {
            Variant::Simple => ArchConfig::Simple(SimpleConfig {
                q_enc_size: self.q_enc_size.unwrap_or_default(),
                q_out_size: self.q_out_size.unwrap_or_default(),
            }),
            Variant::Quanv => ArchConfig::Quanv(QuanvConfig {
                kernel_size: self.kernel_size.unwrap_or_default(),
                stride: self.stride.unwrap_or_default(),
                vqc_output_dim: self.VQC_output_dim.unwrap_or_default(),
                pool_len: quanv_pool_len,
            }),
            Variant::FullQuantum => ArchConfig::FullQuantum(FullConfig { q_out_size: self.q_out_size.unwrap_or_default() }),
        };
        config.validate().map_err(|e| ToolError::new(Phase::Validate, e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Parse,
    Validate,
    Build,
    Train,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Parse => "parse",
            Phase::Validate => "validate",
            Phase::Build => "build",
            Phase::Train => "train",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{phase} error: {message}")]
pub struct ToolError {
    pub phase: Phase,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub construct: Option<String>,
}

impl ToolError {
    pub fn new(phase: Phase, message: impl Into<String>) -> Self {
        ToolError { phase, message: message.into(), construct: None }
    }

    /// Text shown to the agent.
    pub fn agent_text(&self) -> String {
        let mut s = self.to_string();
        if s.len() > MAX_ERROR_LEN {
            let mut cut = MAX_ERROR_LEN;
            while !s.is_char_boundary(cut) {
                cut -= 1;
            }
            s.truncate(cut);
            s.push_str(" [truncated]");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ToolResult {
    pub test_RMSE: f64,
    pub val_RMSE_history: Vec<f64>,
    pub train_RMSE_last_batch: f64,
    pub n_gates_in_VQC: usize,
    pub n_trainable_params_total: usize,
    pub n_trainable_params_VQC: usize,
    pub circuit_depth: usize,
    /// Learning rate used in each epoch.
    pub lr_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Seconds; excluded from [`ToolResult::same_metrics`].
    pub wall_time: f64,
}

impl ToolResult {
    /// Bitwise equality of everything except wall time.
    pub fn same_metrics(&self, other: &ToolResult) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.test_RMSE.to_bits() == other.test_RMSE.to_bits()
            && bits(&self.val_RMSE_history) == bits(&other.val_RMSE_history)
            && self.train_RMSE_last_batch.to_bits() == other.train_RMSE_last_batch.to_bits()
            && bits(&self.lr_history) == bits(&other.lr_history)
            && (self.n_gates_in_VQC, self.n_trainable_params_total, self.n_trainable_params_VQC, self.circuit_depth)
                == (other.n_gates_in_VQC, other.n_trainable_params_total, other.n_trainable_params_VQC, other.circuit_depth)
            && self.warnings == other.warnings
    }
}

/// Fixed training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub master_seed: u64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub optimizer: AdamWConfig,
    pub quanv_pool_len: usize,
}

impl TrainSettings {
    pub fn with_seed(master_seed: u64) -> Self {
        TrainSettings {
            master_seed,
            batch_size: BATCH_SIZE,
            schedule: LrSchedule::default(),
            optimizer: AdamWConfig::default(),
            quanv_pool_len: 1,
        }
    }
}

fn predict_all(model: &Model, samples: &[Sample]) -> Result<Vec<f64>, ToolError> {
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
    model.predict(&rows).map_err(|e| ToolError::new(Phase::Train, e.to_string()))
}

fn split_rmse(model: &Model, samples: &[Sample]) -> Result<f64, ToolError> {
    let pred = predict_all(model, samples)?;
    let target: Vec<f64> = samples.iter().map(|s| s.target).collect();
    rmse(&pred, &target).map_err(|e| ToolError::new(Phase::Train, e.to_string()))
}

/// Trains `model` in place and reports metrics.
pub fn run_training(
    model: &mut Model,
    splits: &DatasetSplit,
    epochs: usize,
    settings: &TrainSettings,
) -> Result<ToolResult, ToolError> {
    if epochs == 0 {
        return Err(ToolError::new(Phase::Validate, "epochs must be at least 1"));
    }
    let started = Instant::now();
    let mut opt = AdamW::new(settings.optimizer.clone(), &model.params);
    let mut val_history = Vec::with_capacity(epochs);
    let mut lr_history = Vec::with_capacity(epochs);
    let mut last_batch_rmse = f64::NAN;
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    for epoch in 0..epochs {
        let lr = settings.schedule.lr_at(epoch);
        lr_history.push(lr);
        order.sort_unstable();
        order.shuffle(&mut stream(settings.master_seed, Domain::Shuffle, epoch as u64));
        for (b, chunk) in order.chunks(settings.batch_size).enumerate() {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| splits.train[i].features.as_slice()).collect();
            let target: Vec<f64> = chunk.iter().map(|&i| splits.train[i].target).collect();
            let mut tape = Tape::new();
            let train_err = |e: crate::nn::NnError| ToolError::new(Phase::Train, e.to_string());
            let pred = model.forward(&mut tape, &rows).map_err(train_err)?;
            let loss = tape.mse(pred, &target).map_err(train_err)?;
            let loss_value = tape.value(loss).data[0];
            if !loss_value.is_finite() {
                return Err(ToolError::new(
                    Phase::Train,
                    format!("loss became non-finite ({loss_value}) at epoch {}, batch {}", epoch + 1, b + 1),
                ));
            }
            last_batch_rmse = loss_value.sqrt();
            model.params.zero_grad();
            tape.backward(loss).accumulate_into(&mut model.params);
            opt.step(&mut model.params, lr);
        }
        val_history.push(split_rmse(model, &splits.val)?);
    }
    let test = split_rmse(model, &splits.test)?;
    let report = param_report(model);
    Ok(ToolResult {
        test_RMSE: test,
        val_RMSE_history: val_history,
        train_RMSE_last_batch: last_batch_rmse,
        n_gates_in_VQC: report.n_gates_in_VQC,
        n_trainable_params_total: report.n_trainable_params_total,
        n_trainable_params_VQC: report.n_trainable_params_VQC,
        circuit_depth: report.circuit_depth,
        lr_history,
        warnings: model.circuit.warnings.clone(),
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Parses, validates and builds the model described by a request.
pub fn build_from_request(req: &ToolRequest, settings: &TrainSettings) -> Result<Model, ToolError> {
    let ir = parse_circuit(&req.VQC_code).map_err(|e| ToolError::new(Phase::Parse, e.to_string()))?;
    if ir.weights_shape != req.VQC_weights_shape {
        return Err(ToolError::new(
            Phase::Validate,
            format!(
                "VQC_weights_shape {:?} does not match the circuit's weights_shape {:?}",
                req.VQC_weights_shape, ir.weights_shape
            ),
        ));
    }
    if req.epochs == 0 {
        return Err(ToolError::new(Phase::Validate, "epochs must be at least 1"));
    }
    let config = req.arch_config(settings.quanv_pool_len)?;
    let fc = unroll_and_validate(&ir, config.circuit_inputs(), config.circuit_outputs()).map_err(|e| ToolError {
        phase: Phase::Validate,
        message: e.to_string(),
        construct: e.construct().map(str::to_string),
    })?;
    build_model(config, fc, settings.master_seed).map_err(|e| ToolError::new(Phase::Build, e.to_string()))
}

pub fn execute_tool_request(
    req: &ToolRequest,
    splits: &DatasetSplit,
    settings: &TrainSettings,
) -> Result<ToolResult, ToolError> {
    let mut model = build_from_request(req, settings)?;
    run_training(&mut model, splits, req.epochs, settings)
}
