//! The three hybrid models built around a variational circuit.
//!
//! * Simple: `linear(21 -> q_enc) -> pi*sigmoid -> circuit -> linear(q_out -> 1) -> sigmoid`
//! * Quanv: the circuit is applied to sliding windows of the input; its
//!   outputs become channels of a 1D feature map that passes through a
//!   residual conv block, adaptive pooling and a 10-5-1 MLP head.
//! * Full: all 21 (pi-scaled) features go straight into the circuit, followed
//!   by `linear(q_out -> 1) -> sigmoid`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{circuit_stats, FlatCircuit};
use crate::dataset::N_POINTS;
use crate::nn::{NnError, NodeId, ParamStore, Tape, Tensor};
use crate::rng::{stream, Domain};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const QUANV_HIDDEN: [usize; 2] = [10, 5];

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimpleConfig {
    pub q_enc_size: usize,
    pub q_out_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuanvConfig {
    pub kernel_size: usize,
    pub stride: usize,
    pub vqc_output_dim: usize,
    /// Output length of the adaptive pooling stage.
    #[serde(default = "default_pool_len")]
    pub pool_len: usize,
}

fn default_pool_len() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FullConfig {
    pub q_out_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ArchConfig {
    Simple(SimpleConfig),
    Quanv(QuanvConfig),
    FullQuantum(FullConfig),
}

impl ArchConfig {
    /// Inputs the circuit must accept.
    pub fn circuit_inputs(&self) -> usize {
        match self {
            ArchConfig::Simple(c) => c.q_enc_size,
            ArchConfig::Quanv(c) => c.kernel_size,
            ArchConfig::FullQuantum(_) => N_POINTS,
        }
    }

    /// Measurements the circuit must produce.
    pub fn circuit_outputs(&self) -> usize {
        match self {
            ArchConfig::Simple(c) => c.q_out_size,
            ArchConfig::Quanv(c) => c.vqc_output_dim,
            ArchConfig::FullQuantum(c) => c.q_out_size,
        }
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(ArchError::Config(format!("{name} must be positive")))
            } else {
                Ok(())
            }
        };
        match self {
            ArchConfig::Simple(c) => {
                positive("q_enc_size", c.q_enc_size)?;
                positive("q_out_size", c.q_out_size)
            }
            ArchConfig::Quanv(c) => {
                positive("kernel_size", c.kernel_size)?;
                positive("stride", c.stride)?;
                positive("vqc_output_dim", c.vqc_output_dim)?;
                positive("pool_len", c.pool_len)?;
                if c.kernel_size > N_POINTS {
                    return Err(ArchError::Config(format!(
                        "kernel_size {} exceeds the input length {N_POINTS}",
                        c.kernel_size
                    )));
                }
                Ok(())
            }
            ArchConfig::FullQuantum(c) => positive("q_out_size", c.q_out_size),
        }
    }
}

/// `floor((21 - kernel) / stride) + 1`.
pub fn window_count(kernel_size: usize, stride: usize) -> usize {
    (N_POINTS - kernel_size) / stride + 1
}

/// Classical parameter count from layer sizes alone; a linear layer
/// `in -> out` contributes `in * out + out`.
pub fn classical_param_count(config: &ArchConfig) -> usize {
    let linear = |i: usize, o: usize| i * o + o;
    match *config {
        ArchConfig::Simple(c) => linear(N_POINTS, c.q_enc_size) + linear(c.q_out_size, 1),
        ArchConfig::Quanv(c) => {
            let ch = c.vqc_output_dim;
            let [h1, h2] = QUANV_HIDDEN;
            2 * (ch * ch * 3 + ch) + linear(ch * c.pool_len, h1) + linear(h1, h2) + linear(h2, 1)
        }
        ArchConfig::FullQuantum(c) => linear(c.q_out_size, 1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ParamReport {
    pub n_trainable_params_total: usize,
    pub n_trainable_params_VQC: usize,
    pub n_gates_in_VQC: usize,
    pub circuit_depth: usize,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
enum Layout {
    Simple { enc: Dense, head: Dense },
    Quanv { conv1: Dense, conv2: Dense, fc: [Dense; 3] },
    Full { head: Dense },
}

/// A built hybrid model: configuration, circuit and all trainable tensors.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ArchConfig,
    pub circuit: Arc<FlatCircuit>,
    pub params: ParamStore,
    vqc: Option<usize>,
    layout: Layout,
}

struct Init {
    seed: u64,
    next: u64,
}

impl Init {
    fn dense(&mut self, store: &mut ParamStore, name: &str, fan_in: usize, shape: Vec<usize>) -> usize {
        let mut rng = stream(self.seed, Domain::Init, self.next);
        self.next += 1;
        store.add_uniform_fan_in(name, shape, fan_in, &mut rng)
    }

    fn linear(&mut self, store: &mut ParamStore, name: &str, inp: usize, out: usize) -> Dense {
        Dense {
            w: self.dense(store, &format!("{name}.weight"), inp, vec![out, inp]),
            b: self.dense(store, &format!("{name}.bias"), inp, vec![out]),
        }
    }

    fn conv(&mut self, store: &mut ParamStore, name: &str, ch: usize) -> Dense {
        Dense {
            w: self.dense(store, &format!("{name}.weight"), ch * 3, vec![ch, ch, 3]),
            b: self.dense(store, &format!("{name}.bias"), ch * 3, vec![ch]),
        }
    }

    /// Circuit weights drawn from `U[0, 2 pi)`.
    fn vqc(&mut self, store: &mut ParamStore, shape: &[usize]) -> Option<usize> {
        let n: usize = if shape.is_empty() { 0 } else { shape.iter().product() };
        let mut rng = stream(self.seed, Domain::Init, self.next);
        self.next += 1;
        (n > 0).then(|| {
            let value = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            store.add("vqc.weights", shape.to_vec(), value, true)
        })
    }
}

pub fn build_model(config: ArchConfig, circuit: FlatCircuit, seed: u64) -> Result<Model, ArchError> {
    config.validate()?;
    if circuit.n_inputs != config.circuit_inputs() {
        return Err(ArchError::Config(format!(
            "circuit takes {} inputs but the architecture feeds it {}",
            circuit.n_inputs,
            config.circuit_inputs()
        )));
    }
    if circuit.n_outputs() != config.circuit_outputs() {
        return Err(ArchError::Config(format!(
            "circuit has {} measurements but the architecture expects {}",
            circuit.n_outputs(),
            config.circuit_outputs()
        )));
    }
    let mut params = ParamStore::new();
    let mut init = Init { seed, next: 0 };
    let vqc = init.vqc(&mut params, &circuit.weights_shape);
    let layout = match config {
        ArchConfig::Simple(c) => Layout::Simple {
            enc: init.linear(&mut params, "encoder", N_POINTS, c.q_enc_size),
            head: init.linear(&mut params, "head", c.q_out_size, 1),
        },
        ArchConfig::Quanv(c) => {
            let ch = c.vqc_output_dim;
            let [h1, h2] = QUANV_HIDDEN;
            Layout::Quanv {
                conv1: init.conv(&mut params, "conv1", ch),
                conv2: init.conv(&mut params, "conv2", ch),
                fc: [
                    init.linear(&mut params, "fc1", ch * c.pool_len, h1),
                    init.linear(&mut params, "fc2", h1, h2),
                    init.linear(&mut params, "fc3", h2, 1),
                ],
            }
        }
        ArchConfig::FullQuantum(c) => Layout::Full { head: init.linear(&mut params, "head", c.q_out_size, 1) },
    };
    let model = Model { config, circuit: Arc::new(circuit), params, vqc, layout };
    assert_eq!(
        param_report(&model).n_trainable_params_total,
        classical_param_count(&config) + model.circuit.n_weights(),
        "parameter accounting identity"
    );
    Ok(model)
}

impl Model {
    fn dense(&self, tape: &mut Tape, x: NodeId, d: Dense) -> Result<NodeId, NnError> {
        let (w, b) = (tape.param(&self.params, d.w), tape.param(&self.params, d.b));
        tape.linear(x, w, Some(b))
    }

    fn conv(&self, tape: &mut Tape, x: NodeId, d: Dense) -> Result<NodeId, NnError> {
        let (w, b) = (tape.param(&self.params, d.w), tape.param(&self.params, d.b));
        tape.conv1d(x, w, Some(b), 1)
    }

    /// Records the forward pass for a batch of feature rows; returns the
    /// `[batch, 1]` prediction node.
    pub fn forward(&self, tape: &mut Tape, batch: &[&[f64]]) -> Result<NodeId, NnError> {
        let rows: Vec<Vec<f64>> = batch.iter().map(|r| r.to_vec()).collect();
        let x = tape.input(Tensor::from_rows(&rows)?);
        if tape.value(x).shape[1] != N_POINTS {
            return Err(NnError::Shape { op: "model input", left: tape.value(x).shape.clone(), right: vec![batch.len(), N_POINTS] });
        }
        let w = self.vqc.map(|i| tape.param(&self.params, i));
        let out = match (&self.layout, &self.config) {
            (Layout::Simple { enc, head }, _) => {
                let e = self.dense(tape, x, *enc)?;
                let angles = tape.scale_to_pi(e);
                let q = tape.quantum(angles, w, self.circuit.clone())?;
                self.dense(tape, q, *head)?
            }
            (Layout::Quanv { conv1, conv2, fc }, ArchConfig::Quanv(c)) => {
                let windows = tape.unfold(x, c.kernel_size, c.stride)?;
                let angles = tape.scale(windows, PI);
                let q = tape.quantum(angles, w, self.circuit.clone())?;
                let map = tape.windows_to_channels(q, batch.len())?;
                let h = self.conv(tape, map, *conv1)?;
                let h = tape.leaky_relu(h, LEAKY_SLOPE);
                let h = self.conv(tape, h, *conv2)?;
                let h = tape.add(h, map)?;
                let h = tape.leaky_relu(h, LEAKY_SLOPE);
                let h = tape.adaptive_avg_pool(h, c.pool_len)?;
                let mut h = tape.flatten(h);
                for (k, layer) in fc.iter().enumerate() {
                    h = self.dense(tape, h, *layer)?;
                    if k + 1 < fc.len() {
                        h = tape.leaky_relu(h, LEAKY_SLOPE);
                    }
                }
                h
            }
            (Layout::Full { head }, _) => {
                let angles = tape.scale(x, PI);
                let q = tape.quantum(angles, w, self.circuit.clone())?;
                self.dense(tape, q, *head)?
            }
            (Layout::Quanv { .. }, _) => unreachable!("layout always matches its config"),
        };
        Ok(tape.sigmoid(out))
    }

    /// Predictions for a batch, in input order.
    pub fn predict(&self, batch: &[&[f64]]) -> Result<Vec<f64>, NnError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, batch)?;
        Ok(tape.value(out).data.clone())
    }

    /// Shape `(channels, windows)` of the quantum feature map (Quanv only).
    pub fn feature_map_shape(&self) -> Option<(usize, usize)> {
        match self.config {
            ArchConfig::Quanv(c) => Some((c.vqc_output_dim, window_count(c.kernel_size, c.stride))),
            _ => None,
        }
    }
}

pub fn param_report(model: &Model) -> ParamReport {
    let stats = circuit_stats(&model.circuit);
    ParamReport {
        n_trainable_params_total: model.params.count_total(),
        n_trainable_params_VQC: model.params.count_quantum(),
        n_gates_in_VQC: stats.gate_count,
        circuit_depth: stats.depth,
    }
}
