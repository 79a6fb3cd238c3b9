//! The declarative circuit language emitted by the design agent.
//!
//! A circuit document is parsed into a [`CircuitIr`] (loops and symbolic
//! expressions intact), then [`unroll_and_validate`] expands it into a
//! [`FlatCircuit`] whose gates carry concrete wires and angle expressions over
//! the circuit inputs and weights only.

mod document;
pub mod expr;
mod flat;
mod render;

pub use document::{parse_circuit, ParseError};
pub use expr::{AngleExpr, BinOp, IndexExpr};
pub use flat::{
    circuit_stats, unroll_and_validate, CircuitStats, FlatAngle, FlatCircuit, FlatGate, FlatMeasurement,
    ValidationError, MAX_FLAT_GATES, MAX_QUBITS, RECOMMENDED_MAX_QUBITS,
};
pub use render::render_ascii;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    H,
    X,
    RX,
    RY,
    RZ,
    ROT,
    CNOT,
    CZ,
}

impl GateKind {
    pub const ALL: [GateKind; 8] = [
        GateKind::H,
        GateKind::X,
        GateKind::RX,
        GateKind::RY,
        GateKind::RZ,
        GateKind::ROT,
        GateKind::CNOT,
        GateKind::CZ,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GateKind::H => "H",
            GateKind::X => "X",
            GateKind::RX => "RX",
            GateKind::RY => "RY",
            GateKind::RZ => "RZ",
            GateKind::ROT => "ROT",
            GateKind::CNOT => "CNOT",
            GateKind::CZ => "CZ",
        }
    }

    /// Accepts the canonical names plus the common PennyLane spellings.
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name.to_ascii_uppercase().as_str() {
            "H" | "HADAMARD" => GateKind::H,
            "X" | "PAULIX" | "NOT" => GateKind::X,
            "RX" => GateKind::RX,
            "RY" => GateKind::RY,
            "RZ" => GateKind::RZ,
            "ROT" => GateKind::ROT,
            "CNOT" | "CX" => GateKind::CNOT,
            "CZ" => GateKind::CZ,
            _ => return None,
        })
    }

    pub fn n_wires(self) -> usize {
        match self {
            GateKind::CNOT | GateKind::CZ => 2,
            _ => 1,
        }
    }

    pub fn n_angles(self) -> usize {
        match self {
            GateKind::RX | GateKind::RY | GateKind::RZ => 1,
            GateKind::ROT => 3,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observable {
    PauliX,
    PauliY,
    PauliZ,
}

impl Observable {
    pub fn name(self) -> &'static str {
        match self {
            Observable::PauliX => "PauliX",
            Observable::PauliY => "PauliY",
            Observable::PauliZ => "PauliZ",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "PauliX" | "X" => Observable::PauliX,
            "PauliY" | "Y" => Observable::PauliY,
            "PauliZ" | "Z" => Observable::PauliZ,
            _ => return None,
        })
    }

    pub fn short(self) -> char {
        match self {
            Observable::PauliX => 'X',
            Observable::PauliY => 'Y',
            Observable::PauliZ => 'Z',
        }
    }
}

/// Python-style `range(start, stop, step)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Range {
    pub start: IndexExpr,
    pub stop: IndexExpr,
    pub step: IndexExpr,
}

impl Range {
    pub fn new(start: impl Into<IndexExpr>, stop: impl Into<IndexExpr>) -> Self {
        Range {
            start: start.into(),
            stop: stop.into(),
            step: IndexExpr::Lit(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateNode {
    pub kind: GateKind,
    pub wires: Vec<IndexExpr>,
    pub angles: Vec<AngleExpr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopNode {
    pub var: String,
    pub range: Range,
    pub body: Vec<BodyNode>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BodyNode {
    Gate(GateNode),
    Loop(LoopNode),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Measurement {
    pub observable: Observable,
    pub wire: IndexExpr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MeasureNode {
    Measure(Measurement),
    Loop {
        var: String,
        range: Range,
        body: Vec<MeasureNode>,
    },
}

/// A parsed circuit document. Loops and symbolic indices are still present.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitIr {
    pub n_qubits: usize,
    /// Empty means the circuit has no trainable weights.
    pub weights_shape: Vec<usize>,
    pub body: Vec<BodyNode>,
    pub measurements: Vec<MeasureNode>,
}

impl CircuitIr {
    pub fn n_weights(&self) -> usize {
        weight_count(&self.weights_shape)
    }
}

pub(crate) fn weight_count(shape: &[usize]) -> usize {
    if shape.is_empty() {
        0
    } else {
        shape.iter().product()
    }
}
