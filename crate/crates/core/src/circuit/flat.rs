//! Loop unrolling, bounds validation and circuit statistics.

use std::f64::consts::PI;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::expr::{BinOp, EvalError};
use super::{
    weight_count, AngleExpr, BodyNode, CircuitIr, GateKind, GateNode, IndexExpr, MeasureNode, Measurement,
    Observable, Range,
};

/// Hard cap on the register size.
pub const MAX_QUBITS: usize = 12;
/// Above this size training gets slow; reported as a warning only.
pub const RECOMMENDED_MAX_QUBITS: usize = 9;
/// Maximum number of gates (and measurements) an unrolled circuit may contain.
pub const MAX_FLAT_GATES: usize = 100_000;
const MAX_LOOP_ITERATIONS: u64 = 10 * MAX_FLAT_GATES as u64;

/// Angle expression after unrolling: loop variables and `pi` are folded away.
#[derive(Debug, Clone, PartialEq)]
pub enum FlatAngle {
    Const(f64),
    Input(usize),
    /// Row-major flat index into the weight tensor.
    Weight(usize),
    Neg(Box<FlatAngle>),
    Bin(BinOp, Box<FlatAngle>, Box<FlatAngle>),
}

impl FlatAngle {
    pub fn eval(&self, inputs: &[f64], weights: &[f64]) -> f64 {
        match self {
            FlatAngle::Const(c) => *c,
            FlatAngle::Input(i) => inputs[*i],
            FlatAngle::Weight(w) => weights[*w],
            FlatAngle::Neg(a) => -a.eval(inputs, weights),
            FlatAngle::Bin(op, a, b) => {
                let (x, y) = (a.eval(inputs, weights), b.eval(inputs, weights));
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Mod => unreachable!("modulo is rejected in angle expressions"),
                }
            }
        }
    }

    /// Adds `upstream * d(angle)/d(leaf)` into the input and weight gradients.
    pub fn backprop(&self, inputs: &[f64], weights: &[f64], upstream: f64, d_inputs: &mut [f64], d_weights: &mut [f64]) {
        match self {
            FlatAngle::Const(_) => {}
            FlatAngle::Input(i) => d_inputs[*i] += upstream,
            FlatAngle::Weight(w) => d_weights[*w] += upstream,
            FlatAngle::Neg(a) => a.backprop(inputs, weights, -upstream, d_inputs, d_weights),
            FlatAngle::Bin(op, a, b) => match op {
                BinOp::Add => {
                    a.backprop(inputs, weights, upstream, d_inputs, d_weights);
                    b.backprop(inputs, weights, upstream, d_inputs, d_weights);
                }
                BinOp::Sub => {
                    a.backprop(inputs, weights, upstream, d_inputs, d_weights);
                    b.backprop(inputs, weights, -upstream, d_inputs, d_weights);
                }
                BinOp::Mul => {
                    let (x, y) = (a.eval(inputs, weights), b.eval(inputs, weights));
                    a.backprop(inputs, weights, upstream * y, d_inputs, d_weights);
                    b.backprop(inputs, weights, upstream * x, d_inputs, d_weights);
                }
                BinOp::Div => {
                    let (x, y) = (a.eval(inputs, weights), b.eval(inputs, weights));
                    a.backprop(inputs, weights, upstream / y, d_inputs, d_weights);
                    b.backprop(inputs, weights, -upstream * x / (y * y), d_inputs, d_weights);
                }
                BinOp::Mod => unreachable!("modulo is rejected in angle expressions"),
            },
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, FlatAngle::Const(_))
    }

    fn visit_leaves(&self, f: &mut impl FnMut(&FlatAngle)) {
        match self {
            FlatAngle::Neg(a) => a.visit_leaves(f),
            FlatAngle::Bin(_, a, b) => {
                a.visit_leaves(f);
                b.visit_leaves(f);
            }
            leaf => f(leaf),
        }
    }

    fn to_angle_expr(&self, shape: &[usize]) -> AngleExpr {
        match self {
            FlatAngle::Const(c) => AngleExpr::Lit(*c),
            FlatAngle::Input(i) => AngleExpr::Input(IndexExpr::Lit(*i as i64)),
            FlatAngle::Weight(w) => AngleExpr::Weight(
                unflatten(*w, shape)
                    .into_iter()
                    .map(|i| IndexExpr::Lit(i as i64))
                    .collect(),
            ),
            FlatAngle::Neg(a) => AngleExpr::Neg(Box::new(a.to_angle_expr(shape))),
            FlatAngle::Bin(op, a, b) => {
                AngleExpr::Bin(*op, Box::new(a.to_angle_expr(shape)), Box::new(b.to_angle_expr(shape)))
            }
        }
    }
}

fn unflatten(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut out = vec![0; shape.len()];
    for (k, extent) in shape.iter().enumerate().rev() {
        out[k] = flat % extent;
        flat /= extent;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatGate {
    pub kind: GateKind,
    /// Control first for CNOT.
    pub wires: Vec<usize>,
    pub angles: Vec<FlatAngle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlatMeasurement {
    pub observable: Observable,
    pub wire: usize,
}

/// Fully unrolled, bounds-checked circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatCircuit {
    pub n_qubits: usize,
    pub weights_shape: Vec<usize>,
    pub n_inputs: usize,
    pub gates: Vec<FlatGate>,
    pub measurements: Vec<FlatMeasurement>,
    /// Non-fatal remarks surfaced to the agent (e.g. large registers).
    pub warnings: Vec<String>,
}

impl FlatCircuit {
    pub fn n_weights(&self) -> usize {
        weight_count(&self.weights_shape)
    }

    pub fn n_outputs(&self) -> usize {
        self.measurements.len()
    }

    /// Converts back to a loop-free [`CircuitIr`]; unrolling the result yields `self`.
    pub fn to_ir(&self) -> CircuitIr {
        CircuitIr {
            n_qubits: self.n_qubits,
            weights_shape: self.weights_shape.clone(),
            body: self
                .gates
                .iter()
                .map(|g| {
                    BodyNode::Gate(GateNode {
                        kind: g.kind,
                        wires: g.wires.iter().map(|w| IndexExpr::Lit(*w as i64)).collect(),
                        angles: g.angles.iter().map(|a| a.to_angle_expr(&self.weights_shape)).collect(),
                    })
                })
                .collect(),
            measurements: self
                .measurements
                .iter()
                .map(|m| {
                    MeasureNode::Measure(Measurement {
                        observable: m.observable,
                        wire: IndexExpr::Lit(m.wire as i64),
                    })
                })
                .collect(),
        }
    }

    /// Drops every gate that cannot influence a measured wire (the trailing
    /// part of the circuit outside the backward light cone of the measurements).
    pub fn prune_unobserved(&self) -> FlatCircuit {
        let mut live = vec![false; self.n_qubits];
        for m in &self.measurements {
            live[m.wire] = true;
        }
        let mut keep = vec![false; self.gates.len()];
        for (k, gate) in self.gates.iter().enumerate().rev() {
            if gate.wires.iter().any(|w| live[*w]) {
                keep[k] = true;
                for w in &gate.wires {
                    live[*w] = true;
                }
            }
        }
        FlatCircuit {
            gates: self
                .gates
                .iter()
                .zip(keep)
                .filter_map(|(g, k)| k.then(|| g.clone()))
                .collect(),
            ..self.clone()
        }
    }

    /// Which inputs and weights are referenced by at least one gate angle.
    pub fn referenced(&self) -> (Vec<bool>, Vec<bool>) {
        let mut inputs = vec![false; self.n_inputs];
        let mut weights = vec![false; self.n_weights()];
        for g in &self.gates {
            for a in &g.angles {
                a.visit_leaves(&mut |leaf| match leaf {
                    FlatAngle::Input(i) => inputs[*i] = true,
                    FlatAngle::Weight(w) => weights[*w] = true,
                    _ => {}
                });
            }
        }
        (inputs, weights)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("n_qubits = {n_qubits} is outside the supported range 1..={max}", max = MAX_QUBITS)]
    QubitCount { n_qubits: usize },
    #[error("wire {wire} is out of range for {n_qubits} qubits in {construct}")]
    WireOutOfRange { wire: i64, n_qubits: usize, construct: String },
    #[error("two-qubit gate uses wire {wire} twice in {construct}")]
    RepeatedWire { wire: usize, construct: String },
    #[error("inputs[{index}] is out of range: the circuit receives {n_inputs} inputs (valid indices 0..{n_inputs}) in {construct}")]
    InputIndex { index: i64, n_inputs: usize, construct: String },
    #[error("weights indexed with {found} indices but weights_shape {shape:?} has rank {expected} in {construct}")]
    WeightArity { found: usize, expected: usize, shape: Vec<usize>, construct: String },
    #[error("weights{index:?} is outside weights_shape {shape:?} in {construct}")]
    WeightIndex { index: Vec<i64>, shape: Vec<usize>, construct: String },
    #[error("the circuit declares {found} measurements but {expected} outputs are required")]
    MeasurementCount { found: usize, expected: usize },
    #[error("circuit unrolls to more than {limit} operations")]
    UnrollCap { limit: usize },
    #[error("loop step evaluates to 0 in {construct}")]
    ZeroStep { construct: String },
    #[error("loop variable `{var}` shadows an enclosing loop variable in {construct}")]
    ShadowedVariable { var: String, construct: String },
    #[error("{error} in {construct}")]
    Eval { error: EvalError, construct: String },
}

impl ValidationError {
    /// The circuit fragment the error refers to, when there is one.
    pub fn construct(&self) -> Option<&str> {
        match self {
            ValidationError::WireOutOfRange { construct, .. }
            | ValidationError::RepeatedWire { construct, .. }
            | ValidationError::InputIndex { construct, .. }
            | ValidationError::WeightArity { construct, .. }
            | ValidationError::WeightIndex { construct, .. }
            | ValidationError::ZeroStep { construct, .. }
            | ValidationError::ShadowedVariable { construct, .. }
            | ValidationError::Eval { construct, .. } => Some(construct),
            _ => None,
        }
    }
}

struct Unroller<'a> {
    ir: &'a CircuitIr,
    n_inputs: usize,
    env: Vec<(String, i64)>,
    gates: Vec<FlatGate>,
    measurements: Vec<FlatMeasurement>,
}

impl fmt::Display for GateNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind.name())?;
        if !self.angles.is_empty() {
            let a: Vec<String> = self.angles.iter().map(|a| a.to_string()).collect();
            write!(f, "({})", a.join(", "))?;
        }
        let w: Vec<String> = self.wires.iter().map(|w| w.to_string()).collect();
        write!(f, " on wires [{}]", w.join(", "))
    }
}

impl<'a> Unroller<'a> {
    fn lookup(&self, name: &str) -> Option<i64> {
        if let Some((_, v)) = self.env.iter().rev().find(|(n, _)| n == name) {
            return Some(*v);
        }
        (name == "n_qubits").then_some(self.ir.n_qubits as i64)
    }

    fn describe(&self, what: &dyn fmt::Display) -> String {
        if self.env.is_empty() {
            format!("`{what}`")
        } else {
            let b: Vec<String> = self.env.iter().map(|(n, v)| format!("{n}={v}")).collect();
            format!("`{what}` (with {})", b.join(", "))
        }
    }

    fn eval(&self, e: &IndexExpr, what: &dyn fmt::Display) -> Result<i64, ValidationError> {
        e.eval(&|n| self.lookup(n)).map_err(|error| ValidationError::Eval {
            error,
            construct: self.describe(what),
        })
    }

    fn iterations(&self, var: &str, range: &Range, what: &dyn fmt::Display) -> Result<Vec<i64>, ValidationError> {
        if self.lookup(var).is_some() && var != "n_qubits" {
            return Err(ValidationError::ShadowedVariable {
                var: var.to_string(),
                construct: self.describe(what),
            });
        }
        let start = self.eval(&range.start, what)?;
        let stop = self.eval(&range.stop, what)?;
        let step = self.eval(&range.step, what)?;
        if step == 0 {
            return Err(ValidationError::ZeroStep {
                construct: self.describe(what),
            });
        }
        let span = if step > 0 { stop as i128 - start as i128 } else { start as i128 - stop as i128 };
        let count = if span <= 0 { 0 } else { (span + step.unsigned_abs() as i128 - 1) / step.unsigned_abs() as i128 };
        if count as u128 > MAX_LOOP_ITERATIONS as u128 {
            return Err(ValidationError::UnrollCap { limit: MAX_FLAT_GATES });
        }
        Ok((0..count as i64).map(|k| start + k * step).collect())
    }

    fn body(&mut self, body: &[BodyNode]) -> Result<(), ValidationError> {
        for node in body {
            match node {
                BodyNode::Gate(g) => self.gate(g)?,
                BodyNode::Loop(l) => {
                    let header = LoopHeader(&l.var, &l.range);
                    for v in self.iterations(&l.var, &l.range, &header)? {
                        self.env.push((l.var.clone(), v));
                        let r = self.body(&l.body);
                        self.env.pop();
                        r?;
                    }
                }
            }
        }
        Ok(())
    }

    fn wire(&self, e: &IndexExpr, what: &dyn fmt::Display) -> Result<usize, ValidationError> {
        let w = self.eval(e, what)?;
        if w < 0 || w as usize >= self.ir.n_qubits {
            return Err(ValidationError::WireOutOfRange {
                wire: w,
                n_qubits: self.ir.n_qubits,
                construct: self.describe(what),
            });
        }
        Ok(w as usize)
    }

    fn gate(&mut self, g: &GateNode) -> Result<(), ValidationError> {
        if self.gates.len() >= MAX_FLAT_GATES {
            return Err(ValidationError::UnrollCap { limit: MAX_FLAT_GATES });
        }
        let wires = g
            .wires
            .iter()
            .map(|w| self.wire(w, g))
            .collect::<Result<Vec<_>, _>>()?;
        if wires.len() == 2 && wires[0] == wires[1] {
            return Err(ValidationError::RepeatedWire {
                wire: wires[0],
                construct: self.describe(g),
            });
        }
        let angles = g
            .angles
            .iter()
            .map(|a| self.angle(a, g))
            .collect::<Result<Vec<_>, _>>()?;
        self.gates.push(FlatGate {
            kind: g.kind,
            wires,
            angles,
        });
        Ok(())
    }

    fn angle(&self, a: &AngleExpr, gate: &GateNode) -> Result<FlatAngle, ValidationError> {
        Ok(match a {
            AngleExpr::Lit(v) => FlatAngle::Const(*v),
            AngleExpr::Pi => FlatAngle::Const(PI),
            AngleExpr::Var(name) => {
                let v = self.lookup(name).ok_or_else(|| ValidationError::Eval {
                    error: EvalError::UnknownVariable(name.clone()),
                    construct: self.describe(gate),
                })?;
                FlatAngle::Const(v as f64)
            }
            AngleExpr::Input(idx) => {
                let i = self.eval(idx, gate)?;
                if i < 0 || i as usize >= self.n_inputs {
                    return Err(ValidationError::InputIndex {
                        index: i,
                        n_inputs: self.n_inputs,
                        construct: self.describe(gate),
                    });
                }
                FlatAngle::Input(i as usize)
            }
            AngleExpr::Weight(idx) => {
                let shape = &self.ir.weights_shape;
                if idx.len() != shape.len() || shape.is_empty() {
                    return Err(ValidationError::WeightArity {
                        found: idx.len(),
                        expected: shape.len(),
                        shape: shape.clone(),
                        construct: self.describe(gate),
                    });
                }
                let values = idx.iter().map(|e| self.eval(e, gate)).collect::<Result<Vec<_>, _>>()?;
                let mut flat = 0usize;
                for (v, extent) in values.iter().zip(shape) {
                    if *v < 0 || *v as usize >= *extent {
                        return Err(ValidationError::WeightIndex {
                            index: values.clone(),
                            shape: shape.clone(),
                            construct: self.describe(gate),
                        });
                    }
                    flat = flat * extent + *v as usize;
                }
                FlatAngle::Weight(flat)
            }
            AngleExpr::Neg(inner) => match self.angle(inner, gate)? {
                FlatAngle::Const(c) => FlatAngle::Const(-c),
                other => FlatAngle::Neg(Box::new(other)),
            },
            AngleExpr::Bin(op, a, b) => {
                let (x, y) = (self.angle(a, gate)?, self.angle(b, gate)?);
                match (&x, &y) {
                    (FlatAngle::Const(p), FlatAngle::Const(q)) => FlatAngle::Const(match op {
                        BinOp::Add => p + q,
                        BinOp::Sub => p - q,
                        BinOp::Mul => p * q,
                        BinOp::Div => p / q,
                        BinOp::Mod => unreachable!("modulo is rejected in angle expressions"),
                    }),
                    _ => FlatAngle::Bin(*op, Box::new(x), Box::new(y)),
                }
            }
        })
    }

    fn measure(&mut self, nodes: &[MeasureNode]) -> Result<(), ValidationError> {
        for node in nodes {
            match node {
                MeasureNode::Measure(m) => {
                    if self.measurements.len() >= MAX_FLAT_GATES {
                        return Err(ValidationError::UnrollCap { limit: MAX_FLAT_GATES });
                    }
                    let label = MeasureLabel(m);
                    let wire = self.wire(&m.wire, &label)?;
                    self.measurements.push(FlatMeasurement {
                        observable: m.observable,
                        wire,
                    });
                }
                MeasureNode::Loop { var, range, body } => {
                    let header = LoopHeader(var, range);
                    for v in self.iterations(var, range, &header)? {
                        self.env.push((var.clone(), v));
                        let r = self.measure(body);
                        self.env.pop();
                        r?;
                    }
                }
            }
        }
        Ok(())
    }
}

struct LoopHeader<'a>(&'a str, &'a Range);

impl fmt::Display for LoopHeader<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "for {} in range({}, {}, {})",
            self.0, self.1.start, self.1.stop, self.1.step
        )
    }
}

struct MeasureLabel<'a>(&'a Measurement);

impl fmt::Display for MeasureLabel<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "measure {} on wire {}", self.0.observable.name(), self.0.wire)
    }
}

/// Expands all loops, resolves and bounds-checks every index, and checks the
/// measurement count against `q_out`.
pub fn unroll_and_validate(ir: &CircuitIr, n_inputs: usize, q_out: usize) -> Result<FlatCircuit, ValidationError> {
    if ir.n_qubits == 0 || ir.n_qubits > MAX_QUBITS {
        return Err(ValidationError::QubitCount { n_qubits: ir.n_qubits });
    }
    let mut u = Unroller {
        ir,
        n_inputs,
        env: Vec::new(),
        gates: Vec::new(),
        measurements: Vec::new(),
    };
    u.body(&ir.body)?;
    u.measure(&ir.measurements)?;
    if u.measurements.len() != q_out {
        return Err(ValidationError::MeasurementCount {
            found: u.measurements.len(),
            expected: q_out,
        });
    }
    let mut warnings = Vec::new();
    if ir.n_qubits > RECOMMENDED_MAX_QUBITS {
        warnings.push(format!(
            "n_qubits = {} is above the recommended maximum of {}; training will be slow",
            ir.n_qubits, RECOMMENDED_MAX_QUBITS
        ));
    }
    Ok(FlatCircuit {
        n_qubits: ir.n_qubits,
        weights_shape: ir.weights_shape.clone(),
        n_inputs,
        gates: u.gates,
        measurements: u.measurements,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CircuitStats {
    pub gate_count: usize,
    pub depth: usize,
    pub vqc_param_count: usize,
}

/// Gate count (measurements excluded), dependency depth and weight count.
pub fn circuit_stats(fc: &FlatCircuit) -> CircuitStats {
    let mut level = vec![0usize; fc.n_qubits];
    let mut depth = 0;
    for g in &fc.gates {
        let d = 1 + g.wires.iter().map(|w| level[*w]).max().unwrap_or(0);
        for w in &g.wires {
            level[*w] = d;
        }
        depth = depth.max(d);
    }
    CircuitStats {
        gate_count: fc.gates.len(),
        depth,
        vqc_param_count: fc.n_weights(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::parse_circuit;

    fn doc(body: &str, measurements: &str, n_qubits: usize, shape: &str) -> CircuitIr {
        parse_circuit(&format!(
            r#"{{"n_qubits": {n_qubits}, "weights_shape": {shape}, "body": {body}, "measurements": {measurements}}}"#
        ))
        .unwrap()
    }

    const Z5: &str = r#"[{"for": "i", "range": [0, 5], "body": [{"observable": "PauliZ", "wire": "i"}]}]"#;

    #[test]
    fn measurement_count_mismatch() {
        let ir = doc("[]", Z5, 5, "[5]");
        assert!(unroll_and_validate(&ir, 5, 5).is_ok());
        let err = unroll_and_validate(&ir, 5, 4).unwrap_err();
        assert_eq!(err, ValidationError::MeasurementCount { found: 5, expected: 4 });
        assert!(err.to_string().contains("5 measurements but 4 outputs"));
    }

    #[test]
    fn weight_bounds() {
        let ok = doc(r#"[{"gate": "RY", "wires": [0], "angle": "weights[8, 4]"}]"#, "[]", 1, "[9, 5]");
        assert!(unroll_and_validate(&ok, 0, 0).is_ok());
        let bad = doc(r#"[{"gate": "RY", "wires": [0], "angle": "weights[9, 5]"}]"#, "[]", 1, "[9, 5]");
        let err = unroll_and_validate(&bad, 0, 0).unwrap_err();
        assert!(matches!(err, ValidationError::WeightIndex { .. }), "{err}");
        assert!(err.construct().unwrap().contains("weights[9, 5]"));
        let arity = doc(r#"[{"gate": "RY", "wires": [0], "angle": "weights[1]"}]"#, "[]", 1, "[9, 5]");
        assert!(matches!(
            unroll_and_validate(&arity, 0, 0).unwrap_err(),
            ValidationError::WeightArity { found: 1, expected: 2, .. }
        ));
    }

    #[test]
    fn error_paths() {
        let wire = doc(r#"[{"for": "i", "range": [0, 3], "body": [{"gate": "H", "wires": ["i + 1"]}]}]"#, "[]", 3, "[]");
        let err = unroll_and_validate(&wire, 0, 0).unwrap_err();
        assert!(matches!(err, ValidationError::WireOutOfRange { wire: 3, .. }));
        assert!(err.to_string().contains("i=2"), "{err}");

        let input = doc(r#"[{"gate": "RY", "wires": [0], "angle": "inputs[5]"}]"#, "[]", 1, "[]");
        assert!(matches!(
            unroll_and_validate(&input, 5, 0).unwrap_err(),
            ValidationError::InputIndex { index: 5, n_inputs: 5, .. }
        ));

        let same = doc(r#"[{"gate": "CNOT", "wires": [1, "3 % 2"]}]"#, "[]", 2, "[]");
        assert!(matches!(unroll_and_validate(&same, 0, 0).unwrap_err(), ValidationError::RepeatedWire { wire: 1, .. }));

        let step = doc(r#"[{"for": "i", "range": [0, 3, 0], "body": []}]"#, "[]", 1, "[]");
        assert!(matches!(unroll_and_validate(&step, 0, 0).unwrap_err(), ValidationError::ZeroStep { .. }));

        let huge = doc(
            r#"[{"for": "i", "range": [0, 1000], "body": [{"for": "j", "range": [0, 1000], "body": [{"gate": "H", "wires": [0]}]}]}]"#,
            "[]",
            1,
            "[]",
        );
        assert_eq!(unroll_and_validate(&huge, 0, 0).unwrap_err(), ValidationError::UnrollCap { limit: MAX_FLAT_GATES });

        let endless = doc(r#"[{"for": "i", "range": [0, 1000000000000], "body": []}]"#, "[]", 1, "[]");
        assert!(matches!(unroll_and_validate(&endless, 0, 0).unwrap_err(), ValidationError::UnrollCap { .. }));

        let div0 = doc(r#"[{"gate": "H", "wires": ["1 / 0"]}]"#, "[]", 2, "[]");
        assert!(matches!(unroll_and_validate(&div0, 0, 0).unwrap_err(), ValidationError::Eval { error: EvalError::DivisionByZero(_), .. }));

        let unbound = doc(r#"[{"gate": "H", "wires": ["k"]}]"#, "[]", 2, "[]");
        assert!(matches!(unroll_and_validate(&unbound, 0, 0).unwrap_err(), ValidationError::Eval { error: EvalError::UnknownVariable(_), .. }));

        let shadow = doc(r#"[{"for": "i", "range": [0, 2], "body": [{"for": "i", "range": [0, 2], "body": []}]}]"#, "[]", 1, "[]");
        assert!(matches!(unroll_and_validate(&shadow, 0, 0).unwrap_err(), ValidationError::ShadowedVariable { .. }));

        let big = doc("[]", "[]", 13, "[]");
        assert!(matches!(unroll_and_validate(&big, 0, 0).unwrap_err(), ValidationError::QubitCount { n_qubits: 13 }));
    }

    #[test]
    fn large_register_warns() {
        let ir = doc("[]", "[]", 10, "[]");
        let fc = unroll_and_validate(&ir, 0, 0).unwrap();
        assert_eq!(fc.warnings.len(), 1);
    }

    #[test]
    fn negative_step_and_n_qubits_builtin() {
        let ir = doc(
            r#"[{"for": "i", "range": ["n_qubits - 1", -1, -1], "body": [{"gate": "RX", "wires": ["i"], "angle": "pi * i / 4"}]}]"#,
            "[]",
            3,
            "[]",
        );
        let fc = unroll_and_validate(&ir, 0, 0).unwrap();
        let wires: Vec<usize> = fc.gates.iter().map(|g| g.wires[0]).collect();
        assert_eq!(wires, vec![2, 1, 0]);
        assert_eq!(fc.gates[0].angles[0], FlatAngle::Const(PI * 2.0 / 4.0));
    }

    #[test]
    fn empty_body_stats() {
        let ir = doc("[]", "[]", 2, "[3, 4]");
        let fc = unroll_and_validate(&ir, 0, 0).unwrap();
        assert_eq!(
            circuit_stats(&fc),
            CircuitStats {
                gate_count: 0,
                depth: 0,
                vqc_param_count: 12
            }
        );
    }

    #[test]
    fn angle_chain_rule() {
        // d/dw (0.8 * w0 * w1 - w1 / x0)
        let a = FlatAngle::Bin(
            BinOp::Sub,
            Box::new(FlatAngle::Bin(
                BinOp::Mul,
                Box::new(FlatAngle::Bin(BinOp::Mul, Box::new(FlatAngle::Const(0.8)), Box::new(FlatAngle::Weight(0)))),
                Box::new(FlatAngle::Weight(1)),
            )),
            Box::new(FlatAngle::Bin(BinOp::Div, Box::new(FlatAngle::Weight(1)), Box::new(FlatAngle::Input(0)))),
        );
        let (x, w) = ([2.0], [0.5, 3.0]);
        let (mut dx, mut dw) = ([0.0], [0.0, 0.0]);
        a.backprop(&x, &w, 1.0, &mut dx, &mut dw);
        assert!((dw[0] - 0.8 * 3.0).abs() < 1e-15);
        assert!((dw[1] - (0.8 * 0.5 - 0.5)).abs() < 1e-15);
        assert!((dx[0] - 3.0 / 4.0).abs() < 1e-15);
    }
}
