//! Test-only oracles shared by the integration suites. Nothing here calls the
//! library's gate kernels: matrices are written out independently and the
//! whole register unitary is built by Kronecker products.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqclab_core::circuit::{BinOp, FlatAngle, FlatCircuit, FlatGate, FlatMeasurement, GateKind, Observable};

pub type Dense = Vec<Vec<C>>;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

pub fn identity(dim: usize) -> Dense {
    (0..dim)
        .map(|r| (0..dim).map(|k| if r == k { c(1.0, 0.0) } else { c(0.0, 0.0) }).collect())
        .collect()
}

pub fn kron(a: &Dense, b: &Dense) -> Dense {
    let (na, nb) = (a.len(), b.len());
    let mut out = vec![vec![c(0.0, 0.0); na * nb]; na * nb];
    for i in 0..na {
        for j in 0..na {
            for k in 0..nb {
                for l in 0..nb {
                    out[i * nb + k][j * nb + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let mut out = vec![vec![c(0.0, 0.0); n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] == c(0.0, 0.0) {
                continue;
            }
            for j in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn add(a: &Dense, b: &Dense) -> Dense {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
        .collect()
}

/// exp(-i t P / 2) = cos(t/2) I - i sin(t/2) P
fn pauli_rotation(p: &Dense, t: f64) -> Dense {
    let (co, si) = ((t / 2.0).cos(), (t / 2.0).sin());
    let mut out = identity(2);
    for r in 0..2 {
        for k in 0..2 {
            out[r][k] = out[r][k] * co + c(0.0, -si) * p[r][k];
        }
    }
    out
}

pub fn pauli(obs: Observable) -> Dense {
    match obs {
        Observable::PauliX => vec![vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0), c(0.0, 0.0)]],
        Observable::PauliY => vec![vec![c(0.0, 0.0), c(0.0, -1.0)], vec![c(0.0, 1.0), c(0.0, 0.0)]],
        Observable::PauliZ => vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(-1.0, 0.0)]],
    }
}

fn one_qubit(kind: GateKind, angles: &[f64]) -> Dense {
    let s = 0.5f64.sqrt();
    match kind {
        GateKind::H => vec![vec![c(s, 0.0), c(s, 0.0)], vec![c(s, 0.0), c(-s, 0.0)]],
        GateKind::X => pauli(Observable::PauliX),
        GateKind::RX => pauli_rotation(&pauli(Observable::PauliX), angles[0]),
        GateKind::RY => pauli_rotation(&pauli(Observable::PauliY), angles[0]),
        GateKind::RZ => pauli_rotation(&pauli(Observable::PauliZ), angles[0]),
        GateKind::ROT => {
            let z = pauli(Observable::PauliZ);
            let y = pauli(Observable::PauliY);
            // RZ(a) acts first
            matmul(
                &pauli_rotation(&z, angles[2]),
                &matmul(&pauli_rotation(&y, angles[1]), &pauli_rotation(&z, angles[0])),
            )
        }
        _ => unreachable!(),
    }
}

/// Embeds single-wire operators into the full register; wire 0 is leftmost.
fn embed(n: usize, ops: &[(usize, Dense)]) -> Dense {
    let mut out = vec![vec![c(1.0, 0.0)]];
    for w in 0..n {
        let op = ops.iter().find(|(wire, _)| *wire == w).map(|(_, m)| m.clone()).unwrap_or_else(|| identity(2));
        out = kron(&out, &op);
    }
    out
}

pub fn gate_unitary(n: usize, kind: GateKind, wires: &[usize], angles: &[f64]) -> Dense {
    let p0 = vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 0.0)]];
    let p1 = vec![vec![c(0.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]];
    match kind {
        GateKind::CNOT => add(
            &embed(n, &[(wires[0], p0)]),
            &embed(n, &[(wires[0], p1), (wires[1], pauli(Observable::PauliX))]),
        ),
        GateKind::CZ => add(
            &embed(n, &[(wires[0], p0)]),
            &embed(n, &[(wires[0], p1), (wires[1], pauli(Observable::PauliZ))]),
        ),
        _ => embed(n, &[(wires[0], one_qubit(kind, angles))]),
    }
}

/// Expectations computed from the product of all dense gate unitaries.
pub fn dense_expectations(fc: &FlatCircuit, inputs: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = fc.n_qubits;
    let mut u = identity(1 << n);
    for g in &fc.gates {
        let angles: Vec<f64> = g.angles.iter().map(|a| a.eval(inputs, weights)).collect();
        u = matmul(&gate_unitary(n, g.kind, &g.wires, &angles), &u);
    }
    let psi: Vec<C> = u.iter().map(|row| row[0]).collect();
    fc.measurements
        .iter()
        .map(|m| {
            let o = embed(n, &[(m.wire, pauli(m.observable))]);
            let mut acc = c(0.0, 0.0);
            for i in 0..psi.len() {
                for j in 0..psi.len() {
                    acc += psi[i].conj() * o[i][j] * psi[j];
                }
            }
            acc.re
        })
        .collect()
}

pub fn weighted_sum(values: &[f64], upstream: &[f64]) -> f64 {
    values.iter().zip(upstream).map(|(v, u)| v * u).sum()
}

/// Central differences of `sum_k u_k <O_k>` using the dense oracle.
pub fn finite_difference(fc: &FlatCircuit, inputs: &[f64], weights: &[f64], upstream: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let f = |x: &[f64], w: &[f64]| weighted_sum(&dense_expectations(fc, x, w), upstream);
    let mut dw = vec![0.0; weights.len()];
    for k in 0..weights.len() {
        let (mut p, mut m) = (weights.to_vec(), weights.to_vec());
        p[k] += h;
        m[k] -= h;
        dw[k] = (f(inputs, &p) - f(inputs, &m)) / (2.0 * h);
    }
    let mut dx = vec![0.0; inputs.len()];
    for k in 0..inputs.len() {
        let (mut p, mut m) = (inputs.to_vec(), inputs.to_vec());
        p[k] += h;
        m[k] -= h;
        dx[k] = (f(&p, weights) - f(&m, weights)) / (2.0 * h);
    }
    (dw, dx)
}

/// Parameter-shift gradient with respect to weights. Valid when every weight
/// is the bare angle of at most one rotation.
pub fn parameter_shift(fc: &FlatCircuit, inputs: &[f64], weights: &[f64], upstream: &[f64]) -> Vec<f64> {
    let f = |w: &[f64]| weighted_sum(&dense_expectations(fc, inputs, w), upstream);
    (0..weights.len())
        .map(|k| {
            let (mut p, mut m) = (weights.to_vec(), weights.to_vec());
            p[k] += PI / 2.0;
            m[k] -= PI / 2.0;
            (f(&p) - f(&m)) / 2.0
        })
        .collect()
}

/// Error scaled by the magnitude of the reference, floored at 1 so that
/// vanishing gradients are compared absolutely.
pub fn rel_err(a: f64, reference: f64) -> f64 {
    (a - reference).abs() / reference.abs().max(1.0)
}

pub struct RandomCircuit {
    pub fc: FlatCircuit,
    pub inputs: Vec<f64>,
    pub weights: Vec<f64>,
    pub upstream: Vec<f64>,
}

#[derive(Clone, Copy)]
pub enum AngleStyle {
    /// Sums, products and scalings of inputs and weights; leaves may repeat.
    Mixed,
    /// Every rotation angle is a distinct bare weight.
    DistinctWeights,
}

fn random_angle(rng: &mut ChaCha8Rng, n_inputs: usize, n_weights: usize, depth: u32) -> FlatAngle {
    let leaf = |rng: &mut ChaCha8Rng| match rng.random_range(0..3) {
        0 => FlatAngle::Input(rng.random_range(0..n_inputs)),
        1 => FlatAngle::Weight(rng.random_range(0..n_weights)),
        _ => FlatAngle::Const(rng.random_range(-2.0..2.0)),
    };
    if depth == 0 || rng.random_bool(0.4) {
        return leaf(rng);
    }
    let a = Box::new(random_angle(rng, n_inputs, n_weights, depth - 1));
    match rng.random_range(0..5) {
        0 => FlatAngle::Neg(a),
        1 => FlatAngle::Bin(BinOp::Add, a, Box::new(random_angle(rng, n_inputs, n_weights, depth - 1))),
        2 => FlatAngle::Bin(BinOp::Sub, a, Box::new(random_angle(rng, n_inputs, n_weights, depth - 1))),
        3 => FlatAngle::Bin(BinOp::Mul, a, Box::new(random_angle(rng, n_inputs, n_weights, depth - 1))),
        _ => FlatAngle::Bin(BinOp::Div, a, Box::new(FlatAngle::Const(rng.random_range(0.5..3.0)))),
    }
}

pub fn random_circuit(seed: u64, max_qubits: usize, max_gates: usize, style: AngleStyle) -> RandomCircuit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_qubits);
    let n_gates = rng.random_range(0..=max_gates);
    let n_inputs = rng.random_range(1..=4);
    let mut kinds: Vec<GateKind> = Vec::with_capacity(n_gates);
    for _ in 0..n_gates {
        let mut k = GateKind::ALL[rng.random_range(0..GateKind::ALL.len())];
        while n < 2 && k.n_wires() == 2 {
            k = GateKind::ALL[rng.random_range(0..GateKind::ALL.len())];
        }
        kinds.push(k);
    }
    let n_rot_angles: usize = kinds.iter().map(|k| k.n_angles()).sum();
    let n_weights = match style {
        AngleStyle::Mixed => rng.random_range(1..=6),
        AngleStyle::DistinctWeights => n_rot_angles,
    };
    let mut next_weight = 0;
    let mut gates = Vec::with_capacity(n_gates);
    for kind in kinds {
        let wires = if kind.n_wires() == 2 {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n);
            while b == a {
                b = rng.random_range(0..n);
            }
            vec![a, b]
        } else {
            vec![rng.random_range(0..n)]
        };
        let angles = (0..kind.n_angles())
            .map(|_| match style {
                AngleStyle::Mixed => random_angle(&mut rng, n_inputs, n_weights, 2),
                AngleStyle::DistinctWeights => {
                    next_weight += 1;
                    FlatAngle::Weight(next_weight - 1)
                }
            })
            .collect();
        gates.push(FlatGate { kind, wires, angles });
    }
    let obs = [Observable::PauliX, Observable::PauliY, Observable::PauliZ];
    let n_meas = rng.random_range(1..=n + 1);
    let measurements = (0..n_meas)
        .map(|_| FlatMeasurement {
            observable: obs[rng.random_range(0..3)],
            wire: rng.random_range(0..n),
        })
        .collect();
    let weights_shape = if n_weights == 0 { vec![] } else { vec![n_weights] };
    RandomCircuit {
        fc: FlatCircuit {
            n_qubits: n,
            weights_shape,
            n_inputs,
            gates,
            measurements,
            warnings: vec![],
        },
        inputs: (0..n_inputs).map(|_| rng.random_range(0.0..PI)).collect(),
        weights: (0..n_weights).map(|_| rng.random_range(0.0..2.0 * PI)).collect(),
        upstream: (0..n_meas).map(|_| rng.random_range(-1.5..1.5)).collect(),
    }
}

/// Loads a fixture document from `tests/fixtures`.
pub fn fixture(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Worst relative error between tape gradients of the batch MSE and central
/// differences, over every parameter entry of `model`.
pub fn model_gradient_error(model: &mut vqclab_core::arch::Model, batch: &[Vec<f64>], target: &[f64], h: f64) -> f64 {
    use vqclab_core::nn::Tape;
    fn loss(model: &vqclab_core::arch::Model, batch: &[Vec<f64>], target: &[f64]) -> (Tape, vqclab_core::nn::NodeId) {
        let rows: Vec<&[f64]> = batch.iter().map(Vec::as_slice).collect();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &rows).unwrap();
        let l = tape.mse(out, target).unwrap();
        (tape, l)
    }
    let (tape, l) = loss(model, batch, target);
    model.params.zero_grad();
    tape.backward(l).accumulate_into(&mut model.params);
    let mut worst: f64 = 0.0;
    for p in 0..model.params.len() {
        for j in 0..model.params.get(p).value.len() {
            let analytic = model.params.get(p).grad[j];
            let orig = model.params.get(p).value[j];
            model.params.get_mut(p).value[j] = orig + h;
            let (tp, lp) = loss(model, batch, target);
            model.params.get_mut(p).value[j] = orig - h;
            let (tm, lm) = loss(model, batch, target);
            model.params.get_mut(p).value[j] = orig;
            let fd = (tp.value(lp).data[0] - tm.value(lm).data[0]) / (2.0 * h);
            worst = worst.max((analytic - fd).abs() / fd.abs().max(1e-3));
        }
    }
    worst
}

/// Deterministic pseudo-random feature rows in [0, 1].
pub fn toy_batch(seed: u64, rows: usize, width: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = (0..rows).map(|_| (0..width).map(|_| rng.random::<f64>()).collect()).collect();
    let target = (0..rows).map(|_| rng.random::<f64>()).collect();
    (batch, target)
}
