//! Noiseless statevector simulation and adjoint-method gradients.
//!
//! Amplitudes are stored in double precision with qubit 0 as the most
//! significant bit of the basis-state index. Gate conventions follow the
//! usual rotation definitions `R_P(t) = exp(-i t P / 2)`; `ROT(a, b, c)`
//! applies `RZ(a)`, then `RY(b)`, then `RZ(c)`.

use num_complex::Complex64;

use crate::circuit::{FlatCircuit, GateKind, Observable};

type Mat2 = [[Complex64; 2]; 2];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Self {
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[0] = ONE;
        StateVector { n_qubits, amps }
    }

    pub fn from_amplitudes(n_qubits: usize, amps: Vec<Complex64>) -> Self {
        assert_eq!(amps.len(), 1 << n_qubits, "amplitude count must be 2^n_qubits");
        StateVector { n_qubits, amps }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    fn stride(&self, wire: usize) -> usize {
        debug_assert!(wire < self.n_qubits);
        1 << (self.n_qubits - 1 - wire)
    }

    /// Calls `f(i0, i1)` for every index pair differing only in `wire`'s bit.
    #[inline]
    fn for_pairs(&self, wire: usize, mut f: impl FnMut(usize, usize)) {
        let stride = self.stride(wire);
        let dim = self.amps.len();
        let mut base = 0;
        while base < dim {
            for i in base..base + stride {
                f(i, i + stride);
            }
            base += 2 * stride;
        }
    }

    pub fn apply_matrix(&mut self, wire: usize, m: &Mat2) {
        let stride = self.stride(wire);
        let dim = self.amps.len();
        let amps = &mut self.amps;
        let mut base = 0;
        while base < dim {
            for i in base..base + stride {
                let (a0, a1) = (amps[i], amps[i + stride]);
                amps[i] = m[0][0] * a0 + m[0][1] * a1;
                amps[i + stride] = m[1][0] * a0 + m[1][1] * a1;
            }
            base += 2 * stride;
        }
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) {
        let (cs, ts) = (self.stride(control), self.stride(target));
        for i in 0..self.amps.len() {
            if i & cs != 0 && i & ts == 0 {
                self.amps.swap(i, i | ts);
            }
        }
    }

    pub fn apply_cz(&mut self, a: usize, b: usize) {
        let mask = self.stride(a) | self.stride(b);
        for (i, amp) in self.amps.iter_mut().enumerate() {
            if i & mask == mask {
                *amp = -*amp;
            }
        }
    }

    /// Applies one gate; `angles` must match the gate's arity.
    pub fn apply_gate(&mut self, kind: GateKind, wires: &[usize], angles: &[f64]) {
        match kind {
            GateKind::CNOT => self.apply_cnot(wires[0], wires[1]),
            GateKind::CZ => self.apply_cz(wires[0], wires[1]),
            _ => self.apply_matrix(wires[0], &single_qubit_matrix(kind, angles)),
        }
    }

    /// Applies the inverse of a gate.
    pub fn apply_gate_inverse(&mut self, kind: GateKind, wires: &[usize], angles: &[f64]) {
        match kind {
            GateKind::RX | GateKind::RY | GateKind::RZ => {
                self.apply_matrix(wires[0], &single_qubit_matrix(kind, &[-angles[0]]))
            }
            GateKind::ROT => {
                self.apply_matrix(wires[0], &rz(-angles[2]));
                self.apply_matrix(wires[0], &ry(-angles[1]));
                self.apply_matrix(wires[0], &rz(-angles[0]));
            }
            // H, X, CNOT and CZ are self-inverse
            _ => self.apply_gate(kind, wires, angles),
        }
    }

    pub fn apply_pauli(&mut self, obs: Observable, wire: usize) {
        match obs {
            Observable::PauliX => self.for_pairs_mut(wire, |a0, a1| std::mem::swap(a0, a1)),
            Observable::PauliY => self.for_pairs_mut(wire, |a0, a1| {
                let (x, y) = (*a0, *a1);
                *a0 = Complex64::new(y.im, -y.re); // -i * y
                *a1 = Complex64::new(-x.im, x.re); // i * x
            }),
            Observable::PauliZ => self.for_pairs_mut(wire, |_, a1| *a1 = -*a1),
        }
    }

    fn for_pairs_mut(&mut self, wire: usize, mut f: impl FnMut(&mut Complex64, &mut Complex64)) {
        let stride = self.stride(wire);
        let dim = self.amps.len();
        let mut base = 0;
        while base < dim {
            let (lo, hi) = self.amps[base..base + 2 * stride].split_at_mut(stride);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                f(a0, a1);
            }
            base += 2 * stride;
        }
    }

    /// `<psi| P_wire |psi>`.
    pub fn expectation(&self, obs: Observable, wire: usize) -> f64 {
        let mut acc = 0.0;
        let a = &self.amps;
        match obs {
            Observable::PauliZ => self.for_pairs(wire, |i0, i1| acc += a[i0].norm_sqr() - a[i1].norm_sqr()),
            Observable::PauliX => self.for_pairs(wire, |i0, i1| acc += 2.0 * (a[i0].conj() * a[i1]).re),
            Observable::PauliY => self.for_pairs(wire, |i0, i1| acc += 2.0 * (a[i0].conj() * a[i1]).im),
        }
        acc
    }

    /// `Im <bra| P_wire |self>`; the derivative kernel of a Pauli rotation.
    fn im_pauli_overlap(&self, bra: &StateVector, obs: Observable, wire: usize) -> f64 {
        let (l, k) = (&bra.amps, &self.amps);
        let mut acc = 0.0;
        match obs {
            Observable::PauliZ => self.for_pairs(wire, |i0, i1| {
                acc += (l[i0].conj() * k[i0]).im - (l[i1].conj() * k[i1]).im
            }),
            Observable::PauliX => self.for_pairs(wire, |i0, i1| {
                acc += (l[i0].conj() * k[i1]).im + (l[i1].conj() * k[i0]).im
            }),
            // Y|k> = (-i k1, i k0)
            Observable::PauliY => self.for_pairs(wire, |i0, i1| {
                acc += -(l[i0].conj() * k[i1]).re + (l[i1].conj() * k[i0]).re
            }),
        }
        acc
    }
}

pub fn rx(t: f64) -> Mat2 {
    let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
    [
        [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
        [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
    ]
}

pub fn ry(t: f64) -> Mat2 {
    let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
    [
        [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
        [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
    ]
}

pub fn rz(t: f64) -> Mat2 {
    let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
    [[Complex64::new(c, -s), ZERO], [ZERO, Complex64::new(c, s)]]
}

fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[ZERO; 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

/// 2x2 unitary of a single-qubit gate.
pub fn single_qubit_matrix(kind: GateKind, angles: &[f64]) -> Mat2 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    match kind {
        GateKind::H => [
            [Complex64::new(h, 0.0), Complex64::new(h, 0.0)],
            [Complex64::new(h, 0.0), Complex64::new(-h, 0.0)],
        ],
        GateKind::X => [[ZERO, ONE], [ONE, ZERO]],
        GateKind::RX => rx(angles[0]),
        GateKind::RY => ry(angles[0]),
        GateKind::RZ => rz(angles[0]),
        GateKind::ROT => matmul(&rz(angles[2]), &matmul(&ry(angles[1]), &rz(angles[0]))),
        GateKind::CNOT | GateKind::CZ => panic!("{} is not a single-qubit gate", kind.name()),
    }
}

fn gate_angles(fc: &FlatCircuit, inputs: &[f64], weights: &[f64]) -> Vec<Vec<f64>> {
    fc.gates
        .iter()
        .map(|g| g.angles.iter().map(|a| a.eval(inputs, weights)).collect())
        .collect()
}

fn check_shapes(fc: &FlatCircuit, inputs: &[f64], weights: &[f64]) {
    assert_eq!(inputs.len(), fc.n_inputs, "input length must match the circuit");
    assert_eq!(weights.len(), fc.n_weights(), "weight count must match weights_shape");
}

/// Final state prepared from `|0...0>`.
pub fn run_state(fc: &FlatCircuit, inputs: &[f64], weights: &[f64]) -> StateVector {
    check_shapes(fc, inputs, weights);
    let mut psi = StateVector::zero(fc.n_qubits);
    for (g, angles) in fc.gates.iter().zip(gate_angles(fc, inputs, weights)) {
        psi.apply_gate(g.kind, &g.wires, &angles);
    }
    psi
}

/// One expectation value per measurement, in measurement order.
pub fn simulate_expectations(fc: &FlatCircuit, inputs: &[f64], weights: &[f64]) -> Vec<f64> {
    let psi = run_state(fc, inputs, weights);
    fc.measurements
        .iter()
        .map(|m| psi.expectation(m.observable, m.wire))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientResult {
    /// Row-major, same layout as the weight tensor.
    pub d_weights: Vec<f64>,
    pub d_inputs: Vec<f64>,
}

/// Expectations together with the gradient of `sum_k upstream[k] * <O_k>`.
pub fn expectations_and_gradients(
    fc: &FlatCircuit,
    inputs: &[f64],
    weights: &[f64],
    upstream: &[f64],
) -> (Vec<f64>, GradientResult) {
    check_shapes(fc, inputs, weights);
    assert_eq!(upstream.len(), fc.measurements.len(), "one upstream value per measurement");
    let angles = gate_angles(fc, inputs, weights);
    let mut psi = StateVector::zero(fc.n_qubits);
    for (g, a) in fc.gates.iter().zip(&angles) {
        psi.apply_gate(g.kind, &g.wires, a);
    }
    let values: Vec<f64> = fc
        .measurements
        .iter()
        .map(|m| psi.expectation(m.observable, m.wire))
        .collect();

    // lambda = sum_k u_k O_k |psi>
    let mut lambda = StateVector::from_amplitudes(fc.n_qubits, vec![ZERO; psi.amps.len()]);
    for (m, u) in fc.measurements.iter().zip(upstream) {
        if *u == 0.0 {
            continue;
        }
        let mut term = psi.clone();
        term.apply_pauli(m.observable, m.wire);
        for (l, t) in lambda.amps.iter_mut().zip(&term.amps) {
            *l += t * *u;
        }
    }

    let mut d_inputs = vec![0.0; fc.n_inputs];
    let mut d_weights = vec![0.0; fc.n_weights()];
    for (g, a) in fc.gates.iter().zip(&angles).rev() {
        let w = g.wires[0];
        match g.kind {
            GateKind::RX | GateKind::RY | GateKind::RZ => {
                let obs = generator(g.kind);
                let d = psi.im_pauli_overlap(&lambda, obs, w);
                psi.apply_matrix(w, &single_qubit_matrix(g.kind, &[-a[0]]));
                lambda.apply_matrix(w, &single_qubit_matrix(g.kind, &[-a[0]]));
                g.angles[0].backprop(inputs, weights, d, &mut d_inputs, &mut d_weights);
            }
            GateKind::ROT => {
                // walk back through RZ(c), RY(b), RZ(a)
                let steps = [(2, Observable::PauliZ), (1, Observable::PauliY), (0, Observable::PauliZ)];
                for (k, obs) in steps {
                    let d = psi.im_pauli_overlap(&lambda, obs, w);
                    let undo = match obs {
                        Observable::PauliY => ry(-a[k]),
                        _ => rz(-a[k]),
                    };
                    psi.apply_matrix(w, &undo);
                    lambda.apply_matrix(w, &undo);
                    g.angles[k].backprop(inputs, weights, d, &mut d_inputs, &mut d_weights);
                }
            }
            _ => {
                psi.apply_gate_inverse(g.kind, &g.wires, a);
                lambda.apply_gate_inverse(g.kind, &g.wires, a);
            }
        }
    }
    (values, GradientResult { d_weights, d_inputs })
}

/// Gradient of `sum_k upstream[k] * <O_k>` with respect to weights and inputs,
/// from one forward pass and one reverse sweep.
pub fn adjoint_gradients(fc: &FlatCircuit, inputs: &[f64], weights: &[f64], upstream: &[f64]) -> GradientResult {
    expectations_and_gradients(fc, inputs, weights, upstream).1
}

fn generator(kind: GateKind) -> Observable {
    match kind {
        GateKind::RX => Observable::PauliX,
        GateKind::RY => Observable::PauliY,
        GateKind::RZ => Observable::PauliZ,
        _ => unreachable!("only Pauli rotations have a single generator"),
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use super::*;
    use crate::circuit::{parse_circuit, unroll_and_validate};

    fn flat(doc: &str, n_inputs: usize) -> FlatCircuit {
        let ir = parse_circuit(doc).unwrap();
        let q_out = match unroll_and_validate(&ir, n_inputs, usize::MAX) {
            Err(crate::circuit::ValidationError::MeasurementCount { found, .. }) => found,
            other => panic!("unexpected {other:?}"),
        };
        unroll_and_validate(&ir, n_inputs, q_out).unwrap()
    }

    #[test]
    fn hadamard_z_is_zero() {
        let fc = flat(
            r#"{"n_qubits": 1, "weights_shape": [], "body": [{"gate": "H", "wires": [0]}],
                "measurements": [{"observable": "PauliZ", "wire": 0}]}"#,
            0,
        );
        assert!(simulate_expectations(&fc, &[], &[])[0].abs() < 1e-15);
    }

    #[test]
    fn ry_pi_flips() {
        let fc = flat(
            r#"{"n_qubits": 1, "weights_shape": [], "body": [{"gate": "RY", "wires": [0], "angle": "pi"}],
                "measurements": [{"observable": "PauliZ", "wire": 0}]}"#,
            0,
        );
        assert!((simulate_expectations(&fc, &[], &[])[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn qubit_zero_is_most_significant() {
        let mut psi = StateVector::zero(3);
        psi.apply_gate(GateKind::X, &[0], &[]);
        assert_eq!(psi.amplitudes()[0b100], ONE);
    }

    #[test]
    fn single_weight_derivative() {
        let fc = flat(
            r#"{"n_qubits": 1, "weights_shape": [1], "body": [{"gate": "RY", "wires": [0], "angle": "weights[0]"}],
                "measurements": [{"observable": "PauliZ", "wire": 0}]}"#,
            0,
        );
        let g = adjoint_gradients(&fc, &[], &[FRAC_PI_2], &[1.0]);
        assert!((g.d_weights[0] + 1.0).abs() < 1e-14);
        for w in [0.3, 1.7, -2.2] {
            let g = adjoint_gradients(&fc, &[], &[w], &[1.0]);
            assert!((g.d_weights[0] + f64::sin(w)).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_input_scaling_chain_rule() {
        let scaled = flat(
            r#"{"n_qubits": 1, "weights_shape": [], "body": [{"gate": "RX", "wires": [0], "angle": "inputs[0] * 0.8"}],
                "measurements": [{"observable": "PauliZ", "wire": 0}]}"#,
            1,
        );
        let raw = flat(
            r#"{"n_qubits": 1, "weights_shape": [], "body": [{"gate": "RX", "wires": [0], "angle": "inputs[0]"}],
                "measurements": [{"observable": "PauliZ", "wire": 0}]}"#,
            1,
        );
        let x = 0.9;
        let g_scaled = adjoint_gradients(&scaled, &[x], &[], &[1.0]).d_inputs[0];
        let g_raw = adjoint_gradients(&raw, &[x * 0.8], &[], &[1.0]).d_inputs[0];
        assert!((g_scaled - 0.8 * g_raw).abs() < 1e-15);
    }

    #[test]
    fn rot_matches_three_rotations() {
        let (a, b, c) = (0.3, -1.1, 2.4);
        let mut fused = StateVector::zero(1);
        fused.apply_gate(GateKind::H, &[0], &[]);
        let mut seq = fused.clone();
        fused.apply_gate(GateKind::ROT, &[0], &[a, b, c]);
        seq.apply_gate(GateKind::RZ, &[0], &[a]);
        seq.apply_gate(GateKind::RY, &[0], &[b]);
        seq.apply_gate(GateKind::RZ, &[0], &[c]);
        for (x, y) in fused.amplitudes().iter().zip(seq.amplitudes()) {
            assert!((x - y).norm() < 1e-15);
        }
    }

    #[test]
    fn inverse_undoes_every_gate() {
        let mut psi = StateVector::zero(3);
        psi.apply_gate(GateKind::H, &[0], &[]);
        psi.apply_gate(GateKind::RX, &[1], &[0.4]);
        let before = psi.clone();
        let gates: [(GateKind, Vec<usize>, Vec<f64>); 6] = [
            (GateKind::RY, vec![2], vec![1.3]),
            (GateKind::ROT, vec![0], vec![0.1, 0.2, 0.3]),
            (GateKind::CNOT, vec![0, 2], vec![]),
            (GateKind::CZ, vec![1, 0], vec![]),
            (GateKind::X, vec![1], vec![]),
            (GateKind::RZ, vec![1], vec![PI / 3.0]),
        ];
        for (k, w, a) in &gates {
            psi.apply_gate(*k, w, a);
        }
        for (k, w, a) in gates.iter().rev() {
            psi.apply_gate_inverse(*k, w, a);
        }
        for (x, y) in psi.amplitudes().iter().zip(before.amplitudes()) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn pauli_expectations_of_known_states() {
        // RY(pi/2)|0> = |+>: <X> = 1; RX(-pi/2)|0> = |+i>: <Y> = 1
        let mut plus = StateVector::zero(1);
        plus.apply_gate(GateKind::RY, &[0], &[FRAC_PI_2]);
        assert!((plus.expectation(Observable::PauliX, 0) - 1.0).abs() < 1e-15);
        let mut plus_i = StateVector::zero(1);
        plus_i.apply_gate(GateKind::RX, &[0], &[-FRAC_PI_2]);
        assert!((plus_i.expectation(Observable::PauliY, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unreferenced_parameters_have_zero_gradient() {
        let fc = flat(
            r#"{"n_qubits": 2, "weights_shape": [3], "body": [
                {"gate": "RY", "wires": [0], "angle": "weights[0] + inputs[1]"},
                {"gate": "CNOT", "wires": [0, 1]},
                {"gate": "RX", "wires": [1], "angle": "weights[2]"}],
                "measurements": [{"observable": "PauliZ", "wire": 1}]}"#,
            3,
        );
        let g = adjoint_gradients(&fc, &[0.1, 0.2, 0.3], &[0.4, 0.5, 0.6], &[1.0]);
        assert_eq!(g.d_weights[1], 0.0);
        assert_eq!(g.d_inputs[0], 0.0);
        assert_eq!(g.d_inputs[2], 0.0);
        assert!(g.d_weights[0] != 0.0);
    }
}
