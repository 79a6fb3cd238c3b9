use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use super::{sigmoid, NnError, ParamStore, Tensor};
use crate::circuit::FlatCircuit;
use crate::sim::{expectations_and_gradients, simulate_expectations};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Sigmoid(NodeId),
    LeakyRelu(NodeId, f64),
    Scale(NodeId, f64),
    ScaleToPi(NodeId),
    Conv1d { x: NodeId, w: NodeId, b: Option<NodeId>, pad: usize },
    Add(NodeId, NodeId),
    AvgPool { x: NodeId },
    Reshape(NodeId),
    Unfold { x: NodeId, kernel: usize, stride: usize },
    WindowsToChannels { x: NodeId, batch: usize },
    Quantum { x: NodeId, w: Option<NodeId>, circuit: Arc<FlatCircuit> },
    Mse { pred: NodeId, target: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> NnError {
    NnError::Shape { op, left: left.to_vec(), right: right.to_vec() }
}

/// PyTorch bin boundaries for adaptive average pooling.
fn pool_bins(len: usize, out: usize) -> Vec<(usize, usize)> {
    (0..out).map(|i| ((i * len) / out, ((i + 1) * len).div_ceil(out))).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, idx: usize) -> NodeId {
        let p = store.get(idx);
        let t = Tensor { shape: p.shape.clone(), data: p.value.clone() };
        self.push(t, Op::Param(idx))
    }

    /// `x [n, in] -> x W^T + b` with `W [out, in]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId, NnError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err("linear", xs, ws));
        }
        let (n, inp, out) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(shape_err("linear bias", self.shape(b), &[out]));
            }
        }
        let (xv, wv) = (&self.value(x).data, &self.value(w).data);
        let bv = b.map(|b| &self.value(b).data);
        let mut y = vec![0.0; n * out];
        for r in 0..n {
            for o in 0..out {
                let mut acc = bv.map_or(0.0, |b| b[o]);
                for i in 0..inp {
                    acc += xv[r * inp + i] * wv[o * inp + i];
                }
                y[r * out + o] = acc;
            }
        }
        Ok(self.push(Tensor { shape: vec![n, out], data: y }, Op::Linear { x, w, b }))
    }

    fn map(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let v = self.value(x);
        let t = Tensor { shape: v.shape.clone(), data: v.data.iter().map(|&a| f(a)).collect() };
        self.push(t, op)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.map(x, |a| if a > 0.0 { a } else { slope * a }, Op::LeakyRelu(x, slope))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.map(x, |a| c * a, Op::Scale(x, c))
    }

    /// `pi * sigmoid(x)`, a smooth squashing onto `(0, pi)`.
    pub fn scale_to_pi(&mut self, x: NodeId) -> NodeId {
        self.map(x, |a| PI * sigmoid(a), Op::ScaleToPi(x))
    }

    /// `x [b, c_in, len]`, `w [c_out, c_in, k]`, zero padding `pad` on both sides.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, pad: usize) -> Result<NodeId, NnError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || xs[2] + 2 * pad < ws[2] {
            return Err(shape_err("conv1d", &xs, &ws));
        }
        let (bn, cin, len, cout, k) = (xs[0], xs[1], xs[2], ws[0], ws[2]);
        let lout = len + 2 * pad - k + 1;
        let (xv, wv) = (&self.value(x).data, &self.value(w).data);
        let bv = b.map(|b| &self.value(b).data);
        let mut y = vec![0.0; bn * cout * lout];
        for bi in 0..bn {
            for o in 0..cout {
                for t in 0..lout {
                    let mut acc = bv.map_or(0.0, |b| b[o]);
                    for c in 0..cin {
                        for j in 0..k {
                            let src = t + j;
                            if src < pad || src - pad >= len {
                                continue;
                            }
                            acc += wv[(o * cin + c) * k + j] * xv[(bi * cin + c) * len + src - pad];
                        }
                    }
                    y[(bi * cout + o) * lout + t] = acc;
                }
            }
        }
        Ok(self.push(Tensor { shape: vec![bn, cout, lout], data: y }, Op::Conv1d { x, w, b, pad }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let t = Tensor { shape: av.shape.clone(), data: av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect() };
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// `[b, c, len] -> [b, c, out_len]`.
    pub fn adaptive_avg_pool(&mut self, x: NodeId, out_len: usize) -> Result<NodeId, NnError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || out_len == 0 {
            return Err(shape_err("adaptive_avg_pool", &xs, &[out_len]));
        }
        let (bn, c, len) = (xs[0], xs[1], xs[2]);
        let bins = pool_bins(len, out_len);
        let xv = &self.value(x).data;
        let mut y = vec![0.0; bn * c * out_len];
        for row in 0..bn * c {
            for (i, &(s, e)) in bins.iter().enumerate() {
                y[row * out_len + i] = xv[row * len + s..row * len + e].iter().sum::<f64>() / (e - s) as f64;
            }
        }
        Ok(self.push(Tensor { shape: vec![bn, c, out_len], data: y }, Op::AvgPool { x }))
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let n = v.shape.first().copied().unwrap_or(1);
        let rest = if n == 0 { 0 } else { v.len() / n };
        let t = Tensor { shape: vec![n, rest], data: v.data.clone() };
        self.push(t, Op::Reshape(x))
    }

    /// `[b, len] -> [b * windows, kernel]`, windows ordered by sample then position.
    pub fn unfold(&mut self, x: NodeId, kernel: usize, stride: usize) -> Result<NodeId, NnError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || kernel == 0 || stride == 0 || kernel > xs[1] {
            return Err(NnError::Invalid(format!(
                "unfold: cannot cut windows of size {kernel} with stride {stride} from shape {xs:?}"
            )));
        }
        let (bn, len) = (xs[0], xs[1]);
        let windows = (len - kernel) / stride + 1;
        let xv = &self.value(x).data;
        let mut y = Vec::with_capacity(bn * windows * kernel);
        for b in 0..bn {
            for w in 0..windows {
                y.extend_from_slice(&xv[b * len + w * stride..b * len + w * stride + kernel]);
            }
        }
        Ok(self.push(Tensor { shape: vec![bn * windows, kernel], data: y }, Op::Unfold { x, kernel, stride }))
    }

    /// `[batch * windows, c] -> [batch, c, windows]`.
    pub fn windows_to_channels(&mut self, x: NodeId, batch: usize) -> Result<NodeId, NnError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || batch == 0 || xs[0] % batch != 0 {
            return Err(shape_err("windows_to_channels", &xs, &[batch]));
        }
        let (windows, c) = (xs[0] / batch, xs[1]);
        let xv = &self.value(x).data;
        let mut y = vec![0.0; xv.len()];
        for b in 0..batch {
            for w in 0..windows {
                for ch in 0..c {
                    y[(b * c + ch) * windows + w] = xv[(b * windows + w) * c + ch];
                }
            }
        }
        Ok(self.push(Tensor { shape: vec![batch, c, windows], data: y }, Op::WindowsToChannels { x, batch }))
    }

    /// Runs the circuit on every row of `x [n, n_inputs]`, giving `[n, n_outputs]`.
    /// Rows are simulated in parallel; results are placed by row index so the
    /// output does not depend on scheduling.
    pub fn quantum(&mut self, x: NodeId, w: Option<NodeId>, circuit: Arc<FlatCircuit>) -> Result<NodeId, NnError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || xs[1] != circuit.n_inputs {
            return Err(shape_err("quantum", &xs, &[circuit.n_inputs]));
        }
        let weights: Vec<f64> = w.map(|w| self.value(w).data.clone()).unwrap_or_default();
        if weights.len() != circuit.n_weights() {
            return Err(shape_err("quantum weights", &[weights.len()], &circuit.weights_shape));
        }
        let (n, k, q) = (xs[0], xs[1], circuit.n_outputs());
        let xv = &self.value(x).data;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|r| simulate_expectations(&circuit, &xv[r * k..(r + 1) * k], &weights))
            .collect();
        let t = Tensor { shape: vec![n, q], data: rows.concat() };
        Ok(self.push(t, Op::Quantum { x, w, circuit }))
    }

    /// Mean of squared differences over all elements; a scalar node.
    pub fn mse(&mut self, pred: NodeId, target: &[f64]) -> Result<NodeId, NnError> {
        let p = &self.value(pred).data;
        if p.len() != target.len() || p.is_empty() {
            return Err(shape_err("mse", self.shape(pred), &[target.len()]));
        }
        let loss = p.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        Ok(self.push(Tensor { shape: vec![1], data: vec![loss] }, Op::Mse { pred, target: target.to_vec() }))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads, nodes: self.nodes.iter().map(|n| n.op.clone()).collect() }
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = &node.value.data;
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            let len = self.nodes[id.0].value.len();
            let slot = grads[id.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (n, inp, out) = (xs[0], xs[1], ws[0]);
                let (xv, wv) = (&self.value(*x).data, &self.value(*w).data);
                acc(*x, &mut |dx| {
                    for r in 0..n {
                        for o in 0..out {
                            let go = g[r * out + o];
                            for i in 0..inp {
                                dx[r * inp + i] += go * wv[o * inp + i];
                            }
                        }
                    }
                });
                acc(*w, &mut |dw| {
                    for r in 0..n {
                        for o in 0..out {
                            let go = g[r * out + o];
                            for i in 0..inp {
                                dw[o * inp + i] += go * xv[r * inp + i];
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    acc(*b, &mut |db| {
                        for r in 0..n {
                            for o in 0..out {
                                db[o] += g[r * out + o];
                            }
                        }
                    });
                }
            }
            Op::Sigmoid(x) => acc(*x, &mut |dx| {
                for i in 0..dx.len() {
                    dx[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }),
            Op::ScaleToPi(x) => acc(*x, &mut |dx| {
                for i in 0..dx.len() {
                    let s = y[i] / PI;
                    dx[i] += g[i] * PI * s * (1.0 - s);
                }
            }),
            Op::LeakyRelu(x, slope) => {
                let xv = &self.value(*x).data;
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += if xv[i] > 0.0 { g[i] } else { slope * g[i] };
                    }
                })
            }
            Op::Scale(x, c) => acc(*x, &mut |dx| {
                for i in 0..dx.len() {
                    dx[i] += c * g[i];
                }
            }),
            Op::Conv1d { x, w, b, pad } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (bn, cin, len, cout, k) = (xs[0], xs[1], xs[2], ws[0], ws[2]);
                let lout = node.value.shape[2];
                let (xv, wv) = (&self.value(*x).data, &self.value(*w).data);
                let visit = |f: &mut dyn FnMut(usize, usize, f64)| {
                    // f(x index, w index, upstream)
                    for bi in 0..bn {
                        for o in 0..cout {
                            for t in 0..lout {
                                let go = g[(bi * cout + o) * lout + t];
                                for c in 0..cin {
                                    for j in 0..k {
                                        let src = t + j;
                                        if src < *pad || src - pad >= len {
                                            continue;
                                        }
                                        f((bi * cin + c) * len + src - pad, (o * cin + c) * k + j, go);
                                    }
                                }
                            }
                        }
                    }
                };
                acc(*x, &mut |dx| visit(&mut |xi, wi, go| dx[xi] += go * wv[wi]));
                acc(*w, &mut |dw| visit(&mut |xi, wi, go| dw[wi] += go * xv[xi]));
                if let Some(b) = b {
                    acc(*b, &mut |db| {
                        for bi in 0..bn {
                            for o in 0..cout {
                                db[o] += g[(bi * cout + o) * lout..(bi * cout + o + 1) * lout].iter().sum::<f64>();
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    acc(*id, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                }
            }
            Op::AvgPool { x } => {
                let len = self.shape(*x)[2];
                let out = node.value.shape[2];
                let bins = pool_bins(len, out);
                acc(*x, &mut |dx| {
                    for row in 0..dx.len() / len {
                        for (i, &(s, e)) in bins.iter().enumerate() {
                            let share = g[row * out + i] / (e - s) as f64;
                            dx[row * len + s..row * len + e].iter_mut().for_each(|d| *d += share);
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::Unfold { x, kernel, stride } => {
                let len = self.shape(*x)[1];
                let windows = (len - kernel) / stride + 1;
                acc(*x, &mut |dx| {
                    for b in 0..dx.len() / len {
                        for w in 0..windows {
                            let row = (b * windows + w) * kernel;
                            for j in 0..*kernel {
                                dx[b * len + w * stride + j] += g[row + j];
                            }
                        }
                    }
                });
            }
            Op::WindowsToChannels { x, batch } => {
                let (c, windows) = (node.value.shape[1], node.value.shape[2]);
                acc(*x, &mut |dx| {
                    for b in 0..*batch {
                        for w in 0..windows {
                            for ch in 0..c {
                                dx[(b * windows + w) * c + ch] += g[(b * c + ch) * windows + w];
                            }
                        }
                    }
                });
            }
            Op::Quantum { x, w, circuit } => {
                let weights: Vec<f64> = w.map(|w| self.value(w).data.clone()).unwrap_or_default();
                let xv = &self.value(*x).data;
                let (n, k, q) = (self.shape(*x)[0], circuit.n_inputs, circuit.n_outputs());
                let per_row: Vec<_> = (0..n)
                    .into_par_iter()
                    .map(|r| {
                        expectations_and_gradients(circuit, &xv[r * k..(r + 1) * k], &weights, &g[r * q..(r + 1) * q]).1
                    })
                    .collect();
                acc(*x, &mut |dx| {
                    for (r, gr) in per_row.iter().enumerate() {
                        for (d, v) in dx[r * k..(r + 1) * k].iter_mut().zip(&gr.d_inputs) {
                            *d += v;
                        }
                    }
                });
                if let Some(w) = w {
                    // summed in row order for reproducibility
                    acc(*w, &mut |dw| {
                        for gr in &per_row {
                            dw.iter_mut().zip(&gr.d_weights).for_each(|(d, v)| *d += v);
                        }
                    });
                }
            }
            Op::Mse { pred, target } => {
                let p = &self.value(*pred).data;
                let scale = 2.0 * g[0] / p.len() as f64;
                acc(*pred, &mut |dp| {
                    for i in 0..dp.len() {
                        dp[i] += scale * (p[i] - target[i]);
                    }
                });
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    nodes: Vec<Op>,
}

impl Gradients {
    /// Gradient with respect to a node's value; zeros if it did not influence the root.
    pub fn of(&self, id: NodeId, tape: &Tape) -> Vec<f64> {
        self.grads[id.0].clone().unwrap_or_else(|| vec![0.0; tape.value(id).len()])
    }

    /// Adds parameter gradients into the store's `grad` buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (op, g) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Param(idx), Some(g)) = (op, g) {
                let p = store.get_mut(*idx);
                p.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
}
