//! Minimal reverse-mode autodiff over dense `f64` tensors.
//!
//! A [`Tape`] records each operation's output together with the ids of its
//! operands; [`Tape::backward`] walks the record in reverse. Only the layers
//! needed by the three hybrid architectures are provided.

mod optim;
mod params;
mod tape;

pub use optim::{AdamW, AdamWConfig, LrSchedule};
pub use params::{Param, ParamStore};
pub use tape::{Gradients, NodeId, Tape};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch, {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::Invalid(format!(
                "tensor of shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    /// `[rows.len(), width]` from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        let width = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(NnError::Shape { op: "from_rows", left: vec![width], right: vec![bad.len()] });
        }
        Ok(Tensor { shape: vec![rows.len(), width], data: rows.concat() })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64, NnError> {
    if pred.is_empty() {
        return Err(NnError::Invalid("rmse of an empty vector".into()));
    }
    if pred.len() != target.len() {
        return Err(NnError::Shape { op: "rmse", left: vec![pred.len()], right: vec![target.len()] });
    }
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_basics() {
        assert_eq!(rmse(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        let r = rmse(&[0.6, 0.1, 0.9], &[0.5, 0.0, 0.8]).unwrap();
        assert!((r - 0.1).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
