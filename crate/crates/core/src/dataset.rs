//! Synthetic single-peak regression data.
//!
//! Each sample is a Gaussian bump `A / (sigma sqrt(2 pi)) exp(-(x - mu)^2 / (2 sigma^2))`
//! evaluated on 21 evenly spaced points of `[0, 1]`, plus white noise, then
//! min-max normalized. The regression target is the peak position `mu`.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, Domain};

pub const N_POINTS: usize = 21;
pub const NOISE_STD: f64 = 0.01;
pub const TRAIN_SIZE: usize = 150;
pub const VAL_SIZE: usize = 250;
pub const TEST_SIZE: usize = 500;

pub const AMPLITUDE_RANGE: (f64, f64) = (0.5, 1.5);
pub const SIGMA_RANGE: (f64, f64) = (0.01, 0.1);
pub const MU_RANGE: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed data file {path}: {message}")]
    Format { path: String, message: String },
}

/// `j / 20` for `j = 0..=20`.
pub fn grid() -> [f64; N_POINTS] {
    std::array::from_fn(|j| j as f64 / (N_POINTS - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSampleParams {
    pub amplitude: f64,
    pub sigma: f64,
    pub mu: f64,
    pub noise_std: f64,
}

impl GaussianSampleParams {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        GaussianSampleParams {
            amplitude: rng.random_range(AMPLITUDE_RANGE.0..AMPLITUDE_RANGE.1),
            sigma: rng.random_range(SIGMA_RANGE.0..SIGMA_RANGE.1),
            mu: rng.random_range(MU_RANGE.0..MU_RANGE.1),
            noise_std: NOISE_STD,
        }
    }

    pub fn noiseless(self) -> Self {
        GaussianSampleParams { noise_std: 0.0, ..self }
    }

    /// Curve value at `x` without noise.
    pub fn peak_value(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        self.amplitude / (self.sigma * (2.0 * PI).sqrt()) * (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Curve values before normalization.
    pub raw: Vec<f64>,
    /// Normalized to `[0, 1]`.
    pub features: Vec<f64>,
    pub target: f64,
}

/// Min-max scaling to `[0, 1]`. A constant vector maps to all zeros.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

pub fn render_sample<R: Rng + ?Sized>(params: GaussianSampleParams, rng: &mut R) -> Sample {
    let noise = (params.noise_std > 0.0).then(|| Normal::new(0.0, params.noise_std).expect("positive std"));
    let raw: Vec<f64> = grid()
        .iter()
        .map(|&x| {
            let eps = noise.as_ref().map_or(0.0, |n| n.sample(rng));
            params.peak_value(x) + eps
        })
        .collect();
    Sample {
        features: normalize(&raw),
        raw,
        target: params.mu,
    }
}

/// Sample number `index` of the concatenated train, val, test sequence.
pub fn sample_at(master_seed: u64, index: usize) -> Sample {
    let mut rng: ChaCha20Rng = stream(master_seed, Domain::Dataset, index as u64);
    let params = GaussianSampleParams::draw(&mut rng);
    render_sample(params, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub master_seed: u64,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn generate_splits(master_seed: u64) -> DatasetSplit {
    let take = |from: usize, n: usize| (from..from + n).map(|i| sample_at(master_seed, i)).collect();
    DatasetSplit {
        master_seed,
        train: take(0, TRAIN_SIZE),
        val: take(TRAIN_SIZE, VAL_SIZE),
        test: take(TRAIN_SIZE + VAL_SIZE, TEST_SIZE),
    }
}

/// RMSE of always predicting 0.5.
pub fn baseline_rmse(samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mse = samples.iter().map(|s| (s.target - 0.5).powi(2)).sum::<f64>() / samples.len() as f64;
    mse.sqrt()
}

fn header() -> Vec<String> {
    (0..N_POINTS).map(|j| format!("f{j}")).chain(["target".to_string()]).collect()
}

/// Writes normalized features and targets as CSV: `f0..f20,target`.
pub fn write_csv(path: &Path, samples: &[Sample]) -> Result<(), DatasetError> {
    let io = |e: csv::Error| DatasetError::Format { path: path.display().to_string(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header()).map_err(io)?;
    for s in samples {
        let row = s.features.iter().chain([&s.target]).map(|v| format!("{v:?}"));
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|source| DatasetError::Io { path: path.display().to_string(), source })
}

/// Reads a file produced by [`write_csv`]. Raw values are not stored, so
/// `raw` is set equal to `features`.
pub fn read_csv(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let fmt = |message: String| DatasetError::Format { path: path.display().to_string(), message };
    let mut r = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
    let found: Vec<String> = r.headers().map_err(|e| fmt(e.to_string()))?.iter().map(str::to_string).collect();
    if found != header() {
        return Err(fmt(format!("expected header f0..f20,target, found {}", found.join(","))));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let vals = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| fmt(format!("row {}: `{v}`: {e}", line + 2))))
            .collect::<Result<Vec<_>, _>>()?;
        let (features, target) = vals.split_at(N_POINTS);
        out.push(Sample { raw: features.to_vec(), features: features.to_vec(), target: target[0] });
    }
    Ok(out)
}

/// Writes `train.csv`, `val.csv` and `test.csv` into `dir`.
pub fn write_splits(dir: &Path, split: &DatasetSplit) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir).map_err(|source| DatasetError::Io { path: dir.display().to_string(), source })?;
    for (name, samples) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        write_csv(&dir.join(format!("{name}.csv")), samples)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn peak_height_closed_form() {
        let p = GaussianSampleParams { amplitude: 1.0, sigma: 0.1, mu: 0.5, noise_std: 0.0 };
        // 1 / (0.1 sqrt(2 pi))
        assert!((p.peak_value(0.5) - 3.989_422_804_014_327).abs() < 1e-12);
    }

    #[test]
    fn noiseless_sample_is_symmetric() {
        let p = GaussianSampleParams { amplitude: 1.0, sigma: 0.1, mu: 0.5, noise_std: 0.0 };
        let s = render_sample(p, &mut ChaCha20Rng::seed_from_u64(0));
        for k in 0..=10 {
            assert!((s.features[10 - k] - s.features[10 + k]).abs() < 1e-12);
        }
        assert_eq!(s.features[10], 1.0);
    }

    #[test]
    fn degenerate_normalization() {
        assert_eq!(normalize(&[2.0; 4]), vec![0.0; 4]);
    }

    #[test]
    fn normalization_extremes() {
        let v = normalize(&[3.0, -1.0, 0.0, 7.0]);
        assert_eq!(v, vec![0.5, 0.0, 0.125, 1.0]);
    }

    #[test]
    fn baseline_of_constant_targets() {
        let s = Sample { raw: vec![], features: vec![], target: 0.5 };
        assert_eq!(baseline_rmse(&[s.clone(), s]), 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<Sample> = (0..5).map(|i| sample_at(3, i)).collect();
        let path = dir.path().join("s.csv");
        write_csv(&path, &samples).unwrap();
        let back = read_csv(&path).unwrap();
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.features, b.features);
            assert_eq!(a.target, b.target);
        }
    }
}
