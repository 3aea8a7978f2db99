//! Outlier-heavy synthetic weights and seeded calibration inputs.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use vqforge_core::weightio::WeightMatrix;
use vqforge_core::{Error, Result};

/// Gaussian weights with a fraction of entries blown up by a multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub cols: usize,
    pub sigma: f64,
    /// Share of entries turned into outliers, in `[0, 0.1]`.
    pub outlier_fraction: f64,
    pub outlier_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.1).contains(&self.outlier_fraction) {
            return Err(Error::Contract(format!(
                "outlier fraction {} outside [0, 0.1]",
                self.outlier_fraction
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Contract(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Draws `Normal(0, sigma)` entries, then multiplies
/// `round(f * rows * cols)` distinct positions by the outlier scale.
pub fn gen_weights(name: &str, spec: &SyntheticSpec) -> Result<WeightMatrix> {
    spec.validate()?;
    let n = spec.rows * spec.cols;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.sigma).expect("sigma validated");
    let mut values: Vec<f32> = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
    let outliers = (spec.outlier_fraction * n as f64).round() as usize;
    for pos in sample(&mut rng, n, outliers) {
        values[pos] = (f64::from(values[pos]) * spec.outlier_scale) as f32;
    }
    WeightMatrix::new(name, spec.rows, spec.cols, values)
}

/// Sample excess-free kurtosis `E[(x - mu)^4] / sigma^4` (3 for a Gaussian).
pub fn kurtosis(values: &[f32]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &v in values {
        let c = f64::from(v) - mean;
        m2 += c * c;
        m4 += c * c * c * c;
    }
    m2 /= n;
    m4 /= n;
    if m2 == 0.0 {
        0.0
    } else {
        m4 / (m2 * m2)
    }
}

/// `rows x cols` standard-normal matrix.
pub fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}
