//! Time-invariant state-space block: zero-order-hold discretization, the
//! recurrent scan, and its convolution-kernel dual.

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqforge_core::incremental::Batch;
use vqforge_core::weightio::{ModelBundle, WeightMatrix};
use vqforge_core::{Error, Result};

use crate::synth::{gen_weights, normal_matrix, SyntheticSpec};

fn inf_norm(a: &Array2<f64>) -> f64 {
    a.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring around a Taylor series.
pub fn expm(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let norm = inf_norm(a);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(squarings);
    let mut result = Array2::<f64>::eye(n);
    let mut term = Array2::<f64>::eye(n);
    for j in 1..=30 {
        term = term.dot(&scaled) / j as f64;
        result += &term;
        if inf_norm(&term) <= f64::EPSILON * inf_norm(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

/// Zero-order hold: `E_bar = exp(dt E)` and
/// `B_bar = (dt E)^-1 (exp(dt E) - I) dt B`, both read off the exponential of
/// the augmented matrix `[[dt E, dt B], [0, 0]]`, which never inverts `dt E`.
pub fn ssm_discretize(e: &Array2<f64>, b: &Array1<f64>, delta: f64) -> Result<(Array2<f64>, Array1<f64>)> {
    let n = e.nrows();
    if e.ncols() != n || b.len() != n {
        return Err(Error::Contract(format!("E is {:?} but B has {} entries", e.dim(), b.len())));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Contract(format!("timescale must be positive, got {delta}")));
    }
    let mut aug = Array2::<f64>::zeros((n + 1, n + 1));
    aug.slice_mut(s![..n, ..n]).assign(&(e * delta));
    aug.slice_mut(s![..n, n]).assign(&(b * delta));
    let ex = expm(&aug);
    Ok((ex.slice(s![..n, ..n]).to_owned(), ex.slice(s![..n, n]).to_owned()))
}

/// Discretized single-input single-output system.
#[derive(Debug, Clone)]
pub struct DiscreteSsm {
    pub e_bar: Array2<f64>,
    pub b_bar: Array1<f64>,
    pub p: Array1<f64>,
}

impl DiscreteSsm {
    /// `h_t = E_bar h_{t-1} + B_bar x_t`, `y_t = P h_t`, `h_0 = 0`.
    pub fn scan(&self, x: &[f64]) -> Vec<f64> {
        let mut h = Array1::<f64>::zeros(self.b_bar.len());
        x.iter()
            .map(|&xt| {
                h = self.e_bar.dot(&h) + &self.b_bar * xt;
                self.p.dot(&h)
            })
            .collect()
    }

    /// `K = (P B_bar, P E_bar B_bar, ..., P E_bar^(M-1) B_bar)`.
    pub fn kernel(&self, m: usize) -> Vec<f64> {
        let mut v = self.b_bar.clone();
        (0..m)
            .map(|_| {
                let k = self.p.dot(&v);
                v = self.e_bar.dot(&v);
                k
            })
            .collect()
    }

    /// Causal convolution `y_t = sum_{j <= t} K_j x_{t-j}`.
    pub fn convolve(&self, x: &[f64]) -> Vec<f64> {
        let k = self.kernel(x.len());
        (0..x.len()).map(|t| (0..=t).map(|j| k[j] * x[t - j]).sum()).collect()
    }
}

/// `u = W_in x` per time step, one shared SSM per channel of `u`, then
/// `y = W_out s`. Only the two projections are quantized.
#[derive(Debug, Clone)]
pub struct ToySsmBlock {
    pub e: Array2<f64>,
    pub b: Array1<f64>,
    pub p: Array1<f64>,
    pub delta: f64,
    pub in_proj: WeightMatrix,
    pub out_proj: WeightMatrix,
}

impl ToySsmBlock {
    /// Stable random dynamics (negative diagonal plus a small coupling) and
    /// outlier-heavy projections of shape `channels x width` and
    /// `width x channels`.
    pub fn random(state: usize, width: usize, channels: usize, weights: &SyntheticSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coupling = normal_matrix(&mut rng, state, state) * (0.1 / (state as f64).sqrt());
        let mut e = coupling;
        for i in 0..state {
            e[[i, i]] -= rng.random_range(0.5..2.0);
        }
        let scale = 1.0 / (state as f64).sqrt();
        let b = normal_matrix(&mut rng, 1, state).row(0).to_owned() * scale;
        let p = normal_matrix(&mut rng, 1, state).row(0).to_owned() * scale;
        let in_spec = SyntheticSpec { rows: channels, cols: width, seed: weights.seed, ..*weights };
        let out_spec = SyntheticSpec { rows: width, cols: channels, seed: weights.seed.wrapping_add(1), ..*weights };
        Ok(Self {
            e,
            b,
            p,
            delta: 0.1,
            in_proj: gen_weights("ssm.in_proj", &in_spec)?,
            out_proj: gen_weights("ssm.out_proj", &out_spec)?,
        })
    }

    pub fn bundle(&self) -> ModelBundle {
        ModelBundle::new(vec![self.in_proj.clone(), self.out_proj.clone()]).expect("distinct names")
    }

    pub fn discretize(&self) -> Result<DiscreteSsm> {
        let (e_bar, b_bar) = ssm_discretize(&self.e, &self.b, self.delta)?;
        Ok(DiscreteSsm { e_bar, b_bar, p: self.p.clone() })
    }

    /// Runs one `M x width` sequence with the given `[in_proj, out_proj]`
    /// weights. Returns the block output and the per-channel scan outputs.
    pub fn forward(&self, seq: &Array2<f64>, weights: &[ArrayView2<'_, f32>]) -> Result<(Array2<f64>, Array2<f64>)> {
        let sys = self.discretize()?;
        let u = seq.dot(&weights[0].mapv(f64::from).t());
        let mut scanned = Array2::<f64>::zeros(u.raw_dim());
        for (c, col) in u.columns().into_iter().enumerate() {
            let y = sys.scan(&col.to_vec());
            scanned.column_mut(c).assign(&Array1::from(y));
        }
        let out = scanned.dot(&weights[1].mapv(f64::from).t());
        Ok((out, scanned))
    }

    /// Teacher-forced layer-wise calibration batches for the two projections:
    /// each projection sees its full-precision input, and the block output is
    /// the target.
    pub fn calibration_batches(&self, seqs: &[Array2<f64>], per_batch: usize) -> Result<Vec<Batch<Vec<Array2<f64>>>>> {
        let fp = [self.in_proj.view(), self.out_proj.view()];
        let mut batches = Vec::new();
        for chunk in seqs.chunks(per_batch.max(1)) {
            let mut xs = Vec::new();
            let mut ss = Vec::new();
            let mut ys = Vec::new();
            for seq in chunk {
                let (y, scanned) = self.forward(seq, &fp)?;
                xs.push(seq.clone());
                ss.push(scanned);
                ys.push(y);
            }
            let stack = |v: &[Array2<f64>]| {
                let views: Vec<_> = v.iter().map(|a| a.view()).collect();
                ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")
            };
            batches.push(Batch { input: vec![stack(&xs), stack(&ss)], targets: stack(&ys) });
        }
        Ok(batches)
    }

    /// Mean squared error of the end-to-end block output against full
    /// precision.
    pub fn output_mse(&self, seqs: &[Array2<f64>], weights: &[ArrayView2<'_, f32>]) -> Result<f64> {
        let fp = [self.in_proj.view(), self.out_proj.view()];
        let mut total = 0.0;
        let mut count = 0usize;
        for seq in seqs {
            let (want, _) = self.forward(seq, &fp)?;
            let (got, _) = self.forward(seq, weights)?;
            total += (&got - &want).iter().map(|v| v * v).sum::<f64>();
            count += want.len();
        }
        Ok(total / count.max(1) as f64)
    }
}

/// Largest `|a - b|` relative to the largest magnitude in `a`.
pub fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().fold(0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
