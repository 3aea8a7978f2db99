//! Two-layer rectified MLP with a hand-written backward pass.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use vqforge_core::incremental::{loss_task, ForwardOutput, ModelAdapter};
use vqforge_core::weightio::{ModelBundle, WeightMatrix};
use vqforge_core::{Error, Result};

/// `y = W2 relu(W1 x + b1) + b2`. The weight matrices are the quantization
/// targets; the biases stay in full precision.
#[derive(Debug, Clone)]
pub struct ToyMlp {
    pub w1: WeightMatrix,
    pub b1: Array1<f64>,
    pub w2: WeightMatrix,
    pub b2: Array1<f64>,
}

pub struct MlpCache {
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl ToyMlp {
    pub fn new(w1: WeightMatrix, b1: Array1<f64>, w2: WeightMatrix, b2: Array1<f64>) -> Result<Self> {
        if w1.rows() != b1.len() || w2.cols() != w1.rows() || w2.rows() != b2.len() {
            return Err(Error::Contract(format!(
                "inconsistent MLP shapes: w1 {}x{}, b1 {}, w2 {}x{}, b2 {}",
                w1.rows(),
                w1.cols(),
                b1.len(),
                w2.rows(),
                w2.cols(),
                b2.len()
            )));
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn bundle(&self) -> ModelBundle {
        ModelBundle::new(vec![self.w1.clone(), self.w2.clone()]).expect("distinct layer names")
    }

    pub fn weights(&self) -> [ArrayView2<'_, f32>; 2] {
        [self.w1.view(), self.w2.view()]
    }

    /// Full-precision outputs for a `batch x in` input.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, &self.weights())?.0.outputs)
    }
}

fn check(x: &Array2<f64>, weights: &[ArrayView2<'_, f32>]) -> Result<()> {
    if weights.len() != 2 || x.ncols() != weights[0].ncols() || weights[0].nrows() != weights[1].ncols() {
        return Err(Error::Contract("MLP expects [w1, w2] matching the input width".into()));
    }
    Ok(())
}

impl ModelAdapter for ToyMlp {
    type Input = Array2<f64>;
    type Cache = MlpCache;

    /// Blocks are the rectified hidden layer and the output layer.
    fn forward(&self, x: &Array2<f64>, weights: &[ArrayView2<'_, f32>]) -> Result<(ForwardOutput, MlpCache)> {
        check(x, weights)?;
        let w1 = weights[0].mapv(f64::from);
        let w2 = weights[1].mapv(f64::from);
        let pre = x.dot(&w1.t()) + &self.b1;
        let hidden = pre.mapv(|v| v.max(0.0));
        let outputs = hidden.dot(&w2.t()) + &self.b2;
        let fwd = ForwardOutput { outputs: outputs.clone(), features: vec![hidden.clone(), outputs] };
        Ok((fwd, MlpCache { pre, hidden }))
    }

    fn backward(
        &self,
        x: &Array2<f64>,
        cache: &MlpCache,
        weights: &[ArrayView2<'_, f32>],
        grad_outputs: &Array2<f64>,
        grad_features: &[Array2<f64>],
    ) -> Result<Vec<Array2<f64>>> {
        check(x, weights)?;
        if grad_features.len() != 2 {
            return Err(Error::Contract(format!("expected 2 block gradients, got {}", grad_features.len())));
        }
        let w2 = weights[1].mapv(f64::from);
        let g_out = grad_outputs + &grad_features[1];
        let d_w2 = g_out.t().dot(&cache.hidden);
        let mut g_hidden = g_out.dot(&w2) + &grad_features[0];
        g_hidden.zip_mut_with(&cache.pre, |g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        let d_w1 = g_hidden.t().dot(x);
        Ok(vec![d_w1, d_w2])
    }
}

/// Output MSE against `targets` and its gradient with respect to both
/// weight matrices.
pub fn toy_mlp_grads(mlp: &ToyMlp, x: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, [Array2<f64>; 2])> {
    let weights = mlp.weights();
    let (out, cache) = mlp.forward(x, &weights)?;
    let (loss, g) = loss_task(&out.outputs, targets)?;
    let zeros = out.features.iter().map(|f| Array2::zeros(f.raw_dim())).collect::<Vec<_>>();
    let mut grads = mlp.backward(x, &cache, &weights, &g, &zeros)?;
    let d_w2 = grads.pop().expect("two gradients");
    let d_w1 = grads.pop().expect("two gradients");
    Ok((loss, [d_w1, d_w2]))
}

/// Duplicates every row of a batch, for mean-normalization checks.
pub fn duplicate_rows(x: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(0), &[x.view(), x.view()]).expect("same width")
}
