//! Inference straight from packed layers.
//!
//! [`decode`] materializes `C[A]`. [`qmatvec`] and [`qmatmul`] never build the
//! dense matrix: each output row reads its indices from the bitstream,
//! gathers codewords from the contiguous codebook, and accumulates against
//! the input in an `f64` register before the final cast.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{contract, Result};
use crate::packfmt::PackedLayer;

/// Dense `rows x cols` weights rebuilt from a packed layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedWeights {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl DecodedWeights {
    pub fn view(&self) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape((self.rows, self.cols), &self.values).expect("shape matches values")
    }
}

pub fn decode(layer: &PackedLayer) -> DecodedWeights {
    let d = layer.dim();
    let slots = layer.slots();
    let cb = layer.codebook();
    let mut values = vec![0f32; layer.rows() * layer.cols()];
    values
        .par_chunks_mut(layer.cols())
        .enumerate()
        .for_each(|(r, row)| {
            for (s, dst) in row.chunks_exact_mut(d).enumerate() {
                dst.copy_from_slice(cb.codeword(layer.index(r, s) as usize));
            }
        });
    debug_assert_eq!(values.len(), layer.rows() * slots * d);
    DecodedWeights { rows: layer.rows(), cols: layer.cols(), values }
}

/// `y = W x` for dense row-major weights, accumulated in `f64`.
pub fn dense_matvec(weights: &[f32], rows: usize, cols: usize, x: &[f32]) -> Vec<f32> {
    assert_eq!(weights.len(), rows * cols);
    assert_eq!(x.len(), cols);
    weights
        .par_chunks(cols)
        .map(|row| row.iter().zip(x).map(|(&w, &v)| f64::from(w) * f64::from(v)).sum::<f64>() as f32)
        .collect()
}

#[inline]
fn row_dot(layer: &PackedLayer, r: usize, x: &[f32]) -> f32 {
    let d = layer.dim();
    let cb = layer.codebook().entries();
    let mut acc = 0f64;
    for (s, xs) in x.chunks_exact(d).enumerate() {
        let base = layer.index(r, s) as usize * d;
        for (c, v) in cb[base..base + d].iter().zip(xs) {
            acc += f64::from(*c) * f64::from(*v);
        }
    }
    acc as f32
}

/// `decode(layer) * x` without materializing the decoded matrix.
pub fn qmatvec(layer: &PackedLayer, x: &[f32]) -> Result<Vec<f32>> {
    if x.len() != layer.cols() {
        return Err(contract(format!(
            "input of length {} for a layer with {} columns",
            x.len(),
            layer.cols()
        )));
    }
    Ok((0..layer.rows()).into_par_iter().map(|r| row_dot(layer, r, x)).collect())
}

/// `decode(layer) * X` for an `i x b` input, column by column.
pub fn qmatmul(layer: &PackedLayer, x: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
    let (i, b) = x.dim();
    if i != layer.cols() {
        return Err(contract(format!("input with {i} rows for a layer with {} columns", layer.cols())));
    }
    let d = layer.dim();
    let cb = layer.codebook().entries();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut out = vec![0f32; layer.rows() * b];
    out.par_chunks_mut(b.max(1)).enumerate().for_each(|(r, dst)| {
        if b == 0 {
            return;
        }
        let mut acc = vec![0f64; b];
        for s in 0..layer.slots() {
            let base = layer.index(r, s) as usize * d;
            for t in 0..d {
                let c = f64::from(cb[base + t]);
                let xrow = &xs[(s * d + t) * b..(s * d + t + 1) * b];
                for (a, &v) in acc.iter_mut().zip(xrow) {
                    *a += c * f64::from(v);
                }
            }
        }
        for (o, a) in dst.iter_mut().zip(acc) {
            *o = a as f32;
        }
    });
    Ok(Array2::from_shape_vec((layer.rows(), b), out).expect("shape matches buffer"))
}

/// Wall-clock comparison of dense and on-the-fly matrix-vector products.
#[derive(Debug, Clone, Serialize)]
pub struct LayerTiming {
    pub name: String,
    pub reps: usize,
    /// Mean seconds per product on pre-decoded weights.
    pub dense_secs: f64,
    /// Mean seconds per product decoding indices on the fly.
    pub on_the_fly_secs: f64,
    /// One-off cost of decoding the dense matrix.
    pub decode_secs: f64,
}

pub fn time_layer(layer: &PackedLayer, x: &[f32], reps: usize) -> Result<LayerTiming> {
    let reps = reps.max(1);
    let t0 = Instant::now();
    let dense = decode(layer);
    let decode_secs = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(dense_matvec(&dense.values, dense.rows, dense.cols, x));
    }
    let dense_secs = t0.elapsed().as_secs_f64() / reps as f64;

    let t0 = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(qmatvec(layer, x)?);
    }
    let on_the_fly_secs = t0.elapsed().as_secs_f64() / reps as f64;
    Ok(LayerTiming { name: layer.name().to_string(), reps, dense_secs, on_the_fly_secs, decode_secs })
}
