//! Differentiable convex combinations over a few candidate codewords per
//! sub-vector.
//!
//! Each sub-vector keeps `n` candidate indices into the layer's shared
//! codebook and `n` learnable scores. The softmax of the scores gives convex
//! ratios and the quantized sub-vector is the ratio-weighted sum of the
//! candidates. Gradients reach both the scores and the shared codewords; the
//! original weights are never touched.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::kmeans::{sq_dist, Codebook};
use crate::weightio::SubVectorTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexConfig {
    /// Candidates per sub-vector.
    pub n: usize,
    /// Candidates whose ratio falls below this are replaced.
    pub lambda: f64,
    pub lr_codebook: f64,
    pub lr_scores: f64,
    /// Optimizer steps spent on the weight reconstruction error before
    /// calibration starts.
    pub init_steps: usize,
    /// Optimizer steps between replacement sweeps.
    pub replace_every: usize,
}

impl Default for ConvexConfig {
    fn default() -> Self {
        Self {
            n: 4,
            lambda: 1e-2,
            lr_codebook: 1e-5,
            lr_scores: 5e-2,
            init_steps: 100,
            replace_every: 1,
        }
    }
}

impl ConvexConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(contract(format!("lambda must lie in (0, 1), got {}", self.lambda)));
        }
        if self.n < 2 || self.n > k {
            return Err(contract(format!("candidate count {} must lie in [2, k = {k}]", self.n)));
        }
        if self.replace_every == 0 {
            return Err(contract("replace_every must be positive"));
        }
        if self.lr_codebook < 0.0 || self.lr_scores < 0.0 {
            return Err(contract("learning rates must be non-negative"));
        }
        Ok(())
    }
}

/// Numerically stable softmax, evaluated in `f64`.
pub fn ratios(scores: &[f32]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut out: Vec<f64> = scores.iter().map(|&z| (f64::from(z) - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for r in &mut out {
        *r /= sum;
    }
    out
}

/// Indices of the `n` codewords nearest to `w`, nearest first, ties to the
/// lowest index.
pub fn select_candidates(w: &[f32], cb: &Codebook, n: usize) -> Vec<u32> {
    assert!(n <= cb.k(), "asked for {n} candidates from {} codewords", cb.k());
    let mut order: Vec<(f32, u32)> = (0..cb.k())
        .map(|c| (sq_dist(w, cb.codeword(c)), c as u32))
        .collect();
    order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.truncate(n);
    order.into_iter().map(|(_, c)| c).collect()
}

/// Calibration-time representation of one sub-vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftState {
    pub candidates: Vec<u32>,
    pub scores: Vec<f32>,
    /// Codeword index once the sub-vector has been hardened.
    pub confirmed: Option<u32>,
}

impl SoftState {
    pub fn new(candidates: Vec<u32>, scores: Vec<f32>) -> Self {
        assert_eq!(candidates.len(), scores.len());
        Self { candidates, scores, confirmed: None }
    }

    pub fn n(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_confirmed(&self) -> bool {
        self.confirmed.is_some()
    }

    pub fn ratios(&self) -> Vec<f64> {
        ratios(&self.scores)
    }

    /// Ratios as seen by the model: one-hot on the confirmed candidate.
    pub fn effective_ratios(&self) -> Vec<f64> {
        match self.confirmed {
            Some(c) => self
                .candidates
                .iter()
                .map(|&m| if m == c { 1.0 } else { 0.0 })
                .collect(),
            None => self.ratios(),
        }
    }

    /// Slot holding the largest ratio; ties go to the lowest slot.
    pub fn argmax_slot(&self) -> (usize, f64) {
        let r = self.ratios();
        let mut best = 0;
        for m in 1..r.len() {
            if r[m] > r[best] {
                best = m;
            }
        }
        (best, r[best])
    }

    pub fn has_distinct_candidates(&self) -> bool {
        let mut c = self.candidates.clone();
        c.sort_unstable();
        c.windows(2).all(|w| w[0] != w[1])
    }

    /// Convex combination evaluated in `f64`, before rounding to storage
    /// precision. Confirmed states return their codeword.
    pub fn soft_point(&self, cb: &Codebook) -> Vec<f64> {
        if let Some(c) = self.confirmed {
            return cb.codeword(c as usize).iter().map(|&v| f64::from(v)).collect();
        }
        let r = self.ratios();
        let mut out = vec![0f64; cb.dim()];
        for (&m, &rm) in self.candidates.iter().zip(&r) {
            for (o, &c) in out.iter_mut().zip(cb.codeword(m as usize)) {
                *o += rm * f64::from(c);
            }
        }
        out
    }
}

/// Quantized sub-vector. A confirmed state yields a verbatim copy of its
/// codeword.
pub fn reconstruct(state: &SoftState, cb: &Codebook) -> Vec<f32> {
    match state.confirmed {
        Some(c) => cb.codeword(c as usize).to_vec(),
        None => state.soft_point(cb).into_iter().map(|v| v as f32).collect(),
    }
}

/// Gradient of a loss with respect to the scores, given its gradient `g_w`
/// with respect to the reconstructed sub-vector. Zero once confirmed.
pub fn grad_scores(g_w: &[f64], state: &SoftState, cb: &Codebook) -> Vec<f64> {
    if state.is_confirmed() {
        return vec![0.0; state.n()];
    }
    let r = state.ratios();
    let proj: Vec<f64> = state
        .candidates
        .iter()
        .map(|&m| {
            g_w.iter()
                .zip(cb.codeword(m as usize))
                .map(|(g, &c)| g * f64::from(c))
                .sum()
        })
        .collect();
    let mean: f64 = proj.iter().zip(&r).map(|(p, rj)| p * rj).sum();
    proj.iter().zip(&r).map(|(p, rm)| rm * (p - mean)).collect()
}

/// One layer's soft states, row-major over sub-vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftAssignments {
    rows: usize,
    slots: usize,
    d: usize,
    pub states: Vec<SoftState>,
}

impl SoftAssignments {
    pub fn new(rows: usize, slots: usize, d: usize, states: Vec<SoftState>) -> Result<Self> {
        if states.len() != rows * slots {
            return Err(contract(format!(
                "{} soft states for a {rows}x{slots} grid",
                states.len()
            )));
        }
        Ok(Self { rows, slots, d, states })
    }

    /// Picks the `n` nearest candidates per sub-vector and initializes the
    /// scores to `-||w - c||^2 / T`, where `T` is the layer's mean squared
    /// distance to the nearest candidate.
    pub fn initialize(table: &SubVectorTable<'_>, cb: &Codebook, n: usize) -> Result<Self> {
        if table.dim() != cb.dim() {
            return Err(contract("sub-vector and codeword lengths differ"));
        }
        if n == 0 || n > cb.k() {
            return Err(contract(format!("candidate count {n} must lie in [1, {}]", cb.k())));
        }
        let picked: Vec<(Vec<u32>, Vec<f32>)> = (0..table.len())
            .into_par_iter()
            .map(|j| {
                let w = table.flat(j);
                let cands = select_candidates(w, cb, n);
                let dists = cands.iter().map(|&c| sq_dist(w, cb.codeword(c as usize))).collect();
                (cands, dists)
            })
            .collect();
        let nearest_mean =
            picked.iter().map(|(_, d)| f64::from(d[0])).sum::<f64>() / picked.len().max(1) as f64;
        let temperature = if nearest_mean > 0.0 { nearest_mean } else { 1.0 };
        let states = picked
            .into_iter()
            .map(|(cands, dists)| {
                let scores = dists.iter().map(|&d| (-f64::from(d) / temperature) as f32).collect();
                SoftState::new(cands, scores)
            })
            .collect();
        Self::new(table.rows(), table.slots(), table.dim(), states)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn confirmed_count(&self) -> usize {
        self.states.iter().filter(|s| s.is_confirmed()).count()
    }

    pub fn confirmed_fraction(&self) -> f64 {
        self.confirmed_count() as f64 / self.states.len().max(1) as f64
    }

    /// Row-major quantized weights `W_hat`.
    pub fn reconstruct(&self, cb: &Codebook) -> Vec<f32> {
        let mut out = vec![0f32; self.states.len() * self.d];
        out.par_chunks_mut(self.d)
            .zip(self.states.par_iter())
            .for_each(|(dst, s)| dst.copy_from_slice(&reconstruct(s, cb)));
        out
    }

    /// Score gradients for every state given `dL/dW_hat` (row-major).
    pub fn grad_scores(&self, grad_w: &[f64], cb: &Codebook) -> Vec<Vec<f64>> {
        self.states
            .par_iter()
            .zip(grad_w.par_chunks(self.d))
            .map(|(s, g)| grad_scores(g, s, cb))
            .collect()
    }
}

/// Gradient of a loss with respect to every codeword, given `dL/dW_hat`
/// (row-major, one `d`-chunk per sub-vector).
///
/// Unconfirmed sub-vectors contribute `r^m * g_w` to each candidate;
/// confirmed ones contribute `g_w` to their codeword. Accumulation runs in
/// row-major sub-vector order.
pub fn grad_codebook(grad_w: &[f64], soft: &SoftAssignments, k: usize) -> Vec<f64> {
    let d = soft.dim();
    assert_eq!(grad_w.len(), soft.len() * d);
    let mut grad = vec![0f64; k * d];
    for (s, g) in soft.states.iter().zip(grad_w.chunks_exact(d)) {
        match s.confirmed {
            Some(c) => {
                let c = c as usize;
                for (acc, gv) in grad[c * d..(c + 1) * d].iter_mut().zip(g) {
                    *acc += gv;
                }
            }
            None => {
                let r = s.ratios();
                for (&m, rm) in s.candidates.iter().zip(&r) {
                    let m = m as usize;
                    for (acc, gv) in grad[m * d..(m + 1) * d].iter_mut().zip(g) {
                        *acc += rm * gv;
                    }
                }
            }
        }
    }
    grad
}

/// Adamax (the infinity-norm variant of Adam) with a fixed learning rate.
///
/// `m <- b1 m + (1 - b1) g; u <- max(b2 u, |g|); p <- p - lr m / ((1 - b1^t)(u + eps))`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adamax {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    u: Vec<f64>,
}

impl Adamax {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            u: vec![0.0; len],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f64]) {
        self.step_iter(params.iter_mut(), grads);
    }

    /// Applies one update to parameters produced in accumulator order.
    pub fn step_iter<'p>(&mut self, params: impl Iterator<Item = &'p mut f32>, grads: &[f64]) {
        assert_eq!(grads.len(), self.m.len(), "gradient length differs from optimizer state");
        self.step += 1;
        let bias = 1.0 - self.beta1.powi(self.step as i32);
        let step_size = self.lr / bias;
        let mut seen = 0;
        for (((p, &g), m), u) in params.zip(grads).zip(&mut self.m).zip(&mut self.u) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *u = (self.beta2 * *u).max(g.abs());
            *p = (f64::from(*p) - step_size * *m / (*u + self.eps)) as f32;
            seen += 1;
        }
        assert_eq!(seen, grads.len(), "parameter count differs from optimizer state");
    }
}

/// Weight reconstruction error `||W - W_hat||^2` and its gradient
/// `2 (W_hat - W)` with respect to `W_hat`.
pub fn reconstruction_loss(w: &[f32], w_hat: &[f32]) -> (f64, Vec<f64>) {
    assert_eq!(w.len(), w_hat.len());
    let mut loss = 0.0;
    let grad = w
        .iter()
        .zip(w_hat)
        .map(|(&a, &b)| {
            let diff = f64::from(b) - f64::from(a);
            loss += diff * diff;
            2.0 * diff
        })
        .collect();
    (loss, grad)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct InitPhaseReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
    /// Set when the optimized state ended worse than it started and was
    /// rolled back.
    pub reverted: bool,
}

/// Fits scores and codewords to the original weights by minimizing the
/// reconstruction error for `cfg.init_steps` Adamax steps.
pub fn init_phase(
    table: &SubVectorTable<'_>,
    soft: &mut SoftAssignments,
    cb: &mut Codebook,
    cfg: &ConvexConfig,
) -> Result<InitPhaseReport> {
    if soft.len() != table.len() || soft.dim() != table.dim() {
        return Err(contract("soft states do not match the sub-vector table"));
    }
    let w = table.assemble();
    let (initial_loss, _) = reconstruction_loss(&w, &soft.reconstruct(cb));
    let snapshot = (soft.clone(), cb.clone());

    let n = soft.states.first().map_or(0, |s| s.n());
    let mut opt_scores = Adamax::new(soft.len() * n, cfg.lr_scores);
    let mut opt_codebook = Adamax::new(cb.entries().len(), cfg.lr_codebook);
    for _ in 0..cfg.init_steps {
        let (_, grad_w) = reconstruction_loss(&w, &soft.reconstruct(cb));
        let gs: Vec<f64> = soft.grad_scores(&grad_w, cb).into_iter().flatten().collect();
        let gc = grad_codebook(&grad_w, soft, cb.k());
        opt_scores.step_iter(soft.states.iter_mut().flat_map(|s| s.scores.iter_mut()), &gs);
        opt_codebook.step(cb.entries_mut(), &gc);
    }

    let (mut final_loss, _) = reconstruction_loss(&w, &soft.reconstruct(cb));
    let reverted = final_loss > initial_loss;
    if reverted {
        (*soft, *cb) = snapshot;
        final_loss = initial_loss;
    }
    Ok(InitPhaseReport { initial_loss, final_loss, steps: cfg.init_steps, reverted })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Replacement {
    /// Slots whose codeword changed.
    pub replaced: usize,
    /// Sum of the ratios held by the changed slots.
    pub replaced_mass: f64,
    /// Euclidean distance between the reconstructions before and after.
    pub shift: f64,
}

/// Replaces every candidate whose ratio is below `lambda` with the codeword
/// closest to the current reconstruction, among codewords not held by the
/// other slots. The slot keeps its score, so the reconstruction moves by at
/// most `replaced_mass * max ||c' - c||`.
///
/// The slot's own codeword stays eligible: when it is still the closest
/// option the slot is left alone, so the distance from the reconstruction to
/// its nearest candidate never grows.
pub fn adaptive_replace(state: &mut SoftState, cb: &Codebook, lambda: f64) -> Replacement {
    if state.is_confirmed() {
        return Replacement::default();
    }
    let r = state.ratios();
    if r.iter().all(|&rm| rm >= lambda) {
        return Replacement::default();
    }
    let before = state.soft_point(cb);
    let mut out = Replacement::default();
    for m in 0..state.n() {
        if r[m] >= lambda {
            continue;
        }
        let mut best = state.candidates[m];
        let mut best_dist = point_dist(&before, cb.codeword(best as usize));
        for c in 0..cb.k() as u32 {
            if c == state.candidates[m] || state.candidates.contains(&c) {
                continue;
            }
            let dist = point_dist(&before, cb.codeword(c as usize));
            if dist < best_dist || (dist == best_dist && c < best) {
                best = c;
                best_dist = dist;
            }
        }
        if best != state.candidates[m] {
            state.candidates[m] = best;
            out.replaced += 1;
            out.replaced_mass += r[m];
        }
    }
    if out.replaced > 0 {
        let after = state.soft_point(cb);
        out.shift = before
            .iter()
            .zip(&after)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
    }
    out
}

fn point_dist(p: &[f64], c: &[f32]) -> f64 {
    p.iter().zip(c).map(|(a, &b)| (a - f64::from(b)).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weightio::{partition, WeightMatrix};

    fn line(values: &[f32]) -> Codebook {
        Codebook::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn candidates_of_exact_match() {
        let cb = line(&[0., 1., 4., 9.]);
        assert_eq!(select_candidates(&[9.0], &cb, 1), vec![3]);
        // 0 and 4 tie at squared distance 4 from w = 2; the lower index wins
        assert_eq!(select_candidates(&[2.0], &cb, 2), vec![1, 0]);
        assert_eq!(select_candidates(&[2.1], &cb, 2), vec![1, 2]);
        assert_eq!(select_candidates(&[2.0], &cb, 4), vec![1, 0, 2, 3]);
    }

    #[test]
    fn softmax_values() {
        assert_eq!(ratios(&[0., 0., 0., 0.]), vec![0.25; 4]);
        let r = ratios(&[1000., 0.]);
        assert!((r[0] - 1.0).abs() < 1e-12 && r[1] >= 0.0 && r[1] < 1e-300);
        let r = ratios(&[0.5, -0.5]);
        let e = 0.5f64.exp();
        let expect = e / (e + 1.0 / e);
        assert!((r[0] - expect).abs() < 1e-12);
        assert!((r[0] - 0.7311).abs() < 1e-4 && (r[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn reconstruct_vertex_and_midpoint() {
        let cb = line(&[0., 2.]);
        let mid = SoftState::new(vec![0, 1], vec![0., 0.]);
        assert_eq!(reconstruct(&mid, &cb), vec![1.0]);
        let mut hard = SoftState::new(vec![0, 1], vec![0., 0.]);
        hard.confirmed = Some(1);
        assert_eq!(reconstruct(&hard, &cb), vec![2.0]);
        let vertex = SoftState::new(vec![0, 1], vec![-1e4, 0.]);
        assert_eq!(reconstruct(&vertex, &cb), vec![2.0]);
    }

    #[test]
    fn score_gradient_vanishes_for_identical_candidates() {
        let cb = Codebook::new(2, 2, vec![1.5, -2.0, 1.5, -2.0]).unwrap();
        let s = SoftState::new(vec![0, 1], vec![0.3, -0.7]);
        let g = grad_scores(&[0.4, 1.1], &s, &cb);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        let cb2 = Codebook::new(2, 2, vec![0., 1., 2., 3.]).unwrap();
        assert!(grad_scores(&[0.0, 0.0], &s, &cb2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn confirmed_state_has_frozen_scores() {
        let cb = line(&[0., 1.]);
        let mut s = SoftState::new(vec![0, 1], vec![0.3, -0.7]);
        s.confirmed = Some(0);
        assert_eq!(grad_scores(&[1.0], &s, &cb), vec![0.0, 0.0]);
    }

    #[test]
    fn unused_codeword_gets_no_gradient() {
        let soft = SoftAssignments::new(1, 1, 1, vec![SoftState::new(vec![0, 2], vec![0.1, 0.2])]).unwrap();
        let g = grad_codebook(&[0.7], &soft, 4);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[3], 0.0);
        assert!((g[0] + g[2] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn single_candidate_identity_chain() {
        let cb = Codebook::new(2, 3, vec![0.; 6]).unwrap();
        let soft = SoftAssignments::new(1, 1, 3, vec![SoftState::new(vec![1], vec![0.0])]).unwrap();
        let g = grad_codebook(&[0.5, -1.0, 2.0], &soft, cb.k());
        assert_eq!(g, vec![0., 0., 0., 0.5, -1.0, 2.0]);
    }

    #[test]
    fn adamax_first_step() {
        let mut opt = Adamax::new(1, 0.1);
        let mut p = [0.0f32];
        opt.step(&mut p, &[1.0]);
        assert!((p[0] + 0.1).abs() < 1e-7, "{}", p[0]);

        let mut opt = Adamax::new(2, 0.1);
        let mut p = [0.5f32, -2.0];
        opt.step(&mut p, &[0.0, 0.0]);
        assert_eq!(p, [0.5, -2.0]);
    }

    #[test]
    fn replacement_noop_when_all_ratios_large() {
        let cb = line(&[0., 1., 2., 3.]);
        let mut s = SoftState::new(vec![0, 1], vec![0.0, 0.1]);
        let before = s.clone();
        assert_eq!(adaptive_replace(&mut s, &cb, 1e-2), Replacement::default());
        assert_eq!(s, before);
    }

    #[test]
    fn replacement_picks_closest_outside_codeword() {
        // candidates 5.0 (dominant) and 0.0 (near-zero ratio); free: 4.9, 7.0
        let cb = line(&[5.0, 0.0, 4.9, 7.0]);
        let mut s = SoftState::new(vec![0, 1], vec![0.0, -20.0]);
        let out = adaptive_replace(&mut s, &cb, 1e-2);
        assert_eq!(s.candidates, vec![0, 2]);
        assert_eq!(out.replaced, 1);
        assert!(s.has_distinct_candidates());
        assert_eq!(s.scores, vec![0.0, -20.0]);
    }

    #[test]
    fn replacement_without_free_codewords_is_noop() {
        let cb = line(&[0., 1.]);
        let mut s = SoftState::new(vec![0, 1], vec![0.0, -20.0]);
        assert_eq!(adaptive_replace(&mut s, &cb, 1e-2).replaced, 0);
        assert_eq!(s.candidates, vec![0, 1]);
    }

    #[test]
    fn init_phase_already_optimal() {
        let w = WeightMatrix::new("w", 2, 2, vec![1., 2., 3., 4.]).unwrap();
        let t = partition(&w, 2).unwrap();
        let mut cb = Codebook::new(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let mut soft = SoftAssignments::initialize(&t, &cb, 1).unwrap();
        let cfg = ConvexConfig { n: 1, init_steps: 10, ..Default::default() };
        let rep = init_phase(&t, &mut soft, &mut cb, &cfg).unwrap();
        assert_eq!(rep.initial_loss, 0.0);
        assert_eq!(rep.final_loss, 0.0);
    }

    #[test]
    fn init_phase_zero_lr_is_null_update() {
        let w = WeightMatrix::new("w", 2, 4, vec![0.1, -0.3, 0.7, 0.2, -0.5, 0.4, 0.0, 0.9]).unwrap();
        let t = partition(&w, 1).unwrap();
        let mut cb = Codebook::new(4, 1, vec![-0.4, 0.0, 0.3, 0.8]).unwrap();
        let mut soft = SoftAssignments::initialize(&t, &cb, 2).unwrap();
        let (soft0, cb0) = (soft.clone(), cb.clone());
        let cfg = ConvexConfig { n: 2, lr_codebook: 0.0, lr_scores: 0.0, init_steps: 5, ..Default::default() };
        init_phase(&t, &mut soft, &mut cb, &cfg).unwrap();
        assert_eq!(soft, soft0);
        assert_eq!(cb, cb0);
    }

    #[test]
    fn config_validation() {
        assert!(ConvexConfig::default().validate(256).is_ok());
        assert!(ConvexConfig { n: 1, ..Default::default() }.validate(256).is_err());
        assert!(ConvexConfig { n: 8, ..Default::default() }.validate(4).is_err());
        assert!(ConvexConfig { lambda: 1.0, ..Default::default() }.validate(256).is_err());
    }
}
