//! Calibration loop: composite objective, optimizer steps, adaptive
//! replacement, and incremental confirmation of near one-hot assignments.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::convexopt::{
    adaptive_replace, grad_codebook, init_phase, Adamax, ConvexConfig, InitPhaseReport, SoftAssignments,
};
use crate::error::{contract, Error, Result};
use crate::kmeans::{kmeans, Assignments, Codebook, KMeansConfig};
use crate::weightio::{partition, ModelBundle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub task: f64,
    pub bkd: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { task: 1.0, bkd: 1.0, reg: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibConfig {
    /// Codebook size per layer (power of two).
    pub k: usize,
    /// Sub-vector length.
    pub d: usize,
    /// Confirmation threshold on the largest ratio.
    pub tau: f64,
    pub max_epochs: usize,
    pub loss_weights: LossWeights,
    pub enable_replacement: bool,
    pub enable_incremental: bool,
    pub seed: u64,
    pub kmeans: KMeansConfig,
    pub convex: ConvexConfig,
    /// Check simplex, hull, replacement and truncation bounds after every
    /// step and record the worst cases in the report.
    pub trace_invariants: bool,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            k: 256,
            d: 4,
            tau: 0.99,
            max_epochs: 20,
            loss_weights: LossWeights::default(),
            enable_replacement: true,
            enable_incremental: true,
            seed: 0,
            kmeans: KMeansConfig::default(),
            convex: ConvexConfig::default(),
            trace_invariants: false,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.5 && self.tau < 1.0) {
            return Err(contract(format!("tau must lie in (0.5, 1), got {}", self.tau)));
        }
        if !self.k.is_power_of_two() {
            return Err(contract(format!("codebook size {} is not a power of two", self.k)));
        }
        if self.d == 0 {
            return Err(contract("sub-vector length must be positive"));
        }
        self.convex.validate(self.k)
    }
}

/// Mean squared error over all elements and its gradient `2 (out - y) / N`.
pub fn loss_task(outputs: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if outputs.dim() != targets.dim() {
        return Err(contract(format!(
            "outputs {:?} and targets {:?} differ in shape",
            outputs.dim(),
            targets.dim()
        )));
    }
    let n = outputs.len().max(1) as f64;
    let diff = outputs - targets;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

/// Sum over blocks of the per-block mean squared feature error, with the
/// gradient with respect to each quantized block output.
pub fn loss_bkd(fp: &[Array2<f64>], q: &[Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)> {
    if fp.len() != q.len() {
        return Err(contract(format!(
            "{} full-precision blocks against {} quantized blocks",
            fp.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(q.len());
    for (f, b) in fp.iter().zip(q) {
        let (l, g) = loss_task(b, f)?;
        total += l;
        grads.push(g);
    }
    Ok((total, grads))
}

/// Convergence regularizer `sum over layers of (d / (o i)) sum r (1 - r)`
/// over unconfirmed sub-vectors, with its score gradients laid out as
/// `[layer][sub-vector][slot]`.
pub fn loss_reg(layers: &[SoftAssignments]) -> (f64, Vec<Vec<Vec<f64>>>) {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(layers.len());
    for soft in layers {
        let scale = 1.0 / soft.len().max(1) as f64;
        let mut layer_grads = Vec::with_capacity(soft.len());
        for s in &soft.states {
            if s.is_confirmed() {
                layer_grads.push(vec![0.0; s.n()]);
                continue;
            }
            let r = s.ratios();
            let sum_sq: f64 = r.iter().map(|v| v * v).sum();
            total += scale * r.iter().map(|v| v * (1.0 - v)).sum::<f64>();
            layer_grads.push(r.iter().map(|&rk| scale * 2.0 * rk * (sum_sq - rk)).collect());
        }
        grads.push(layer_grads);
    }
    (total, grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CombinedLoss {
    pub total: f64,
    pub include_reg: bool,
}

/// `L_t + L_bkd`, plus `L_r` only when it grew since the previous step (or
/// when there is no previous step).
pub fn combine_losses(task: f64, bkd: f64, reg: f64, prev_reg: Option<f64>) -> CombinedLoss {
    let include_reg = prev_reg.is_none_or(|p| reg > p);
    CombinedLoss {
        total: task + bkd + if include_reg { reg } else { 0.0 },
        include_reg,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ConfirmStats {
    pub confirmed: usize,
    /// Sum of squared jumps `||c* - w_soft||^2` over the newly confirmed.
    pub truncation_error: f64,
    /// Largest observed `jump / ((1 - r_max) * max_j ||c* - c_j||)`; at most
    /// 1 up to rounding.
    pub worst_bound_ratio: f64,
}

/// Hardens every unconfirmed sub-vector whose largest ratio exceeds `tau`.
pub fn confirm_step(soft: &mut SoftAssignments, cb: &Codebook, tau: f64) -> ConfirmStats {
    let mut stats = ConfirmStats::default();
    for s in soft.states.iter_mut().filter(|s| !s.is_confirmed()) {
        let (slot, r_max) = s.argmax_slot();
        if r_max <= tau {
            continue;
        }
        let (jump, ratio) = truncation(s, cb, slot);
        s.confirmed = Some(s.candidates[slot]);
        stats.confirmed += 1;
        stats.truncation_error += jump;
        stats.worst_bound_ratio = stats.worst_bound_ratio.max(ratio);
    }
    stats
}

/// Squared jump from the soft point to candidate `slot`, and that jump
/// relative to its a-priori bound.
fn truncation(s: &crate::convexopt::SoftState, cb: &Codebook, slot: usize) -> (f64, f64) {
    let soft_point = s.soft_point(cb);
    let target = cb.codeword(s.candidates[slot] as usize);
    let jump: f64 = soft_point
        .iter()
        .zip(target)
        .map(|(a, &b)| (a - f64::from(b)).powi(2))
        .sum();
    let spread = s
        .candidates
        .iter()
        .map(|&c| {
            cb.codeword(c as usize)
                .iter()
                .zip(target)
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    // 1 - r_max, summed from the other ratios so it stays accurate when
    // r_max rounds to 1
    let rest: f64 = s
        .ratios()
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != slot)
        .map(|(_, r)| r)
        .sum();
    let bound = rest * spread;
    let ratio = if bound > 0.0 {
        jump.sqrt() / bound
    } else if jump > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    (jump, ratio)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ForcedConfirmation {
    pub forced: usize,
    pub residual_truncation_error: f64,
}

/// Confirms every remaining sub-vector to its argmax candidate (lowest slot
/// on ties) and returns the complete hard assignment grid.
pub fn finalize_force_confirm(soft: &mut SoftAssignments, cb: &Codebook) -> (Assignments, ForcedConfirmation) {
    let mut out = ForcedConfirmation::default();
    for s in soft.states.iter_mut().filter(|s| !s.is_confirmed()) {
        let (slot, _) = s.argmax_slot();
        let (jump, _) = truncation(s, cb, slot);
        s.confirmed = Some(s.candidates[slot]);
        out.forced += 1;
        out.residual_truncation_error += jump;
    }
    let indices = soft
        .states
        .iter()
        .map(|s| s.confirmed.expect("all states confirmed"))
        .collect();
    let assignments =
        Assignments::new(soft.rows(), soft.slots(), indices).expect("grid matches soft states");
    (assignments, out)
}

/// Outputs and per-block features of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub outputs: Array2<f64>,
    /// One feature matrix per block, in block order.
    pub features: Vec<Array2<f64>>,
}

/// One calibration batch.
#[derive(Debug, Clone)]
pub struct Batch<I> {
    pub input: I,
    pub targets: Array2<f64>,
}

/// A network whose weight matrices are being quantized, in bundle layer
/// order.
pub trait ModelAdapter {
    type Input;
    type Cache;

    fn forward(&self, input: &Self::Input, weights: &[ArrayView2<'_, f32>]) -> Result<(ForwardOutput, Self::Cache)>;

    /// Gradient of a scalar loss with respect to every weight matrix, given
    /// its gradients with respect to the outputs and the block features.
    fn backward(
        &self,
        input: &Self::Input,
        cache: &Self::Cache,
        weights: &[ArrayView2<'_, f32>],
        grad_outputs: &Array2<f64>,
        grad_features: &[Array2<f64>],
    ) -> Result<Vec<Array2<f64>>>;
}

/// Treats every layer as an independent linear map `y = x W^T` over its own
/// input set. Each layer output is a block; the model output is the last
/// layer's output.
#[derive(Debug, Clone, Copy, Default)]
pub struct LayerwiseAdapter;

impl ModelAdapter for LayerwiseAdapter {
    type Input = Vec<Array2<f64>>;
    type Cache = ();

    fn forward(&self, input: &Self::Input, weights: &[ArrayView2<'_, f32>]) -> Result<(ForwardOutput, ())> {
        if input.len() != weights.len() || weights.is_empty() {
            return Err(contract(format!("{} input sets for {} layers", input.len(), weights.len())));
        }
        let mut features = Vec::with_capacity(weights.len());
        for (x, w) in input.iter().zip(weights) {
            if x.ncols() != w.ncols() {
                return Err(contract(format!("input width {} for a layer with {} columns", x.ncols(), w.ncols())));
            }
            features.push(x.dot(&w.mapv(f64::from).t()));
        }
        let outputs = features.last().cloned().expect("at least one layer");
        Ok((ForwardOutput { outputs, features }, ()))
    }

    fn backward(
        &self,
        input: &Self::Input,
        _cache: &(),
        weights: &[ArrayView2<'_, f32>],
        grad_outputs: &Array2<f64>,
        grad_features: &[Array2<f64>],
    ) -> Result<Vec<Array2<f64>>> {
        let last = weights.len() - 1;
        Ok(input
            .iter()
            .zip(grad_features)
            .enumerate()
            .map(|(l, (x, g))| {
                if l == last {
                    (g + grad_outputs).t().dot(x)
                } else {
                    g.t().dot(x)
                }
            })
            .collect())
    }
}

/// Per-epoch calibration statistics.
#[derive(Debug, Clone, Default, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss_task: f64,
    pub loss_bkd: f64,
    pub loss_reg: f64,
    /// Steps in which the regularizer was part of the objective.
    pub reg_included_steps: usize,
    pub newly_confirmed: usize,
    pub confirmed_fraction: f64,
    pub truncation_error: f64,
    pub replacements: usize,
}

/// Worst cases seen while tracing invariants.
#[derive(Debug, Clone, Default, Serialize)]
pub struct InvariantTrace {
    pub steps_checked: usize,
    /// Largest `|sum r - 1|`.
    pub max_simplex_error: f64,
    pub min_ratio: f64,
    /// Reconstructions outside their candidates' per-coordinate bounds.
    pub hull_violations: usize,
    /// Largest `||sum r c - w_hat||` over all sub-vectors.
    pub max_barycentric_residual: f64,
    pub replacement_sweeps: usize,
    pub replaced_candidates: usize,
    /// Largest `shift / (lambda * max pairwise codeword distance)`.
    pub max_replacement_shift_ratio: f64,
    pub replacement_bound_violations: usize,
    pub duplicate_candidate_violations: usize,
    /// Largest truncation jump relative to `(1 - r_max) * spread`.
    pub max_truncation_bound_ratio: f64,
    pub confirmed_monotone: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibReport {
    pub epochs: Vec<EpochReport>,
    pub init: Vec<InitPhaseReport>,
    pub steps: usize,
    pub all_confirmed_incrementally: bool,
    pub forced: ForcedConfirmation,
    /// Task loss of the calibration-time weights `W_hat`.
    pub final_calibration_loss: f64,
    /// Task loss of the weights rebuilt from codebooks and assignments.
    pub final_inference_loss: f64,
    pub final_calibration_bkd: f64,
    pub final_inference_bkd: f64,
    pub invariants: Option<InvariantTrace>,
}

#[derive(Debug, Clone)]
pub struct QuantizedLayer {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub codebook: Codebook,
    pub assignments: Assignments,
}

impl QuantizedLayer {
    pub fn reconstruct(&self) -> Vec<f32> {
        self.assignments.reconstruct(&self.codebook)
    }
}

#[derive(Debug, Clone)]
pub struct CalibOutcome {
    pub layers: Vec<QuantizedLayer>,
    /// Plain k-means quantization that seeded the calibration.
    pub baseline: Vec<QuantizedLayer>,
    pub report: CalibReport,
}

/// State visible to an epoch observer.
pub struct EpochView<'a> {
    pub epoch: usize,
    pub soft: &'a [SoftAssignments],
    pub codebooks: &'a [Codebook],
    pub report: &'a EpochReport,
}

fn as_views<'a>(weights: &'a [Vec<f32>], shapes: &[(usize, usize)]) -> Vec<ArrayView2<'a, f32>> {
    weights
        .iter()
        .zip(shapes)
        .map(|(w, &s)| ArrayView2::from_shape(s, w).expect("weights match layer shape"))
        .collect()
}

struct Evaluation {
    task: f64,
    bkd: f64,
}

fn evaluate<A: ModelAdapter>(
    adapter: &A,
    data: &[Batch<A::Input>],
    fp_features: &[Vec<Array2<f64>>],
    weights: &[ArrayView2<'_, f32>],
) -> Result<Evaluation> {
    let mut task = 0.0;
    let mut bkd = 0.0;
    for (batch, fp) in data.iter().zip(fp_features) {
        let (out, _) = adapter.forward(&batch.input, weights)?;
        task += loss_task(&out.outputs, &batch.targets)?.0;
        bkd += loss_bkd(fp, &out.features)?.0;
    }
    let n = data.len().max(1) as f64;
    Ok(Evaluation { task: task / n, bkd: bkd / n })
}

fn trace_states(trace: &mut InvariantTrace, soft: &[SoftAssignments], codebooks: &[Codebook], w_hat: &[Vec<f32>]) {
    trace.steps_checked += 1;
    for ((layer, cb), wh) in soft.iter().zip(codebooks).zip(w_hat) {
        let d = cb.dim();
        for (s, w) in layer.states.iter().zip(wh.chunks_exact(d)) {
            if !s.has_distinct_candidates() {
                trace.duplicate_candidate_violations += 1;
            }
            let r = s.effective_ratios();
            let sum: f64 = r.iter().sum();
            trace.max_simplex_error = trace.max_simplex_error.max((sum - 1.0).abs());
            trace.min_ratio = r.iter().copied().fold(trace.min_ratio, f64::min);
            let mut residual = 0.0;
            for (j, &wj) in w.iter().enumerate() {
                let mut lo = f32::INFINITY;
                let mut hi = f32::NEG_INFINITY;
                let mut comb = 0.0;
                for (&c, &rm) in s.candidates.iter().zip(&r) {
                    let v = cb.codeword(c as usize)[j];
                    lo = lo.min(v);
                    hi = hi.max(v);
                    comb += rm * f64::from(v);
                }
                if wj < lo || wj > hi {
                    trace.hull_violations += 1;
                }
                residual += (comb - f64::from(wj)).powi(2);
            }
            trace.max_barycentric_residual = trace.max_barycentric_residual.max(residual.sqrt());
        }
    }
}

/// Runs calibration with a callback after every epoch.
pub fn calibrate_with<A, F>(
    bundle: &ModelBundle,
    adapter: &A,
    data: &[Batch<A::Input>],
    cfg: &CalibConfig,
    mut observer: F,
) -> Result<CalibOutcome>
where
    A: ModelAdapter,
    F: FnMut(&EpochView<'_>),
{
    cfg.validate()?;
    if bundle.is_empty() {
        return Err(contract("bundle has no layers to quantize"));
    }
    if data.is_empty() {
        return Err(contract("calibration needs at least one batch"));
    }
    let shapes: Vec<(usize, usize)> = bundle.layers().iter().map(|l| (l.rows(), l.cols())).collect();

    let mut codebooks = Vec::with_capacity(bundle.len());
    let mut soft = Vec::with_capacity(bundle.len());
    let mut baseline = Vec::with_capacity(bundle.len());
    let mut init_reports = Vec::with_capacity(bundle.len());
    for (li, layer) in bundle.layers().iter().enumerate() {
        let table = partition(layer, cfg.d)?;
        let km = kmeans(&table, cfg.k, cfg.seed.wrapping_add(li as u64), &cfg.kmeans)?;
        baseline.push(QuantizedLayer {
            name: layer.name().to_string(),
            rows: layer.rows(),
            cols: layer.cols(),
            codebook: km.codebook.clone(),
            assignments: km.assignments.clone(),
        });
        let mut cb = km.codebook;
        let mut states = SoftAssignments::initialize(&table, &cb, cfg.convex.n)?;
        init_reports.push(init_phase(&table, &mut states, &mut cb, &cfg.convex)?);
        codebooks.push(cb);
        soft.push(states);
    }

    let fp_weights: Vec<ArrayView2<'_, f32>> = bundle.layers().iter().map(|l| l.view()).collect();
    let fp_features = data
        .iter()
        .map(|b| adapter.forward(&b.input, &fp_weights).map(|(o, _)| o.features))
        .collect::<Result<Vec<_>>>()?;

    let n = cfg.convex.n;
    let mut opt_scores: Vec<Adamax> = soft.iter().map(|s| Adamax::new(s.len() * n, cfg.convex.lr_scores)).collect();
    let mut opt_codebooks: Vec<Adamax> = codebooks
        .iter()
        .map(|c| Adamax::new(c.entries().len(), cfg.convex.lr_codebook))
        .collect();

    let mut trace = cfg.trace_invariants.then(|| InvariantTrace {
        min_ratio: 1.0,
        confirmed_monotone: true,
        ..Default::default()
    });
    let mut epochs = Vec::new();
    let mut prev_reg: Option<f64> = None;
    let mut step = 0usize;
    let mut last_confirmed = 0usize;
    let total_states: usize = soft.iter().map(|s| s.len()).sum();

    'outer: for epoch in 0..cfg.max_epochs {
        let mut rep = EpochReport { epoch, ..Default::default() };
        for (batch, fp) in data.iter().zip(&fp_features) {
            let w_hat: Vec<Vec<f32>> = soft.iter().zip(&codebooks).map(|(s, c)| s.reconstruct(c)).collect();
            let views = as_views(&w_hat, &shapes);
            let (out, cache) = adapter.forward(&batch.input, &views)?;
            let (lt, g_out) = loss_task(&out.outputs, &batch.targets)?;
            let (lb, g_feat) = loss_bkd(fp, &out.features)?;
            let (lr, g_reg) = loss_reg(&soft);
            let lw = cfg.loss_weights;
            let combined = combine_losses(lw.task * lt, lw.bkd * lb, lw.reg * lr, prev_reg.map(|p| lw.reg * p));
            prev_reg = Some(lr);
            if !combined.total.is_finite() {
                let dump = format!(
                    "{{\"loss_task\":{lt},\"loss_bkd\":{lb},\"loss_reg\":{lr},\"confirmed\":{:?}}}",
                    soft.iter().map(|s| s.confirmed_count()).collect::<Vec<_>>()
                );
                return Err(Error::Diverged { epoch, step, dump });
            }
            rep.loss_task += lt;
            rep.loss_bkd += lb;
            rep.loss_reg += lr;
            rep.reg_included_steps += usize::from(combined.include_reg);

            let g_out = g_out * lw.task;
            let g_feat: Vec<Array2<f64>> = g_feat.into_iter().map(|g| g * lw.bkd).collect();
            let grads_w = adapter.backward(&batch.input, &cache, &views, &g_out, &g_feat)?;
            drop(views);

            for (li, gw) in grads_w.iter().enumerate() {
                if gw.dim() != shapes[li] {
                    return Err(contract(format!(
                        "adapter returned a {:?} gradient for a {:?} layer",
                        gw.dim(),
                        shapes[li]
                    )));
                }
                let gw = gw.as_standard_layout();
                let gw = gw.as_slice().expect("standard layout");
                let mut gs = soft[li].grad_scores(gw, &codebooks[li]);
                if combined.include_reg {
                    for (g, r) in gs.iter_mut().zip(&g_reg[li]) {
                        for (a, b) in g.iter_mut().zip(r) {
                            *a += lw.reg * b;
                        }
                    }
                }
                let gs: Vec<f64> = gs.into_iter().flatten().collect();
                let gc = grad_codebook(gw, &soft[li], codebooks[li].k());
                opt_scores[li].step_iter(soft[li].states.iter_mut().flat_map(|s| s.scores.iter_mut()), &gs);
                opt_codebooks[li].step(codebooks[li].entries_mut(), &gc);
            }
            step += 1;

            if cfg.enable_replacement && step.is_multiple_of(cfg.convex.replace_every) {
                for (layer, cb) in soft.iter_mut().zip(&codebooks) {
                    let max_dist = if trace.is_some() { cb.max_pairwise_distance() } else { 0.0 };
                    for s in layer.states.iter_mut() {
                        let r = adaptive_replace(s, cb, cfg.convex.lambda);
                        rep.replacements += r.replaced;
                        if let (Some(t), true) = (trace.as_mut(), r.replaced > 0) {
                            t.replaced_candidates += r.replaced;
                            let bound = cfg.convex.lambda * max_dist;
                            let ratio = if bound > 0.0 { r.shift / bound } else { 0.0 };
                            t.max_replacement_shift_ratio = t.max_replacement_shift_ratio.max(ratio);
                            if r.shift > bound * (1.0 + 1e-9) + 1e-12 {
                                t.replacement_bound_violations += 1;
                            }
                        }
                    }
                }
                if let Some(t) = trace.as_mut() {
                    t.replacement_sweeps += 1;
                }
            }

            if cfg.enable_incremental {
                for (layer, cb) in soft.iter_mut().zip(&codebooks) {
                    let c = confirm_step(layer, cb, cfg.tau);
                    rep.newly_confirmed += c.confirmed;
                    rep.truncation_error += c.truncation_error;
                    if let Some(t) = trace.as_mut() {
                        t.max_truncation_bound_ratio = t.max_truncation_bound_ratio.max(c.worst_bound_ratio);
                    }
                }
            }

            let confirmed: usize = soft.iter().map(|s| s.confirmed_count()).sum();
            if let Some(t) = trace.as_mut() {
                if confirmed < last_confirmed {
                    t.confirmed_monotone = false;
                }
                let w_hat: Vec<Vec<f32>> = soft.iter().zip(&codebooks).map(|(s, c)| s.reconstruct(c)).collect();
                trace_states(t, &soft, &codebooks, &w_hat);
            }
            last_confirmed = confirmed;
            if confirmed == total_states {
                finish_epoch(&mut rep, data.len(), &soft);
                observer(&EpochView { epoch, soft: &soft, codebooks: &codebooks, report: &rep });
                epochs.push(rep);
                break 'outer;
            }
        }
        finish_epoch(&mut rep, data.len(), &soft);
        observer(&EpochView { epoch, soft: &soft, codebooks: &codebooks, report: &rep });
        epochs.push(rep);
    }

    let w_calib: Vec<Vec<f32>> = soft.iter().zip(&codebooks).map(|(s, c)| s.reconstruct(c)).collect();
    let calib_eval = evaluate(adapter, data, &fp_features, &as_views(&w_calib, &shapes))?;

    let mut forced = ForcedConfirmation::default();
    let mut layers = Vec::with_capacity(bundle.len());
    for ((layer, states), cb) in bundle.layers().iter().zip(soft.iter_mut()).zip(&codebooks) {
        let (assignments, f) = finalize_force_confirm(states, cb);
        forced.forced += f.forced;
        forced.residual_truncation_error += f.residual_truncation_error;
        layers.push(QuantizedLayer {
            name: layer.name().to_string(),
            rows: layer.rows(),
            cols: layer.cols(),
            codebook: cb.clone(),
            assignments,
        });
    }
    let w_inf: Vec<Vec<f32>> = layers.iter().map(|l| l.reconstruct()).collect();
    let inf_eval = evaluate(adapter, data, &fp_features, &as_views(&w_inf, &shapes))?;

    let report = CalibReport {
        epochs,
        init: init_reports,
        steps: step,
        all_confirmed_incrementally: forced.forced == 0,
        forced,
        final_calibration_loss: calib_eval.task,
        final_inference_loss: inf_eval.task,
        final_calibration_bkd: calib_eval.bkd,
        final_inference_bkd: inf_eval.bkd,
        invariants: trace,
    };
    Ok(CalibOutcome { layers, baseline, report })
}

fn finish_epoch(rep: &mut EpochReport, batches: usize, soft: &[SoftAssignments]) {
    let steps = batches.max(1) as f64;
    rep.loss_task /= steps;
    rep.loss_bkd /= steps;
    rep.loss_reg /= steps;
    let total: usize = soft.iter().map(|s| s.len()).sum();
    let confirmed: usize = soft.iter().map(|s| s.confirmed_count()).sum();
    rep.confirmed_fraction = confirmed as f64 / total.max(1) as f64;
}

/// Quantizes every layer of `bundle` against `adapter` on `data`.
pub fn calibrate<A: ModelAdapter>(
    bundle: &ModelBundle,
    adapter: &A,
    data: &[Batch<A::Input>],
    cfg: &CalibConfig,
) -> Result<CalibOutcome> {
    calibrate_with(bundle, adapter, data, cfg, |_| {})
}

/// Task loss of `adapter` on `data` with explicit weights, averaged over
/// batches.
pub fn task_loss<A: ModelAdapter>(adapter: &A, data: &[Batch<A::Input>], weights: &[ArrayView2<'_, f32>]) -> Result<f64> {
    let mut total = 0.0;
    for b in data {
        let (out, _) = adapter.forward(&b.input, weights)?;
        total += loss_task(&out.outputs, &b.targets)?.0;
    }
    Ok(total / data.len().max(1) as f64)
}
