//! Distribution of the largest soft-assignment ratio per sub-vector.

use serde::Serialize;
use vqforge_core::convexopt::SoftAssignments;

pub const BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioHistogram {
    /// Lower edge of the first bin, `1 / n`.
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<usize>,
}

impl RatioHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn top(&self) -> usize {
        *self.counts.last().unwrap_or(&0)
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.counts.len()).map(|b| self.lo + b as f64 * self.width).collect()
    }

    fn bin(&self, r: f64) -> usize {
        let b = ((r - self.lo) / self.width).floor();
        (b.max(0.0) as usize).min(self.counts.len() - 1)
    }
}

/// Bins `max_m r^m` of every sub-vector over `[1/n, 1]`; confirmed
/// sub-vectors count as 1.0.
pub fn max_ratio_histogram(layers: &[SoftAssignments], n: usize) -> RatioHistogram {
    let lo = 1.0 / n.max(1) as f64;
    let bins = (((1.0 - lo) / BIN_WIDTH) - 1e-9).ceil().max(1.0) as usize;
    let mut h = RatioHistogram { lo, width: BIN_WIDTH, counts: vec![0; bins] };
    for layer in layers {
        for s in &layer.states {
            let r = if s.is_confirmed() { 1.0 } else { s.argmax_slot().1 };
            let b = h.bin(r);
            h.counts[b] += 1;
        }
    }
    h
}
