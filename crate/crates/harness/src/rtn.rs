//! Round-to-nearest uniform quantization baseline.

use vqforge_core::weightio::WeightMatrix;
use vqforge_core::{Error, Result};

/// Symmetric per-tensor RTN. For `bits >= 2` the grid is
/// `scale * {-(2^(b-1) - 1), ..., 2^(b-1) - 1}` with `scale = max|w| / (2^(b-1) - 1)`
/// and ties rounded away from zero. At one bit every weight becomes
/// `±mean|w|` (zero maps to the positive level).
pub fn baseline_rtn(w: &WeightMatrix, bits: u32) -> Result<WeightMatrix> {
    if !(1..=8).contains(&bits) {
        return Err(Error::Contract(format!("RTN supports 1..=8 bits, got {bits}")));
    }
    let values = w.values();
    let out: Vec<f32> = if bits == 1 {
        let scale = values.iter().map(|v| f64::from(v.abs())).sum::<f64>() / values.len() as f64;
        values
            .iter()
            .map(|&v| if v < 0.0 { -scale as f32 } else { scale as f32 })
            .collect()
    } else {
        let levels = f64::from((1u32 << (bits - 1)) - 1);
        let max = values.iter().fold(0f64, |m, v| m.max(f64::from(v.abs())));
        if max == 0.0 {
            vec![0.0; values.len()]
        } else {
            let scale = max / levels;
            values
                .iter()
                // f64::round already breaks ties away from zero
                .map(|&v| ((f64::from(v) / scale).round().clamp(-levels, levels) * scale) as f32)
                .collect()
        }
    };
    WeightMatrix::new(w.name(), w.rows(), w.cols(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: &[f32]) -> WeightMatrix {
        WeightMatrix::new("t", 1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn ties_go_away_from_zero() {
        let q = baseline_rtn(&m(&[-1.0, -0.5, 0.0, 0.5, 1.0]), 2).unwrap();
        assert_eq!(q.values(), &[-1.0, -1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn grid_is_fixed_point() {
        let w = m(&[-3.0, -1.0, 0.0, 2.0, 3.0]);
        assert_eq!(baseline_rtn(&w, 3).unwrap().values(), w.values());
    }

    #[test]
    fn zeros_and_sign() {
        assert!(baseline_rtn(&m(&[0.0; 4]), 4).unwrap().values().iter().all(|&v| v == 0.0));
        assert_eq!(baseline_rtn(&m(&[-2.0, 1.0, 0.0, 1.0]), 1).unwrap().values(), &[-1.0, 1.0, 1.0, 1.0]);
        assert!(baseline_rtn(&m(&[1.0]), 0).is_err());
        assert!(baseline_rtn(&m(&[1.0]), 9).is_err());
    }
}
