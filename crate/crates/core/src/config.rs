//! Codebook shapes for the supported bit widths.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// A codebook geometry: `k` codewords of length `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodebookShape {
    pub k: usize,
    pub d: usize,
}

impl CodebookShape {
    pub fn bits_per_weight(&self) -> f64 {
        f64::from(self.k.trailing_zeros()) / self.d as f64
    }
}

/// 3 bits: 2^6 x 2, 2 bits: 2^8 x 4, 1 bit: 2^8 x 8.
pub fn preset(bits: u32) -> Result<CodebookShape> {
    match bits {
        3 => Ok(CodebookShape { k: 64, d: 2 }),
        2 => Ok(CodebookShape { k: 256, d: 4 }),
        1 => Ok(CodebookShape { k: 256, d: 8 }),
        other => Err(contract(format!("no codebook preset for {other} bits per weight"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_hit_their_rate() {
        for bits in 1..=3 {
            assert_eq!(preset(bits).unwrap().bits_per_weight(), f64::from(bits));
        }
        assert!(preset(4).is_err());
    }
}
