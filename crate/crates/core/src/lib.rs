//! Post-training vector quantization of weight matrices.
//!
//! A layer's weights are cut into length-`d` sub-vectors, each represented by
//! an index into a shared `k x d` codebook. Codebooks start from k-means;
//! assignments are then calibrated as convex combinations of a few nearest
//! codewords and hardened one sub-vector at a time once a combination
//! becomes nearly one-hot. The result is stored bit-packed and can be
//! multiplied against directly.

pub mod config;
pub mod convexopt;
pub mod error;
pub mod incremental;
pub mod kmeans;
pub mod packfmt;
pub mod qinfer;
pub mod weightio;

pub use error::{Error, Result};
