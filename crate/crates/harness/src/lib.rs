//! Experiment driver for vqforge: outlier-heavy synthetic weights, toy
//! networks with analytic gradients, a round-to-nearest baseline, and the
//! ablation / consistency / histogram studies.

pub mod bench;
pub mod histogram;
pub mod mlp;
pub mod rtn;
pub mod ssm;
pub mod synth;
