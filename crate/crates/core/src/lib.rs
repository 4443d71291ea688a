//! Certification toolkit for hypergraph neural networks: forward/backward
//! passes for five architectures, margin-based generalization certificates
//! driven by spectral weight norms and structural statistics, empirical
//! perturbation-lemma verification, synthetic hypergraph datasets, and the
//! correlation-study orchestration behind the `hypercert` binary.

pub mod bounds;
pub mod error;
pub mod experiment;
pub mod hypergraph;
pub mod linalg;
pub mod models;
pub mod parallel;
pub mod perturb;
pub mod stats;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use hypergraph::Arch;
