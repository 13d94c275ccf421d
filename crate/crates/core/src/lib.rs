//! Cross-layer parameter sharing chosen by a second-order criterion.
//!
//! Layers are colored with shared low-rank bases. For each layer the basis is
//! picked whose sharing perturbation has the least energy in the
//! high-curvature eigensubspace of the layer-wise Hessian, and the remaining
//! low-curvature perturbation is clipped to a trust region.
//!
//! Modules, bottom-up:
//!
//! - [`linalg`]: dense matrices, symmetric eigensolvers, truncated SVD, Lanczos.
//! - [`net`]: small bias-free MLPs with exact gradients and Hessian-vector products.
//! - [`sharing`]: colorings, color classes, shared bases, compression accounting.
//! - [`curvature`]: minor axes, perturbation splits, quadratic surrogate.
//! - [`aligner`]: per-layer basis selection, clipping and the full sharing pass.
//! - [`harness`]: synthetic data, training, baselines, oracles and ablations.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aligner;
pub mod curvature;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod net;
pub mod rng;
pub mod sharing;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, EigenPairs, SymmetricOperator};
pub use net::{Activation, Batch, LossKind, ModelParams, ModelSpec, Targets};
pub use sharing::{BasisId, ColorClasses, Coloring, SharedBasis};
