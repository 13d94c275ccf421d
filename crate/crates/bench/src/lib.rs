//! Fixtures shared by the benchmarks.

use geoshare::harness::{prepare, ExperimentConfig, Prepared};
use geoshare::linalg::symmetrize;
use geoshare::rng;
use geoshare::{Activation, Batch, DenseMatrix, LossKind, ModelParams, ModelSpec, Targets};

/// A random symmetric `dim × dim` matrix.
pub fn symmetric(dim: usize, seed: u64) -> DenseMatrix {
    symmetrize(&rng::normal_matrix(&mut rng::seeded(seed), dim, dim))
}

/// A tanh MLP of uniform width with a random regression batch.
pub fn mlp(width: usize, layers: usize, samples: usize, seed: u64) -> (ModelSpec, ModelParams, Batch) {
    let spec = ModelSpec::new(vec![width; layers + 1], Activation::Tanh, LossKind::MeanSquaredError).unwrap();
    let params = ModelParams::random(&spec, seed, 1.0);
    let mut g = rng::derive(seed, 1);
    let batch = Batch {
        inputs: rng::normal_matrix(&mut g, samples, width),
        targets: Targets::Values(rng::normal_matrix(&mut g, samples, width)),
    };
    (spec, params, batch)
}

/// The default experiment, trained, with `width`-wide layers.
pub fn prepared(width: usize) -> Prepared {
    let mut config = ExperimentConfig::default();
    config.model.layer_dims = vec![width; 5];
    prepare(&config).unwrap()
}
