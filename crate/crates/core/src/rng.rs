//! Seeded random sources. Every random draw in the crate goes through here so
//! that a `u64` seed fully determines a run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::DenseMatrix;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a labelled sub-task.
pub fn derive(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_vec(rows, cols, normal_vec(rng, rows * cols))
        .expect("shape matches by construction")
}

/// Random matrix with orthonormal columns (QR of a Gaussian matrix).
pub fn orthonormal_columns(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
    let g = normal_matrix(rng, rows, cols);
    crate::linalg::orthonormalize_columns(&g)
}
