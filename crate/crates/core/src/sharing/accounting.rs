use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::basis::{reconstruct, CoefficientForm, SharedBasis};
use super::coloring::{BasisId, Coloring};
use crate::error::{param_err, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCounts {
    /// Scalars stored by the shared model: each used basis once plus one
    /// coefficient per layer.
    pub shared: usize,
    /// Scalars of the dense weights.
    pub dense: usize,
}

impl ParameterCounts {
    pub fn ratio(self) -> f64 {
        1.0 - self.shared as f64 / self.dense as f64
    }
}

/// Stored-scalar counts for a coloring of layers with the given shapes.
pub fn parameter_counts(
    shapes: &[(usize, usize)],
    coloring: &Coloring,
    rank: usize,
    form: CoefficientForm,
) -> Result<ParameterCounts> {
    if shapes.len() != coloring.num_layers() {
        return param_err(format!(
            "{} shapes for a coloring of {} layers",
            shapes.len(),
            coloring.num_layers()
        ));
    }
    if rank == 0 {
        return param_err("rank must be positive");
    }
    let mut basis_shape: BTreeMap<BasisId, (usize, usize)> = BTreeMap::new();
    for (l, &shape) in shapes.iter().enumerate() {
        let b = coloring.basis_of(l);
        let (m, n) = shape;
        if rank > m.min(n) {
            return param_err(format!("rank {rank} exceeds layer {l} of shape {shape:?}"));
        }
        match basis_shape.insert(b, shape) {
            Some(prev) if prev != shape => {
                return param_err(format!("{b} serves layers of shapes {prev:?} and {shape:?}"));
            }
            _ => {}
        }
    }
    let bases: usize = basis_shape.values().map(|&(m, n)| (m + n) * rank).sum();
    let coefficients = shapes.len() * form.stored_len(rank);
    let dense = shapes.iter().map(|&(m, n)| m * n).sum();
    Ok(ParameterCounts {
        shared: bases + coefficients,
        dense,
    })
}

/// `1 − shared/dense`; an error when sharing would store more than the
/// dense model.
pub fn compression_ratio(
    shapes: &[(usize, usize)],
    coloring: &Coloring,
    rank: usize,
    form: CoefficientForm,
) -> Result<f64> {
    let counts = parameter_counts(shapes, coloring, rank, form)?;
    if counts.shared > counts.dense {
        return param_err(format!(
            "rank {rank} stores {} scalars for {} dense ones; no compression possible",
            counts.shared, counts.dense
        ));
    }
    Ok(counts.ratio())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coefficient {
    Full(DenseMatrix),
    Diagonal(Vec<f64>),
}

impl Coefficient {
    pub fn from_matrix(s: &DenseMatrix, form: CoefficientForm) -> Self {
        match form {
            CoefficientForm::Full => Coefficient::Full(s.clone()),
            CoefficientForm::Diagonal => Coefficient::Diagonal((0..s.rows()).map(|i| s.get(i, i)).collect()),
        }
    }

    pub fn to_matrix(&self) -> DenseMatrix {
        match self {
            Coefficient::Full(s) => s.clone(),
            Coefficient::Diagonal(d) => DenseMatrix::from_diag(d),
        }
    }

    pub fn stored(&self) -> &[f64] {
        match self {
            Coefficient::Full(s) => s.as_slice(),
            Coefficient::Diagonal(d) => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedLayer {
    pub basis: BasisId,
    pub coefficient: Coefficient,
}

/// Weights stored purely as shared factors plus per-layer coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedModel {
    pub rank: usize,
    pub form: CoefficientForm,
    pub bases: BTreeMap<BasisId, SharedBasis>,
    pub layers: Vec<SharedLayer>,
}

impl SharedModel {
    /// Keeps only the bases some layer uses.
    pub fn new(rank: usize, form: CoefficientForm, pool: &[SharedBasis], layers: Vec<SharedLayer>) -> Result<Self> {
        let mut bases = BTreeMap::new();
        for layer in &layers {
            let basis = pool
                .iter()
                .find(|b| b.id == layer.basis)
                .ok_or_else(|| crate::Error::Parameter(format!("{} is not in the pool", layer.basis)))?;
            if basis.rank() != rank {
                return param_err(format!("{} has rank {}, model rank is {rank}", basis.id, basis.rank()));
            }
            if layer.coefficient.stored().len() != form.stored_len(rank) {
                return param_err("coefficient size does not match the form");
            }
            bases.entry(basis.id).or_insert_with(|| basis.clone());
        }
        Ok(Self {
            rank,
            form,
            bases,
            layers,
        })
    }

    pub fn coloring(&self) -> Coloring {
        Coloring::from_assignment(self.layers.iter().map(|l| l.basis).collect())
    }

    pub fn layer_weight(&self, l: usize) -> Result<DenseMatrix> {
        let layer = &self.layers[l];
        reconstruct(&self.bases[&layer.basis], &layer.coefficient.to_matrix())
    }

    pub fn dense_weights(&self) -> Result<Vec<DenseMatrix>> {
        (0..self.layers.len()).map(|l| self.layer_weight(l)).collect()
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| self.bases[&l.basis].weight_shape()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn coloring(v: &[usize]) -> Coloring {
        Coloring::from_assignment(v.iter().map(|&b| BasisId(b)).collect())
    }

    #[test]
    fn infeasible_rank_rejected() {
        let d = 6;
        let err = compression_ratio(&[(d, d)], &coloring(&[0]), d, CoefficientForm::Full);
        assert!(matches!(err, Err(crate::Error::Parameter(_))));
        assert!(compression_ratio(&[(4, 4)], &coloring(&[0]), 5, CoefficientForm::Full).is_err());
    }

    #[test]
    fn thirty_two_layers_twelve_bases() {
        let assignment: Vec<usize> = (0..32).map(|l| l % 12).collect();
        let shapes = vec![(64, 64); 32];
        let counts = parameter_counts(&shapes, &coloring(&assignment), 8, CoefficientForm::Full).unwrap();
        assert_eq!(counts.shared, 12 * (64 + 64) * 8 + 32 * 64);
        assert_eq!(counts.dense, 32 * 64 * 64);
        // explicit materialization
        let mut g = rng::seeded(1);
        let pool: Vec<SharedBasis> = (0..12)
            .map(|b| {
                SharedBasis::new(
                    BasisId(b),
                    rng::orthonormal_columns(&mut g, 64, 8),
                    rng::orthonormal_columns(&mut g, 64, 8),
                )
                .unwrap()
            })
            .collect();
        let layers = assignment
            .iter()
            .map(|&b| SharedLayer {
                basis: BasisId(b),
                coefficient: Coefficient::Full(DenseMatrix::zeros(8, 8)),
            })
            .collect();
        let model = SharedModel::new(8, CoefficientForm::Full, &pool, layers).unwrap();
        let stored: usize = model
            .bases
            .values()
            .map(|b| b.u().as_slice().len() + b.v().as_slice().len())
            .sum::<usize>()
            + model.layers.iter().map(|l| l.coefficient.stored().len()).sum::<usize>();
        assert_eq!(stored, counts.shared);
        let ratio = compression_ratio(&shapes, &coloring(&assignment), 8, CoefficientForm::Full).unwrap();
        assert!((ratio - (1.0 - counts.shared as f64 / counts.dense as f64)).abs() < 1e-15);
    }

    #[test]
    fn merging_bases_raises_ratio() {
        let shapes = vec![(16, 16); 4];
        let split = compression_ratio(&shapes, &coloring(&[0, 1, 2, 3]), 2, CoefficientForm::Full).unwrap();
        let merged = compression_ratio(&shapes, &coloring(&[0, 1, 2, 2]), 2, CoefficientForm::Full).unwrap();
        assert!(merged > split);
        let diag = compression_ratio(&shapes, &coloring(&[0, 1, 2, 2]), 2, CoefficientForm::Diagonal).unwrap();
        assert!(diag > merged);
    }

    #[test]
    fn mixed_shapes_under_one_basis_rejected() {
        assert!(parameter_counts(&[(4, 4), (4, 3)], &coloring(&[0, 0]), 2, CoefficientForm::Full).is_err());
        assert!(parameter_counts(&[(4, 4), (4, 3)], &coloring(&[0, 1]), 2, CoefficientForm::Full).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn ratio_is_monotone(assignment in proptest::collection::vec(0usize..4, 2..10), r in 1usize..6) {
            let shapes = vec![(24, 20); assignment.len()];
            let c = coloring(&assignment);
            if let (Ok(a), Ok(b)) = (
                compression_ratio(&shapes, &c, r, CoefficientForm::Full),
                compression_ratio(&shapes, &c, r + 1, CoefficientForm::Full),
            ) {
                proptest::prop_assert!(b <= a);
            }
            // a fresh basis for the last layer never helps
            let mut more = assignment.clone();
            *more.last_mut().unwrap() = 99;
            if let (Ok(a), Ok(b)) = (
                compression_ratio(&shapes, &c, r, CoefficientForm::Full),
                compression_ratio(&shapes, &coloring(&more), r, CoefficientForm::Full),
            ) {
                proptest::prop_assert!(b <= a);
            }
        }
    }
}
