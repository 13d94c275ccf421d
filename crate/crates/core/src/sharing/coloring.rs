use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

/// Identifier of a shared basis; unique across shape groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BasisId(pub usize);

impl fmt::Display for BasisId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B{}", self.0)
    }
}

/// A total map from layer indices (0-based) to basis ids drawn from a pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    assignment: Vec<BasisId>,
    basis_ids: BTreeSet<BasisId>,
}

impl Coloring {
    pub fn new(assignment: Vec<BasisId>, pool: impl IntoIterator<Item = BasisId>) -> Result<Self> {
        let basis_ids: BTreeSet<BasisId> = pool.into_iter().collect();
        if let Some((l, b)) = assignment.iter().enumerate().find(|(_, b)| !basis_ids.contains(b)) {
            return param_err(format!("layer {l} uses {b}, which is not in the basis pool"));
        }
        Ok(Self { assignment, basis_ids })
    }

    /// Pool equal to the set of ids actually used.
    pub fn from_assignment(assignment: Vec<BasisId>) -> Self {
        let basis_ids = assignment.iter().copied().collect();
        Self { assignment, basis_ids }
    }

    pub fn num_layers(&self) -> usize {
        self.assignment.len()
    }

    pub fn basis_of(&self, layer: usize) -> BasisId {
        self.assignment[layer]
    }

    pub fn assignment(&self) -> &[BasisId] {
        &self.assignment
    }

    pub fn basis_ids(&self) -> &BTreeSet<BasisId> {
        &self.basis_ids
    }

    pub fn used_bases(&self) -> BTreeSet<BasisId> {
        self.assignment.iter().copied().collect()
    }

    /// `A[l][b] = [α(l) = b]` with columns in ascending pool order.
    pub fn indicator(&self) -> Vec<Vec<bool>> {
        self.assignment
            .iter()
            .map(|a| self.basis_ids.iter().map(|b| a == b).collect())
            .collect()
    }

    /// Edges `(l, α(l))` of the layer–basis bipartite graph.
    pub fn edges(&self) -> Vec<(usize, BasisId)> {
        self.assignment.iter().copied().enumerate().collect()
    }
}

/// The partition of layers by basis and the order of the automorphism group
/// it induces, the direct product of symmetric groups on the classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorClasses {
    pub classes: BTreeMap<BasisId, Vec<usize>>,
    pub automorphism_order: u128,
    /// Class sizes, descending.
    pub factor_sizes: Vec<usize>,
}

pub fn color_classes(coloring: &Coloring, num_layers: usize) -> Result<ColorClasses> {
    if coloring.num_layers() != num_layers {
        return param_err(format!(
            "coloring covers {} layers, expected {num_layers}",
            coloring.num_layers()
        ));
    }
    let mut classes: BTreeMap<BasisId, Vec<usize>> = BTreeMap::new();
    for (l, &b) in coloring.assignment.iter().enumerate() {
        classes.entry(b).or_default().push(l);
    }
    let mut factor_sizes: Vec<usize> = classes.values().map(Vec::len).collect();
    factor_sizes.sort_unstable_by(|a, b| b.cmp(a));
    let mut order: u128 = 1;
    for &size in &factor_sizes {
        for k in 2..=size as u128 {
            order = order
                .checked_mul(k)
                .ok_or_else(|| crate::Error::Parameter("automorphism group order overflows u128".into()))?;
        }
    }
    Ok(ColorClasses {
        classes,
        automorphism_order: order,
        factor_sizes,
    })
}

/// Whether `pi` (with `pi[l] = π(l)`) preserves the coloring: `α(π(l)) = α(l)`.
pub fn check_automorphism(coloring: &Coloring, pi: &[usize]) -> Result<bool> {
    let n = coloring.num_layers();
    if pi.len() != n {
        return param_err(format!("permutation of {} elements for {n} layers", pi.len()));
    }
    let mut seen = vec![false; n];
    for &p in pi {
        if p >= n || seen[p] {
            return param_err("not a bijection on the layer set");
        }
        seen[p] = true;
    }
    Ok(pi
        .iter()
        .enumerate()
        .all(|(l, &p)| coloring.assignment[p] == coloring.assignment[l]))
}

/// JSON form of a coloring together with the settings that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColoringRecord {
    pub layers: usize,
    pub assignment: Vec<BasisId>,
    pub rank: usize,
    pub basis_strategy: String,
    pub seed: u64,
}

impl ColoringRecord {
    pub fn new(coloring: &Coloring, rank: usize, basis_strategy: &str, seed: u64) -> Self {
        Self {
            layers: coloring.num_layers(),
            assignment: coloring.assignment.clone(),
            rank,
            basis_strategy: basis_strategy.to_string(),
            seed,
        }
    }

    pub fn to_coloring(&self) -> Result<Coloring> {
        if self.assignment.len() != self.layers {
            return param_err("assignment length differs from layer count");
        }
        Ok(Coloring::from_assignment(self.assignment.clone()))
    }
}
