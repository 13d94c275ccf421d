use std::collections::{BTreeMap, BTreeSet};

use crate::error::{param_err, Error, Result};
use crate::linalg::DenseMatrix;
use crate::net::{Activation, Scalar};

pub type ColorId = usize;

/// A single layer whose connections are edges of a bipartite graph between
/// inputs and outputs; edges of one color share one scalar parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeColoredLayer {
    n_in: usize,
    n_out: usize,
    /// `(input, output) -> color`
    edges: BTreeMap<(usize, usize), ColorId>,
    theta: BTreeMap<ColorId, f64>,
    activation: Activation,
}

impl EdgeColoredLayer {
    /// Checks edge endpoints and uniqueness. Colors without a parameter are
    /// accepted here and reported by [`validate`](Self::validate) or
    /// [`forward`](Self::forward).
    pub fn new(
        n_in: usize,
        n_out: usize,
        edges: impl IntoIterator<Item = ((usize, usize), ColorId)>,
        theta: BTreeMap<ColorId, f64>,
        activation: Activation,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return param_err("a layer needs at least one input and one output");
        }
        let mut map = BTreeMap::new();
        for ((i, o), c) in edges {
            if i >= n_in || o >= n_out {
                return param_err(format!("edge ({i}, {o}) outside a {n_in}->{n_out} layer"));
            }
            if map.insert((i, o), c).is_some() {
                return param_err(format!("edge ({i}, {o}) colored twice"));
            }
        }
        Ok(Self {
            n_in,
            n_out,
            edges: map,
            theta,
            activation,
        })
    }

    /// Complete bipartite layer with one color per edge, reproducing `w`
    /// (`n_out × n_in`).
    pub fn from_dense(w: &DenseMatrix, activation: Activation) -> Result<Self> {
        let (m, n) = w.shape();
        let edges = (0..m).flat_map(|o| (0..n).map(move |i| ((i, o), o * n + i)));
        let theta = (0..m)
            .flat_map(|o| (0..n).map(move |i| (o * n + i, w.get(o, i))))
            .collect();
        Self::new(n, m, edges, theta, activation)
    }

    pub fn colors(&self) -> BTreeSet<ColorId> {
        self.edges.values().copied().collect()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Every color has a parameter and every parameter is used by an edge.
    pub fn validate(&self) -> Result<()> {
        let used = self.colors();
        if let Some(c) = used.iter().find(|c| !self.theta.contains_key(c)) {
            return Err(Error::Config(format!("color {c} has no parameter")));
        }
        if let Some(c) = self.theta.keys().find(|c| !used.contains(c)) {
            return Err(Error::Config(format!("color {c} is not used by any edge")));
        }
        Ok(())
    }

    /// `y_m = σ(Σ_{(n,m)∈E} θ_{color(n,m)} x_n)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_in {
            return param_err(format!("input of length {} for {} inputs", x.len(), self.n_in));
        }
        let mut acc = vec![0.0; self.n_out];
        for (&(i, o), c) in &self.edges {
            let theta = self
                .theta
                .get(c)
                .ok_or_else(|| Error::Config(format!("color {c} has no parameter")))?;
            acc[o] += theta * x[i];
        }
        Ok(acc.into_iter().map(|z| self.activation_value(z)).collect())
    }

    fn activation_value(&self, z: f64) -> f64 {
        match self.activation {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::SmoothRelu { sharpness } => Scalar::softplus(sharpness * z) / sharpness,
        }
    }

    /// Dense `n_out × n_in` weight implied by the coloring (absent edges are 0).
    pub fn dense_weight(&self) -> Result<DenseMatrix> {
        let mut w = DenseMatrix::zeros(self.n_out, self.n_in);
        for (&(i, o), c) in &self.edges {
            let theta = self
                .theta
                .get(c)
                .ok_or_else(|| Error::Config(format!("color {c} has no parameter")))?;
            w.set(o, i, w.get(o, i) + theta);
        }
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn full_sharing_sums_inputs() {
        let layer = EdgeColoredLayer::new(
            2,
            1,
            [((0, 0), 7), ((1, 0), 7)],
            BTreeMap::from([(7, 1.0)]),
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(layer.forward(&[2.5, -1.0]).unwrap(), vec![1.5]);
        assert_eq!(layer.colors().len(), 1);
    }

    #[test]
    fn distinct_colors_reproduce_matmul() {
        let w = rng::normal_matrix(&mut rng::seeded(2), 3, 4);
        let x = rng::normal_vec(&mut rng::seeded(3), 4);
        let layer = EdgeColoredLayer::from_dense(&w, Activation::Identity).unwrap();
        layer.validate().unwrap();
        let y = layer.forward(&x).unwrap();
        for (a, b) in y.iter().zip(w.matvec(&x).unwrap()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(layer.dense_weight().unwrap(), w);
    }

    #[test]
    fn empty_edge_set() {
        let layer = EdgeColoredLayer::new(3, 2, [], BTreeMap::new(), Activation::Tanh).unwrap();
        assert_eq!(layer.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let soft = EdgeColoredLayer::new(1, 1, [], BTreeMap::new(), Activation::SmoothRelu { sharpness: 1.0 }).unwrap();
        assert!((soft.forward(&[5.0]).unwrap()[0] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn missing_parameter_is_a_configuration_error() {
        let layer = EdgeColoredLayer::new(1, 1, [((0, 0), 3)], BTreeMap::new(), Activation::Identity).unwrap();
        assert!(matches!(layer.forward(&[1.0]), Err(Error::Config(_))));
        assert!(matches!(layer.validate(), Err(Error::Config(_))));
        let unused = EdgeColoredLayer::new(
            1,
            1,
            [((0, 0), 3)],
            BTreeMap::from([(3, 1.0), (4, 2.0)]),
            Activation::Identity,
        )
        .unwrap();
        assert!(unused.validate().is_err());
    }

    #[test]
    fn bad_edges_rejected() {
        assert!(EdgeColoredLayer::new(1, 1, [((1, 0), 0)], BTreeMap::new(), Activation::Identity).is_err());
        assert!(
            EdgeColoredLayer::new(1, 1, [((0, 0), 0), ((0, 0), 1)], BTreeMap::new(), Activation::Identity).is_err()
        );
    }
}
