use serde::{Deserialize, Serialize};

use super::coloring::BasisId;
use crate::error::{param_err, Error, Result};
use crate::linalg::{orthonormality_defect, svd_truncated, DenseMatrix};

const ORTHONORMAL_TOL: f64 = 1e-8;

/// Left and right factors `(U, V)` with orthonormal columns. A layer using
/// this basis stores only its `r × r` coefficient `S` and is rebuilt as
/// `U S Vᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedBasis {
    pub id: BasisId,
    u: DenseMatrix,
    v: DenseMatrix,
}

impl SharedBasis {
    pub fn new(id: BasisId, u: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        if u.cols() != v.cols() || u.cols() == 0 {
            return param_err(format!(
                "factor ranks differ or are zero: U is {:?}, V is {:?}",
                u.shape(),
                v.shape()
            ));
        }
        for (name, f) in [("U", &u), ("V", &v)] {
            let defect = orthonormality_defect(&f.columns());
            if defect > ORTHONORMAL_TOL {
                return Err(Error::Data(format!("{name} columns are not orthonormal (defect {defect:e})")));
            }
        }
        Ok(Self { id, u, v })
    }

    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    /// Shape `(M, N)` of the weights this basis can represent.
    pub fn weight_shape(&self) -> (usize, usize) {
        (self.u.rows(), self.v.rows())
    }

    pub fn with_id(mut self, id: BasisId) -> Self {
        self.id = id;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientForm {
    #[default]
    Full,
    /// Only the diagonal of `S` is stored.
    Diagonal,
}

impl CoefficientForm {
    pub fn stored_len(self, rank: usize) -> usize {
        match self {
            CoefficientForm::Full => rank * rank,
            CoefficientForm::Diagonal => rank,
        }
    }
}

fn check_shape(w: &DenseMatrix, basis: &SharedBasis) -> Result<()> {
    if w.shape() != basis.weight_shape() {
        return param_err(format!(
            "weight of shape {:?} does not match basis {} of shape {:?}",
            w.shape(),
            basis.id,
            basis.weight_shape()
        ));
    }
    Ok(())
}

/// Least-squares coefficient `argmin_S ‖U S Vᵀ − W‖_F = Uᵀ W V`.
pub fn fit_coefficient(w: &DenseMatrix, basis: &SharedBasis) -> Result<DenseMatrix> {
    check_shape(w, basis)?;
    basis.u.transpose().matmul(w)?.matmul(&basis.v)
}

/// Like [`fit_coefficient`], restricted to the given form. The diagonal
/// least-squares solution is the diagonal of `Uᵀ W V` because the rank-one
/// terms `u_k v_kᵀ` are Frobenius-orthonormal.
pub fn fit_coefficient_as(w: &DenseMatrix, basis: &SharedBasis, form: CoefficientForm) -> Result<DenseMatrix> {
    let s = fit_coefficient(w, basis)?;
    Ok(match form {
        CoefficientForm::Full => s,
        CoefficientForm::Diagonal => {
            let r = s.rows();
            DenseMatrix::from_fn(r, r, |i, j| if i == j { s.get(i, i) } else { 0.0 })
        }
    })
}

/// `U S Vᵀ`.
pub fn reconstruct(basis: &SharedBasis, s: &DenseMatrix) -> Result<DenseMatrix> {
    let r = basis.rank();
    if s.shape() != (r, r) {
        return param_err(format!("coefficient of shape {:?} for a rank-{r} basis", s.shape()));
    }
    basis.u.matmul(s)?.matmul(&basis.v.transpose())
}

pub fn reconstruct_coefficient(basis: &SharedBasis, s: &[f64], form: CoefficientForm) -> Result<DenseMatrix> {
    let r = basis.rank();
    let full = match form {
        CoefficientForm::Full => DenseMatrix::from_vec(r, r, s.to_vec())?,
        CoefficientForm::Diagonal => {
            if s.len() != r {
                return param_err("diagonal coefficient length differs from rank");
            }
            DenseMatrix::from_diag(s)
        }
    };
    reconstruct(basis, &full)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisStrategy {
    /// Top-`r` singular subspaces of `K` evenly spaced seed layers.
    PerLayerSvd,
    /// Top-`r` singular subspaces of the mean weight of `K` contiguous runs
    /// of layers (the mean of all layers when `K = 1`).
    MeanSvd,
    /// k-means on vectorized weights, then the SVD of each cluster mean.
    #[default]
    SpectralCluster,
}

impl BasisStrategy {
    pub fn name(self) -> &'static str {
        match self {
            BasisStrategy::PerLayerSvd => "per-layer-svd",
            BasisStrategy::MeanSvd => "mean-svd",
            BasisStrategy::SpectralCluster => "spectral-cluster",
        }
    }
}

/// `K` candidate bases of rank `r` for one group of equally shaped layers,
/// with ids `0..K`.
pub fn build_candidate_bases(
    weights: &[DenseMatrix],
    k: usize,
    r: usize,
    strategy: BasisStrategy,
) -> Result<Vec<SharedBasis>> {
    let first = weights.first().ok_or_else(|| Error::Parameter("no layers to build bases from".into()))?;
    let shape = first.shape();
    if let Some(w) = weights.iter().find(|w| w.shape() != shape) {
        return param_err(format!(
            "layers of shapes {shape:?} and {:?} in one group",
            w.shape()
        ));
    }
    if k == 0 || k > weights.len() {
        return param_err(format!("{k} bases requested for {} layers", weights.len()));
    }
    if r == 0 || r > shape.0.min(shape.1) {
        return param_err(format!("rank {r} impossible for shape {shape:?}"));
    }
    let sources: Vec<DenseMatrix> = match strategy {
        BasisStrategy::PerLayerSvd => (0..k).map(|b| weights[b * weights.len() / k].clone()).collect(),
        BasisStrategy::MeanSvd => {
            let l = weights.len();
            (0..k)
                .map(|b| mean(&weights[b * l / k..(b + 1) * l / k]))
                .collect()
        }
        BasisStrategy::SpectralCluster => {
            let labels = kmeans_layers(weights, k);
            (0..k)
                .map(|c| {
                    let members: Vec<DenseMatrix> = labels
                        .iter()
                        .zip(weights)
                        .filter(|(&lab, _)| lab == c)
                        .map(|(_, w)| w.clone())
                        .collect();
                    mean(&members)
                })
                .collect()
        }
    };
    sources
        .iter()
        .enumerate()
        .map(|(b, w)| {
            let svd = svd_truncated(w, r)?;
            SharedBasis::new(BasisId(b), svd.u, svd.v)
        })
        .collect()
}

fn mean(ws: &[DenseMatrix]) -> DenseMatrix {
    let (m, n) = ws[0].shape();
    let mut acc = DenseMatrix::zeros(m, n);
    for w in ws {
        acc = acc.add(w).expect("equal shapes");
    }
    acc.scale(1.0 / ws.len() as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means on vectorized weights. Centers start from layer 0 and
/// then repeatedly the layer farthest from all chosen centers; every tie goes
/// to the lowest layer index. Returns one cluster label per layer.
pub fn kmeans_layers(weights: &[DenseMatrix], k: usize) -> Vec<usize> {
    let points: Vec<&[f64]> = weights.iter().map(|w| w.as_slice()).collect();
    let l = points.len();
    let mut centers: Vec<Vec<f64>> = vec![points[0].to_vec()];
    while centers.len() < k {
        let far = (0..l)
            .map(|i| {
                let d = centers.iter().map(|c| sq_dist(points[i], c)).fold(f64::INFINITY, f64::min);
                (i, d)
            })
            .fold((0, -1.0), |best, (i, d)| if d > best.1 { (i, d) } else { best });
        centers.push(points[far.0].to_vec());
    }

    let mut labels = vec![usize::MAX; l];
    for _ in 0..200 {
        let new_labels: Vec<usize> = points
            .iter()
            .map(|p| {
                let mut best = (0, f64::INFINITY);
                for (c, center) in centers.iter().enumerate() {
                    let d = sq_dist(p, center);
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                best.0
            })
            .collect();
        if new_labels == labels {
            break;
        }
        labels = new_labels;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..l).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            center.iter_mut().for_each(|x| *x = 0.0);
            for &i in &members {
                for (x, p) in center.iter_mut().zip(points[i]) {
                    *x += p;
                }
            }
            center.iter_mut().for_each(|x| *x /= members.len() as f64);
        }
        // An emptied cluster takes the point farthest from its own center.
        for c in 0..k {
            if labels.contains(&c) {
                continue;
            }
            let far = (0..l)
                .map(|i| (i, sq_dist(points[i], &centers[labels[i]])))
                .fold((0, -1.0), |best, (i, d)| if d > best.1 { (i, d) } else { best });
            labels[far.0] = c;
            centers[c] = points[far.0].to_vec();
        }
    }
    labels
}
