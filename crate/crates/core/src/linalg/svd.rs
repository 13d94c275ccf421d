//! Singular value decomposition by one-sided Jacobi rotations.

use super::{canonical_sign, complete_basis_vector, dot, norm, DenseMatrix};
use crate::error::{param_err, Error, Result};

/// Leading `r` singular triplets of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    /// `M × r`, orthonormal columns.
    pub u: DenseMatrix,
    /// Descending, non-negative.
    pub sigma: Vec<f64>,
    /// `N × r`, orthonormal columns.
    pub v: DenseMatrix,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U · diag(σ) · Vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let (m, n, r) = (self.u.rows(), self.v.rows(), self.sigma.len());
        DenseMatrix::from_fn(m, n, |i, j| {
            (0..r)
                .map(|k| self.u.get(i, k) * self.sigma[k] * self.v.get(j, k))
                .sum()
        })
    }
}

/// Best rank-`r` approximation factors of `a`.
pub fn svd_truncated(a: &DenseMatrix, r: usize) -> Result<TruncatedSvd> {
    let k = a.rows().min(a.cols());
    if r == 0 || r > k {
        return param_err(format!(
            "rank {r} outside 1..={k} for a {}x{} matrix",
            a.rows(),
            a.cols()
        ));
    }
    let full = svd_full(a)?;
    Ok(TruncatedSvd {
        u: full.u.leading_columns(r),
        sigma: full.sigma[..r].to_vec(),
        v: full.v.leading_columns(r),
    })
}

/// Thin SVD with `min(M, N)` triplets.
///
/// Zero singular values get canonical-axis singular vectors, so the zero
/// matrix decomposes deterministically. Each right singular vector has its
/// first significant entry positive.
pub fn svd_full(a: &DenseMatrix) -> Result<TruncatedSvd> {
    if !a.is_finite() {
        return Err(Error::Data("non-finite matrix entry".into()));
    }
    if a.rows() < a.cols() {
        let t = svd_full(&a.transpose())?;
        let mut out = TruncatedSvd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
        fix_signs(&mut out);
        return Ok(out);
    }
    let (m, n) = a.shape();
    let mut cols = a.columns();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    const MAX_SWEEPS: usize = 80;
    let tol = 1e-15;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| sigma[y].total_cmp(&sigma[x]).then(x.cmp(&y)));
    let smax = order.first().map_or(0.0, |&i| sigma[i]);
    let cutoff = (m.max(n) as f64) * f64::EPSILON * smax;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sorted_sigma = Vec::with_capacity(n);
    for &j in &order {
        v_cols.push(v[j].clone());
        sorted_sigma.push(sigma[j]);
    }
    for (k, &j) in order.iter().enumerate() {
        if sigma[j] > cutoff && sigma[j] > 0.0 {
            let mut u = cols[j].clone();
            u.iter_mut().for_each(|x| *x /= sigma[j]);
            u_cols.push(u);
        } else {
            sorted_sigma[k] = if sigma[j] > 0.0 { sigma[j] } else { 0.0 };
            u_cols.push(complete_basis_vector(m, &u_cols));
        }
    }
    sigma = sorted_sigma;
    let mut out = TruncatedSvd {
        u: DenseMatrix::from_columns(m, &u_cols)?,
        sigma,
        v: DenseMatrix::from_columns(n, &v_cols)?,
    };
    fix_signs(&mut out);
    Ok(out)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn fix_signs(svd: &mut TruncatedSvd) {
    for k in 0..svd.sigma.len() {
        let mut v = svd.v.column(k);
        let before = v.clone();
        canonical_sign(&mut v);
        if v != before {
            for i in 0..svd.v.rows() {
                svd.v.set(i, k, -svd.v.get(i, k));
            }
            for i in 0..svd.u.rows() {
                svd.u.set(i, k, -svd.u.get(i, k));
            }
        }
    }
}
