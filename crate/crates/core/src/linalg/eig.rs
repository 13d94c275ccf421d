//! Dense symmetric eigendecomposition: Householder reduction to tridiagonal
//! form followed by implicit QL iterations.

// Index loops mirror the textbook recurrences.
#![allow(clippy::needless_range_loop)]

use super::{canonical_sign, residual_norm, DenseMatrix, EigenPairs};
use crate::error::{Error, Result};

/// Relative asymmetry accepted by [`sym_eig_dense`].
const SYMMETRY_TOL: f64 = 1e-10;

/// Full eigendecomposition of a symmetric matrix, values descending.
pub fn sym_eig_dense(h: &DenseMatrix) -> Result<EigenPairs> {
    let n = h.rows();
    let asym = h
        .asymmetry()
        .ok_or_else(|| Error::Data(format!("matrix is {}x{}, not square", h.rows(), h.cols())))?;
    if !h.is_finite() {
        return Err(Error::Data("non-finite matrix entry".into()));
    }
    let scale = h.max_abs();
    if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Data(format!(
            "matrix is not symmetric (max asymmetry {asym:e}, scale {scale:e})"
        )));
    }
    if n == 0 {
        return Ok(EigenPairs {
            values: vec![],
            vectors: vec![],
            residuals: vec![],
            converged: vec![],
        });
    }

    // z[i][j]: row i, column j; eigenvectors end up in the columns.
    let mut z: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (h.get(i, j) + h.get(j, i))).collect())
        .collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    householder_tridiagonalize(&mut z, &mut d, &mut e);
    implicit_ql(&mut z, &mut d, &mut e)?;
    Ok(finish(h, &z, &d))
}

/// Eigendecomposition of the symmetric tridiagonal matrix with diagonal
/// `diag` and off-diagonal `off` (`off[i]` couples `i` and `i + 1`).
/// Returns values descending with their eigenvectors.
pub fn tridiagonal_eig(diag: &[f64], off: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = diag.len();
    if off.len() + 1 != n.max(1) {
        return Err(Error::Parameter(format!(
            "tridiagonal with {n} diagonal entries needs {} off-diagonal entries, got {}",
            n.saturating_sub(1),
            off.len()
        )));
    }
    let mut z: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut d = diag.to_vec();
    // implicit_ql expects e[i] to hold the (i, i-1) coupling.
    let mut e = vec![0.0; n];
    e[1..n].copy_from_slice(off);
    implicit_ql(&mut z, &mut d, &mut e)?;
    let order = descending_order(&d);
    let values = order.iter().map(|&k| d[k]).collect();
    let vectors = order
        .iter()
        .map(|&k| (0..n).map(|i| z[i][k]).collect())
        .collect();
    Ok((values, vectors))
}

fn descending_order(d: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    order
}

fn finish(h: &DenseMatrix, z: &[Vec<f64>], d: &[f64]) -> EigenPairs {
    let n = d.len();
    let order = descending_order(d);
    let mut values = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    for &k in &order {
        let mut v: Vec<f64> = (0..n).map(|i| z[i][k]).collect();
        canonical_sign(&mut v);
        values.push(d[k]);
        vectors.push(v);
    }
    let residuals: Vec<f64> = values
        .iter()
        .zip(&vectors)
        .map(|(&l, v)| residual_norm(h, l, v))
        .collect();
    EigenPairs {
        values,
        converged: vec![true; n],
        vectors,
        residuals,
    }
}

/// Householder reduction of the symmetric matrix held in `z` to tridiagonal
/// form. On return `d` holds the diagonal, `e[1..]` the sub-diagonal and `z`
/// the accumulated orthogonal transformation.
fn householder_tridiagonalize(z: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    d[..n].copy_from_slice(&z[n - 1][..n]);
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for &dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = z[i - 1][j];
                z[i][j] = 0.0;
                z[j][i] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                z[j][i] = f;
                g = e[j] + z[j][j] * f;
                for k in j + 1..i {
                    g += z[k][j] * d[k];
                    e[k] += z[k][j] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    z[k][j] -= f * e[k] + g * d[k];
                }
                d[j] = z[i - 1][j];
                z[i][j] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        z[n - 1][i] = z[i][i];
        z[i][i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = z[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += z[k][i + 1] * z[k][j];
                }
                for k in 0..=i {
                    z[k][j] -= g * d[k];
                }
            }
        }
        for row in z.iter_mut().take(i + 1) {
            row[i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = z[n - 1][j];
        z[n - 1][j] = 0.0;
    }
    z[n - 1][n - 1] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL iterations on a symmetric tridiagonal matrix, accumulating the
/// rotations into `z`. `e[i]` couples rows `i - 1` and `i` on entry.
fn implicit_ql(z: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    let max_sweeps = 60 * n.max(1);
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > max_sweeps {
                    return Err(Error::Data("tridiagonal QL iteration did not converge".into()));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for row in z.iter_mut() {
                        h = row[i + 1];
                        row[i + 1] = s * row[i] + c * h;
                        row[i] = c * row[i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, orthonormality_defect};
    use crate::rng;

    fn random_symmetric(n: usize, seed: u64) -> DenseMatrix {
        let g = rng::normal_matrix(&mut rng::seeded(seed), n, n);
        super::super::symmetrize(&g)
    }

    /// Cyclic Jacobi rotations; deliberately a different algorithm from the
    /// Householder/QL path under test.
    fn jacobi_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
        let n = a.rows();
        let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[i][j] * m[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if m[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (mkp, mkq) = (m[k][p], m[k][q]);
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m[p][k], m[q][k]);
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                }
            }
        }
        let mut vals: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        vals
    }

    fn reconstruct(e: &EigenPairs) -> DenseMatrix {
        let n = e.values.len();
        DenseMatrix::from_fn(n, n, |i, j| {
            (0..n).map(|k| e.values[k] * e.vectors[k][i] * e.vectors[k][j]).sum()
        })
    }

    #[test]
    fn diagonal_case() {
        let e = sym_eig_dense(&DenseMatrix::from_diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
        assert_eq!(e.vectors[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(e.vectors[1], vec![0.0, 0.0, 1.0]);
        assert_eq!(e.vectors[2], vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn identity_case() {
        let e = sym_eig_dense(&DenseMatrix::identity(4)).unwrap();
        assert!(e.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn random_reconstruction_matches_jacobi() {
        for seed in 0..5 {
            let h = random_symmetric(10, seed);
            let e = sym_eig_dense(&h).unwrap();
            let rel = reconstruct(&e).sub(&h).unwrap().frobenius_norm() / h.frobenius_norm();
            assert!(rel < 1e-10, "reconstruction residual {rel}");
            assert!(orthonormality_defect(&e.vectors) < 1e-12);
            let oracle = jacobi_eigenvalues(&h);
            for (a, b) in e.values.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
            assert!(e.residuals.iter().all(|&r| r < 1e-10));
        }
    }

    #[test]
    fn rejects_asymmetric() {
        let h = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig_dense(&h), Err(Error::Data(_))));
        let r = DenseMatrix::zeros(2, 3);
        assert!(matches!(sym_eig_dense(&r), Err(Error::Data(_))));
    }

    #[test]
    fn tridiagonal_matches_dense() {
        let diag = [2.0, -1.0, 0.5, 3.0];
        let off = [1.0, 0.25, -0.7];
        let (vals, vecs) = tridiagonal_eig(&diag, &off).unwrap();
        let t = DenseMatrix::from_fn(4, 4, |i, j| {
            if i == j {
                diag[i]
            } else if i + 1 == j {
                off[i]
            } else if j + 1 == i {
                off[j]
            } else {
                0.0
            }
        });
        let dense = sym_eig_dense(&t).unwrap();
        for (a, b) in vals.iter().zip(&dense.values) {
            assert!((a - b).abs() < 1e-13);
        }
        for (l, v) in vals.iter().zip(&vecs) {
            let tv = t.matvec(v).unwrap();
            let r: f64 = tv.iter().zip(v).map(|(a, x)| (a - l * x).powi(2)).sum();
            assert!(r.sqrt() < 1e-13);
            assert!((dot(v, v) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn one_by_one() {
        let e = sym_eig_dense(&DenseMatrix::from_diag(&[-4.0])).unwrap();
        assert_eq!(e.values, vec![-4.0]);
        let (v, _) = tridiagonal_eig(&[7.0], &[]).unwrap();
        assert_eq!(v, vec![7.0]);
    }
}
