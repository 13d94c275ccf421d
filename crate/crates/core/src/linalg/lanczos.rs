//! Lanczos iteration with full reorthogonalization and explicit locking.
//!
//! Each pass grows a Krylov basis from a seeded random start vector kept
//! orthogonal to every locked eigenvector. Converged Ritz pairs are locked and
//! the next pass runs in their orthogonal complement, which recovers repeated
//! eigenvalues that a single Krylov sequence cannot see. A final pass checks
//! that nothing larger than the `t`-th locked value remains.

use super::{
    axpy, dot, norm, orthogonalize_against, residual_norm, tridiagonal_eig, EigenPairs,
    SymmetricOperator,
};
use crate::error::{param_err, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanczosOptions {
    /// Krylov steps allowed per pass.
    pub max_iters: usize,
    /// Residual bound `‖Av − λv‖₂` for a pair to count as converged.
    pub tol: f64,
    pub seed: u64,
    /// Upper bound on restarts; `None` means `2t + 8`.
    pub max_passes: Option<usize>,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            max_iters: 300,
            tol: 1e-10,
            seed: 0,
            max_passes: None,
        }
    }
}

struct Ritz {
    value: f64,
    vector: Vec<f64>,
    estimate: f64,
}

/// Up to `t` eigenpairs of `op` with the largest eigenvalues, descending.
///
/// Pairs whose residual exceeds `opts.tol` are returned with
/// `converged = false` rather than as an error.
pub fn lanczos_top_eigs<O: SymmetricOperator + ?Sized>(
    op: &O,
    t: usize,
    opts: &LanczosOptions,
) -> Result<EigenPairs> {
    let n = op.dim();
    if t == 0 || t > n {
        return param_err(format!("requested {t} eigenpairs of a {n}-dimensional operator"));
    }
    if opts.max_iters < t {
        return param_err(format!(
            "max_iters ({}) must be at least t ({t})",
            opts.max_iters
        ));
    }
    if !(opts.tol > 0.0) {
        return param_err("tolerance must be positive");
    }
    let max_passes = opts.max_passes.unwrap_or(2 * t + 8);

    let mut locked: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut fallback: Vec<Ritz> = Vec::new();
    for pass in 0..max_passes {
        if locked.len() == n {
            break;
        }
        let need = t.saturating_sub(locked.len()).max(1);
        let locked_vecs: Vec<Vec<f64>> = locked.iter().map(|(_, v)| v.clone()).collect();
        let mut start = rng::normal_vec(&mut rng::derive(opts.seed, pass as u64), n);
        orthogonalize_against(&mut start, &locked_vecs);
        let sn = norm(&start);
        if sn < 1e-8 {
            break;
        }
        start.iter_mut().for_each(|x| *x /= sn);

        let ritz = run_pass(op, &locked_vecs, start, opts.max_iters, need, opts.tol)?;
        let kth = kth_largest(&locked, t);
        if let Some(kth) = kth {
            if let Some(top) = ritz.first() {
                if top.estimate > opts.tol || top.value <= kth + opts.tol {
                    break;
                }
            }
        }

        let mut newly = Vec::new();
        for r in ritz.iter() {
            let wanted = locked.len() + newly.len() < t || kth.is_some_and(|k| r.value > k);
            if !wanted {
                break;
            }
            if r.estimate <= opts.tol {
                newly.push(r);
            }
        }
        if newly.is_empty() {
            fallback = ritz;
            break;
        }
        for r in newly {
            let mut v = r.vector.clone();
            let basis: Vec<Vec<f64>> = locked.iter().map(|(_, v)| v.clone()).collect();
            orthogonalize_against(&mut v, &basis);
            let vn = norm(&v);
            v.iter_mut().for_each(|x| *x /= vn);
            locked.push((r.value, v));
        }
    }

    locked.sort_by(|a, b| b.0.total_cmp(&a.0));
    locked.truncate(t);
    let mut values: Vec<f64> = locked.iter().map(|(l, _)| *l).collect();
    let mut vectors: Vec<Vec<f64>> = locked.into_iter().map(|(_, v)| v).collect();
    for r in fallback {
        if values.len() >= t {
            break;
        }
        let mut v = r.vector;
        orthogonalize_against(&mut v, &vectors);
        let vn = norm(&v);
        if vn < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vn);
        values.push(r.value);
        vectors.push(v);
    }
    vectors.iter_mut().for_each(|v| super::canonical_sign(v));
    let residuals: Vec<f64> = values
        .iter()
        .zip(&vectors)
        .map(|(&l, v)| residual_norm(op, l, v))
        .collect();
    let converged = residuals.iter().map(|&r| r <= opts.tol).collect();
    Ok(EigenPairs {
        values,
        vectors,
        residuals,
        converged,
    })
}

fn kth_largest(locked: &[(f64, Vec<f64>)], t: usize) -> Option<f64> {
    if locked.len() < t {
        return None;
    }
    let mut vals: Vec<f64> = locked.iter().map(|(l, _)| *l).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    Some(vals[t - 1])
}

/// One Lanczos sequence in the complement of `locked`. Returns Ritz pairs
/// sorted by descending value with their residual estimates.
fn run_pass<O: SymmetricOperator + ?Sized>(
    op: &O,
    locked: &[Vec<f64>],
    start: Vec<f64>,
    max_steps: usize,
    need: usize,
    tol: f64,
) -> Result<Vec<Ritz>> {
    let available = op.dim() - locked.len();
    let mut basis = vec![start];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut scale = 0.0f64;
    loop {
        let j = alphas.len();
        let mut w = op.apply(&basis[j]);
        let alpha = dot(&w, &basis[j]);
        for _ in 0..2 {
            for u in locked {
                let c = dot(u, &w);
                axpy(&mut w, -c, u);
            }
            for q in &basis {
                let c = dot(q, &w);
                axpy(&mut w, -c, q);
            }
        }
        alphas.push(alpha);
        let beta = norm(&w);
        scale = scale.max(alpha.abs() + beta + betas.last().copied().unwrap_or(0.0));
        let steps = j + 1;
        let exhausted = steps >= available || steps >= max_steps;
        let breakdown = beta <= 1e-12 * scale.max(f64::MIN_POSITIVE);
        let check = steps >= need && ((steps - need).is_multiple_of(4) || exhausted || breakdown);
        if check {
            let residual_beta = if breakdown { 0.0 } else { beta };
            let ritz = ritz_pairs(&basis, &alphas, &betas, residual_beta)?;
            let done = ritz.iter().take(need).all(|r| r.estimate <= tol);
            if done || exhausted || breakdown {
                return Ok(ritz);
            }
        }
        betas.push(beta);
        w.iter_mut().for_each(|x| *x /= beta);
        basis.push(w);
    }
}

fn ritz_pairs(basis: &[Vec<f64>], alphas: &[f64], betas: &[f64], beta: f64) -> Result<Vec<Ritz>> {
    let m = alphas.len();
    let (values, vecs) = tridiagonal_eig(alphas, &betas[..m - 1])?;
    let dim = basis[0].len();
    Ok(values
        .into_iter()
        .zip(vecs)
        .map(|(value, s)| {
            let mut vector = vec![0.0; dim];
            for (coef, q) in s.iter().zip(basis) {
                axpy(&mut vector, *coef, q);
            }
            Ritz {
                value,
                vector,
                estimate: (beta * s[m - 1]).abs(),
            }
        })
        .collect())
}
