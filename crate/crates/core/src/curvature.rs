//! Second-order geometry of a sharing perturbation: minor axes of a layer
//! Hessian, the split of a perturbation into its high- and low-curvature
//! parts, the quadratic surrogate and the first-order diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::linalg::{
    dot, lanczos_top_eigs, probe_dense, sub_vec, sym_eig_dense, symmetrize, EigenPairs,
    FnOperator, LanczosOptions, SymmetricOperator,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenMethod {
    /// Dense below `dense_threshold`, Lanczos above.
    #[default]
    Auto,
    Dense,
    Lanczos,
}

/// Which eigenvalues count as "largest".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisSelection {
    #[default]
    Algebraic,
    /// Largest `|λ|`, for indefinite Hessians away from a minimum.
    Magnitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvergencePolicy {
    /// Any unconverged pair aborts the layer.
    Strict,
    /// Keep the converged pairs and record the effective count.
    #[default]
    BestEffort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EigConfig {
    pub method: EigenMethod,
    pub selection: AxisSelection,
    pub policy: ConvergencePolicy,
    /// Largest dimension handled by the dense path under `Auto`.
    pub dense_threshold: usize,
    pub lanczos_max_iters: usize,
    pub lanczos_tol: f64,
    pub lanczos_max_passes: Option<usize>,
}

impl Default for EigConfig {
    fn default() -> Self {
        let l = LanczosOptions::default();
        Self {
            method: EigenMethod::Auto,
            selection: AxisSelection::Algebraic,
            policy: ConvergencePolicy::BestEffort,
            dense_threshold: 300,
            lanczos_max_iters: l.max_iters,
            lanczos_tol: l.tol,
            lanczos_max_passes: l.max_passes,
        }
    }
}

impl EigConfig {
    pub fn dense() -> Self {
        Self {
            method: EigenMethod::Dense,
            ..Self::default()
        }
    }

    pub fn lanczos() -> Self {
        Self {
            method: EigenMethod::Lanczos,
            ..Self::default()
        }
    }

    pub fn uses_dense(&self, dim: usize) -> bool {
        match self.method {
            EigenMethod::Dense => true,
            EigenMethod::Lanczos => false,
            EigenMethod::Auto => dim <= self.dense_threshold,
        }
    }

    fn lanczos_options(&self, seed: u64) -> LanczosOptions {
        LanczosOptions {
            max_iters: self.lanczos_max_iters,
            tol: self.lanczos_tol,
            seed,
            max_passes: self.lanczos_max_passes,
        }
    }
}

/// Top-`t` eigenvectors of one layer Hessian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinorAxisBundle {
    pub layer: usize,
    pub requested_t: usize,
    /// Orthonormal, ordered like `eigenvalues`.
    pub vectors: Vec<Vec<f64>>,
    /// Descending (by `|λ|` under magnitude selection).
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `"dense"` or `"lanczos"`.
    pub method: String,
}

impl MinorAxisBundle {
    /// Effective number of axes, at most `requested_t`.
    pub fn t(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn from_pairs(layer: usize, requested_t: usize, pairs: &EigenPairs, method: &str) -> Result<Self> {
        if pairs.is_empty() {
            return param_err("a minor-axis bundle needs at least one vector");
        }
        Ok(Self {
            layer,
            requested_t,
            vectors: pairs.vectors.clone(),
            eigenvalues: pairs.values.clone(),
            residuals: pairs.residuals.clone(),
            method: method.to_string(),
        })
    }

    /// The leading `k` axes.
    pub fn prefix(&self, k: usize) -> Self {
        let k = k.min(self.t());
        Self {
            layer: self.layer,
            requested_t: k,
            vectors: self.vectors[..k].to_vec(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            residuals: self.residuals[..k].to_vec(),
            method: self.method.clone(),
        }
    }
}

/// Extracts the minor axes of `op`, the Hessian of layer `layer`.
pub fn minor_axes<O: SymmetricOperator + ?Sized>(
    op: &O,
    layer: usize,
    t: usize,
    config: &EigConfig,
    seed: u64,
) -> Result<MinorAxisBundle> {
    let n = op.dim();
    if t == 0 || t > n {
        return param_err(format!("requested {t} minor axes of a {n}-dimensional Hessian"));
    }
    let dense = config.uses_dense(n);
    let pairs = if dense {
        let h = symmetrize(&probe_dense(op));
        let all = sym_eig_dense(&h)?;
        match config.selection {
            AxisSelection::Algebraic => all.truncate(t),
            AxisSelection::Magnitude => by_magnitude(all, t),
        }
    } else {
        let opts = config.lanczos_options(seed);
        match config.selection {
            AxisSelection::Algebraic => lanczos_top_eigs(op, t, &opts)?,
            AxisSelection::Magnitude => {
                let top = lanczos_top_eigs(op, t, &opts)?;
                let neg = FnOperator::new(n, |v: &[f64]| op.apply(v).into_iter().map(|x| -x).collect());
                let mut bottom = lanczos_top_eigs(&neg, t, &opts)?;
                bottom.values.iter_mut().for_each(|l| *l = -*l);
                merge_by_magnitude(top, bottom, t)
            }
        }
    };
    let converged = pairs.converged_count();
    let pairs = if converged < pairs.len() || pairs.len() < t {
        if config.policy == ConvergencePolicy::Strict || converged == 0 {
            return Err(Error::Unconverged {
                layer,
                converged,
                requested: t,
            });
        }
        pairs.converged_only()
    } else {
        pairs
    };
    MinorAxisBundle::from_pairs(layer, t, &pairs, if dense { "dense" } else { "lanczos" })
}

fn by_magnitude(all: EigenPairs, t: usize) -> EigenPairs {
    let mut idx: Vec<usize> = (0..all.len()).collect();
    idx.sort_by(|&a, &b| all.values[b].abs().total_cmp(&all.values[a].abs()).then(a.cmp(&b)));
    idx.truncate(t);
    all.select(&idx)
}

fn merge_by_magnitude(top: EigenPairs, bottom: EigenPairs, t: usize) -> EigenPairs {
    let mut merged = EigenPairs {
        values: top.values,
        vectors: top.vectors,
        residuals: top.residuals,
        converged: top.converged,
    };
    for i in 0..bottom.len() {
        // a pair both searches found (|λ| tie straddling zero) is kept once
        let dup = merged.vectors.iter().any(|v| dot(v, &bottom.vectors[i]).abs() > 0.5);
        if !dup {
            merged.values.push(bottom.values[i]);
            merged.vectors.push(bottom.vectors[i].clone());
            merged.residuals.push(bottom.residuals[i]);
            merged.converged.push(bottom.converged[i]);
        }
    }
    by_magnitude(merged, t)
}

/// `δ = δ∥ + δ⊥` with `δ⊥` in the span of the minor axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSplit {
    pub delta: Vec<f64>,
    pub delta_par: Vec<f64>,
    pub delta_perp: Vec<f64>,
    pub energy_par: f64,
    pub energy_perp: f64,
}

pub fn decompose(delta: &[f64], bundle: &MinorAxisBundle) -> Result<PerturbationSplit> {
    if delta.len() != bundle.dim() {
        return param_err(format!(
            "perturbation has length {}, minor axes have length {}",
            delta.len(),
            bundle.dim()
        ));
    }
    let mut par = delta.to_vec();
    // second sweep removes what rounding left along the axes
    for _ in 0..2 {
        for p in &bundle.vectors {
            let c = dot(p, &par);
            par.iter_mut().zip(p).for_each(|(x, &pi)| *x -= c * pi);
        }
    }
    let perp = sub_vec(delta, &par);
    Ok(PerturbationSplit {
        delta: delta.to_vec(),
        energy_par: dot(&par, &par),
        energy_perp: dot(&perp, &perp),
        delta_par: par,
        delta_perp: perp,
    })
}

/// `½ δᵀHδ`.
pub fn quadratic_cost<O: SymmetricOperator + ?Sized>(delta: &[f64], op: &O) -> Result<f64> {
    check_len(delta, op)?;
    Ok(0.5 * dot(delta, &op.apply(delta)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySplit {
    /// `δ∥ᵀHδ∥`
    pub cost_par: f64,
    /// `δ⊥ᵀHδ⊥`
    pub cost_perp: f64,
    /// `2 δ∥ᵀHδ⊥`
    pub cross: f64,
}

impl EnergySplit {
    /// `|cross| / (|cost_par| + |cost_perp|)`, zero when everything vanishes.
    pub fn relative_cross(&self) -> f64 {
        let scale = self.cost_par.abs() + self.cost_perp.abs();
        if scale == 0.0 {
            if self.cross == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.cross.abs() / scale
        }
    }
}

pub fn energy_split_check<O: SymmetricOperator + ?Sized>(split: &PerturbationSplit, op: &O) -> Result<EnergySplit> {
    check_len(&split.delta, op)?;
    let h_par = op.apply(&split.delta_par);
    let h_perp = op.apply(&split.delta_perp);
    Ok(EnergySplit {
        cost_par: dot(&split.delta_par, &h_par),
        cost_perp: dot(&split.delta_perp, &h_perp),
        cross: dot(&split.delta_par, &h_perp) + dot(&split.delta_perp, &h_par),
    })
}

/// `c = 2|∇𝒥ᵀδ| / |δᵀHδ|`; `None` when the quadratic term vanishes.
pub fn first_order_ratio<O: SymmetricOperator + ?Sized>(grad: &[f64], delta: &[f64], op: &O) -> Result<Option<f64>> {
    check_len(delta, op)?;
    if grad.len() != delta.len() {
        return param_err("gradient and perturbation lengths differ");
    }
    let quad = dot(delta, &op.apply(delta)).abs();
    if quad == 0.0 || !quad.is_finite() {
        return Ok(None);
    }
    Ok(Some(2.0 * dot(grad, delta).abs() / quad))
}

/// One principal axis of the level set `½ xᵀHx = c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidAxis {
    pub direction: Vec<f64>,
    pub eigenvalue: f64,
    /// `√(2c/λ)`; `None` when `λ ≤ 0` and the level set is unbounded along
    /// this direction.
    pub semi_axis: Option<f64>,
}

pub fn ellipsoid_axes(eigs: &EigenPairs, level: f64) -> Result<Vec<EllipsoidAxis>> {
    if !(level > 0.0 && level.is_finite()) {
        return param_err(format!("level must be positive, got {level}"));
    }
    Ok(eigs
        .values
        .iter()
        .zip(&eigs.vectors)
        .map(|(&lambda, v)| EllipsoidAxis {
            direction: v.clone(),
            eigenvalue: lambda,
            semi_axis: (lambda > 0.0).then(|| (2.0 * level / lambda).sqrt()),
        })
        .collect())
}

fn check_len<O: SymmetricOperator + ?Sized>(delta: &[f64], op: &O) -> Result<()> {
    if delta.len() != op.dim() {
        return param_err(format!(
            "perturbation has length {}, operator has dimension {}",
            delta.len(),
            op.dim()
        ));
    }
    Ok(())
}
