use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::prepare;
use crate::aligner::{candidate_delta, geo_share, AlignConfig, AlignMode};
use crate::curvature::{decompose, EigConfig, MinorAxisBundle};
use crate::error::{Error, Result};
use crate::linalg::{
    dot, lanczos_top_eigs, probe_dense, sym_eig_dense, symmetrize, DenseMatrix, LanczosOptions,
};
use crate::net::{self, ModelParams};
use crate::rng;
use crate::sharing::BasisId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSuite {
    pub name: String,
    pub passed: bool,
    /// Worst measured error.
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub config: ExperimentConfig,
    pub suites: Vec<OracleSuite>,
    pub passed: bool,
}

const MAX_LAYER_PARAMS: usize = 300;
const MAX_LAYERS: usize = 6;
const MAX_BASES: usize = 3;

/// Checks every approximation of the pipeline against a brute-force oracle
/// on a model small enough for dense paths.
pub fn run_oracles(config: &ExperimentConfig) -> Result<OracleReport> {
    config.validate()?;
    let spec = &config.model;
    if spec.num_layers() > MAX_LAYERS
        || config.sharing.bases_per_group > MAX_BASES
        || (0..spec.num_layers()).any(|l| spec.layer_size(l) > MAX_LAYER_PARAMS)
    {
        return Err(Error::Config(format!(
            "oracles need at most {MAX_LAYERS} layers, {MAX_BASES} bases per group and {MAX_LAYER_PARAMS} parameters per layer"
        )));
    }
    let prep = prepare(config)?;
    let suites = vec![
        hvp_suite(&prep.spec, &prep.params, &prep.data.train)?,
        lanczos_suite(&prep.spec, &prep.params, &prep.data.train, config.seed)?,
        exhaustive_suite(&prep, config)?,
        projector_suite(&prep, config)?,
    ];
    Ok(OracleReport {
        config: config.clone(),
        passed: suites.iter().all(|s| s.passed),
        suites,
    })
}

/// `max |A − B| / max |B|`.
fn matrix_relative_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let scale = b.max_abs().max(f64::MIN_POSITIVE);
    a.sub(b).map(|d| d.max_abs() / scale).unwrap_or(f64::INFINITY)
}

/// Hessian of all weights from central differences of the exact gradient.
pub(crate) fn finite_difference_hessian(
    spec: &net::ModelSpec,
    params: &ModelParams,
    batch: &net::Batch,
    h: f64,
) -> Result<DenseMatrix> {
    let w = params.flatten();
    let n = w.len();
    let grad_at = |x: &[f64]| -> Result<Vec<f64>> {
        Ok(net::gradient(spec, &ModelParams::from_flat(spec, x)?, batch)?.flatten())
    };
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut p = w.clone();
        let mut m = w.clone();
        p[j] += h;
        m[j] -= h;
        let gp = grad_at(&p)?;
        let gm = grad_at(&m)?;
        cols.push(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<_>>());
    }
    Ok(symmetrize(&DenseMatrix::from_columns(n, &cols)?))
}

fn hvp_suite(spec: &net::ModelSpec, params: &ModelParams, batch: &net::Batch) -> Result<OracleSuite> {
    let tol = 1e-4;
    let op = net::model_hessian_operator(spec, params, batch)?;
    let exact = probe_dense(&op);
    let fd = finite_difference_hessian(spec, params, batch, 1e-5)?;
    let err = matrix_relative_error(&exact, &fd);
    Ok(OracleSuite {
        name: "hvp-vs-finite-difference".into(),
        passed: err < tol,
        measured: err,
        tolerance: tol,
        detail: format!("{} parameters, error relative to max |H|", exact.rows()),
    })
}

/// `‖PPᵀ − QQᵀ‖_F`, which bounds the sine of the largest principal angle.
pub(crate) fn projector_distance(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    let n = p.first().or(q.first()).map_or(0, Vec::len);
    let proj = |b: &[Vec<f64>]| DenseMatrix::from_fn(n, n, |i, j| b.iter().map(|v| v[i] * v[j]).sum());
    proj(p).sub(&proj(q)).map(|d| d.frobenius_norm()).unwrap_or(f64::INFINITY)
}

fn lanczos_suite(spec: &net::ModelSpec, params: &ModelParams, batch: &net::Batch, seed: u64) -> Result<OracleSuite> {
    let value_tol = 1e-8;
    let angle_tol = 1e-6;
    let mut worst_value = 0.0f64;
    let mut worst_angle = 0.0f64;
    let mut skipped = Vec::new();
    for l in 0..spec.num_layers() {
        let op = net::layer_hessian_operator(spec, params, batch, l)?;
        let n = op_dim(&op);
        let t = 5.min(n.saturating_sub(1)).max(1);
        let dense = sym_eig_dense(&symmetrize(&probe_dense(&op)))?;
        let opts = LanczosOptions {
            seed: seed.wrapping_add(l as u64),
            ..LanczosOptions::default()
        };
        let lan = lanczos_top_eigs(&op, t, &opts)?;
        let scale = dense.values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        for (a, b) in lan.values.iter().zip(&dense.values) {
            worst_value = worst_value.max((a - b).abs() / scale);
        }
        // compare subspaces only up to a spectral gap
        let gap_ok = |k: usize| k >= n || dense.values[k - 1] - dense.values[k] > 1e-6 * scale;
        match (1..=t.min(lan.len())).rev().find(|&k| gap_ok(k)) {
            Some(k) => {
                worst_angle = worst_angle.max(projector_distance(&lan.vectors[..k], &dense.vectors[..k]));
            }
            None => skipped.push(l),
        }
    }
    Ok(OracleSuite {
        name: "dense-eig-vs-lanczos".into(),
        passed: worst_value < value_tol && worst_angle < angle_tol,
        measured: worst_value.max(worst_angle),
        tolerance: value_tol,
        detail: format!(
            "max eigenvalue error {worst_value:e} (tol {value_tol:e}), max projector distance {worst_angle:e} (tol {angle_tol:e}); layers without a gap: {skipped:?}"
        ),
    })
}

fn op_dim<O: crate::linalg::SymmetricOperator>(op: &O) -> usize {
    op.dim()
}

fn oracle_align_config(config: &ExperimentConfig) -> AlignConfig {
    AlignConfig {
        mode: AlignMode::PaperLiteral,
        eig: EigConfig::dense(),
        ..config.align_config()
    }
}

/// Explicit `‖P δ‖²` with `P = Σ pⱼpⱼᵀ` materialized.
pub(crate) fn projector_energy(delta: &[f64], bundle: &MinorAxisBundle) -> f64 {
    let n = delta.len();
    let p = DenseMatrix::from_fn(n, n, |i, j| bundle.vectors.iter().map(|v| v[i] * v[j]).sum());
    let x = p.matvec(delta).expect("lengths agree");
    dot(&x, &x)
}

fn exhaustive_suite(prep: &super::Prepared, config: &ExperimentConfig) -> Result<OracleSuite> {
    let energy_tol = 1e-10;
    let cfg = oracle_align_config(config);
    let out = geo_share(&prep.spec, &prep.params, &prep.bases, &prep.data.train, &prep.data.eval, &cfg)?;
    let mut worst_energy = 0.0f64;
    let mut choices: Vec<Vec<(BasisId, f64)>> = Vec::new();
    for (l, rec) in out.report.layers.iter().enumerate() {
        let mut layer = Vec::new();
        for (&id, &e) in &rec.energies {
            let basis = prep.bases.iter().find(|b| b.id == id).expect("known basis");
            let (_, delta) = candidate_delta(&prep.params.weights[l], basis, cfg.coefficient_form)?;
            let oracle = projector_energy(&delta, &out.bundles[l]);
            worst_energy = worst_energy.max((e - oracle).abs() / oracle.abs().max(1.0));
            layer.push((id, e));
        }
        choices.push(layer);
    }
    let mut best = f64::INFINITY;
    let mut count = 0usize;
    let mut digits = vec![0usize; choices.len()];
    loop {
        let total: f64 = digits.iter().zip(&choices).map(|(&d, c)| c[d].1).sum();
        best = best.min(total);
        count += 1;
        let mut i = 0;
        while i < digits.len() {
            digits[i] += 1;
            if digits[i] < choices[i].len() {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
        if i == digits.len() {
            break;
        }
    }
    let greedy = out.report.total_perp_energy();
    let gap = (greedy - best).abs();
    Ok(OracleSuite {
        name: "exhaustive-vs-greedy".into(),
        passed: gap == 0.0 && worst_energy < energy_tol,
        measured: gap.max(worst_energy),
        tolerance: 0.0,
        detail: format!(
            "{count} colorings; greedy {greedy:e}, exhaustive minimum {best:e}; max energy mismatch against the projector matrix {worst_energy:e} (tol {energy_tol:e})"
        ),
    })
}

fn projector_suite(prep: &super::Prepared, config: &ExperimentConfig) -> Result<OracleSuite> {
    let tol = 1e-10;
    let cfg = oracle_align_config(config);
    let out = geo_share(&prep.spec, &prep.params, &prep.bases, &prep.data.train, &prep.data.eval, &cfg)?;
    let mut g = rng::derive(config.seed, 40);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for bundle in &out.bundles {
        for _ in 0..20 {
            let delta = rng::normal_vec(&mut g, bundle.dim());
            let split = decompose(&delta, bundle)?;
            let total = dot(&delta, &delta);
            let perp = projector_energy(&delta, bundle);
            worst = worst.max((split.energy_perp - perp).abs() / total);
            worst = worst.max((split.energy_par - (total - perp)).abs() / total);
            for p in &bundle.vectors {
                worst = worst.max(dot(p, &split.delta_par).abs() / total.sqrt());
            }
            cases += 1;
        }
    }
    Ok(OracleSuite {
        name: "projector-vs-decompose".into(),
        passed: worst < tol,
        measured: worst,
        tolerance: tol,
        detail: format!("{cases} random perturbations, errors relative to ‖δ‖²"),
    })
}
