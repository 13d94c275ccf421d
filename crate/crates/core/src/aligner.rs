//! Per-layer basis selection by minimal high-curvature energy, trust-region
//! clipping of the low-curvature remainder, and assembly of the shared model.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{
    decompose, energy_split_check, first_order_ratio, minor_axes, quadratic_cost, EigConfig, MinorAxisBundle,
};
use crate::error::{param_err, Error, Result};
use crate::linalg::{add_vec, l2_clip, norm, sub_vec, DenseMatrix};
use crate::net::{self, Batch, ModelParams, ModelSpec};
use crate::sharing::{
    compression_ratio, fit_coefficient_as, reconstruct, BasisId, Coefficient, CoefficientForm, Coloring,
    SharedBasis, SharedLayer, SharedModel,
};

/// Default minor-axis count before the per-layer dimension cap.
pub const DEFAULT_T: usize = 550;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMode {
    /// `Ŵ = W + δ̄*∥`; keeps the original weights, saves no storage.
    PaperLiteral,
    /// `Ŵ = U S Vᵀ`; only shared factors and coefficients are stored.
    #[default]
    StrictSharing,
}

impl AlignMode {
    pub fn name(self) -> &'static str {
        match self {
            AlignMode::PaperLiteral => "paper-literal",
            AlignMode::StrictSharing => "strict-sharing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    LowestBasisId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    /// Minor-axis count; `None` means [`DEFAULT_T`]. Capped per layer at
    /// `dim − 1`.
    pub t: Option<usize>,
    pub beta: f64,
    pub mode: AlignMode,
    pub tie_break: TieBreak,
    pub eig: EigConfig,
    pub coefficient_form: CoefficientForm,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            t: None,
            beta: 5e-2,
            mode: AlignMode::StrictSharing,
            tie_break: TieBreak::LowestBasisId,
            eig: EigConfig::default(),
            coefficient_form: CoefficientForm::Full,
            seed: 0,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.t == Some(0) {
            return Err(Error::Config("t must be at least 1".into()));
        }
        Ok(())
    }

    /// Minor-axis count for a layer of `dim` parameters, and whether the cap
    /// changed it.
    pub fn effective_t(&self, dim: usize) -> (usize, bool) {
        let want = self.t.unwrap_or(DEFAULT_T);
        let cap = dim.saturating_sub(1).max(1);
        (want.min(cap), want > cap)
    }
}

/// `(S, vec(U S Vᵀ − W))` for one candidate basis.
pub fn candidate_delta(w: &DenseMatrix, basis: &SharedBasis, form: CoefficientForm) -> Result<(DenseMatrix, Vec<f64>)> {
    let s = fit_coefficient_as(w, basis, form)?;
    let approx = reconstruct(basis, &s)?;
    Ok((s, approx.sub(w)?.into_vec()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub chosen: BasisId,
    /// `‖δ⊥‖²` per candidate.
    pub energies: BTreeMap<BasisId, f64>,
}

/// The candidate whose sharing perturbation has the least energy in the
/// minor-axis span.
pub fn select_basis(
    w: &DenseMatrix,
    candidates: &[SharedBasis],
    bundle: &MinorAxisBundle,
    tie_break: TieBreak,
    form: CoefficientForm,
) -> Result<Selection> {
    if candidates.is_empty() {
        return param_err("no candidate bases");
    }
    let mut energies = BTreeMap::new();
    for basis in candidates {
        let (_, delta) = candidate_delta(w, basis, form)?;
        let split = decompose(&delta, bundle)?;
        if energies.insert(basis.id, split.energy_perp).is_some() {
            return param_err(format!("duplicate candidate {}", basis.id));
        }
    }
    let TieBreak::LowestBasisId = tie_break;
    // ascending ids, strict improvement only: ties keep the lowest id
    let mut best: Option<(BasisId, f64)> = None;
    for (&id, &e) in &energies {
        if best.is_none_or(|(_, b)| e < b) {
            best = Some((id, e));
        }
    }
    Ok(Selection {
        chosen: best.expect("non-empty").0,
        energies,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAlignment {
    pub layer: usize,
    pub chosen_basis: BasisId,
    /// Least-squares coefficient of `W` in the chosen basis.
    pub coefficient: DenseMatrix,
    pub delta_star: Vec<f64>,
    /// `δ*∥` before clipping.
    pub delta_par: Vec<f64>,
    pub delta_par_clipped: Vec<f64>,
    pub tau: f64,
    pub perp_energy_per_candidate: BTreeMap<BasisId, f64>,
    pub aligned_weight: DenseMatrix,
    pub mode: AlignMode,
}

impl LayerAlignment {
    /// `vec(Ŵ − W)`, the perturbation the mode actually applies.
    pub fn realized_delta(&self) -> Vec<f64> {
        match self.mode {
            AlignMode::PaperLiteral => self.delta_par_clipped.clone(),
            AlignMode::StrictSharing => self.delta_star.clone(),
        }
    }

    /// Whether the trust region shortened `δ*∥`.
    pub fn clipped(&self) -> bool {
        norm(&self.delta_par) > self.tau
    }
}

/// Aligns one layer to an already chosen basis. `beta` may be `0` (no
/// movement in paper-literal mode) or `+∞` (no clipping).
pub fn align_layer(
    layer: usize,
    w: &DenseMatrix,
    basis: &SharedBasis,
    bundle: &MinorAxisBundle,
    beta: f64,
    mode: AlignMode,
    form: CoefficientForm,
) -> Result<LayerAlignment> {
    if !(beta >= 0.0) {
        return param_err(format!("beta must be non-negative, got {beta}"));
    }
    let (s, delta_star) = candidate_delta(w, basis, form)?;
    let split = decompose(&delta_star, bundle)?;
    let tau = beta * w.frobenius_norm();
    let tau = if tau.is_nan() { f64::INFINITY } else { tau };
    let clipped = l2_clip(&split.delta_par, tau)?;
    let aligned_weight = match mode {
        AlignMode::PaperLiteral => {
            let (m, n) = w.shape();
            DenseMatrix::from_vec(m, n, add_vec(w.as_slice(), &clipped))?
        }
        AlignMode::StrictSharing => reconstruct(basis, &s)?,
    };
    Ok(LayerAlignment {
        layer,
        chosen_basis: basis.id,
        coefficient: s,
        perp_energy_per_candidate: BTreeMap::from([(basis.id, split.energy_perp)]),
        delta_star,
        delta_par: split.delta_par,
        delta_par_clipped: clipped,
        tau,
        aligned_weight,
        mode,
    })
}

/// Per-layer entry of an [`AlignmentReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer: usize,
    pub chosen_basis: BasisId,
    pub energies: BTreeMap<BasisId, f64>,
    pub tau: f64,
    pub norm_delta_star: f64,
    pub norm_delta_par: f64,
    pub norm_delta_par_clipped: f64,
    /// `½ δ*ᵀHδ*`.
    pub surrogate_cost_before: f64,
    /// `½ δ̄*∥ᵀHδ̄*∥`.
    pub surrogate_cost_after: f64,
    /// `½ δᵀHδ` of the perturbation the mode applies.
    pub surrogate_cost_realized: f64,
    pub trust_region_active: bool,
    pub t_requested: usize,
    pub t_effective: usize,
    pub t_capped: bool,
    pub eig_method: String,
    pub max_residual: f64,
    /// `|2 δ*∥ᵀHδ*⊥| / (|δ*∥ᵀHδ*∥| + |δ*⊥ᵀHδ*⊥|)`.
    pub cross_term_relative: f64,
    /// `2|gᵀδ*| / |δ*ᵀHδ*|`; `None` when the quadratic term vanishes.
    pub first_order_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub layers: Vec<LayerRecord>,
    pub coloring: Vec<BasisId>,
    pub rank: usize,
    /// Present in strict-sharing mode only.
    pub compression_ratio: Option<f64>,
    pub loss_before: f64,
    pub loss_after: f64,
    pub trust_region_active_layers: usize,
    pub config: AlignConfig,
    pub seed: u64,
}

impl AlignmentReport {
    /// `Σ_ℓ ‖δ⊥‖²` of the chosen bases.
    pub fn total_perp_energy(&self) -> f64 {
        self.layers.iter().map(|r| r.energies[&r.chosen_basis]).sum()
    }

    pub fn total_surrogate_after(&self) -> f64 {
        self.layers.iter().map(|r| r.surrogate_cost_after).sum()
    }
}

/// Wall time per phase, summed over layers. Kept out of the report so that
/// reports stay byte-identical across runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub eig_seconds: f64,
    pub selection_seconds: f64,
    pub alignment_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct GeoShareOutput {
    pub coloring: Coloring,
    pub aligned: ModelParams,
    pub alignments: Vec<LayerAlignment>,
    pub bundles: Vec<MinorAxisBundle>,
    /// Set in strict-sharing mode.
    pub shared_model: Option<SharedModel>,
    pub report: AlignmentReport,
    pub timings: PhaseTimings,
}

/// The full alignment loop. Layer Hessians are taken at the original weights
/// on `calibration`; losses are reported on `heldout`.
pub fn geo_share(
    spec: &ModelSpec,
    params: &ModelParams,
    candidates: &[SharedBasis],
    calibration: &Batch,
    heldout: &Batch,
    config: &AlignConfig,
) -> Result<GeoShareOutput> {
    config.validate()?;
    params.check_against(spec)?;
    let rank = match candidates.first() {
        None => return param_err("no candidate bases"),
        Some(b) => b.rank(),
    };
    if candidates.iter().any(|b| b.rank() != rank) {
        return Err(Error::Config("candidate bases must share one rank".into()));
    }
    let groups: Vec<Vec<SharedBasis>> = spec
        .layer_shapes()
        .iter()
        .enumerate()
        .map(|(l, &shape)| {
            let group: Vec<SharedBasis> = candidates.iter().filter(|b| b.weight_shape() == shape).cloned().collect();
            if group.is_empty() {
                Err(Error::Config(format!("no candidate basis for layer {l} of shape {shape:?}")))
            } else {
                Ok(group)
            }
        })
        .collect::<Result<_>>()?;
    let grad = net::gradient(spec, params, calibration)?;

    let per_layer: Vec<(LayerAlignment, MinorAxisBundle, LayerRecord, PhaseTimings)> = (0..spec.num_layers())
        .into_par_iter()
        .map(|l| align_one(spec, params, calibration, &grad.weights[l], &groups[l], l, config))
        .collect::<Result<_>>()?;

    let mut alignments = Vec::with_capacity(per_layer.len());
    let mut bundles = Vec::with_capacity(per_layer.len());
    let mut records = Vec::with_capacity(per_layer.len());
    let mut timings = PhaseTimings::default();
    for (a, b, r, t) in per_layer {
        alignments.push(a);
        bundles.push(b);
        records.push(r);
        timings.eig_seconds += t.eig_seconds;
        timings.selection_seconds += t.selection_seconds;
        timings.alignment_seconds += t.alignment_seconds;
    }

    let coloring = Coloring::new(
        alignments.iter().map(|a| a.chosen_basis).collect(),
        candidates.iter().map(|b| b.id),
    )?;
    let aligned = ModelParams {
        weights: alignments.iter().map(|a| a.aligned_weight.clone()).collect(),
    };
    let (shared_model, ratio) = match config.mode {
        AlignMode::StrictSharing => {
            let layers = alignments
                .iter()
                .map(|a| SharedLayer {
                    basis: a.chosen_basis,
                    coefficient: Coefficient::from_matrix(&a.coefficient, config.coefficient_form),
                })
                .collect();
            let model = SharedModel::new(rank, config.coefficient_form, candidates, layers)?;
            let ratio = compression_ratio(&spec.layer_shapes(), &coloring, rank, config.coefficient_form)?;
            (Some(model), Some(ratio))
        }
        AlignMode::PaperLiteral => (None, None),
    };
    let report = AlignmentReport {
        trust_region_active_layers: records.iter().filter(|r| r.trust_region_active).count(),
        layers: records,
        coloring: coloring.assignment().to_vec(),
        rank,
        compression_ratio: ratio,
        loss_before: net::loss(spec, params, heldout)?,
        loss_after: net::loss(spec, &aligned, heldout)?,
        config: config.clone(),
        seed: config.seed,
    };
    Ok(GeoShareOutput {
        coloring,
        aligned,
        alignments,
        bundles,
        shared_model,
        report,
        timings,
    })
}

fn align_one(
    spec: &ModelSpec,
    params: &ModelParams,
    calibration: &Batch,
    grad: &DenseMatrix,
    candidates: &[SharedBasis],
    l: usize,
    config: &AlignConfig,
) -> Result<(LayerAlignment, MinorAxisBundle, LayerRecord, PhaseTimings)> {
    let w = &params.weights[l];
    let op = net::layer_hessian_operator(spec, params, calibration, l)?;
    let dim = spec.layer_size(l);
    let (t, capped) = config.effective_t(dim);

    let clock = Instant::now();
    let bundle = minor_axes(&op, l, t, &config.eig, config.seed.wrapping_add(l as u64))?;
    let eig_time = clock.elapsed();

    let clock = Instant::now();
    let selection = select_basis(w, candidates, &bundle, config.tie_break, config.coefficient_form)?;
    let selection_time = clock.elapsed();

    let clock = Instant::now();
    let basis = candidates
        .iter()
        .find(|b| b.id == selection.chosen)
        .expect("chosen from candidates");
    let mut alignment = align_layer(l, w, basis, &bundle, config.beta, config.mode, config.coefficient_form)?;
    alignment.perp_energy_per_candidate = selection.energies.clone();
    let alignment_time = clock.elapsed();

    let split = decompose(&alignment.delta_star, &bundle)?;
    let record = LayerRecord {
        layer: l,
        chosen_basis: selection.chosen,
        energies: selection.energies,
        tau: alignment.tau,
        norm_delta_star: norm(&alignment.delta_star),
        norm_delta_par: norm(&alignment.delta_par),
        norm_delta_par_clipped: norm(&alignment.delta_par_clipped),
        surrogate_cost_before: quadratic_cost(&alignment.delta_star, &op)?,
        surrogate_cost_after: quadratic_cost(&alignment.delta_par_clipped, &op)?,
        surrogate_cost_realized: quadratic_cost(&alignment.realized_delta(), &op)?,
        trust_region_active: alignment.clipped(),
        t_requested: config.t.unwrap_or(DEFAULT_T),
        t_effective: bundle.t(),
        t_capped: capped,
        eig_method: bundle.method.clone(),
        max_residual: bundle.residuals.iter().copied().fold(0.0, f64::max),
        cross_term_relative: energy_split_check(&split, &op)?.relative_cross(),
        first_order_ratio: first_order_ratio(grad.as_slice(), &alignment.delta_star, &op)?,
    };
    let secs = |d: Duration| d.as_secs_f64();
    let timings = PhaseTimings {
        eig_seconds: secs(eig_time),
        selection_seconds: secs(selection_time),
        alignment_seconds: secs(alignment_time),
    };
    Ok((alignment, bundle, record, timings))
}

/// `vec(Ŵ) − vec(W)` for every layer, concatenated.
pub fn realized_perturbation(params: &ModelParams, aligned: &ModelParams) -> Vec<f64> {
    sub_vec(&aligned.flatten(), &params.flatten())
}
