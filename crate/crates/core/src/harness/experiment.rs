use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Baseline, ExperimentConfig, Init};
use super::data::{gen_data, Dataset};
use super::json_hash;
use super::train::{train, TraceEntry};
use crate::aligner::{align_layer, geo_share, AlignConfig, AlignMode, AlignmentReport, GeoShareOutput, PhaseTimings};
use crate::curvature::quadratic_cost;
use crate::error::{Error, Result};
use crate::net::{self, LossKind, ModelParams, ModelSpec};
use crate::rng;
use crate::sharing::{
    build_candidate_bases, color_classes, compression_ratio, BasisId, Coloring, SharedBasis,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub steps: usize,
    pub converged: bool,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub trace: Vec<TraceEntry>,
}

/// A trained model with its data and candidate bases, shared by every
/// method and sweep point of a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub spec: ModelSpec,
    pub data: Dataset,
    pub params: ModelParams,
    pub training: TrainingSummary,
    pub bases: Vec<SharedBasis>,
    pub train_seconds: f64,
}

/// Generates data, trains, and builds `K` candidate bases per group of
/// equally shaped layers. Ids are assigned group by group in order of first
/// appearance.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let spec = config.model.clone();
    let data = gen_data(&spec, &config.data, config.data_seed())?;
    let init = match config.training.init {
        Init::Random { gain } => ModelParams::random(&spec, config.init_seed(), gain),
        Init::TeacherPerturbed { noise } => {
            let teacher = data
                .teacher
                .as_ref()
                .ok_or_else(|| Error::Config("teacher-perturbed init needs a task with a teacher".into()))?;
            let noise_model = ModelParams::random(&spec, config.init_seed(), noise);
            ModelParams {
                weights: teacher
                    .weights
                    .iter()
                    .zip(&noise_model.weights)
                    .map(|(t, n)| t.add(n))
                    .collect::<Result<_>>()?,
            }
        }
    };
    let clock = Instant::now();
    let trained = train(&spec, &init, &data.train, &config.training, config.init_seed())?;
    let train_seconds = clock.elapsed().as_secs_f64();

    let mut bases = Vec::new();
    for (shape, layers) in shape_groups(&spec) {
        let weights: Vec<_> = layers.iter().map(|&l| trained.params.weights[l].clone()).collect();
        let k = config.sharing.bases_per_group.min(weights.len());
        let rank = config.sharing.rank;
        if rank > shape.0.min(shape.1) {
            return Err(Error::Config(format!("rank {rank} exceeds layers of shape {shape:?}")));
        }
        let offset = bases.len();
        for b in build_candidate_bases(&weights, k, rank, config.sharing.strategy)? {
            let id = BasisId(offset + b.id.0);
            bases.push(b.with_id(id));
        }
    }
    Ok(Prepared {
        config: config.clone(),
        spec,
        data,
        training: TrainingSummary {
            steps: trained.steps,
            converged: trained.converged,
            final_loss: trained.final_loss,
            final_grad_norm: trained.final_grad_norm,
            trace: trained.trace,
        },
        params: trained.params,
        bases,
        train_seconds,
    })
}

/// Layers grouped by shape, groups ordered by first layer.
fn shape_groups(spec: &ModelSpec) -> Vec<((usize, usize), Vec<usize>)> {
    let mut groups: Vec<((usize, usize), Vec<usize>)> = Vec::new();
    for (l, shape) in spec.layer_shapes().into_iter().enumerate() {
        match groups.iter_mut().find(|(s, _)| *s == shape) {
            Some((_, ls)) => ls.push(l),
            None => groups.push((shape, vec![l])),
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub loss_before: f64,
    pub loss_after: f64,
    pub delta_loss: f64,
    /// `exp(loss)` before and after, for cross-entropy tasks.
    pub ppl_analog_before: Option<f64>,
    pub ppl_analog_after: Option<f64>,
    /// Strict-sharing mode only.
    pub compression_ratio: Option<f64>,
    /// Absent for the unshared model.
    pub coloring: Option<Vec<BasisId>>,
    pub automorphism_order: Option<u128>,
    /// `Σ_ℓ ½ δ_ℓᵀ H_ℓ δ_ℓ` of the applied perturbations.
    pub surrogate_cost: f64,
    /// `Σ_ℓ ‖δ⊥‖²` of the chosen bases.
    pub perp_energy: Option<f64>,
    pub bases_hash: String,
    pub eval_hash: String,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderSummary {
    /// Per layer, `2|gᵀδ|/|δᵀHδ|` of the Geo-Sharing perturbation; `None`
    /// where the quadratic term vanishes.
    pub per_layer: Vec<Option<f64>>,
    pub median: Option<f64>,
    pub max: Option<f64>,
    pub fraction_below_0_3: f64,
}

impl FirstOrderSummary {
    fn from_report(report: &AlignmentReport) -> Self {
        let per_layer: Vec<Option<f64>> = report.layers.iter().map(|r| r.first_order_ratio).collect();
        // an unbounded ratio sorts above every finite one
        let mut values: Vec<f64> = per_layer.iter().map(|c| c.unwrap_or(f64::INFINITY)).collect();
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let median = if n == 0 {
            None
        } else if n % 2 == 1 {
            Some(values[n / 2])
        } else {
            Some(0.5 * (values[n / 2 - 1] + values[n / 2]))
        };
        let finite = |v: Option<f64>| v.filter(|x| x.is_finite());
        Self {
            median: finite(median),
            max: finite(values.last().copied()),
            fraction_below_0_3: if n == 0 {
                0.0
            } else {
                values.iter().filter(|&&c| c < 0.3).count() as f64 / n as f64
            },
            per_layer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    T,
    Beta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: f64,
    pub delta_loss: f64,
    pub loss_after: f64,
    /// `Σ_ℓ ½ δ̄*∥ᵀ H_ℓ δ̄*∥`.
    pub surrogate_cost: f64,
    pub coloring: Vec<BasisId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub parameter: Sweep,
    pub mode: AlignMode,
    pub rows: Vec<AblationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub training: TrainingSummary,
    pub train_hash: String,
    pub eval_hash: String,
    pub bases_hash: String,
    pub methods: Vec<MethodResult>,
    pub geo_sharing: AlignmentReport,
    pub first_order_ratio: FirstOrderSummary,
    pub ablations: Vec<AblationTable>,
    /// Whether Geo-Sharing recovered the planted partition, when there is one.
    pub planted_recovered: Option<bool>,
}

/// Wall times, kept outside [`RunReport`] so reports stay byte-identical.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub train_seconds: f64,
    pub geo_sharing: PhaseTimings,
    pub total_seconds: f64,
    /// Per sweep point, in table order.
    pub ablation_seconds: BTreeMap<String, Vec<f64>>,
}

/// Trains, shares with Geo-Sharing and every configured baseline, and runs
/// the configured ablation sweeps.
pub fn run_experiment(config: &ExperimentConfig, with_ablations: bool) -> Result<(RunReport, RunTiming)> {
    let clock = Instant::now();
    let prep = prepare(config)?;
    let align = config.align_config();
    let geo = geo_share(&prep.spec, &prep.params, &prep.bases, &prep.data.train, &prep.data.eval, &align)?;

    let bases_hash = json_hash(&prep.bases)?;
    let eval_hash = json_hash(&prep.data.eval)?;
    let mut methods = vec![method_result(&prep, &geo, "geo-sharing", Some(&geo.coloring), &align, &bases_hash, &eval_hash)?];
    let mut baselines = config.baselines.clone();
    baselines.sort();
    baselines.dedup();
    for b in baselines {
        let coloring = match b {
            Baseline::RandomColoring => Some(random_coloring(&prep, config.baseline_seed())?),
            Baseline::AdjacentPairs => Some(adjacent_pairs(&prep)?),
            Baseline::NoSharing => None,
        };
        methods.push(method_result(&prep, &geo, b.name(), coloring.as_ref(), &align, &bases_hash, &eval_hash)?);
    }

    let mut timing = RunTiming {
        train_seconds: prep.train_seconds,
        geo_sharing: geo.timings,
        ..RunTiming::default()
    };
    let mut ablations = Vec::new();
    if with_ablations {
        for (sweep, values) in [
            (Sweep::T, config.ablation.t_values.iter().map(|&t| t as f64).collect::<Vec<_>>()),
            (Sweep::Beta, config.ablation.beta_values.clone()),
        ] {
            if values.is_empty() {
                continue;
            }
            let (table, secs) = ablate(&prep, sweep, &values, config.ablation.mode)?;
            timing.ablation_seconds.insert(format!("{sweep:?}").to_lowercase(), secs);
            ablations.push(table);
        }
    }
    let planted_recovered = prep.data.planted_labels.as_ref().map(|labels| {
        let got: Vec<usize> = geo.coloring.assignment().iter().map(|b| b.0).collect();
        super::same_partition(&got, labels)
    });
    timing.total_seconds = clock.elapsed().as_secs_f64();
    let report = RunReport {
        schema_version: super::SCHEMA_VERSION,
        config: config.clone(),
        training: prep.training.clone(),
        train_hash: json_hash(&prep.data.train)?,
        eval_hash,
        bases_hash,
        methods,
        first_order_ratio: FirstOrderSummary::from_report(&geo.report),
        geo_sharing: geo.report,
        ablations,
        planted_recovered,
    };
    Ok((report, timing))
}

/// Uniform over the assignments that use every basis of each shape group,
/// so the baseline stores as many bases as the candidate pool holds.
fn random_coloring(prep: &Prepared, seed: u64) -> Result<Coloring> {
    let mut g = rng::derive(seed, 30);
    let mut assignment = vec![BasisId(0); prep.spec.num_layers()];
    for (_, layers) in shape_groups(&prep.spec) {
        let group = group_of(prep, layers[0]);
        loop {
            for &l in &layers {
                assignment[l] = group[g.random_range(0..group.len())];
            }
            if group.iter().all(|b| layers.iter().any(|&l| assignment[l] == *b)) {
                break;
            }
        }
    }
    Coloring::new(assignment, prep.bases.iter().map(|b| b.id))
}

fn adjacent_pairs(prep: &Prepared) -> Result<Coloring> {
    let mut assignment = vec![BasisId(0); prep.spec.num_layers()];
    for (_, layers) in shape_groups(&prep.spec) {
        for (i, &l) in layers.iter().enumerate() {
            let group = group_of(prep, l);
            assignment[l] = group[(i / 2) % group.len()];
        }
    }
    Coloring::new(assignment, prep.bases.iter().map(|b| b.id))
}

/// Candidate ids usable by layer `l`, ascending.
fn group_of(prep: &Prepared, l: usize) -> Vec<BasisId> {
    let shape = prep.spec.layer_shape(l);
    prep.bases.iter().filter(|b| b.weight_shape() == shape).map(|b| b.id).collect()
}

/// Applies `coloring` with the same alignment rule Geo-Sharing used, so
/// methods differ only in the basis assignment. `None` is the unshared model.
fn method_result(
    prep: &Prepared,
    geo: &GeoShareOutput,
    name: &str,
    coloring: Option<&Coloring>,
    align: &AlignConfig,
    bases_hash: &str,
    eval_hash: &str,
) -> Result<MethodResult> {
    let spec = &prep.spec;
    let loss_before = net::loss(spec, &prep.params, &prep.data.eval)?;
    let (aligned, surrogate, perp, ratio, order) = match coloring {
        None => (prep.params.clone(), 0.0, None, None, None),
        Some(c) => {
            let mut weights = Vec::with_capacity(spec.num_layers());
            let mut surrogate = 0.0;
            let mut perp = 0.0;
            for l in 0..spec.num_layers() {
                let basis = prep.bases.iter().find(|b| b.id == c.basis_of(l)).expect("coloring uses known bases");
                let a = align_layer(l, &prep.params.weights[l], basis, &geo.bundles[l], align.beta, align.mode, align.coefficient_form)?;
                let op = net::layer_hessian_operator(spec, &prep.params, &prep.data.train, l)?;
                surrogate += quadratic_cost(&a.realized_delta(), &op)?;
                perp += crate::curvature::decompose(&a.delta_star, &geo.bundles[l])?.energy_perp;
                weights.push(a.aligned_weight);
            }
            let ratio = match align.mode {
                AlignMode::StrictSharing => Some(compression_ratio(
                    &spec.layer_shapes(),
                    c,
                    prep.config.sharing.rank,
                    align.coefficient_form,
                )?),
                AlignMode::PaperLiteral => None,
            };
            let order = color_classes(c, spec.num_layers())?.automorphism_order;
            (ModelParams { weights }, surrogate, Some(perp), ratio, Some(order))
        }
    };
    let loss_after = net::loss(spec, &aligned, &prep.data.eval)?;
    let ppl = |l: f64| (spec.loss == LossKind::SoftmaxCrossEntropy).then(|| l.exp());
    Ok(MethodResult {
        method: name.to_string(),
        loss_before,
        loss_after,
        delta_loss: loss_after - loss_before,
        ppl_analog_before: ppl(loss_before),
        ppl_analog_after: ppl(loss_after),
        compression_ratio: ratio,
        coloring: coloring.map(|c| c.assignment().to_vec()),
        automorphism_order: order,
        surrogate_cost: surrogate,
        perp_energy: perp,
        bases_hash: bases_hash.to_string(),
        eval_hash: eval_hash.to_string(),
        rank: prep.config.sharing.rank,
    })
}

/// One Geo-Sharing run per sweep value on the prepared model. Returns the
/// table and the wall time of each point.
pub fn ablate(prep: &Prepared, sweep: Sweep, values: &[f64], mode: AlignMode) -> Result<(AblationTable, Vec<f64>)> {
    if values.is_empty() {
        return Err(Error::Config("ablation sweep is empty".into()));
    }
    let base = AlignConfig {
        mode,
        ..prep.config.align_config()
    };
    let rows: Vec<(AblationRow, f64)> = values
        .par_iter()
        .map(|&v| {
            let clock = Instant::now();
            let mut cfg = base.clone();
            match sweep {
                Sweep::T => {
                    if !(v >= 1.0 && v.fract() == 0.0) {
                        return Err(Error::Config(format!("t must be a positive integer, got {v}")));
                    }
                    cfg.t = Some(v as usize);
                }
                Sweep::Beta => cfg.beta = v,
            }
            let out = geo_share(&prep.spec, &prep.params, &prep.bases, &prep.data.train, &prep.data.eval, &cfg)?;
            let r = &out.report;
            Ok((
                AblationRow {
                    value: v,
                    delta_loss: r.loss_after - r.loss_before,
                    loss_after: r.loss_after,
                    surrogate_cost: r.total_surrogate_after(),
                    coloring: r.coloring.clone(),
                },
                clock.elapsed().as_secs_f64(),
            ))
        })
        .collect::<Result<_>>()?;
    let (rows, secs) = rows.into_iter().unzip();
    Ok((
        AblationTable {
            parameter: sweep,
            mode,
            rows,
        },
        secs,
    ))
}
