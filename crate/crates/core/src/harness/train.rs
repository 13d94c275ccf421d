use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{Optimizer, TrainConfig};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, probe_dense, sym_eig_dense, symmetrize, DenseMatrix};
use crate::net::{loss, loss_and_gradient, model_hessian_operator, Batch, ModelParams, ModelSpec, Targets};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub params: ModelParams,
    pub trace: Vec<TraceEntry>,
    /// Whether the gradient-norm target was met.
    pub converged: bool,
    pub steps: usize,
    pub final_loss: f64,
    pub final_grad_norm: f64,
}

/// Full-batch objective `loss + ½·decay·‖θ‖²` and its flat gradient; any
/// non-finite value is divergence at `step`.
fn evaluate(spec: &ModelSpec, flat: &[f64], batch: &Batch, decay: f64, step: usize) -> Result<(f64, Vec<f64>)> {
    let params = ModelParams::from_flat(spec, flat).map_err(|_| Error::Diverged { step })?;
    match loss_and_gradient(spec, &params, batch) {
        Ok((l, g)) if l.is_finite() => {
            let mut g = g.flatten();
            g.iter_mut().zip(flat).for_each(|(gi, x)| *gi += decay * x);
            Ok((l + 0.5 * decay * dot(flat, flat), g))
        }
        Ok(_) | Err(Error::Numeric { .. }) | Err(Error::Data(_)) => Err(Error::Diverged { step }),
        Err(e) => Err(e),
    }
}

fn loss_at(spec: &ModelSpec, flat: &[f64], batch: &Batch, decay: f64) -> f64 {
    ModelParams::from_flat(spec, flat)
        .and_then(|p| loss(spec, &p, batch))
        .map(|l| l + 0.5 * decay * dot(flat, flat))
        .unwrap_or(f64::INFINITY)
}

fn subset(batch: &Batch, idx: &[usize]) -> Batch {
    let cols = batch.inputs.cols();
    let inputs = DenseMatrix::from_fn(idx.len(), cols, |i, j| batch.inputs.get(idx[i], j));
    let targets = match &batch.targets {
        Targets::Values(y) => Targets::Values(DenseMatrix::from_fn(idx.len(), y.cols(), |i, j| y.get(idx[i], j))),
        Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
    };
    Batch { inputs, targets }
}

/// Trains `init` on `batch`. Stops when the full-batch gradient norm reaches
/// `config.grad_tol` or after `config.steps` updates.
pub fn train(spec: &ModelSpec, init: &ModelParams, batch: &Batch, config: &TrainConfig, seed: u64) -> Result<TrainResult> {
    init.check_against(spec)?;
    batch.check_against(spec)?;
    let mut w = init.flatten();
    let n = w.len();
    let mut shuffle = rng::derive(seed, 20);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut cursor = order.len();
    let mut velocity = vec![0.0; n];
    let mut second = vec![0.0; n];
    let mut ls_step: f64 = 1.0;
    let mut damping = match config.optimizer {
        Optimizer::Newton { damping } => damping,
        _ => 0.0,
    };

    let mut trace = Vec::new();
    let decay = config.weight_decay;
    let (mut l, mut g) = evaluate(spec, &w, batch, decay, 0)?;
    let mut step = 0;
    loop {
        let gn = norm(&g);
        let converged = gn <= config.grad_tol;
        let last = converged || step == config.steps;
        if step % config.trace_every == 0 || last {
            trace.push(TraceEntry { step, loss: l, grad_norm: gn });
        }
        if last {
            return Ok(TrainResult {
                params: ModelParams::from_flat(spec, &w)?,
                trace,
                converged,
                steps: step,
                final_loss: l,
                final_grad_norm: gn,
            });
        }
        step += 1;
        match &config.optimizer {
            Optimizer::Sgd {
                learning_rate,
                momentum,
                batch_size,
            } => {
                let dir = minibatch_gradient(spec, &w, batch, *batch_size, &mut order, &mut cursor, &mut shuffle, &g, decay, step)?;
                for i in 0..n {
                    velocity[i] = momentum * velocity[i] + dir[i];
                    w[i] -= learning_rate * velocity[i];
                }
            }
            Optimizer::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
                batch_size,
            } => {
                let dir = minibatch_gradient(spec, &w, batch, *batch_size, &mut order, &mut cursor, &mut shuffle, &g, decay, step)?;
                let c1 = 1.0 - beta1.powi(step as i32);
                let c2 = 1.0 - beta2.powi(step as i32);
                for i in 0..n {
                    velocity[i] = beta1 * velocity[i] + (1.0 - beta1) * dir[i];
                    second[i] = beta2 * second[i] + (1.0 - beta2) * dir[i] * dir[i];
                    w[i] -= learning_rate * (velocity[i] / c1) / ((second[i] / c2).sqrt() + epsilon);
                }
            }
            Optimizer::LineSearch => {
                let gg = dot(&g, &g);
                let mut s = (ls_step * 2.0).min(1e6);
                let mut accepted = false;
                for _ in 0..60 {
                    let trial: Vec<f64> = w.iter().zip(&g).map(|(x, d)| x - s * d).collect();
                    let lt = loss_at(spec, &trial, batch, decay);
                    if lt <= l - 1e-4 * s * gg || flat_but_better(spec, &trial, batch, decay, lt, l, gn) {
                        w = trial;
                        accepted = true;
                        break;
                    }
                    s *= 0.5;
                }
                if !accepted {
                    // no representable decrease left along the gradient
                    return finish(spec, w, trace, step - 1, l, gn);
                }
                ls_step = s;
            }
            Optimizer::Newton { .. } => {
                let params = ModelParams::from_flat(spec, &w)?;
                let op = model_hessian_operator(spec, &params, batch).map_err(|_| Error::Diverged { step })?;
                let h = symmetrize(&probe_dense(&op));
                let mut eig = sym_eig_dense(&h)?;
                eig.values.iter_mut().for_each(|v| *v += decay);
                let scale = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let floor = 1e-12 * scale.max(f64::MIN_POSITIVE);
                let coeffs: Vec<f64> = eig.vectors.iter().map(|q| dot(q, &g)).collect();
                let mut accepted = false;
                for _ in 0..60 {
                    let mut d = vec![0.0; n];
                    // model m(d) = gᵀd + ½ dᵀHd in the eigenbasis
                    let mut predicted = 0.0;
                    for ((lambda, q), c) in eig.values.iter().zip(&eig.vectors).zip(&coeffs) {
                        let a = -c / (lambda.abs() + damping + floor);
                        d.iter_mut().zip(q).for_each(|(di, qi)| *di += a * qi);
                        predicted += c * a + 0.5 * lambda * a * a;
                    }
                    let trial: Vec<f64> = w.iter().zip(&d).map(|(x, di)| x + di).collect();
                    let lt = loss_at(spec, &trial, batch, decay);
                    let rho = if predicted < 0.0 { (lt - l) / predicted } else { 0.0 };
                    if rho > 1e-4 || flat_but_better(spec, &trial, batch, decay, lt, l, gn) {
                        w = trial;
                        if rho > 0.75 {
                            damping /= 4.0;
                        } else if rho < 0.25 {
                            damping = (damping * 4.0).max(1e-12 * scale.max(1.0));
                        }
                        accepted = true;
                        break;
                    }
                    damping = (damping * 4.0).max(1e-12 * scale.max(1.0));
                }
                if !accepted {
                    return finish(spec, w, trace, step - 1, l, gn);
                }
            }
        }
        (l, g) = evaluate(spec, &w, batch, decay, step)?;
    }
}

/// Near a minimum the loss decrease drops below rounding; a step is then
/// accepted when the loss is unchanged to rounding and the gradient shrinks.
fn flat_but_better(spec: &ModelSpec, trial: &[f64], batch: &Batch, decay: f64, lt: f64, l: f64, gn: f64) -> bool {
    (lt - l).abs() <= 8.0 * f64::EPSILON * l.abs().max(f64::MIN_POSITIVE)
        && evaluate(spec, trial, batch, decay, 0).is_ok_and(|(_, g)| norm(&g) < 0.5 * gn)
}

fn finish(spec: &ModelSpec, w: Vec<f64>, mut trace: Vec<TraceEntry>, step: usize, l: f64, gn: f64) -> Result<TrainResult> {
    if trace.last().is_none_or(|t| t.step != step) {
        trace.push(TraceEntry { step, loss: l, grad_norm: gn });
    }
    Ok(TrainResult {
        params: ModelParams::from_flat(spec, &w)?,
        trace,
        converged: false,
        steps: step,
        final_loss: l,
        final_grad_norm: gn,
    })
}

#[allow(clippy::too_many_arguments)]
fn minibatch_gradient(
    spec: &ModelSpec,
    w: &[f64],
    batch: &Batch,
    batch_size: Option<usize>,
    order: &mut [usize],
    cursor: &mut usize,
    shuffle: &mut rng::SeededRng,
    full: &[f64],
    decay: f64,
    step: usize,
) -> Result<Vec<f64>> {
    let Some(size) = batch_size.filter(|&b| b > 0 && b < batch.len()) else {
        return Ok(full.to_vec());
    };
    if *cursor + size > order.len() {
        order.shuffle(shuffle);
        *cursor = 0;
    }
    let idx = &order[*cursor..*cursor + size];
    *cursor += size;
    evaluate(spec, w, &subset(batch, idx), decay, step).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Init;
    use crate::net::{Activation, LossKind};

    fn linear_problem(seed: u64) -> (ModelSpec, Batch) {
        let spec = ModelSpec::new(vec![4, 3], Activation::Identity, LossKind::MeanSquaredError).unwrap();
        let mut g = rng::seeded(seed);
        let batch = Batch {
            inputs: rng::normal_matrix(&mut g, 20, 4),
            targets: Targets::Values(rng::normal_matrix(&mut g, 20, 3)),
        };
        (spec, batch)
    }

    /// `Wᵀ = (XᵀX + nλI)⁻¹ XᵀY` by Gauss-Jordan elimination.
    fn normal_equations(batch: &Batch, ridge: f64) -> DenseMatrix {
        let x = &batch.inputs;
        let Targets::Values(y) = &batch.targets else { unreachable!() };
        let shift = DenseMatrix::identity(x.cols()).scale(ridge * x.rows() as f64);
        let a = x.transpose().matmul(x).unwrap().add(&shift).unwrap();
        let b = x.transpose().matmul(y).unwrap();
        let n = a.rows();
        let m = b.cols();
        let mut aug: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| a.get(i, j)).chain((0..m).map(|j| b.get(i, j))).collect())
            .collect();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| aug[i][c].abs().total_cmp(&aug[j][c].abs())).unwrap();
            aug.swap(c, p);
            let pivot = aug[c][c];
            aug[c].iter_mut().for_each(|v| *v /= pivot);
            for r in 0..n {
                if r != c {
                    let f = aug[r][c];
                    let row_c = aug[c].clone();
                    aug[r].iter_mut().zip(&row_c).for_each(|(v, &cv)| *v -= f * cv);
                }
            }
        }
        DenseMatrix::from_fn(m, n, |i, j| aug[j][n + i])
    }

    fn config(optimizer: Optimizer, steps: usize) -> TrainConfig {
        TrainConfig {
            optimizer,
            steps,
            grad_tol: 1e-12,
            init: Init::Random { gain: 1.0 },
            seed: None,
            trace_every: 1,
            weight_decay: 0.0,
        }
    }

    #[test]
    fn linear_least_squares_matches_normal_equations() {
        let (spec, batch) = linear_problem(1);
        let oracle = normal_equations(&batch, 0.0);
        let init = ModelParams::random(&spec, 2, 1.0);
        for opt in [
            Optimizer::Newton { damping: 1e-3 },
            Optimizer::LineSearch,
            Optimizer::Sgd {
                learning_rate: 0.5,
                momentum: 0.5,
                batch_size: None,
            },
        ] {
            let r = train(&spec, &init, &batch, &config(opt.clone(), 20_000), 0).unwrap();
            let err = r.params.weights[0].sub(&oracle).unwrap().max_abs();
            assert!(err < 1e-6, "{opt:?}: {err}");
            assert!(r.final_grad_norm < 1e-9, "{opt:?}: {}", r.final_grad_norm);
        }
    }

    #[test]
    fn weight_decay_matches_ridge_regression() {
        let (spec, batch) = linear_problem(4);
        let oracle = normal_equations(&batch, 0.3);
        let init = ModelParams::random(&spec, 5, 1.0);
        for opt in [Optimizer::Newton { damping: 1e-3 }, Optimizer::LineSearch] {
            let cfg = TrainConfig {
                weight_decay: 0.3,
                ..config(opt.clone(), 5_000)
            };
            let r = train(&spec, &init, &batch, &cfg, 0).unwrap();
            let err = r.params.weights[0].sub(&oracle).unwrap().max_abs();
            assert!(err < 1e-8, "{opt:?}: {err}");
        }
    }

    #[test]
    fn zero_steps_returns_init() {
        let (spec, batch) = linear_problem(2);
        let init = ModelParams::random(&spec, 3, 1.0);
        let r = train(&spec, &init, &batch, &config(Optimizer::LineSearch, 0), 0).unwrap();
        assert_eq!(r.params, init);
        assert_eq!(r.steps, 0);
        assert_eq!(r.trace.len(), 1);
        assert!(!r.converged);
    }

    #[test]
    fn reproducible_bits() {
        let spec = ModelSpec::new(vec![3, 5, 2], Activation::Tanh, LossKind::MeanSquaredError).unwrap();
        let mut g = rng::seeded(4);
        let batch = Batch {
            inputs: rng::normal_matrix(&mut g, 30, 3),
            targets: Targets::Values(rng::normal_matrix(&mut g, 30, 2)),
        };
        let init = ModelParams::random(&spec, 1, 1.0);
        let cfg = config(
            Optimizer::Adam {
                learning_rate: 1e-2,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
                batch_size: Some(8),
            },
            200,
        );
        let a = train(&spec, &init, &batch, &cfg, 7).unwrap();
        let b = train(&spec, &init, &batch, &cfg, 7).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
        assert!(a.final_loss < a.trace[0].loss);
    }

    #[test]
    fn newton_reaches_tight_gradient_target() {
        // a teacher of the same architecture keeps the minimum finite
        let spec = ModelSpec::new(vec![3, 4, 2], Activation::Tanh, LossKind::MeanSquaredError).unwrap();
        let teacher = ModelParams::random(&spec, 9, 1.5);
        let mut g = rng::seeded(5);
        let inputs = rng::normal_matrix(&mut g, 40, 3);
        let clean = crate::net::forward(&spec, &teacher, &inputs).unwrap();
        let batch = Batch {
            targets: Targets::Values(clean.add(&rng::normal_matrix(&mut g, 40, 2).scale(0.05)).unwrap()),
            inputs,
        };
        let init = ModelParams::random(&spec, 2, 1.0);
        let r = train(&spec, &init, &batch, &config(Optimizer::Newton { damping: 1e-2 }, 300), 0).unwrap();
        assert!(r.final_grad_norm < 1e-9, "{}", r.final_grad_norm);
    }

    #[test]
    fn divergence_reports_step() {
        let (spec, batch) = linear_problem(3);
        let init = ModelParams::random(&spec, 1, 1.0);
        let cfg = config(
            Optimizer::Sgd {
                learning_rate: 1e3,
                momentum: 0.0,
                batch_size: None,
            },
            10_000,
        );
        match train(&spec, &init, &batch, &cfg, 0) {
            Err(Error::Diverged { step }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
