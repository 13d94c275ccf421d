use super::*;
use crate::linalg::{probe_dense, sym_eig_dense, symmetrize};
use crate::rng;

fn regression_batch(spec: &ModelSpec, n: usize, seed: u64) -> Batch {
    let mut g = rng::seeded(seed);
    Batch {
        inputs: rng::normal_matrix(&mut g, n, spec.input_dim()),
        targets: Targets::Values(rng::normal_matrix(&mut g, n, spec.output_dim())),
    }
}

fn classification_batch(spec: &ModelSpec, n: usize, seed: u64) -> Batch {
    let mut g = rng::seeded(seed);
    Batch {
        inputs: rng::normal_matrix(&mut g, n, spec.input_dim()),
        targets: Targets::Classes((0..n).map(|i| (i * 7 + seed as usize) % spec.output_dim()).collect()),
    }
}

fn loss_at(spec: &ModelSpec, batch: &Batch, w: &[f64]) -> f64 {
    loss(spec, &ModelParams::from_flat(spec, w).unwrap(), batch).unwrap()
}

/// Central differences of the loss.
fn fd_gradient(spec: &ModelSpec, params: &ModelParams, batch: &Batch, h: f64) -> Vec<f64> {
    let w = params.flatten();
    (0..w.len())
        .map(|i| {
            let mut p = w.clone();
            let mut m = w.clone();
            p[i] += h;
            m[i] -= h;
            (loss_at(spec, batch, &p) - loss_at(spec, batch, &m)) / (2.0 * h)
        })
        .collect()
}

/// Dense Hessian from second differences of the loss.
fn fd_hessian(spec: &ModelSpec, params: &ModelParams, batch: &Batch, h: f64) -> DenseMatrix {
    let w = params.flatten();
    let n = w.len();
    let f = |di: usize, si: f64, dj: usize, sj: f64| {
        let mut x = w.clone();
        x[di] += si * h;
        x[dj] += sj * h;
        loss_at(spec, batch, &x)
    };
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = (f(i, 1.0, j, 1.0) - f(i, 1.0, j, -1.0) - f(i, -1.0, j, 1.0) + f(i, -1.0, j, -1.0))
                / (4.0 * h * h);
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

fn tiny_models() -> Vec<(ModelSpec, Batch)> {
    vec![
        (
            ModelSpec::new(vec![3, 4, 2], Activation::Tanh, LossKind::MeanSquaredError).unwrap(),
            regression_batch(&ModelSpec::new(vec![3, 4, 2], Activation::Tanh, LossKind::MeanSquaredError).unwrap(), 7, 1),
        ),
        {
            let s = ModelSpec::new(vec![2, 3, 3, 2], Activation::SmoothRelu { sharpness: 4.0 }, LossKind::MeanSquaredError).unwrap();
            let b = regression_batch(&s, 5, 2);
            (s, b)
        },
        {
            let s = ModelSpec::new(vec![3, 5, 3], Activation::Tanh, LossKind::SoftmaxCrossEntropy).unwrap();
            let b = classification_batch(&s, 6, 3);
            (s, b)
        },
    ]
}

#[test]
fn zero_model_has_zero_loss() {
    let spec = ModelSpec::new(vec![3, 2], Activation::Identity, LossKind::MeanSquaredError).unwrap();
    let batch = Batch {
        inputs: rng::normal_matrix(&mut rng::seeded(0), 4, 3),
        targets: Targets::Values(DenseMatrix::zeros(4, 2)),
    };
    let params = ModelParams::zeros(&spec);
    assert_eq!(loss(&spec, &params, &batch).unwrap(), 0.0);
    let g = gradient(&spec, &params, &batch).unwrap();
    assert!(g.flatten().iter().all(|&x| x == 0.0));
}

#[test]
fn linear_mse_matches_closed_form() {
    let spec = ModelSpec::new(vec![4, 3], Activation::Identity, LossKind::MeanSquaredError).unwrap();
    let batch = regression_batch(&spec, 9, 4);
    let params = ModelParams::random(&spec, 5, 1.0);
    // ½‖W Xᵀ − Yᵀ‖² / n with samples in rows of X
    let pred = batch.inputs.matmul(&params.weights[0].transpose()).unwrap();
    let Targets::Values(y) = &batch.targets else { unreachable!() };
    let expected = 0.5 * pred.sub(y).unwrap().frobenius_norm().powi(2) / 9.0;
    let got = loss(&spec, &params, &batch).unwrap();
    assert!((got - expected).abs() < 1e-14 * expected.max(1.0));
}

#[test]
fn uniform_logits_give_log_k() {
    let spec = ModelSpec::new(vec![3, 5], Activation::Identity, LossKind::SoftmaxCrossEntropy).unwrap();
    let batch = classification_batch(&spec, 4, 0);
    let l = loss(&spec, &ModelParams::zeros(&spec), &batch).unwrap();
    assert!((l - 5f64.ln()).abs() < 1e-15);
}

#[test]
fn gradient_matches_finite_differences() {
    for (spec, batch) in tiny_models() {
        let params = ModelParams::random(&spec, 8, 1.2);
        let g = gradient(&spec, &params, &batch).unwrap().flatten();
        let fd = fd_gradient(&spec, &params, &batch, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-2), "{a} vs {b}");
        }
    }
}

#[test]
fn gradient_ignores_constant_offsets() {
    // J + c differentiated numerically must still give ∇J.
    let (spec, batch) = tiny_models().remove(0);
    let params = ModelParams::random(&spec, 2, 1.0);
    let (l0, g0) = loss_and_gradient(&spec, &params, &batch).unwrap();
    let c = 3.5;
    let fd_shifted: Vec<f64> = {
        let w = params.flatten();
        (0..w.len())
            .map(|i| {
                let mut p = w.clone();
                let mut m = w.clone();
                p[i] += 1e-5;
                m[i] -= 1e-5;
                ((loss_at(&spec, &batch, &p) + c) - (loss_at(&spec, &batch, &m) + c)) / 2e-5
            })
            .collect()
    };
    assert!(l0.is_finite());
    for (a, b) in g0.flatten().iter().zip(&fd_shifted) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn hvp_of_zero_is_zero() {
    let (spec, batch) = tiny_models().remove(1);
    let params = ModelParams::random(&spec, 1, 1.0);
    let out = hvp(&spec, &params, &batch, Scope::All, &vec![0.0; spec.num_params()]).unwrap();
    assert!(out.iter().all(|&x| x == 0.0));
}

/// `I_M ⊗ G` with `G = XᵀX/n`, the Hessian of a linear least-squares layer
/// under row-major vectorization.
fn kronecker_gram(inputs: &DenseMatrix, m: usize) -> DenseMatrix {
    let n = inputs.rows() as f64;
    let gram = inputs.transpose().matmul(inputs).unwrap().scale(1.0 / n);
    let k = gram.rows();
    DenseMatrix::from_fn(m * k, m * k, |i, j| if i / k == j / k { gram.get(i % k, j % k) } else { 0.0 })
}

#[test]
fn hvp_on_quadratic_construction() {
    // Zero targets make J(w) = ½ wᵀ (I ⊗ G) w exactly.
    let spec = ModelSpec::new(vec![4, 3], Activation::Identity, LossKind::MeanSquaredError).unwrap();
    let inputs = rng::normal_matrix(&mut rng::seeded(3), 10, 4);
    let batch = Batch {
        inputs: inputs.clone(),
        targets: Targets::Values(DenseMatrix::zeros(10, 3)),
    };
    let a = kronecker_gram(&inputs, 3);
    let params = ModelParams::random(&spec, 4, 1.0);
    let w = params.flatten();
    let quad = 0.5 * crate::linalg::dot(&w, &a.matvec(&w).unwrap());
    assert!((loss(&spec, &params, &batch).unwrap() - quad).abs() < 1e-13);
    let v = rng::normal_vec(&mut rng::seeded(6), 12);
    let hv = hvp(&spec, &params, &batch, Scope::Layer(0), &v).unwrap();
    let expected = a.matvec(&v).unwrap();
    for (x, y) in hv.iter().zip(&expected) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn layer_operator_matches_kronecker_hessian() {
    let spec = ModelSpec::new(vec![5, 4], Activation::Identity, LossKind::MeanSquaredError).unwrap();
    let batch = regression_batch(&spec, 12, 9);
    let params = ModelParams::random(&spec, 1, 1.0);
    let op = layer_hessian_operator(&spec, &params, &batch, 0).unwrap();
    assert_eq!(op.dim(), 20);
    let dense = probe_dense(&op);
    let expected = kronecker_gram(&batch.inputs, 4);
    assert!(dense.sub(&expected).unwrap().max_abs() < 1e-10);
}

#[test]
fn probed_layer_hessian_is_symmetric() {
    for (spec, batch) in tiny_models() {
        let params = ModelParams::random(&spec, 3, 1.0);
        for l in 0..spec.num_layers() {
            let op = layer_hessian_operator(&spec, &params, &batch, l).unwrap();
            assert_eq!(op.dim(), spec.layer_size(l));
            let dense = probe_dense(&op);
            assert!(dense.asymmetry().unwrap() < 1e-8 * dense.max_abs().max(1.0));
        }
    }
}

#[test]
fn hvp_matches_finite_difference_hessian() {
    for (spec, batch) in tiny_models() {
        assert!(spec.num_params() <= 60);
        let params = ModelParams::random(&spec, 21, 1.0);
        let op = model_hessian_operator(&spec, &params, &batch).unwrap();
        let exact = probe_dense(&op);
        let fd = fd_hessian(&spec, &params, &batch, 1e-4);
        let rel = exact.sub(&fd).unwrap().max_abs() / fd.max_abs();
        assert!(rel < 1e-4, "relative error {rel}");
    }
}

#[test]
fn layer_scope_is_a_diagonal_block() {
    let (spec, batch) = tiny_models().remove(1);
    let params = ModelParams::random(&spec, 4, 1.0);
    let full = probe_dense(&model_hessian_operator(&spec, &params, &batch).unwrap());
    let layer = probe_dense(&layer_hessian_operator(&spec, &params, &batch, 1).unwrap());
    let off = spec.layer_size(0);
    for i in 0..layer.rows() {
        for j in 0..layer.cols() {
            assert!((layer.get(i, j) - full.get(off + i, off + j)).abs() < 1e-13);
        }
    }
}

#[test]
fn hessian_is_psd_at_a_linear_minimum() {
    // Linear least squares has a constant Hessian, so every point sees the
    // curvature of the minimum.
    let spec = ModelSpec::new(vec![3, 2], Activation::Identity, LossKind::MeanSquaredError).unwrap();
    let batch = regression_batch(&spec, 10, 1);
    let params = ModelParams::zeros(&spec);
    let h = symmetrize(&probe_dense(&model_hessian_operator(&spec, &params, &batch).unwrap()));
    let e = sym_eig_dense(&h).unwrap();
    let lmax = e.values[0];
    assert!(e.values.iter().all(|&l| l >= -1e-6 * lmax));
}

#[test]
fn deterministic_replay() {
    let (spec, batch) = tiny_models().remove(2);
    let a = ModelParams::random(&spec, 99, 1.0);
    let b = ModelParams::random(&spec, 99, 1.0);
    let (la, ga) = loss_and_gradient(&spec, &a, &batch).unwrap();
    let (lb, gb) = loss_and_gradient(&spec, &b, &batch).unwrap();
    assert_eq!(la.to_bits(), lb.to_bits());
    let bits = |p: &ModelParams| p.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ga), bits(&gb));
}

#[test]
fn shape_errors() {
    let (spec, batch) = tiny_models().remove(0);
    let params = ModelParams::random(&spec, 0, 1.0);
    assert!(matches!(
        hvp(&spec, &params, &batch, Scope::Layer(0), &[1.0]),
        Err(Error::Parameter(_))
    ));
    assert!(layer_hessian_operator(&spec, &params, &batch, 5).is_err());
    let wrong = ModelParams::zeros(&ModelSpec::new(vec![3, 2], Activation::Tanh, LossKind::MeanSquaredError).unwrap());
    assert!(loss(&spec, &wrong, &batch).is_err());
    let bad_targets = Batch {
        inputs: batch.inputs.clone(),
        targets: Targets::Classes(vec![0; batch.len()]),
    };
    assert!(loss(&spec, &params, &bad_targets).is_err());
}

#[test]
fn non_finite_forward_reports_layer() {
    let spec = ModelSpec::new(vec![2, 2, 2], Activation::Identity, LossKind::MeanSquaredError).unwrap();
    let mut params = ModelParams::zeros(&spec);
    params.weights[0] = DenseMatrix::from_vec(2, 2, vec![1e200, 1e200, 1e200, 1e200]).unwrap();
    params.weights[1] = DenseMatrix::from_vec(2, 2, vec![1e200, 1e200, 1e200, 1e200]).unwrap();
    let batch = Batch {
        inputs: DenseMatrix::from_vec(1, 2, vec![1e10, 1e10]).unwrap(),
        targets: Targets::Values(DenseMatrix::zeros(1, 2)),
    };
    match loss(&spec, &params, &batch) {
        Err(Error::Numeric { layer, .. }) => assert_eq!(layer, 1),
        other => panic!("expected numeric error, got {other:?}"),
    }
}
