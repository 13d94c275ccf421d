//! Bias-free multilayer perceptrons with exact derivatives.
//!
//! The forward and backward passes are written once over [`Scalar`]. With
//! `f64` they give the loss and its reverse-mode gradient; with [`Dual`]
//! weights whose tangent is `v` the tangent of the gradient is `H·v`
//! (forward-over-reverse).
//!
//! Layer `l` (0-based) holds a `d[l+1] × d[l]` matrix applied as `z = W a`.
//! The activation follows every layer except the last, whose output is the
//! regression prediction or the logits. Parameters are vectorized layer by
//! layer in row-major order.

pub mod checkpoint;
mod scalar;

pub use scalar::{Dual, Scalar};

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::linalg::{DenseMatrix, SymmetricOperator};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Tanh,
    /// `softplus(k·z)/k`, a twice-differentiable stand-in for relu.
    SmoothRelu { sharpness: f64 },
}

impl Activation {
    fn value<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::SmoothRelu { sharpness } => {
                let k = T::cst(sharpness);
                (k * z).softplus() / k
            }
        }
    }

    fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
            Activation::SmoothRelu { sharpness } => (T::cst(sharpness) * z).sigmoid(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `1/(2n) Σ ‖f(x) − y‖²`
    MeanSquaredError,
    /// Mean negative log-softmax of the target class.
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
}

impl ModelSpec {
    pub fn new(layer_dims: Vec<usize>, activation: Activation, loss: LossKind) -> Result<Self> {
        let spec = Self {
            layer_dims,
            activation,
            loss,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return param_err("a model needs at least two layer dimensions");
        }
        if self.layer_dims.contains(&0) {
            return param_err("layer dimensions must be positive");
        }
        if let Activation::SmoothRelu { sharpness } = self.activation {
            if !(sharpness > 0.0 && sharpness.is_finite()) {
                return param_err("smooth-relu sharpness must be positive");
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// `(rows, cols)` of layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.layer_dims[l + 1], self.layer_dims[l])
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.num_layers()).map(|l| self.layer_shape(l)).collect()
    }

    pub fn layer_size(&self, l: usize) -> usize {
        let (m, n) = self.layer_shape(l);
        m * n
    }

    pub fn num_params(&self) -> usize {
        (0..self.num_layers()).map(|l| self.layer_size(l)).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }
}

/// One weight matrix per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: Vec<DenseMatrix>,
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            weights: spec
                .layer_shapes()
                .into_iter()
                .map(|(m, n)| DenseMatrix::zeros(m, n))
                .collect(),
        }
    }

    /// Gaussian weights with standard deviation `gain / sqrt(fan_in)`.
    pub fn random(spec: &ModelSpec, seed: u64, gain: f64) -> Self {
        let mut g = rng::seeded(seed);
        Self {
            weights: spec
                .layer_shapes()
                .into_iter()
                .map(|(m, n)| rng::normal_matrix(&mut g, m, n).scale(gain / (n as f64).sqrt()))
                .collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .flat_map(|w| w.as_slice().iter().copied())
            .collect()
    }

    pub fn from_flat(spec: &ModelSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.num_params() {
            return param_err(format!(
                "{} values for a model with {} parameters",
                flat.len(),
                spec.num_params()
            ));
        }
        let mut weights = Vec::with_capacity(spec.num_layers());
        let mut offset = 0;
        for (m, n) in spec.layer_shapes() {
            weights.push(DenseMatrix::from_vec(m, n, flat[offset..offset + m * n].to_vec())?);
            offset += m * n;
        }
        Ok(Self { weights })
    }

    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        if self.weights.len() != spec.num_layers() {
            return param_err(format!(
                "{} weight matrices for {} layers",
                self.weights.len(),
                spec.num_layers()
            ));
        }
        for (l, w) in self.weights.iter().enumerate() {
            if w.shape() != spec.layer_shape(l) {
                return param_err(format!(
                    "layer {l} has shape {:?}, expected {:?}",
                    w.shape(),
                    spec.layer_shape(l)
                ));
            }
            if !w.is_finite() {
                return Err(Error::Data(format!("layer {l} has non-finite weights")));
            }
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.frobenius_norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Targets {
    Values(DenseMatrix),
    Classes(Vec<usize>),
}

/// Samples in rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub inputs: DenseMatrix,
    pub targets: Targets,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let n = self.inputs.rows();
        if n == 0 {
            return param_err("empty batch");
        }
        if self.inputs.cols() != spec.input_dim() {
            return param_err(format!(
                "inputs have {} features, model expects {}",
                self.inputs.cols(),
                spec.input_dim()
            ));
        }
        match (&self.targets, spec.loss) {
            (Targets::Values(y), LossKind::MeanSquaredError) => {
                if y.shape() != (n, spec.output_dim()) {
                    return param_err(format!(
                        "targets have shape {:?}, expected {:?}",
                        y.shape(),
                        (n, spec.output_dim())
                    ));
                }
            }
            (Targets::Classes(c), LossKind::SoftmaxCrossEntropy) => {
                if c.len() != n {
                    return param_err(format!("{} class labels for {n} samples", c.len()));
                }
                if let Some(bad) = c.iter().find(|&&k| k >= spec.output_dim()) {
                    return param_err(format!(
                        "class {bad} out of range for {} outputs",
                        spec.output_dim()
                    ));
                }
            }
            _ => return param_err("target kind does not match the loss"),
        }
        Ok(())
    }
}

/// Which weights a Hessian is taken with respect to; the rest stay fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Layer(usize),
    All,
}

impl Scope {
    pub fn dim(self, spec: &ModelSpec) -> usize {
        match self {
            Scope::Layer(l) => spec.layer_size(l),
            Scope::All => spec.num_params(),
        }
    }

    fn offset(self, spec: &ModelSpec) -> usize {
        match self {
            Scope::Layer(l) => (0..l).map(|k| spec.layer_size(k)).sum(),
            Scope::All => 0,
        }
    }

    fn check(self, spec: &ModelSpec) -> Result<()> {
        match self {
            Scope::Layer(l) if l >= spec.num_layers() => param_err(format!(
                "layer {l} out of range for a {}-layer model",
                spec.num_layers()
            )),
            _ => Ok(()),
        }
    }
}

fn check_all(spec: &ModelSpec, params: &ModelParams, batch: &Batch) -> Result<()> {
    spec.validate()?;
    params.check_against(spec)?;
    batch.check_against(spec)
}

/// Loss and per-layer gradient (row-major) for weights over any scalar type.
fn evaluate<T: Scalar>(spec: &ModelSpec, weights: &[Vec<T>], batch: &Batch) -> Result<(T, Vec<Vec<T>>)> {
    let n = batch.len();
    let layers = spec.num_layers();
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(layers + 1);
    let mut pre: Vec<Vec<T>> = Vec::with_capacity(layers);
    acts.push(batch.inputs.as_slice().iter().map(|&x| T::cst(x)).collect());

    for l in 0..layers {
        let (m, k) = spec.layer_shape(l);
        let w = &weights[l];
        let a = &acts[l];
        let mut z = vec![T::zero(); n * m];
        for i in 0..n {
            let ai = &a[i * k..(i + 1) * k];
            for o in 0..m {
                let wo = &w[o * k..(o + 1) * k];
                let mut s = T::zero();
                for (&x, &wv) in ai.iter().zip(wo) {
                    s += x * wv;
                }
                z[i * m + o] = s;
            }
        }
        if let Some(pos) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                layer: l,
                message: format!("pre-activation of sample {} is not finite", pos / m),
            });
        }
        let next = if l + 1 < layers {
            z.iter().map(|&v| spec.activation.value(v)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
        acts.push(next);
    }

    let out_dim = spec.output_dim();
    let out = &acts[layers];
    let inv_n = T::cst(1.0 / n as f64);
    let mut loss = T::zero();
    let mut d_out = vec![T::zero(); n * out_dim];
    match &batch.targets {
        Targets::Values(y) => {
            let y = y.as_slice();
            for idx in 0..n * out_dim {
                let r = out[idx] - T::cst(y[idx]);
                loss += r * r;
                d_out[idx] = r * inv_n;
            }
            loss = loss * T::cst(0.5 / n as f64);
        }
        Targets::Classes(classes) => {
            for (i, &c) in classes.iter().enumerate() {
                let row = &out[i * out_dim..(i + 1) * out_dim];
                let shift = *row
                    .iter()
                    .max_by(|a, b| a.re().total_cmp(&b.re()))
                    .expect("non-empty output");
                let mut sum = T::zero();
                for &v in row {
                    sum += (v - shift).exp();
                }
                let lse = shift + sum.ln();
                loss += lse - row[c];
                for (o, &v) in row.iter().enumerate() {
                    let p = (v - lse).exp();
                    let target = if o == c { T::one() } else { T::zero() };
                    d_out[i * out_dim + o] = (p - target) * inv_n;
                }
            }
            loss = loss * inv_n;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric {
            layer: layers - 1,
            message: "loss is not finite".into(),
        });
    }

    let mut grads: Vec<Vec<T>> = vec![Vec::new(); layers];
    let mut delta = d_out;
    for l in (0..layers).rev() {
        let (m, k) = spec.layer_shape(l);
        if l + 1 < layers {
            for (d, &z) in delta.iter_mut().zip(&pre[l]) {
                *d = *d * spec.activation.derivative(z);
            }
        }
        let a = &acts[l];
        let mut g = vec![T::zero(); m * k];
        for i in 0..n {
            let ai = &a[i * k..(i + 1) * k];
            for o in 0..m {
                let d = delta[i * m + o];
                let go = &mut g[o * k..(o + 1) * k];
                for (gv, &x) in go.iter_mut().zip(ai) {
                    *gv += d * x;
                }
            }
        }
        grads[l] = g;
        if l > 0 {
            let w = &weights[l];
            let mut prev = vec![T::zero(); n * k];
            for i in 0..n {
                let pi = &mut prev[i * k..(i + 1) * k];
                for o in 0..m {
                    let d = delta[i * m + o];
                    for (p, &wv) in pi.iter_mut().zip(&w[o * k..(o + 1) * k]) {
                        *p += d * wv;
                    }
                }
            }
            delta = prev;
        }
    }
    Ok((loss, grads))
}

fn primal_weights(params: &ModelParams) -> Vec<Vec<f64>> {
    params.weights.iter().map(|w| w.as_slice().to_vec()).collect()
}

pub fn loss(spec: &ModelSpec, params: &ModelParams, batch: &Batch) -> Result<f64> {
    loss_and_gradient(spec, params, batch).map(|(l, _)| l)
}

pub fn gradient(spec: &ModelSpec, params: &ModelParams, batch: &Batch) -> Result<ModelParams> {
    loss_and_gradient(spec, params, batch).map(|(_, g)| g)
}

pub fn loss_and_gradient(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &Batch,
) -> Result<(f64, ModelParams)> {
    check_all(spec, params, batch)?;
    let (loss, grads) = evaluate::<f64>(spec, &primal_weights(params), batch)?;
    let weights = grads
        .into_iter()
        .enumerate()
        .map(|(l, g)| {
            let (m, n) = spec.layer_shape(l);
            DenseMatrix::from_vec(m, n, g).map_err(|_| Error::Numeric {
                layer: l,
                message: "gradient is not finite".into(),
            })
        })
        .collect::<Result<_>>()?;
    Ok((loss, ModelParams { weights }))
}

/// Exact Hessian-vector product with respect to the weights in `scope`.
pub fn hvp(spec: &ModelSpec, params: &ModelParams, batch: &Batch, scope: Scope, v: &[f64]) -> Result<Vec<f64>> {
    check_all(spec, params, batch)?;
    scope.check(spec)?;
    if v.len() != scope.dim(spec) {
        return param_err(format!(
            "direction has length {}, scope has {} parameters",
            v.len(),
            scope.dim(spec)
        ));
    }
    hvp_unchecked(spec, params, batch, scope, v)
}

fn hvp_unchecked(spec: &ModelSpec, params: &ModelParams, batch: &Batch, scope: Scope, v: &[f64]) -> Result<Vec<f64>> {
    let start = scope.offset(spec);
    let end = start + v.len();
    let mut offset = 0;
    let weights: Vec<Vec<Dual>> = params
        .weights
        .iter()
        .map(|w| {
            let out = w
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let g = offset + i;
                    let du = if (start..end).contains(&g) { v[g - start] } else { 0.0 };
                    Dual::new(x, du)
                })
                .collect();
            offset += w.as_slice().len();
            out
        })
        .collect();
    let (_, grads) = evaluate::<Dual>(spec, &weights, batch)?;
    let tangent: Vec<f64> = grads.iter().flatten().map(|d| d.du).collect();
    Ok(tangent[start..end].to_vec())
}

/// Matrix-free Hessian of the loss restricted to one scope.
#[derive(Debug, Clone, Copy)]
pub struct HessianOperator<'a> {
    spec: &'a ModelSpec,
    params: &'a ModelParams,
    batch: &'a Batch,
    scope: Scope,
}

impl<'a> HessianOperator<'a> {
    pub fn new(spec: &'a ModelSpec, params: &'a ModelParams, batch: &'a Batch, scope: Scope) -> Result<Self> {
        check_all(spec, params, batch)?;
        scope.check(spec)?;
        // surface forward-pass failures here rather than inside `apply`
        evaluate::<f64>(spec, &primal_weights(params), batch)?;
        Ok(Self {
            spec,
            params,
            batch,
            scope,
        })
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }
}

impl SymmetricOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.scope.dim(self.spec)
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim(), "direction length mismatch");
        hvp_unchecked(self.spec, self.params, self.batch, self.scope, v)
            .expect("forward pass was validated at construction")
    }
}

/// Hessian of the loss with respect to `vec(W_layer)` only.
pub fn layer_hessian_operator<'a>(
    spec: &'a ModelSpec,
    params: &'a ModelParams,
    batch: &'a Batch,
    layer: usize,
) -> Result<HessianOperator<'a>> {
    HessianOperator::new(spec, params, batch, Scope::Layer(layer))
}

pub fn model_hessian_operator<'a>(
    spec: &'a ModelSpec,
    params: &'a ModelParams,
    batch: &'a Batch,
) -> Result<HessianOperator<'a>> {
    HessianOperator::new(spec, params, batch, Scope::All)
}

/// Network outputs (predictions or logits), one row per sample.
pub fn forward(spec: &ModelSpec, params: &ModelParams, inputs: &DenseMatrix) -> Result<DenseMatrix> {
    params.check_against(spec)?;
    if inputs.cols() != spec.input_dim() {
        return param_err("input width does not match the model");
    }
    let mut a = inputs.clone();
    for (l, w) in params.weights.iter().enumerate() {
        let z = a.matmul(&w.transpose())?;
        a = if l + 1 < spec.num_layers() {
            let (r, c) = z.shape();
            DenseMatrix::from_vec(r, c, z.as_slice().iter().map(|&v| spec.activation.value(v)).collect())
                .map_err(|_| Error::Numeric {
                    layer: l,
                    message: "activation is not finite".into(),
                })?
        } else {
            z
        };
    }
    Ok(a)
}

#[cfg(test)]
mod tests;
