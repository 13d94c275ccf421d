use std::collections::BTreeMap;

use super::config::{DataSpec, Task};
use crate::error::{param_err, Result};
use crate::linalg::DenseMatrix;
use crate::net::{forward, Batch, LossKind, ModelParams, ModelSpec, Targets};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Batch,
    pub eval: Batch,
    /// The generating network, when the task has one.
    pub teacher: Option<ModelParams>,
    /// Planted cluster of every layer.
    pub planted_labels: Option<Vec<usize>>,
}

/// Deterministic synthetic train and eval batches for `spec`.
pub fn gen_data(spec: &ModelSpec, data: &DataSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if data.train_samples == 0 || data.eval_samples == 0 {
        return param_err("sample counts must be positive");
    }
    if !(data.noise >= 0.0) {
        return param_err("noise must be non-negative");
    }
    let (teacher, planted_labels) = match data.task {
        Task::Teacher { gain } => (Some(ModelParams::random(spec, rng_seed(seed, 2), gain)), None),
        Task::PlantedClusters {
            clusters,
            rank,
            scale,
            tail,
            spread,
        } => {
            let (t, labels) = planted_teacher(spec, clusters, rank, (scale, tail), spread, seed)?;
            (Some(t), Some(labels))
        }
        Task::Identity => {
            if spec.input_dim() != spec.output_dim() || spec.loss != LossKind::MeanSquaredError {
                return param_err("the identity task needs a square regression model");
            }
            (None, None)
        }
    };
    let make = |n: usize, stream: u64| -> Result<Batch> {
        let mut g = rng::derive(seed, stream);
        let inputs = rng::normal_matrix(&mut g, n, spec.input_dim());
        let clean = match &teacher {
            Some(t) => forward(spec, t, &inputs)?,
            None => inputs.clone(),
        };
        let noise = rng::normal_matrix(&mut g, n, spec.output_dim()).scale(data.noise);
        let noisy = clean.add(&noise)?;
        let targets = match spec.loss {
            LossKind::MeanSquaredError => Targets::Values(noisy),
            LossKind::SoftmaxCrossEntropy => Targets::Classes((0..n).map(|i| argmax(noisy.row(i))).collect()),
        };
        Ok(Batch { inputs, targets })
    };
    Ok(Dataset {
        train: make(data.train_samples, 10)?,
        eval: make(data.eval_samples, 11)?,
        teacher,
        planted_labels,
    })
}

fn rng_seed(seed: u64, stream: u64) -> u64 {
    use rand::Rng;
    rng::derive(seed, stream).random()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn planted_teacher(
    spec: &ModelSpec,
    clusters: usize,
    rank: usize,
    (scale, tail): (f64, f64),
    spread: f64,
    seed: u64,
) -> Result<(ModelParams, Vec<usize>)> {
    if clusters == 0 || rank == 0 {
        return param_err("planted clusters need positive cluster count and rank");
    }
    if !(tail >= 0.0) {
        return param_err("planted tail must be non-negative");
    }
    let mut g = rng::derive(seed, 3);
    let mut prototypes: BTreeMap<(usize, (usize, usize)), DenseMatrix> = BTreeMap::new();
    let mut weights = Vec::with_capacity(spec.num_layers());
    let mut labels = Vec::with_capacity(spec.num_layers());
    for l in 0..spec.num_layers() {
        let (m, n) = spec.layer_shape(l);
        if rank > m.min(n) {
            return param_err(format!("planted rank {rank} exceeds layer {l} of shape {:?}", (m, n)));
        }
        let c = l % clusters;
        let proto = prototypes.entry((c, (m, n))).or_insert_with(|| {
            let full = if tail > 0.0 { m.min(n) } else { rank };
            let u = rng::orthonormal_columns(&mut g, m, full);
            let v = rng::orthonormal_columns(&mut g, n, full);
            let sigma: Vec<f64> = (0..full)
                .map(|i| if i < rank { scale * (1.0 - 0.5 * i as f64 / rank as f64) } else { tail * scale })
                .collect();
            u.matmul(&DenseMatrix::from_diag(&sigma))
                .and_then(|us| us.matmul(&v.transpose()))
                .expect("shapes agree")
        });
        let variation = rng::normal_matrix(&mut g, m, n).scale(spread / (n as f64).sqrt());
        weights.push(proto.add(&variation)?);
        labels.push(c);
    }
    Ok((ModelParams { weights }, labels))
}

/// Whether two label sequences induce the same partition of layers.
pub fn same_partition<A: Ord + Copy, B: Ord + Copy>(a: &[A], b: &[B]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = BTreeMap::new();
    let mut back = BTreeMap::new();
    a.iter().zip(b).all(|(&x, &y)| *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;

    fn spec(dims: Vec<usize>) -> ModelSpec {
        ModelSpec::new(dims, Activation::Tanh, LossKind::MeanSquaredError).unwrap()
    }

    #[test]
    fn identity_without_noise_copies_inputs() {
        let data = DataSpec {
            task: Task::Identity,
            noise: 0.0,
            ..DataSpec::default()
        };
        let d = gen_data(&spec(vec![3, 5, 3]), &data, 1).unwrap();
        for b in [&d.train, &d.eval] {
            match &b.targets {
                Targets::Values(y) => assert_eq!(y, &b.inputs),
                Targets::Classes(_) => unreachable!(),
            }
        }
        assert!(gen_data(&spec(vec![3, 4]), &data, 1).is_err());
    }

    #[test]
    fn same_seed_same_bits() {
        let s = spec(vec![4, 4, 4]);
        let a = gen_data(&s, &DataSpec::default(), 5).unwrap();
        let b = gen_data(&s, &DataSpec::default(), 5).unwrap();
        assert_eq!(a, b);
        let c = gen_data(&s, &DataSpec::default(), 6).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn planted_teacher_alternates_prototypes() {
        let s = spec(vec![6; 7]);
        let data = DataSpec {
            task: Task::PlantedClusters {
                clusters: 2,
                rank: 2,
                scale: 1.0,
                tail: 0.0,
                spread: 0.0,
            },
            ..DataSpec::default()
        };
        let d = gen_data(&s, &data, 2).unwrap();
        let t = d.teacher.unwrap();
        assert_eq!(d.planted_labels.unwrap(), vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(t.weights[0], t.weights[2]);
        assert_ne!(t.weights[0], t.weights[1]);
        let s_bad = spec(vec![6, 1, 6]);
        assert!(gen_data(&s_bad, &data, 2).is_err());
    }

    #[test]
    fn classification_targets_are_classes() {
        let s = ModelSpec::new(vec![3, 4, 3], Activation::Tanh, LossKind::SoftmaxCrossEntropy).unwrap();
        let data = DataSpec {
            task: Task::Teacher { gain: 2.0 },
            ..DataSpec::default()
        };
        let d = gen_data(&s, &data, 0).unwrap();
        d.train.check_against(&s).unwrap();
        assert!(matches!(d.eval.targets, Targets::Classes(ref c) if c.len() == 200));
    }

    #[test]
    fn partitions_compare_up_to_relabeling() {
        assert!(same_partition(&[0, 1, 0], &[5, 2, 5]));
        assert!(!same_partition(&[0, 1, 0], &[5, 5, 5]));
        assert!(!same_partition(&[0, 0, 0], &[1, 2, 1]));
        assert!(!same_partition(&[0], &[0, 1]));
    }
}
