use geoshare::aligner::{geo_share, AlignMode};
use geoshare::curvature::EigConfig;
use geoshare::harness::{json_hash, prepare, run_experiment, ExperimentConfig, Init, Task};
use geoshare::net::{self, checkpoint};
use geoshare::sharing::{color_classes, CoefficientForm};

fn small_config(seed: u64) -> ExperimentConfig {
    let mut config = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    config.training.steps = 20;
    config
}

#[test]
fn strict_mode_weights_come_from_stored_factors() {
    let mut config = small_config(3);
    config.sharing.align.mode = AlignMode::StrictSharing;
    config.sharing.align.coefficient_form = CoefficientForm::Diagonal;
    let prep = prepare(&config).unwrap();
    let out = geo_share(
        &prep.spec,
        &prep.params,
        &prep.bases,
        &prep.data.train,
        &prep.data.eval,
        &config.align_config(),
    )
    .unwrap();
    let model = out.shared_model.expect("strict mode stores a shared model");
    assert_eq!(model.coloring(), out.coloring);
    assert_eq!(model.dense_weights().unwrap(), out.aligned.weights);
    let ratio = out.report.compression_ratio.unwrap();
    assert!(ratio > 0.0 && ratio < 1.0, "{ratio}");
}

#[test]
fn paper_literal_stays_within_trust_region_of_original() {
    let mut config = small_config(4);
    config.sharing.align.mode = AlignMode::PaperLiteral;
    let prep = prepare(&config).unwrap();
    let align = config.align_config();
    let out = geo_share(&prep.spec, &prep.params, &prep.bases, &prep.data.train, &prep.data.eval, &align).unwrap();
    assert!(out.shared_model.is_none());
    for (l, (w, w0)) in out.aligned.weights.iter().zip(&prep.params.weights).enumerate() {
        let moved = w.sub(w0).unwrap().frobenius_norm();
        assert!(moved <= align.beta * w0.frobenius_norm() + 1e-12, "layer {l} moved {moved}");
    }
    let classes = color_classes(&out.coloring, prep.spec.num_layers()).unwrap();
    let covered: usize = classes.classes.values().map(Vec::len).sum();
    assert_eq!(covered, prep.spec.num_layers());
}

#[test]
fn dense_and_lanczos_agree_on_the_coloring() {
    let config = small_config(5);
    let prep = prepare(&config).unwrap();
    let mut dense = config.align_config();
    dense.eig = EigConfig::dense();
    let mut krylov = config.align_config();
    krylov.eig = EigConfig::lanczos();
    let run = |a| geo_share(&prep.spec, &prep.params, &prep.bases, &prep.data.train, &prep.data.eval, a).unwrap();
    let (a, b) = (run(&dense), run(&krylov));
    assert_eq!(a.coloring, b.coloring);
    for (x, y) in a.report.layers.iter().zip(&b.report.layers) {
        let (ex, ey) = (x.energies[&x.chosen_basis], y.energies[&y.chosen_basis]);
        assert!((ex - ey).abs() <= 1e-6 * ex.abs().max(1e-12));
    }
}

#[test]
fn checkpoint_round_trip_preserves_loss() {
    let config = small_config(6);
    let prep = prepare(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(dir.path(), &prep.spec, &prep.params, config.seed).unwrap();
    let (manifest, params) = checkpoint::load(dir.path()).unwrap();
    assert_eq!(manifest.spec, prep.spec);
    assert_eq!(params, prep.params);
    let before = net::loss(&prep.spec, &prep.params, &prep.data.eval).unwrap();
    let after = net::loss(&manifest.spec, &params, &prep.data.eval).unwrap();
    assert_eq!(before.to_bits(), after.to_bits());
}

#[test]
fn reports_are_reproducible_and_seed_sensitive() {
    let config = small_config(7);
    let (a, _) = run_experiment(&config, false).unwrap();
    let (b, _) = run_experiment(&config, false).unwrap();
    assert_eq!(json_hash(&a).unwrap(), json_hash(&b).unwrap());
    let (c, _) = run_experiment(&small_config(8), false).unwrap();
    assert_ne!(a.train_hash, c.train_hash);
}

#[test]
fn teacher_task_with_random_init_runs_end_to_end() {
    let mut config = small_config(9);
    config.data.task = Task::Teacher { gain: 1.0 };
    config.training.init = Init::Random { gain: 1.0 };
    config.training.weight_decay = 0.0;
    let (report, _) = run_experiment(&config, false).unwrap();
    assert!(report.planted_recovered.is_none());
    let names: Vec<&str> = report.methods.iter().map(|m| m.method.as_str()).collect();
    assert_eq!(names[0], "geo-sharing");
    assert!(names.contains(&"no-sharing"));
    for m in &report.methods {
        assert!(m.delta_loss.is_finite(), "{}", m.method);
    }
}
