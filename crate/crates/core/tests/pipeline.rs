use winstate::analysis::{extract_case_studies, zero_fractions};
use winstate::dataset::synthetic::{generate_synthetic, SyntheticConfig};
use winstate::dataset::{load_csv, write_csv, SplitFractions};
use winstate::evaluation::evaluate_model;
use winstate::stacking::Horizon;
use winstate::training::{train, DataSplits, Hyperparams};
use winstate::{Mlp32, Mlp64, PreparedSplits32};

fn hp() -> Hyperparams {
    Hyperparams {
        hidden_widths: vec![12, 6],
        l1_lambda: 1e-3,
        lr: 0.05,
        base_iterations: 400,
        decay_iterations: 100,
        checkpoint_interval: 100,
        seed: 17,
        ..Hyperparams::reference()
    }
}

#[test]
fn csv_to_evaluation_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig {
        n_days: 6,
        seed: 31,
        ..SyntheticConfig::co2_rule_only()
    };
    let out = generate_synthetic(&cfg).unwrap();
    let csv = dir.path().join("data.csv");
    write_csv(&out.dataset, &csv).unwrap();
    let loaded = load_csv(&csv, out.dataset.schema()).unwrap();
    assert_eq!(loaded.records(), out.dataset.records());

    let splits = DataSplits::from_dataset(&loaded, SplitFractions::default()).unwrap();
    let hp = hp();
    let prepared = PreparedSplits32::from_splits(&splits, hp.horizon().unwrap()).unwrap();
    let outcome = train(&prepared.train, &prepared.val, &hp).unwrap();

    let path = dir.path().join("model.bin");
    outcome.model.save(&path).unwrap();
    let reloaded = Mlp32::load(&path).unwrap();
    assert_eq!(reloaded, outcome.model);

    let test = prepared.test().unwrap();
    let a = evaluate_model(&outcome.model, test).unwrap();
    let b = evaluate_model(&reloaded, test).unwrap();
    // compared as JSON since undefined metrics are NaN
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.n_samples, test.len());
    assert_eq!(a.confusion.total() as usize, test.len());
}

#[test]
fn f64_and_f32_models_agree_on_predictions() {
    let cfg = SyntheticConfig {
        n_days: 4,
        seed: 3,
        ..SyntheticConfig::co2_rule_only()
    };
    let data = generate_synthetic(&cfg).unwrap().dataset;
    let splits = DataSplits::from_dataset(&data, SplitFractions::default()).unwrap();
    let prepared = PreparedSplits32::from_splits(&splits, Horizon::new(60, 10).unwrap()).unwrap();
    let model = train(&prepared.train, &prepared.val, &hp()).unwrap().model;

    let wide: Mlp64 = model.cast();
    let x64 = prepared.val.x().mapv(f64::from);
    let p32 = model.predict_proba(prepared.val.x()).unwrap();
    let p64 = wide.predict_proba(x64.view()).unwrap();
    let worst = p32
        .iter()
        .zip(&p64)
        .map(|(a, b)| (f64::from(*a) - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "f32/f64 probability gap {worst}");
}

#[test]
fn trained_model_feeds_analysis() {
    let cfg = SyntheticConfig {
        n_days: 6,
        seed: 8,
        ..SyntheticConfig::co2_rule_only()
    };
    let out = generate_synthetic(&cfg).unwrap();
    let splits = DataSplits::from_dataset(&out.dataset, SplitFractions::default()).unwrap();
    let hp = hp();
    let prepared = PreparedSplits32::from_splits(&splits, hp.horizon().unwrap()).unwrap();
    let model = train(&prepared.train, &prepared.val, &hp).unwrap().model;

    let sparsity = zero_fractions(&model);
    assert_eq!(sparsity.layers.len(), model.layers().len());

    let studies = extract_case_studies(
        &model,
        &prepared.normalizer,
        &splits.test,
        prepared.horizon,
        5,
        Some(&out.triggers),
    )
    .unwrap();
    assert!(studies.episodes.len() <= 5);
    for e in &studies.episodes {
        assert_eq!(e.trace.len(), hp.seq_minutes + hp.lag_minutes + 1);
        assert_eq!(e.target - e.origin, hp.lag_minutes as i64);
    }
}
