use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use sha2::{Digest, Sha256};
use winstate::dataset::{load_csv, FeatureSchema};
use winstate::evaluation::{evaluate_model, write_metrics_csv};
use winstate::network::Mlp;
use winstate::stacking::{stack_all, Normalizer};
use winstate::training::DataSplits;
use winstate::dataset::SplitFractions;
use winstate_cli::commands::Preprocessing;

const TINY: &str = r#"
seed = 11

[data.synthetic]
n_days = 6

[train]
hidden_widths = [8, 8]
l1_lambda = 0.001
lr = 0.05
base_iterations = 200
decay_iterations = 50
checkpoint_interval = 100
seq_minutes = 30
lag_minutes = 10

[grid]
hidden_widths = [[8, 8], [6, 6, 6]]
l1_lambda = [0.001, 0.01]
lr = [0.05]
base_iterations = [100]
decay_iterations = 20
checkpoint_interval = 50
seq_minutes = [30, 60]
lag_minutes = [10]
allow_out_of_range = true

[lag_sweep]
repeats = 1
extra_iterations = 50

[analyze]
episodes = 3
"#;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_winstate")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn winstate(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

fn report_without_clock(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("wall_clock_secs");
    v
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_ok(&winstate(&["gen-data"], &cfg, &a));
    assert_ok(&winstate(&["gen-data"], &cfg, &b));
    for f in ["data.csv", "triggers.csv", "summary.json"] {
        assert!(a.join(f).is_file(), "{f}");
        assert_eq!(sha(&a.join(f)), sha(&b.join(f)), "{f}");
    }
    assert_ok(&winstate(&["gen-data", "--seed", "12"], &cfg, &c));
    assert_ne!(sha(&a.join("data.csv")), sha(&c.join("data.csv")));
}

#[test]
fn unwritable_output_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = winstate(&["gen-data"], &cfg, &blocker.join("sub"));
    assert!(!o.status.success());
}

#[test]
fn invalid_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\nbogus = 2\n");
    let o = winstate(&["gen-data"], &cfg, &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    let o = winstate(&["train"], &write_config(dir.path(), "seed = 1\n"), &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn missing_data_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("seed = 11\n", "seed = 11\n[data]\ncsv = \"/nonexistent/office.csv\"\n");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = winstate(&["train"], &cfg, &out);
    assert!(!o.status.success());
    assert!(!out.exists());
}

#[test]
fn smoke_config_trains_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let out = dir.path().join("smoke");
    let start = Instant::now();
    assert_ok(&winstate(&["train"], &cfg, &out));
    assert!(start.elapsed().as_secs_f64() < 10.0);
    let report = report_without_clock(&out.join("train_report.json"));
    assert_eq!(report["total_iterations"], 500);
    assert_eq!(report["hyperparams"]["hidden_widths"], serde_json::json!([8, 8]));
    for f in ["model.bin", "model_best.bin", "preprocessing.json", "loss_trace.csv", "checkpoints.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn training_is_reproducible_and_seed_override_applies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_ok(&winstate(&["train"], &cfg, &a));
    assert_ok(&winstate(&["train"], &cfg, &b));
    assert_eq!(sha(&a.join("model.bin")), sha(&b.join("model.bin")));
    assert_eq!(
        report_without_clock(&a.join("train_report.json")),
        report_without_clock(&b.join("train_report.json"))
    );
    assert_ok(&winstate(&["train", "--seed", "99"], &cfg, &c));
    assert_ne!(sha(&a.join("model.bin")), sha(&c.join("model.bin")));
    let model = Mlp::<f64>::load(c.join("model.bin")).unwrap();
    assert_eq!(model.seed(), 99);
}

#[test]
fn grid_output_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_ok(&winstate(&["grid", "--jobs", "1"], &cfg, &a));
    assert_ok(&winstate(&["grid", "--jobs", "4"], &cfg, &b));
    let strip_paths = |p: &Path| {
        let text = std::fs::read_to_string(p).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for t in v.as_array_mut().unwrap() {
            t.as_object_mut().unwrap().remove("model_file");
        }
        v
    };
    let ra = strip_paths(&a.join("grid_results.json"));
    assert_eq!(ra, strip_paths(&b.join("grid_results.json")));
    assert_eq!(ra.as_array().unwrap().len(), 8);
    assert_eq!(ra[0]["rank"], 1);
    for k in 0..8 {
        let f = format!("models/trial_{k:04}.bin");
        assert_eq!(sha(&a.join(&f)), sha(&b.join(&f)), "{f}");
    }
}

#[test]
fn eval_matches_library_call() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("o");
    assert_ok(&winstate(&["gen-data"], &cfg, &out));
    assert_ok(&winstate(&["train"], &cfg, &out));
    assert_ok(&winstate(&["eval"], &cfg, &out));

    // same steps through the library
    let schema = FeatureSchema::default_synthetic();
    let dataset = load_csv(out.join("data.csv"), &schema).unwrap();
    let test = DataSplits::from_dataset(&dataset, SplitFractions::default()).unwrap().test;
    let pre = Preprocessing::load(&out.join("preprocessing.json")).unwrap();
    let model = Mlp::<f32>::load(out.join("model.bin")).unwrap();
    let mut set = stack_all::<f32>(&test, pre.horizon().unwrap());
    pre.normalizer::<f32>().apply_set(&mut set).unwrap();
    let eval = evaluate_model(&model, &set).unwrap();
    let expected = dir.path().join("expected.csv");
    write_metrics_csv(&expected, &[eval]).unwrap();
    assert_eq!(
        std::fs::read_to_string(out.join("metrics.csv")).unwrap(),
        std::fs::read_to_string(expected).unwrap()
    );
    let durations = std::fs::read_to_string(out.join("durations.csv")).unwrap();
    assert!(durations.starts_with("metric,observed,predicted"));
}

#[test]
fn eval_with_repeats_writes_per_seed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("[analyze]", "[eval]\nrepeats = 3\n\n[analyze]");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("o");
    assert_ok(&winstate(&["eval", "--jobs", "2"], &cfg, &out));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let seeds: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(seeds, vec!["11", "12", "13"]);
    assert!(out.join("repeat_report.json").is_file());
}

#[test]
fn lag_sweep_covers_six_lags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("o");
    assert_ok(&winstate(&["lag-sweep"], &cfg, &out));
    let text = std::fs::read_to_string(out.join("lag_sweep.csv")).unwrap();
    let mut lags: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    lags.dedup();
    assert_eq!(lags, vec!["10", "20", "30", "40", "50", "60"]);
    assert_eq!(text.lines().count(), 1 + 6 * 4);
}

#[test]
fn analyze_all_zero_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("o");
    std::fs::create_dir_all(&out).unwrap();
    let d = 21 + 3 * 30;
    Mlp::<f64>::zeros(&[d, 8, 8, 2]).unwrap().save(out.join("model.bin")).unwrap();
    let pre = Preprocessing {
        seq_minutes: 30,
        lag_minutes: 10,
        schema: FeatureSchema::default_synthetic().static_names().to_vec(),
        normalizer: Normalizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
            constant: vec![false; d],
        },
    };
    std::fs::write(out.join("preprocessing.json"), serde_json::to_string(&pre).unwrap()).unwrap();
    assert_ok(&winstate(&["analyze"], &cfg, &out));
    let sparsity = std::fs::read_to_string(out.join("sparsity.csv")).unwrap();
    assert!(sparsity.lines().last().unwrap().ends_with(",1"), "{sparsity}");
    let map = std::fs::read_to_string(out.join("weight_map.csv")).unwrap();
    assert_eq!(map.lines().count(), 1 + 8 * d);
    assert!(out.join("episodes/episodes.csv").is_file());
}
