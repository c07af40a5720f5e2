//! Acceptance suite. Each criterion prints one PASS/FAIL line to stderr;
//! the test fails at the end if any criterion failed.

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use winstate::analysis::{first_layer_map, Block};
use winstate::dataset::synthetic::{generate_synthetic, SyntheticConfig};
use winstate::dataset::{Dataset, SplitFractions};
use winstate::evaluation::{
    action_correct_fraction, classification_metrics, confusion, evaluate_model, lag_sweep,
    state_durations, ConfusionCounts, LagSweepOptions,
};
use winstate::network::{soft_threshold, Mlp};
use winstate::stacking::{input_dim, stack_all, Horizon};
use winstate::training::{
    grid_search, repeat_train, train, train_observed, write_trials_csv, DataSplits, GridOptions,
    GridSpec, Hyperparams, ModelChoice, PreparedSplits,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn co2_data(days: u32, seed: u64) -> Dataset {
    let mut cfg = SyntheticConfig::co2_rule_only();
    cfg.n_days = days;
    cfg.seed = seed;
    generate_synthetic(&cfg).unwrap().dataset
}

fn default_data(days: u32, seed: u64) -> Dataset {
    let cfg = SyntheticConfig {
        n_days: days,
        seed,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&cfg).unwrap().dataset
}

/// Small network and short schedule used by the learning criteria.
fn small_hp(hidden: Vec<usize>, l1: f64, lr: f64, base: u64, seed: u64) -> Hyperparams {
    Hyperparams {
        hidden_widths: hidden,
        l1_lambda: l1,
        lr,
        base_iterations: base,
        decay_iterations: 500,
        checkpoint_interval: 500,
        seed,
        ..Hyperparams::reference()
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, s)
}

// 1. analytic gradient against central differences
fn gradient_check() -> Outcome {
    let started = Instant::now();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut mlp = Mlp::<f64>::init(&[21, 16, 8, 2], seed).unwrap();
        // non-zero biases so kinks are not aligned with the origin
        for layer in mlp.layers_mut() {
            layer.bias.mapv_inplace(|_| 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        }
        let x = Array2::<f64>::from_shape_fn((8, 21), |_| StandardNormal.sample(&mut rng));
        let mut y: Vec<bool> = (0..8).map(|_| rng.random_bool(0.5)).collect();
        y[0] = true;
        y[1] = false;
        let cache = mlp.forward_batch(x.view()).unwrap();
        let grads = mlp.backward(&cache, &y, 1.0).unwrap();
        let loss = |m: &Mlp<f64>| m.data_loss(x.view(), &y, 1.0).unwrap();

        for k in 0..mlp.layers().len() {
            let (rows, cols) = mlp.layers()[k].weights.dim();
            for r in 0..rows {
                for c in 0..cols {
                    let w0 = mlp.layers()[k].weights[[r, c]];
                    mlp.layers_mut()[k].weights[[r, c]] = w0 + h;
                    let up = loss(&mlp);
                    mlp.layers_mut()[k].weights[[r, c]] = w0 - h;
                    let down = loss(&mlp);
                    mlp.layers_mut()[k].weights[[r, c]] = w0;
                    let numeric = (up - down) / (2.0 * h);
                    worst = worst.max(rel_err(grads.weights[k][[r, c]], numeric));
                }
            }
            for j in 0..cols {
                let b0 = mlp.layers()[k].bias[j];
                mlp.layers_mut()[k].bias[j] = b0 + h;
                let up = loss(&mlp);
                mlp.layers_mut()[k].bias[j] = b0 - h;
                let down = loss(&mlp);
                mlp.layers_mut()[k].bias[j] = b0;
                let numeric = (up - down) / (2.0 * h);
                worst = worst.max(rel_err(grads.biases[k][j], numeric));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 30.0,
        format!("max relative error {worst:.2e} (< 1e-4) over 20 seeds in {secs:.2}s (< 30s)"),
    )
}

/// |a − n| / max(|a|, |n|, 1e-7)
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

// 2. input width identities, by formula and by actual stacking
fn dimensionality() -> Outcome {
    let data = co2_data(1, 2);
    let n_static = data.schema().n_static();
    let d60 = stack_all::<f32>(&data, Horizon::new(60, 10).unwrap()).dim();
    let d240 = stack_all::<f32>(&data, Horizon::new(240, 10).unwrap()).dim();
    let pass = input_dim(21, 60) == 201
        && input_dim(21, 240) == 741
        && n_static == 21
        && d60 == 201
        && d240 == 741;
    outcome(
        pass,
        format!(
            "input_dim(21,60)={} input_dim(21,240)={} stacked widths {d60}/{d240} with {n_static} static features",
            input_dim(21, 60),
            input_dim(21, 240)
        ),
    )
}

// 3. soft-threshold cases and sparsity growing with λ
fn prox_and_sparsity() -> Outcome {
    let cases64: [(f64, f64, f64); 8] = [
        (3.0, 1.0, 2.0),
        (-3.0, 1.0, -2.0),
        (0.5, 1.0, 0.0),
        (-0.5, 1.0, 0.0),
        (1.0, 1.0, 0.0),
        (-1.0, 1.0, 0.0),
        (0.25, 0.0, 0.25),
        (1.5, 0.5, 1.0),
    ];
    let exact64 = cases64
        .iter()
        .all(|&(v, t, want)| soft_threshold(v, t).to_bits() == want.to_bits());
    let exact32 = cases64.iter().all(|&(v, t, want)| {
        soft_threshold(v as f32, t as f32).to_bits() == (want as f32).to_bits()
    });

    let data = co2_data(14, 3);
    let splits = DataSplits::from_dataset(&data, SplitFractions::default()).unwrap();
    let prepared = PreparedSplits::<f32>::from_splits(&splits, Horizon::new(60, 10).unwrap()).unwrap();
    let mut overall = Vec::new();
    let mut first = Vec::new();
    for l1 in [1e-5, 1e-3, 1e-1] {
        let hp = small_hp(vec![32, 16], l1, 0.05, 2000, 11);
        let model = train(&prepared.train, &prepared.val, &hp).unwrap().model;
        let zeros: usize = model
            .layers()
            .iter()
            .map(|l| l.weights.iter().filter(|w| **w == 0.0).count())
            .sum();
        overall.push(zeros as f64 / model.weight_count() as f64);
        first.push(model.layer_zero_fractions()[0]);
    }
    let monotone = overall.windows(2).all(|w| w[0] <= w[1]);
    let pass = exact64 && exact32 && monotone && first[2] > 0.5;
    outcome(
        pass,
        format!(
            "unit cases f64 {exact64} f32 {exact32}; zero fraction over λ 1e-5/1e-3/1e-1 = {:.3}/{:.3}/{:.3}; first layer at 1e-1 = {:.3} (> 0.5)",
            overall[0], overall[1], overall[2], first[2]
        ),
    )
}

// 4. byte-identical models and reports, also under grid parallelism
fn determinism() -> Outcome {
    let data = co2_data(7, 4);
    let splits = DataSplits::from_dataset(&data, SplitFractions::default()).unwrap();
    let prepared = PreparedSplits::<f32>::from_splits(&splits, Horizon::new(60, 10).unwrap()).unwrap();
    let hp = small_hp(vec![16, 8], 1e-3, 0.05, 600, 21);
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    let mut reports = Vec::new();
    for run in 0..2 {
        let o = train(&prepared.train, &prepared.val, &hp).unwrap();
        let path = dir.path().join(format!("model_{run}.bin"));
        o.model.save(&path).unwrap();
        files.push((std::fs::read(&path).unwrap(), o.best_model.to_bytes()));
        reports.push(serde_json::to_string(&o.report.without_timing()).unwrap());
    }
    let single = files[0] == files[1] && reports[0] == reports[1];

    let spec = GridSpec {
        hidden_widths: vec![vec![8], vec![16, 8]],
        l1_lambda: vec![1e-4, 1e-2],
        lr: vec![0.02, 0.05],
        base_iterations: vec![300],
        seq_minutes: vec![60],
        lag_minutes: vec![10],
        batch_size: 128,
        seed: 5,
        decay_iterations: 100,
        checkpoint_interval: 100,
        allow_out_of_range: true,
    };
    let trials = spec.expand().unwrap();
    let mut grids = Vec::new();
    for parallelism in [1, 8] {
        let model_dir = dir.path().join(format!("grid_{parallelism}"));
        let options = GridOptions {
            parallelism,
            model_dir: Some(model_dir.clone()),
        };
        let mut results = grid_search::<f32>(&trials, &splits.train, &splits.val, &options).unwrap();
        let csv = dir.path().join(format!("grid_{parallelism}.csv"));
        write_trials_csv(&csv, &results).unwrap();
        let mut models = Vec::new();
        for r in &mut results {
            models.push(std::fs::read(r.model_file.take().unwrap()).unwrap());
        }
        grids.push((serde_json::to_string(&results).unwrap(), std::fs::read(csv).unwrap(), models));
    }
    let grid_ok = grids[0] == grids[1];
    outcome(
        single && grid_ok,
        format!(
            "repeated training identical: {single}; grid of {} trials with parallelism 1 vs 8 identical: {grid_ok}",
            trials.len()
        ),
    )
}

/// Replays the planted CO₂ rule: open when the reading reaches the
/// threshold, close after the fixed duration.
fn threshold_rule_oracle(data: &Dataset, threshold: f64, duration: i64) -> Vec<bool> {
    let mut open = false;
    let mut open_until = i64::MIN;
    data.records()
        .iter()
        .map(|r| {
            if open && r.timestamp >= open_until {
                open = false;
            }
            if !open && r.co2 >= threshold {
                open = true;
                open_until = r.timestamp + duration;
            }
            open
        })
        .collect()
}

// 5. planted CO₂ rule is learned and the CO₂ block dominates
fn planted_rule() -> Outcome {
    let data = co2_data(28, 5);
    let splits = DataSplits::from_dataset(&data, SplitFractions::default()).unwrap();

    // Sensor noise has its own random stream and does not feed back into the
    // simulation, so a noise-free twin has the same window states.
    let mut cfg = SyntheticConfig::co2_rule_only();
    cfg.n_days = 28;
    cfg.seed = 5;
    cfg.noise.co2 = 0.0;
    let twin = generate_synthetic(&cfg).unwrap().dataset;
    let twin = DataSplits::from_dataset(&twin, SplitFractions::default()).unwrap().test;
    let same_states = twin.window_states() == splits.test.window_states();
    let duration = cfg.opening_duration.log_mean.exp().round() as i64;
    let oracle = threshold_rule_oracle(&twin, cfg.rules.co2_threshold_ppm, duration);
    let oracle_f1 = classification_metrics(&confusion(&oracle, &twin.window_states()).unwrap())
        .unwrap()
        .f1;

    let hp = small_hp(vec![32, 16], 3e-3, 0.05, 3000, 1);
    let prepared = PreparedSplits::<f32>::from_splits(&splits, hp.horizon().unwrap()).unwrap();
    let model = train(&prepared.train, &prepared.val, &hp).unwrap().model;
    let f1 = evaluate_model(&model, prepared.test().unwrap()).unwrap().metrics.f1;
    let map = first_layer_map(&model, data.schema(), hp.seq_minutes).unwrap();
    let co2 = map.block(Block::Co2).mean_abs;
    let rh = map.block(Block::Rh).mean_abs;
    let t = map.block(Block::TIndoor).mean_abs;
    let pass = same_states && oracle_f1 >= 0.95 && f1 >= 0.8 && co2 > rh && co2 > t;
    outcome(
        pass,
        format!(
            "oracle F1 {oracle_f1:.3} (>= 0.95); model test F1 {f1:.3} (>= 0.8); mean |w| co2 {co2:.2e} rh {rh:.2e} t_indoor {t:.2e}"
        ),
    )
}

// 6. longer input sequences do not help on short-memory data
fn duration_study() -> Outcome {
    let data = co2_data(28, 6);
    let splits = DataSplits::from_dataset(&data, SplitFractions::default()).unwrap();
    let mut rows = Vec::new();
    for i in [30, 60, 90, 120, 180, 240] {
        let mut hp = small_hp(vec![16, 8], 1e-3, 0.05, 3000, 100);
        hp.seq_minutes = i;
        let prepared = PreparedSplits::<f32>::from_splits(&splits, hp.horizon().unwrap()).unwrap();
        let report = repeat_train(&hp, 5, &prepared, 1, ModelChoice::Best).unwrap();
        let f1: Vec<f64> = report.evaluations().map(|e| e.metrics.f1).collect();
        assert_eq!(f1.len(), 5, "failed runs at i={i}");
        let (m, s) = mean_std(&f1);
        rows.push((i, m, s));
    }
    let &(best_i, best_mean, best_std) = rows
        .iter()
        .filter(|r| r.0 <= 60)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let bound = best_mean + best_std;
    let pass = rows.iter().filter(|r| r.0 > 60).all(|r| r.1 <= bound);
    let table: Vec<String> = rows
        .iter()
        .map(|(i, m, s)| format!("i={i}: {m:.3}±{s:.3}"))
        .collect();
    outcome(
        pass,
        format!("{}; bound from i={best_i}: {bound:.3}", table.join(", ")),
    )
}

// 7. F1 degrades with the prediction lag
fn lag_degradation() -> Outcome {
    let data = default_data(28, 7);
    let splits = DataSplits::from_dataset(&data, SplitFractions::default()).unwrap();
    let hp = small_hp(vec![16, 8], 1e-4, 0.02, 3000, 200);
    let options = LagSweepOptions {
        repeats: 5,
        extra_iterations: 1000,
        extra_from_lag: 30,
        choice: ModelChoice::Best,
    };
    let lags = [10, 20, 30, 40, 50, 60];
    let result = lag_sweep::<f32>(&hp, &lags, &splits, &options, 1).unwrap();
    let points: Vec<(f64, f64)> = result
        .cells
        .iter()
        .map(|c| (c.lag_minutes as f64, c.summary.f1.mean))
        .collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let table: Vec<String> = points.iter().map(|(l, f)| format!("l={l}: {f:.3}")).collect();
    outcome(
        slope < 0.0 && result.cells.iter().all(|c| c.summary.f1.n == 5),
        format!("{}; slope {slope:.2e} per minute (< 0)", table.join(", ")),
    )
}

fn sticky(n: usize, switch: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut s = rng.random_bool(0.5);
    (0..n)
        .map(|_| {
            if rng.random_bool(switch) {
                s = !s;
            }
            s
        })
        .collect()
}

/// Runs as (state, minutes, truncated), rebuilt from scratch per gap-free stretch.
fn runs_oracle(ts: &[i64], states: &[bool]) -> Vec<(bool, u64, bool)> {
    let mut out = Vec::new();
    let mut k = 0;
    while k < ts.len() {
        let mut end = k + 1;
        while end < ts.len() && ts[end] == ts[end - 1] + 1 {
            end += 1;
        }
        let mut start = k;
        while start < end {
            let mut stop = start + 1;
            while stop < end && states[stop] == states[start] {
                stop += 1;
            }
            out.push((states[start], (stop - start) as u64, start == k || stop == end));
            start = stop;
        }
        k = end;
    }
    out
}

// 8. metric functions against brute force
fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();
    for case in 0..1000 {
        let n = rng.random_range(12..400);
        let switch = rng.random_range(0.02..0.5);
        let actual = sticky(n, switch, &mut rng);
        let predicted = sticky(n, switch, &mut rng);

        let c = confusion(&predicted, &actual).unwrap();
        let mut b = [0u64; 4];
        for (p, a) in predicted.iter().zip(&actual) {
            b[(*p as usize) * 2 + (*a as usize)] += 1;
        }
        let brute = ConfusionCounts {
            tp: b[3],
            fp: b[2],
            tn: b[0],
            fn_: b[1],
        };
        if c != brute {
            failures.push(format!("confusion case {case}"));
        }

        let m = classification_metrics(&c).unwrap();
        let precision = c.tp as f64 / (c.tp + c.fp) as f64;
        let recall = c.tp as f64 / (c.tp + c.fn_) as f64;
        let want = if precision.is_finite() && recall.is_finite() && precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else if c.tp + c.fp + c.fn_ == 0 {
            f64::NAN
        } else {
            0.0
        };
        let same = (m.f1.is_nan() && want.is_nan()) || (m.f1 - want).abs() < 1e-12;
        if !same {
            failures.push(format!("f1 case {case}: {} vs {want}", m.f1));
        }

        // acc = p·TPR + (1−p)·TNR over the rationals: with N = pos + neg,
        // (tp+tn)/N == (pos/N)(tp/pos) + (neg/N)(tn/neg), cross-multiplied
        let (tp, fp, tn, fn_) = (c.tp as u128, c.fp as u128, c.tn as u128, c.fn_ as u128);
        let (pos, neg) = (tp + fn_, tn + fp);
        let total = pos + neg;
        if pos > 0 && neg > 0 {
            let lhs = (tp + tn) * (total * pos) * (total * neg);
            let rhs = total * (pos * tp * (total * neg) + neg * tn * (total * pos));
            if lhs != rhs || total != c.total() as u128 {
                failures.push(format!("identity case {case}"));
            }
        }
        if pos > 0 && neg > 0 {
            let total = (pos + neg) as f64;
            let lhs = m.acc;
            let rhs = (pos as f64 / total) * m.tpr + (neg as f64 / total) * m.tnr;
            if (lhs - rhs).abs() > 1e-12 {
                failures.push(format!("identity float case {case}"));
            }
        }

        // gaps at random positions
        let mut ts = Vec::with_capacity(n);
        let mut t = rng.random_range(0..1000i64);
        for _ in 0..n {
            t += if rng.random_bool(0.03) { rng.random_range(2..30) } else { 1 };
            ts.push(t);
        }
        let d = state_durations(&ts, &actual).unwrap();
        let mut ours: Vec<(i64, bool, u64, bool)> = d
            .open_runs
            .iter()
            .map(|r| (r.start, true, r.minutes, r.truncated))
            .chain(d.closed_runs.iter().map(|r| (r.start, false, r.minutes, r.truncated)))
            .collect();
        ours.sort();
        let oracle: Vec<(bool, u64, bool)> = runs_oracle(&ts, &actual);
        let ours: Vec<(bool, u64, bool)> = ours.into_iter().map(|r| (r.1, r.2, r.3)).collect();
        if ours != oracle {
            failures.push(format!("durations case {case}"));
        }

        let lag = rng.random_range(1..=10.min(n - 1));
        let got = action_correct_fraction(&predicted, &actual, lag).unwrap();
        let opens = |s: &[bool], k: usize| k > 0 && s[k] && !s[k - 1];
        let (mut total, mut matched) = (0u64, 0u64);
        for t in 0..n - lag {
            if (t + 1..=t + lag).any(|s| opens(&actual, s)) {
                total += 1;
                if (t + 1..=t + lag).any(|s| opens(&predicted, s)) {
                    matched += 1;
                }
            }
        }
        if got.total != total || got.matched != matched {
            failures.push(format!("action case {case}"));
        }
    }

    // prevalence 0.07, TPR 0.37, TNR 0.92 on 10 000 samples
    let instance = ConfusionCounts {
        tp: 259,
        fn_: 441,
        tn: 8556,
        fp: 744,
    };
    let m = classification_metrics(&instance).unwrap();
    let instance_ok = (m.acc - 0.88).abs() <= 0.005
        && (m.tpr - 0.37).abs() < 1e-12
        && (m.tnr - 0.92).abs() < 1e-12;
    if !instance_ok {
        failures.push(format!("reference instance acc {}", m.acc));
    }
    outcome(
        failures.is_empty(),
        format!(
            "1000 random series, {} mismatches{}; instance acc {:.4} (|acc − 0.88| <= 0.005)",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default(),
            m.acc
        ),
    )
}

// 9. three-phase learning-rate schedule
fn schedule() -> Outcome {
    let data = co2_data(3, 9);
    let splits = DataSplits::from_dataset(&data, SplitFractions::default()).unwrap();
    let prepared = PreparedSplits::<f64>::from_splits(&splits, Horizon::new(30, 10).unwrap()).unwrap();
    let hp = Hyperparams {
        hidden_widths: vec![2],
        base_iterations: 50_000,
        decay_iterations: 10_000,
        batch_size: 4,
        seq_minutes: 30,
        checkpoint_interval: 10_000,
        trace_stride: 1_000,
        ..Hyperparams::reference()
    };
    let mut lrs = Vec::new();
    let mut sequential = true;
    let outcome_ = train_observed(&prepared.train, &prepared.val, &hp, |e| {
        sequential &= e.iteration == lrs.len() as u64;
        lrs.push(e.lr);
    })
    .unwrap();
    let base = hp.lr;
    let phase_of = |k: usize| match k {
        0..50_000 => 1.0,
        50_000..60_000 => 0.1,
        _ => 0.01,
    };
    let conforming = lrs
        .iter()
        .enumerate()
        .all(|(k, lr)| (lr / base - phase_of(k)).abs() < 1e-12);
    let report = &outcome_.report;
    let boundaries: Vec<(u64, u64)> = report.phases.iter().map(|p| (p.start, p.end)).collect();
    let pass = sequential
        && lrs.len() == 70_000
        && report.total_iterations == 70_000
        && conforming
        && boundaries == [(0, 50_000), (50_000, 60_000), (60_000, 70_000)];
    outcome(
        pass,
        format!(
            "{} iterations logged; lr ratios {:.2} : {:.2} : {:.3} at boundaries 50000/60000",
            lrs.len(),
            lrs[0] / base,
            lrs[50_000] / base,
            lrs[60_000] / base
        ),
    )
}

// 10. full-size network, 10k iterations
fn performance() -> Outcome {
    let data = co2_data(10, 10);
    let splits = DataSplits::from_dataset(&data, SplitFractions::default()).unwrap();
    let prepared = PreparedSplits::<f32>::from_splits(&splits, Horizon::new(60, 10).unwrap()).unwrap();
    let hp = Hyperparams {
        base_iterations: 10_000,
        decay_iterations: 0,
        checkpoint_interval: 10_000,
        ..Hyperparams::reference()
    };
    let started = Instant::now();
    let o = train(&prepared.train, &prepared.val, &hp).unwrap();
    let secs = started.elapsed().as_secs_f64();
    outcome(
        secs <= 60.0 && o.report.total_iterations == 10_000,
        format!(
            "widths {:?}, batch {}, {} iterations in {secs:.1}s (<= 60s)",
            o.model.widths(),
            hp.batch_size,
            o.report.total_iterations
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient check", gradient_check),
        ("dimensionality", dimensionality),
        ("prox and sparsity", prox_and_sparsity),
        ("determinism", determinism),
        ("planted rule", planted_rule),
        ("duration study", duration_study),
        ("lag degradation", lag_degradation),
        ("metric oracles", metric_oracles),
        ("schedule", schedule),
        ("performance", performance),
    ];
    let mut failed = Vec::new();
    writeln!(std::io::stderr()).unwrap();
    for (k, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        // written to the raw handle so the report survives output capture
        writeln!(
            std::io::stderr(),
            "{tag} {:>2} {name}: {} [{:.1}s]",
            k + 1,
            o.detail,
            started.elapsed().as_secs_f64()
        )
        .unwrap();
        if !o.pass {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
