//! Mini-batch training with a three-phase step-decay schedule, grid search
//! over hyperparameters (sequence length and lag included), and repeated
//! training with per-seed statistics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split, Dataset, SplitFractions};
use crate::error::{Error, Result};
use crate::evaluation::{
    classification_metrics, confusion, evaluate_model, fmt_num, ClassificationMetrics, MetricSummary, ModelEvaluation,
};
use crate::network::{cross_entropy_sum, Mlp, OPEN};
use crate::scalar::Scalar;
use crate::stacking::{input_dim, stack_all, Horizon, Normalizer, SampleSet};

pub const SEQ_MINUTES_CHOICES: [usize; 6] = [30, 60, 90, 120, 180, 240];
pub const LAG_MINUTES_CHOICES: [usize; 6] = [10, 20, 30, 40, 50, 60];

fn default_batch_size() -> usize {
    128
}
fn default_decay_iterations() -> u64 {
    10_000
}
fn default_checkpoint_interval() -> u64 {
    1000
}
fn default_pos_weight() -> f64 {
    1.0
}
fn default_trace_stride() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub hidden_widths: Vec<usize>,
    pub l1_lambda: f64,
    pub lr: f64,
    pub base_iterations: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub seq_minutes: usize,
    pub lag_minutes: usize,
    #[serde(default)]
    pub seed: u64,
    /// Length of each of the two reduced-rate phases.
    #[serde(default = "default_decay_iterations")]
    pub decay_iterations: u64,
    #[serde(default = "default_checkpoint_interval")]
    pub checkpoint_interval: u64,
    /// Loss weight of open samples; 1 means unweighted.
    #[serde(default = "default_pos_weight")]
    pub pos_weight: f64,
    /// Every how many iterations the loss trace keeps a point.
    #[serde(default = "default_trace_stride")]
    pub trace_stride: u64,
}

impl Hyperparams {
    /// The optimal configuration reported for the office data set.
    pub fn reference() -> Self {
        Self {
            hidden_widths: vec![227, 314, 394, 34, 26],
            l1_lambda: 0.01,
            lr: 0.03,
            base_iterations: 50_000,
            batch_size: 128,
            seq_minutes: 60,
            lag_minutes: 10,
            seed: 0,
            decay_iterations: default_decay_iterations(),
            checkpoint_interval: default_checkpoint_interval(),
            pos_weight: 1.0,
            trace_stride: default_trace_stride(),
        }
    }

    pub fn horizon(&self) -> Result<Horizon> {
        Horizon::new(self.seq_minutes, self.lag_minutes)
    }

    /// Full layer widths for inputs with `n_static` static features.
    pub fn widths(&self, n_static: usize) -> Vec<usize> {
        let mut w = vec![input_dim(n_static, self.seq_minutes)];
        w.extend(&self.hidden_widths);
        w.push(2);
        w
    }

    pub fn total_iterations(&self) -> u64 {
        self.base_iterations + 2 * self.decay_iterations
    }

    pub fn phases(&self) -> Vec<Phase> {
        let b = self.base_iterations;
        let d = self.decay_iterations;
        vec![
            Phase { start: 0, end: b, lr: self.lr },
            Phase { start: b, end: b + d, lr: self.lr / 10.0 },
            Phase { start: b + d, end: b + 2 * d, lr: self.lr / 100.0 },
        ]
    }

    /// Learning rate of the zero-based iteration `k`.
    pub fn lr_at(&self, k: u64) -> f64 {
        if k < self.base_iterations {
            self.lr
        } else if k < self.base_iterations + self.decay_iterations {
            self.lr / 10.0
        } else {
            self.lr / 100.0
        }
    }

    /// Hard constraints; violating them makes training impossible.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return bad(format!("hidden widths must be non-empty and >= 1: {:?}", self.hidden_widths));
        }
        if !(self.l1_lambda.is_finite() && self.l1_lambda >= 0.0) {
            return bad(format!("l1_lambda must be finite and >= 0, got {}", self.l1_lambda));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be finite and > 0, got {}", self.lr));
        }
        if !(self.pos_weight.is_finite() && self.pos_weight > 0.0) {
            return bad(format!("pos_weight must be > 0, got {}", self.pos_weight));
        }
        if self.batch_size == 0 || self.checkpoint_interval == 0 || self.trace_stride == 0 {
            return bad("batch_size, checkpoint_interval and trace_stride must be >= 1".into());
        }
        if self.total_iterations() == 0 {
            return bad("no training iterations".into());
        }
        self.horizon().map(|_| ())
    }

    /// Departures from the search ranges used for the office data set.
    pub fn range_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let n = self.hidden_widths.len();
        if !(2..=9).contains(&n) {
            v.push(format!("{n} hidden layers outside 2..=9"));
        }
        if let Some(w) = self.hidden_widths.iter().find(|w| !(1..=400).contains(*w)) {
            v.push(format!("layer width {w} outside 1..=400"));
        }
        if !(1e-5..=1e-1).contains(&self.l1_lambda) {
            v.push(format!("l1_lambda {} outside [1e-5, 1e-1]", self.l1_lambda));
        }
        if !(0.01..=0.2).contains(&self.lr) {
            v.push(format!("lr {} outside [0.01, 0.2]", self.lr));
        }
        if !(10_000..=90_000).contains(&self.base_iterations) {
            v.push(format!("base_iterations {} outside 10k..=90k", self.base_iterations));
        }
        if !SEQ_MINUTES_CHOICES.contains(&self.seq_minutes) {
            v.push(format!("seq_minutes {} not in {SEQ_MINUTES_CHOICES:?}", self.seq_minutes));
        }
        if !LAG_MINUTES_CHOICES.contains(&self.lag_minutes) {
            v.push(format!("lag_minutes {} not in {LAG_MINUTES_CHOICES:?}", self.lag_minutes));
        }
        v
    }

    /// Validates and logs a warning per range violation.
    pub fn validate_with_warnings(&self) -> Result<()> {
        self.validate()?;
        for w in self.range_violations() {
            log::warn!("hyperparameter outside the searched range: {w}");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    /// First iteration (zero-based, inclusive).
    pub start: u64,
    /// One past the last iteration.
    pub end: u64,
    pub lr: f64,
}

/// Decorrelated per-trial seed (splitmix64 finalizer over both inputs).
pub fn trial_seed(base_seed: u64, index: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base_seed ^ mix(index as u64))
}

/// Axes of a grid search; every combination becomes one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub hidden_widths: Vec<Vec<usize>>,
    pub l1_lambda: Vec<f64>,
    pub lr: Vec<f64>,
    pub base_iterations: Vec<u64>,
    pub seq_minutes: Vec<usize>,
    pub lag_minutes: Vec<usize>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_decay_iterations")]
    pub decay_iterations: u64,
    #[serde(default = "default_checkpoint_interval")]
    pub checkpoint_interval: u64,
    /// Accept values outside the searched ranges (logged as warnings).
    #[serde(default)]
    pub allow_out_of_range: bool,
}

impl GridSpec {
    /// Cartesian product in the order (i, l, widths, λ, lr, iterations),
    /// each trial seeded with [`trial_seed`] of its index.
    pub fn expand(&self) -> Result<Vec<Hyperparams>> {
        let axes = [
            self.hidden_widths.len(),
            self.l1_lambda.len(),
            self.lr.len(),
            self.base_iterations.len(),
            self.seq_minutes.len(),
            self.lag_minutes.len(),
        ];
        if axes.contains(&0) {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        let mut out = Vec::with_capacity(axes.iter().product());
        for &i in &self.seq_minutes {
            for &l in &self.lag_minutes {
                for widths in &self.hidden_widths {
                    for &lambda in &self.l1_lambda {
                        for &lr in &self.lr {
                            for &base in &self.base_iterations {
                                let hp = Hyperparams {
                                    hidden_widths: widths.clone(),
                                    l1_lambda: lambda,
                                    lr,
                                    base_iterations: base,
                                    batch_size: self.batch_size,
                                    seq_minutes: i,
                                    lag_minutes: l,
                                    seed: trial_seed(self.seed, out.len()),
                                    decay_iterations: self.decay_iterations,
                                    checkpoint_interval: self.checkpoint_interval,
                                    pos_weight: 1.0,
                                    trace_stride: default_trace_stride(),
                                };
                                hp.validate()?;
                                let violations = hp.range_violations();
                                if !violations.is_empty() {
                                    if !self.allow_out_of_range {
                                        return Err(Error::Config(format!(
                                            "grid point outside searched ranges: {}",
                                            violations.join("; ")
                                        )));
                                    }
                                    for v in violations {
                                        log::warn!("grid point outside searched ranges: {v}");
                                    }
                                }
                                out.push(hp);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Iterations completed.
    pub iteration: u64,
    pub batch_loss: f64,
    /// Mean batch loss over the preceding `trace_stride` iterations.
    pub smoothed_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Iterations completed.
    pub iteration: u64,
    pub lr: f64,
    /// Mean cross-entropy on the validation set (no penalty term).
    pub val_loss: f64,
    pub val_metrics: ClassificationMetrics,
    /// Exact-zero weight share per layer.
    pub zero_fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub hyperparams: Hyperparams,
    pub scalar: String,
    pub widths: Vec<usize>,
    pub param_count: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub total_iterations: u64,
    pub phases: Vec<Phase>,
    pub epochs_completed: u64,
    pub loss_trace: Vec<TracePoint>,
    pub checkpoints: Vec<Checkpoint>,
    /// Index into `checkpoints` with the lowest validation loss.
    pub best_checkpoint: usize,
    pub final_val_metrics: ClassificationMetrics,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn best(&self) -> &Checkpoint {
        &self.checkpoints[self.best_checkpoint]
    }

    /// Copy with the wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    /// `iteration,batch_loss,smoothed_loss`
    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "batch_loss", "smoothed_loss"])?;
        for p in &self.loss_trace {
            w.write_record([p.iteration.to_string(), fmt_num(p.batch_loss), fmt_num(p.smoothed_loss)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One row per checkpoint, with one zero-fraction column per layer.
    pub fn write_checkpoints_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let n_layers = self.widths.len() - 1;
        let mut header: Vec<String> = ["iteration", "lr", "val_loss", "acc", "tpr", "tnr", "f1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=n_layers).map(|k| format!("zero_fraction_layer{k}")));
        w.write_record(&header)?;
        for c in &self.checkpoints {
            let m = &c.val_metrics;
            let mut row = vec![
                c.iteration.to_string(),
                fmt_num(c.lr),
                fmt_num(c.val_loss),
                fmt_num(m.acc),
                fmt_num(m.tpr),
                fmt_num(m.tnr),
                fmt_num(m.f1),
            ];
            row.extend(c.zero_fractions.iter().map(|z| fmt_num(*z)));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn write_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

/// Final weights, weights at the best checkpoint, and the report.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Mlp<T>,
    pub best_model: Mlp<T>,
    pub report: TrainReport,
}

/// Emitted after every optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationEvent {
    /// Zero-based iteration just completed.
    pub iteration: u64,
    pub phase: usize,
    pub lr: f64,
    pub batch_loss: f64,
}

/// Loss and metrics of a model on a labeled set.
pub fn score<T: Scalar>(mlp: &Mlp<T>, set: &SampleSet<T>, pos_weight: f64) -> Result<(f64, ClassificationMetrics)> {
    if set.is_empty() {
        return Err(Error::Empty("cannot score an empty sample set".into()));
    }
    let half = T::lit(0.5);
    let mut loss = 0.0;
    let mut predicted = Vec::with_capacity(set.len());
    let labels = set.labels();
    for (k, chunk) in set.x().axis_chunks_iter(Axis(0), 4096).enumerate() {
        let cache = mlp.forward_batch(chunk)?;
        let probs = cache.probabilities();
        let y = &labels[k * 4096..k * 4096 + chunk.nrows()];
        loss += cross_entropy_sum(probs.view(), y, pos_weight);
        predicted.extend(probs.column(OPEN).iter().map(|p| *p >= half));
    }
    let metrics = classification_metrics(&confusion(&predicted, labels)?)?;
    Ok((loss / set.len() as f64, metrics))
}

pub fn train<T: Scalar>(
    train: &SampleSet<T>,
    val: &SampleSet<T>,
    hp: &Hyperparams,
) -> Result<TrainOutcome<T>> {
    train_observed(train, val, hp, |_| {})
}

/// [`train`] with a callback invoked after every step.
pub fn train_observed<T: Scalar>(
    train: &SampleSet<T>,
    val: &SampleSet<T>,
    hp: &Hyperparams,
    mut observer: impl FnMut(&IterationEvent),
) -> Result<TrainOutcome<T>> {
    let started = Instant::now();
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set".into()));
    }
    let horizon = hp.horizon()?;
    if train.horizon() != horizon || val.horizon() != horizon {
        return Err(Error::Config(format!(
            "samples stacked with {:?}/{:?} but hyperparameters ask for {horizon:?}",
            train.horizon(),
            val.horizon()
        )));
    }
    if train.dim() != val.dim() {
        return Err(Error::Dimension {
            expected: train.dim(),
            actual: val.dim(),
        });
    }
    if train.provenance().overlaps(val.provenance()) {
        return Err(Error::Split(format!(
            "training span {:?} and validation span {:?} of '{}' overlap",
            train.provenance().span,
            val.provenance().span,
            train.provenance().source
        )));
    }

    let mut widths = vec![train.dim()];
    widths.extend(&hp.hidden_widths);
    widths.push(2);
    let mut mlp = Mlp::<T>::init(&widths, hp.seed)?;
    let lambda = T::lit(hp.l1_lambda);

    let mut shuffler = ChaCha8Rng::seed_from_u64(hp.seed);
    shuffler.set_stream(1);
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut shuffler);
    let mut cursor = 0;
    let mut epochs = 0;

    let phases = hp.phases();
    let total = hp.total_iterations();
    let mut xb = Array2::zeros((0, 0));
    let mut yb = Vec::with_capacity(hp.batch_size);
    let mut trace = Vec::new();
    let mut window_sum = 0.0;
    let mut window_len = 0u64;
    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    let mut best: Option<(usize, Mlp<T>)> = None;

    for k in 0..total {
        let end = (cursor + hp.batch_size).min(n);
        train.gather(&order[cursor..end], &mut xb, &mut yb);
        cursor = end;
        if cursor == n {
            epochs += 1;
            order.shuffle(&mut shuffler);
            cursor = 0;
        }

        let cache = mlp.forward_batch(xb.view())?;
        let batch_loss =
            cross_entropy_sum(cache.probabilities().view(), &yb, hp.pos_weight) / yb.len() as f64;
        if !batch_loss.is_finite() {
            return Err(Error::Diverged {
                iteration: k,
                loss: batch_loss,
            });
        }
        let grads = mlp.backward(&cache, &yb, hp.pos_weight)?;
        drop(cache);
        let lr = hp.lr_at(k);
        // non-finite parameters surface as a non-finite loss on the next
        // batch or at the final checkpoint
        mlp.apply_prox_step(&grads, T::lit(lr), lambda)?;

        let phase = phases.iter().position(|p| k < p.end).unwrap_or(2);
        observer(&IterationEvent {
            iteration: k,
            phase,
            lr,
            batch_loss,
        });

        let done = k + 1;
        window_sum += batch_loss;
        window_len += 1;
        if done % hp.trace_stride == 0 || done == total {
            trace.push(TracePoint {
                iteration: done,
                batch_loss,
                smoothed_loss: window_sum / window_len as f64,
            });
            window_sum = 0.0;
            window_len = 0;
        }
        if done % hp.checkpoint_interval == 0 || done == total {
            let (val_loss, val_metrics) = score(&mlp, val, hp.pos_weight)?;
            if !val_loss.is_finite() {
                return Err(Error::Diverged {
                    iteration: k,
                    loss: val_loss,
                });
            }
            let improved = best
                .as_ref()
                .is_none_or(|(b, _)| val_loss < checkpoints[*b].val_loss);
            checkpoints.push(Checkpoint {
                iteration: done,
                lr,
                val_loss,
                val_metrics,
                zero_fractions: mlp.layer_zero_fractions(),
            });
            if improved {
                best = Some((checkpoints.len() - 1, mlp.clone()));
            }
        }
    }

    let (best_checkpoint, best_model) = best.expect("at least one checkpoint");
    let report = TrainReport {
        hyperparams: hp.clone(),
        scalar: T::NAME.to_string(),
        param_count: mlp.param_count(),
        widths,
        n_train: train.len(),
        n_val: val.len(),
        total_iterations: total,
        phases,
        epochs_completed: epochs,
        loss_trace: trace,
        final_val_metrics: checkpoints.last().unwrap().val_metrics.clone(),
        checkpoints,
        best_checkpoint,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        model: mlp,
        best_model,
        report,
    })
}

/// Stacked and normalized sample sets for one horizon. The normalizer is
/// fit on the training samples only.
#[derive(Debug, Clone)]
pub struct PreparedSplits<T> {
    pub horizon: Horizon,
    pub train: SampleSet<T>,
    pub val: SampleSet<T>,
    pub test: Option<SampleSet<T>>,
    pub normalizer: Normalizer<T>,
}

impl<T: Scalar> PreparedSplits<T> {
    pub fn new(train: &Dataset, val: &Dataset, test: Option<&Dataset>, horizon: Horizon) -> Result<Self> {
        let mut tr = stack_all::<T>(train, horizon);
        let mut va = stack_all::<T>(val, horizon);
        let mut te = test.map(|d| stack_all::<T>(d, horizon));
        for (name, set) in [("training", &tr), ("validation", &va)] {
            if set.is_empty() {
                return Err(Error::InsufficientData(format!(
                    "{name} split yields no samples for i={} l={}",
                    horizon.seq_minutes, horizon.lag_minutes
                )));
            }
        }
        let normalizer = Normalizer::fit(&tr)?;
        normalizer.apply_set(&mut tr)?;
        normalizer.apply_set(&mut va)?;
        if let Some(te) = te.as_mut() {
            normalizer.apply_set(te)?;
        }
        Ok(Self {
            horizon,
            train: tr,
            val: va,
            test: te,
            normalizer,
        })
    }

    pub fn from_splits(data: &DataSplits, horizon: Horizon) -> Result<Self> {
        Self::new(&data.train, &data.val, Some(&data.test), horizon)
    }

    pub fn test(&self) -> Result<&SampleSet<T>> {
        match &self.test {
            Some(t) if !t.is_empty() => Ok(t),
            _ => Err(Error::InsufficientData("test split yields no samples".into())),
        }
    }
}

/// Chronological train / validation / test datasets.
#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl DataSplits {
    pub fn from_dataset(dataset: &Dataset, fractions: SplitFractions) -> Result<Self> {
        let (train, val, test) = split(dataset, fractions)?;
        Ok(Self { train, val, test })
    }
}

/// Runs `f` on a dedicated pool of `parallelism` threads.
pub(crate) fn in_pool<R: Send>(parallelism: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    /// Weights after the last iteration.
    #[default]
    Final,
    /// Weights at the checkpoint with the lowest validation loss.
    Best,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Position in the input grid.
    pub index: usize,
    /// 1-based; failed trials are ranked after all successful ones.
    pub rank: usize,
    pub hyperparams: Hyperparams,
    pub status: TrialStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub param_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_metrics: Option<ClassificationMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_iteration: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct GridOptions {
    pub parallelism: usize,
    /// When set, each trial's final model is written here as `trial_NNNN.bin`.
    pub model_dir: Option<PathBuf>,
}

fn param_count_for(hp: &Hyperparams, dim: usize) -> usize {
    let mut w = vec![dim];
    w.extend(&hp.hidden_widths);
    w.push(2);
    w.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
}

/// Trains every grid point and ranks by validation F1, then accuracy, then
/// fewer parameters. Sample sets are stacked once per distinct (i, l).
pub fn grid_search<T: Scalar>(
    grid: &[Hyperparams],
    train: &Dataset,
    val: &Dataset,
    options: &GridOptions,
) -> Result<Vec<TrialResult>> {
    if grid.is_empty() {
        return Err(Error::Empty("grid".into()));
    }
    let mut prepared: BTreeMap<Horizon, std::result::Result<PreparedSplits<T>, String>> = BTreeMap::new();
    for hp in grid {
        if let Ok(h) = hp.horizon() {
            prepared
                .entry(h)
                .or_insert_with(|| PreparedSplits::new(train, val, None, h).map_err(|e| e.to_string()));
        }
    }
    if let Some(dir) = &options.model_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let run = |(index, hp): (usize, &Hyperparams)| -> TrialResult {
        let mut result = TrialResult {
            index,
            rank: 0,
            hyperparams: hp.clone(),
            status: TrialStatus::Failed,
            error: None,
            param_count: 0,
            val_metrics: None,
            best_val_loss: None,
            best_iteration: None,
            model_file: None,
        };
        let data = match hp.horizon().map_err(|e| e.to_string()).and_then(|h| {
            prepared[&h].as_ref().map_err(|e| e.clone())
        }) {
            Ok(d) => d,
            Err(e) => {
                result.error = Some(e);
                return result;
            }
        };
        result.param_count = param_count_for(hp, data.train.dim());
        match train_trial(hp, data, index, options.model_dir.as_deref()) {
            Ok((outcome, file)) => {
                result.status = TrialStatus::Ok;
                result.val_metrics = Some(outcome.report.final_val_metrics.clone());
                result.best_val_loss = Some(outcome.report.best().val_loss);
                result.best_iteration = Some(outcome.report.best().iteration);
                result.model_file = file;
            }
            Err(e) => result.error = Some(e.to_string()),
        }
        result
    };
    let mut results: Vec<TrialResult> = in_pool(options.parallelism, || {
        grid.par_iter().enumerate().map(run).collect()
    })?;
    rank_trials(&mut results);
    Ok(results)
}

fn train_trial<T: Scalar>(
    hp: &Hyperparams,
    data: &PreparedSplits<T>,
    index: usize,
    model_dir: Option<&Path>,
) -> Result<(TrainOutcome<T>, Option<PathBuf>)> {
    let outcome = train(&data.train, &data.val, hp)?;
    let file = match model_dir {
        Some(dir) => {
            let path = dir.join(format!("trial_{index:04}.bin"));
            outcome.model.save(&path)?;
            Some(path)
        }
        None => None,
    };
    Ok((outcome, file))
}

/// Sorts in place and assigns ranks.
pub fn rank_trials(results: &mut [TrialResult]) {
    let key = |r: &TrialResult| {
        let m = r.val_metrics.as_ref();
        let f1 = m.map(|m| m.f1).filter(|v| !v.is_nan()).unwrap_or(-1.0);
        let acc = m.map(|m| m.acc).filter(|v| !v.is_nan()).unwrap_or(-1.0);
        (r.status == TrialStatus::Ok, f1, acc)
    };
    results.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        kb.0.cmp(&ka.0)
            .then(kb.1.total_cmp(&ka.1))
            .then(kb.2.total_cmp(&ka.2))
            .then(a.param_count.cmp(&b.param_count))
            .then(a.index.cmp(&b.index))
    });
    for (k, r) in results.iter_mut().enumerate() {
        r.rank = k + 1;
    }
}

/// `rank,index,status,seq_minutes,lag_minutes,hidden_widths,...`
pub fn write_trials_csv(path: impl AsRef<Path>, results: &[TrialResult]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "rank", "index", "status", "seq_minutes", "lag_minutes", "hidden_widths", "l1_lambda", "lr",
        "base_iterations", "seed", "param_count", "acc", "tpr", "tnr", "f1", "best_val_loss",
        "best_iteration", "error",
    ])?;
    for r in results {
        let hp = &r.hyperparams;
        let m = |f: fn(&ClassificationMetrics) -> f64| {
            r.val_metrics.as_ref().map(|v| fmt_num(f(v))).unwrap_or_default()
        };
        w.write_record([
            r.rank.to_string(),
            r.index.to_string(),
            format!("{:?}", r.status).to_lowercase(),
            hp.seq_minutes.to_string(),
            hp.lag_minutes.to_string(),
            hp.hidden_widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-"),
            hp.l1_lambda.to_string(),
            hp.lr.to_string(),
            hp.base_iterations.to_string(),
            hp.seed.to_string(),
            r.param_count.to_string(),
            m(|v| v.acc),
            m(|v| v.tpr),
            m(|v| v.tnr),
            m(|v| v.f1),
            r.best_val_loss.map(fmt_num).unwrap_or_default(),
            r.best_iteration.map(|v| v.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Outcome of one seeded training run evaluated on the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub total_iterations: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_metrics: Option<ClassificationMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_iteration: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<ModelEvaluation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub(crate) fn run_once<T: Scalar>(hp: &Hyperparams, data: &PreparedSplits<T>, choice: ModelChoice) -> RunRecord {
    let mut record = RunRecord {
        seed: hp.seed,
        total_iterations: hp.total_iterations(),
        val_metrics: None,
        best_iteration: None,
        evaluation: None,
        error: None,
    };
    let result = data.test().and_then(|test| {
        let outcome = train(&data.train, &data.val, hp)?;
        let model = match choice {
            ModelChoice::Final => &outcome.model,
            ModelChoice::Best => &outcome.best_model,
        };
        let eval = evaluate_model(model, test)?;
        Ok((outcome.report, eval))
    });
    match result {
        Ok((report, eval)) => {
            record.val_metrics = Some(report.final_val_metrics.clone());
            record.best_iteration = Some(report.best().iteration);
            record.evaluation = Some(eval);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub hyperparams: Hyperparams,
    pub choice: ModelChoice,
    pub runs: Vec<RunRecord>,
    pub failures: usize,
    /// Test-set metric distributions over successful runs.
    pub summary: MetricSummary,
}

impl RepeatReport {
    pub fn evaluations(&self) -> impl Iterator<Item = &ModelEvaluation> {
        self.runs.iter().filter_map(|r| r.evaluation.as_ref())
    }
}

pub(crate) fn summarize(runs: &[RunRecord]) -> MetricSummary {
    MetricSummary::from_metrics(runs.iter().filter_map(|r| r.evaluation.as_ref().map(|e| &e.metrics)))
}

/// Trains `n` models with seeds `seed, seed+1, …` and summarizes their test
/// metrics. Runs are independent and may execute in parallel.
pub fn repeat_train<T: Scalar>(
    hp: &Hyperparams,
    n: usize,
    data: &PreparedSplits<T>,
    parallelism: usize,
    choice: ModelChoice,
) -> Result<RepeatReport> {
    if n < 2 {
        return Err(Error::Config(format!("repeat_train needs n >= 2, got {n}")));
    }
    hp.validate()?;
    if data.horizon != hp.horizon()? {
        return Err(Error::Config("prepared splits were stacked with another horizon".into()));
    }
    data.test()?;
    let runs: Vec<RunRecord> = in_pool(parallelism, || {
        (0..n as u64)
            .into_par_iter()
            .map(|k| {
                let hp = Hyperparams {
                    seed: hp.seed.wrapping_add(k),
                    ..hp.clone()
                };
                run_once(&hp, data, choice)
            })
            .collect()
    })?;
    Ok(RepeatReport {
        hyperparams: hp.clone(),
        choice,
        failures: runs.iter().filter(|r| r.error.is_some()).count(),
        summary: summarize(&runs),
        runs,
    })
}
