//! Classification metrics, the opening-action rule, behavioral (absolute)
//! metrics and the lag sweep.
//!
//! The positive class is "window open" throughout. Ratios with a zero
//! denominator come back as NaN and are listed in `undefined`; they are
//! never silently reported as 0.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Mlp;
use crate::scalar::Scalar;
use crate::stacking::SampleSet;
use crate::training::{
    in_pool, run_once, summarize, write_json, DataSplits, Hyperparams, ModelChoice,
    PreparedSplits, RunRecord, LAG_MINUTES_CHOICES,
};

/// `serde(with)` helper: NaN is written as `null` and read back as NaN.
pub mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Share of actually-open samples.
    pub fn prevalence(&self) -> f64 {
        (self.tp + self.fn_) as f64 / self.total() as f64
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }
}

pub fn confusion(predicted: &[bool], actual: &[bool]) -> Result<ConfusionCounts> {
    if predicted.len() != actual.len() {
        return Err(Error::Dimension {
            expected: actual.len(),
            actual: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::Empty("confusion of empty series".into()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Acc,
    Tpr,
    Tnr,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Acc, Metric::Tpr, Metric::Tnr, Metric::F1];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Acc => "acc",
            Metric::Tpr => "tpr",
            Metric::Tnr => "tnr",
            Metric::F1 => "f1",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    #[serde(with = "nan_as_null")]
    pub acc: f64,
    #[serde(with = "nan_as_null")]
    pub tpr: f64,
    #[serde(with = "nan_as_null")]
    pub tnr: f64,
    #[serde(with = "nan_as_null")]
    pub f1: f64,
    /// Metrics whose denominator was zero (value is NaN).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<Metric>,
}

impl ClassificationMetrics {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Acc => self.acc,
            Metric::Tpr => self.tpr,
            Metric::Tnr => self.tnr,
            Metric::F1 => self.f1,
        }
    }
}

pub fn classification_metrics(c: &ConfusionCounts) -> Result<ClassificationMetrics> {
    if c.total() == 0 {
        return Err(Error::Empty("all confusion counts are zero".into()));
    }
    let mut undefined = Vec::new();
    let mut ratio = |num: u64, den: u64, m: Metric| {
        if den == 0 {
            undefined.push(m);
            f64::NAN
        } else {
            num as f64 / den as f64
        }
    };
    let acc = ratio(c.tp + c.tn, c.total(), Metric::Acc);
    let tpr = ratio(c.tp, c.tp + c.fn_, Metric::Tpr);
    let tnr = ratio(c.tn, c.tn + c.fp, Metric::Tnr);
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, Metric::F1);
    Ok(ClassificationMetrics {
        acc,
        tpr,
        tnr,
        f1,
        undefined,
    })
}

/// Result of the opening-action rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionMatch {
    /// Observation steps whose look-ahead window holds an actual opening.
    pub total: u64,
    /// Of those, steps where the prediction also opens inside the window.
    pub matched: u64,
    #[serde(with = "nan_as_null")]
    pub fraction: f64,
}

impl ActionMatch {
    fn from_counts(matched: u64, total: u64) -> Self {
        let fraction = if total == 0 {
            f64::NAN
        } else {
            matched as f64 / total as f64
        };
        Self {
            total,
            matched,
            fraction,
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self::from_counts(self.matched + other.matched, self.total + other.total)
    }
}

/// `opens[s]` is true when `s` is a closed→open step.
fn openings(series: &[bool]) -> Vec<bool> {
    let mut out = vec![false; series.len()];
    for s in 1..series.len() {
        out[s] = series[s] && !series[s - 1];
    }
    out
}

fn prefix_counts(flags: &[bool]) -> Vec<u64> {
    let mut acc = Vec::with_capacity(flags.len() + 1);
    acc.push(0);
    for &f in flags {
        acc.push(acc.last().unwrap() + u64::from(f));
    }
    acc
}

/// For each step `t` (with `t + lag` inside the series) whose window
/// `(t, t+lag]` contains an actual opening, checks whether the predicted
/// series opens anywhere in the same window.
pub fn action_correct_fraction(predicted: &[bool], actual: &[bool], lag: usize) -> Result<ActionMatch> {
    if predicted.len() != actual.len() {
        return Err(Error::Dimension {
            expected: actual.len(),
            actual: predicted.len(),
        });
    }
    if lag < 1 {
        return Err(Error::Config("lag must be at least 1 minute".into()));
    }
    if actual.len() < lag + 1 {
        return Err(Error::InsufficientData(format!(
            "series of {} minutes is shorter than lag + 1 = {}",
            actual.len(),
            lag + 1
        )));
    }
    let pa = prefix_counts(&openings(actual));
    let pp = prefix_counts(&openings(predicted));
    let (mut matched, mut total) = (0, 0);
    for t in 0..actual.len() - lag {
        // openings at steps t+1 ..= t+lag
        if pa[t + lag + 1] > pa[t + 1] {
            total += 1;
            if pp[t + lag + 1] > pp[t + 1] {
                matched += 1;
            }
        }
    }
    Ok(ActionMatch::from_counts(matched, total))
}

/// Splits a timestamp series into runs of consecutive minutes.
pub fn contiguous_ranges(timestamps: &[i64]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=timestamps.len() {
        if k == timestamps.len() || timestamps[k] != timestamps[k - 1] + 1 {
            if k > start {
                out.push(start..k);
            }
            start = k;
        }
    }
    out
}

/// [`action_correct_fraction`] applied per gap-free stretch and pooled.
/// Stretches shorter than `lag + 1` contribute nothing.
pub fn action_correct_fraction_timed(
    timestamps: &[i64],
    predicted: &[bool],
    actual: &[bool],
    lag: usize,
) -> Result<ActionMatch> {
    if timestamps.len() != actual.len() || predicted.len() != actual.len() {
        return Err(Error::Dimension {
            expected: timestamps.len(),
            actual: predicted.len().min(actual.len()),
        });
    }
    let mut acc = ActionMatch::from_counts(0, 0);
    for r in contiguous_ranges(timestamps) {
        if r.len() > lag {
            acc = acc.merge(&action_correct_fraction(
                &predicted[r.clone()],
                &actual[r],
                lag,
            )?);
        }
    }
    Ok(acc)
}

/// Maximal run of one state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub start: i64,
    pub minutes: u64,
    /// Touches the series start/end or a gap, so its true length is unknown.
    pub truncated: bool,
}

impl Run {
    pub fn hours(&self) -> f64 {
        self.minutes as f64 / 60.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateDurations {
    pub open_runs: Vec<Run>,
    pub closed_runs: Vec<Run>,
}

impl StateDurations {
    pub fn open_hours(&self, include_truncated: bool) -> Vec<f64> {
        hours(&self.open_runs, include_truncated)
    }

    pub fn closed_hours(&self, include_truncated: bool) -> Vec<f64> {
        hours(&self.closed_runs, include_truncated)
    }

    pub fn covered_minutes(&self) -> u64 {
        self.open_runs
            .iter()
            .chain(&self.closed_runs)
            .map(|r| r.minutes)
            .sum()
    }
}

fn hours(runs: &[Run], include_truncated: bool) -> Vec<f64> {
    runs.iter()
        .filter(|r| include_truncated || !r.truncated)
        .map(Run::hours)
        .collect()
}

/// Run-length encodes the state series; a missing minute ends the run.
pub fn state_durations(timestamps: &[i64], states: &[bool]) -> Result<StateDurations> {
    if timestamps.len() != states.len() {
        return Err(Error::Dimension {
            expected: timestamps.len(),
            actual: states.len(),
        });
    }
    let mut out = StateDurations::default();
    for r in contiguous_ranges(timestamps) {
        let (first, last) = (r.start, r.end - 1);
        let mut start = r.start;
        for k in r.start..r.end {
            if k == last || states[k + 1] != states[k] {
                let run = Run {
                    start: timestamps[start],
                    minutes: (k + 1 - start) as u64,
                    truncated: start == first || k == last,
                };
                if states[k] {
                    out.open_runs.push(run);
                } else {
                    out.closed_runs.push(run);
                }
                start = k + 1;
            }
        }
    }
    Ok(out)
}

/// Convenience for a series sampled every minute without gaps.
pub fn state_durations_contiguous(states: &[bool]) -> StateDurations {
    let ts: Vec<i64> = (0..states.len() as i64).collect();
    state_durations(&ts, states).expect("lengths match")
}

/// Linear interpolation between order statistics of sorted data
/// (position `q·(n−1)`). Empty input gives NaN.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationQuantiles {
    pub n: usize,
    #[serde(with = "nan_as_null")]
    pub q25: f64,
    #[serde(with = "nan_as_null")]
    pub median: f64,
    #[serde(with = "nan_as_null")]
    pub q75: f64,
    #[serde(with = "nan_as_null")]
    pub iqr: f64,
}

impl DurationQuantiles {
    pub fn from_hours(hours: &[f64]) -> Self {
        let mut v = hours.to_vec();
        v.sort_by(f64::total_cmp);
        let q25 = quantile_sorted(&v, 0.25);
        let q75 = quantile_sorted(&v, 0.75);
        Self {
            n: v.len(),
            q25,
            median: quantile_sorted(&v, 0.5),
            q75,
            iqr: q75 - q25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsoluteMetrics {
    #[serde(with = "nan_as_null")]
    pub open_fraction: f64,
    pub actions_per_day: f64,
    pub opening_durations: DurationQuantiles,
    pub closing_durations: DurationQuantiles,
}

fn absolute_for(timestamps: &[i64], states: &[bool]) -> Result<AbsoluteMetrics> {
    let durations = state_durations(timestamps, states)?;
    let n = states.len();
    let open_fraction = if n == 0 {
        f64::NAN
    } else {
        states.iter().filter(|s| **s).count() as f64 / n as f64
    };
    let mut actions = 0u64;
    for r in contiguous_ranges(timestamps) {
        actions += openings(&states[r]).iter().filter(|o| **o).count() as u64;
    }
    let days = n as f64 / 1440.0;
    Ok(AbsoluteMetrics {
        open_fraction,
        actions_per_day: if n == 0 { 0.0 } else { actions as f64 / days },
        opening_durations: DurationQuantiles::from_hours(&durations.open_hours(true)),
        closing_durations: DurationQuantiles::from_hours(&durations.closed_hours(true)),
    })
}

/// Behavioral metrics of the predicted and actual series, returned as
/// `(predicted, observed)`. Truncated runs are included in the quantiles.
pub fn absolute_metrics(
    timestamps: &[i64],
    predicted: &[bool],
    actual: &[bool],
) -> Result<(AbsoluteMetrics, AbsoluteMetrics)> {
    if predicted.len() != actual.len() {
        return Err(Error::Dimension {
            expected: actual.len(),
            actual: predicted.len(),
        });
    }
    Ok((
        absolute_for(timestamps, predicted)?,
        absolute_for(timestamps, actual)?,
    ))
}

/// Location and spread of one metric across repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    /// Finite values that entered the summary.
    pub n: usize,
    /// Values skipped because they were NaN.
    #[serde(default)]
    pub undefined: usize,
    #[serde(with = "nan_as_null")]
    pub min: f64,
    #[serde(with = "nan_as_null")]
    pub q25: f64,
    #[serde(with = "nan_as_null")]
    pub mean: f64,
    #[serde(with = "nan_as_null")]
    pub median: f64,
    #[serde(with = "nan_as_null")]
    pub q75: f64,
    #[serde(with = "nan_as_null")]
    pub max: f64,
    /// Sample standard deviation (n − 1); NaN for fewer than 2 values.
    #[serde(with = "nan_as_null")]
    pub std: f64,
}

impl DistributionSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mean = if n == 0 {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / n as f64
        };
        let std = if n < 2 {
            f64::NAN
        } else {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self {
            n,
            undefined: values.len() - n,
            min: v.first().copied().unwrap_or(f64::NAN),
            q25: quantile_sorted(&v, 0.25),
            mean,
            median: quantile_sorted(&v, 0.5),
            q75: quantile_sorted(&v, 0.75),
            max: v.last().copied().unwrap_or(f64::NAN),
            std,
        }
    }
}

/// Per-metric distributions across repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub acc: DistributionSummary,
    pub tpr: DistributionSummary,
    pub tnr: DistributionSummary,
    pub f1: DistributionSummary,
}

impl MetricSummary {
    pub fn from_metrics<'a>(runs: impl IntoIterator<Item = &'a ClassificationMetrics>) -> Self {
        let runs: Vec<&ClassificationMetrics> = runs.into_iter().collect();
        let col = |m: Metric| {
            DistributionSummary::from_values(&runs.iter().map(|r| r.get(m)).collect::<Vec<_>>())
        };
        Self {
            acc: col(Metric::Acc),
            tpr: col(Metric::Tpr),
            tnr: col(Metric::Tnr),
            f1: col(Metric::F1),
        }
    }

    pub fn get(&self, m: Metric) -> &DistributionSummary {
        match m {
            Metric::Acc => &self.acc,
            Metric::Tpr => &self.tpr,
            Metric::Tnr => &self.tnr,
            Metric::F1 => &self.f1,
        }
    }
}

pub(crate) fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// One row per behavioral metric, observed vs predicted.
pub fn write_durations_csv(
    path: impl AsRef<Path>,
    observed: &AbsoluteMetrics,
    predicted: &AbsoluteMetrics,
) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(["metric", "observed", "predicted"])?;
    let rows: [(&str, fn(&AbsoluteMetrics) -> f64); 10] = [
        ("open_fraction", |m| m.open_fraction),
        ("actions_per_day", |m| m.actions_per_day),
        ("opening_duration_q25_h", |m| m.opening_durations.q25),
        ("opening_duration_median_h", |m| m.opening_durations.median),
        ("opening_duration_q75_h", |m| m.opening_durations.q75),
        ("opening_duration_iqr_h", |m| m.opening_durations.iqr),
        ("closing_duration_q25_h", |m| m.closing_durations.q25),
        ("closing_duration_median_h", |m| m.closing_durations.median),
        ("closing_duration_q75_h", |m| m.closing_durations.q75),
        ("closing_duration_iqr_h", |m| m.closing_durations.iqr),
    ];
    for (name, get) in rows {
        w.write_record([name.to_string(), fmt_num(get(observed)), fmt_num(get(predicted))])?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// Everything measured for one model on one labeled (normalized) set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    /// Seed the model was initialized with.
    pub seed: u64,
    pub n_samples: usize,
    pub lag_minutes: usize,
    pub confusion: ConfusionCounts,
    pub metrics: ClassificationMetrics,
    pub actions: ActionMatch,
    pub observed: AbsoluteMetrics,
    pub predicted: AbsoluteMetrics,
}

/// Predicts every sample and compares against labels on the timeline of
/// target minutes (`origin + lag`).
pub fn evaluate_model<T: Scalar>(mlp: &Mlp<T>, set: &SampleSet<T>) -> Result<ModelEvaluation> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let predicted = mlp.predict_batch(set.x())?;
    let actual = set.labels();
    let times = set.target_times();
    let lag = set.horizon().lag_minutes;
    let counts = confusion(&predicted, actual)?;
    let (pred_abs, obs_abs) = absolute_metrics(&times, &predicted, actual)?;
    Ok(ModelEvaluation {
        seed: mlp.seed(),
        n_samples: set.len(),
        lag_minutes: lag,
        confusion: counts,
        metrics: classification_metrics(&counts)?,
        actions: action_correct_fraction_timed(&times, &predicted, actual, lag)?,
        observed: obs_abs,
        predicted: pred_abs,
    })
}

/// JSON report of one or more evaluated models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub runs: Vec<ModelEvaluation>,
    pub summary: MetricSummary,
}

impl EvalReport {
    pub fn new(runs: Vec<ModelEvaluation>) -> Self {
        let summary = MetricSummary::from_metrics(runs.iter().map(|r| &r.metrics));
        Self { runs, summary }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }
}

/// One row per evaluated model.
pub fn write_metrics_csv(path: impl AsRef<Path>, runs: &[ModelEvaluation]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record([
        "seed", "n", "tp", "fp", "tn", "fn", "acc", "tpr", "tnr", "f1", "actions_total",
        "actions_matched", "action_fraction",
    ])?;
    for r in runs {
        let c = &r.confusion;
        let m = &r.metrics;
        w.write_record([
            r.seed.to_string(),
            r.n_samples.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
            fmt_num(m.acc),
            fmt_num(m.tpr),
            fmt_num(m.tnr),
            fmt_num(m.f1),
            r.actions.total.to_string(),
            r.actions.matched.to_string(),
            fmt_num(r.actions.fraction),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn default_repeats() -> usize {
    5
}
fn default_extra_iterations() -> u64 {
    20_000
}
fn default_extra_from_lag() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagSweepOptions {
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Added to `base_iterations` for lags of at least `extra_from_lag`.
    #[serde(default = "default_extra_iterations")]
    pub extra_iterations: u64,
    #[serde(default = "default_extra_from_lag")]
    pub extra_from_lag: usize,
    #[serde(default)]
    pub choice: ModelChoice,
}

impl Default for LagSweepOptions {
    fn default() -> Self {
        Self {
            repeats: default_repeats(),
            extra_iterations: default_extra_iterations(),
            extra_from_lag: default_extra_from_lag(),
            choice: ModelChoice::Final,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagCell {
    pub lag_minutes: usize,
    pub base_iterations: u64,
    pub total_iterations: u64,
    pub runs: Vec<RunRecord>,
    pub summary: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagSweepResult {
    pub cells: Vec<LagCell>,
}

impl LagSweepResult {
    pub fn lags(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.lag_minutes).collect()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    /// `lag,metric,n,min,q25,mean,median,q75,max,std`
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv_writer(path)?;
        w.write_record(["lag", "metric", "n", "min", "q25", "mean", "median", "q75", "max", "std"])?;
        for cell in &self.cells {
            for m in Metric::ALL {
                let d = cell.summary.get(m);
                w.write_record([
                    cell.lag_minutes.to_string(),
                    m.to_string(),
                    d.n.to_string(),
                    fmt_num(d.min),
                    fmt_num(d.q25),
                    fmt_num(d.mean),
                    fmt_num(d.median),
                    fmt_num(d.q75),
                    fmt_num(d.max),
                    fmt_num(d.std),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Lags must be strictly increasing and drawn from 10, 20, …, 60.
pub fn validate_lags(lags: &[usize]) -> Result<()> {
    if lags.is_empty() {
        return Err(Error::Config("no lags given".into()));
    }
    if let Some(l) = lags.iter().find(|l| !LAG_MINUTES_CHOICES.contains(l)) {
        return Err(Error::Config(format!("lag {l} not in {LAG_MINUTES_CHOICES:?}")));
    }
    if lags.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("lags must be strictly increasing: {lags:?}")));
    }
    Ok(())
}

/// Retrains `hp` for every lag with `repeats` seeds (`seed, seed+1, …`),
/// restacking the data per lag. Longer lags get extra base iterations.
pub fn lag_sweep<T: Scalar>(
    hp: &Hyperparams,
    lags: &[usize],
    data: &DataSplits,
    options: &LagSweepOptions,
    parallelism: usize,
) -> Result<LagSweepResult> {
    validate_lags(lags)?;
    if options.repeats < 1 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let per_lag: Vec<(Hyperparams, PreparedSplits<T>)> = lags
        .iter()
        .map(|&lag| {
            let mut h = hp.clone();
            h.lag_minutes = lag;
            if lag >= options.extra_from_lag {
                h.base_iterations += options.extra_iterations;
            }
            h.validate()?;
            let prepared = PreparedSplits::from_splits(data, h.horizon()?)?;
            prepared.test()?;
            Ok((h, prepared))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..lags.len())
        .flat_map(|c| (0..options.repeats as u64).map(move |k| (c, k)))
        .collect();
    let records: Vec<RunRecord> = in_pool(parallelism, || {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(c, k)| {
                let (h, prepared) = &per_lag[c];
                let h = Hyperparams {
                    seed: h.seed.wrapping_add(k),
                    ..h.clone()
                };
                run_once(&h, prepared, options.choice)
            })
            .collect()
    })?;
    let mut records = records.into_iter();
    let cells = per_lag
        .iter()
        .map(|(h, _)| {
            let runs: Vec<RunRecord> = records.by_ref().take(options.repeats).collect();
            LagCell {
                lag_minutes: h.lag_minutes,
                base_iterations: h.base_iterations,
                total_iterations: h.total_iterations(),
                summary: summarize(&runs),
                runs,
            }
        })
        .collect();
    Ok(LagSweepResult { cells })
}
