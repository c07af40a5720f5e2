//! Flattening minute-wise indoor climate history into feed-forward inputs.
//!
//! Layout of one input vector for sequence length `i`:
//!
//! ```text
//! [ static block @t (co2, rh, t_indoor, extras…) | co2 t-1..t-i | rh t-1..t-i | t_indoor t-1..t-i ]
//! ```
//!
//! The indoor values at `t` appear once, inside the static block, so the width
//! is `n_static + 3·i`. Sequence blocks run newest first.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, INDOOR_CHANNELS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Width of a stacked input vector.
pub fn input_dim(n_static: usize, seq_minutes: usize) -> usize {
    n_static + 3 * seq_minutes
}

/// Sequence length `i` and prediction lag `l`, both in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Horizon {
    pub seq_minutes: usize,
    pub lag_minutes: usize,
}

impl Horizon {
    pub fn new(seq_minutes: usize, lag_minutes: usize) -> Result<Self> {
        if seq_minutes < 1 || lag_minutes < 1 {
            return Err(Error::Config(format!(
                "sequence length and lag must be >= 1 minute, got i={seq_minutes}, l={lag_minutes}"
            )));
        }
        Ok(Self {
            seq_minutes,
            lag_minutes,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedSample<T> {
    pub x: Vec<T>,
    /// Window state at `origin_t + lag`.
    pub y: bool,
    pub origin_t: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    WindowCrossesGap,
    BeforeSeriesStart,
    LabelBeyondSeriesEnd,
}

/// Which split a sample set was stacked from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Val,
    Test,
    Unspecified,
}

/// Where a sample set came from and which minutes its windows touch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Series the data was cut from (`"office-3"` for `"office-3/train"`).
    pub source: String,
    pub role: SplitRole,
    /// Inclusive minute range covered by inputs and labels.
    pub span: Option<(i64, i64)>,
}

impl Provenance {
    /// True when both sets come from one series and their minute ranges intersect.
    pub fn overlaps(&self, other: &Provenance) -> bool {
        match (self.span, other.span) {
            (Some((a0, a1)), Some((b0, b1))) => {
                self.source == other.source && a0 <= b1 && b0 <= a1
            }
            _ => false,
        }
    }
}

fn source_of(series_id: &str) -> String {
    series_id.split('/').next().unwrap_or(series_id).to_string()
}

fn role_of(series_id: &str) -> SplitRole {
    match series_id.rsplit('/').next() {
        Some("train") if series_id.contains('/') => SplitRole::Train,
        Some("val") if series_id.contains('/') => SplitRole::Val,
        Some("test") if series_id.contains('/') => SplitRole::Test,
        _ => SplitRole::Unspecified,
    }
}

/// Builds the input vector for observation step `t`.
pub fn stack_sample<T: Scalar>(
    dataset: &Dataset,
    t: i64,
    horizon: Horizon,
) -> std::result::Result<StackedSample<T>, SkipReason> {
    let (first, last) = dataset.time_range().ok_or(SkipReason::BeforeSeriesStart)?;
    let i = horizon.seq_minutes as i64;
    let l = horizon.lag_minutes as i64;
    if t - i < first {
        return Err(SkipReason::BeforeSeriesStart);
    }
    if t + l > last {
        return Err(SkipReason::LabelBeyondSeriesEnd);
    }
    let start = dataset
        .index_of(t - i)
        .ok_or(SkipReason::WindowCrossesGap)?;
    let end = start + (i + l) as usize;
    let records = dataset.records();
    if end >= records.len() || records[end].timestamp != t + l {
        return Err(SkipReason::WindowCrossesGap);
    }
    let mut x = vec![T::zero(); input_dim(dataset.schema().n_static(), horizon.seq_minutes)];
    fill_row(dataset, start + i as usize, horizon, &mut x);
    Ok(StackedSample {
        x,
        y: records[end].window_open,
        origin_t: t,
    })
}

/// Writes the input vector for the record at `idx` into `out`. The caller
/// guarantees `idx - i ..= idx` is contiguous.
fn fill_row<T: Scalar>(dataset: &Dataset, idx: usize, horizon: Horizon, out: &mut [T]) {
    let records = dataset.records();
    let now = &records[idx];
    let i = horizon.seq_minutes;
    let n_static = dataset.schema().n_static();
    for (k, slot) in out[..3].iter_mut().enumerate() {
        *slot = T::lit(now.indoor(k));
    }
    for (slot, v) in out[3..n_static].iter_mut().zip(&now.static_features) {
        *slot = T::lit(*v);
    }
    for channel in 0..INDOOR_CHANNELS.len() {
        let block = &mut out[n_static + channel * i..n_static + (channel + 1) * i];
        for (back, slot) in block.iter_mut().enumerate() {
            *slot = T::lit(records[idx - 1 - back].indoor(channel));
        }
    }
}

/// Row-major batch of stacked samples with labels, origins and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet<T> {
    x: Array2<T>,
    y: Vec<bool>,
    origins: Vec<i64>,
    horizon: Horizon,
    provenance: Provenance,
}

impl<T: Scalar> SampleSet<T> {
    pub fn from_samples(
        samples: &[StackedSample<T>],
        dim: usize,
        horizon: Horizon,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut x = Array2::zeros((samples.len(), dim));
        for (mut row, s) in x.rows_mut().into_iter().zip(samples) {
            if s.x.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: s.x.len(),
                });
            }
            row.assign(&ArrayView1::from(&s.x));
        }
        Ok(Self {
            x,
            y: samples.iter().map(|s| s.y).collect(),
            origins: samples.iter().map(|s| s.origin_t).collect(),
            horizon,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, T> {
        self.x.view()
    }

    pub fn labels(&self) -> &[bool] {
        &self.y
    }

    pub fn origins(&self) -> &[i64] {
        &self.origins
    }

    /// Timestamps the labels refer to (`origin + lag`).
    pub fn target_times(&self) -> Vec<i64> {
        let l = self.horizon.lag_minutes as i64;
        self.origins.iter().map(|t| t + l).collect()
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn sample(&self, k: usize) -> StackedSample<T> {
        StackedSample {
            x: self.x.row(k).to_vec(),
            y: self.y[k],
            origin_t: self.origins[k],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = StackedSample<T>> + '_ {
        (0..self.len()).map(move |k| self.sample(k))
    }

    /// Copies the rows listed in `indices` into `x_out` / `y_out`.
    pub fn gather(&self, indices: &[usize], x_out: &mut Array2<T>, y_out: &mut Vec<bool>) {
        if x_out.nrows() != indices.len() || x_out.ncols() != self.dim() {
            *x_out = Array2::zeros((indices.len(), self.dim()));
        }
        y_out.clear();
        for (mut row, &k) in x_out.rows_mut().into_iter().zip(indices) {
            row.assign(&self.x.row(k));
            y_out.push(self.y[k]);
        }
    }

    /// Subset with the given rows, keeping provenance.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), indices),
            y: indices.iter().map(|&k| self.y[k]).collect(),
            origins: indices.iter().map(|&k| self.origins[k]).collect(),
            horizon: self.horizon,
            provenance: self.provenance.clone(),
        }
    }

    pub fn open_fraction(&self) -> f64 {
        if self.y.is_empty() {
            return f64::NAN;
        }
        self.y.iter().filter(|y| **y).count() as f64 / self.y.len() as f64
    }

    pub fn with_role(mut self, role: SplitRole) -> Self {
        self.provenance.role = role;
        self
    }
}

/// Stacks every eligible observation step of the dataset, in timestamp order.
///
/// Each gap-free segment of length `n` yields `max(0, n - i - l)` samples.
pub fn stack_all<T: Scalar>(dataset: &Dataset, horizon: Horizon) -> SampleSet<T> {
    let i = horizon.seq_minutes;
    let l = horizon.lag_minutes;
    let dim = input_dim(dataset.schema().n_static(), i);
    let positions: Vec<usize> = dataset
        .segments()
        .into_iter()
        .filter(|seg| seg.len() > i + l)
        .flat_map(|seg| seg.start + i..seg.end - l)
        .collect();
    let records = dataset.records();
    let mut x = Array2::zeros((positions.len(), dim));
    for (mut row, &idx) in x.rows_mut().into_iter().zip(&positions) {
        fill_row(
            dataset,
            idx,
            horizon,
            row.as_slice_mut().expect("fresh array is contiguous"),
        );
    }
    let span = match (positions.first(), positions.last()) {
        (Some(&a), Some(&b)) => Some((
            records[a].timestamp - i as i64,
            records[b].timestamp + l as i64,
        )),
        _ => None,
    };
    SampleSet {
        x,
        y: positions.iter().map(|&k| records[k + l].window_open).collect(),
        origins: positions.iter().map(|&k| records[k].timestamp).collect(),
        horizon,
        provenance: Provenance {
            source: source_of(dataset.series_id()),
            role: role_of(dataset.series_id()),
            span,
        },
    }
}

/// Per-dimension z-score parameters fit on training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    /// Dimensions with zero variance; their stddev is set to 1.
    pub constant: Vec<bool>,
}

impl<T: Scalar> Normalizer<T> {
    /// Mean and sample stddev (n − 1) per dimension, accumulated in f64.
    pub fn fit(samples: &SampleSet<T>) -> Result<Self> {
        Self::fit_view(samples.x())
    }

    pub fn fit_view(x: ArrayView2<'_, T>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "normalizer needs at least 2 samples, got {n}"
            )));
        }
        let d = x.ncols();
        // Welford updates, row by row.
        let mut mean = vec![0.0f64; d];
        let mut m2 = vec![0.0f64; d];
        for (k, row) in x.rows().into_iter().enumerate() {
            let count = (k + 1) as f64;
            for ((m, s), v) in mean.iter_mut().zip(m2.iter_mut()).zip(row.iter()) {
                let v = v.to_f64_lossless();
                let delta = v - *m;
                *m += delta / count;
                *s += delta * (v - *m);
            }
        }
        let mut std = Vec::with_capacity(d);
        let mut constant = Vec::with_capacity(d);
        for s in m2 {
            let sd = (s / (n - 1) as f64).sqrt();
            let flat = !(sd > 0.0) || T::lit(sd) == T::zero();
            constant.push(flat);
            std.push(if flat { T::one() } else { T::lit(sd) });
        }
        Ok(Self {
            mean: mean.into_iter().map(T::lit).collect(),
            std,
            constant,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, sample: &StackedSample<T>) -> Result<StackedSample<T>> {
        if sample.x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: sample.x.len(),
            });
        }
        let x = sample
            .x
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (*v - *m) / *s)
            .collect();
        Ok(StackedSample {
            x,
            y: sample.y,
            origin_t: sample.origin_t,
        })
    }

    pub fn apply_vec(&self, x: &mut [T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        for (v, (m, s)) in x.iter_mut().zip(self.mean.iter().zip(&self.std)) {
            *v = (*v - *m) / *s;
        }
        Ok(())
    }

    /// Normalizes every row of the set in place.
    pub fn apply_set(&self, set: &mut SampleSet<T>) -> Result<()> {
        if set.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: set.dim(),
            });
        }
        for mut row in set.x.rows_mut() {
            for (v, (m, s)) in row.iter_mut().zip(self.mean.iter().zip(&self.std)) {
                *v = (*v - *m) / *s;
            }
        }
        Ok(())
    }
}

const CACHE_MAGIC: &[u8; 8] = b"WSSTACK1";

/// Writes a sample cache: magic, `D` and count as little-endian u64, then per
/// sample `D` little-endian f32 values followed by one label byte.
pub fn write_cache<T: Scalar>(set: &SampleSet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&(set.dim() as u64).to_le_bytes())?;
        out.write_all(&(set.len() as u64).to_le_bytes())?;
        for (row, y) in set.x.rows().into_iter().zip(&set.y) {
            for v in row {
                out.write_all(&v.to_f32_lossy().to_le_bytes())?;
            }
            out.write_all(&[u8::from(*y)])?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Reads a sample cache back as `(x, labels)`.
pub fn read_cache(path: impl AsRef<Path>) -> Result<(Array2<f32>, Vec<bool>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut header = [0u8; 24];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if &header[..8] != CACHE_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let dim = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    let mut x = Array2::zeros((count, dim));
    let mut y = Vec::with_capacity(count);
    let mut buf = vec![0u8; dim * 4 + 1];
    for mut row in x.rows_mut() {
        input
            .read_exact(&mut buf)
            .map_err(|_| Error::format(path, "truncated body"))?;
        for (v, chunk) in row.iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        y.push(match buf[dim * 4] {
            0 => false,
            1 => true,
            b => return Err(Error::format(path, format!("bad label byte {b}"))),
        });
    }
    if input.read(&mut [0u8; 1]).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes"));
    }
    Ok((x, y))
}
