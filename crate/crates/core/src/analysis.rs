//! Interpretability artifacts for trained models: zero-weight fractions,
//! first-layer weight maps by feature block, and correctly predicted
//! opening episodes for manual inspection.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::synthetic::TriggerEvent;
use crate::dataset::{Dataset, FeatureSchema, INDOOR_CHANNELS};
use crate::error::{Error, Result};
use crate::evaluation::fmt_num;
use crate::network::Mlp;
use crate::scalar::Scalar;
use crate::stacking::{input_dim, stack_all, Horizon, Normalizer};

/// Magnitudes at or below this count as "near zero" in diagnostics.
pub const NEAR_ZERO: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    /// 1-based; layer 1 connects the inputs to the first hidden layer.
    pub layer: usize,
    pub total: usize,
    pub zeros: usize,
    pub near_zeros: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub layers: Vec<LayerSparsity>,
    pub total: usize,
    pub zeros: usize,
    pub near_zeros: usize,
    pub fraction: f64,
}

pub fn zero_fractions<T: Scalar>(mlp: &Mlp<T>) -> SparsityReport {
    let layers: Vec<LayerSparsity> = mlp
        .layers()
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let total = l.weights.len();
            let zeros = l.weights.iter().filter(|w| **w == T::zero()).count();
            let near_zeros = l
                .weights
                .iter()
                .filter(|w| w.to_f64_lossless().abs() <= NEAR_ZERO)
                .count();
            LayerSparsity {
                layer: k + 1,
                total,
                zeros,
                near_zeros,
                fraction: zeros as f64 / total as f64,
            }
        })
        .collect();
    let total = layers.iter().map(|l| l.total).sum();
    let zeros = layers.iter().map(|l| l.zeros).sum();
    SparsityReport {
        near_zeros: layers.iter().map(|l| l.near_zeros).sum(),
        fraction: zeros as f64 / total as f64,
        total,
        zeros,
        layers,
    }
}

impl SparsityReport {
    /// `layer,total,zeros,fraction`, one row per layer plus an `all` row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["layer", "total", "zeros", "fraction"])?;
        for l in &self.layers {
            w.write_record([
                l.layer.to_string(),
                l.total.to_string(),
                l.zeros.to_string(),
                fmt_num(l.fraction),
            ])?;
        }
        w.write_record([
            "all".to_string(),
            self.total.to_string(),
            self.zeros.to_string(),
            fmt_num(self.fraction),
        ])?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Static,
    Co2,
    Rh,
    TIndoor,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::Static, Block::Co2, Block::Rh, Block::TIndoor];

    pub fn as_str(self) -> &'static str {
        match self {
            Block::Static => "static",
            Block::Co2 => "co2",
            Block::Rh => "rh",
            Block::TIndoor => "t_indoor",
        }
    }

    fn sequence(channel: &str) -> Block {
        match channel {
            "co2" => Block::Co2,
            "rh" => Block::Rh,
            _ => Block::TIndoor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub block: Block,
    /// First input column of the block.
    pub start: usize,
    pub width: usize,
    pub mean_abs: f64,
    pub nonzero_fraction: f64,
}

/// Absolute first-layer weights, `neurons × columns`, with column blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub abs: Array2<f64>,
    pub column_names: Vec<String>,
    pub column_blocks: Vec<Block>,
    pub blocks: Vec<BlockSummary>,
}

/// Input column names in stacking order: statics at `t`, then each indoor
/// channel at `t-1 … t-i`.
pub fn column_names(schema: &FeatureSchema, seq_minutes: usize) -> Vec<String> {
    let mut names: Vec<String> = schema.static_names().to_vec();
    for ch in INDOOR_CHANNELS {
        names.extend((1..=seq_minutes).map(|b| format!("{ch}_t-{b}")));
    }
    names
}

pub fn first_layer_map<T: Scalar>(mlp: &Mlp<T>, schema: &FeatureSchema, seq_minutes: usize) -> Result<WeightMap> {
    let d = input_dim(schema.n_static(), seq_minutes);
    if mlp.input_dim() != d {
        return Err(Error::Dimension {
            expected: d,
            actual: mlp.input_dim(),
        });
    }
    let w1 = &mlp.layers()[0].weights;
    let abs = w1.t().mapv(|v| v.to_f64_lossless().abs());
    let mut column_blocks = vec![Block::Static; schema.n_static()];
    for ch in INDOOR_CHANNELS {
        column_blocks.extend(std::iter::repeat_n(Block::sequence(ch), seq_minutes));
    }
    let blocks = Block::ALL
        .iter()
        .map(|&b| {
            let start = column_blocks.iter().position(|c| *c == b).unwrap_or(0);
            let width = column_blocks.iter().filter(|c| **c == b).count();
            let cells = abs.slice(ndarray::s![.., start..start + width]);
            let n = cells.len().max(1) as f64;
            BlockSummary {
                block: b,
                start,
                width,
                mean_abs: cells.sum() / n,
                nonzero_fraction: cells.iter().filter(|v| **v != 0.0).count() as f64 / n,
            }
        })
        .collect();
    Ok(WeightMap {
        abs,
        column_names: column_names(schema, seq_minutes),
        column_blocks,
        blocks,
    })
}

impl WeightMap {
    pub fn block(&self, b: Block) -> &BlockSummary {
        self.blocks.iter().find(|s| s.block == b).expect("all blocks present")
    }

    /// Long format: `neuron,column,name,block,abs_weight`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["neuron", "column", "name", "block", "abs_weight"])?;
        for ((neuron, column), v) in self.abs.indexed_iter() {
            w.write_record([
                neuron.to_string(),
                column.to_string(),
                self.column_names[column].clone(),
                self.column_blocks[column].as_str().to_string(),
                fmt_num(*v),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `block,start,width,mean_abs,nonzero_fraction`
    pub fn write_blocks_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["block", "start", "width", "mean_abs", "nonzero_fraction"])?;
        for b in &self.blocks {
            w.write_record([
                b.block.as_str().to_string(),
                b.start.to_string(),
                b.width.to_string(),
                fmt_num(b.mean_abs),
                fmt_num(b.nonzero_fraction),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub timestamp: i64,
    pub co2: f64,
    pub rh: f64,
    pub t_indoor: f64,
    pub window_open: bool,
}

/// A correctly predicted opening with the indoor climate around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    /// Observation step the prediction was made at.
    pub origin: i64,
    /// Minute the prediction refers to (`origin + lag`); open and predicted open.
    pub target: i64,
    /// First open minute of the opening.
    pub onset: i64,
    /// Rule that opened the window, when a trigger log is available.
    pub cause: Option<String>,
    /// Minutes `origin - i ..= target`.
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudies {
    pub requested: usize,
    pub episodes: Vec<Episode>,
    /// Fewer episodes were available than requested.
    pub insufficient: bool,
}

/// Picks up to `n` openings (chronologically) that the model predicts
/// correctly. Per opening the earliest correct prediction whose trace
/// window `[origin - i, origin + l]` contains the onset is used.
pub fn extract_case_studies<T: Scalar>(
    mlp: &Mlp<T>,
    normalizer: &Normalizer<T>,
    dataset: &Dataset,
    horizon: Horizon,
    n: usize,
    triggers: Option<&[TriggerEvent]>,
) -> Result<CaseStudies> {
    let mut out = CaseStudies {
        requested: n,
        episodes: Vec::new(),
        insufficient: false,
    };
    if n == 0 {
        return Ok(out);
    }
    let mut set = stack_all::<T>(dataset, horizon);
    if set.dim() != mlp.input_dim() {
        return Err(Error::Dimension {
            expected: mlp.input_dim(),
            actual: set.dim(),
        });
    }
    normalizer.apply_set(&mut set)?;
    let predicted = if set.is_empty() {
        Vec::new()
    } else {
        mlp.predict_batch(set.x())?
    };
    let i = horizon.seq_minutes as i64;
    let l = horizon.lag_minutes as i64;
    let records = dataset.records();
    let onsets: Vec<i64> = (1..records.len())
        .filter(|&k| {
            records[k].window_open
                && !records[k - 1].window_open
                && records[k].timestamp == records[k - 1].timestamp + 1
        })
        .map(|k| records[k].timestamp)
        .collect();
    let origins = set.origins();
    let labels = set.labels();
    for onset in onsets {
        if out.episodes.len() == n {
            break;
        }
        // origins are sorted; candidates satisfy onset - l <= origin <= onset + i
        let from = origins.partition_point(|&o| o < onset - l);
        let hit = (from..origins.len())
            .take_while(|&k| origins[k] <= onset + i)
            .find(|&k| labels[k] && predicted[k] && target_in_run(dataset, onset, origins[k] + l));
        let Some(k) = hit else { continue };
        let origin = origins[k];
        let trace = (origin - i..=origin + l)
            .filter_map(|t| dataset.index_of(t))
            .map(|idx| {
                let r = &records[idx];
                TraceRow {
                    timestamp: r.timestamp,
                    co2: r.co2,
                    rh: r.rh,
                    t_indoor: r.t_indoor,
                    window_open: r.window_open,
                }
            })
            .collect();
        let cause = triggers.and_then(|ts| {
            ts.iter()
                .find(|e| e.timestamp == onset)
                .map(|e| e.cause.as_str().to_string())
        });
        out.episodes.push(Episode {
            origin,
            target: origin + l,
            onset,
            cause,
            trace,
        });
    }
    out.insufficient = out.episodes.len() < n;
    Ok(out)
}

/// True when every minute from `onset` to `target` is present and open.
fn target_in_run(dataset: &Dataset, onset: i64, target: i64) -> bool {
    target >= onset
        && (onset..=target).all(|t| {
            dataset
                .index_of(t)
                .is_some_and(|k| dataset.records()[k].window_open)
        })
}

impl CaseStudies {
    /// Writes `episode_NNN.csv` per episode plus an `episodes.csv` index.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let index_path = dir.join("episodes.csv");
        let mut index = csv::Writer::from_path(&index_path)?;
        index.write_record(["episode", "origin", "target", "onset", "cause", "file"])?;
        for (k, ep) in self.episodes.iter().enumerate() {
            let name = format!("episode_{k:03}.csv");
            let path = dir.join(&name);
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["timestamp", "minutes_from_origin", "co2", "rh", "t_indoor", "window_open"])?;
            for r in &ep.trace {
                w.write_record([
                    r.timestamp.to_string(),
                    (r.timestamp - ep.origin).to_string(),
                    fmt_num(r.co2),
                    fmt_num(r.rh),
                    fmt_num(r.t_indoor),
                    u8::from(r.window_open).to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            index.write_record([
                k.to_string(),
                ep.origin.to_string(),
                ep.target.to_string(),
                ep.onset.to_string(),
                ep.cause.clone().unwrap_or_default(),
                name,
            ])?;
        }
        index.flush().map_err(|e| Error::io(&index_path, e))
    }
}
