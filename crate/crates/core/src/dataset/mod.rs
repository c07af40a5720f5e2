//! Minute-resolution indoor climate series.
//!
//! A [`Dataset`] is an ordered, validated list of [`ClimateRecord`]s for one
//! monitored room. Records are never imputed: missing minutes show up as gaps
//! (see [`find_gaps`]) and downstream stacking refuses windows that cross them.

mod io;
pub mod synthetic;

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_csv, write_csv};
pub use synthetic::{
    generate_synthetic, read_trigger_log, write_trigger_log, SyntheticConfig, SyntheticOutput,
    TriggerCause, TriggerEvent,
};

/// Indoor channels in the fixed block order used by stacking and weight maps.
pub const INDOOR_CHANNELS: [&str; 3] = ["co2", "rh", "t_indoor"];

/// One minute of sensor data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateRecord {
    /// Minutes since the Unix epoch.
    pub timestamp: i64,
    pub co2: f64,
    pub t_indoor: f64,
    pub rh: f64,
    /// Non-indoor static features in schema order (`FeatureSchema::extra_names`).
    pub static_features: Vec<f64>,
    pub window_open: bool,
}

impl ClimateRecord {
    /// Value of indoor channel `k` in [`INDOOR_CHANNELS`] order.
    #[inline]
    pub fn indoor(&self, k: usize) -> f64 {
        match k {
            0 => self.co2,
            1 => self.rh,
            2 => self.t_indoor,
            _ => panic!("indoor channel index {k} out of range"),
        }
    }
}

/// Names of the features that form the static block of a stacked sample.
///
/// The first three static names are always the indoor channels at the
/// observation step (`co2`, `rh`, `t_indoor`); they are read from the
/// record's indoor fields. The remaining names map onto
/// `ClimateRecord::static_features` in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct FeatureSchema {
    static_names: Vec<String>,
}

impl FeatureSchema {
    pub fn new<S: Into<String>>(static_names: impl IntoIterator<Item = S>) -> Result<Self> {
        let static_names: Vec<String> = static_names.into_iter().map(Into::into).collect();
        if static_names.len() < 3 {
            return Err(Error::Schema(format!(
                "need at least the 3 indoor channels, got {} names",
                static_names.len()
            )));
        }
        for (k, expected) in INDOOR_CHANNELS.iter().enumerate() {
            if static_names[k] != *expected {
                return Err(Error::Schema(format!(
                    "static name {k} must be `{expected}`, found `{}`",
                    static_names[k]
                )));
            }
        }
        let mut seen = HashSet::new();
        for name in &static_names {
            if name.is_empty() {
                return Err(Error::Schema("empty feature name".into()));
            }
            if is_reserved_column(name) && !INDOOR_CHANNELS.contains(&name.as_str()) {
                return Err(Error::Schema(format!("`{name}` is a reserved column")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{name}`")));
            }
        }
        Ok(Self { static_names })
    }

    /// The 21-feature schema emitted by the synthetic generator.
    pub fn default_synthetic() -> Self {
        let names = INDOOR_CHANNELS
            .iter()
            .copied()
            .chain(synthetic::EXTRA_STATIC_NAMES.iter().copied());
        Self::new(names).expect("built-in schema is valid")
    }

    /// Static block width, indoor-at-t channels included.
    pub fn n_static(&self) -> usize {
        self.static_names.len()
    }

    pub fn static_names(&self) -> &[String] {
        &self.static_names
    }

    /// Static names stored in `ClimateRecord::static_features`.
    pub fn extra_names(&self) -> &[String] {
        &self.static_names[3..]
    }

    pub fn n_extra(&self) -> usize {
        self.static_names.len() - 3
    }

    pub fn indoor_sequence_names(&self) -> [&'static str; 3] {
        INDOOR_CHANNELS
    }
}

impl TryFrom<Vec<String>> for FeatureSchema {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<FeatureSchema> for Vec<String> {
    fn from(schema: FeatureSchema) -> Self {
        schema.static_names
    }
}

pub(crate) fn is_reserved_column(name: &str) -> bool {
    matches!(name, "timestamp" | "co2" | "t_indoor" | "rh" | "window_open")
}

/// A validated minute-resolution series for one room.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    series_id: String,
    schema: FeatureSchema,
    records: Vec<ClimateRecord>,
}

impl Dataset {
    /// Builds a dataset, checking schema conformance and strict timestamp order.
    pub fn new(
        series_id: impl Into<String>,
        schema: FeatureSchema,
        records: Vec<ClimateRecord>,
    ) -> Result<Self> {
        for (row, pair) in records.windows(2).enumerate() {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(if pair[1].timestamp == pair[0].timestamp {
                    Error::DuplicateTimestamp(pair[1].timestamp)
                } else {
                    Error::InvalidRecord {
                        row: row + 1,
                        reason: "timestamps not strictly increasing".into(),
                    }
                });
            }
        }
        for (row, r) in records.iter().enumerate() {
            validate_record(r, &schema).map_err(|reason| Error::InvalidRecord { row, reason })?;
        }
        Ok(Self {
            series_id: series_id.into(),
            schema,
            records,
        })
    }

    pub fn series_id(&self) -> &str {
        &self.series_id
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn records(&self) -> &[ClimateRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.records.iter().map(|r| r.timestamp).collect()
    }

    pub fn window_states(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.window_open).collect()
    }

    /// First and last timestamp, if any.
    pub fn time_range(&self) -> Option<(i64, i64)> {
        Some((self.records.first()?.timestamp, self.records.last()?.timestamp))
    }

    /// Index of the record at `timestamp`.
    pub fn index_of(&self, timestamp: i64) -> Option<usize> {
        self.records
            .binary_search_by_key(&timestamp, |r| r.timestamp)
            .ok()
    }

    /// Maximal index ranges whose timestamps advance by exactly one minute.
    pub fn segments(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        if self.records.is_empty() {
            return out;
        }
        let mut start = 0;
        for k in 1..self.records.len() {
            if self.records[k].timestamp - self.records[k - 1].timestamp != 1 {
                out.push(start..k);
                start = k;
            }
        }
        out.push(start..self.records.len());
        out
    }

    /// Sub-dataset over an index range. Sub-ranges of a valid dataset stay valid.
    pub fn slice(&self, range: Range<usize>, series_id: impl Into<String>) -> Dataset {
        Dataset {
            series_id: series_id.into(),
            schema: self.schema.clone(),
            records: self.records[range].to_vec(),
        }
    }
}

fn validate_record(r: &ClimateRecord, schema: &FeatureSchema) -> std::result::Result<(), String> {
    if r.static_features.len() != schema.n_extra() {
        return Err(format!(
            "expected {} static features, found {}",
            schema.n_extra(),
            r.static_features.len()
        ));
    }
    if !(r.co2.is_finite() && r.co2 >= 0.0) {
        return Err(format!("co2 must be finite and >= 0, got {}", r.co2));
    }
    if !r.t_indoor.is_finite() {
        return Err(format!("t_indoor must be finite, got {}", r.t_indoor));
    }
    if !(r.rh.is_finite() && (0.0..=100.0).contains(&r.rh)) {
        return Err(format!("rh must lie in [0, 100], got {}", r.rh));
    }
    if let Some(k) = r.static_features.iter().position(|v| !v.is_finite()) {
        return Err(format!(
            "static feature `{}` is not finite",
            schema.extra_names()[k]
        ));
    }
    Ok(())
}

/// A hole in the series: the last timestamp before it and the jump length in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub start: i64,
    pub len: i64,
}

/// Every place where consecutive timestamps differ by more than one minute.
pub fn find_gaps(dataset: &Dataset) -> Vec<Gap> {
    dataset
        .records
        .windows(2)
        .filter_map(|w| {
            let dt = w[1].timestamp - w[0].timestamp;
            (dt > 1).then_some(Gap {
                start: w[0].timestamp,
                len: dt,
            })
        })
        .collect()
}

/// Train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = Self { train, val, test };
        f.validate()?;
        Ok(f)
    }

    /// Fractions proportional to raw split sizes, e.g. data-point counts.
    pub fn from_counts(train: f64, val: f64, test: f64) -> Result<Self> {
        let total = train + val + test;
        if !(total > 0.0) {
            return Err(Error::Split("counts must have a positive sum".into()));
        }
        Self::new(train / total, val / total, test / total)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Split(format!(
                "fractions must be positive, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

/// Chronological three-way split: train is earliest, test latest.
pub fn split(dataset: &Dataset, fractions: SplitFractions) -> Result<(Dataset, Dataset, Dataset)> {
    fractions.validate()?;
    let n = dataset.len();
    let n_train = (n as f64 * fractions.train).round() as usize;
    let n_val = (n as f64 * fractions.val).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Split(format!(
            "{n} records cannot be split into three non-empty parts with {fractions:?}"
        )));
    }
    let id = dataset.series_id();
    Ok((
        dataset.slice(0..n_train, format!("{id}/train")),
        dataset.slice(n_train..n_train + n_val, format!("{id}/val")),
        dataset.slice(n_train + n_val..n, format!("{id}/test")),
    ))
}

/// Channel means and window-behavior rates of a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean_co2: f64,
    pub mean_t_indoor: f64,
    pub mean_rh: f64,
    /// Closed-to-open transitions between consecutive minutes, per hour of records.
    pub actions_per_hour: f64,
    pub open_fraction: f64,
}

impl SummaryStats {
    pub fn actions_per_day(&self) -> f64 {
        self.actions_per_hour * 24.0
    }
}

pub fn summary_stats(dataset: &Dataset) -> Result<SummaryStats> {
    let records = dataset.records();
    if records.is_empty() {
        return Err(Error::Empty("summary_stats needs at least one record".into()));
    }
    let n = records.len() as f64;
    let mean = |f: fn(&ClimateRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let actions = records
        .windows(2)
        .filter(|w| w[1].timestamp - w[0].timestamp == 1 && !w[0].window_open && w[1].window_open)
        .count();
    let open = records.iter().filter(|r| r.window_open).count();
    Ok(SummaryStats {
        mean_co2: mean(|r| r.co2),
        mean_t_indoor: mean(|r| r.t_indoor),
        mean_rh: mean(|r| r.rh),
        actions_per_hour: actions as f64 / (n / 60.0),
        open_fraction: open as f64 / n,
    })
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use proptest::prelude::*;

    fn brute_force_gaps(ts: &[i64]) -> Vec<Gap> {
        let mut out = Vec::new();
        for a in 0..ts.len() {
            for b in a + 1..ts.len() {
                if b == a + 1 && ts[b] - ts[a] > 1 {
                    out.push(Gap {
                        start: ts[a],
                        len: ts[b] - ts[a],
                    });
                }
            }
        }
        out
    }

    #[test]
    fn gaps_on_contiguous_series_is_empty() {
        assert!(find_gaps(&series(&[0, 1, 2, 3])).is_empty());
    }

    #[test]
    fn single_gap_reports_delta() {
        assert_eq!(
            find_gaps(&series(&[0, 1, 5, 6])),
            vec![Gap { start: 1, len: 4 }]
        );
    }

    #[test]
    fn two_gaps_match_pairwise_oracle() {
        let ts = [0, 3, 10];
        let gaps = find_gaps(&series(&ts));
        assert_eq!(gaps, brute_force_gaps(&ts));
        assert_eq!(
            gaps,
            vec![Gap { start: 0, len: 3 }, Gap { start: 3, len: 7 }]
        );
    }

    #[test]
    fn split_exact_division() {
        let ts: Vec<i64> = (0..100).collect();
        let (a, b, c) = split(&series(&ts), SplitFractions::new(0.6, 0.2, 0.2).unwrap()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (60, 20, 20));
        assert_eq!(a.records().last().unwrap().timestamp, 59);
        assert_eq!(b.records()[0].timestamp, 60);
        assert_eq!(c.records()[0].timestamp, 80);
    }

    #[test]
    fn split_rejects_bad_sum() {
        assert!(matches!(
            SplitFractions::new(0.5, 0.5, 0.1),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn split_rejects_tiny_dataset() {
        let err = split(&series(&[0, 1]), SplitFractions::default()).unwrap_err();
        assert!(matches!(err, Error::Split(_)));
    }

    #[test]
    fn sample_count_ratio() {
        let f = SplitFractions::from_counts(600e3, 4e6, 15e6).unwrap();
        assert!((f.train - 0.0306).abs() < 1e-3);
        assert!((f.val - 0.2041).abs() < 1e-3);
        assert!((f.test - 0.7653).abs() < 1e-3);
    }

    #[test]
    fn constant_series_summary() {
        let records = (0..10)
            .map(|t| ClimateRecord {
                timestamp: t,
                co2: 514.0,
                t_indoor: 22.9,
                rh: 38.5,
                static_features: vec![],
                window_open: false,
            })
            .collect();
        let ds = Dataset::new("c", schema3(), records).unwrap();
        let s = summary_stats(&ds).unwrap();
        assert!((s.mean_co2 - 514.0).abs() < 1e-9);
        assert!((s.mean_t_indoor - 22.9).abs() < 1e-9);
        assert!((s.mean_rh - 38.5).abs() < 1e-9);
        assert_eq!(s.actions_per_hour, 0.0);
        assert_eq!(s.open_fraction, 0.0);
    }

    #[test]
    fn alternating_series_summary() {
        let records = [false, true, false, true]
            .iter()
            .enumerate()
            .map(|(t, &open)| ClimateRecord {
                window_open: open,
                ..record(t as i64, open)
            })
            .collect();
        let ds = Dataset::new("alt", schema3(), records).unwrap();
        let s = summary_stats(&ds).unwrap();
        // 2 actions over 4 minutes
        assert!((s.actions_per_hour - 2.0 / (4.0 / 60.0)).abs() < 1e-9);
        assert_eq!(s.open_fraction, 0.5);
    }

    #[test]
    fn schema_rejects_wrong_indoor_order() {
        assert!(FeatureSchema::new(["co2", "t_indoor", "rh"]).is_err());
        assert!(FeatureSchema::new(["co2", "rh", "t_indoor", "x", "x"]).is_err());
        assert_eq!(FeatureSchema::default_synthetic().n_static(), 21);
    }

    #[test]
    fn dataset_rejects_bad_records() {
        let mut r = record(0, false);
        r.rh = 120.0;
        assert!(Dataset::new("x", schema3(), vec![r]).is_err());
        let dup = vec![record(1, false), record(1, true)];
        assert!(matches!(
            Dataset::new("x", schema3(), dup),
            Err(Error::DuplicateTimestamp(1))
        ));
    }

    proptest! {
        #[test]
        fn split_pieces_partition_input(
            steps in proptest::collection::vec(1i64..4, 10..200),
            train in 0.2f64..0.6,
            val in 0.1f64..0.3,
        ) {
            let mut ts = vec![0i64];
            for s in &steps { ts.push(ts.last().unwrap() + s); }
            let ds = series(&ts);
            let fr = SplitFractions::new(train, val, 1.0 - train - val).unwrap();
            let (a, b, c) = split(&ds, fr).unwrap();
            prop_assert!(a.records().last().unwrap().timestamp < b.records()[0].timestamp);
            prop_assert!(b.records().last().unwrap().timestamp < c.records()[0].timestamp);
            let joined: Vec<_> = a.records().iter().chain(b.records()).chain(c.records()).cloned().collect();
            prop_assert_eq!(joined.as_slice(), ds.records());
            let n = ds.len() as f64;
            prop_assert!((a.len() as f64 - n * train).abs() <= 1.0);
            prop_assert!((b.len() as f64 - n * val).abs() <= 1.0);
        }

        #[test]
        fn gaps_empty_iff_max_step_is_one(steps in proptest::collection::vec(1i64..3, 1..100)) {
            let mut ts = vec![5i64];
            for s in &steps { ts.push(ts.last().unwrap() + s); }
            let gaps = find_gaps(&series(&ts));
            let max_step = ts.windows(2).map(|w| w[1] - w[0]).max().unwrap();
            prop_assert_eq!(gaps.is_empty(), max_step == 1);
            prop_assert_eq!(gaps, brute_force_gaps(&ts));
        }
    }
}
