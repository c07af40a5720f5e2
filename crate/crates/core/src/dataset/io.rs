use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::{ClimateRecord, Dataset, FeatureSchema};
use crate::error::{Error, Result};

const BASE_COLUMNS: [&str; 5] = ["timestamp", "co2", "t_indoor", "rh", "window_open"];

/// Reads a series from CSV.
///
/// Required columns are `timestamp`, `co2`, `t_indoor`, `rh`, `window_open`
/// followed by the schema's extra static columns; the header must not name any
/// other column. Rows may appear in any order and are sorted by timestamp.
/// Row numbers in errors are 1-based data rows (the header is row 0).
pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();

    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let base: Vec<usize> = BASE_COLUMNS.iter().map(|c| column(c)).collect::<Result<_>>()?;
    let extra: Vec<usize> = schema
        .extra_names()
        .iter()
        .map(|c| column(c))
        .collect::<Result<_>>()?;
    if headers.len() != BASE_COLUMNS.len() + extra.len() {
        let unknown: Vec<&str> = headers
            .iter()
            .filter(|h| !BASE_COLUMNS.contains(h) && !schema.extra_names().iter().any(|n| n == h))
            .collect();
        return Err(Error::Schema(format!(
            "unexpected or duplicate columns in header: {unknown:?}"
        )));
    }

    let mut records = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let row_no = k + 1;
        let row = row?;
        let cell = |idx: usize| row.get(idx).unwrap_or("");
        let parse_f64 = |idx: usize| -> Result<f64> {
            let raw = cell(idx);
            raw.parse::<f64>().map_err(|_| Error::ParseCell {
                row: row_no,
                column: headers[idx].to_string(),
                value: raw.to_string(),
            })
        };
        let timestamp = parse_timestamp(cell(base[0])).ok_or_else(|| Error::ParseCell {
            row: row_no,
            column: "timestamp".into(),
            value: cell(base[0]).to_string(),
        })?;
        let window_open = match cell(base[4]) {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(Error::ParseCell {
                    row: row_no,
                    column: "window_open".into(),
                    value: other.to_string(),
                })
            }
        };
        records.push((
            row_no,
            ClimateRecord {
                timestamp,
                co2: parse_f64(base[1])?,
                t_indoor: parse_f64(base[2])?,
                rh: parse_f64(base[3])?,
                static_features: extra.iter().map(|&i| parse_f64(i)).collect::<Result<_>>()?,
                window_open,
            },
        ));
    }

    records.sort_by_key(|(_, r)| r.timestamp);
    if let Some(w) = records.windows(2).find(|w| w[0].1.timestamp == w[1].1.timestamp) {
        return Err(Error::DuplicateTimestamp(w[1].1.timestamp));
    }
    // Re-run validation with the original row numbers for better messages.
    for (row_no, r) in &records {
        Dataset::new("", schema.clone(), vec![r.clone()]).map_err(|e| match e {
            Error::InvalidRecord { reason, .. } => Error::InvalidRecord {
                row: *row_no,
                reason,
            },
            other => other,
        })?;
    }
    let series_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(
        series_id,
        schema.clone(),
        records.into_iter().map(|(_, r)| r).collect(),
    )
}

/// Integer minutes since epoch, or an ISO-8601 date-time on a whole minute.
fn parse_timestamp(raw: &str) -> Option<i64> {
    if let Ok(m) = raw.parse::<i64>() {
        return Some(m);
    }
    let seconds = if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        dt.timestamp()
    } else {
        ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
            .iter()
            .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())?
            .and_utc()
            .timestamp()
    };
    (seconds % 60 == 0).then_some(seconds.div_euclid(60))
}

/// Writes a series in the format read by [`load_csv`], timestamps as integer minutes.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        write!(out, "{}", BASE_COLUMNS.join(","))?;
        for name in dataset.schema().extra_names() {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for r in dataset.records() {
            write!(
                out,
                "{},{},{},{},{}",
                r.timestamp,
                r.co2,
                r.t_indoor,
                r.rh,
                u8::from(r.window_open)
            )?;
            for v in &r.static_features {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}
