//! File formats: signal CSVs with JSON sidecars, feature CSVs, labeled
//! matrix CSVs, and model JSON. Every writer has a reader that accepts
//! exactly what it produces, and readers reject malformed input with the
//! offending line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::LabeledMatrix;
use crate::patterns::{Label, PatternClass, RECORD_FRAMES};
use crate::readout::ReadoutModel;
use crate::reservoir::{SignalRecord, SERIES_COUNT, SERIES_NAMES};
use crate::signal::QuantizedRecord;

/// Sidecar metadata stored next to each signal CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub class: PatternClass,
    pub variant: u8,
    /// Sensor-noise seed the record was produced under.
    pub seed: u64,
    pub config_hash: String,
}

impl RecordMeta {
    pub fn label(&self) -> Label {
        Label::new(self.class, self.variant)
    }
}

/// A trained readout plus everything needed to apply it to fresh records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub model: ReadoutModel,
    /// Global normalization scalar fitted on the training features.
    pub scalar: f64,
    pub config_hash: String,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Sidecar path for a signal CSV: same name, `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn parse_cell(path: &Path, line: usize, column: &str, cell: &str) -> Result<f64> {
    let value: f64 = cell.parse().map_err(|_| {
        Error::data(format!(
            "{}:{line}: column {column}: '{cell}' is not a number",
            path.display()
        ))
    })?;
    if !value.is_finite() {
        return Err(Error::data(format!(
            "{}:{line}: column {column}: non-finite value {cell}",
            path.display()
        )));
    }
    Ok(value)
}

/// Shortest decimal form that parses back to the same float.
fn fmt_f64(value: f64) -> String {
    format!("{value}")
}

/// Write one record as CSV (frame column plus the nine series) and its
/// sidecar JSON next to it.
pub fn write_signal_csv(record: &SignalRecord, meta: &RecordMeta, csv_path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(csv_path).map_err(Error::from)?;
    let mut header = vec!["frame"];
    header.extend(SERIES_NAMES);
    writer.write_record(&header)?;
    for frame in 0..record.frames() {
        let mut row = vec![frame.to_string()];
        row.extend(record.series.iter().map(|s| fmt_f64(s[frame])));
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(csv_path, e))?;
    write_json(&sidecar_path(csv_path), meta)
}

/// Read a signal CSV and its sidecar back into a labeled record. The file
/// must carry the exact header, one row per frame in order, and a full
/// 1800-frame trace.
pub fn read_signal_csv(csv_path: &Path) -> Result<(SignalRecord, RecordMeta)> {
    let meta: RecordMeta = read_json(&sidecar_path(csv_path))?;
    let label = meta.label();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path)
        .map_err(Error::from)?;
    let header = reader.headers().map_err(Error::from)?.clone();
    let mut expected = vec!["frame"];
    expected.extend(SERIES_NAMES);
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::data(format!(
            "{}:1: header is [{}], expected [{}]",
            csv_path.display(),
            header.iter().collect::<Vec<_>>().join(","),
            expected.join(",")
        )));
    }

    let mut series = vec![Vec::with_capacity(RECORD_FRAMES); SERIES_COUNT];
    for (index, row) in reader.records().enumerate() {
        let line = index + 2;
        let row = row.map_err(Error::from)?;
        if row.len() != SERIES_COUNT + 1 {
            return Err(Error::data(format!(
                "{}:{line}: {} fields, expected {}",
                csv_path.display(),
                row.len(),
                SERIES_COUNT + 1
            )));
        }
        let frame: usize = row[0].parse().map_err(|_| {
            Error::data(format!(
                "{}:{line}: column frame: '{}' is not a number",
                csv_path.display(),
                &row[0]
            ))
        })?;
        if frame != index {
            return Err(Error::data(format!(
                "{}:{line}: frame {frame} out of order, expected {index}",
                csv_path.display()
            )));
        }
        for (i, name) in SERIES_NAMES.iter().enumerate() {
            series[i].push(parse_cell(csv_path, line, name, &row[i + 1])?);
        }
    }
    if series[0].len() != RECORD_FRAMES {
        return Err(Error::data(format!(
            "{}: {} frames, expected {RECORD_FRAMES}",
            csv_path.display(),
            series[0].len()
        )));
    }
    Ok((SignalRecord { label, series }, meta))
}

/// Write featurized records: feature columns, then class, variant, and the
/// synthetic flag.
pub fn write_features_csv(records: &[QuantizedRecord], path: &Path) -> Result<()> {
    let Some(first) = records.first() else {
        return Err(Error::data("no records to write"));
    };
    let width = first.features.len();
    if records.iter().any(|r| r.features.len() != width) {
        return Err(Error::data("records have differing feature lengths"));
    }
    let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
    let mut header: Vec<String> = (0..width).map(|i| format!("feature_{i}")).collect();
    header.extend(["class", "variant", "synthetic"].map(String::from));
    writer.write_record(&header)?;
    for record in records {
        let mut row: Vec<String> = record.features.iter().map(|&v| fmt_f64(v)).collect();
        row.push(record.label.class.label().to_string());
        row.push(record.label.variant.to_string());
        row.push(record.synthetic.to_string());
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features_csv(path: &Path) -> Result<Vec<QuantizedRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(Error::from)?;
    let header = reader.headers().map_err(Error::from)?.clone();
    let columns: Vec<&str> = header.iter().collect();
    let width = columns.len().saturating_sub(3);
    let mut expected: Vec<String> = (0..width).map(|i| format!("feature_{i}")).collect();
    expected.extend(["class", "variant", "synthetic"].map(String::from));
    if width == 0 || columns != expected {
        return Err(Error::data(format!(
            "{}:1: header is [{}], expected feature_0..feature_N,class,variant,synthetic",
            path.display(),
            columns.join(",")
        )));
    }

    let mut records = Vec::new();
    for (index, row) in reader.records().enumerate() {
        let line = index + 2;
        let row = row.map_err(Error::from)?;
        if row.len() != width + 3 {
            return Err(Error::data(format!(
                "{}:{line}: {} fields, expected {}",
                path.display(),
                row.len(),
                width + 3
            )));
        }
        let mut features = Vec::with_capacity(width);
        for i in 0..width {
            features.push(parse_cell(path, line, &expected[i], &row[i])?);
        }
        let class: PatternClass = row[width].parse().map_err(|_| {
            Error::data(format!(
                "{}:{line}: unknown class '{}'",
                path.display(),
                &row[width]
            ))
        })?;
        let variant: u8 = row[width + 1].parse().map_err(|_| {
            Error::data(format!(
                "{}:{line}: variant '{}' is not an integer",
                path.display(),
                &row[width + 1]
            ))
        })?;
        let synthetic: bool = row[width + 2].parse().map_err(|_| {
            Error::data(format!(
                "{}:{line}: synthetic flag '{}' is not true/false",
                path.display(),
                &row[width + 2]
            ))
        })?;
        records.push(QuantizedRecord {
            label: Label::new(class, variant),
            features,
            synthetic,
        });
    }
    if records.is_empty() {
        return Err(Error::data(format!("{}: no data rows", path.display())));
    }
    Ok(records)
}

/// Write a labeled matrix: empty corner cell, column labels across, one
/// labeled row per line.
pub fn write_matrix_csv(matrix: &LabeledMatrix, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::from)?;
    let mut header = vec![String::new()];
    header.extend(matrix.col_labels.iter().cloned());
    writer.write_record(&header)?;
    for (label, row) in matrix.row_labels.iter().zip(&matrix.values) {
        let mut record = vec![label.clone()];
        record.extend(row.iter().map(|&v| fmt_f64(v)));
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<LabeledMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(Error::from)?;
    let header = reader.headers().map_err(Error::from)?.clone();
    if header.is_empty() || !header[0].is_empty() {
        return Err(Error::data(format!(
            "{}:1: matrix header must start with an empty corner cell",
            path.display()
        )));
    }
    let col_labels: Vec<String> = header.iter().skip(1).map(String::from).collect();

    let mut row_labels = Vec::new();
    let mut values = Vec::new();
    for (index, row) in reader.records().enumerate() {
        let line = index + 2;
        let row = row.map_err(Error::from)?;
        if row.len() != col_labels.len() + 1 {
            return Err(Error::data(format!(
                "{}:{line}: {} fields, expected {}",
                path.display(),
                row.len(),
                col_labels.len() + 1
            )));
        }
        row_labels.push(row[0].to_string());
        let mut numbers = Vec::with_capacity(col_labels.len());
        for (i, label) in col_labels.iter().enumerate() {
            numbers.push(parse_cell(path, line, label, &row[i + 1])?);
        }
        values.push(numbers);
    }
    if values.is_empty() {
        return Err(Error::data(format!("{}: no data rows", path.display())));
    }
    Ok(LabeledMatrix::new(row_labels, col_labels, values))
}
