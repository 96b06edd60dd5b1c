//! Featurization of raw signal records: interval quantization, gray-world
//! white balance, global scalar normalization, and mean-absolute-difference
//! scoring between records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{GroupBy, LabeledMatrix};
use crate::patterns::{pairwise_matrix, HasLabel, Label, RECORD_FRAMES};
use crate::reservoir::{Area, SignalRecord, CHANNEL_COUNT, SERIES_NAMES};

/// How a record's series are collapsed into features: each selected
/// detection area contributes its three channels, each averaged over `q`
/// equal time intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizationConfig {
    pub q: usize,
    pub areas: Vec<Area>,
}

impl QuantizationConfig {
    pub fn new(q: usize, areas: &[Area]) -> Result<Self> {
        let cfg = QuantizationConfig {
            q,
            areas: areas.to_vec(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || RECORD_FRAMES % self.q != 0 {
            return Err(Error::config(format!(
                "quantization level q={} must divide the {RECORD_FRAMES}-frame record evenly",
                self.q
            )));
        }
        if self.areas.is_empty() {
            return Err(Error::config("no detection areas selected"));
        }
        let mut seen = self.areas.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.areas.len() {
            return Err(Error::config("detection areas listed twice"));
        }
        Ok(())
    }

    /// Signal series used per record (three channels per selected area).
    pub fn series_count(&self) -> usize {
        CHANNEL_COUNT * self.areas.len()
    }

    /// Length of the feature vector: `q` interval means per used series.
    pub fn features_per_record(&self) -> usize {
        self.q * self.series_count()
    }

    /// Feature names in vector order: area-major, then channel, then
    /// interval (e.g. `D1_G_t3`).
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.features_per_record());
        for area in &self.areas {
            for channel in 0..CHANNEL_COUNT {
                let series = SERIES_NAMES[area.index() * CHANNEL_COUNT + channel];
                for interval in 0..self.q {
                    names.push(format!("{series}_t{interval}"));
                }
            }
        }
        names
    }
}

/// A featurized record. `synthetic` marks augmented copies, which must
/// never end up in a test split.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedRecord {
    pub label: Label,
    pub features: Vec<f64>,
    pub synthetic: bool,
}

impl HasLabel for QuantizedRecord {
    fn label(&self) -> Label {
        self.label
    }
}

/// Collapse one record into its feature vector: per selected series, the
/// mean of each of the `q` equal-length intervals, in config order.
pub fn quantize(record: &SignalRecord, config: &QuantizationConfig) -> Result<QuantizedRecord> {
    config.validate()?;
    let frames = record.frames();
    if frames == 0 || frames % config.q != 0 {
        return Err(Error::data(format!(
            "record {} has {frames} frames, not divisible into {} intervals",
            record.label, config.q
        )));
    }
    let width = frames / config.q;
    let mut features = Vec::with_capacity(config.features_per_record());
    for area in &config.areas {
        for channel in 0..CHANNEL_COUNT {
            let series = &record.series[area.index() * CHANNEL_COUNT + channel];
            for interval in 0..config.q {
                let chunk = &series[interval * width..(interval + 1) * width];
                features.push(chunk.iter().sum::<f64>() / width as f64);
            }
        }
    }
    Ok(QuantizedRecord {
        label: record.label,
        features,
        synthetic: false,
    })
}

pub fn quantize_corpus(
    records: &[SignalRecord],
    config: &QuantizationConfig,
) -> Result<Vec<QuantizedRecord>> {
    records.iter().map(|r| quantize(r, config)).collect()
}

pub struct WhiteBalanceOutcome {
    pub record: SignalRecord,
    /// Frames left untouched because a channel mean was not positive.
    pub skipped_frames: usize,
}

/// Per-frame gray-world white balance across the nine series: each camera
/// channel is scaled so its mean over the three areas matches the frame's
/// global mean, then clamped to the 8-bit range. A diagnostic view; the
/// classification pipeline works on unbalanced signals.
pub fn white_balance(record: &SignalRecord) -> Result<WhiteBalanceOutcome> {
    if record.series.len() % CHANNEL_COUNT != 0 || record.series.is_empty() {
        return Err(Error::data(format!(
            "record {} has {} series, expected a multiple of {CHANNEL_COUNT}",
            record.label,
            record.series.len()
        )));
    }
    let areas = record.series.len() / CHANNEL_COUNT;
    let mut balanced = record.clone();
    let mut skipped_frames = 0;
    for frame in 0..record.frames() {
        let mut channel_mean = [0.0f64; CHANNEL_COUNT];
        for channel in 0..CHANNEL_COUNT {
            for area in 0..areas {
                channel_mean[channel] += record.series[area * CHANNEL_COUNT + channel][frame];
            }
            channel_mean[channel] /= areas as f64;
        }
        let global = channel_mean.iter().sum::<f64>() / CHANNEL_COUNT as f64;
        if channel_mean.iter().any(|&m| m <= 0.0) {
            skipped_frames += 1;
            continue;
        }
        for channel in 0..CHANNEL_COUNT {
            let scale = global / channel_mean[channel];
            for area in 0..areas {
                let value = &mut balanced.series[area * CHANNEL_COUNT + channel][frame];
                *value = (*value * scale).clamp(0.0, 255.0);
            }
        }
    }
    Ok(WhiteBalanceOutcome {
        record: balanced,
        skipped_frames,
    })
}

/// Largest absolute feature value across a record set; the divisor used to
/// bring every feature into [-1, 1]. Fit this on training data only.
pub fn fit_global_scalar(records: &[QuantizedRecord]) -> Result<f64> {
    let max = records
        .iter()
        .flat_map(|r| &r.features)
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    if records.is_empty() || max == 0.0 {
        return Err(Error::data("cannot fit a scale on empty or all-zero features"));
    }
    Ok(max)
}

pub fn apply_global_scalar(records: &mut [QuantizedRecord], scalar: f64) -> Result<()> {
    if !(scalar > 0.0 && scalar.is_finite()) {
        return Err(Error::config(format!("scale must be a positive number, got {scalar}")));
    }
    for record in records {
        for value in &mut record.features {
            *value /= scalar;
        }
    }
    Ok(())
}

/// Mean absolute difference between two equal-length feature vectors,
/// expressed as a percentage of the given value range.
pub fn mad(a: &[f64], b: &[f64], range: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::data(format!(
            "difference needs two equal-length non-empty vectors, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::config(format!("value range must be positive, got {range}")));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64 / range * 100.0)
}

/// Pairwise mean-absolute-difference matrix over featurized records,
/// grouped like the pattern similarity matrix.
pub fn mad_matrix(records: &[QuantizedRecord], by: GroupBy, range: f64) -> Result<LabeledMatrix> {
    let Some(first) = records.first() else {
        return Err(Error::data("no records to compare"));
    };
    if records.iter().any(|r| r.features.len() != first.features.len()) {
        return Err(Error::data("records have differing feature lengths"));
    }
    mad(&first.features, &first.features, range)?;
    Ok(pairwise_matrix(records, by, |a, b| {
        mad(&a.features, &b.features, range).expect("lengths checked above")
    }))
}
