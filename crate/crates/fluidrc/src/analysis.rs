//! Measurement tools for the system itself: how much pattern information
//! the signals carry (mutual information maps), and how classification
//! accuracy moves with quantization level, training-set size, and the
//! choice of detection areas.

use serde::Serialize;

use crate::augment::{gaussian_augment, AugmentConfig};
use crate::config::derive_seed;
use crate::error::{Error, Result};
use crate::matrix::LabeledMatrix;
use crate::patterns::{corpus_pattern, PatternClass, COLS, RECORD_FRAMES, ROWS, SLOT_FRAMES};
use crate::readout::{split_corpus, train_ensemble, EnsembleOutcome, TrainConfig};
use crate::reservoir::{Area, SignalRecord, CHANNEL_COUNT, SERIES_NAMES};
use crate::signal::{
    apply_global_scalar, fit_global_scalar, quantize_corpus, QuantizationConfig, QuantizedRecord,
};

/// The feature interval a pattern slot's midpoint frame falls into.
pub fn interval_of_slot(slot: usize, q: usize) -> usize {
    debug_assert!(slot < COLS && q > 0);
    (slot * SLOT_FRAMES + SLOT_FRAMES / 2) * q / RECORD_FRAMES
}

/// Equal-width binning over the observed range; a constant sample maps to
/// bin 0.
pub fn equal_width_bins(values: &[f64], bins: usize) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(Error::config("binning needs at least one bin"));
    }
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        if !v.is_finite() {
            return Err(Error::data(format!("cannot bin non-finite value {v}")));
        }
        min = min.min(v);
        max = max.max(v);
    }
    if values.is_empty() || min == max {
        return Ok(vec![0; values.len()]);
    }
    let width = (max - min) / bins as f64;
    Ok(values
        .iter()
        .map(|&v| (((v - min) / width) as usize).min(bins - 1))
        .collect())
}

/// Plug-in mutual information between two discrete samples, in bits.
pub fn discrete_mi_bits(xs: &[usize], ys: &[usize], x_card: usize, y_card: usize) -> Result<f64> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::data(format!(
            "mutual information needs two equal-length non-empty samples, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().any(|&x| x >= x_card) || ys.iter().any(|&y| y >= y_card) {
        return Err(Error::data("sample value outside its declared alphabet"));
    }
    let mut joint = vec![vec![0usize; y_card]; x_card];
    let mut margin_x = vec![0usize; x_card];
    let mut margin_y = vec![0usize; y_card];
    for (&x, &y) in xs.iter().zip(ys) {
        joint[x][y] += 1;
        margin_x[x] += 1;
        margin_y[y] += 1;
    }
    let n = xs.len() as f64;
    let mut mi = 0.0;
    for (x, row) in joint.iter().enumerate() {
        for (y, &count) in row.iter().enumerate() {
            if count > 0 {
                let ratio = count as f64 * n / (margin_x[x] as f64 * margin_y[y] as f64);
                mi += count as f64 / n * ratio.log2();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Mutual information between each pattern grid row and each signal series,
/// over (record, slot) samples: the row's cell bit on one side, the
/// quantized feature of the slot-midpoint interval (binned to `q` levels)
/// on the other. Rows follow the grid (R, G, B); columns follow the
/// feature layout. Synthetic records are refused.
pub fn mi_heatmap(
    records: &[QuantizedRecord],
    config: &QuantizationConfig,
    class_filter: Option<PatternClass>,
) -> Result<LabeledMatrix> {
    config.validate()?;
    if let Some(synth) = records.iter().find(|r| r.synthetic) {
        return Err(Error::data(format!(
            "synthetic record {} cannot enter a signal study",
            synth.label
        )));
    }
    let selected: Vec<&QuantizedRecord> = records
        .iter()
        .filter(|r| class_filter.map_or(true, |c| r.label.class == c))
        .collect();
    if selected.len() < 2 {
        return Err(Error::data(format!(
            "need at least 2 records for a signal study, found {}",
            selected.len()
        )));
    }
    let width = config.features_per_record();
    if let Some(bad) = selected.iter().find(|r| r.features.len() != width) {
        return Err(Error::data(format!(
            "record {} has {} features, expected {width}",
            bad.label,
            bad.features.len()
        )));
    }

    let series_count = config.series_count();
    let mut values = vec![vec![0.0; series_count]; ROWS];
    for row in 0..ROWS {
        let bits: Vec<usize> = selected
            .iter()
            .flat_map(|r| {
                let pattern = corpus_pattern(r.label);
                (0..COLS).map(move |slot| pattern.cells[row][slot] as usize)
            })
            .collect();
        for series in 0..series_count {
            let raw: Vec<f64> = selected
                .iter()
                .flat_map(|r| {
                    (0..COLS)
                        .map(|slot| r.features[series * config.q + interval_of_slot(slot, config.q)])
                })
                .collect();
            let binned = equal_width_bins(&raw, config.q)?;
            values[row][series] = discrete_mi_bits(&bits, &binned, 2, config.q)?;
        }
    }

    let row_labels = vec!["R".to_string(), "G".to_string(), "B".to_string()];
    let col_labels: Vec<String> = config
        .areas
        .iter()
        .flat_map(|a| {
            (0..CHANNEL_COUNT).map(|ch| SERIES_NAMES[a.index() * CHANNEL_COUNT + ch].to_string())
        })
        .collect();
    Ok(LabeledMatrix::new(row_labels, col_labels, values))
}

/// Shared knobs of the classification experiments: keep them fixed and only
/// vary what a study is about.
#[derive(Clone, Debug)]
pub struct Protocol {
    pub sigma: f64,
    pub target_total: usize,
    pub n_models: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            sigma: 8.0,
            target_total: 200,
            n_models: 50,
            train: TrainConfig::default(),
            seed: 6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProtocolOutcome {
    pub q: usize,
    pub rpp: usize,
    pub areas: Vec<Area>,
    pub scalar: f64,
    /// Augmented training set, raw feature units. The ensemble trained on
    /// these divided by `scalar`.
    pub train_set: Vec<QuantizedRecord>,
    /// Held-out set, raw feature units, scored the same way.
    pub test_set: Vec<QuantizedRecord>,
    pub ensemble: EnsembleOutcome,
}

fn cell_key(q: usize, areas: &[Area], rpp: usize) -> u64 {
    let mask: u64 = areas.iter().map(|a| 1 << a.index()).sum();
    (q as u64) << 16 | mask << 8 | rpp as u64
}

/// The full post-camera classification chain for one parameter choice:
/// quantize, split, augment, normalize, train an ensemble.
///
/// Every seed is derived from the protocol seed and the (q, areas, rpp)
/// cell itself, so a cell recomputed standalone matches the same cell
/// inside any sweep. The test split's seed ignores the cell: every cell of
/// a sweep holds out the same variants.
pub fn classification_protocol(
    raw: &[SignalRecord],
    q: usize,
    areas: &[Area],
    rpp: usize,
    protocol: &Protocol,
) -> Result<ProtocolOutcome> {
    let config = QuantizationConfig::new(q, areas)?;
    let quantized = quantize_corpus(raw, &config)?;
    let split = split_corpus(&quantized, rpp, derive_seed(protocol.seed, "protocol-split", 0))?;
    let key = cell_key(q, areas, rpp);
    let train_set = gaussian_augment(
        &split.train,
        q,
        &AugmentConfig {
            sigma: protocol.sigma,
            target_total: protocol.target_total,
            seed: derive_seed(protocol.seed, "protocol-augment", key),
        },
    )?;
    let test_set = split.test;
    let scalar = fit_global_scalar(&train_set)?;
    let mut scaled_train = train_set.clone();
    apply_global_scalar(&mut scaled_train, scalar)?;
    let mut scaled_test = test_set.clone();
    apply_global_scalar(&mut scaled_test, scalar)?;
    let ensemble = train_ensemble(
        &scaled_train,
        &scaled_test,
        &protocol.train,
        protocol.n_models,
        derive_seed(protocol.seed, "protocol-ensemble", key),
    )?;
    Ok(ProtocolOutcome {
        q,
        rpp,
        areas: areas.to_vec(),
        scalar,
        train_set,
        test_set,
        ensemble,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepCell {
    pub q: usize,
    pub rpp: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// Accuracy over a grid of quantization levels and training-set sizes,
/// everything else held at the protocol.
pub fn sweep_q_records(
    raw: &[SignalRecord],
    qs: &[usize],
    rpps: &[usize],
    areas: &[Area],
    protocol: &Protocol,
) -> Result<Vec<SweepCell>> {
    if qs.is_empty() || rpps.is_empty() {
        return Err(Error::config("sweep needs at least one q and one records_per_pattern"));
    }
    let mut cells = Vec::with_capacity(qs.len() * rpps.len());
    for &q in qs {
        for &rpp in rpps {
            let outcome = classification_protocol(raw, q, areas, rpp, protocol)?;
            cells.push(SweepCell {
                q,
                rpp,
                mean_accuracy: outcome.ensemble.mean_accuracy,
                std_accuracy: outcome.ensemble.std_accuracy,
            });
        }
    }
    Ok(cells)
}

/// Every non-empty subset of the three detection areas, smallest first, in
/// area order within a size.
pub fn area_subsets() -> Vec<Vec<Area>> {
    use Area::{D1, D2, D3};
    vec![
        vec![D1],
        vec![D2],
        vec![D3],
        vec![D1, D2],
        vec![D1, D3],
        vec![D2, D3],
        vec![D1, D2, D3],
    ]
}

#[derive(Clone, Debug, Serialize)]
pub struct AreaCell {
    pub areas: Vec<Area>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// Accuracy per detection-area subset at a fixed quantization level.
pub fn area_study(
    raw: &[SignalRecord],
    q: usize,
    rpp: usize,
    protocol: &Protocol,
) -> Result<Vec<AreaCell>> {
    area_subsets()
        .into_iter()
        .map(|areas| {
            let outcome = classification_protocol(raw, q, &areas, rpp, protocol)?;
            Ok(AreaCell {
                areas,
                mean_accuracy: outcome.ensemble.mean_accuracy,
                std_accuracy: outcome.ensemble.std_accuracy,
            })
        })
        .collect()
}
