//! One-call end-to-end run: simulate the corpus, persist every
//! intermediate, train the ensemble, and leave a manifest of content
//! hashes so two runs can be diffed byte for byte. Nothing here depends
//! on wall clock or thread count, so rerunning a config reproduces the
//! bundle exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{classification_protocol, Protocol, ProtocolOutcome};
use crate::config::{derive_seed, RunConfig};
use crate::error::{Error, Result};
use crate::io::{self, RecordMeta, SavedModel};
use crate::matrix::LabeledMatrix;
use crate::patterns::canonical_corpus;
use crate::patterns::PatternClass;
use crate::readout::{EnsembleOutcome, MisclassCount};
use crate::reservoir::{run_corpus, Area, SignalRecord, Simulator};

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub config_hash: String,
    pub seed: u64,
    pub q: usize,
    pub areas: Vec<Area>,
    pub records_per_pattern: usize,
    pub sensor_sigma: f64,
    pub augment_sigma: f64,
    pub train_records: usize,
    pub synthetic_records: usize,
    pub test_records: usize,
    pub n_models: usize,
    pub scalar: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    pub model_accuracies: Vec<f64>,
    pub best_model_seed: u64,
    pub best_model_accuracy: f64,
    pub misclassified: Vec<MisclassCount>,
}

/// Written last; lists every other file in the bundle with its SHA-256.
#[derive(Clone, Debug, Serialize)]
struct Manifest {
    config_hash: String,
    seed: u64,
    sensor_seed: u64,
    files: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects the bundle's files as they are written, keyed by path
/// relative to the bundle root.
struct Bundle {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl Bundle {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Bundle {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    fn track(&mut self, path: &Path) -> Result<()> {
        let rel = path
            .strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned();
        self.files.insert(rel, sha256_file(path)?);
        Ok(())
    }
}

/// Index of the ensemble member with the highest test accuracy, earliest
/// seed on ties.
pub fn best_model_index(ensemble: &EnsembleOutcome) -> usize {
    ensemble
        .accuracies
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |top, (i, &a)| {
            if a > top.1 {
                (i, a)
            } else {
                top
            }
        })
        .0
}

/// Simulate the fixture corpus under `config`, sensor noise included.
pub fn simulate_corpus(config: &RunConfig) -> Result<Vec<SignalRecord>> {
    let simulator = Simulator::new(config.chip.topology.clone(), config.chip.optics.clone())?;
    Ok(run_corpus(
        canonical_corpus(),
        &simulator,
        config.sensor_sigma,
        derive_seed(config.seed, "sensor", 0),
    ))
}

/// The experiment described by `config`, as a protocol call.
pub fn config_protocol(config: &RunConfig) -> Protocol {
    Protocol {
        sigma: config.augment_sigma,
        target_total: config.target_total,
        n_models: config.n_models,
        train: config.train.clone(),
        seed: config.seed,
    }
}

/// Accuracy summary of one protocol run, ready for report.json.
pub fn summarize(config: &RunConfig, outcome: &ProtocolOutcome) -> PipelineReport {
    let ensemble = &outcome.ensemble;
    let best = best_model_index(ensemble);
    PipelineReport {
        config_hash: config.config_hash(),
        seed: config.seed,
        q: outcome.q,
        areas: outcome.areas.clone(),
        records_per_pattern: outcome.rpp,
        sensor_sigma: config.sensor_sigma,
        augment_sigma: config.augment_sigma,
        train_records: outcome.train_set.len(),
        synthetic_records: outcome.train_set.iter().filter(|r| r.synthetic).count(),
        test_records: outcome.test_set.len(),
        n_models: ensemble.models.len(),
        scalar: outcome.scalar,
        mean_accuracy: ensemble.mean_accuracy,
        std_accuracy: ensemble.std_accuracy,
        min_accuracy: ensemble.accuracies.iter().copied().fold(f64::INFINITY, f64::min),
        max_accuracy: ensemble.accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        model_accuracies: ensemble.accuracies.clone(),
        best_model_seed: ensemble.models[best].seed,
        best_model_accuracy: ensemble.accuracies[best],
        misclassified: ensemble.misclassified.clone(),
    }
}

/// Ensemble confusion as a labeled matrix, actual rows by predicted columns.
pub fn confusion_matrix(ensemble: &EnsembleOutcome) -> LabeledMatrix {
    let class_labels: Vec<String> = PatternClass::ALL
        .iter()
        .map(|c| c.label().to_string())
        .collect();
    LabeledMatrix::new(
        class_labels.clone(),
        class_labels,
        ensemble
            .confusion
            .iter()
            .map(|row| row.iter().map(|&n| n as f64).collect())
            .collect(),
    )
}

/// Run the default experiment under `config`, writing all artifacts into
/// `out_dir`:
///
/// - `records/<class>_<variant>.csv` + `.json`: the simulated corpus
/// - `features.csv`: all records quantized
/// - `train_features.csv` / `test_features.csv`: the augmented split
/// - `model.json`: the best ensemble member with its scalar
///
/// Feature CSVs are in raw channel units; models normalize by their
/// stored scalar at evaluation time.
/// - `confusion.csv`: ensemble confusion, actual rows by predicted columns
/// - `report.json`: accuracy summary
/// - `manifest.json`: hashes of everything above
pub fn run_pipeline(config: &RunConfig, out_dir: &Path) -> Result<PipelineReport> {
    config.validate()?;
    let config_hash = config.config_hash();
    let mut bundle = Bundle::new(out_dir)?;
    let records_dir = out_dir.join("records");
    fs::create_dir_all(&records_dir).map_err(|e| Error::io(&records_dir, e))?;

    let sensor_seed = derive_seed(config.seed, "sensor", 0);
    let raw = simulate_corpus(config)?;

    for record in &raw {
        let path = records_dir.join(format!(
            "{}_{:02}.csv",
            record.label.class.label(),
            record.label.variant
        ));
        let meta = RecordMeta {
            class: record.label.class,
            variant: record.label.variant,
            seed: sensor_seed,
            config_hash: config_hash.clone(),
        };
        io::write_signal_csv(record, &meta, &path)?;
        bundle.track(&path)?;
        bundle.track(&io::sidecar_path(&path))?;
    }

    let quantized = crate::signal::quantize_corpus(&raw, &config.quantization()?)?;
    let features_path = out_dir.join("features.csv");
    io::write_features_csv(&quantized, &features_path)?;
    bundle.track(&features_path)?;

    let outcome = classification_protocol(
        &raw,
        config.q,
        &config.areas,
        config.records_per_pattern,
        &config_protocol(config),
    )?;

    let train_path = out_dir.join("train_features.csv");
    io::write_features_csv(&outcome.train_set, &train_path)?;
    bundle.track(&train_path)?;
    let test_path = out_dir.join("test_features.csv");
    io::write_features_csv(&outcome.test_set, &test_path)?;
    bundle.track(&test_path)?;

    let saved = SavedModel {
        model: outcome.ensemble.models[best_model_index(&outcome.ensemble)].clone(),
        scalar: outcome.scalar,
        config_hash: config_hash.clone(),
    };
    let model_path = out_dir.join("model.json");
    io::write_json(&model_path, &saved)?;
    bundle.track(&model_path)?;

    let confusion_path = out_dir.join("confusion.csv");
    io::write_matrix_csv(&confusion_matrix(&outcome.ensemble), &confusion_path)?;
    bundle.track(&confusion_path)?;

    let report = summarize(config, &outcome);
    let report_path = out_dir.join("report.json");
    io::write_json(&report_path, &report)?;
    bundle.track(&report_path)?;

    let manifest = Manifest {
        config_hash,
        seed: config.seed,
        sensor_seed,
        files: bundle.files,
    };
    io::write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(report)
}
