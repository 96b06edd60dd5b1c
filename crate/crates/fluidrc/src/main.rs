//! Command line front end. One subcommand per pipeline stage plus
//! `pipeline` for the whole chain; every stage derives its randomness
//! from the single master seed, so any artifact can be regenerated from
//! the config alone. Flags override the config file where they overlap.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use fluidrc::analysis::{
    area_study, mi_heatmap, sweep_q_records, AreaCell, SweepCell,
};
use fluidrc::config::{derive_seed, RunConfig};
use fluidrc::io::{self, RecordMeta, SavedModel};
use fluidrc::matrix::{GroupBy, LabeledMatrix};
use fluidrc::patterns::{
    canonical_corpus, similarity_matrix, Label, Pattern, PatternClass, RECORD_FRAMES,
};
use fluidrc::pipeline::{
    best_model_index, config_protocol, run_pipeline, simulate_corpus, summarize,
};
use fluidrc::readout::evaluate;
use fluidrc::reservoir::{Area, SignalRecord};
use fluidrc::signal::{apply_global_scalar, mad_matrix, quantize_corpus, QuantizationConfig};
use fluidrc::{Error, Result};

#[derive(Parser)]
#[command(name = "fluidrc", version, about = "Microfluidic reservoir computing toolkit")]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file; omitted fields fall back to the stock setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the injection pattern corpus
    Patterns {
        #[command(subcommand)]
        action: PatternsAction,
    },
    /// Simulate corpus records and write signal CSVs
    Simulate {
        /// Single pattern (CLASS:VARIANT); default is the whole corpus
        #[arg(long)]
        pattern: Option<String>,
    },
    /// Validate signal CSVs and report what they contain
    Ingest {
        /// Signal CSV file, or a directory of them
        path: PathBuf,
    },
    /// Featurize records into interval means
    Quantize {
        #[arg(long)]
        q: Option<usize>,
        /// Comma-separated detection areas, e.g. 1,3 or D1,D3
        #[arg(long)]
        areas: Option<String>,
        /// Ingest records from this directory instead of simulating
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Gray-world white balance, written as new signal CSVs
    Wb {
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Expand a training set with Gaussian-offset synthetics
    Augment {
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        total: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        /// Feature CSV to use as the training pool; default is the
        /// config's train split of the simulated corpus
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Train a readout ensemble and write report plus best model
    Train {
        #[arg(long)]
        rpp: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        areas: Option<String>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        total: Option<usize>,
        #[arg(long)]
        models: Option<usize>,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Evaluate a saved model on a feature CSV
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Mutual information between grid rows and signal features
    Mi {
        #[arg(long)]
        q: Option<usize>,
        /// Restrict to one pattern class
        #[arg(long)]
        pattern: Option<String>,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Mean absolute difference between raw records, percent of range
    Mad {
        #[arg(long, default_value = "class")]
        by: String,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Pattern grid similarity, percent of cells
    Similarity {
        #[arg(long, default_value = "class")]
        by: String,
        /// on: best overlap within two column shifts; off: aligned only
        #[arg(long, default_value = "off")]
        shifts: String,
    },
    /// Accuracy over quantization levels and training-set sizes
    Sweep {
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Accuracy per detection-area subset
    Areas {
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Full chain: simulate, featurize, train, report
    Pipeline,
}

#[derive(Subcommand)]
enum PatternsAction {
    /// One line per corpus pattern
    List,
    /// Grid of one pattern (CLASS:VARIANT)
    Show { label: String },
    /// Pairwise similarity matrix CSV
    Similarity {
        #[arg(long, default_value = "class")]
        by: String,
        #[arg(long, default_value = "off")]
        shifts: String,
    },
}

/// Stdout line that exits quietly when the reader hangs up (e.g. piped
/// to head) instead of panicking on the broken pipe.
macro_rules! say {
    ($($arg:tt)*) => { emit(format_args!($($arg)*)) };
}

fn emit(args: std::fmt::Arguments) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if out.write_fmt(args).and_then(|()| out.write_all(b"\n")).is_err() {
        std::process::exit(0);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn parse_areas(spec: &str) -> Result<Vec<Area>> {
    let areas: Vec<Area> = spec
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<_>>()?;
    if areas.is_empty() {
        return Err(Error::config("no detection areas given"));
    }
    Ok(areas)
}

fn parse_shifts(spec: &str) -> Result<bool> {
    match spec {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(Error::config(format!(
            "shifts must be on or off, got '{other}'"
        ))),
    }
}

fn out_or(out: &Option<PathBuf>, default: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from(default))
}

/// Read one signal CSV, or every `*.csv` in a directory in name order.
fn ingest_records(path: &Path) -> Result<Vec<(SignalRecord, RecordMeta)>> {
    let mut paths = Vec::new();
    if path.is_dir() {
        for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let entry = entry.map_err(|e| Error::io(path, e))?.path();
            if entry.extension().is_some_and(|ext| ext == "csv") {
                paths.push(entry);
            }
        }
        paths.sort();
        if paths.is_empty() {
            return Err(Error::data(format!(
                "no signal CSVs in {}",
                path.display()
            )));
        }
    } else {
        paths.push(path.to_path_buf());
    }
    paths.iter().map(|p| io::read_signal_csv(p)).collect()
}

/// The working corpus: ingested from `records` when given, simulated
/// under the config otherwise.
fn corpus_with_meta(
    config: &RunConfig,
    records: &Option<PathBuf>,
) -> Result<Vec<(SignalRecord, RecordMeta)>> {
    match records {
        Some(path) => ingest_records(path),
        None => {
            let sensor_seed = derive_seed(config.seed, "sensor", 0);
            let hash = config.config_hash();
            Ok(simulate_corpus(config)?
                .into_iter()
                .map(|record| {
                    let meta = RecordMeta {
                        class: record.label.class,
                        variant: record.label.variant,
                        seed: sensor_seed,
                        config_hash: hash.clone(),
                    };
                    (record, meta)
                })
                .collect())
        }
    }
}

fn corpus(config: &RunConfig, records: &Option<PathBuf>) -> Result<Vec<SignalRecord>> {
    Ok(corpus_with_meta(config, records)?
        .into_iter()
        .map(|(record, _)| record)
        .collect())
}

fn grid_lines(pattern: &Pattern) -> Vec<String> {
    pattern
        .cells
        .iter()
        .map(|row| row.iter().map(|c| char::from(b'0' + c)).collect())
        .collect()
}

fn write_matrix(matrix: &LabeledMatrix, path: &Path) -> Result<()> {
    io::write_matrix_csv(matrix, path)?;
    say!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct MiMeta {
    q: usize,
    filter: Option<PatternClass>,
    records: usize,
    seed: u64,
    config_hash: String,
}

#[derive(Serialize)]
struct SweepMeta {
    qs: Vec<usize>,
    rpps: Vec<usize>,
    areas: Vec<Area>,
    seed: u64,
    config_hash: String,
    cells: Vec<SweepCell>,
}

#[derive(Serialize)]
struct AreasMeta {
    q: usize,
    records_per_pattern: usize,
    seed: u64,
    config_hash: String,
    cells: Vec<AreaCell>,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;

    match cli.command {
        Command::Patterns { action } => match action {
            PatternsAction::List => {
                for pattern in canonical_corpus() {
                    say!("{:<6} {}", pattern.label.to_string(), grid_lines(pattern).join(" "));
                }
                Ok(())
            }
            PatternsAction::Show { label } => {
                let label: Label = label.parse()?;
                let pattern = fluidrc::patterns::corpus_pattern(label);
                say!("{label}");
                for (dye, line) in ["R", "G", "B"].iter().zip(grid_lines(pattern)) {
                    say!("{dye} {line}");
                }
                Ok(())
            }
            PatternsAction::Similarity { by, shifts } => cmd_similarity(&cli.out, &by, &shifts),
        },
        Command::Similarity { by, shifts } => cmd_similarity(&cli.out, &by, &shifts),
        Command::Simulate { pattern } => {
            let only: Option<Label> = pattern.map(|s| s.parse()).transpose()?;
            let out_dir = out_or(&cli.out, "records");
            fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let mut written = 0usize;
            for (record, meta) in corpus_with_meta(&config, &None)? {
                if only.is_some_and(|label| label != record.label) {
                    continue;
                }
                let path = out_dir.join(format!(
                    "{}_{:02}.csv",
                    record.label.class.label(),
                    record.label.variant
                ));
                io::write_signal_csv(&record, &meta, &path)?;
                written += 1;
            }
            say!("wrote {written} records to {}", out_dir.display());
            Ok(())
        }
        Command::Ingest { path } => {
            let records = ingest_records(&path)?;
            let mut by_class = [0usize; fluidrc::patterns::CLASS_COUNT];
            for (record, _) in &records {
                by_class[record.label.class.index()] += 1;
            }
            say!("ingested {} records from {}", records.len(), path.display());
            let counts: Vec<String> = PatternClass::ALL
                .iter()
                .zip(by_class)
                .filter(|(_, n)| *n > 0)
                .map(|(class, n)| format!("{class} x{n}"))
                .collect();
            say!("{}", counts.join(", "));
            Ok(())
        }
        Command::Quantize { q, areas, records } => {
            if let Some(q) = q {
                config.q = q;
            }
            if let Some(spec) = areas {
                config.areas = parse_areas(&spec)?;
            }
            let quantization = config.quantization()?;
            let raw = corpus(&config, &records)?;
            let featurized = quantize_corpus(&raw, &quantization)?;
            let path = out_or(&cli.out, "features.csv");
            io::write_features_csv(&featurized, &path)?;
            say!(
                "wrote {} ({} records x {} features)",
                path.display(),
                featurized.len(),
                quantization.features_per_record()
            );
            Ok(())
        }
        Command::Wb { records } => {
            let out_dir = out_or(&cli.out, "balanced");
            fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let mut skipped = 0usize;
            let corpus = corpus_with_meta(&config, &records)?;
            let total = corpus.len();
            for (record, meta) in corpus {
                let outcome = fluidrc::signal::white_balance(&record)?;
                skipped += outcome.skipped_frames;
                let path = out_dir.join(format!(
                    "{}_{:02}.csv",
                    record.label.class.label(),
                    record.label.variant
                ));
                io::write_signal_csv(&outcome.record, &meta, &path)?;
            }
            say!(
                "wrote {total} balanced records to {} ({skipped} frames left unbalanced)",
                out_dir.display()
            );
            Ok(())
        }
        Command::Augment {
            sigma,
            total,
            q,
            features,
        } => {
            if let Some(sigma) = sigma {
                config.augment_sigma = sigma;
            }
            if let Some(total) = total {
                config.target_total = total;
            }
            if let Some(q) = q {
                config.q = q;
            }
            let pool = match &features {
                Some(path) => io::read_features_csv(path)?,
                None => {
                    let raw = corpus(&config, &None)?;
                    let featurized = quantize_corpus(&raw, &config.quantization()?)?;
                    fluidrc::readout::split_corpus(
                        &featurized,
                        config.records_per_pattern,
                        derive_seed(config.seed, "protocol-split", 0),
                    )?
                    .train
                }
            };
            let augmented = fluidrc::augment::gaussian_augment(
                &pool,
                config.q,
                &fluidrc::augment::AugmentConfig {
                    sigma: config.augment_sigma,
                    target_total: config.target_total,
                    seed: derive_seed(config.seed, "augment", 0),
                },
            )?;
            let synthetic = augmented.iter().filter(|r| r.synthetic).count();
            let path = out_or(&cli.out, "train_features.csv");
            io::write_features_csv(&augmented, &path)?;
            say!(
                "wrote {} ({} records, {synthetic} synthetic)",
                path.display(),
                augmented.len()
            );
            Ok(())
        }
        Command::Train {
            rpp,
            q,
            areas,
            sigma,
            total,
            models,
            records,
        } => {
            if let Some(rpp) = rpp {
                config.records_per_pattern = rpp;
            }
            if let Some(q) = q {
                config.q = q;
            }
            if let Some(spec) = areas {
                config.areas = parse_areas(&spec)?;
            }
            if let Some(sigma) = sigma {
                config.augment_sigma = sigma;
            }
            if let Some(total) = total {
                config.target_total = total;
            }
            if let Some(models) = models {
                config.n_models = models;
            }
            config.validate()?;
            let raw = corpus(&config, &records)?;
            let outcome = fluidrc::analysis::classification_protocol(
                &raw,
                config.q,
                &config.areas,
                config.records_per_pattern,
                &config_protocol(&config),
            )?;
            let report = summarize(&config, &outcome);
            let report_path = out_or(&cli.out, "report.json");
            io::write_json(&report_path, &report)?;
            let model_path = report_path.with_file_name("model.json");
            let saved = SavedModel {
                model: outcome.ensemble.models[best_model_index(&outcome.ensemble)].clone(),
                scalar: outcome.scalar,
                config_hash: config.config_hash(),
            };
            io::write_json(&model_path, &saved)?;
            say!(
                "mean accuracy {:.4} +/- {:.4} over {} models (best {:.4})",
                report.mean_accuracy,
                report.std_accuracy,
                report.n_models,
                report.best_model_accuracy
            );
            say!("wrote {}, {}", report_path.display(), model_path.display());
            Ok(())
        }
        Command::Eval { model, test } => {
            let saved: SavedModel = io::read_json(&model)?;
            let mut records = io::read_features_csv(&test)?;
            apply_global_scalar(&mut records, saved.scalar)?;
            let evaluation = evaluate(&saved.model, &records)?;
            let correct = (evaluation.accuracy * records.len() as f64).round() as usize;
            say!(
                "accuracy {:.4} ({correct}/{} records)",
                evaluation.accuracy,
                records.len()
            );
            for (label, predicted) in &evaluation.misclassified {
                say!("missed {label} -> {predicted}");
            }
            if let Some(out) = &cli.out {
                io::write_json(out, &evaluation)?;
                say!("wrote {}", out.display());
            }
            Ok(())
        }
        Command::Mi { q, pattern, records } => {
            let q = q.unwrap_or(config.q);
            let filter: Option<PatternClass> = pattern.map(|s| s.parse()).transpose()?;
            let quantization = QuantizationConfig::new(q, &Area::ALL)?;
            let raw = corpus(&config, &records)?;
            let featurized = quantize_corpus(&raw, &quantization)?;
            let heatmap = mi_heatmap(&featurized, &quantization, filter)?;
            let path = out_or(&cli.out, "mi_heatmap.csv");
            io::write_matrix_csv(&heatmap, &path)?;
            let meta = MiMeta {
                q,
                filter,
                records: featurized.len(),
                seed: config.seed,
                config_hash: config.config_hash(),
            };
            io::write_json(&io::sidecar_path(&path), &meta)?;
            say!(
                "wrote {} + {}",
                path.display(),
                io::sidecar_path(&path).display()
            );
            Ok(())
        }
        Command::Mad { by, records } => {
            let by: GroupBy = by.parse()?;
            let raw = corpus(&config, &records)?;
            let full = QuantizationConfig::new(RECORD_FRAMES, &Area::ALL)?;
            let featurized = quantize_corpus(&raw, &full)?;
            let matrix = mad_matrix(&featurized, by, config.chip.optics.range())?;
            write_matrix(&matrix, &out_or(&cli.out, "mad.csv"))
        }
        Command::Sweep { records } => {
            let raw = corpus(&config, &records)?;
            let qs = vec![1usize, 2, 5, 10];
            let rpps = vec![1usize, 2, 3, 4];
            let cells = sweep_q_records(&raw, &qs, &rpps, &config.areas, &config_protocol(&config))?;
            let grid = LabeledMatrix::new(
                qs.iter().map(|q| format!("Q={q}")).collect(),
                rpps.iter().map(|r| format!("rpp={r}")).collect(),
                qs.iter()
                    .map(|&q| {
                        rpps.iter()
                            .map(|&r| {
                                cells
                                    .iter()
                                    .find(|c| c.q == q && c.rpp == r)
                                    .map_or(f64::NAN, |c| c.mean_accuracy)
                            })
                            .collect()
                    })
                    .collect(),
            );
            let path = out_or(&cli.out, "sweep.csv");
            io::write_matrix_csv(&grid, &path)?;
            let meta = SweepMeta {
                qs,
                rpps,
                areas: config.areas.clone(),
                seed: config.seed,
                config_hash: config.config_hash(),
                cells,
            };
            io::write_json(&io::sidecar_path(&path), &meta)?;
            for (label, row) in grid.row_labels.iter().zip(&grid.values) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
                say!("{label:<5} {}", cells.join("  "));
            }
            say!(
                "wrote {} + {}",
                path.display(),
                io::sidecar_path(&path).display()
            );
            Ok(())
        }
        Command::Areas { q, records } => {
            let q = q.unwrap_or(config.q);
            let raw = corpus(&config, &records)?;
            let cells = area_study(
                &raw,
                q,
                config.records_per_pattern,
                &config_protocol(&config),
            )?;
            let subset_label = |areas: &[Area]| {
                areas
                    .iter()
                    .map(|a| a.label())
                    .collect::<Vec<_>>()
                    .join("+")
            };
            let matrix = LabeledMatrix::new(
                cells.iter().map(|c| subset_label(&c.areas)).collect(),
                vec!["mean_accuracy".into(), "std_accuracy".into()],
                cells
                    .iter()
                    .map(|c| vec![c.mean_accuracy, c.std_accuracy])
                    .collect(),
            );
            let path = out_or(&cli.out, "areas.csv");
            io::write_matrix_csv(&matrix, &path)?;
            let meta = AreasMeta {
                q,
                records_per_pattern: config.records_per_pattern,
                seed: config.seed,
                config_hash: config.config_hash(),
                cells,
            };
            io::write_json(&io::sidecar_path(&path), &meta)?;
            for (label, row) in matrix.row_labels.iter().zip(&matrix.values) {
                say!("{label:<9} {:.4} +/- {:.4}", row[0], row[1]);
            }
            say!(
                "wrote {} + {}",
                path.display(),
                io::sidecar_path(&path).display()
            );
            Ok(())
        }
        Command::Pipeline => {
            let out_dir = out_or(&cli.out, "run");
            let report = run_pipeline(&config, &out_dir)?;
            say!(
                "mean accuracy {:.4} +/- {:.4} over {} models",
                report.mean_accuracy, report.std_accuracy, report.n_models
            );
            for miss in report.misclassified.iter().take(5) {
                say!(
                    "missed {}:{} -> {} x{}",
                    miss.label.class, miss.label.variant, miss.predicted, miss.count
                );
            }
            say!("bundle in {}", out_dir.display());
            Ok(())
        }
    }
}

fn cmd_similarity(out: &Option<PathBuf>, by: &str, shifts: &str) -> Result<()> {
    let by: GroupBy = by.parse()?;
    let shifts = parse_shifts(shifts)?;
    let matrix = similarity_matrix(canonical_corpus(), by, shifts);
    write_matrix(&matrix, &out_or(out, "similarity.csv"))
}
