//! Acceptance battery: the contracts the shipped defaults are expected to
//! hold, one test per contract with pinned tolerances. Run with
//! `--nocapture` to see the measured values next to each pass line.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use once_cell::sync::Lazy;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use fluidrc::analysis::{classification_protocol, discrete_mi_bits, mi_heatmap};
use fluidrc::augment::{gaussian_augment, AugmentConfig};
use fluidrc::config::{derive_seed, RunConfig};
use fluidrc::io::{read_signal_csv, write_signal_csv, RecordMeta};
use fluidrc::matrix::GroupBy;
use fluidrc::patterns::{
    canonical_corpus, similarity_matrix, Label, Pattern, PatternClass, CLASS_COUNT, COLS,
    IDLE_FRAMES, RECORD_FRAMES, ROWS,
};
use fluidrc::pipeline::{config_protocol, run_pipeline, simulate_corpus};
use fluidrc::readout::{evaluate, loss_and_gradients, softmax, split_corpus, train, TrainConfig};
use fluidrc::reservoir::{
    default_simulator, run_corpus, Area, SignalRecord, RED_LINE_FRAMES,
};
use fluidrc::signal::{
    apply_global_scalar, fit_global_scalar, mad_matrix, quantize_corpus, QuantizationConfig,
    QuantizedRecord,
};

/// Noise-free simulation of the full corpus, shared by the read-only tests.
static CLEAN_CORPUS: Lazy<Vec<SignalRecord>> = Lazy::new(|| {
    let sim = default_simulator();
    canonical_corpus().iter().map(|p| sim.simulate(p)).collect()
});

#[test]
fn c01_feature_counts_and_readout_size() {
    let q5 = QuantizationConfig::new(5, &Area::ALL).unwrap();
    assert_eq!(q5.features_per_record(), 45);
    let q10 = QuantizationConfig::new(10, &Area::ALL).unwrap();
    assert_eq!(q10.features_per_record(), 90);

    // A readout over the 90-feature layout carries 8 x 90 weight edges.
    let records: Vec<QuantizedRecord> = PatternClass::ALL
        .iter()
        .enumerate()
        .map(|(c, &class)| QuantizedRecord {
            label: Label::new(class, 1),
            features: (0..90).map(|f| ((c * 7 + f) % 13) as f64).collect(),
            synthetic: false,
        })
        .collect();
    let config = TrainConfig {
        max_epochs: 1,
        ..TrainConfig::default()
    };
    let model = train(&records, &config, 1).unwrap();
    let edges: usize = model.weights.iter().map(Vec::len).sum();
    assert_eq!(edges, 720);
    assert_eq!(model.feature_count(), 90);
    println!("c01 feature arithmetic: 45 and 90 features, 720 readout edges");
}

#[test]
fn c02_simulator_baseline_idle_delay_and_repeatability() {
    let t0 = Instant::now();
    let sim = default_simulator();
    let baseline = sim.optics().baseline;
    let blank = |cells| Pattern {
        label: Label::new(PatternClass::P1, 1),
        cells,
    };

    // All-off input reads the optics baseline on every frame.
    let record = sim.simulate(&blank([[0; COLS]; ROWS]));
    assert!(record
        .series
        .iter()
        .all(|s| s.iter().all(|&v| v == baseline)));

    // The idle tail stays frozen for every corpus pattern.
    for record in CLEAN_CORPUS.iter() {
        for series in &record.series {
            let held = series[RECORD_FRAMES - IDLE_FRAMES];
            assert!(
                series[RECORD_FRAMES - IDLE_FRAMES..]
                    .iter()
                    .all(|&v| v == held),
                "{} drifted during the idle block",
                record.label
            );
        }
    }

    // Red-only schedules hold baseline until the supply line clears.
    for cells in [
        [[1; COLS], [0; COLS], [0; COLS]],
        [[1, 0, 1, 1, 0], [0; COLS], [0; COLS]],
    ] {
        let record = sim.simulate(&blank(cells));
        for series in &record.series {
            assert!(series[..RED_LINE_FRAMES].iter().all(|&v| v == baseline));
        }
    }

    // Same seed, same corpus: bit-identical.
    let seed = derive_seed(RunConfig::default().seed, "sensor", 0);
    let a = run_corpus(canonical_corpus(), &sim, 2.0, seed);
    let b = run_corpus(canonical_corpus(), &sim, 2.0, seed);
    assert_eq!(a, b);

    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 5.0, "took {dt:?}");
    println!(
        "c02 simulator: baseline hold, frozen idle, {RED_LINE_FRAMES}-frame red delay, \
         repeatable runs ({dt:.2?})"
    );
}

#[test]
fn c03_dye_dominance_across_detection_areas() {
    let sim = default_simulator();
    let frames = RECORD_FRAMES - IDLE_FRAMES;
    let run = |active| sim.trace(&vec![active; frames]);

    let red = run([true, false, false]);
    let r = |area| sim.detector_concentration(&red.state, area)[0];
    assert!(r(Area::D1) > r(Area::D2) && r(Area::D1) > r(Area::D3));

    let blue = run([false, false, true]);
    let b = |area| sim.detector_concentration(&blue.state, area)[2];
    assert!(b(Area::D3) > b(Area::D2) && b(Area::D3) > b(Area::D1));

    let all = run([true, true, true]);
    let d2 = sim.detector_concentration(&all.state, Area::D2);
    assert!(d2.iter().all(|&c| c > 0.0), "{d2:?}");
    println!("c03 dominance: red peaks at D1, blue at D3, every dye present at D2");
}

#[test]
fn c04_gradient_check_and_softmax_rows() {
    let t0 = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(40);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let width = rng.gen_range(3..20);
        let count = rng.gen_range(2..10);
        let records: Vec<QuantizedRecord> = (0..count)
            .map(|i| QuantizedRecord {
                label: Label::new(
                    PatternClass::ALL[rng.gen_range(0..CLASS_COUNT)],
                    (1 + i % 10) as u8,
                ),
                features: (0..width).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                synthetic: false,
            })
            .collect();
        let weights: Vec<Vec<f64>> = (0..CLASS_COUNT)
            .map(|_| (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let bias: Vec<f64> = (0..CLASS_COUNT).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grad_w, grad_b) = loss_and_gradients(&weights, &bias, &records).unwrap();

        let mut rel_err = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
            worst = worst.max(err);
        };
        for c in 0..CLASS_COUNT {
            for f in 0..width {
                let mut w = weights.clone();
                w[c][f] = weights[c][f] + h;
                let plus = loss_and_gradients(&w, &bias, &records).unwrap().0;
                w[c][f] = weights[c][f] - h;
                let minus = loss_and_gradients(&w, &bias, &records).unwrap().0;
                rel_err(grad_w[c][f], plus, minus);
            }
            let mut bb = bias.clone();
            bb[c] = bias[c] + h;
            let plus = loss_and_gradients(&weights, &bb, &records).unwrap().0;
            bb[c] = bias[c] - h;
            let minus = loss_and_gradients(&weights, &bb, &records).unwrap().0;
            rel_err(grad_b[c], plus, minus);
        }
    }
    assert!(worst < 1e-4, "max relative gradient error {worst:e}");

    // Softmax stays a distribution even for extreme logits.
    let mut worst_sum = 0.0f64;
    for _ in 0..100 {
        let logits: Vec<f64> = (0..CLASS_COUNT)
            .map(|_| rng.gen_range(-600.0..600.0))
            .collect();
        let probs = softmax(&logits);
        assert!(probs.iter().all(|&p| p >= 0.0));
        worst_sum = worst_sum.max((probs.iter().sum::<f64>() - 1.0).abs());
    }
    assert!(worst_sum < 1e-9, "softmax row sum off by {worst_sum:e}");

    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 10.0, "took {dt:?}");
    println!(
        "c04 numerics: max gradient error {worst:.2e}, softmax sum error {worst_sum:.2e} ({dt:.2?})"
    );
}

#[test]
fn c05_default_configuration_accuracy_and_record_count_trend() {
    let t0 = Instant::now();
    let config = RunConfig::default();
    // The shipped defaults this battery vouches for.
    assert_eq!(config.sensor_sigma, 2.0);
    assert_eq!(config.q, 2);
    assert_eq!(config.areas, vec![Area::D1, Area::D3]);
    assert_eq!(config.records_per_pattern, 4);
    assert_eq!(config.target_total, 200);
    assert_eq!(config.n_models, 50);

    let raw = simulate_corpus(&config).unwrap();
    let protocol = config_protocol(&config);
    let outcome = classification_protocol(
        &raw,
        config.q,
        &config.areas,
        config.records_per_pattern,
        &protocol,
    )
    .unwrap();

    let real = outcome.train_set.iter().filter(|r| !r.synthetic).count();
    assert_eq!((real, outcome.train_set.len() - real), (32, 168));
    assert_eq!(outcome.test_set.len(), 48);

    let mean = outcome.ensemble.mean_accuracy;
    assert!(mean >= 0.85, "mean test accuracy {mean:.4}");
    let default_run = t0.elapsed();
    assert!(default_run.as_secs_f64() < 180.0, "took {default_run:?}");

    // More training records per pattern must help at every quantization level.
    let mut deltas = Vec::new();
    for q in [1, 2, 5, 10] {
        let lo = classification_protocol(&raw, q, &config.areas, 1, &protocol)
            .unwrap()
            .ensemble
            .mean_accuracy;
        let hi = classification_protocol(&raw, q, &config.areas, 4, &protocol)
            .unwrap()
            .ensemble
            .mean_accuracy;
        assert!(hi > lo, "q={q}: four records {hi:.4} <= one record {lo:.4}");
        deltas.push(format!("q{q} {:+.3}", hi - lo));
    }
    println!(
        "c05 defaults: mean accuracy {mean:.4} (std {:.4}) in {default_run:.2?}, \
         record-count gains {}",
        outcome.ensemble.std_accuracy,
        deltas.join(" ")
    );
}

#[test]
fn c06_augmentation_offset_statistics_and_uniform_shift() {
    // Recover the per-series offsets from a large synthetic batch.
    let sources: Vec<QuantizedRecord> = PatternClass::ALL
        .iter()
        .enumerate()
        .map(|(c, &class)| QuantizedRecord {
            label: Label::new(class, 1),
            features: (0..9).map(|f| 40.0 + (c * 9 + f) as f64).collect(),
            synthetic: false,
        })
        .collect();
    let config = AugmentConfig {
        sigma: 8.0,
        target_total: 8 + 1112,
        seed: 60,
    };
    let out = gaussian_augment(&sources, 1, &config).unwrap();
    let mut offsets = Vec::new();
    for synth in &out[8..] {
        let source = sources.iter().find(|s| s.label == synth.label).unwrap();
        offsets.extend(
            synth
                .features
                .iter()
                .zip(&source.features)
                .map(|(s, o)| s - o),
        );
    }
    assert!(offsets.len() >= 10_000);
    let n = offsets.len() as f64;
    let mean = offsets.iter().sum::<f64>() / n;
    let std =
        (offsets.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((7.6..=8.4).contains(&std), "offset std {std:.4}");
    assert!((-0.25..=0.25).contains(&mean), "offset mean {mean:.4}");

    // One offset per series: with block-constant sources the recovered
    // shifts are bit-identical within each block.
    let q = 4;
    let flat: Vec<QuantizedRecord> = PatternClass::ALL
        .iter()
        .enumerate()
        .map(|(c, &class)| QuantizedRecord {
            label: Label::new(class, 1),
            features: (0..3)
                .flat_map(|s| [60.0 + (c * 3 + s) as f64; 4])
                .collect(),
            synthetic: false,
        })
        .collect();
    let out = gaussian_augment(
        &flat,
        q,
        &AugmentConfig {
            sigma: 8.0,
            target_total: 40,
            seed: 61,
        },
    )
    .unwrap();
    for synth in &out[8..] {
        let source = flat.iter().find(|s| s.label == synth.label).unwrap();
        let diffs: Vec<f64> = synth
            .features
            .iter()
            .zip(&source.features)
            .map(|(s, o)| s - o)
            .collect();
        for block in diffs.chunks(q) {
            let spread = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - block.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(spread, 0.0);
        }
    }
    println!(
        "c06 augmentation: {} offsets, mean {mean:+.3}, std {std:.3}, per-series shifts uniform",
        offsets.len()
    );
}

#[test]
fn c07_mutual_information_estimator() {
    // A balanced binary variable carries exactly one bit about itself.
    let xs: Vec<usize> = (0..1000).map(|i| i % 2).collect();
    assert_eq!(discrete_mi_bits(&xs, &xs, 2, 2).unwrap(), 1.0);

    // Shuffling destroys the dependence.
    let mut rng = ChaCha12Rng::seed_from_u64(70);
    let mut ys = xs.clone();
    ys.shuffle(&mut rng);
    let shuffled = discrete_mi_bits(&xs, &ys, 2, 2).unwrap();
    assert!(shuffled < 0.02, "shuffled MI {shuffled:.4}");

    // Corpus heat maps: 3 dye rows by 9 series, entries within the cap.
    for q in [2usize, 5] {
        let config = QuantizationConfig::new(q, &Area::ALL).unwrap();
        let quantized = quantize_corpus(CLEAN_CORPUS.as_slice(), &config).unwrap();
        let map = mi_heatmap(&quantized, &config, None).unwrap();
        assert_eq!((map.values.len(), map.values[0].len()), (3, 9));
        let cap = 1.0f64.min((q as f64).log2());
        for row in &map.values {
            for &v in row {
                assert!(
                    (0.0..=cap + 1e-12).contains(&v),
                    "MI {v} outside [0, {cap}]"
                );
            }
        }
    }
    println!(
        "c07 mutual information: identity 1.0 bit, shuffled {shuffled:.4}, heat maps 3x9 capped"
    );
}

#[test]
fn c08_metric_symmetries_split_shape_and_confusion_rows() {
    // Pattern similarity: symmetric, 100 against itself, bounded.
    for shifts in [false, true] {
        let matrix = similarity_matrix(canonical_corpus(), GroupBy::Variant, shifts);
        assert!(matrix.is_symmetric(1e-9));
        for (i, row) in matrix.values.iter().enumerate() {
            assert_eq!(row[i], 100.0);
            assert!(row.iter().all(|&v| (0.0..=100.0).contains(&v)));
        }
    }

    // Signal difference: symmetric, zero against itself.
    let identity = QuantizationConfig::new(RECORD_FRAMES, &Area::ALL).unwrap();
    let raw_features = quantize_corpus(CLEAN_CORPUS.as_slice(), &identity).unwrap();
    let range = default_simulator().optics().range();
    let mad = mad_matrix(&raw_features, GroupBy::Variant, range).unwrap();
    assert!(mad.is_symmetric(1e-9));
    for (i, row) in mad.values.iter().enumerate() {
        assert_eq!(row[i], 0.0);
        assert!(row.iter().all(|&v| v >= 0.0));
    }

    // Split shape and a single readout's confusion row sums.
    let config = QuantizationConfig::new(2, &[Area::D1, Area::D3]).unwrap();
    let mut quantized = quantize_corpus(CLEAN_CORPUS.as_slice(), &config).unwrap();
    let scalar = fit_global_scalar(&quantized).unwrap();
    apply_global_scalar(&mut quantized, scalar).unwrap();
    let split = split_corpus(&quantized, 4, 8).unwrap();
    assert_eq!((split.train.len(), split.test.len()), (32, 48));
    let model = train(&split.train, &TrainConfig::default(), 80).unwrap();
    let evaluation = evaluate(&model, &split.test).unwrap();
    for row in &evaluation.confusion {
        assert_eq!(row.iter().sum::<usize>(), 6);
    }
    println!(
        "c08 metrics: similarity and difference matrices symmetric with exact identities, \
         split 32/48, confusion rows sum to 6"
    );
}

#[test]
fn c09_bundles_are_byte_identical_across_thread_counts() {
    let config = RunConfig::default();
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    run_pipeline(&config, dirs[0].path()).unwrap();
    for (threads, dir) in [(1usize, &dirs[1]), (7, &dirs[2])] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| run_pipeline(&config, dir.path())).unwrap();
    }

    let baseline = snapshot(dirs[0].path());
    assert!(baseline.len() > 100, "only {} files", baseline.len());
    for dir in &dirs[1..] {
        let other = snapshot(dir.path());
        assert_eq!(
            other.keys().collect::<Vec<_>>(),
            baseline.keys().collect::<Vec<_>>()
        );
        for (key, bytes) in &baseline {
            assert!(other[key] == *bytes, "{key} differs between runs");
        }
    }
    println!(
        "c09 reproducibility: {} bundle files byte-identical across ambient, 1 and 7 threads",
        baseline.len()
    );
}

#[test]
fn c10_signal_round_trip_for_the_whole_corpus() {
    let config = RunConfig::default();
    let sensor_seed = derive_seed(config.seed, "sensor", 0);
    let records = run_corpus(
        canonical_corpus(),
        &default_simulator(),
        config.sensor_sigma,
        sensor_seed,
    );
    assert_eq!(records.len(), 80);
    let hash = config.config_hash();
    let dir = tempfile::tempdir().unwrap();
    for record in &records {
        let meta = RecordMeta {
            class: record.label.class,
            variant: record.label.variant,
            seed: sensor_seed,
            config_hash: hash.clone(),
        };
        let path = dir.path().join(format!(
            "{}_{:02}.csv",
            record.label.class, record.label.variant
        ));
        write_signal_csv(record, &meta, &path).unwrap();
        let (back, meta_back) = read_signal_csv(&path).unwrap();
        assert!(back == *record, "{} altered by the round trip", record.label);
        assert_eq!(meta_back, meta);
    }
    println!("c10 round trip: all 80 records re-ingest bit-equal");
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let key = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
