//! The trained half of the system: a softmax readout fitted with full-batch
//! Adam on featurized records. Everything upstream of this layer is fixed
//! physics; everything the system learns lives in one weight matrix and one
//! bias vector.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::derive_seed;
use crate::error::{Error, Result};
use crate::patterns::{Label, PatternClass, CLASS_COUNT, VARIANTS_PER_CLASS};
use crate::signal::QuantizedRecord;

fn default_learning_rate() -> f64 {
    0.02
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_max_epochs() -> usize {
    300
}
fn default_patience() -> usize {
    20
}
fn default_min_delta() -> f64 {
    1e-4
}
fn default_init_range() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Epochs without a `min_delta` improvement in training loss before
    /// training stops early.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
    /// Weights and biases start uniform in [-init_range, init_range].
    #[serde(default = "default_init_range")]
    pub init_range: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_learning_rate(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            min_delta: default_min_delta(),
            init_range: default_init_range(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(format!("training: {msg}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return bad(format!("{name} {beta} outside [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.min_delta >= 0.0) {
            return bad(format!("min_delta {} must be non-negative", self.min_delta));
        }
        if !(self.init_range >= 0.0 && self.init_range.is_finite()) {
            return bad(format!("init_range {} must be non-negative", self.init_range));
        }
        Ok(())
    }
}

/// One trained softmax readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    /// weights[class][feature]
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub seed: u64,
    pub epochs_run: usize,
    pub final_loss: f64,
}

impl ReadoutModel {
    pub fn feature_count(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Trainable parameters: one weight per class/feature pair plus one
    /// bias per class.
    pub fn parameter_count(&self) -> usize {
        CLASS_COUNT * self.feature_count() + self.bias.len()
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / denom).collect()
}

fn check_train_set(records: &[QuantizedRecord]) -> Result<usize> {
    let Some(first) = records.first() else {
        return Err(Error::data("no records to train on"));
    };
    let width = first.features.len();
    if width == 0 || records.iter().any(|r| r.features.len() != width) {
        return Err(Error::data("records have differing feature lengths"));
    }
    Ok(width)
}

/// Mean cross-entropy loss and its gradients over a record batch, for the
/// given parameters. Summation runs in record order, so results are
/// reproducible to the bit.
pub fn loss_and_gradients(
    weights: &[Vec<f64>],
    bias: &[f64],
    records: &[QuantizedRecord],
) -> Result<(f64, Vec<Vec<f64>>, Vec<f64>)> {
    let width = check_train_set(records)?;
    if weights.len() != CLASS_COUNT || bias.len() != CLASS_COUNT {
        return Err(Error::config(format!(
            "parameters must cover {CLASS_COUNT} classes"
        )));
    }
    if weights.iter().any(|row| row.len() != width) {
        return Err(Error::config(format!(
            "weight rows must match the {width}-feature records"
        )));
    }

    let mut loss = 0.0;
    let mut grad_w = vec![vec![0.0; width]; CLASS_COUNT];
    let mut grad_b = vec![0.0; CLASS_COUNT];
    let mut logits = [0.0; CLASS_COUNT];
    for record in records {
        let x = &record.features;
        for (c, row) in weights.iter().enumerate() {
            logits[c] = bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        let mut probs = [0.0; CLASS_COUNT];
        for c in 0..CLASS_COUNT {
            probs[c] = (logits[c] - max).exp();
            denom += probs[c];
        }
        let target = record.label.class.index();
        loss += denom.ln() - (logits[target] - max);
        for c in 0..CLASS_COUNT {
            let err = probs[c] / denom - if c == target { 1.0 } else { 0.0 };
            grad_b[c] += err;
            let row = &mut grad_w[c];
            for (g, v) in row.iter_mut().zip(x) {
                *g += err * v;
            }
        }
    }
    let n = records.len() as f64;
    loss /= n;
    for row in &mut grad_w {
        for g in row.iter_mut() {
            *g /= n;
        }
    }
    for g in &mut grad_b {
        *g /= n;
    }
    Ok((loss, grad_w, grad_b))
}

/// Fit a readout on the given records with full-batch Adam, stopping early
/// once the training loss stalls. The seed fixes the uniform parameter
/// initialization; a rerun with the same inputs is bit-identical.
pub fn train(records: &[QuantizedRecord], config: &TrainConfig, seed: u64) -> Result<ReadoutModel> {
    config.validate()?;
    let width = check_train_set(records)?;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let r = config.init_range;
    let sample = |rng: &mut ChaCha12Rng| {
        if r == 0.0 {
            0.0
        } else {
            rng.gen_range(-r..=r)
        }
    };
    let mut weights: Vec<Vec<f64>> = (0..CLASS_COUNT)
        .map(|_| (0..width).map(|_| sample(&mut rng)).collect())
        .collect();
    let mut bias: Vec<f64> = (0..CLASS_COUNT).map(|_| sample(&mut rng)).collect();

    let mut m_w = vec![vec![0.0; width]; CLASS_COUNT];
    let mut v_w = vec![vec![0.0; width]; CLASS_COUNT];
    let mut m_b = vec![0.0; CLASS_COUNT];
    let mut v_b = vec![0.0; CLASS_COUNT];

    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut epochs_run = 0;
    let mut final_loss = f64::INFINITY;
    for epoch in 1..=config.max_epochs {
        let (loss, grad_w, grad_b) = loss_and_gradients(&weights, &bias, records)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        epochs_run = epoch;
        final_loss = loss;

        let t = epoch as i32;
        let bc1 = 1.0 - config.beta1.powi(t);
        let bc2 = 1.0 - config.beta2.powi(t);
        let adam = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = config.beta1 * *m + (1.0 - config.beta1) * g;
            *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
            *p -= config.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + config.epsilon);
        };
        for c in 0..CLASS_COUNT {
            for f in 0..width {
                adam(&mut weights[c][f], &mut m_w[c][f], &mut v_w[c][f], grad_w[c][f]);
            }
            adam(&mut bias[c], &mut m_b[c], &mut v_b[c], grad_b[c]);
        }

        if loss < best - config.min_delta {
            best = loss;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= config.patience {
                break;
            }
        }
    }

    Ok(ReadoutModel {
        weights,
        bias,
        seed,
        epochs_run,
        final_loss,
    })
}

/// Class probabilities and the predicted class (ties break toward the
/// earlier class).
pub fn predict(model: &ReadoutModel, features: &[f64]) -> (PatternClass, Vec<f64>) {
    let logits: Vec<f64> = model
        .weights
        .iter()
        .zip(&model.bias)
        .map(|(row, b)| b + row.iter().zip(features).map(|(w, v)| w * v).sum::<f64>())
        .collect();
    let probs = softmax(&logits);
    let mut arg = 0;
    for (c, &p) in probs.iter().enumerate() {
        if p > probs[arg] {
            arg = c;
        }
    }
    (PatternClass::ALL[arg], probs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    /// Fraction of test records classified correctly, in [0, 1].
    pub accuracy: f64,
    /// confusion[actual][predicted], in class order.
    pub confusion: [[usize; CLASS_COUNT]; CLASS_COUNT],
    pub misclassified: Vec<(Label, PatternClass)>,
}

pub fn evaluate(model: &ReadoutModel, test: &[QuantizedRecord]) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::data("no test records to evaluate"));
    }
    if let Some(synth) = test.iter().find(|r| r.synthetic) {
        return Err(Error::data(format!(
            "synthetic record {} in the test set",
            synth.label
        )));
    }
    let width = model.feature_count();
    if test.iter().any(|r| r.features.len() != width) {
        return Err(Error::data(format!(
            "test records do not all have the model's {width} features"
        )));
    }
    let mut confusion = [[0usize; CLASS_COUNT]; CLASS_COUNT];
    let mut misclassified = Vec::new();
    let mut correct = 0;
    for record in test {
        let (predicted, _) = predict(model, &record.features);
        confusion[record.label.class.index()][predicted.index()] += 1;
        if predicted == record.label.class {
            correct += 1;
        } else {
            misclassified.push((record.label, predicted));
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        confusion,
        misclassified,
    })
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<QuantizedRecord>,
    pub test: Vec<QuantizedRecord>,
}

/// Per-class train/test split of the featurized corpus.
///
/// Each class contributes six fixed test variants, drawn once from the
/// split seed, and `records_per_pattern` training variants from the rest.
/// The test set does not depend on `records_per_pattern`, and smaller
/// training sets are prefixes of larger ones.
pub fn split_corpus(
    records: &[QuantizedRecord],
    records_per_pattern: usize,
    seed: u64,
) -> Result<Split> {
    const TEST_PER_CLASS: usize = 6;
    let max_train = VARIANTS_PER_CLASS - TEST_PER_CLASS;
    if !(1..=max_train).contains(&records_per_pattern) {
        return Err(Error::config(format!(
            "records_per_pattern {records_per_pattern} outside 1..={max_train}"
        )));
    }
    if let Some(synth) = records.iter().find(|r| r.synthetic) {
        return Err(Error::data(format!(
            "synthetic record {} cannot enter a corpus split",
            synth.label
        )));
    }

    let mut train = Vec::with_capacity(records_per_pattern * CLASS_COUNT);
    let mut test = Vec::with_capacity(TEST_PER_CLASS * CLASS_COUNT);
    for class in PatternClass::ALL {
        let mut members: Vec<&QuantizedRecord> = records
            .iter()
            .filter(|r| r.label.class == class)
            .collect();
        members.sort_by_key(|r| r.label.variant);
        let distinct = members
            .windows(2)
            .all(|w| w[0].label.variant != w[1].label.variant);
        if members.len() != VARIANTS_PER_CLASS || !distinct {
            return Err(Error::data(format!(
                "class {class} must appear with exactly {VARIANTS_PER_CLASS} distinct variants, found {}",
                members.len()
            )));
        }

        let mut order: Vec<usize> = (0..VARIANTS_PER_CLASS).collect();
        let mut rng =
            ChaCha12Rng::seed_from_u64(derive_seed(seed, "split-class", class.index() as u64));
        order.shuffle(&mut rng);

        let mut test_picks: Vec<usize> = order[..TEST_PER_CLASS].to_vec();
        test_picks.sort_unstable();
        test.extend(test_picks.iter().map(|&i| members[i].clone()));
        let mut train_picks: Vec<usize> = order[TEST_PER_CLASS..][..records_per_pattern].to_vec();
        train_picks.sort_unstable();
        train.extend(train_picks.iter().map(|&i| members[i].clone()));
    }
    Ok(Split { train, test })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MisclassCount {
    pub label: Label,
    pub predicted: PatternClass,
    pub count: usize,
}

/// Results of an ensemble of readouts differing only in their
/// initialization seed, evaluated on a shared test set.
#[derive(Clone, Debug)]
pub struct EnsembleOutcome {
    pub models: Vec<ReadoutModel>,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Population standard deviation of the per-model accuracies.
    pub std_accuracy: f64,
    /// Element-wise sum of the per-model confusion matrices.
    pub confusion: [[usize; CLASS_COUNT]; CLASS_COUNT],
    /// How often each test record was mistaken for each class, sorted by
    /// record label then predicted class.
    pub misclassified: Vec<MisclassCount>,
}

/// Train `n_models` readouts whose initialization seeds derive from the
/// given seed, and evaluate each on the same test set. Models train in
/// parallel; every aggregate is accumulated in model-index order, so the
/// outcome does not depend on thread scheduling.
pub fn train_ensemble(
    train_set: &[QuantizedRecord],
    test_set: &[QuantizedRecord],
    config: &TrainConfig,
    n_models: usize,
    seed: u64,
) -> Result<EnsembleOutcome> {
    if n_models == 0 {
        return Err(Error::config("an ensemble needs at least one model"));
    }
    let results: Vec<(ReadoutModel, Evaluation)> = (0..n_models)
        .into_par_iter()
        .map(|i| {
            let model = train(train_set, config, derive_seed(seed, "model", i as u64))?;
            let evaluation = evaluate(&model, test_set)?;
            Ok((model, evaluation))
        })
        .collect::<Result<_>>()?;

    let mut models = Vec::with_capacity(n_models);
    let mut accuracies = Vec::with_capacity(n_models);
    let mut confusion = [[0usize; CLASS_COUNT]; CLASS_COUNT];
    let mut tallies: BTreeMap<(usize, u8, usize), usize> = BTreeMap::new();
    for (model, evaluation) in results {
        accuracies.push(evaluation.accuracy);
        for (total, row) in confusion.iter_mut().zip(&evaluation.confusion) {
            for (t, v) in total.iter_mut().zip(row) {
                *t += v;
            }
        }
        for &(label, predicted) in &evaluation.misclassified {
            *tallies
                .entry((label.class.index(), label.variant, predicted.index()))
                .or_insert(0) += 1;
        }
        models.push(model);
    }
    let n = n_models as f64;
    let mean_accuracy = accuracies.iter().sum::<f64>() / n;
    let variance = accuracies
        .iter()
        .map(|a| (a - mean_accuracy).powi(2))
        .sum::<f64>()
        / n;
    let misclassified = tallies
        .into_iter()
        .map(|((class, variant, predicted), count)| MisclassCount {
            label: Label::new(PatternClass::ALL[class], variant),
            predicted: PatternClass::ALL[predicted],
            count,
        })
        .collect();
    Ok(EnsembleOutcome {
        models,
        accuracies,
        mean_accuracy,
        std_accuracy: variance.sqrt(),
        confusion,
        misclassified,
    })
}
