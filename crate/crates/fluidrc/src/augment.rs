//! Training-set augmentation: synthetic copies of featurized records with a
//! per-series Gaussian offset, mirroring how the physical sensor drifts as a
//! whole rather than per sample.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::patterns::PatternClass;
use crate::signal::QuantizedRecord;

#[derive(Clone, Debug)]
pub struct AugmentConfig {
    /// Standard deviation of the per-series offset, in raw channel units.
    pub sigma: f64,
    /// Training-set size after augmentation (originals plus synthetics).
    pub target_total: usize,
    pub seed: u64,
}

/// Grow a training set to `target_total` records with Gaussian-offset
/// copies, keeping classes balanced.
///
/// Synthetics are assigned round-robin over the eight classes; within a
/// class, source records are cycled in their given order. Each synthetic
/// draws one offset per signal series (a series spans `q` consecutive
/// features) from its own seeded stream, so results do not depend on how
/// many records are generated or in what order.
pub fn gaussian_augment(
    train: &[QuantizedRecord],
    q: usize,
    config: &AugmentConfig,
) -> Result<Vec<QuantizedRecord>> {
    if !(config.sigma >= 0.0 && config.sigma.is_finite()) {
        return Err(Error::config(format!(
            "augmentation sigma must be a non-negative number, got {}",
            config.sigma
        )));
    }
    if train.is_empty() {
        return Err(Error::data("no training records to augment"));
    }
    if config.target_total < train.len() {
        return Err(Error::config(format!(
            "augmentation target {} is below the training-set size {}",
            config.target_total,
            train.len()
        )));
    }
    let width = train[0].features.len();
    if width == 0 || train.iter().any(|r| r.features.len() != width) {
        return Err(Error::data("training records have differing feature lengths"));
    }
    if q == 0 || width % q != 0 {
        return Err(Error::data(format!(
            "feature vectors of length {width} do not split into series of {q} intervals"
        )));
    }

    let by_class: Vec<Vec<&QuantizedRecord>> = PatternClass::ALL
        .iter()
        .map(|&class| train.iter().filter(|r| r.label.class == class).collect())
        .collect();
    for (class, members) in PatternClass::ALL.iter().zip(&by_class) {
        if members.is_empty() {
            return Err(Error::data(format!(
                "class {class} has no training records to balance"
            )));
        }
    }

    let normal = Normal::new(0.0, config.sigma).expect("sigma checked above");
    let series_count = width / q;
    let mut out = train.to_vec();
    out.reserve(config.target_total - train.len());
    for i in 0..config.target_total - train.len() {
        let members = &by_class[i % PatternClass::ALL.len()];
        let source = members[(i / PatternClass::ALL.len()) % members.len()];
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64);
        let mut features = source.features.clone();
        for series in 0..series_count {
            let offset = normal.sample(&mut rng);
            for value in &mut features[series * q..(series + 1) * q] {
                *value += offset;
            }
        }
        out.push(QuantizedRecord {
            label: source.label,
            features,
            synthetic: true,
        });
    }
    Ok(out)
}
