//! Text classifier backbone shared by the gate, the selector and the experts.
//!
//! The reference implementation is a hashed n-gram linear model trained with
//! focal loss. A heavier encoder can replace it by providing the same four
//! operations: featurize, train, score and unsupervised adaptation. For a
//! transformer that adaptation step is masked-language-model pre-training on
//! the normal pool, followed by fine-tuning with the lower layers frozen; for
//! the hashed model it fits inverse document frequencies.

pub mod features;
pub mod focal;
pub mod linear;
pub mod train;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, ExecMode};
use crate::seed;
pub use features::{featurize, FeatureVector, FeaturizerConfig};
pub use focal::FocalLossConfig;
pub use linear::LinearClassifier;
pub use train::{Example, Objective, TrainConfig, Trainer};

pub const DEFAULT_ADAPT_CAP: usize = 200_000;

/// Result of unsupervised adaptation, shared by every expert.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneState {
    pub featurizer: FeaturizerConfig,
    /// Lines the statistics were fitted on.
    pub lines_used: usize,
    /// Per-bucket inverse document frequency, `ln((1 + n) / (1 + df)) + 1`.
    #[serde(skip)]
    pub idf: Vec<f32>,
}

impl BackboneState {
    pub fn dim(&self) -> usize {
        self.featurizer.dim
    }

    /// Plain normalized counts.
    pub fn plain(&self, raw: &str) -> FeatureVector {
        featurize(raw, &self.featurizer)
    }

    /// IDF-weighted counts, normalized.
    pub fn weighted(&self, raw: &str) -> FeatureVector {
        let counts = features::hashed_counts(raw, &self.featurizer);
        features::normalized(&counts, self.dim(), |b| self.idf[b as usize])
    }

    /// Both views from a single hashing pass.
    pub fn both(&self, raw: &str) -> (FeatureVector, FeatureVector) {
        let counts = features::hashed_counts(raw, &self.featurizer);
        (
            features::normalized(&counts, self.dim(), |_| 1.0),
            features::normalized(&counts, self.dim(), |b| self.idf[b as usize]),
        )
    }

    pub fn with_idf(featurizer: FeaturizerConfig, lines_used: usize, idf: Vec<f32>) -> Result<Self> {
        if idf.len() != featurizer.dim {
            return Err(Error::DimensionMismatch {
                expected: featurizer.dim,
                actual: idf.len(),
            });
        }
        if idf.iter().any(|v| !v.is_finite()) {
            return Err(Error::Bundle("idf table contains non-finite values".into()));
        }
        Ok(BackboneState {
            featurizer,
            lines_used,
            idf,
        })
    }
}

/// Fits IDF statistics on a seeded uniform sample of at most `cap` lines.
pub fn adapt_unsupervised<S: AsRef<str> + Sync>(
    pool: &[S],
    cap: usize,
    featurizer: FeaturizerConfig,
    seed: u64,
    mode: ExecMode,
) -> Result<BackboneState> {
    if pool.is_empty() {
        return Err(Error::Empty("unsupervised adaptation pool is empty".into()));
    }
    if featurizer.dim == 0 || featurizer.dim > u32::MAX as usize {
        return Err(Error::Config(format!("feature dim {} out of range", featurizer.dim)));
    }
    let take = cap.min(pool.len());
    let chosen: Vec<usize> = if take == pool.len() {
        (0..pool.len()).collect()
    } else {
        let mut picked = index::sample(&mut seed::rng(seed), pool.len(), take).into_vec();
        picked.sort_unstable();
        picked
    };
    let buckets = par::map_slice(mode, &chosen, |&i| {
        features::hashed_counts(pool[i].as_ref(), &featurizer)
            .into_iter()
            .map(|(b, _)| b)
            .collect::<Vec<u32>>()
    });
    let mut df = vec![0u32; featurizer.dim];
    for doc in &buckets {
        for &b in doc {
            df[b as usize] += 1;
        }
    }
    let n = take as f64;
    let idf = df.iter().map(|&d| (((1.0 + n) / (1.0 + d as f64)).ln() + 1.0) as f32).collect();
    Ok(BackboneState {
        featurizer,
        lines_used: take,
        idf,
    })
}
