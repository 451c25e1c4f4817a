//! Hashed n-gram features: lower-cased word unigrams and bigrams plus
//! character trigrams of the space-padded message, hashed with a seeded
//! xxh3 into `dim` buckets.

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

pub const DEFAULT_DIM: usize = 1 << 18;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub dim: usize,
    pub seed: u64,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            dim: DEFAULT_DIM,
            seed: 0,
        }
    }
}

/// Sparse vector, strictly ascending bucket indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureVector {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f32>,
}

impl FeatureVector {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f32)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn zero(dim: usize) -> Self {
        FeatureVector {
            dim,
            ..FeatureVector::default()
        }
    }
}

const WORD: u8 = b'w';
const BIGRAM: u8 = b'b';
const TRIGRAM: u8 = b'c';

/// Every n-gram of `raw` in extraction order, as the byte strings that get
/// hashed (kind tag followed by the n-gram text).
pub fn ngrams(raw: &str) -> Vec<Vec<u8>> {
    let lower = raw.to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    if words.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(words.len() * 2 + lower.len());
    for w in &words {
        let mut key = vec![WORD];
        key.extend_from_slice(w.as_bytes());
        out.push(key);
    }
    for pair in words.windows(2) {
        let mut key = vec![BIGRAM];
        key.extend_from_slice(pair[0].as_bytes());
        key.push(b' ');
        key.extend_from_slice(pair[1].as_bytes());
        out.push(key);
    }
    let padded: Vec<char> = std::iter::once(' ')
        .chain(words.join(" ").chars())
        .chain(std::iter::once(' '))
        .collect();
    for tri in padded.windows(3) {
        let mut key = vec![TRIGRAM];
        let s: String = tri.iter().collect();
        key.extend_from_slice(s.as_bytes());
        out.push(key);
    }
    out
}

pub fn bucket(key: &[u8], cfg: &FeaturizerConfig) -> u32 {
    (xxh3_64_with_seed(key, cfg.seed) % cfg.dim as u64) as u32
}

/// Sorted bucket ids with repeat counts.
pub fn hashed_counts(raw: &str, cfg: &FeaturizerConfig) -> Vec<(u32, u32)> {
    let mut buckets: Vec<u32> = ngrams(raw).iter().map(|k| bucket(k, cfg)).collect();
    buckets.sort_unstable();
    let mut out: Vec<(u32, u32)> = Vec::with_capacity(buckets.len());
    for b in buckets {
        match out.last_mut() {
            Some((last, c)) if *last == b => *c += 1,
            _ => out.push((b, 1)),
        }
    }
    out
}

/// Weighted counts, L2-normalized. `weight` maps a bucket to its multiplier.
pub fn normalized(counts: &[(u32, u32)], dim: usize, weight: impl Fn(u32) -> f32) -> FeatureVector {
    let raw: Vec<f32> = counts.iter().map(|&(b, c)| c as f32 * weight(b)).collect();
    let norm = raw.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return FeatureVector::zero(dim);
    }
    FeatureVector {
        dim,
        indices: counts.iter().map(|&(b, _)| b).collect(),
        values: raw.iter().map(|&v| (v as f64 / norm) as f32).collect(),
    }
}

/// Term counts, L2-normalized.
pub fn featurize(raw: &str, cfg: &FeaturizerConfig) -> FeatureVector {
    normalized(&hashed_counts(raw, cfg), cfg.dim, |_| 1.0)
}
