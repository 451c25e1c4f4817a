//! Decision thresholds. A line is anomalous when its score is at or above
//! the threshold. Each expert's threshold maximizes F1 on the K-shot
//! calibration lines subject to a recall floor; the universal expert's score
//! is first fused with the gate score in logit space.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backbone::focal::{logit, sigmoid};
use crate::error::{Error, Result};

pub const DEFAULT_FUSION_GRID: [f64; 7] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub recall_floor: f64,
    /// Above this many unique scores, candidates are percentiles.
    pub max_candidates: usize,
    pub fusion_grid: Vec<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            recall_floor: 0.90,
            max_candidates: 1_000,
            fusion_grid: DEFAULT_FUSION_GRID.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub tau: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub candidates: usize,
    /// Whether the chosen threshold meets the recall floor.
    pub meets_floor: bool,
    /// Set when the subset had no anomalies and the default was used.
    pub fallback: bool,
}

impl ThresholdFit {
    fn fallback() -> Self {
        ThresholdFit {
            tau: 0.5,
            f1: 0.0,
            recall: 0.0,
            precision: 0.0,
            candidates: 0,
            meets_floor: false,
            fallback: true,
        }
    }
}

/// Candidate thresholds: every unique score when there are at most `max`,
/// otherwise the nearest-rank percentiles `q = i / (max - 1)`.
pub fn threshold_candidates(scores: &[f64], max: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut unique = sorted.clone();
    unique.dedup();
    if unique.len() <= max {
        return unique;
    }
    let n = sorted.len();
    let mut out: Vec<f64> = (0..max)
        .map(|i| {
            let q = i as f64 / (max - 1) as f64;
            let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
            sorted[rank - 1]
        })
        .collect();
    out.dedup();
    out
}

/// Counts for "score >= tau" over scores sorted ascending with a suffix count
/// of positives.
struct Sweep {
    sorted: Vec<(f64, bool)>,
    pos_suffix: Vec<usize>,
    positives: usize,
}

impl Sweep {
    fn new(scores: &[f64], labels: &[bool]) -> Self {
        let mut sorted: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pos_suffix = vec![0; sorted.len() + 1];
        for i in (0..sorted.len()).rev() {
            pos_suffix[i] = pos_suffix[i + 1] + usize::from(sorted[i].1);
        }
        let positives = pos_suffix[0];
        Sweep {
            sorted,
            pos_suffix,
            positives,
        }
    }

    /// (precision, recall, f1) of predicting anomaly for score >= tau.
    fn at(&self, tau: f64) -> (f64, f64, f64) {
        let start = self.sorted.partition_point(|&(s, _)| s < tau);
        let predicted = self.sorted.len() - start;
        let tp = self.pos_suffix[start];
        let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
        let recall = tp as f64 / self.positives as f64;
        let f1 = if tp > 0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        (precision, recall, f1)
    }
}

/// Maximum F1 among candidates with recall at or above the floor; if none
/// qualifies, maximum recall and then maximum F1. Ties go to the lower
/// threshold.
pub fn calibrate_threshold(scores: &[f64], labels: &[bool], recall_floor: f64, max_candidates: usize) -> ThresholdFit {
    assert_eq!(scores.len(), labels.len());
    if !labels.iter().any(|&l| l) {
        log::warn!("calibration subset has no anomalies; using threshold 0.5");
        return ThresholdFit::fallback();
    }
    let candidates = threshold_candidates(scores, max_candidates.max(2));
    let sweep = Sweep::new(scores, labels);
    let mut best: Option<ThresholdFit> = None;
    for &tau in &candidates {
        let (precision, recall, f1) = sweep.at(tau);
        let fit = ThresholdFit {
            tau,
            f1,
            recall,
            precision,
            candidates: candidates.len(),
            meets_floor: recall >= recall_floor,
            fallback: false,
        };
        // candidates ascend, so strict comparisons keep the lower threshold
        let better = match &best {
            None => true,
            Some(b) => match (fit.meets_floor, b.meets_floor) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => fit.f1 > b.f1,
                (false, false) => fit.recall > b.recall || (fit.recall == b.recall && fit.f1 > b.f1),
            },
        };
        if better {
            best = Some(fit);
        }
    }
    best.expect("at least one candidate")
}

/// `sigmoid(logit(s_u) + w * logit(g))` with clamped logits.
pub fn fuse_universal(s_u: f64, g: f64, w: f64) -> f64 {
    sigmoid(logit(s_u) + w * logit(g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniversalFit {
    pub weight: f64,
    pub fit: ThresholdFit,
}

/// Grid search over fusion weights; ties go to the smaller weight.
pub fn calibrate_universal(
    s_u: &[f64],
    gate: &[f64],
    labels: &[bool],
    grid: &[f64],
    recall_floor: f64,
    max_candidates: usize,
) -> Result<UniversalFit> {
    if s_u.is_empty() {
        return Err(Error::Empty("universal calibration subset is empty".into()));
    }
    if grid.is_empty() {
        return Err(Error::Config("fusion grid is empty".into()));
    }
    if !labels.iter().any(|&l| l) {
        log::warn!("universal calibration subset has no anomalies; using w = 0, threshold 0.5");
        return Ok(UniversalFit {
            weight: 0.0,
            fit: ThresholdFit::fallback(),
        });
    }
    let mut weights = grid.to_vec();
    weights.sort_by(f64::total_cmp);
    let mut best: Option<UniversalFit> = None;
    for w in weights {
        let fused: Vec<f64> = s_u.iter().zip(gate).map(|(&s, &g)| fuse_universal(s, g, w)).collect();
        let fit = calibrate_threshold(&fused, labels, recall_floor, max_candidates);
        let better = match &best {
            None => true,
            Some(b) => (fit.meets_floor && !b.fit.meets_floor) || (fit.meets_floor == b.fit.meets_floor && fit.f1 > b.fit.f1),
        };
        if better {
            best = Some(UniversalFit { weight: w, fit });
        }
    }
    Ok(best.expect("nonempty grid"))
}

/// Everything inference needs to turn scores into decisions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Threshold per mixed domain, keyed by domain index.
    pub tau: BTreeMap<usize, f64>,
    pub fusion_weight: f64,
    pub tau_universal: f64,
}
