//! Statistical baselines scored on the same split and K-shot sample as the
//! pipeline. Each one produces a continuous score whose threshold is fitted
//! on the K-shot calibration lines.
//!
//! | name            | stands in for               | scorer                                   |
//! |-----------------|-----------------------------|------------------------------------------|
//! | `eventid-vote`  | Drain + random forest       | anomaly share of the line's EventID      |
//! | `tfidf-centroid`| TF-IDF + isolation forest   | cosine distance to the PU-pool centroid  |
//! | `global-linear` | sentence embedding + LR     | one focal linear model on hashed n-grams |

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneState;
use crate::calibration::{calibrate_threshold, ThresholdFit};
use crate::corpus::LogRecord;
use crate::dataset::{examples, tail_split, LabeledLine};
use crate::drain::{tokenize, EventId, TemplateTable};
use crate::error::Result;
use crate::experts::train_expert;
use crate::inference::ModelBundle;
use crate::kshot::KShotSample;
use crate::par::{self, ExecMode};
use crate::pipeline::{PipelineConfig, Prepared};
use crate::seed::{derive_seed, rng};
use crate::tfidf::{dot, normalize, SparseVec, TfIdf};

use super::metrics::MetricsReport;
use super::truth_labels;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub name: String,
    /// What the baseline replaces, for report headers.
    pub substitution: String,
    pub threshold: ThresholdFit,
    pub metrics: MetricsReport,
}

/// A fitted scorer: higher means more anomalous.
pub trait Scorer: Sync {
    fn score(&self, raw: &str) -> f64;
}

/// Fits every baseline on `prep` and scores its test split.
pub fn run_baselines(prep: &Prepared, bundle: &ModelBundle, cfg: &PipelineConfig, mode: ExecMode) -> Result<Vec<BaselineResult>> {
    let offline = prep.offline();
    let vote = EventIdVote::fit(offline, &prep.sample, &prep.table);
    let centroid = TfIdfCentroid::fit(offline, &prep.pool.indices, cfg.partition.pool_sample_size, derive_seed(cfg.seed, "baseline.centroid.sample"));
    let linear = GlobalLinear::fit(offline, &prep.sample, &bundle.backbone, cfg, mode)?;
    Ok(vec![
        evaluate_scorer("eventid-vote", "per-EventID K-shot anomaly share replaces the random forest", &vote, prep, cfg, mode)?,
        evaluate_scorer("tfidf-centroid", "centroid cosine distance replaces the isolation forest", &centroid, prep, cfg, mode)?,
        evaluate_scorer("global-linear", "hashed n-gram features replace sentence embeddings", &linear, prep, cfg, mode)?,
    ])
}

/// Calibrates `scorer` on the K-shot calibration lines and scores the test
/// split with the fitted threshold.
pub fn evaluate_scorer(
    name: &str,
    substitution: &str,
    scorer: &dyn Scorer,
    prep: &Prepared,
    cfg: &PipelineConfig,
    mode: ExecMode,
) -> Result<BaselineResult> {
    let offline = prep.offline();
    let calib = calibration_lines(&prep.sample);
    let calib_scores = par::map_slice(mode, &calib, |&i| scorer.score(&offline[i].raw));
    let calib_labels: Vec<bool> = calib.iter().map(|&i| offline[i].label.is_anomaly()).collect();
    let fit = calibrate_threshold(&calib_scores, &calib_labels, cfg.calibration.recall_floor, cfg.calibration.max_candidates);

    let test = prep.test();
    let truth = truth_labels(test)?;
    let scores = par::map_slice(mode, test, |r| scorer.score(&r.raw));
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= fit.tau).collect();
    Ok(BaselineResult {
        name: name.to_string(),
        substitution: substitution.to_string(),
        threshold: fit,
        metrics: MetricsReport::from_predictions(&predicted, &truth, &scores),
    })
}

/// Every K-shot calibration line, ascending.
pub fn calibration_lines(sample: &KShotSample) -> Vec<usize> {
    let mut lines: Vec<usize> = sample.per_event.values().flat_map(|s| s.calib.iter().copied()).collect();
    lines.sort_unstable();
    lines
}

fn training_lines(sample: &KShotSample) -> Vec<usize> {
    let mut lines: Vec<usize> = sample.per_event.values().flat_map(|s| s.train.iter().copied()).collect();
    lines.sort_unstable();
    lines
}

/// Anomaly share of each EventID's K-shot training lines. Lines the offline
/// table cannot match, and EventIDs without training lines, score 0.
pub struct EventIdVote<'a> {
    table: &'a TemplateTable,
    share: BTreeMap<EventId, f64>,
}

impl<'a> EventIdVote<'a> {
    pub fn fit(records: &[LogRecord], sample: &KShotSample, table: &'a TemplateTable) -> Self {
        let share = sample
            .per_event
            .iter()
            .filter(|(_, s)| !s.train.is_empty())
            .map(|(&id, s)| {
                let anomalies = s.train.iter().filter(|&&i| records[i].label.is_anomaly()).count();
                (id, anomalies as f64 / s.train.len() as f64)
            })
            .collect();
        EventIdVote { table, share }
    }
}

impl Scorer for EventIdVote<'_> {
    fn score(&self, raw: &str) -> f64 {
        self.table
            .match_only(raw)
            .and_then(|id| self.share.get(&id).copied())
            .unwrap_or(0.0)
    }
}

/// Word bigrams over masked tokens, with sentinels so one-token lines still
/// yield a term.
pub fn bigrams(raw: &str) -> Vec<String> {
    let mut tokens = vec!["^".to_string()];
    tokens.extend(tokenize(raw));
    tokens.push("$".to_string());
    tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])).collect()
}

/// `1 - cos(x, c)` where `c` is the normalized mean TF-IDF bigram vector of
/// a seeded PU-pool sample.
pub struct TfIdfCentroid {
    tfidf: TfIdf,
    centroid: SparseVec,
}

impl TfIdfCentroid {
    pub fn fit(records: &[LogRecord], pool: &[usize], sample_size: usize, seed: u64) -> Self {
        let take = pool.len().min(sample_size);
        let mut picked = index::sample(&mut rng(seed), pool.len(), take).into_vec();
        picked.sort_unstable();
        let docs: Vec<Vec<String>> = picked.iter().map(|&p| bigrams(&records[pool[p]].raw)).collect();
        let tfidf = TfIdf::fit(&docs);
        let mut sum: BTreeMap<u32, f64> = BTreeMap::new();
        for d in &docs {
            for (id, x) in tfidf.transform(d) {
                *sum.entry(id).or_default() += x;
            }
        }
        let mut centroid: SparseVec = sum.into_iter().collect();
        normalize(&mut centroid);
        TfIdfCentroid { tfidf, centroid }
    }
}

impl Scorer for TfIdfCentroid {
    fn score(&self, raw: &str) -> f64 {
        1.0 - dot(&self.tfidf.transform(&bigrams(raw)), &self.centroid)
    }
}

/// One focal linear model over IDF-weighted features of every K-shot
/// training line, trained in the expert regime.
pub struct GlobalLinear<'a> {
    backbone: &'a BackboneState,
    model: crate::backbone::LinearClassifier,
}

impl<'a> GlobalLinear<'a> {
    pub fn fit(records: &[LogRecord], sample: &KShotSample, backbone: &'a BackboneState, cfg: &PipelineConfig, mode: ExecMode) -> Result<Self> {
        let lines: Vec<LabeledLine> = training_lines(sample)
            .into_iter()
            .map(|index| LabeledLine {
                index,
                label: usize::from(records[index].label.is_anomaly()),
            })
            .collect();
        let split = tail_split(lines, 2, cfg.experts.validation_fraction);
        let weighted = |s: &str| backbone.weighted(s);
        let train = examples(records, &split.train, mode, weighted, |_| 1.0);
        let val = examples(records, &split.validation, mode, weighted, |_| 1.0);
        let trained = train_expert(
            0,
            &train,
            &val,
            backbone.dim(),
            cfg.focal,
            cfg.training.with_seed(derive_seed(cfg.seed, "baseline.linear.train")),
            &cfg.experts,
        )?;
        let model = trained.classifier.expect("train_expert returns a classifier");
        Ok(GlobalLinear { backbone, model })
    }
}

impl Scorer for GlobalLinear<'_> {
    fn score(&self, raw: &str) -> f64 {
        self.model.probability(&self.backbone.weighted(raw)).expect("dims match")
    }
}
