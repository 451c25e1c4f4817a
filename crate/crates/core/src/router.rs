//! Two-stage router: a binary gate sends a line either to the universal
//! expert or onward, and a multiclass selector picks the failure domain.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::backbone::{Example, FeatureVector, FocalLossConfig, LinearClassifier, Objective, TrainConfig, Trainer};
use crate::corpus::LogRecord;
use crate::dataset::{tail_split, LabeledLine, Split};
use crate::error::{Error, Result};
use crate::partition::CertifiedPartition;
use crate::seed;

/// Gate scores at or above this value take the expert path.
pub const GATE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    /// Universal lines kept per expert-domain line in the gate dataset.
    pub gate_subsample_ratio: f64,
    pub validation_fraction: f64,
    pub gate_recall_target: f64,
    pub gate_max_epochs: usize,
    pub selector_accuracy_target: f64,
    pub selector_patience: usize,
    pub selector_max_epochs: usize,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            gate_subsample_ratio: 3.0,
            validation_fraction: 0.1,
            gate_recall_target: 0.95,
            gate_max_epochs: 20,
            selector_accuracy_target: 0.80,
            selector_patience: 1,
            selector_max_epochs: 20,
        }
    }
}

/// Gate training lines: every expert-domain line (label 1) plus a seeded
/// uniform subsample of universal lines (label 0), at most `ratio` times the
/// expert-line count.
pub fn build_gate_dataset(
    records: &[LogRecord],
    partition: &CertifiedPartition,
    ratio: f64,
    validation_fraction: f64,
    seed: u64,
) -> Result<Split> {
    let mut expert = Vec::new();
    let mut universal = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let id = r
            .event_id
            .ok_or_else(|| Error::InvalidArgument(format!("record at ordinal {} has no event id", r.ordinal)))?;
        if partition.domain_of(id) == CertifiedPartition::UNIVERSAL {
            universal.push(i);
        } else {
            expert.push(i);
        }
    }
    if expert.is_empty() {
        return Err(Error::Partition("no expert-domain lines: no failure domain was certified".into()));
    }
    let cap = (expert.len() as f64 * ratio).floor() as usize;
    let kept: Vec<usize> = if universal.len() <= cap {
        universal
    } else {
        let mut picked: Vec<usize> = index::sample(&mut seed::rng(seed), universal.len(), cap)
            .into_iter()
            .map(|j| universal[j])
            .collect();
        picked.sort_unstable();
        picked
    };
    let lines = expert
        .into_iter()
        .map(|index| LabeledLine { index, label: 1 })
        .chain(kept.into_iter().map(|index| LabeledLine { index, label: 0 }))
        .collect();
    Ok(tail_split(lines, 2, validation_fraction))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub epochs: usize,
    pub validation_recall: f64,
    pub reached_target: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateModel {
    pub classifier: LinearClassifier,
    pub report: GateReport,
}

impl GateModel {
    pub fn score(&self, x: &FeatureVector) -> Result<f64> {
        self.classifier.probability(x)
    }
}

fn recall_at_threshold(model: &LinearClassifier, validation: &[Example]) -> f64 {
    let positives: Vec<&Example> = validation.iter().filter(|e| e.label == 1).collect();
    let hit = positives
        .iter()
        .filter(|e| crate::backbone::focal::sigmoid(model.logit_unchecked(0, &e.x)) >= GATE_THRESHOLD)
        .count();
    hit as f64 / positives.len() as f64
}

/// Trains the gate, checking validation recall at the fixed threshold after
/// every epoch. Stops at the recall target or after `max_epochs` and keeps
/// the best-recall checkpoint (the earliest one on ties).
pub fn train_gate(
    train: &[Example],
    validation: &[Example],
    dim: usize,
    focal: FocalLossConfig,
    train_cfg: TrainConfig,
    recall_target: f64,
    max_epochs: usize,
) -> Result<GateModel> {
    if !validation.iter().any(|e| e.label == 1) {
        return Err(Error::Training("gate validation split has no expert-domain lines".into()));
    }
    let mut trainer = Trainer::new(train, dim, Objective::Binary(focal), train_cfg)?;
    let mut best: Option<(f64, usize, LinearClassifier)> = None;
    for epoch in 1..=max_epochs.max(1) {
        trainer.run_epoch();
        let recall = recall_at_threshold(trainer.model(), validation);
        log::debug!("gate epoch {epoch}: validation recall {recall:.4}");
        if best.as_ref().map_or(true, |(r, _, _)| recall > *r) {
            best = Some((recall, epoch, trainer.model().clone()));
        }
        if recall >= recall_target {
            break;
        }
    }
    let (recall, epochs, classifier) = best.expect("at least one epoch ran");
    let reached_target = recall >= recall_target;
    if !reached_target {
        log::warn!("gate validation recall {recall:.4} below target {recall_target}");
    }
    if !classifier.is_finite() {
        return Err(Error::Training("gate weights are not finite".into()));
    }
    Ok(GateModel {
        classifier,
        report: GateReport {
            epochs,
            validation_recall: recall,
            reached_target,
        },
    })
}

/// Inverse-frequency class weights, `N / ((C - 1) * count)`, where the
/// `C - 1` expert domains are the classes and `N` is their total count.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("class weights need at least one domain".into()));
    }
    if let Some(pos) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("expert domain {} has no training lines", pos + 1)));
    }
    let total: usize = counts.iter().sum();
    let classes = counts.len() as f64;
    Ok(counts.iter().map(|&c| total as f64 / (classes * c as f64)).collect())
}

/// Selector training lines: every expert-domain line, labeled with its
/// domain index minus one.
pub fn build_selector_dataset(records: &[LogRecord], partition: &CertifiedPartition, validation_fraction: f64) -> Split {
    let lines = records
        .iter()
        .enumerate()
        .filter_map(|(index, r)| {
            let d = partition.domain_of(r.event_id?);
            (d != CertifiedPartition::UNIVERSAL).then(|| LabeledLine { index, label: d - 1 })
        })
        .collect();
    tail_split(lines, partition.len() - 1, validation_fraction)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectorReport {
    pub epochs: usize,
    pub validation_accuracy: Option<f64>,
    pub reached_target: bool,
}

/// Multiclass domain chooser. With a single expert domain it is the constant
/// function and carries no classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorModel {
    pub classifier: Option<LinearClassifier>,
    pub classes: usize,
    pub class_weights: Vec<f64>,
    pub report: SelectorReport,
}

impl SelectorModel {
    pub fn constant() -> Self {
        SelectorModel {
            classifier: None,
            classes: 1,
            class_weights: vec![1.0],
            report: SelectorReport::default(),
        }
    }

    /// Probability of each expert domain, in domain order.
    pub fn distribution(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        match &self.classifier {
            Some(m) => m.distribution(x),
            None => Ok(vec![1.0]),
        }
    }
}

fn accuracy(model: &LinearClassifier, validation: &[Example]) -> f64 {
    let correct = validation
        .iter()
        .filter(|e| {
            let z: Vec<f64> = (0..model.outputs()).map(|o| model.logit_unchecked(o, &e.x)).collect();
            argmax(&z) == e.label
        })
        .count();
    correct as f64 / validation.len() as f64
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorTraining {
    pub gamma: f64,
    pub accuracy_target: f64,
    pub patience: usize,
    pub max_epochs: usize,
}

/// Trains the class-weighted selector. Examples must already carry their
/// class weights. Stops at the accuracy target, after `patience` epochs
/// without improvement, or at `max_epochs`, keeping the best checkpoint.
pub fn train_selector(
    train: &[Example],
    validation: &[Example],
    classes: usize,
    class_weights: Vec<f64>,
    dim: usize,
    train_cfg: TrainConfig,
    rule: &SelectorTraining,
) -> Result<SelectorModel> {
    match classes {
        0 => return Err(Error::Training("selector needs at least one expert domain".into())),
        1 => return Ok(SelectorModel::constant()),
        _ => {}
    }
    let objective = Objective::Multiclass {
        classes,
        gamma: rule.gamma,
    };
    let mut trainer = Trainer::new(train, dim, objective, train_cfg)?;
    let mut best: Option<(f64, usize, LinearClassifier)> = None;
    let mut stale = 0;
    for epoch in 1..=rule.max_epochs.max(1) {
        trainer.run_epoch();
        if validation.is_empty() {
            continue;
        }
        let acc = accuracy(trainer.model(), validation);
        log::debug!("selector epoch {epoch}: validation accuracy {acc:.4}");
        if best.as_ref().map_or(true, |(a, _, _)| acc > *a) {
            best = Some((acc, epoch, trainer.model().clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        if acc >= rule.accuracy_target || stale >= rule.patience {
            break;
        }
    }
    let (report, classifier) = match best {
        Some((acc, epochs, model)) => (
            SelectorReport {
                epochs,
                validation_accuracy: Some(acc),
                reached_target: acc >= rule.accuracy_target,
            },
            model,
        ),
        None => {
            log::warn!("selector validation split is empty; trained for {} epochs", trainer.epochs());
            (
                SelectorReport {
                    epochs: trainer.epochs(),
                    validation_accuracy: None,
                    reached_target: false,
                },
                trainer.model().clone(),
            )
        }
    };
    if !classifier.is_finite() {
        return Err(Error::Training("selector weights are not finite".into()));
    }
    Ok(SelectorModel {
        classifier: Some(classifier),
        classes,
        class_weights,
        report,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Universal,
    /// Index into the certified partition (never the universal domain).
    Domain(usize),
}

/// Gate score below the threshold goes universal; otherwise the selector's
/// most likely domain.
pub fn route(gate_score: f64, selector: &[f64]) -> Route {
    if gate_score < GATE_THRESHOLD {
        Route::Universal
    } else {
        Route::Domain(argmax(selector) + 1)
    }
}
