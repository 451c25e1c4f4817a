//! One binary anomaly classifier per mixed domain plus the universal one.
//! Pure-anomaly domains need no classifier: routing there is the decision.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::backbone::{Example, FeatureVector, FocalLossConfig, LinearClassifier, Objective, TrainConfig, Trainer};
use crate::corpus::LogRecord;
use crate::dataset::{tail_split, LabeledLine, Split};
use crate::error::{Error, Result};
use crate::eval::metrics::auroc;
use crate::kshot::{KShotSample, PuNormalPool};
use crate::partition::{CertifiedPartition, DomainKind};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    /// Negatives per positive for the universal expert.
    pub universal_negative_cap: f64,
    /// Negatives per positive for mixed-domain experts.
    pub expert_negative_cap: f64,
    /// Datasets below this many lines train for a fixed number of steps.
    pub small_dataset_lines: usize,
    pub small_dataset_steps: usize,
    pub check_every: usize,
    /// Epochs without validation AUROC improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            universal_negative_cap: 10.0,
            expert_negative_cap: 20.0,
            small_dataset_lines: 4_000,
            small_dataset_steps: 500,
            check_every: 50,
            patience: 3,
            max_epochs: 30,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpertDataset {
    pub domain: usize,
    /// Record indices, ascending.
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub split: Split,
}

impl ExpertDataset {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Anomalous K-shot training lines of the domain's EventIDs (of every
/// EventID for the universal expert), plus a seeded sample of universal PU
/// pool lines capped at a multiple of the positive count.
pub fn build_expert_dataset(
    domain: usize,
    records: &[LogRecord],
    sample: &KShotSample,
    pool: &PuNormalPool,
    partition: &CertifiedPartition,
    cfg: &ExpertConfig,
    seed: u64,
) -> Result<ExpertDataset> {
    let kind = partition.kind(domain);
    if kind == DomainKind::PureAnomaly {
        return Err(Error::InvalidArgument(format!(
            "domain `{}` is pure-anomaly and has no expert",
            partition.name(domain)
        )));
    }
    let universal = kind == DomainKind::Universal;
    let mut positives: Vec<usize> = sample
        .per_event
        .iter()
        .filter(|(id, _)| universal || partition.domain_of(**id) == domain)
        .flat_map(|(_, s)| s.train.iter().copied())
        .filter(|&i| records[i].label.is_anomaly())
        .collect();
    positives.sort_unstable();
    if positives.is_empty() {
        return Err(Error::Training(format!(
            "domain `{}` has no anomalous training lines",
            partition.name(domain)
        )));
    }
    let factor = if universal {
        cfg.universal_negative_cap
    } else {
        cfg.expert_negative_cap
    };
    let cap = (positives.len() as f64 * factor).floor() as usize;
    let candidates: Vec<usize> = pool
        .indices
        .iter()
        .copied()
        .filter(|&i| records[i].event_id.is_some_and(|e| partition.domain_of(e) == CertifiedPartition::UNIVERSAL))
        .collect();
    let negatives: Vec<usize> = if candidates.len() <= cap {
        candidates
    } else {
        let mut picked: Vec<usize> = index::sample(&mut seed::rng(seed), candidates.len(), cap)
            .into_iter()
            .map(|j| candidates[j])
            .collect();
        picked.sort_unstable();
        picked
    };
    let lines = positives
        .iter()
        .map(|&index| LabeledLine { index, label: 1 })
        .chain(negatives.iter().map(|&index| LabeledLine { index, label: 0 }))
        .collect();
    Ok(ExpertDataset {
        domain,
        split: tail_split(lines, 2, cfg.validation_fraction),
        positives,
        negatives,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    FixedSteps,
    Epochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertReport {
    pub regime: Regime,
    pub steps: usize,
    pub validation_auroc: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertModel {
    pub domain: usize,
    /// `None` for pure-anomaly domains.
    pub classifier: Option<LinearClassifier>,
    pub report: Option<ExpertReport>,
}

impl ExpertModel {
    pub fn untrained(domain: usize) -> Self {
        ExpertModel {
            domain,
            classifier: None,
            report: None,
        }
    }

    pub fn trained(&self) -> bool {
        self.classifier.is_some()
    }
}

pub fn regime_for(lines: usize, cfg: &ExpertConfig) -> Regime {
    if lines < cfg.small_dataset_lines {
        Regime::FixedSteps
    } else {
        Regime::Epochs
    }
}

fn validation_auroc(model: &LinearClassifier, validation: &[Example]) -> Option<f64> {
    let scores: Vec<f64> = validation.iter().map(|e| model.logit_unchecked(0, &e.x)).collect();
    let labels: Vec<bool> = validation.iter().map(|e| e.label == 1).collect();
    auroc(&scores, &labels)
}

struct Best {
    auroc: f64,
    steps: usize,
    model: LinearClassifier,
}

/// Keeps the latest checkpoint among those with the highest AUROC; returns
/// whether the value strictly improved.
fn offer(best: &mut Option<Best>, auroc: f64, steps: usize, model: &LinearClassifier) -> bool {
    let improved = best.as_ref().map_or(true, |b| auroc > b.auroc);
    if best.as_ref().map_or(true, |b| auroc >= b.auroc) {
        *best = Some(Best {
            auroc,
            steps,
            model: model.clone(),
        });
    }
    improved
}

/// Small datasets get exactly `small_dataset_steps` steps with a validation
/// check every `check_every` steps; larger ones train by epochs and stop
/// after `patience` epochs without improvement. The best checkpoint wins.
/// Without both classes in the validation slice there is nothing to stop
/// on, and the final model is kept.
pub fn train_expert(
    domain: usize,
    train: &[Example],
    validation: &[Example],
    dim: usize,
    focal: FocalLossConfig,
    train_cfg: TrainConfig,
    cfg: &ExpertConfig,
) -> Result<ExpertModel> {
    let positives = train.iter().chain(validation).filter(|e| e.label == 1).count();
    let negatives = train.len() + validation.len() - positives;
    let regime = regime_for(train.len() + validation.len(), cfg);
    let mut trainer = Trainer::new(train, dim, Objective::Binary(focal), train_cfg)?;
    let checkable = validation_auroc(trainer.model(), validation).is_some();
    let mut best: Option<Best> = None;

    match regime {
        Regime::FixedSteps => {
            let every = cfg.check_every.max(1);
            for step in 1..=cfg.small_dataset_steps {
                trainer.step();
                if checkable && (step % every == 0 || step == cfg.small_dataset_steps) {
                    if let Some(a) = validation_auroc(trainer.model(), validation) {
                        offer(&mut best, a, step, trainer.model());
                    }
                }
            }
        }
        Regime::Epochs => {
            let mut stale = 0;
            for _ in 0..cfg.max_epochs.max(1) {
                trainer.run_epoch();
                if !checkable {
                    continue;
                }
                let a = validation_auroc(trainer.model(), validation).unwrap_or(0.0);
                if offer(&mut best, a, trainer.steps(), trainer.model()) {
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        break;
                    }
                }
            }
        }
    }

    let (classifier, steps, validation_auroc) = match best {
        Some(b) => (b.model, b.steps, Some(b.auroc)),
        None => {
            log::warn!("expert {domain}: validation slice lacks a class; keeping the final model");
            let steps = trainer.steps();
            (trainer.into_model(), steps, None)
        }
    };
    if !classifier.is_finite() {
        return Err(Error::Training(format!("expert {domain} weights are not finite")));
    }
    Ok(ExpertModel {
        domain,
        classifier: Some(classifier),
        report: Some(ExpertReport {
            regime,
            steps,
            validation_auroc,
            positives,
            negatives,
        }),
    })
}

/// Anomaly probability from a trained expert.
pub fn score_line(expert: &ExpertModel, x: &FeatureVector) -> Result<f64> {
    match &expert.classifier {
        Some(m) => m.probability(x),
        None => Err(Error::InvalidArgument(format!(
            "domain {} has no trained expert (pure-anomaly domains are decided by routing)",
            expert.domain
        ))),
    }
}
