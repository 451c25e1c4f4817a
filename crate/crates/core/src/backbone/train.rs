//! Mini-batch gradient descent for [`LinearClassifier`].
//!
//! Consumers drive a [`Trainer`] step by step or epoch by epoch and apply
//! their own stopping rules on a validation slice.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::features::FeatureVector;
use crate::backbone::focal::{
    focal_loss_from_logit, focal_loss_gradient, softmax_focal_gradient, softmax_focal_loss, FocalLossConfig,
};
use crate::backbone::linear::LinearClassifier;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug)]
pub struct Example {
    pub x: FeatureVector,
    /// 0/1 for binary tasks, class index for multiclass ones.
    pub label: usize,
    /// Multiplies the per-example loss.
    pub weight: f32,
}

impl Example {
    pub fn new(x: FeatureVector, label: usize) -> Self {
        Example { x, label, weight: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    Binary(FocalLossConfig),
    /// Softmax focal loss; class weights travel on the examples.
    Multiclass { classes: usize, gamma: f64 },
}

impl Objective {
    pub fn outputs(&self) -> usize {
        match self {
            Objective::Binary(_) => 1,
            Objective::Multiclass { classes, .. } => *classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            // Unit-norm inputs spread over many hashed n-grams keep each
            // weight's gradient small; 0.1 barely moves the logits within
            // a 500-step budget.
            learning_rate: 5.0,
            max_epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

pub struct Trainer<'a> {
    examples: &'a [Example],
    objective: Objective,
    cfg: TrainConfig,
    model: LinearClassifier,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    steps: usize,
    epochs: usize,
    grad: Vec<f64>,
    grad_bias: Vec<f64>,
    touched: Vec<usize>,
    scratch: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(examples: &'a [Example], dim: usize, objective: Objective, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if examples.is_empty() {
            return Err(Error::Training("no training examples".into()));
        }
        if let Some(e) = examples.iter().find(|e| e.x.dim != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: e.x.dim,
            });
        }
        match objective {
            Objective::Binary(focal) => {
                focal.validate()?;
                if examples.iter().any(|e| e.label > 1) {
                    return Err(Error::Training("binary labels must be 0 or 1".into()));
                }
                let positives = examples.iter().filter(|e| e.label == 1).count();
                if positives == 0 || positives == examples.len() {
                    return Err(Error::Training(format!(
                        "binary training set has a single class ({} examples, {positives} positive)",
                        examples.len()
                    )));
                }
            }
            Objective::Multiclass { classes, gamma } => {
                if classes < 2 {
                    return Err(Error::Training(format!("multiclass objective needs >= 2 classes, got {classes}")));
                }
                if !(gamma >= 0.0) {
                    return Err(Error::Config(format!("focal gamma must be >= 0, got {gamma}")));
                }
                if let Some(e) = examples.iter().find(|e| e.label >= classes) {
                    return Err(Error::Training(format!("label {} out of range for {classes} classes", e.label)));
                }
            }
        }
        let outputs = objective.outputs();
        Ok(Trainer {
            examples,
            objective,
            model: LinearClassifier::zeros(dim, outputs),
            order: (0..examples.len()).collect(),
            cursor: 0,
            rng: seed::rng(cfg.seed),
            cfg,
            steps: 0,
            epochs: 0,
            grad: vec![0.0; dim * outputs],
            grad_bias: vec![0.0; outputs],
            touched: Vec::new(),
            scratch: vec![0.0; outputs],
        })
    }

    pub fn model(&self) -> &LinearClassifier {
        &self.model
    }

    pub fn into_model(self) -> LinearClassifier {
        self.model
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One gradient step on the next mini-batch. Examples are reshuffled at
    /// the start of every pass; the final batch of a pass may be short.
    pub fn step(&mut self) {
        if self.cursor == 0 {
            self.order.shuffle(&mut self.rng);
        }
        let n = self.examples.len();
        let end = (self.cursor + self.cfg.batch_size).min(n);
        let dim = self.model.dim();
        let outputs = self.model.outputs();

        for &idx in &self.order[self.cursor..end] {
            let ex = &self.examples[idx];
            let w = ex.weight as f64;
            match self.objective {
                Objective::Binary(focal) => {
                    let z = self.model.logit_unchecked(0, &ex.x);
                    self.scratch[0] = w * focal_loss_gradient(z, ex.label == 1, &focal);
                }
                Objective::Multiclass { gamma, .. } => {
                    let z: Vec<f64> = (0..outputs).map(|o| self.model.logit_unchecked(o, &ex.x)).collect();
                    softmax_focal_gradient(&z, ex.label, gamma, w, &mut self.scratch);
                }
            }
            for o in 0..outputs {
                let g = self.scratch[o];
                self.grad_bias[o] += g;
                for (j, v) in ex.x.iter() {
                    self.grad[o * dim + j] += g * v as f64;
                }
            }
            self.touched.extend(ex.x.indices.iter().map(|&j| j as usize));
        }

        let scale = self.cfg.learning_rate / (end - self.cursor) as f64;
        self.touched.sort_unstable();
        self.touched.dedup();
        let weights = self.model.weights_mut();
        for o in 0..outputs {
            for &j in &self.touched {
                let k = o * dim + j;
                weights[k] -= (scale * self.grad[k]) as f32;
                self.grad[k] = 0.0;
            }
        }
        let bias = self.model.bias_mut();
        for o in 0..outputs {
            bias[o] -= (scale * self.grad_bias[o]) as f32;
            self.grad_bias[o] = 0.0;
        }
        self.touched.clear();

        self.steps += 1;
        self.cursor = end;
        if self.cursor == n {
            self.cursor = 0;
            self.epochs += 1;
        }
    }

    /// Steps until the current pass over the data completes.
    pub fn run_epoch(&mut self) {
        let target = self.epochs + 1;
        while self.epochs < target {
            self.step();
        }
    }

    /// Mean weighted training loss of the current model.
    pub fn loss(&self) -> f64 {
        mean_loss(&self.model, self.examples, &self.objective)
    }
}

pub fn mean_loss(model: &LinearClassifier, examples: &[Example], objective: &Objective) -> f64 {
    let total: f64 = examples
        .iter()
        .map(|ex| {
            let w = ex.weight as f64;
            match objective {
                Objective::Binary(focal) => w * focal_loss_from_logit(model.logit_unchecked(0, &ex.x), ex.label == 1, focal),
                Objective::Multiclass { gamma, .. } => {
                    let z: Vec<f64> = (0..model.outputs()).map(|o| model.logit_unchecked(o, &ex.x)).collect();
                    softmax_focal_loss(&z, ex.label, *gamma, w)
                }
            }
        })
        .sum();
    total / examples.len().max(1) as f64
}

/// Trains for exactly `cfg.max_epochs` passes.
pub fn train(examples: &[Example], dim: usize, objective: Objective, cfg: TrainConfig) -> Result<LinearClassifier> {
    let epochs = cfg.max_epochs;
    let mut trainer = Trainer::new(examples, dim, objective, cfg)?;
    for _ in 0..epochs {
        trainer.run_epoch();
    }
    if !trainer.model().is_finite() {
        return Err(Error::Training("training diverged to non-finite weights".into()));
    }
    Ok(trainer.into_model())
}
