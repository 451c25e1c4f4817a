//! Labeled line lists shared by the router and expert trainers.

use crate::backbone::{Example, FeatureVector};
use crate::corpus::LogRecord;
use crate::par::{self, ExecMode};

/// A record index with a class label (0/1 or a class index).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct LabeledLine {
    pub index: usize,
    pub label: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<LabeledLine>,
    pub validation: Vec<LabeledLine>,
}

/// Number of held-out lines for a class of `n` lines: `ceil(n * fraction)`,
/// leaving at least one line for training.
pub fn holdout_size(n: usize, fraction: f64) -> usize {
    if n < 2 {
        return 0;
    }
    ((n as f64 * fraction).ceil() as usize).min(n - 1)
}

/// Holds out the latest `fraction` of every class. Record indices follow
/// ordinals, so "latest" means highest index. Both outputs are sorted by
/// index.
pub fn tail_split(mut lines: Vec<LabeledLine>, classes: usize, fraction: f64) -> Split {
    lines.sort_unstable_by_key(|l| l.index);
    let mut split = Split::default();
    for class in 0..classes {
        let of_class: Vec<LabeledLine> = lines.iter().filter(|l| l.label == class).copied().collect();
        let cut = of_class.len() - holdout_size(of_class.len(), fraction);
        split.train.extend_from_slice(&of_class[..cut]);
        split.validation.extend_from_slice(&of_class[cut..]);
    }
    split.train.sort_unstable_by_key(|l| l.index);
    split.validation.sort_unstable_by_key(|l| l.index);
    split
}

/// Featurizes labeled lines, weighting each by `weight(label)`.
pub fn examples<F, W>(records: &[LogRecord], lines: &[LabeledLine], mode: ExecMode, featurize: F, weight: W) -> Vec<Example>
where
    F: Fn(&str) -> FeatureVector + Sync + Send,
    W: Fn(usize) -> f32 + Sync + Send,
{
    par::map_slice(mode, lines, |l| Example {
        x: featurize(&records[l.index].raw),
        label: l.label,
        weight: weight(l.label),
    })
}
