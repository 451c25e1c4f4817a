//! At-most-K labeled lines per EventID, split chronologically into a training
//! part (80%) and a calibration part (20%), plus the positive-unlabeled normal
//! pool of every offline line not labeled anomalous in the sample.
//!
//! All indices are positions in the offline record slice.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LogRecord};
use crate::drain::EventId;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSample {
    /// Earlier part of the sample, ascending by ordinal.
    pub train: Vec<usize>,
    /// Later part of the sample, ascending by ordinal.
    pub calib: Vec<usize>,
    pub has_normal: bool,
    pub has_anomaly: bool,
    pub rep_normal: Option<usize>,
    pub rep_anomaly: Option<usize>,
}

impl EventSample {
    pub fn len(&self) -> usize {
        self.train.len() + self.calib.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().chain(&self.calib).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KShotSample {
    pub k: usize,
    pub per_event: BTreeMap<EventId, EventSample>,
}

impl KShotSample {
    pub fn label_count(&self) -> usize {
        self.per_event.values().map(EventSample::len).sum()
    }

    pub fn get(&self, id: EventId) -> Option<&EventSample> {
        self.per_event.get(&id)
    }

    /// Sampled lines labeled anomalous, ascending.
    pub fn anomaly_indices(&self, records: &[LogRecord]) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .per_event
            .values()
            .flat_map(|s| s.all())
            .filter(|&i| records[i].label.is_anomaly())
            .collect();
        out.sort_unstable();
        out
    }

    /// Per-EventID ordinals and signals, for auditing what was labeled.
    pub fn audit_json(&self, records: &[LogRecord]) -> serde_json::Value {
        let ord = |v: &[usize]| v.iter().map(|&i| records[i].ordinal).collect::<Vec<_>>();
        let rows: Vec<serde_json::Value> = self
            .per_event
            .iter()
            .map(|(id, s)| {
                serde_json::json!({
                    "event_id": id,
                    "train_ordinals": ord(&s.train),
                    "calib_ordinals": ord(&s.calib),
                    "has_normal": s.has_normal,
                    "has_anomaly": s.has_anomaly,
                    "rep_normal": s.rep_normal.map(|i| records[i].ordinal),
                    "rep_anomaly": s.rep_anomaly.map(|i| records[i].ordinal),
                })
            })
            .collect();
        serde_json::json!({ "k": self.k, "labels": self.label_count(), "events": rows })
    }
}

/// Training share of an `n`-line sample: floor(0.8 n), but at least one line
/// on each side once the sample has two lines.
pub fn train_size(n: usize) -> usize {
    match n {
        0 => 0,
        1 => 1,
        _ => ((n * 4) / 5).clamp(1, n - 1),
    }
}

/// Takes the `k` most recent labeled lines of every EventID.
///
/// EventIDs whose lines are all unlabeled are present with an empty sample.
pub fn sample(records: &[LogRecord], k: usize) -> Result<KShotSample> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let mut by_event: BTreeMap<EventId, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let id = r.event_id.ok_or_else(|| {
            Error::InvalidArgument(format!("record at ordinal {} has no event id", r.ordinal))
        })?;
        let lines = by_event.entry(id).or_default();
        if r.label.is_labeled() {
            lines.push(i);
        }
    }
    let per_event = by_event
        .into_iter()
        .map(|(id, labeled)| {
            let take = labeled.len().min(k);
            let picked = &labeled[labeled.len() - take..];
            let cut = train_size(picked.len());
            let rep = |label: Label| picked.iter().rev().copied().find(|&i| records[i].label == label);
            let rep_normal = rep(Label::Normal);
            let rep_anomaly = rep(Label::Anomaly);
            let s = EventSample {
                train: picked[..cut].to_vec(),
                calib: picked[cut..].to_vec(),
                has_normal: rep_normal.is_some(),
                has_anomaly: rep_anomaly.is_some(),
                rep_normal,
                rep_anomaly,
            };
            (id, s)
        })
        .collect();
    Ok(KShotSample { k, per_event })
}

/// Offline lines not labeled anomalous in the sample. May still hide true
/// anomalies: only sampled lines were ever inspected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PuNormalPool {
    pub indices: Vec<usize>,
}

impl PuNormalPool {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn build_pu_pool(records: &[LogRecord], sample: &KShotSample) -> PuNormalPool {
    let mut excluded = vec![false; records.len()];
    for i in sample.anomaly_indices(records) {
        excluded[i] = true;
    }
    PuNormalPool {
        indices: (0..records.len()).filter(|&i| !excluded[i]).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelingCost {
    pub k: usize,
    pub labels: usize,
    pub offline_lines: usize,
    /// offline_lines / labels, unrounded.
    pub reduction: f64,
    /// `reduction` rounded to the nearest integer.
    pub reduction_rounded: u64,
}

pub fn labeling_cost(records: &[LogRecord], sample: &KShotSample) -> LabelingCost {
    let labels = sample.label_count();
    let reduction = if labels == 0 {
        f64::INFINITY
    } else {
        records.len() as f64 / labels as f64
    };
    LabelingCost {
        k: sample.k,
        labels,
        offline_lines: records.len(),
        reduction,
        reduction_rounded: if reduction.is_finite() { reduction.round() as u64 } else { 0 },
    }
}

pub fn labeling_cost_report(records: &[LogRecord], ks: &[usize]) -> Result<Vec<LabelingCost>> {
    ks.iter()
        .map(|&k| sample(records, k).map(|s| labeling_cost(records, &s)))
        .collect()
}
