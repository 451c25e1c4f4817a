//! Evaluation on the chronological test split: per-line metrics of the
//! routed pipeline, statistical baselines, the unseen-EventID analysis, the
//! labeling-cost table and K-sweeps.

pub mod baselines;
pub mod metrics;
pub mod report;
pub mod sweep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::LogRecord;
use crate::drain::TemplateTable;
use crate::error::{Error, Result};
use crate::inference::{ModelBundle, RoutePath, Verdict};
use crate::kshot::{labeling_cost, LabelingCost};
use crate::par::ExecMode;
use crate::pipeline::{PipelineConfig, Prepared};
use baselines::BaselineResult;
use metrics::MetricsReport;

/// Ground-truth labels of the test lines; every line must be labeled.
pub fn truth_labels(records: &[LogRecord]) -> Result<Vec<bool>> {
    records
        .iter()
        .map(|r| {
            if r.label.is_labeled() {
                Ok(r.label.is_anomaly())
            } else {
                Err(Error::Evaluation(format!("test line at ordinal {} is unlabeled", r.ordinal)))
            }
        })
        .collect()
}

/// Metrics of pipeline verdicts with per-path and per-domain breakdowns.
/// Pure-path lines rank with score 1.0.
pub fn compute_metrics(bundle: &ModelBundle, verdicts: &[Verdict], truth: &[bool]) -> MetricsReport {
    assert_eq!(verdicts.len(), truth.len());
    let predicted: Vec<bool> = verdicts.iter().map(Verdict::is_anomaly).collect();
    let scores: Vec<f64> = verdicts.iter().map(Verdict::ranking_score).collect();
    let mut report = MetricsReport::from_predictions(&predicted, truth, &scores);
    for (v, &t) in verdicts.iter().zip(truth) {
        report.per_path.entry(v.path.as_str().to_string()).or_default().add(v.is_anomaly(), t);
        let name = bundle.domain_name(v).unwrap_or("(none)");
        report.per_domain.entry(name.to_string()).or_default().add(v.is_anomaly(), t);
    }
    report
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UnseenAnalysis {
    pub test_anomalies: usize,
    /// Test anomalies whose template was never seen offline.
    pub unseen_anomalies: usize,
    pub unseen_fraction: Option<f64>,
    pub unseen_recall: Option<f64>,
    pub seen_recall: Option<f64>,
    /// Share of unseen anomalies that took the universal path.
    pub unseen_universal_fraction: Option<f64>,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

/// Splits test anomalies by whether the offline template table matches them.
pub fn unseen_eventid_analysis(verdicts: &[Verdict], records: &[LogRecord], table: &TemplateTable) -> UnseenAnalysis {
    let (mut seen, mut seen_hit, mut unseen, mut unseen_hit, mut unseen_uni) = (0, 0, 0, 0, 0);
    for (v, r) in verdicts.iter().zip(records) {
        if !r.label.is_anomaly() {
            continue;
        }
        if table.match_only(&r.raw).is_some() {
            seen += 1;
            seen_hit += usize::from(v.is_anomaly());
        } else {
            unseen += 1;
            unseen_hit += usize::from(v.is_anomaly());
            unseen_uni += usize::from(v.path == RoutePath::Universal);
        }
    }
    UnseenAnalysis {
        test_anomalies: seen + unseen,
        unseen_anomalies: unseen,
        unseen_fraction: ratio(unseen, seen + unseen),
        unseen_recall: ratio(unseen_hit, unseen),
        seen_recall: ratio(seen_hit, seen),
        unseen_universal_fraction: ratio(unseen_uni, unseen),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainAgreement {
    /// Certified domain name → planted domain most of its offline lines
    /// come from.
    pub mapping: BTreeMap<String, Option<String>>,
    pub detections: usize,
    pub agreeing: usize,
    pub rate: Option<f64>,
}

/// How often anomaly verdicts on `path` name the planted domain of their
/// line. Certified domains are mapped to planted ones by majority over the
/// offline lines of their EventIDs; ties go to the smaller name.
pub fn domain_agreement(
    bundle: &ModelBundle,
    offline: &[LogRecord],
    offline_planted: &[Option<String>],
    verdicts: &[Verdict],
    test_planted: &[Option<String>],
    path: RoutePath,
) -> DomainAgreement {
    let mut votes: BTreeMap<usize, BTreeMap<Option<String>, usize>> = BTreeMap::new();
    for (r, planted) in offline.iter().zip(offline_planted) {
        if let Some(id) = r.event_id {
            *votes.entry(bundle.partition.domain_of(id)).or_default().entry(planted.clone()).or_default() += 1;
        }
    }
    let mapped: BTreeMap<usize, Option<String>> = votes
        .into_iter()
        .map(|(d, v)| {
            let best = v.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(k, _)| k.clone());
            (d, best.flatten())
        })
        .collect();
    let (mut detections, mut agreeing) = (0, 0);
    for (v, planted) in verdicts.iter().zip(test_planted) {
        if v.path != path || !v.is_anomaly() {
            continue;
        }
        detections += 1;
        let label = v.domain.and_then(|d| mapped.get(&d).cloned().flatten());
        agreeing += usize::from(label.is_some() && label == *planted);
    }
    DomainAgreement {
        mapping: mapped
            .into_iter()
            .map(|(d, p)| (bundle.partition.name(d).to_string(), p))
            .collect(),
        detections,
        agreeing,
        rate: ratio(agreeing, detections),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub test_lines: usize,
    pub test_anomalies: usize,
    pub pipeline: MetricsReport,
    pub unseen: UnseenAnalysis,
    pub baselines: Vec<BaselineResult>,
    pub labeling: LabelingCost,
}

/// Classifies the test split with `bundle` and, when asked, runs the
/// baselines on the same split and K-shot sample.
pub fn evaluate(
    prep: &Prepared,
    bundle: &ModelBundle,
    cfg: &PipelineConfig,
    with_baselines: bool,
    mode: ExecMode,
) -> Result<(EvalReport, Vec<Verdict>)> {
    let test = prep.test();
    let truth = truth_labels(test)?;
    let verdicts = bundle.classify_records(test, mode);
    let pipeline = compute_metrics(bundle, &verdicts, &truth);
    let baselines = if with_baselines {
        baselines::run_baselines(prep, bundle, cfg, mode)?
    } else {
        Vec::new()
    };
    let report = EvalReport {
        config_hash: bundle.config_hash.clone(),
        test_lines: test.len(),
        test_anomalies: truth.iter().filter(|&&t| t).count(),
        pipeline,
        unseen: unseen_eventid_analysis(&verdicts, test, &prep.table),
        baselines,
        labeling: labeling_cost(prep.offline(), &prep.sample),
    };
    Ok((report, verdicts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::Decision;

    fn v(anomaly: bool, path: RoutePath, domain: Option<usize>) -> Verdict {
        Verdict {
            decision: if anomaly { Decision::Anomaly } else { Decision::Normal },
            domain,
            path,
            score: Some(if anomaly { 0.9 } else { 0.1 }),
            fallback: false,
        }
    }

    #[test]
    fn count_consistency() {
        let preds = [true, false, true, true, false];
        let truth = [true, false, false, true, true];
        let c = MetricsReport::from_predictions(&preds, &truth, &[0.0; 5]).confusion;
        assert_eq!(c.total(), 5);
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 1, 1, 1));
    }

    #[test]
    fn unseen_split() {
        use crate::corpus::Label;
        use crate::drain::{parse_records, DrainConfig};
        let mut offline = vec![LogRecord::new(0, Label::Normal, "disk ok now"), LogRecord::new(1, Label::Anomaly, "fan failed hard")];
        let table = parse_records(&mut offline, &DrainConfig::default()).unwrap();
        let test = vec![
            LogRecord::new(2, Label::Anomaly, "fan failed hard"),
            LogRecord::new(3, Label::Anomaly, "brand new failure text here"),
            LogRecord::new(4, Label::Anomaly, "another unseen one here ok"),
            LogRecord::new(5, Label::Normal, "disk ok now"),
        ];
        let verdicts = [
            v(true, RoutePath::Pure, Some(1)),
            v(true, RoutePath::Universal, None),
            v(false, RoutePath::Universal, None),
            v(false, RoutePath::Universal, None),
        ];
        let u = unseen_eventid_analysis(&verdicts, &test, &table);
        assert_eq!((u.test_anomalies, u.unseen_anomalies), (3, 2));
        assert_eq!(u.unseen_recall, Some(0.5));
        assert_eq!(u.seen_recall, Some(1.0));
        assert_eq!(u.unseen_universal_fraction, Some(1.0));
    }

    #[test]
    fn unlabeled_test_lines_are_rejected() {
        use crate::corpus::Label;
        assert!(truth_labels(&[LogRecord::new(0, Label::Unlabeled, "x")]).is_err());
    }
}
