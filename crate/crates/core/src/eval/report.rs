//! Text, JSON and CSV renderings. Columns follow the order
//! Method | Precision | Recall | F1 | AUROC, values on a 0-100 scale with
//! two decimals; `NA` marks undefined values.

use std::fmt::Write as _;

use super::metrics::{pct, Confusion, MetricsReport};
use super::sweep::{Stat, SweepReport};
use super::EvalReport;

const PIPELINE: &str = "FAME (routed)";

fn table(rows: &[(String, [String; 4])]) -> String {
    let header = ["Method", "Precision", "Recall", "F1", "AUROC"];
    let name_w = rows.iter().map(|r| r.0.len()).chain([header[0].len()]).max().unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "{:<name_w$}  {:>9}  {:>9}  {:>9}  {:>9}", header[0], header[1], header[2], header[3], header[4]);
    let _ = writeln!(out, "{}", "-".repeat(name_w + 4 * 11));
    for (name, v) in rows {
        let _ = writeln!(out, "{name:<name_w$}  {:>9}  {:>9}  {:>9}  {:>9}", v[0], v[1], v[2], v[3]);
    }
    out
}

fn confusion_line(label: &str, c: &Confusion) -> String {
    let recall = pct(c.recall());
    format!("  {label:<24} tp={:<7} fp={:<7} fn={:<7} tn={:<8} recall={recall}\n", c.tp, c.fp, c.fn_, c.tn)
}

fn ratio_pct(v: Option<f64>) -> String {
    v.map_or("NA".into(), |x| format!("{:.2}%", x * 100.0))
}

impl EvalReport {
    pub fn metric_rows(&self) -> Vec<(String, [String; 4])> {
        std::iter::once((PIPELINE.to_string(), self.pipeline.row()))
            .chain(self.baselines.iter().map(|b| (b.name.clone(), b.metrics.row())))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "config {}  test lines {}  test anomalies {}", self.config_hash, self.test_lines, self.test_anomalies);
        if !self.baselines.is_empty() {
            out.push_str("baseline substitutions:\n");
            for b in &self.baselines {
                let _ = writeln!(out, "  {}: {}", b.name, b.substitution);
            }
        }
        out.push('\n');
        out.push_str(&table(&self.metric_rows()));
        out.push_str("\nper path:\n");
        for (path, c) in &self.pipeline.per_path {
            out.push_str(&confusion_line(path, c));
        }
        out.push_str("per domain:\n");
        for (d, c) in &self.pipeline.per_domain {
            out.push_str(&confusion_line(d, c));
        }
        let u = &self.unseen;
        let _ = writeln!(
            out,
            "\nunseen EventIDs: {} of {} test anomalies ({}), recall {} (seen {}), universal path {}",
            u.unseen_anomalies,
            u.test_anomalies,
            ratio_pct(u.unseen_fraction),
            ratio_pct(u.unseen_recall),
            ratio_pct(u.seen_recall),
            ratio_pct(u.unseen_universal_fraction),
        );
        let l = &self.labeling;
        let _ = writeln!(
            out,
            "labeling cost: K={} labels={} offline lines={} reduction={}x",
            l.k, l.labels, l.offline_lines, l.reduction_rounded
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,precision,recall,f1,auroc,tp,fp,fn,tn\n");
        let pipeline = std::iter::once((PIPELINE, &self.pipeline));
        for (name, m) in pipeline.chain(self.baselines.iter().map(|b| (b.name.as_str(), &b.metrics))) {
            let _ = writeln!(out, "{},{}", name, csv_metrics(m));
        }
        out
    }
}

fn csv_value(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{:.6}", x * 100.0))
}

fn csv_metrics(m: &MetricsReport) -> String {
    let c = &m.confusion;
    format!(
        "{},{},{},{},{},{},{},{}",
        csv_value(m.precision),
        csv_value(m.recall),
        csv_value(m.f1),
        csv_value(m.auroc),
        c.tp,
        c.fp,
        c.fn_,
        c.tn
    )
}

fn stat_cell(s: &Stat) -> String {
    match (s.mean, s.std) {
        (Some(m), Some(sd)) => format!("{:.2}±{:.2}", m * 100.0, sd * 100.0),
        (Some(m), None) => format!("{:.2}", m * 100.0),
        _ => "NA".into(),
    }
}

impl SweepReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>6}  {:>4}  {:>7}  {:>9}  {:>13}  {:>13}  {:>13}  {:>13}",
            "K", "runs", "labels", "reduction", "Precision", "Recall", "F1", "AUROC"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>6}  {:>4}  {:>7}  {:>8}x  {:>13}  {:>13}  {:>13}  {:>13}",
                r.k,
                r.runs,
                r.cost.labels,
                r.cost.reduction_rounded,
                stat_cell(&r.precision),
                stat_cell(&r.recall),
                stat_cell(&r.f1),
                stat_cell(&r.auroc),
            );
        }
        out
    }

    /// One line per cell, for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,seed,labels,precision,recall,f1,auroc,tp,fp,fn,tn\n");
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{},{}", c.k, c.seed, c.labels, csv_metrics(&c.metrics));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::sweep::{SweepCell, SweepRow};
    use crate::kshot::LabelingCost;

    #[test]
    fn rows_render_two_decimals() {
        let m = MetricsReport::from_predictions(&[true, true, false], &[true, false, false], &[0.9, 0.6, 0.1]);
        let t = table(&[("x".into(), m.row())]);
        assert!(t.contains("50.00"), "{t}");
        assert!(t.contains("100.00"), "{t}");
        assert!(t.lines().next().unwrap().starts_with("Method"));
    }

    #[test]
    fn sweep_text_and_csv() {
        let metrics = MetricsReport::from_predictions(&[true, false], &[true, false], &[1.0, 0.0]);
        let report = SweepReport {
            cells: vec![SweepCell {
                k: 5,
                seed: 1,
                labels: 40,
                metrics: metrics.clone(),
            }],
            rows: vec![SweepRow {
                k: 5,
                runs: 1,
                cost: LabelingCost {
                    k: 5,
                    labels: 40,
                    offline_lines: 4000,
                    reduction: 100.0,
                    reduction_rounded: 100,
                },
                precision: Stat::of(&[1.0]),
                recall: Stat::of(&[1.0]),
                f1: Stat::of(&[1.0]),
                auroc: Stat::of(&[1.0]),
            }],
        };
        let text = report.to_text();
        assert!(text.contains("100x") && text.contains("100.00"), "{text}");
        assert!(!text.contains('±'));
        let csv = report.to_csv();
        assert_eq!(csv.lines().nth(1).unwrap(), "5,1,40,100.000000,100.000000,100.000000,100.000000,1,0,0,1");
    }
}
