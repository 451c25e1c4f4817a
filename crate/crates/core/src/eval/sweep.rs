//! K-sweeps: the full pipeline for every (K, seed) cell of a grid. Cells
//! share one parse of the corpus and run in parallel; each is deterministic.

use serde::{Deserialize, Serialize};

use crate::corpus::LogRecord;
use crate::error::{Error, Result};
use crate::kshot::{self, build_pu_pool, labeling_cost, LabelingCost};
use crate::par::{self, ExecMode};
use crate::pipeline::{prepare_with_k, setup, PipelineConfig, Prepared};

use super::metrics::MetricsReport;
use super::{compute_metrics, truth_labels};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: usize,
    pub seed: u64,
    pub labels: usize,
    pub metrics: MetricsReport,
}

/// Mean and, with two or more runs, sample standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Stat::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Stat { mean: Some(mean), std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub runs: usize,
    pub cost: LabelingCost,
    pub precision: Stat,
    pub recall: Stat,
    pub f1: Stat,
    pub auroc: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
}

/// Runs the pipeline at every `k` with every seed. Undefined metrics of a
/// cell are left out of its row's statistics.
pub fn k_sweep(records: Vec<LogRecord>, cfg: &PipelineConfig, ks: &[usize], seeds: &[u64], mode: ExecMode) -> Result<SweepReport> {
    if ks.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("sweep grid needs at least one k and one seed".into()));
    }
    let base = prepare_with_k(records, cfg, ks[0])?;
    let prepared: Vec<Prepared> = ks
        .iter()
        .map(|&k| with_k(&base, k))
        .collect::<Result<_>>()?;
    let grid: Vec<(usize, u64)> = (0..ks.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let cells = par::try_map_slice(mode, &grid, |&(i, seed)| -> Result<SweepCell> {
        let prep = &prepared[i];
        let cell_cfg = PipelineConfig {
            seed,
            k: ks[i],
            ..cfg.clone()
        };
        let built = setup(prep, &cell_cfg, mode)?;
        let truth = truth_labels(prep.test())?;
        let verdicts = built.bundle.classify_records(prep.test(), mode);
        Ok(SweepCell {
            k: ks[i],
            seed,
            labels: prep.sample.label_count(),
            metrics: compute_metrics(&built.bundle, &verdicts, &truth),
        })
    })?;
    let rows = ks
        .iter()
        .zip(&prepared)
        .map(|(&k, prep)| {
            let of_k: Vec<&SweepCell> = cells.iter().filter(|c| c.k == k).collect();
            let stat = |f: fn(&MetricsReport) -> Option<f64>| Stat::of(&of_k.iter().filter_map(|c| f(&c.metrics)).collect::<Vec<_>>());
            SweepRow {
                k,
                runs: of_k.len(),
                cost: labeling_cost(prep.offline(), &prep.sample),
                precision: stat(|m| m.precision),
                recall: stat(|m| m.recall),
                f1: stat(|m| m.f1),
                auroc: stat(|m| m.auroc),
            }
        })
        .collect();
    Ok(SweepReport { cells, rows })
}

/// The same parse with a fresh K-shot sample and pool.
fn with_k(base: &Prepared, k: usize) -> Result<Prepared> {
    let sample = kshot::sample(base.offline(), k)?;
    let pool = build_pu_pool(base.offline(), &sample);
    Ok(Prepared {
        records: base.records.clone(),
        split: base.split.clone(),
        table: base.table.clone(),
        sample,
        pool,
    })
}
