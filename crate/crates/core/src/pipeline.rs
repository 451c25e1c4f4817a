//! Offline setup: ingest → split → parse → sample → partition → certify →
//! adapt → gate → selector → experts → calibrate → bundle.
//!
//! One root seed drives every stochastic stage through
//! [`seed::derive_seed`] with these stage names:
//!
//! | stage name               | used for                               |
//! |--------------------------|----------------------------------------|
//! | `certify.pool_sample`    | universal pool sample for distinctness |
//! | `backbone.hash`          | feature hashing seed                   |
//! | `backbone.adapt`         | IDF fitting sample                     |
//! | `gate.subsample`         | universal lines kept for the gate      |
//! | `gate.train`             | gate mini-batch order                  |
//! | `selector.train`         | selector mini-batch order              |
//! | `expert.{c}.negatives`   | negatives of expert `c`                |
//! | `expert.{c}.train`       | mini-batch order of expert `c`         |
//!
//! Errors leave the pipeline tagged with the stage that raised them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use crate::backbone::focal::LOGIT_CLAMP;
use crate::backbone::{
    adapt_unsupervised, features::DEFAULT_DIM, FeaturizerConfig, FocalLossConfig,
    LinearClassifier, TrainConfig, DEFAULT_ADAPT_CAP,
};
use crate::calibration::{calibrate_threshold, calibrate_universal, CalibrationConfig, CalibrationResult, ThresholdFit, UniversalFit};
use crate::corpus::{ingest, split_chronological, Corpus, CorpusSplit, InputFormat, LogRecord};
use crate::dataset::examples;
use crate::drain::{parse_records, DrainConfig, TemplateTable};
use crate::error::{Error, Result, StageContext};
use crate::experts::{build_expert_dataset, train_expert, ExpertConfig, ExpertReport};
use crate::inference::{ModelBundle, Selector};
use crate::kshot::{self, build_pu_pool, KShotSample, PuNormalPool};
use crate::par::{self, ExecMode};
use crate::partition::{
    certify, import_partition, tfidf_grouping, CertifiedPartition, CertifyConfig, DomainKind, GroupDecision, ProposedPartition,
};
use crate::router::{
    build_gate_dataset, build_selector_dataset, class_weights, train_gate, train_selector, GateReport, RouterConfig,
    SelectorReport, SelectorTraining, GATE_THRESHOLD,
};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub format: InputFormat,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: None,
            format: InputFormat::LoghubLabeled,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub dim: usize,
    /// Lines sampled from the PU-normal pool to fit the shared IDF table.
    pub adapt_cap: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            dim: DEFAULT_DIM,
            adapt_cap: DEFAULT_ADAPT_CAP,
        }
    }
}

/// Optimizer settings shared by every trained model. Stopping rules live
/// with each consumer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingConfig {
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
        }
    }
}

impl TrainingConfig {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            max_epochs: TrainConfig::default().max_epochs,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionSource {
    #[default]
    Tfidf,
    Import,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    pub source: PartitionSource,
    /// Proposal document for `source = "import"`.
    pub file: Option<PathBuf>,
    pub link_threshold: f64,
    pub distinctness_threshold: f64,
    pub pool_sample_size: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        let c = CertifyConfig::default();
        PartitionConfig {
            source: PartitionSource::Tfidf,
            file: None,
            link_threshold: 0.5,
            distinctness_threshold: c.distinctness_threshold,
            pool_sample_size: c.pool_sample_size,
        }
    }
}

/// The whole run in one document. Every constant has a named key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub offline_fraction: f64,
    pub k: usize,
    pub drain: DrainConfig,
    pub backbone: BackboneConfig,
    pub focal: FocalLossConfig,
    pub training: TrainingConfig,
    pub router: RouterConfig,
    pub experts: ExpertConfig,
    pub partition: PartitionConfig,
    pub calibration: CalibrationConfig,
    pub output: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            dataset: DatasetConfig::default(),
            offline_fraction: 0.85,
            k: 100,
            drain: DrainConfig::default(),
            backbone: BackboneConfig::default(),
            focal: FocalLossConfig::default(),
            training: TrainingConfig::default(),
            router: RouterConfig::default(),
            experts: ExpertConfig::default(),
            partition: PartitionConfig::default(),
            calibration: CalibrationConfig::default(),
            output: None,
        }
    }
}

impl PipelineConfig {
    /// Reads a TOML document, or JSON when the file name ends in `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.offline_fraction > 0.0 && self.offline_fraction < 1.0) {
            return Err(Error::Config(format!("offline_fraction must lie in (0, 1), got {}", self.offline_fraction)));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if self.backbone.dim == 0 {
            return Err(Error::Config("backbone.dim must be positive".into()));
        }
        if self.partition.source == PartitionSource::Import && self.partition.file.is_none() {
            return Err(Error::Config("partition.source = \"import\" needs partition.file".into()));
        }
        self.drain.validate()?;
        self.focal.validate()?;
        self.training.with_seed(0).validate()
    }

    /// Hash of everything that can change results. Paths are left out, so
    /// moving a dataset or choosing another output directory keeps the hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.dataset.path = None;
        c.partition.file = None;
        c.output = None;
        let canonical = serde_json::to_vec(&c).expect("config serializes");
        format!("{:016x}", xxh3_64(&canonical))
    }

    pub fn certify_config(&self) -> CertifyConfig {
        CertifyConfig {
            distinctness_threshold: self.partition.distinctness_threshold,
            pool_sample_size: self.partition.pool_sample_size,
            seed: self.seed,
        }
    }
}

pub fn load_corpus(cfg: &PipelineConfig) -> Result<Corpus> {
    let path = cfg
        .dataset
        .path
        .as_ref()
        .ok_or_else(|| Error::Config("dataset.path is not set".into()))
        .stage("ingest")?;
    ingest(path, cfg.dataset.format).stage("ingest")
}

/// Offline artifacts that need no training: templates, the K-shot sample
/// and the PU-normal pool.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// All records; only the offline prefix carries EventIDs.
    pub records: Vec<LogRecord>,
    pub split: CorpusSplit,
    pub table: TemplateTable,
    pub sample: KShotSample,
    pub pool: PuNormalPool,
}

impl Prepared {
    pub fn offline(&self) -> &[LogRecord] {
        &self.records[self.split.offline.clone()]
    }

    pub fn test(&self) -> &[LogRecord] {
        &self.records[self.split.test.clone()]
    }
}

pub fn prepare(records: Vec<LogRecord>, cfg: &PipelineConfig) -> Result<Prepared> {
    prepare_with_k(records, cfg, cfg.k)
}

pub fn prepare_with_k(mut records: Vec<LogRecord>, cfg: &PipelineConfig, k: usize) -> Result<Prepared> {
    let split = split_chronological(records.len(), cfg.offline_fraction).stage("split")?;
    let offline = &mut records[split.offline.clone()];
    let table = parse_records(offline, &cfg.drain).stage("parse")?;
    let sample = kshot::sample(offline, k).stage("sample")?;
    let pool = build_pu_pool(offline, &sample);
    Ok(Prepared {
        records,
        split,
        table,
        sample,
        pool,
    })
}

pub fn propose(prep: &Prepared, cfg: &PipelineConfig) -> Result<ProposedPartition> {
    (|| match cfg.partition.source {
        PartitionSource::Tfidf => Ok(tfidf_grouping(&prep.table, &prep.sample, cfg.partition.link_threshold)),
        PartitionSource::Import => {
            let path = cfg
                .partition
                .file
                .as_ref()
                .ok_or_else(|| Error::Config("partition.file is not set".into()))?;
            let doc = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            import_partition(&doc, &prep.sample)
        }
    })()
    .stage("partition")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub index: usize,
    pub name: String,
    pub kind: DomainKind,
    pub event_ids: usize,
    pub offline_lines: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertSummary {
    pub domain: String,
    pub report: ExpertReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub domain: String,
    pub calibration_lines: usize,
    pub fit: ThresholdFit,
}

/// What setup did. Free of timings, so identical runs give identical
/// reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetupReport {
    pub config_hash: String,
    pub seed: u64,
    pub total_lines: usize,
    pub offline_lines: usize,
    pub test_lines: usize,
    pub templates: usize,
    pub k: usize,
    pub labels: usize,
    pub pool_lines: usize,
    pub adapt_lines: usize,
    pub group_decisions: Vec<GroupDecision>,
    pub domains: Vec<DomainSummary>,
    pub gate_lines: usize,
    pub gate: GateReport,
    pub selector_lines: usize,
    pub selector: Option<SelectorReport>,
    pub experts: Vec<ExpertSummary>,
    pub calibration: Vec<CalibrationSummary>,
    pub universal_calibration_lines: usize,
    pub universal: UniversalFit,
}

#[derive(Clone, Debug)]
pub struct Setup {
    pub bundle: ModelBundle,
    pub report: SetupReport,
}

/// A gate that sends everything to the universal path.
fn closed_gate(dim: usize) -> LinearClassifier {
    let mut g = LinearClassifier::zeros(dim, 1);
    g.bias_mut()[0] = -LOGIT_CLAMP as f32;
    g
}

/// Trains and calibrates everything on the offline prefix.
pub fn setup(prep: &Prepared, cfg: &PipelineConfig, mode: ExecMode) -> Result<Setup> {
    cfg.validate()?;
    let proposal = propose(prep, cfg)?;
    setup_with_proposal(prep, &proposal, cfg, mode)
}

pub fn setup_with_proposal(prep: &Prepared, proposal: &ProposedPartition, cfg: &PipelineConfig, mode: ExecMode) -> Result<Setup> {
    let root = cfg.seed;
    let records = prep.offline();
    let certification = certify(proposal, &prep.sample, &prep.pool, records, &cfg.certify_config()).stage("certify")?;
    let partition = certification.partition;
    let n_expert = partition.len() - 1;

    let pool_text: Vec<&str> = prep.pool.indices.iter().map(|&i| records[i].raw.as_str()).collect();
    let featurizer = FeaturizerConfig {
        dim: cfg.backbone.dim,
        seed: derive_seed(root, "backbone.hash"),
    };
    let backbone = adapt_unsupervised(&pool_text, cfg.backbone.adapt_cap, featurizer, derive_seed(root, "backbone.adapt"), mode)
        .stage("adapt")?;
    let dim = backbone.dim();
    let plain = |s: &str| backbone.plain(s);
    let weighted = |s: &str| backbone.weighted(s);

    // router
    let (gate, gate_report, gate_lines) = if n_expert == 0 {
        log::warn!("no failure domain certified; every line takes the universal path");
        (closed_gate(dim), GateReport::default(), 0)
    } else {
        let split = build_gate_dataset(
            records,
            &partition,
            cfg.router.gate_subsample_ratio,
            cfg.router.validation_fraction,
            derive_seed(root, "gate.subsample"),
        )
        .stage("gate")?;
        let train = examples(records, &split.train, mode, plain, |_| 1.0);
        let val = examples(records, &split.validation, mode, plain, |_| 1.0);
        let g = train_gate(
            &train,
            &val,
            dim,
            cfg.focal,
            cfg.training.with_seed(derive_seed(root, "gate.train")),
            cfg.router.gate_recall_target,
            cfg.router.gate_max_epochs,
        )
        .stage("gate")?;
        (g.classifier, g.report, split.train.len() + split.validation.len())
    };

    let (selector, weights, selector_report, selector_lines) = match n_expert {
        0 => (Selector::Absent, Vec::new(), None, 0),
        1 => (Selector::Constant, vec![1.0], None, 0),
        classes => {
            let split = build_selector_dataset(records, &partition, cfg.router.validation_fraction);
            let mut counts = vec![0usize; classes];
            for l in &split.train {
                counts[l.label] += 1;
            }
            let w = class_weights(&counts).stage("selector")?;
            let train = examples(records, &split.train, mode, plain, |c| w[c] as f32);
            let val = examples(records, &split.validation, mode, plain, |c| w[c] as f32);
            let rule = SelectorTraining {
                gamma: cfg.focal.gamma,
                accuracy_target: cfg.router.selector_accuracy_target,
                patience: cfg.router.selector_patience,
                max_epochs: cfg.router.selector_max_epochs,
            };
            let model = train_selector(
                &train,
                &val,
                classes,
                w.clone(),
                dim,
                cfg.training.with_seed(derive_seed(root, "selector.train")),
                &rule,
            )
            .stage("selector")?;
            let classifier = model
                .classifier
                .ok_or_else(|| Error::Training("selector with several domains has no classifier".into()))
                .stage("selector")?;
            (Selector::Linear(classifier), w, Some(model.report), split.train.len() + split.validation.len())
        }
    };

    // experts: universal plus every mixed domain
    let expert_domains: Vec<usize> = std::iter::once(CertifiedPartition::UNIVERSAL)
        .chain(partition.expert_domains().filter(|&c| partition.kind(c) == DomainKind::Mixed))
        .collect();
    let trained = par::try_map_slice(mode, &expert_domains, |&c| {
        let ds = build_expert_dataset(
            c,
            records,
            &prep.sample,
            &prep.pool,
            &partition,
            &cfg.experts,
            derive_seed(root, &format!("expert.{c}.negatives")),
        )?;
        let train = examples(records, &ds.split.train, ExecMode::Sequential, weighted, |_| 1.0);
        let val = examples(records, &ds.split.validation, ExecMode::Sequential, weighted, |_| 1.0);
        train_expert(
            c,
            &train,
            &val,
            dim,
            cfg.focal,
            cfg.training.with_seed(derive_seed(root, &format!("expert.{c}.train"))),
            &cfg.experts,
        )
    })
    .stage("experts")?;
    let mut experts = BTreeMap::new();
    let mut expert_summaries = Vec::new();
    for m in trained {
        let classifier = m.classifier.expect("trained experts carry a classifier");
        if let Some(report) = m.report {
            expert_summaries.push(ExpertSummary {
                domain: partition.name(m.domain).to_string(),
                report,
            });
        }
        experts.insert(m.domain, classifier);
    }

    // calibration on the K-shot calibration split
    let mut tau = BTreeMap::new();
    let mut calibration = Vec::new();
    for &c in &expert_domains[1..] {
        let lines: Vec<usize> = partition
            .events_of(c)
            .filter_map(|id| prep.sample.get(id))
            .flat_map(|s| s.calib.iter().copied())
            .collect();
        let scores: Vec<f64> = par::map_slice(mode, &lines, |&i| {
            experts[&c].probability(&weighted(&records[i].raw)).expect("dims match")
        });
        let labels: Vec<bool> = lines.iter().map(|&i| records[i].label.is_anomaly()).collect();
        let fit = calibrate_threshold(&scores, &labels, cfg.calibration.recall_floor, cfg.calibration.max_candidates);
        tau.insert(c, fit.tau);
        calibration.push(CalibrationSummary {
            domain: partition.name(c).to_string(),
            calibration_lines: lines.len(),
            fit,
        });
    }
    let mut calib_all: Vec<usize> = prep.sample.per_event.values().flat_map(|s| s.calib.iter().copied()).collect();
    calib_all.sort_unstable();
    let routed: Vec<(f64, f64, bool)> = par::map_slice(mode, &calib_all, |&i| {
        let (p, w) = backbone.both(&records[i].raw);
        let g = gate.probability(&p).expect("dims match");
        let s = experts[&CertifiedPartition::UNIVERSAL].probability(&w).expect("dims match");
        (g, s, records[i].label.is_anomaly())
    })
    .into_iter()
    .filter(|&(g, _, _)| g < GATE_THRESHOLD)
    .collect();
    let universal = if routed.is_empty() {
        log::warn!("no calibration line is routed to the universal path; using w = 0, threshold 0.5");
        UniversalFit {
            weight: 0.0,
            fit: calibrate_threshold(&[], &[], cfg.calibration.recall_floor, cfg.calibration.max_candidates),
        }
    } else {
        let s_u: Vec<f64> = routed.iter().map(|r| r.1).collect();
        let g: Vec<f64> = routed.iter().map(|r| r.0).collect();
        let labels: Vec<bool> = routed.iter().map(|r| r.2).collect();
        calibrate_universal(
            &s_u,
            &g,
            &labels,
            &cfg.calibration.fusion_grid,
            cfg.calibration.recall_floor,
            cfg.calibration.max_candidates,
        )
        .stage("calibrate")?
    };

    let mut offline_lines = vec![0usize; partition.len()];
    for r in records {
        if let Some(id) = r.event_id {
            offline_lines[partition.domain_of(id)] += 1;
        }
    }
    let domains = partition
        .domains()
        .iter()
        .enumerate()
        .map(|(index, d)| DomainSummary {
            index,
            name: d.name.clone(),
            kind: d.kind,
            event_ids: partition.events_of(index).count(),
            offline_lines: offline_lines[index],
        })
        .collect();

    let config_hash = cfg.hash();
    let bundle = ModelBundle {
        backbone: backbone.clone(),
        gate,
        selector,
        class_weights: weights,
        experts,
        partition,
        calibration: CalibrationResult {
            tau,
            fusion_weight: universal.weight,
            tau_universal: universal.fit.tau,
        },
        seed: root,
        config_hash: config_hash.clone(),
    };
    bundle.validate().stage("bundle")?;
    let report = SetupReport {
        config_hash,
        seed: root,
        total_lines: prep.records.len(),
        offline_lines: records.len(),
        test_lines: prep.split.test.len(),
        templates: prep.table.len(),
        k: prep.sample.k,
        labels: prep.sample.label_count(),
        pool_lines: prep.pool.len(),
        adapt_lines: backbone.lines_used,
        group_decisions: certification.decisions,
        domains,
        gate_lines,
        gate: gate_report,
        selector_lines,
        selector: selector_report,
        experts: expert_summaries,
        calibration,
        universal_calibration_lines: routed.len(),
        universal,
    };
    Ok(Setup { bundle, report })
}

pub const REPORT_FILE: &str = "setup_report.json";

/// Writes bundle and setup report into `dir` through a sibling staging
/// directory, so a failed write leaves no partial bundle behind.
pub fn write_setup(setup: &Setup, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let name = dir
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("bad output directory {}", dir.display())))?;
    let staging = dir.with_file_name(format!(".{}.partial", name.to_string_lossy()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    let result = (|| {
        setup.bundle.save(&staging)?;
        let path = staging.join(REPORT_FILE);
        let mut text = serde_json::to_string_pretty(&setup.report)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result.stage("bundle")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticConfig};

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            backbone: BackboneConfig {
                dim: 1 << 16,
                ..BackboneConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    fn corpus(lines: usize) -> Vec<LogRecord> {
        generate(&SyntheticConfig {
            lines,
            ..SyntheticConfig::default()
        })
        .unwrap()
        .records()
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: PipelineConfig = toml::from_str("k = 10\n[router]\ngate_recall_target = 0.9\n").unwrap();
        assert_eq!(partial.k, 10);
        assert_eq!(partial.router.gate_recall_target, 0.9);
        assert_eq!(partial.router.gate_subsample_ratio, 3.0);
    }

    #[test]
    fn defaults_match_the_published_constants() {
        let c = PipelineConfig::default();
        assert_eq!(c.offline_fraction, 0.85);
        assert_eq!(c.k, 100);
        assert_eq!((c.drain.similarity_threshold, c.drain.tree_depth), (0.5, 4));
        assert_eq!((c.focal.gamma, c.focal.alpha), (2.0, 0.75));
        assert_eq!(c.router.gate_subsample_ratio, 3.0);
        assert_eq!(c.router.gate_recall_target, 0.95);
        assert_eq!(c.router.selector_accuracy_target, 0.80);
        assert_eq!(c.backbone.adapt_cap, 200_000);
        assert_eq!((c.experts.universal_negative_cap, c.experts.expert_negative_cap), (10.0, 20.0));
        assert_eq!((c.experts.small_dataset_steps, c.experts.check_every, c.experts.small_dataset_lines), (500, 50, 4_000));
        assert_eq!(c.experts.patience, 3);
        assert_eq!(c.calibration.max_candidates, 1_000);
        assert_eq!(c.calibration.recall_floor, 0.90);
        assert_eq!(GATE_THRESHOLD, 0.5);
    }

    #[test]
    fn hash_ignores_paths_only() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.output = Some("/tmp/x".into());
        b.dataset.path = Some("/data/x.log".into());
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn import_without_file_is_a_config_error() {
        let mut cfg = small_cfg();
        cfg.partition.source = PartitionSource::Import;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.partition.file = Some("/nonexistent/partition.json".into());
        let prep = prepare(corpus(3_000), &cfg).unwrap();
        let err = setup(&prep, &cfg, ExecMode::Sequential).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("partition") && msg.contains("/nonexistent/partition.json"), "{msg}");
    }

    #[test]
    fn small_run_is_consistent() {
        let cfg = small_cfg();
        let prep = prepare(corpus(8_000), &cfg).unwrap();
        let s = setup(&prep, &cfg, ExecMode::Parallel).unwrap();
        let kinds: Vec<DomainKind> = s.bundle.partition.domains().iter().map(|d| d.kind).collect();
        assert!(kinds.contains(&DomainKind::Mixed), "{kinds:?}");
        assert!(kinds.contains(&DomainKind::PureAnomaly), "{kinds:?}");
        assert_eq!(s.report.offline_lines + s.report.test_lines, 8_000);
        let again = setup(&prep, &cfg, ExecMode::Sequential).unwrap();
        assert_eq!(again.bundle, s.bundle);
        assert_eq!(again.report, s.report);
    }

    #[test]
    fn written_bundle_loads_back() {
        let cfg = small_cfg();
        let prep = prepare(corpus(5_000), &cfg).unwrap();
        let s = setup(&prep, &cfg, ExecMode::Parallel).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("bundle");
        write_setup(&s, &out).unwrap();
        write_setup(&s, &out).unwrap();
        assert!(ModelBundle::load(&out).unwrap() == s.bundle);
        assert!(out.join(REPORT_FILE).exists());
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
