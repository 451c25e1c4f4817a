//! Online stage: a frozen [`ModelBundle`] labels every line.
//!
//! Each line takes exactly one of three paths:
//!
//! | gate    | selected domain | decision                               | label  |
//! |---------|-----------------|----------------------------------------|--------|
//! | < 0.5   | -               | fused universal score >= tau_u         | none   |
//! | >= 0.5  | pure-anomaly    | anomaly                                | domain |
//! | >= 0.5  | mixed           | expert score >= tau_c                  | domain |
//!
//! A bundle stores its models as flat little-endian f32 files next to a
//! `manifest.json` holding shapes, the partition, thresholds and seeds.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneState, FeaturizerConfig, LinearClassifier};
use crate::calibration::{fuse_universal, CalibrationResult};
use crate::corpus::{parse_record, InputFormat, LogRecord};
use crate::drain::EventId;
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};
use crate::partition::{CertifiedPartition, Domain, DomainKind};
use crate::router::{argmax, GATE_THRESHOLD};

pub const BUNDLE_FORMAT: &str = "fame-bundle";
pub const BUNDLE_VERSION: u32 = 1;
const CHUNK_LINES: usize = 8_192;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Normal,
    Anomaly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutePath {
    Universal,
    Pure,
    Mixed,
}

impl RoutePath {
    pub fn as_str(self) -> &'static str {
        match self {
            RoutePath::Universal => "universal",
            RoutePath::Pure => "pure",
            RoutePath::Mixed => "mixed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub decision: Decision,
    /// Domain index; present exactly on the pure and mixed paths.
    pub domain: Option<usize>,
    pub path: RoutePath,
    /// Fused universal or expert score; absent on the pure path.
    pub score: Option<f64>,
    /// Gate fired but the bundle has no selector.
    pub fallback: bool,
}

impl Verdict {
    pub fn is_anomaly(&self) -> bool {
        self.decision == Decision::Anomaly
    }

    /// Score used for ranking metrics; pure-path lines count as certain.
    pub fn ranking_score(&self) -> f64 {
        self.score.unwrap_or(1.0)
    }
}

/// Applies the three-path rule. `score(0)` must return the universal
/// expert's score and `score(c)` the score of mixed domain `c`; only the
/// score that is needed gets requested.
pub fn decide(
    gate: f64,
    selector: Option<&[f64]>,
    kinds: &[DomainKind],
    calibration: &CalibrationResult,
    score: &mut dyn FnMut(usize) -> f64,
) -> Verdict {
    let universal = |score: &mut dyn FnMut(usize) -> f64, fallback: bool| {
        let fused = fuse_universal(score(CertifiedPartition::UNIVERSAL), gate, calibration.fusion_weight);
        Verdict {
            decision: if fused >= calibration.tau_universal {
                Decision::Anomaly
            } else {
                Decision::Normal
            },
            domain: None,
            path: RoutePath::Universal,
            score: Some(fused),
            fallback,
        }
    };
    if gate < GATE_THRESHOLD {
        return universal(score, false);
    }
    let Some(dist) = selector else {
        return universal(score, true);
    };
    let c = argmax(dist) + 1;
    match kinds[c] {
        DomainKind::PureAnomaly => Verdict {
            decision: Decision::Anomaly,
            domain: Some(c),
            path: RoutePath::Pure,
            score: None,
            fallback: false,
        },
        _ => {
            let s = score(c);
            let tau = calibration.tau.get(&c).copied().unwrap_or(0.5);
            Verdict {
                decision: if s >= tau { Decision::Anomaly } else { Decision::Normal },
                domain: Some(c),
                path: RoutePath::Mixed,
                score: Some(s),
                fallback: false,
            }
        }
    }
}

/// Domain chooser stored in a bundle.
#[derive(Clone, Debug, PartialEq)]
pub enum Selector {
    /// No failure domain was certified.
    Absent,
    /// Exactly one failure domain: every expert-path line goes there.
    Constant,
    Linear(LinearClassifier),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SelectorEntry {
    Absent,
    Constant,
    Linear { file: String, shape: Vec<usize> },
}

/// Everything the online stage needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub backbone: BackboneState,
    pub gate: LinearClassifier,
    pub selector: Selector,
    pub class_weights: Vec<f64>,
    /// Trained experts by domain index: universal and every mixed domain.
    pub experts: BTreeMap<usize, LinearClassifier>,
    pub partition: CertifiedPartition,
    pub calibration: CalibrationResult,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayFile {
    file: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config_hash: String,
    seed: u64,
    featurizer: FeaturizerConfig,
    adapt_lines: usize,
    domains: Vec<Domain>,
    assignment: BTreeMap<EventId, usize>,
    calibration: CalibrationResult,
    class_weights: Vec<f64>,
    idf: ArrayFile,
    gate: ArrayFile,
    selector: SelectorEntry,
    experts: BTreeMap<usize, ArrayFile>,
}

fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Bundle(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn model_file(dir: &Path, name: &str, model: &LinearClassifier) -> Result<ArrayFile> {
    let file = format!("{name}.f32");
    write_f32(&dir.join(&file), &model.to_flat())?;
    Ok(ArrayFile {
        file,
        shape: vec![model.outputs(), model.dim() + 1],
    })
}

fn load_model(dir: &Path, entry: &ArrayFile, dim: usize) -> Result<LinearClassifier> {
    match entry.shape.as_slice() {
        [outputs, cols] if *cols == dim + 1 => {
            let flat = read_f32(&dir.join(&entry.file), outputs * cols)?;
            LinearClassifier::from_flat(*outputs, dim, &flat)
        }
        other => Err(Error::Bundle(format!("{}: bad shape {other:?} for dim {dim}", entry.file))),
    }
}

impl ModelBundle {
    /// Checks that the parts fit together.
    pub fn validate(&self) -> Result<()> {
        let dim = self.backbone.dim();
        let experts_dims = self.experts.values().map(|m| (m.dim(), m.outputs()));
        for (d, o) in std::iter::once((self.gate.dim(), self.gate.outputs())).chain(experts_dims) {
            if d != dim || o != 1 {
                return Err(Error::Bundle(format!("binary model of shape [{o}, {d}] in a dim-{dim} bundle")));
            }
        }
        if !self.experts.contains_key(&CertifiedPartition::UNIVERSAL) {
            return Err(Error::Bundle("universal expert missing".into()));
        }
        let n_expert = self.partition.len() - 1;
        match (&self.selector, n_expert) {
            (Selector::Absent, 0) => {}
            (Selector::Constant, 1) => {}
            (Selector::Linear(m), n) if n >= 2 && m.outputs() == n && m.dim() == dim => {}
            _ => return Err(Error::Bundle(format!("selector does not match {n_expert} expert domain(s)"))),
        }
        for c in self.partition.expert_domains() {
            let mixed = self.partition.kind(c) == DomainKind::Mixed;
            if mixed != self.experts.contains_key(&c) || mixed != self.calibration.tau.contains_key(&c) {
                return Err(Error::Bundle(format!(
                    "domain `{}`: mixed domains need an expert and a threshold, pure ones neither",
                    self.partition.name(c)
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_f32(&dir.join("idf.f32"), &self.backbone.idf)?;
        let selector = match &self.selector {
            Selector::Absent => SelectorEntry::Absent,
            Selector::Constant => SelectorEntry::Constant,
            Selector::Linear(m) => {
                let f = model_file(dir, "selector", m)?;
                SelectorEntry::Linear {
                    file: f.file,
                    shape: f.shape,
                }
            }
        };
        let mut experts = BTreeMap::new();
        for (&c, m) in &self.experts {
            experts.insert(c, model_file(dir, &format!("expert_{c}"), m)?);
        }
        let manifest = Manifest {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            featurizer: self.backbone.featurizer.clone(),
            adapt_lines: self.backbone.lines_used,
            domains: self.partition.domains().to_vec(),
            assignment: self.partition.assignment().clone(),
            calibration: self.calibration.clone(),
            class_weights: self.class_weights.clone(),
            idf: ArrayFile {
                file: "idf.f32".into(),
                shape: vec![self.backbone.dim()],
            },
            gate: model_file(dir, "gate", &self.gate)?,
            selector,
            experts,
        };
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != BUNDLE_FORMAT || m.version != BUNDLE_VERSION {
            return Err(Error::Bundle(format!("unsupported bundle {} v{}", m.format, m.version)));
        }
        let dim = m.featurizer.dim;
        if m.idf.shape != [dim] {
            return Err(Error::Bundle(format!("idf shape {:?} does not match dim {dim}", m.idf.shape)));
        }
        let idf = read_f32(&dir.join(&m.idf.file), dim)?;
        let backbone = BackboneState::with_idf(m.featurizer, m.adapt_lines, idf)?;
        let selector = match &m.selector {
            SelectorEntry::Absent => Selector::Absent,
            SelectorEntry::Constant => Selector::Constant,
            SelectorEntry::Linear { file, shape } => Selector::Linear(load_model(
                dir,
                &ArrayFile {
                    file: file.clone(),
                    shape: shape.clone(),
                },
                dim,
            )?),
        };
        let mut experts = BTreeMap::new();
        for (&c, f) in &m.experts {
            experts.insert(c, load_model(dir, f, dim)?);
        }
        let bundle = ModelBundle {
            backbone,
            gate: load_model(dir, &m.gate, dim)?,
            selector,
            class_weights: m.class_weights,
            experts,
            partition: CertifiedPartition::from_parts(m.domains, m.assignment)?,
            calibration: m.calibration,
            seed: m.seed,
            config_hash: m.config_hash,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn classify(&self, raw: &str) -> Verdict {
        let (plain, weighted) = self.backbone.both(raw);
        let gate = self.gate.probability(&plain).expect("validated dims");
        let dist = match &self.selector {
            Selector::Absent => None,
            Selector::Constant => Some(vec![1.0]),
            Selector::Linear(m) => Some(m.distribution(&plain).expect("validated dims")),
        };
        let kinds: Vec<DomainKind> = self.partition.domains().iter().map(|d| d.kind).collect();
        decide(gate, dist.as_deref(), &kinds, &self.calibration, &mut |c| {
            self.experts[&c].probability(&weighted).expect("validated dims")
        })
    }

    pub fn classify_records(&self, records: &[LogRecord], mode: ExecMode) -> Vec<Verdict> {
        par::map_slice(mode, records, |r| self.classify(&r.raw))
    }

    pub fn domain_name(&self, v: &Verdict) -> Option<&str> {
        v.domain.map(|c| self.partition.name(c))
    }

    /// One JSON line, scores rendered with six decimals.
    pub fn render(&self, ordinal: u64, v: &Verdict) -> String {
        let decision = match v.decision {
            Decision::Normal => "normal",
            Decision::Anomaly => "anomaly",
        };
        let domain = match self.domain_name(v) {
            Some(name) => serde_json::Value::String(name.to_string()).to_string(),
            None => "null".into(),
        };
        let score = v.score.map_or("null".to_string(), |s| format!("{s:.6}"));
        format!(
            "{{\"ordinal\":{ordinal},\"decision\":\"{decision}\",\"domain\":{domain},\"path\":\"{}\",\"score\":{score}}}",
            v.path.as_str()
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub lines: u64,
    pub skipped: u64,
    pub anomalies: u64,
    pub per_path: BTreeMap<String, u64>,
    pub per_domain: BTreeMap<String, u64>,
    pub selector_fallbacks: u64,
    pub seconds: f64,
    pub lines_per_sec: f64,
}

impl StreamSummary {
    fn add(&mut self, bundle: &ModelBundle, v: &Verdict) {
        self.lines += 1;
        self.anomalies += u64::from(v.is_anomaly());
        *self.per_path.entry(v.path.as_str().into()).or_default() += 1;
        if let Some(name) = bundle.domain_name(v) {
            *self.per_domain.entry(name.into()).or_default() += 1;
        }
        self.selector_fallbacks += u64::from(v.fallback);
    }
}

/// Classifies a line stream chunk by chunk, writing one JSON verdict per
/// message in input order. Verdicts completed before an error are flushed.
pub fn classify_stream<R: BufRead, W: Write>(
    bundle: &ModelBundle,
    input: R,
    format: InputFormat,
    output: W,
    mode: ExecMode,
) -> Result<StreamSummary> {
    let start = Instant::now();
    let mut out = BufWriter::new(output);
    let mut summary = StreamSummary::default();
    let result = stream_chunks(bundle, input, format, &mut out, mode, &mut summary);
    out.flush()?;
    result?;
    summary.seconds = start.elapsed().as_secs_f64();
    summary.lines_per_sec = if summary.seconds > 0.0 {
        summary.lines as f64 / summary.seconds
    } else {
        0.0
    };
    Ok(summary)
}

fn stream_chunks<R: BufRead, W: Write>(
    bundle: &ModelBundle,
    input: R,
    format: InputFormat,
    out: &mut W,
    mode: ExecMode,
    summary: &mut StreamSummary,
) -> Result<()> {
    let mut chunk: Vec<LogRecord> = Vec::with_capacity(CHUNK_LINES);
    let mut lines = input.lines().enumerate();
    loop {
        let mut failure = None;
        let mut exhausted = true;
        chunk.clear();
        for (line_no, line) in lines.by_ref() {
            let parsed = line
                .map_err(Error::from)
                .and_then(|l| parse_record(l.strip_suffix('\r').unwrap_or(&l), line_no as u64, format));
            match parsed {
                Ok(Some(r)) => chunk.push(r),
                Ok(None) => summary.skipped += 1,
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
            if chunk.len() == CHUNK_LINES {
                exhausted = false;
                break;
            }
        }
        let verdicts = bundle.classify_records(&chunk, mode);
        for (r, v) in chunk.iter().zip(&verdicts) {
            summary.add(bundle, v);
            writeln!(out, "{}", bundle.render(r.ordinal, v))?;
        }
        if let Some(e) = failure {
            return Err(e);
        }
        if exhausted {
            return Ok(());
        }
    }
}
