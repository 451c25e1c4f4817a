//! Seeded synthetic corpus with planted failure domains.
//!
//! Lines are written in the loghub labeled format (`-` for normal, an alert
//! tag for anomalies) and come with a JSONL ground-truth sidecar naming the
//! planted domain and template of every line.
//!
//! Template families:
//!
//! * universal: normal-only service chatter, some of it carrying a status word;
//! * mixed: one template hosts both normal and anomalous lines, which differ
//!   only in the trailing status word. Domain `i` uses status `S[i]` for
//!   normal lines and `S[i + 1]` for anomalies, so the same word is benign in
//!   one domain and a failure in another and no single linear model over the
//!   whole corpus can get both right;
//! * anomaly-only: templates that only ever carry failures;
//! * novel: anomaly-only templates that first appear in the test region.
//!
//! With `mixed_templates = 0` every failure domain is pure (closed world):
//! anomalous and normal templates are disjoint.
//!
//! Every template starts with its own head word, so the parser never merges
//! two templates, and carries all five words of its domain.

use std::io::{BufRead, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LogRecord};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub lines: usize,
    /// Planted failure domains, 1 to 6.
    pub domains: usize,
    /// Templates hosting both normal and anomalous lines.
    pub mixed_templates: usize,
    pub anomaly_rate: f64,
    /// Anomaly-only templates that appear only in the test region.
    pub novel_templates: usize,
    /// Tail fraction of the corpus treated as the test region.
    pub test_fraction: f64,
    /// Probability that an anomaly in a mixed domain uses a mixed template.
    pub mixed_anomaly_share: f64,
    /// Probability that a normal line uses a mixed template.
    pub mixed_normal_share: f64,
    /// Probability that a test-region anomaly uses one of its domain's novel
    /// templates, when there are any.
    pub novel_share: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            lines: 50_000,
            domains: 3,
            mixed_templates: 5,
            anomaly_rate: 0.05,
            novel_templates: 0,
            test_fraction: 0.15,
            mixed_anomaly_share: 0.8,
            mixed_normal_share: 0.08,
            novel_share: 0.5,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn closed_world(mut self) -> Self {
        self.mixed_templates = 0;
        self.novel_templates = 0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("anomaly_rate", self.anomaly_rate)?;
        unit("test_fraction", self.test_fraction)?;
        unit("mixed_anomaly_share", self.mixed_anomaly_share)?;
        unit("mixed_normal_share", self.mixed_normal_share)?;
        unit("novel_share", self.novel_share)?;
        if self.lines == 0 {
            return Err(Error::Config("lines must be positive".into()));
        }
        if !(1..=DOMAINS.len()).contains(&self.domains) {
            return Err(Error::Config(format!("domains must lie in 1..={}, got {}", DOMAINS.len(), self.domains)));
        }
        if self.mixed_templates > 0 && self.domains < 2 {
            return Err(Error::Config("mixed templates need at least 2 domains (one stays pure)".into()));
        }
        if self.mixed_templates > MAX_TEMPLATES_PER_FAMILY {
            return Err(Error::Config(format!("at most {MAX_TEMPLATES_PER_FAMILY} mixed templates")));
        }
        if self.novel_templates > MAX_TEMPLATES_PER_FAMILY {
            return Err(Error::Config(format!("at most {MAX_TEMPLATES_PER_FAMILY} novel templates")));
        }
        Ok(())
    }
}

struct DomainVocab {
    name: &'static str,
    tag: &'static str,
    words: [&'static str; 5],
    heads: [&'static str; 10],
}

const DOMAINS: [DomainVocab; 6] = [
    DomainVocab {
        name: "MEMORY_ECC",
        tag: "KERNMC",
        words: ["ecc", "dimm", "memory", "correctable", "scrub"],
        heads: ["edac", "mcheck", "dimmctl", "memd", "eccmon", "scrubd", "rankmon", "pagemap", "mcelog", "ddrphy"],
    },
    DomainVocab {
        name: "NETWORK_LINK",
        tag: "LINKERR",
        words: ["link", "torus", "packet", "retransmit", "receiver"],
        heads: ["netlinkd", "torusd", "phyctl", "serdes", "linkmon", "fabricd", "ibstat", "portmux", "crcmon", "lanemgr"],
    },
    DomainVocab {
        name: "KERNEL_FATAL",
        tag: "KERNPAN",
        words: ["kernel", "panic", "trap", "instruction", "segfault"],
        heads: ["kpanic", "oopsd", "trapd", "dtlbmon", "machchk", "bugcheck", "kdump", "watchdog", "lockup", "stackchk"],
    },
    DomainVocab {
        name: "STORAGE_IO",
        tag: "IOERR",
        words: ["disk", "sector", "lustre", "filesystem", "block"],
        heads: ["blkdev", "lustred", "ostmon", "mdsctl", "raidmon", "smartd", "fsckd", "scsid", "nvmectl", "iosched"],
    },
    DomainVocab {
        name: "JOB_SCHED",
        tag: "JOBFAIL",
        words: ["job", "scheduler", "queue", "allocation", "slurm"],
        heads: ["slurmctld", "jobmgr", "qmaster", "allocd", "batchd", "preempt", "jobacct", "resvmgr", "launcher", "stepd"],
    },
    DomainVocab {
        name: "POWER_THERMAL",
        tag: "ENVALERT",
        words: ["fan", "temperature", "voltage", "thermal", "psu"],
        heads: ["envmon", "bmcd", "psumon", "fanctl", "thermd", "vrmctl", "ipmid", "coold", "sensord", "pdumon"],
    },
];

const MAX_TEMPLATES_PER_FAMILY: usize = 12;

/// Trailing status words of mixed templates.
const STATUS: [&str; 6] = ["nominal", "degraded", "recovering", "saturated", "throttled", "resetting"];

/// Normal-only chatter. `{node}` and `{num}` always render with digits and
/// `{status}` draws any status word.
const UNIVERSAL: [(&str, f64); 12] = [
    ("sshd session opened for user operator from {node}", 3.0),
    ("ntpd clock synchronized offset {num} us on {node}", 3.0),
    ("cron daily rotation finished in {num} seconds on {node}", 2.0),
    ("ciod login chdir to home directory ok on {node}", 2.0),
    ("idoproxy connection accepted port {num} on {node}", 2.0),
    ("rpcbind portmap request served id {num} on {node}", 1.5),
    ("mmcs boot image {num} loaded on {node}", 1.5),
    ("healthd probe reported state {status} on {node}", 1.5),
    ("agentd poll cycle completed state {status} on {node}", 1.5),
    ("confd reload applied revision {num} on {node}", 1.0),
    ("dhclient lease renewed ttl {num} for {node}", 1.0),
    ("auditd record written sequence {num} on {node}", 1.0),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Universal,
    Mixed,
    AnomalyOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    /// Format with `{node}`, `{num}` and `{status}` placeholders.
    pub pattern: String,
    pub domain: Option<usize>,
    pub kind: TemplateKind,
    pub novel: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedDomain {
    pub name: String,
    pub tag: String,
    pub pure: bool,
    /// Status word of normal and anomalous lines on this domain's mixed
    /// templates.
    pub normal_status: Option<String>,
    pub anomaly_status: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLine {
    pub message: String,
    pub anomaly: bool,
    pub template: usize,
}

/// One row of the ground-truth sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub ordinal: u64,
    pub label: u8,
    /// Planted domain of the line's template.
    pub domain: Option<String>,
    pub template: usize,
    pub kind: TemplateKind,
    pub novel: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub config: SyntheticConfig,
    pub domains: Vec<PlantedDomain>,
    pub templates: Vec<TemplateSpec>,
    pub lines: Vec<SyntheticLine>,
}

fn domain_pattern(vocab: &DomainVocab, head: &str, rotation: usize, mixed: bool) -> String {
    let mut words = vocab.words;
    let n = words.len();
    words.rotate_left(rotation % n);
    let mut p = format!("{head} {} code {{num}} on {{node}}", words.join(" "));
    if mixed {
        p.push_str(" state {status}");
    }
    p
}

fn build_templates(cfg: &SyntheticConfig) -> (Vec<PlantedDomain>, Vec<TemplateSpec>) {
    let closed = cfg.mixed_templates == 0;
    let n_mixed_domains = if closed { 0 } else { cfg.domains - 1 };
    let statuses = n_mixed_domains.max(2);
    let domains: Vec<PlantedDomain> = (0..cfg.domains)
        .map(|d| {
            let mixed = d < n_mixed_domains;
            PlantedDomain {
                name: DOMAINS[d].name.to_string(),
                tag: DOMAINS[d].tag.to_string(),
                pure: !mixed,
                normal_status: mixed.then(|| STATUS[d % statuses].to_string()),
                anomaly_status: mixed.then(|| STATUS[(d + 1) % statuses].to_string()),
            }
        })
        .collect();

    let mut templates: Vec<TemplateSpec> = UNIVERSAL
        .iter()
        .map(|(p, _)| TemplateSpec {
            pattern: p.to_string(),
            domain: None,
            kind: TemplateKind::Universal,
            novel: false,
        })
        .collect();
    let mut next_head = vec![0usize; cfg.domains];
    let mut add = |templates: &mut Vec<TemplateSpec>, d: usize, kind: TemplateKind, novel: bool| {
        let vocab = &DOMAINS[d];
        let h = next_head[d];
        next_head[d] += 1;
        let head = if h < vocab.heads.len() {
            vocab.heads[h].to_string()
        } else {
            format!("{}{}", vocab.heads[h % vocab.heads.len()], "x".repeat(h / vocab.heads.len()))
        };
        templates.push(TemplateSpec {
            pattern: domain_pattern(vocab, &head, h, kind == TemplateKind::Mixed),
            domain: Some(d),
            kind,
            novel,
        });
    };
    for j in 0..cfg.mixed_templates {
        add(&mut templates, j % n_mixed_domains, TemplateKind::Mixed, false);
    }
    for d in 0..cfg.domains {
        let only = if domains[d].pure { 3 } else { 2 };
        for _ in 0..only {
            add(&mut templates, d, TemplateKind::AnomalyOnly, false);
        }
    }
    for j in 0..cfg.novel_templates {
        add(&mut templates, j % cfg.domains, TemplateKind::AnomalyOnly, true);
    }
    (domains, templates)
}

fn render<R: Rng>(pattern: &str, status: &str, rng: &mut R) -> String {
    let mut out = pattern.to_string();
    if out.contains("{node}") {
        let node = format!("R{:02}-M{}-N{:02}", rng.gen_range(0..64), rng.gen_range(0..2), rng.gen_range(0..16));
        out = out.replace("{node}", &node);
    }
    if out.contains("{num}") {
        out = out.replace("{num}", &format!("{}", rng.gen_range(1..100_000)));
    }
    out.replace("{status}", status)
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let (domains, templates) = build_templates(cfg);
    let mut rng = seed::stage_rng(cfg.seed, "synthetic.generate");

    let of = |d: usize, kind: TemplateKind, novel: bool| -> Vec<usize> {
        (0..templates.len())
            .filter(|&t| templates[t].domain == Some(d) && templates[t].kind == kind && templates[t].novel == novel)
            .collect()
    };
    let mixed_of: Vec<Vec<usize>> = (0..cfg.domains).map(|d| of(d, TemplateKind::Mixed, false)).collect();
    let only_of: Vec<Vec<usize>> = (0..cfg.domains).map(|d| of(d, TemplateKind::AnomalyOnly, false)).collect();
    let novel_of: Vec<Vec<usize>> = (0..cfg.domains).map(|d| of(d, TemplateKind::AnomalyOnly, true)).collect();
    let all_mixed: Vec<usize> = mixed_of.iter().flatten().copied().collect();
    let universal_pick = WeightedIndex::new(UNIVERSAL.iter().map(|(_, w)| *w)).expect("positive weights");
    let test_start = cfg.lines - (cfg.lines as f64 * cfg.test_fraction).floor() as usize;

    let pick = |rng: &mut rand_chacha::ChaCha8Rng, xs: &[usize]| xs[rng.gen_range(0..xs.len())];
    let mut lines = Vec::with_capacity(cfg.lines);
    for i in 0..cfg.lines {
        let anomaly = rng.gen_bool(cfg.anomaly_rate);
        let (template, status) = if anomaly {
            let d = rng.gen_range(0..cfg.domains);
            let t = if i >= test_start && !novel_of[d].is_empty() && rng.gen_bool(cfg.novel_share) {
                pick(&mut rng, &novel_of[d])
            } else if !mixed_of[d].is_empty() && rng.gen_bool(cfg.mixed_anomaly_share) {
                pick(&mut rng, &mixed_of[d])
            } else {
                pick(&mut rng, &only_of[d])
            };
            (t, domains[d].anomaly_status.as_deref().unwrap_or(""))
        } else if !all_mixed.is_empty() && rng.gen_bool(cfg.mixed_normal_share) {
            let t = pick(&mut rng, &all_mixed);
            let d = templates[t].domain.expect("mixed templates belong to a domain");
            (t, domains[d].normal_status.as_deref().unwrap_or(""))
        } else {
            let t = universal_pick.sample(&mut rng);
            (t, STATUS[rng.gen_range(0..STATUS.len())])
        };
        let message = render(&templates[template].pattern, status, &mut rng);
        lines.push(SyntheticLine {
            message,
            anomaly,
            template,
        });
    }
    Ok(SyntheticCorpus {
        config: cfg.clone(),
        domains,
        templates,
        lines,
    })
}

impl SyntheticCorpus {
    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn records(&self) -> Vec<LogRecord> {
        self.lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let label = if l.anomaly { Label::Anomaly } else { Label::Normal };
                LogRecord::new(i as u64, label, l.message.clone())
            })
            .collect()
    }

    fn tag(&self, line: &SyntheticLine) -> &str {
        match (line.anomaly, self.templates[line.template].domain) {
            (false, _) => "-",
            (true, Some(d)) => &self.domains[d].tag,
            (true, None) => "ALERT",
        }
    }

    pub fn write_loghub<W: Write>(&self, mut out: W) -> Result<()> {
        for l in &self.lines {
            writeln!(out, "{} {}", self.tag(l), l.message)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn truth(&self) -> Vec<TruthRecord> {
        self.lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let t = &self.templates[l.template];
                TruthRecord {
                    ordinal: i as u64,
                    label: u8::from(l.anomaly),
                    domain: t.domain.map(|d| self.domains[d].name.clone()),
                    template: l.template,
                    kind: t.kind,
                    novel: t.novel,
                }
            })
            .collect()
    }

    pub fn write_truth<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.truth() {
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn read_truth<R: BufRead>(reader: R) -> Result<Vec<TruthRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_reader, InputFormat};
    use crate::drain::{parse_records, tokenize, DrainConfig};
    use std::collections::{BTreeMap, BTreeSet};

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            lines: 20_000,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SyntheticConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.lines, c.lines);
    }

    #[test]
    fn rates_and_layout() {
        let c = generate(&small()).unwrap();
        let anomalies = c.lines.iter().filter(|l| l.anomaly).count() as f64;
        let rate = anomalies / c.len() as f64;
        assert!((rate - 0.05).abs() < 0.01, "rate {rate}");
        assert_eq!(c.templates.iter().filter(|t| t.kind == TemplateKind::Mixed).count(), 5);
        assert_eq!(c.domains.iter().filter(|d| d.pure).count(), 1);
        // mixed templates carry both labels
        for (t, spec) in c.templates.iter().enumerate() {
            let labels: BTreeSet<bool> = c.lines.iter().filter(|l| l.template == t).map(|l| l.anomaly).collect();
            match spec.kind {
                TemplateKind::Universal => assert_eq!(labels, BTreeSet::from([false])),
                TemplateKind::AnomalyOnly => assert_eq!(labels, BTreeSet::from([true])),
                TemplateKind::Mixed => assert_eq!(labels, BTreeSet::from([false, true])),
            }
        }
    }

    #[test]
    fn status_words_flip_between_mixed_domains() {
        let c = generate(&small()).unwrap();
        let (a, b) = (&c.domains[0], &c.domains[1]);
        assert_eq!(a.normal_status, b.anomaly_status);
        assert_eq!(a.anomaly_status, b.normal_status);
    }

    #[test]
    fn parser_recovers_one_event_per_template() {
        let c = generate(&small()).unwrap();
        let mut recs = c.records();
        parse_records(&mut recs, &DrainConfig::default()).unwrap();
        let mut events: BTreeMap<usize, BTreeSet<_>> = BTreeMap::new();
        for (r, l) in recs.iter().zip(&c.lines) {
            events.entry(l.template).or_default().insert(r.event_id.unwrap());
        }
        assert!(events.values().all(|e| e.len() == 1), "{events:?}");
        let distinct: BTreeSet<_> = events.values().flatten().collect();
        assert_eq!(distinct.len(), events.len());
    }

    #[test]
    fn novel_templates_stay_in_the_test_region() {
        let cfg = SyntheticConfig {
            novel_templates: 3,
            ..small()
        };
        let c = generate(&cfg).unwrap();
        let start = cfg.lines - (cfg.lines as f64 * cfg.test_fraction) as usize;
        let novel: Vec<usize> = (0..c.len()).filter(|&i| c.templates[c.lines[i].template].novel).collect();
        assert!(!novel.is_empty());
        assert!(novel.iter().all(|&i| i >= start));
    }

    #[test]
    fn closed_world_has_disjoint_templates() {
        let c = generate(&small().closed_world()).unwrap();
        assert!(c.domains.iter().all(|d| d.pure));
        assert!(c.templates.iter().all(|t| t.kind != TemplateKind::Mixed));
    }

    #[test]
    fn loghub_and_truth_round_trip() {
        let c = generate(&SyntheticConfig {
            lines: 500,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let mut text = Vec::new();
        c.write_loghub(&mut text).unwrap();
        let corpus = ingest_reader(&text[..], InputFormat::LoghubLabeled).unwrap();
        assert_eq!(corpus.records, c.records());
        let mut truth = Vec::new();
        c.write_truth(&mut truth).unwrap();
        assert_eq!(read_truth(&truth[..]).unwrap(), c.truth());
        assert!(c.lines.iter().all(|l| tokenize(&l.message).iter().all(|t| !t.contains('{'))));
    }

    #[test]
    fn bad_configs() {
        assert!(generate(&SyntheticConfig { domains: 7, ..small() }).is_err());
        assert!(generate(&SyntheticConfig { domains: 1, ..small() }).is_err());
        assert!(generate(&SyntheticConfig { anomaly_rate: 1.5, ..small() }).is_err());
        assert!(generate(&SyntheticConfig { domains: 1, ..small().closed_world() }).is_ok());
    }
}
