//! Failure-domain partitions.
//!
//! A [`ProposedPartition`] comes either from an external grouper (an LLM fed
//! the payload of [`export_prompt_payload`], imported with
//! [`import_partition`]) or from the built-in [`tfidf_grouping`]. It only
//! becomes usable after [`certify`] checks every group against the K-shot
//! signals:
//!
//! - no EventID with an anomaly signal: the group is dissolved;
//! - every EventID anomalous-only: a pure-anomaly candidate, kept only when
//!   its anomaly representatives are far (TF-IDF centroid cosine below the
//!   distinctness threshold) from a sample of the universal normal pool;
//! - otherwise: a mixed domain that gets a trained expert.
//!
//! Dissolved EventIDs fall back to `UNIVERSAL_NORMAL`. Group names are kept
//! verbatim and become the failure-domain labels emitted at inference.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::LogRecord;
use crate::drain::{tokenize, EventId, TemplateTable};
use crate::error::{Error, Result};
use crate::kshot::{KShotSample, PuNormalPool};
use crate::seed;
use crate::tfidf::{centroid, cosine, SparseVec, TfIdf};

pub const UNIVERSAL_NORMAL: &str = "UNIVERSAL_NORMAL";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedPartition {
    pub groups: BTreeMap<String, BTreeSet<EventId>>,
}

impl ProposedPartition {
    /// Validates disjointness and adds an empty `UNIVERSAL_NORMAL` if missing.
    pub fn new(groups: BTreeMap<String, BTreeSet<EventId>>) -> Result<Self> {
        let mut owner: BTreeMap<EventId, &str> = BTreeMap::new();
        for (name, ids) in &groups {
            for id in ids {
                if let Some(prev) = owner.insert(*id, name) {
                    return Err(Error::Partition(format!(
                        "event id {id} appears in both `{prev}` and `{name}`"
                    )));
                }
            }
        }
        let mut groups = groups;
        groups.entry(UNIVERSAL_NORMAL.to_string()).or_default();
        Ok(ProposedPartition { groups })
    }

    /// Group of `id`; unassigned EventIDs belong to `UNIVERSAL_NORMAL`.
    pub fn group_of(&self, id: EventId) -> &str {
        self.groups
            .iter()
            .find(|(_, ids)| ids.contains(&id))
            .map(|(n, _)| n.as_str())
            .unwrap_or(UNIVERSAL_NORMAL)
    }

    pub fn expert_groups(&self) -> impl Iterator<Item = (&String, &BTreeSet<EventId>)> {
        self.groups.iter().filter(|(n, _)| n.as_str() != UNIVERSAL_NORMAL)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Deserialize)]
struct PartitionDoc {
    groups: BTreeMap<String, Vec<String>>,
}

/// Parses `{"groups": {name: [event_id, ...]}}`, rejecting EventIDs that the
/// sample does not know.
pub fn import_partition(doc: &str, sample: &KShotSample) -> Result<ProposedPartition> {
    let parsed: PartitionDoc = serde_json::from_str(doc)?;
    let mut groups: BTreeMap<String, BTreeSet<EventId>> = BTreeMap::new();
    let mut seen: BTreeMap<EventId, String> = BTreeMap::new();
    for (name, ids) in parsed.groups {
        let set = groups.entry(name.clone()).or_default();
        for raw in ids {
            let id: EventId = raw.parse()?;
            if !sample.per_event.contains_key(&id) {
                return Err(Error::Partition(format!("unknown event id {id} in group `{name}`")));
            }
            if let Some(prev) = seen.insert(id, name.clone()) {
                if prev != name {
                    return Err(Error::Partition(format!(
                        "event id {id} appears in both `{prev}` and `{name}`"
                    )));
                }
            }
            set.insert(id);
        }
    }
    ProposedPartition::new(groups)
}

const GROUPING_INSTRUCTIONS: &str = "You are given one row per log template (EventID) mined \
from the offline region of a system log. Each row lists the template, how many offline lines \
it covers, whether the labeled sample contained normal and/or anomalous lines, and at most one \
representative line of each kind. Group EventIDs by underlying failure mechanism (the subsystem \
or fault that produces them), ignoring boilerplate such as severity words, node identifiers, \
timestamps and hexadecimal payloads. Choose the number of groups yourself and give each group \
a short upper-case name. Put every EventID that reports routine operation in a group named \
UNIVERSAL_NORMAL; EventIDs you leave out are treated as UNIVERSAL_NORMAL. Answer with JSON only, \
in the form {\"groups\": {\"NAME\": [\"event_id\", ...], ...}}.";

/// Complete one-shot grouping prompt: instructions plus per-EventID statistics.
pub fn export_prompt_payload(
    table: &TemplateTable,
    sample: &KShotSample,
    records: &[LogRecord],
) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = table
        .entries()
        .iter()
        .map(|entry| {
            let s = sample.get(entry.event_id).cloned().unwrap_or_default();
            let mut row = serde_json::json!({
                "event_id": entry.event_id,
                "template": entry.template.join(" "),
                "count": entry.count,
                "has_normal": s.has_normal,
                "has_anomaly": s.has_anomaly,
            });
            if let Some(i) = s.rep_normal {
                row["rep_normal"] = records[i].raw.clone().into();
            }
            if let Some(i) = s.rep_anomaly {
                row["rep_anomaly"] = records[i].raw.clone().into();
            }
            row
        })
        .collect();
    serde_json::json!({
        "instructions": GROUPING_INSTRUCTIONS,
        "required_group": UNIVERSAL_NORMAL,
        "events": rows,
    })
}

/// Single-link clustering of anomaly-signal templates by TF-IDF cosine.
pub fn tfidf_grouping(table: &TemplateTable, sample: &KShotSample, link_threshold: f64) -> ProposedPartition {
    let docs: Vec<&[String]> = table.entries().iter().map(|e| e.template.as_slice()).collect();
    let tfidf = TfIdf::fit(&docs);
    let anomalous: Vec<(EventId, SparseVec)> = table
        .entries()
        .iter()
        .filter(|e| sample.get(e.event_id).is_some_and(|s| s.has_anomaly))
        .map(|e| (e.event_id, tfidf.transform(&e.template)))
        .collect();

    let mut parent: Vec<usize> = (0..anomalous.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..anomalous.len() {
        for j in (i + 1)..anomalous.len() {
            if cosine(&anomalous[i].1, &anomalous[j].1) >= link_threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }

    // clusters numbered by their earliest template
    let mut cluster_name: BTreeMap<usize, String> = BTreeMap::new();
    let mut groups: BTreeMap<String, BTreeSet<EventId>> = BTreeMap::new();
    for i in 0..anomalous.len() {
        let root = find(&mut parent, i);
        let next = cluster_name.len() + 1;
        let name = cluster_name.entry(root).or_insert_with(|| format!("DOMAIN_{next}")).clone();
        groups.entry(name).or_default().insert(anomalous[i].0);
    }
    let assigned: BTreeSet<EventId> = anomalous.iter().map(|(id, _)| *id).collect();
    groups.insert(
        UNIVERSAL_NORMAL.to_string(),
        table.entries().iter().map(|e| e.event_id).filter(|id| !assigned.contains(id)).collect(),
    );
    ProposedPartition { groups }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Universal,
    PureAnomaly,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub name: String,
    pub kind: DomainKind,
}

/// Frozen mapping EventID → domain. Domain 0 is always `UNIVERSAL_NORMAL`;
/// expert domains follow in name order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertifiedPartition {
    domains: Vec<Domain>,
    assignment: BTreeMap<EventId, usize>,
}

impl CertifiedPartition {
    pub const UNIVERSAL: usize = 0;

    pub fn from_parts(domains: Vec<Domain>, assignment: BTreeMap<EventId, usize>) -> Result<Self> {
        if domains.first().map(|d| d.kind) != Some(DomainKind::Universal) {
            return Err(Error::Partition("domain 0 must be UNIVERSAL_NORMAL".into()));
        }
        if domains[1..].iter().any(|d| d.kind == DomainKind::Universal) {
            return Err(Error::Partition("only domain 0 may be universal".into()));
        }
        if let Some((id, d)) = assignment.iter().find(|(_, &d)| d >= domains.len()) {
            return Err(Error::Partition(format!("event id {id} maps to missing domain {d}")));
        }
        Ok(CertifiedPartition { domains, assignment })
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn domain(&self, idx: usize) -> &Domain {
        &self.domains[idx]
    }

    pub fn kind(&self, idx: usize) -> DomainKind {
        self.domains[idx].kind
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.domains[idx].name
    }

    /// Domain of an EventID; unknown EventIDs belong to the universal domain.
    pub fn domain_of(&self, id: EventId) -> usize {
        self.assignment.get(&id).copied().unwrap_or(Self::UNIVERSAL)
    }

    pub fn assignment(&self) -> &BTreeMap<EventId, usize> {
        &self.assignment
    }

    pub fn expert_domains(&self) -> std::ops::Range<usize> {
        1..self.domains.len()
    }

    pub fn events_of(&self, domain: usize) -> impl Iterator<Item = EventId> + '_ {
        self.assignment.iter().filter(move |(_, &d)| d == domain).map(|(id, _)| *id)
    }

    /// Re-expresses the certified mapping as a proposal.
    pub fn to_proposal(&self) -> ProposedPartition {
        let mut groups: BTreeMap<String, BTreeSet<EventId>> =
            self.domains.iter().map(|d| (d.name.clone(), BTreeSet::new())).collect();
        for (id, &d) in &self.assignment {
            groups.get_mut(&self.domains[d].name).expect("domain exists").insert(*id);
        }
        ProposedPartition { groups }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub distinctness_threshold: f64,
    pub pool_sample_size: usize,
    pub seed: u64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            distinctness_threshold: 0.7,
            pool_sample_size: 10_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupOutcome {
    Mixed,
    PureAnomaly,
    DissolvedNoAnomaly,
    DissolvedNotDistinct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupDecision {
    pub name: String,
    pub event_ids: usize,
    pub outcome: GroupOutcome,
    /// Centroid cosine against the universal pool, for pure candidates.
    pub cosine: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub partition: CertifiedPartition,
    pub decisions: Vec<GroupDecision>,
}

pub fn certify(
    proposal: &ProposedPartition,
    sample: &KShotSample,
    pool: &PuNormalPool,
    records: &[LogRecord],
    cfg: &CertifyConfig,
) -> Result<Certification> {
    for (name, ids) in &proposal.groups {
        if let Some(id) = ids.iter().find(|id| !sample.per_event.contains_key(id)) {
            return Err(Error::Partition(format!("unknown event id {id} in group `{name}`")));
        }
    }
    let signals = |ids: &BTreeSet<EventId>| {
        let evs: Vec<_> = ids.iter().filter_map(|id| sample.get(*id)).collect();
        let any_anomaly = evs.iter().any(|s| s.has_anomaly);
        let pure = !evs.is_empty() && evs.iter().all(|s| s.has_anomaly && !s.has_normal);
        (any_anomaly, pure)
    };

    let mut outcome: BTreeMap<&str, GroupOutcome> = BTreeMap::new();
    let mut cosines: BTreeMap<&str, f64> = BTreeMap::new();
    let mut candidates: Vec<&str> = Vec::new();
    for (name, ids) in proposal.expert_groups() {
        let (any_anomaly, pure) = signals(ids);
        let o = if !any_anomaly {
            GroupOutcome::DissolvedNoAnomaly
        } else if pure {
            candidates.push(name);
            GroupOutcome::PureAnomaly
        } else {
            GroupOutcome::Mixed
        };
        outcome.insert(name, o);
    }

    // Dissolving a candidate grows the universal pool, which can change the
    // remaining candidates' cosines; repeat until stable so that certifying
    // a certified partition is a fixed point.
    let pool_seed = seed::derive_seed(cfg.seed, "certify.pool_sample");
    loop {
        let live: Vec<&str> = candidates
            .iter()
            .copied()
            .filter(|n| outcome[n] == GroupOutcome::PureAnomaly)
            .collect();
        if live.is_empty() {
            break;
        }
        let kept: BTreeSet<EventId> = proposal
            .expert_groups()
            .filter(|(n, _)| matches!(outcome[n.as_str()], GroupOutcome::Mixed | GroupOutcome::PureAnomaly))
            .flat_map(|(_, ids)| ids.iter().copied())
            .collect();
        let universal_pool: Vec<usize> = pool
            .indices
            .iter()
            .copied()
            .filter(|&i| records[i].event_id.is_some_and(|e| !kept.contains(&e)))
            .collect();
        let take = cfg.pool_sample_size.min(universal_pool.len());
        let mut picked: Vec<usize> = index::sample(&mut seed::rng(pool_seed), universal_pool.len(), take)
            .into_iter()
            .map(|j| universal_pool[j])
            .collect();
        picked.sort_unstable();

        let pool_docs: Vec<Vec<String>> = picked.iter().map(|&i| tokenize(&records[i].raw)).collect();
        let rep_docs: Vec<Vec<Vec<String>>> = live
            .iter()
            .map(|name| {
                proposal.groups[*name]
                    .iter()
                    .filter_map(|id| sample.get(*id).and_then(|s| s.rep_anomaly))
                    .map(|i| tokenize(&records[i].raw))
                    .collect()
            })
            .collect();
        let all_docs: Vec<&Vec<String>> = pool_docs.iter().chain(rep_docs.iter().flatten()).collect();
        let tfidf = TfIdf::fit(&all_docs.iter().map(|d| d.as_slice()).collect::<Vec<_>>());
        let pool_vecs: Vec<SparseVec> = pool_docs.iter().map(|d| tfidf.transform(d)).collect();
        let pool_centroid = centroid(&pool_vecs);

        let mut changed = false;
        for (name, docs) in live.iter().zip(&rep_docs) {
            let vecs: Vec<SparseVec> = docs.iter().map(|d| tfidf.transform(d)).collect();
            let cos = cosine(&centroid(&vecs), &pool_centroid);
            cosines.insert(name, cos);
            if cos >= cfg.distinctness_threshold {
                outcome.insert(name, GroupOutcome::DissolvedNotDistinct);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut domains = vec![Domain {
        name: UNIVERSAL_NORMAL.to_string(),
        kind: DomainKind::Universal,
    }];
    let mut assignment: BTreeMap<EventId, usize> =
        sample.per_event.keys().map(|id| (*id, CertifiedPartition::UNIVERSAL)).collect();
    let mut decisions = Vec::new();
    for (name, ids) in proposal.expert_groups() {
        let o = outcome[name.as_str()];
        decisions.push(GroupDecision {
            name: name.clone(),
            event_ids: ids.len(),
            outcome: o,
            cosine: cosines.get(name.as_str()).copied(),
        });
        let kind = match o {
            GroupOutcome::Mixed => DomainKind::Mixed,
            GroupOutcome::PureAnomaly => DomainKind::PureAnomaly,
            _ => continue,
        };
        let idx = domains.len();
        domains.push(Domain {
            name: name.clone(),
            kind,
        });
        for id in ids {
            assignment.insert(*id, idx);
        }
    }
    Ok(Certification {
        partition: CertifiedPartition::from_parts(domains, assignment)?,
        decisions,
    })
}
