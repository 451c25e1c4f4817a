//! Fixed-depth prefix-tree template miner (Drain).
//!
//! Lines are bucketed by token count, then descended through the leading
//! `tree_depth - 3` tokens (never the last one) to a leaf holding candidate
//! templates. The depth counts the root, the length layer and the leaves, as
//! in Drain3, so the default depth 4 branches on the first token. The best
//! candidate by positional similarity absorbs the line when it reaches the
//! similarity threshold (differing positions become `<*>`); otherwise the
//! line starts a new template.
//!
//! ```text
//!            root
//!             |
//!        length = 6          (bucket by token count)
//!             |
//!          "ciod:"           (first token)
//!             |
//!   [ciod: error <*> on node <*>]   (leaf templates)
//! ```
//!
//! Mining happens on a [`DrainParser`]; [`DrainParser::freeze`] turns it into
//! an immutable [`TemplateTable`] whose [`TemplateTable::match_only`] never
//! creates templates and can be shared across threads.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use xxhash_rust::xxh3::Xxh3;

use crate::corpus::LogRecord;
use crate::error::{Error, Result};

pub const WILDCARD: &str = "<*>";

/// Content hash of a final template token sequence.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(pub u64);

impl EventId {
    pub fn of_template<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut h = Xxh3::new();
        for t in tokens {
            let t = t.as_ref().as_bytes();
            h.update(&(t.len() as u32).to_le_bytes());
            h.update(t);
        }
        EventId(h.digest())
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl fmt::Debug for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EventId({self})")
    }
}

impl FromStr for EventId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        u64::from_str_radix(s, 16)
            .map(EventId)
            .map_err(|_| Error::InvalidArgument(format!("malformed event id `{s}`")))
    }
}

impl Serialize for EventId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EventId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrainConfig {
    pub similarity_threshold: f64,
    pub tree_depth: usize,
    pub max_children: usize,
}

impl Default for DrainConfig {
    fn default() -> Self {
        DrainConfig {
            similarity_threshold: 0.5,
            tree_depth: 4,
            max_children: 100,
        }
    }
}

impl DrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "drain similarity_threshold must lie in (0, 1], got {}",
                self.similarity_threshold
            )));
        }
        if self.tree_depth < 2 {
            return Err(Error::Config(format!(
                "drain tree_depth must be at least 2, got {}",
                self.tree_depth
            )));
        }
        if self.max_children < 2 {
            return Err(Error::Config("drain max_children must be at least 2".into()));
        }
        Ok(())
    }

    /// Token levels between the length bucket and the leaves for a line of
    /// `len` tokens. The depth counts the root, the length layer and the leaf
    /// layer, and the last token of a line never selects a branch.
    fn prefix_levels(&self, len: usize) -> usize {
        self.tree_depth.saturating_sub(3).min(len.saturating_sub(1))
    }
}

/// Whitespace tokenization with digit-bearing tokens pre-masked to `<*>`.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split_whitespace()
        .map(|t| {
            if t.bytes().any(|b| b.is_ascii_digit()) {
                WILDCARD.to_string()
            } else {
                t.to_string()
            }
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Node {
    children: BTreeMap<String, Node>,
    clusters: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
struct Cluster {
    tokens: Vec<String>,
    count: u64,
}

#[derive(PartialEq, PartialOrd)]
struct Similarity {
    /// Fraction of positions where the template token is `<*>` or equal.
    ratio: f64,
    literal_matches: usize,
}

fn similarity(template: &[String], tokens: &[String]) -> Similarity {
    debug_assert_eq!(template.len(), tokens.len());
    let mut matched = 0;
    let mut literal = 0;
    for (a, b) in template.iter().zip(tokens) {
        if a == WILDCARD {
            matched += 1;
        } else if a == b {
            matched += 1;
            literal += 1;
        }
    }
    let ratio = if tokens.is_empty() {
        1.0
    } else {
        matched as f64 / tokens.len() as f64
    };
    Similarity {
        ratio,
        literal_matches: literal,
    }
}

/// Best candidate: highest ratio, then most literal matches, then oldest.
fn best_match(clusters: &[Cluster], candidates: &[usize], tokens: &[String], threshold: f64) -> Option<usize> {
    let mut best: Option<(usize, Similarity)> = None;
    for &idx in candidates {
        let sim = similarity(&clusters[idx].tokens, tokens);
        let better = match &best {
            None => true,
            Some((_, b)) => sim > *b,
        };
        if better {
            best = Some((idx, sim));
        }
    }
    best.filter(|(_, s)| s.ratio >= threshold).map(|(i, _)| i)
}

/// Mutable template miner.
#[derive(Clone, Debug)]
pub struct DrainParser {
    config: DrainConfig,
    roots: BTreeMap<usize, Node>,
    clusters: Vec<Cluster>,
}

impl DrainParser {
    pub fn new(config: DrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(DrainParser {
            config,
            roots: BTreeMap::new(),
            clusters: Vec::new(),
        })
    }

    pub fn config(&self) -> &DrainConfig {
        &self.config
    }

    pub fn template_count(&self) -> usize {
        self.clusters.len()
    }

    /// Parses one line and returns the EventID of its current template.
    pub fn parse_line(&mut self, raw: &str) -> EventId {
        let idx = self.add_tokens(tokenize(raw));
        EventId::of_template(&self.clusters[idx].tokens)
    }

    pub fn template_of(&self, id: EventId) -> Option<&[String]> {
        self.clusters
            .iter()
            .find(|c| EventId::of_template(&c.tokens) == id)
            .map(|c| c.tokens.as_slice())
    }

    fn add_tokens(&mut self, tokens: Vec<String>) -> usize {
        let levels = self.config.prefix_levels(tokens.len());
        let max_children = self.config.max_children;
        let mut node = self.roots.entry(tokens.len()).or_default();
        for tok in &tokens[..levels] {
            node = descend_or_create(node, tok, max_children);
        }
        let leaf = node;
        let threshold = self.config.similarity_threshold;
        match best_match(&self.clusters, &leaf.clusters, &tokens, threshold) {
            Some(idx) => {
                let cluster = &mut self.clusters[idx];
                for (t, new) in cluster.tokens.iter_mut().zip(&tokens) {
                    if t != new && t != WILDCARD {
                        *t = WILDCARD.to_string();
                    }
                }
                cluster.count += 1;
                idx
            }
            None => {
                let idx = self.clusters.len();
                self.clusters.push(Cluster { tokens, count: 1 });
                leaf.clusters.push(idx);
                idx
            }
        }
    }

    /// Freezes the miner. Clusters that converged to identical templates
    /// share one EventID.
    pub fn freeze(self) -> TemplateTable {
        let ids: Vec<EventId> = self.clusters.iter().map(|c| EventId::of_template(&c.tokens)).collect();
        let mut entries: Vec<TemplateEntry> = Vec::new();
        let mut position: BTreeMap<EventId, usize> = BTreeMap::new();
        for (cluster, &id) in self.clusters.iter().zip(&ids) {
            match position.get(&id) {
                Some(&p) => entries[p].count += cluster.count,
                None => {
                    position.insert(id, entries.len());
                    entries.push(TemplateEntry {
                        event_id: id,
                        template: cluster.tokens.clone(),
                        count: cluster.count,
                    });
                }
            }
        }
        TemplateTable {
            config: self.config,
            roots: self.roots,
            clusters: self.clusters,
            ids,
            entries,
            position,
        }
    }
}

fn descend_or_create<'a>(node: &'a mut Node, tok: &str, max_children: usize) -> &'a mut Node {
    let key = if node.children.contains_key(tok) {
        tok
    } else if tok == WILDCARD {
        WILDCARD
    } else {
        let has_wild = node.children.contains_key(WILDCARD);
        let n = node.children.len();
        if has_wild {
            if n < max_children {
                tok
            } else {
                WILDCARD
            }
        } else if n + 1 < max_children {
            tok
        } else {
            WILDCARD
        }
    };
    node.children.entry(key.to_string()).or_default()
}

fn descend<'a>(node: &'a Node, tok: &str) -> Option<&'a Node> {
    node.children.get(tok).or_else(|| node.children.get(WILDCARD))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub event_id: EventId,
    pub template: Vec<String>,
    pub count: u64,
}

/// Frozen template table; immutable and `Sync`.
#[derive(Clone, Debug)]
pub struct TemplateTable {
    config: DrainConfig,
    roots: BTreeMap<usize, Node>,
    clusters: Vec<Cluster>,
    ids: Vec<EventId>,
    entries: Vec<TemplateEntry>,
    position: BTreeMap<EventId, usize>,
}

impl TemplateTable {
    pub fn config(&self) -> &DrainConfig {
        &self.config
    }

    /// Templates in order of first appearance.
    pub fn entries(&self) -> &[TemplateEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: EventId) -> Option<&TemplateEntry> {
        self.position.get(&id).map(|&p| &self.entries[p])
    }

    pub fn contains(&self, id: EventId) -> bool {
        self.position.contains_key(&id)
    }

    pub fn total_count(&self) -> u64 {
        self.entries.iter().map(|e| e.count).sum()
    }

    /// Same descent and similarity rule as mining, without creating anything.
    pub fn match_only(&self, raw: &str) -> Option<EventId> {
        self.match_tokens(&tokenize(raw))
    }

    pub fn match_tokens(&self, tokens: &[String]) -> Option<EventId> {
        let levels = self.config.prefix_levels(tokens.len());
        let mut node = self.roots.get(&tokens.len())?;
        for tok in &tokens[..levels] {
            node = descend(node, tok)?;
        }
        best_match(&self.clusters, &node.clusters, tokens, self.config.similarity_threshold)
            .map(|idx| self.ids[idx])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.entries)?)
    }
}

/// Mines templates over `records` in order and fills every `event_id`.
pub fn parse_records(records: &mut [LogRecord], config: &DrainConfig) -> Result<TemplateTable> {
    let mut parser = DrainParser::new(config.clone())?;
    let assigned: Vec<usize> = records
        .iter()
        .map(|r| parser.add_tokens(tokenize(&r.raw)))
        .collect();
    let table = parser.freeze();
    for (record, idx) in records.iter_mut().zip(assigned) {
        record.event_id = Some(table.ids[idx]);
    }
    Ok(table)
}
