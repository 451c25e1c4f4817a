//! Labeled log corpora: ingestion and the chronological offline/test split.
//!
//! Two input layouts are supported. `loghub_labeled` is the public BGL /
//! Thunderbird layout where the first whitespace-delimited token of each line
//! is the alert tag (`-` for normal, anything else for anomaly); the tag is
//! stripped from the message so it can never leak into features. `jsonl`
//! carries one `{"label": 0|1|null, "msg": "..."}` object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::drain::EventId;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomaly,
    Unlabeled,
}

impl Label {
    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }

    pub fn is_anomaly(self) -> bool {
        self == Label::Anomaly
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogRecord {
    /// 0-based line position in the source file; the proxy for time.
    pub ordinal: u64,
    pub label: Label,
    pub raw: String,
    pub event_id: Option<EventId>,
}

impl LogRecord {
    pub fn new(ordinal: u64, label: Label, raw: impl Into<String>) -> Self {
        LogRecord {
            ordinal,
            label,
            raw: raw.into(),
            event_id: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    LoghubLabeled,
    Jsonl,
    /// Unlabeled raw messages, one per line (deployment streams).
    Raw,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loghub_labeled" | "loghub" => Ok(InputFormat::LoghubLabeled),
            "jsonl" => Ok(InputFormat::Jsonl),
            "raw" => Ok(InputFormat::Raw),
            other => Err(Error::InvalidArgument(format!("unknown input format `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub records: Vec<LogRecord>,
    /// Lines dropped because they carried no tokens.
    pub skipped: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    label: Option<u8>,
    msg: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ordinal: Option<u64>,
}

/// Splits a loghub line into its alert-tag label and the remaining message.
pub fn parse_loghub_line(line: &str) -> Option<(Label, &str)> {
    let trimmed = line.trim_start();
    let tag_end = trimmed.find(char::is_whitespace).unwrap_or(trimmed.len());
    let tag = &trimmed[..tag_end];
    if tag.is_empty() {
        return None;
    }
    let label = if tag == "-" { Label::Normal } else { Label::Anomaly };
    Some((label, trimmed[tag_end..].trim_start()))
}

fn parse_jsonl_line(line: &str, line_no: u64) -> Result<Option<LogRecord>> {
    if line.trim().is_empty() {
        return Ok(None);
    }
    let rec: JsonlRecord = serde_json::from_str(line)?;
    let label = match rec.label {
        None => Label::Unlabeled,
        Some(0) => Label::Normal,
        Some(1) => Label::Anomaly,
        Some(other) => {
            return Err(Error::InvalidArgument(format!(
                "line {line_no}: label must be 0, 1 or null, got {other}"
            )))
        }
    };
    Ok(Some(LogRecord::new(rec.ordinal.unwrap_or(line_no), label, rec.msg)))
}

/// Parses one input line. `None` means the line carries no message.
pub fn parse_record(line: &str, ordinal: u64, format: InputFormat) -> Result<Option<LogRecord>> {
    Ok(match format {
        InputFormat::LoghubLabeled => parse_loghub_line(line).map(|(label, raw)| LogRecord::new(ordinal, label, raw)),
        InputFormat::Jsonl => parse_jsonl_line(line, ordinal)?,
        InputFormat::Raw => (!line.trim().is_empty()).then(|| LogRecord::new(ordinal, Label::Unlabeled, line.trim_start())),
    })
}

pub fn ingest_reader<R: BufRead>(reader: R, format: InputFormat) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut seen_any = false;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        seen_any = true;
        match parse_record(line, line_no as u64, format)? {
            Some(r) => {
                if let Some(prev) = corpus.records.last() {
                    if r.ordinal <= prev.ordinal {
                        return Err(Error::InvalidArgument(format!(
                            "ordinals must strictly increase (line {line_no})"
                        )));
                    }
                }
                corpus.records.push(r)
            }
            None => corpus.skipped += 1,
        }
    }
    if !seen_any {
        return Err(Error::Empty("corpus file has no lines".into()));
    }
    if corpus.skipped > 0 {
        log::warn!("skipped {} malformed line(s) without tokens", corpus.skipped);
    }
    Ok(corpus)
}

pub fn ingest(path: impl AsRef<Path>, format: InputFormat) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(BufReader::new(file), format).map_err(|e| match e {
        Error::Stream(source) => Error::io(path, source),
        other => other,
    })
}

/// Writes records as jsonl, keeping ordinals so that a re-ingest is exact.
pub fn write_jsonl<W: Write>(records: &[LogRecord], mut out: W) -> Result<()> {
    for r in records {
        let rec = JsonlRecord {
            label: match r.label {
                Label::Normal => Some(0),
                Label::Anomaly => Some(1),
                Label::Unlabeled => None,
            },
            msg: r.raw.clone(),
            ordinal: Some(r.ordinal),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub offline: Range<usize>,
    pub test: Range<usize>,
    pub offline_fraction: f64,
}

/// Chronological split: the first `floor(n * fraction)` records are offline.
pub fn split_chronological(n: usize, offline_fraction: f64) -> Result<CorpusSplit> {
    if !(offline_fraction > 0.0 && offline_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "offline_fraction must lie in (0, 1), got {offline_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 records to split, got {n}"
        )));
    }
    let cut = (n as f64 * offline_fraction).floor() as usize;
    Ok(CorpusSplit {
        offline: 0..cut,
        test: cut..n,
        offline_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ingest_str(s: &str, format: InputFormat) -> Result<Corpus> {
        ingest_reader(s.as_bytes(), format)
    }

    #[test]
    fn loghub_tags() {
        let c = ingest_str(
            "- 1117838570 2005.06.03 instruction cache parity error corrected\n\
             KERNDTLB 1117838573 data TLB error interrupt\n",
            InputFormat::LoghubLabeled,
        )
        .unwrap();
        assert_eq!(c.records[0].label, Label::Normal);
        assert_eq!(
            c.records[0].raw,
            "1117838570 2005.06.03 instruction cache parity error corrected"
        );
        assert_eq!(c.records[1].label, Label::Anomaly);
        assert_eq!(c.records[1].raw, "1117838573 data TLB error interrupt");
        assert_eq!(c.records[1].ordinal, 1);
    }

    #[test]
    fn jsonl_schema() {
        let c = ingest_str(
            "{\"label\":1,\"msg\":\"m\"}\n{\"label\":null,\"msg\":\"x\"}\n{\"label\":0,\"msg\":\"y\"}\n",
            InputFormat::Jsonl,
        )
        .unwrap();
        assert_eq!(c.records[0].label, Label::Anomaly);
        assert_eq!(c.records[0].raw, "m");
        assert_eq!(c.records[1].label, Label::Unlabeled);
        assert_eq!(c.records[2].label, Label::Normal);
        assert!(ingest_str("{\"label\":2,\"msg\":\"m\"}\n", InputFormat::Jsonl).is_err());
        assert!(ingest_str("not json\n", InputFormat::Jsonl).is_err());
    }

    #[test]
    fn empty_and_blank_lines() {
        assert!(matches!(ingest_str("", InputFormat::LoghubLabeled), Err(Error::Empty(_))));
        let c = ingest_str("- a\n   \n\nX b\n", InputFormat::LoghubLabeled).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.skipped, 2);
        assert_eq!(c.records[1].ordinal, 3);
    }

    #[test]
    fn split_examples() {
        let s = split_chronological(100, 0.85).unwrap();
        assert_eq!((s.offline, s.test), (0..85, 85..100));
        let s = split_chronological(4_747_963, 0.85).unwrap();
        assert_eq!(s.test.len(), 712_195);
        assert_eq!(split_chronological(10, 0.5).unwrap().offline, 0..5);
        assert!(split_chronological(1, 0.5).is_err());
        assert!(split_chronological(10, 1.0).is_err());
        assert!(split_chronological(10, 0.0).is_err());
    }

    fn arb_record_text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9:_.]{1,8}( [a-zA-Z0-9:_.\\-]{1,8}){0,6}"
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(lines in prop::collection::vec((any::<bool>(), arb_record_text()), 1..40)) {
            let text: String = lines
                .iter()
                .map(|(anom, msg)| format!("{} {}\n", if *anom { "FATAL" } else { "-" }, msg))
                .collect();
            let c = ingest_str(&text, InputFormat::LoghubLabeled).unwrap();
            let mut buf = Vec::new();
            write_jsonl(&c.records, &mut buf).unwrap();
            let again = ingest_reader(buf.as_slice(), InputFormat::Jsonl).unwrap();
            prop_assert_eq!(&c.records, &again.records);
        }

        #[test]
        fn label_token_stripped(tag in "[A-Z]{3,9}", msg in arb_record_text()) {
            let line = format!("{tag} {msg}");
            let (label, raw) = parse_loghub_line(&line).unwrap();
            prop_assert_eq!(label, Label::Anomaly);
            prop_assert_eq!(raw, msg.as_str());
            let prefixed = format!("{} ", tag);
            let ok = !raw.starts_with(&prefixed) || msg.starts_with(&tag);
            prop_assert!(ok);
        }

        #[test]
        fn split_covers(n in 2usize..100_000, frac in 0.01f64..0.99) {
            let s = split_chronological(n, frac).unwrap();
            prop_assert_eq!(s.offline.start, 0);
            prop_assert_eq!(s.offline.end, s.test.start);
            prop_assert_eq!(s.test.end, n);
            prop_assert_eq!(s.clone(), split_chronological(n, frac).unwrap());
        }
    }
}
