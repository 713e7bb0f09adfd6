//! Observation records: ingestion, correlation into per-transaction
//! bundles, and completeness checks against a model.

mod completeness;
mod correlate;

use std::fmt;
use std::io::{BufRead, Read};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{Aspect, Micros};

pub use completeness::{completeness_check, expected_set, CompletenessReport, Expected, SourceStats, Surplus, TraceCompleteness};
pub use correlate::{
    correlate, recover_collisions, Collision, CollisionReport, Correlation, CorrelationPolicy, RecoveryOutcome,
    DEFAULT_PREFIX_LEN, DEFAULT_RECOVERY_WINDOW_US,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TidKind {
    Full,
    /// A prefix of the full transaction id.
    Short,
}

/// One measured temporal datum from one source.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub tid: String,
    pub tid_kind: TidKind,
    pub activity: String,
    #[serde(default)]
    pub replica: Option<String>,
    pub aspect: Aspect,
    pub value_us: Micros,
    pub source: String,
    pub captured_us: Micros,
}

/// All records that share one transaction id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceBundle {
    pub trace_id: String,
    pub records: Vec<ObservationRecord>,
    /// Set when the bundle was involved in a shortened-id collision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambiguity: Option<String>,
    /// Keyed by a short id because no full id was ever seen.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unanchored: bool,
    /// Records assigned by the proximity recovery pass.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub recovered: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl TraceBundle {
    pub fn new(trace_id: impl Into<String>) -> Self {
        TraceBundle {
            trace_id: trace_id.into(),
            records: Vec::new(),
            ambiguity: None,
            unanchored: false,
            recovered: 0,
        }
    }

    pub fn capture_span(&self) -> Option<(Micros, Micros)> {
        let lo = self.records.iter().map(|r| r.captured_us).min()?;
        let hi = self.records.iter().map(|r| r.captured_us).max()?;
        Some((lo, hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl FromStr for Format {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(TraceError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Jsonl => "jsonl",
            Format::Csv => "csv",
        })
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("unknown record format `{0}` (expected jsonl or csv)")]
    UnknownFormat(String),
    #[error("cannot read record stream: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv header: {0}")]
    Header(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line number in the input.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ingested {
    pub records: Vec<ObservationRecord>,
    pub rejects: Vec<Reject>,
}

fn check(r: &ObservationRecord) -> Result<(), String> {
    if r.tid.is_empty() {
        return Err("empty transaction id".into());
    }
    if r.activity.is_empty() {
        return Err("empty activity".into());
    }
    if r.aspect == Aspect::Duration && r.value_us < 0 {
        return Err("negative duration".into());
    }
    Ok(())
}

/// Reads one record per line (JSONL) or row (CSV with header). Lines that
/// do not decode or violate record invariants are returned as rejects.
pub fn ingest(input: impl Read, format: Format) -> Result<Ingested, TraceError> {
    let mut out = Ingested::default();
    match format {
        Format::Jsonl => {
            let reader = std::io::BufReader::new(input);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                let lineno = i as u64 + 1;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<ObservationRecord>(&line) {
                    Ok(r) => match check(&r) {
                        Ok(()) => out.records.push(r),
                        Err(reason) => out.rejects.push(Reject { line: lineno, reason }),
                    },
                    Err(e) => out.rejects.push(Reject {
                        line: lineno,
                        reason: e.to_string(),
                    }),
                }
            }
        }
        Format::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(true)
                .flexible(true)
                .from_reader(input);
            let headers = rdr
                .headers()
                .map_err(|e| TraceError::Header(e.to_string()))?
                .clone();
            for row in rdr.records() {
                let row = match row {
                    Ok(r) => r,
                    Err(e) => {
                        if let csv::ErrorKind::Io(_) = e.kind() {
                            return Err(TraceError::Io(csv_io(e)));
                        }
                        let line = e.position().map(|p| p.line()).unwrap_or(0);
                        out.rejects.push(Reject {
                            line,
                            reason: e.to_string(),
                        });
                        continue;
                    }
                };
                let line = row.position().map(|p| p.line()).unwrap_or(0);
                match row.deserialize::<ObservationRecord>(Some(&headers)) {
                    Ok(r) => match check(&r) {
                        Ok(()) => out.records.push(r),
                        Err(reason) => out.rejects.push(Reject { line, reason }),
                    },
                    Err(e) => out.rejects.push(Reject {
                        line,
                        reason: e.to_string(),
                    }),
                }
            }
        }
    }
    Ok(out)
}

fn csv_io(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => std::io::Error::other(format!("{other:?}")),
    }
}

/// Writes records as JSON lines.
pub fn write_jsonl(mut out: impl std::io::Write, records: &[ObservationRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes records as CSV with a header row.
pub fn write_csv(out: impl std::io::Write, records: &[ObservationRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"tid":"abc","tid_kind":"full","activity":"A","replica":null,"aspect":"begin","value_us":10,"source":"client","captured_us":10}"#;

    #[test]
    fn jsonl_lines_become_records() {
        let text = format!("{LINE}\n{LINE}\n\n{LINE}\n");
        let got = ingest(text.as_bytes(), Format::Jsonl).unwrap();
        assert_eq!(got.records.len(), 3);
        assert!(got.rejects.is_empty());
    }

    #[test]
    fn negative_duration_is_rejected() {
        let bad = LINE.replace("\"begin\"", "\"duration\"").replace("10,", "-5,");
        let text = format!("{LINE}\n{bad}\nnot json\n");
        let got = ingest(text.as_bytes(), Format::Jsonl).unwrap();
        assert_eq!(got.records.len(), 1);
        assert_eq!(got.rejects[0], Reject { line: 2, reason: "negative duration".into() });
        assert_eq!(got.rejects[1].line, 3);
    }

    #[test]
    fn csv_round_trip() {
        let recs = ingest(format!("{LINE}\n").as_bytes(), Format::Jsonl).unwrap().records;
        let mut buf = Vec::new();
        write_csv(&mut buf, &recs).unwrap();
        let back = ingest(buf.as_slice(), Format::Csv).unwrap();
        assert_eq!(back.records, recs);
        let bad = String::from_utf8(buf).unwrap() + "x,full,A,,begin,oops,s,1\n";
        let got = ingest(bad.as_bytes(), Format::Csv).unwrap();
        assert_eq!(got.rejects.len(), 1);
        assert_eq!(got.rejects[0].line, 3);
    }

    #[test]
    fn unknown_format_tag() {
        assert!(matches!("xml".parse::<Format>(), Err(TraceError::UnknownFormat(_))));
    }
}
