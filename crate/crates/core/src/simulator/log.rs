//! The simulation event log: one canonical `{"at","kind","payload"}` record
//! per line. The first line is always a `header`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical;
use crate::domain::Millis;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventLogEntry {
    pub at: Millis,
    pub kind: String,
    pub payload: Value,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("log is empty or lacks a header line")]
    MissingHeader,
    #[error("line {line}: time goes backwards ({at} after {prev})")]
    NonMonotone { line: usize, at: Millis, prev: Millis },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    entries: Vec<EventLogEntry>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<P: Serialize>(&mut self, at: Millis, kind: &str, payload: P) {
        debug_assert!(self.entries.last().is_none_or(|e| e.at <= at), "log time regressed at {kind}");
        self.entries.push(EventLogEntry {
            at,
            kind: kind.to_owned(),
            payload: canonical::to_canonical_value(&payload).expect("payload serializes"),
        });
    }

    pub fn entries(&self) -> &[EventLogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&canonical::to_canonical_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parses log text, checking the header and that time never decreases.
pub fn parse_log(text: &str) -> Result<Vec<EventLogEntry>, LogError> {
    let mut out: Vec<EventLogEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let entry: EventLogEntry = serde_json::from_str(line).map_err(|e| LogError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if let Some(prev) = out.last() {
            if entry.at < prev.at {
                return Err(LogError::NonMonotone {
                    line: i + 1,
                    at: entry.at,
                    prev: prev.at,
                });
            }
        }
        out.push(entry);
    }
    match out.first() {
        Some(h) if h.kind == "header" => Ok(out),
        _ => Err(LogError::MissingHeader),
    }
}
