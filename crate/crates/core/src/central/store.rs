//! On-disk persistence: an append-only line-delimited event log plus a
//! periodic state snapshot.
//!
//! ```text
//! <dir>/events.log      one canonical StateEvent per line
//! <dir>/snapshot.json   CentralState as of some seq (optional)
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::state::{CentralState, StateEvent};
use crate::canonical;

pub const EVENTS_FILE: &str = "events.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn read_event_log(path: &Path) -> Result<Vec<StateEvent>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: StateEvent = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            path: path.to_owned(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if ev.seq != out.len() as u64 + 1 {
            return Err(StoreError::Corrupt {
                path: path.to_owned(),
                line: i + 1,
                reason: format!("expected seq {}, found {}", out.len() + 1, ev.seq),
            });
        }
        out.push(ev);
    }
    Ok(out)
}

pub fn event_lines(events: &[StateEvent]) -> String {
    let mut s = String::new();
    for e in events {
        s.push_str(&canonical::to_canonical_string(e).expect("events serialize"));
        s.push('\n');
    }
    s
}

pub struct StateDir {
    dir: PathBuf,
    log: BufWriter<File>,
}

impl StateDir {
    /// Opens (creating if needed) a state directory and loads what it holds.
    pub fn open(dir: &Path) -> Result<(Self, Option<CentralState>, Vec<StateEvent>), StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let events_path = dir.join(EVENTS_FILE);
        let events = read_event_log(&events_path)?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let snapshot = match fs::read_to_string(&snap_path) {
            Ok(text) => Some(serde_json::from_str::<CentralState>(&text).map_err(|e| StoreError::Corrupt {
                path: snap_path.clone(),
                line: 1,
                reason: e.to_string(),
            })?),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(io_err(&snap_path)(e)),
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&events_path)
            .map_err(io_err(&events_path))?;
        Ok((
            Self {
                dir: dir.to_owned(),
                log: BufWriter::new(file),
            },
            snapshot,
            events,
        ))
    }

    pub fn append(&mut self, events: &[StateEvent]) -> Result<(), StoreError> {
        let path = self.dir.join(EVENTS_FILE);
        self.log
            .write_all(event_lines(events).as_bytes())
            .and_then(|_| self.log.flush())
            .map_err(io_err(&path))
    }

    pub fn write_snapshot(&self, state: &CentralState) -> Result<(), StoreError> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let text = canonical::to_canonical_string(state).expect("state serializes");
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}
