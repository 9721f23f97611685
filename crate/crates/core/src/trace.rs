//! Append-only run trace: one JSON record per line.
//!
//! The trace is the substrate for reports, replays and the determinism
//! checks, so records carry no timestamps or latencies — identical runs
//! must produce byte-identical files.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Phase;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    RunStarted {
        version: u32,
        seed: u64,
        total_timesteps: u32,
        controller: String,
    },
    AgentCall {
        step: u32,
        phase: Phase,
        attempt: u32,
        prompt: String,
        response: String,
    },
    Selection {
        step: u32,
        action: String,
        objects: Vec<String>,
        retries: u32,
        fallback: bool,
    },
    Trial {
        step: u32,
        action: String,
        objects: Vec<String>,
        scores: Vec<(String, f64)>,
        aggregate: f64,
        produced: String,
    },
    Memory {
        step: u32,
        version: u32,
        text: String,
        truncated: bool,
    },
    Shell {
        step: u32,
        command: String,
        status: i32,
        stdout: String,
        stderr: String,
    },
    RunCompleted {
        steps: u32,
    },
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot open trace file {path}: {source}")]
    Open {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write trace record: {0}")]
    Write(#[from] std::io::Error),
    #[error("bad trace record at line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

/// Line-oriented writer; `sink` is `None` for traceless runs.
pub struct TraceWriter {
    sink: Option<BufWriter<File>>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self, TraceError> {
        let file = File::create(path).map_err(|source| TraceError::Open {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self {
            sink: Some(BufWriter::new(file)),
        })
    }

    /// Open for appending — used when resuming a checkpointed run so the
    /// finished file matches an uninterrupted one.
    pub fn append(path: &Path) -> Result<Self, TraceError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| TraceError::Open {
                path: path.display().to_string(),
                source,
            })?;
        Ok(Self {
            sink: Some(BufWriter::new(file)),
        })
    }

    pub fn disabled() -> Self {
        Self { sink: None }
    }

    pub fn write(&mut self, event: &TraceEvent) -> Result<(), TraceError> {
        if let Some(sink) = &mut self.sink {
            serde_json::to_writer(&mut *sink, event).map_err(std::io::Error::other)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        Ok(())
    }
}

/// Read a whole trace file back into events.
pub fn read_trace(path: &Path) -> Result<Vec<TraceEvent>, TraceError> {
    let file = File::open(path).map_err(|source| TraceError::Open {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut events = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|source| TraceError::Parse {
            line: index + 1,
            source,
        })?;
        events.push(event);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_round_trip_line_by_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let events = vec![
            TraceEvent::RunStarted {
                version: TRACE_VERSION,
                seed: 42,
                total_timesteps: 3,
                controller: "scripted".into(),
            },
            TraceEvent::AgentCall {
                step: 1,
                phase: Phase::TypeSelection,
                attempt: 0,
                prompt: "p".into(),
                response: "0".into(),
            },
            TraceEvent::Trial {
                step: 1,
                action: "sft".into(),
                objects: vec!["base".into(), "d".into()],
                scores: vec![("t".into(), 0.5)],
                aggregate: 0.5,
                produced: "0--1--0".into(),
            },
            TraceEvent::RunCompleted { steps: 1 },
        ];
        let mut writer = TraceWriter::create(&path).unwrap();
        for e in &events {
            writer.write(e).unwrap();
        }
        drop(writer);
        assert_eq!(read_trace(&path).unwrap(), events);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().all(|l| l.starts_with("{\"event\":")));
    }

    #[test]
    fn append_extends_an_existing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        TraceWriter::create(&path)
            .unwrap()
            .write(&TraceEvent::RunCompleted { steps: 1 })
            .unwrap();
        TraceWriter::append(&path)
            .unwrap()
            .write(&TraceEvent::RunCompleted { steps: 2 })
            .unwrap();
        assert_eq!(read_trace(&path).unwrap().len(), 2);
    }
}
