//! Append-only temporal log: every task, tool call, state change, and
//! escalation lands here with a gapless sequence number. The log is the
//! audit trail for replay and for post-run safety checks.

use crate::ids::Timestamp;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::MemoryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TaskFeedback,
    ToolCall,
    ToolResult,
    StateChange,
    PlanIssued,
    Escalation,
}

/// One log entry. `seq` starts at 1 and has no gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalEvent {
    pub seq: u64,
    pub time: Timestamp,
    pub kind: EventKind,
    /// Who or what the event is about: robot id, subtask id, tool id.
    pub subject: String,
    pub payload: serde_json::Value,
}

/// In-memory event log. Callers needing cross-thread appends wrap it in a
/// mutex; sequence numbers are assigned under that lock.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemporalLog {
    events: Vec<TemporalEvent>,
}

impl TemporalLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(
        &mut self,
        kind: EventKind,
        subject: impl Into<String>,
        payload: serde_json::Value,
        at: Timestamp,
    ) -> u64 {
        let seq = self.events.len() as u64 + 1;
        self.events.push(TemporalEvent {
            seq,
            time: at,
            kind,
            subject: subject.into(),
            payload,
        });
        seq
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[TemporalEvent] {
        &self.events
    }

    /// Last `n` events, oldest first.
    pub fn suffix(&self, n: usize) -> &[TemporalEvent] {
        let start = self.events.len().saturating_sub(n);
        &self.events[start..]
    }

    /// Sequence numbers are 1..=len with no gaps and times never decrease
    /// between consecutive entries.
    pub fn check_integrity(&self) -> Result<(), MemoryError> {
        for (i, event) in self.events.iter().enumerate() {
            if event.seq != i as u64 + 1 {
                return Err(MemoryError::LogGap {
                    expected: i as u64 + 1,
                    found: event.seq,
                });
            }
        }
        for pair in self.events.windows(2) {
            if pair[1].time < pair[0].time {
                return Err(MemoryError::LogTimeRegression {
                    seq: pair[1].seq,
                });
            }
        }
        Ok(())
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), MemoryError> {
        for event in &self.events {
            serde_json::to_writer(&mut out, event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        let file = std::fs::File::create(path)?;
        let mut writer = std::io::BufWriter::new(file);
        self.write_jsonl(&mut writer)?;
        writer.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: std::io::Read>(input: R) -> Result<Self, MemoryError> {
        let reader = BufReader::new(input);
        let mut log = TemporalLog::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            log.events.push(serde_json::from_str(&line)?);
        }
        log.check_integrity()?;
        Ok(log)
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(file)
    }
}
