//! Append-only simulation log, exportable as JSON lines.

use std::io::Write;

use serde::Serialize;

use crate::scenario::PriorityClass;
use crate::sim::event::EventKind;
use crate::sim::{LotId, MachineId};
use crate::Minutes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    /// Nothing recorded; fastest, used by training rollouts.
    Off,
    /// Decisions, operations, completions, skips and violations.
    #[default]
    Standard,
    /// Standard plus every popped event.
    Events,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    Release { t: Minutes, lot: LotId, product: usize, priority: PriorityClass },
    Decision { t: Minutes, order: Vec<LotId> },
    OpStart { t: Minutes, machine: MachineId, lots: Vec<LotId>, step: usize, end: Minutes },
    OpEnd { t: Minutes, machine: MachineId },
    LotDone { t: Minutes, lot: LotId, on_time: bool },
    Skip { t: Minutes, lot: LotId, step: usize },
    CqtViolation { t: Minutes, lot: LotId, step: usize, late_by: Minutes },
    Event { t: Minutes, event: EventKind },
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub level: TraceLevel,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(level: TraceLevel) -> Self {
        Self { level, records: Vec::new() }
    }

    #[inline]
    pub fn enabled(&self) -> bool {
        self.level >= TraceLevel::Standard
    }

    #[inline]
    pub fn push(&mut self, rec: TraceRecord) {
        if self.enabled() {
            self.records.push(rec);
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
