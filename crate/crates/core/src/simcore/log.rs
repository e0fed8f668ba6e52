use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::metrics::{DelayBreakdown, PowerProfile, RadioState};
use crate::netmodel::NodeId;
use crate::protocol::{FeedbackKind, Variant};

use super::{DropReason, SimError};

/// One line of the event log. `t` is the simulated time at which the
/// record was produced; records appear in processing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Start {
        t: f64,
        seed: u64,
        variant: Variant,
        n_nodes: usize,
        sim_time: f64,
        lifetime_cap: f64,
        initial_energy: f64,
        power: PowerProfile,
    },
    Gen {
        t: f64,
        packet: u64,
        node: NodeId,
    },
    Tx {
        t: f64,
        packet: u64,
        from: NodeId,
        to: NodeId,
    },
    /// Accepted reception of a data packet.
    Rx {
        t: f64,
        packet: u64,
        from: NodeId,
        to: NodeId,
        bits: f64,
        lqi: f64,
        delay: DelayBreakdown,
    },
    Deliver {
        t: f64,
        packet: u64,
    },
    Drop {
        t: f64,
        packet: u64,
        node: NodeId,
        reason: DropReason,
    },
    Energy {
        t: f64,
        node: NodeId,
        state: RadioState,
        seconds: f64,
    },
    Death {
        t: f64,
        node: NodeId,
        at: f64,
    },
    Ack {
        t: f64,
        from: NodeId,
        to: NodeId,
        traffic_index: f64,
        lost: bool,
    },
    AutomatonUpdate {
        t: f64,
        node: NodeId,
        parent: NodeId,
        feedback: FeedbackKind,
        step: Option<f64>,
        probs: Vec<f64>,
    },
    DioRound {
        t: f64,
        max_hop: u32,
        reachable: usize,
    },
    ParentSet {
        t: f64,
        node: NodeId,
        parents: Vec<NodeId>,
        probs: Vec<f64>,
    },
    End {
        t: f64,
        /// Records before this one.
        records: u64,
    },
}

impl LogRecord {
    pub fn time(&self) -> f64 {
        match self {
            LogRecord::Start { t, .. }
            | LogRecord::Gen { t, .. }
            | LogRecord::Tx { t, .. }
            | LogRecord::Rx { t, .. }
            | LogRecord::Deliver { t, .. }
            | LogRecord::Drop { t, .. }
            | LogRecord::Energy { t, .. }
            | LogRecord::Death { t, .. }
            | LogRecord::Ack { t, .. }
            | LogRecord::AutomatonUpdate { t, .. }
            | LogRecord::DioRound { t, .. }
            | LogRecord::ParentSet { t, .. }
            | LogRecord::End { t, .. } => *t,
        }
    }
}

/// Append-only record of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<LogRecord>) -> Self {
        Self { records }
    }

    pub fn push(&mut self, record: LogRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.time() <= record.time()));
        self.records.push(record);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Drops records from `len` on, for simulating a cut-off log.
    pub fn truncate(&mut self, len: usize) {
        self.records.truncate(len);
    }

    /// Newline-delimited JSON, one record per line.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self, SimError> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| SimError::Log(format!("line {}: {e}", i + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line)
                .map_err(|e| SimError::Log(format!("line {}: {e}", i + 1)))?;
            records.push(rec);
        }
        Ok(Self { records })
    }
}
