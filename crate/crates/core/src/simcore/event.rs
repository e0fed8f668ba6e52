use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::metrics::DelayBreakdown;
use crate::netmodel::NodeId;
use crate::protocol::AckPacket;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    GenPacket { node: NodeId },
    TxStart { node: NodeId },
    RxComplete {
        packet: u64,
        from: NodeId,
        to: NodeId,
        lqi: f64,
        delay: DelayBreakdown,
    },
    AckDelivery { ack: AckPacket },
    DioRound { repair: bool },
    MetricSample,
    EndOfSim,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

// Reversed so the max-heap pops the earliest (time, seq).
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Eq for Event {}

/// Future event list ordered by `(time, seq)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
    last: Option<(f64, u64)>,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&mut self, time: f64, kind: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, seq, kind });
        seq
    }

    pub fn pop(&mut self) -> Option<Event> {
        let ev = self.heap.pop()?;
        if let Some((t, s)) = self.last {
            debug_assert!(
                t < ev.time || (t == ev.time && s < ev.seq),
                "event order violated: ({t}, {s}) then ({}, {})",
                ev.time,
                ev.seq
            );
        }
        self.last = Some((ev.time, ev.seq));
        Some(ev)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
