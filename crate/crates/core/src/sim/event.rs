//! Time-ordered event queue with a deterministic tie order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::sim::{LotId, MachineId};
use crate::Minutes;

/// Event payloads. Declaration order is the tie-break rank at equal times:
/// capacity comes back before lots move, lots move before capacity is lost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Repair { machine: MachineId },
    MaintenanceEnd { machine: MachineId },
    OpComplete { machine: MachineId, token: u64 },
    TransportArrival { lot: LotId },
    LotRelease { product: usize },
    BatchTimeout { machine: MachineId, token: u64 },
    Breakdown { machine: MachineId },
    MaintenanceStart { machine: MachineId },
}

impl EventKind {
    pub fn rank(&self) -> u8 {
        match self {
            EventKind::Repair { .. } => 0,
            EventKind::MaintenanceEnd { .. } => 1,
            EventKind::OpComplete { .. } => 2,
            EventKind::TransportArrival { .. } => 3,
            EventKind::LotRelease { .. } => 4,
            EventKind::BatchTimeout { .. } => 5,
            EventKind::Breakdown { .. } => 6,
            EventKind::MaintenanceStart { .. } => 7,
        }
    }

    pub fn entity(&self) -> u64 {
        match *self {
            EventKind::Repair { machine }
            | EventKind::MaintenanceEnd { machine }
            | EventKind::OpComplete { machine, .. }
            | EventKind::BatchTimeout { machine, .. }
            | EventKind::Breakdown { machine }
            | EventKind::MaintenanceStart { machine } => machine as u64,
            EventKind::TransportArrival { lot } => lot,
            EventKind::LotRelease { product } => product as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time: Minutes,
    pub kind: EventKind,
    seq: u64,
}

impl Event {
    fn key(&self) -> (Minutes, u8, u64, u64) {
        (self.time, self.kind.rank(), self.kind.entity(), self.seq)
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse for earliest-first.
        other.key().cmp(&self.key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default, Clone)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&mut self, time: Minutes, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, kind, seq });
    }

    pub fn peek_time(&self) -> Option<Minutes> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_in_time_then_rank_then_entity_order() {
        let mut q = EventQueue::new();
        q.schedule(10, EventKind::Breakdown { machine: 0 });
        q.schedule(5, EventKind::LotRelease { product: 2 });
        q.schedule(10, EventKind::OpComplete { machine: 3, token: 1 });
        q.schedule(10, EventKind::OpComplete { machine: 1, token: 1 });
        q.schedule(5, EventKind::LotRelease { product: 0 });
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| (e.time, e.kind)).collect();
        assert_eq!(
            order,
            vec![
                (5, EventKind::LotRelease { product: 0 }),
                (5, EventKind::LotRelease { product: 2 }),
                (10, EventKind::OpComplete { machine: 1, token: 1 }),
                (10, EventKind::OpComplete { machine: 3, token: 1 }),
                (10, EventKind::Breakdown { machine: 0 }),
            ]
        );
    }

    #[test]
    fn insertion_order_breaks_full_ties() {
        let mut q = EventQueue::new();
        q.schedule(1, EventKind::TransportArrival { lot: 4 });
        q.schedule(1, EventKind::TransportArrival { lot: 4 });
        let a = q.pop().unwrap();
        let b = q.pop().unwrap();
        assert!(a.seq < b.seq);
    }
}
