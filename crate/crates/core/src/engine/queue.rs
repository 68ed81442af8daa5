//! Per-connection FIFO with priority discard on overflow.

use std::collections::VecDeque;

use super::packet::Packet;

#[derive(Debug, PartialEq)]
pub enum EnqueueOutcome {
    Accepted,
    DroppedIncoming(Packet),
    /// The incoming packet was admitted in place of this buffered one.
    DroppedOther(Packet),
}

#[derive(Debug)]
pub struct PriorityQueue {
    max_packets: usize,
    q: VecDeque<Packet>,
    // buffered packets per layer index
    per_layer: Vec<u32>,
}

impl PriorityQueue {
    pub fn new(max_packets: usize) -> Self {
        assert!(max_packets > 0, "queue capacity must be positive");
        Self {
            max_packets,
            q: VecDeque::with_capacity(max_packets.min(1024)),
            per_layer: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.max_packets
    }

    pub fn front(&self) -> Option<&Packet> {
        self.q.front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.q.iter()
    }

    /// Numerically largest (lowest-priority) layer currently buffered.
    pub fn max_layer(&self) -> Option<u8> {
        self.per_layer
            .iter()
            .rposition(|&c| c > 0)
            .map(|l| l as u8)
    }

    fn count(&mut self, layer: u8, delta: i32) {
        let idx = layer as usize;
        if self.per_layer.len() <= idx {
            self.per_layer.resize(idx + 1, 0);
        }
        let c = &mut self.per_layer[idx];
        *c = (*c as i64 + delta as i64) as u32;
    }

    pub fn enqueue(&mut self, pkt: Packet) -> EnqueueOutcome {
        assert!(
            pkt.is_video(),
            "{:?} packet offered to a video queue",
            pkt.kind
        );
        if self.q.len() < self.max_packets {
            self.count(pkt.layer, 1);
            self.q.push_back(pkt);
            return EnqueueOutcome::Accepted;
        }
        let buffered_max = self.max_layer().unwrap_or(0);
        if pkt.layer >= buffered_max {
            return EnqueueOutcome::DroppedIncoming(pkt);
        }
        // newest buffered packet of the lowest-priority layer
        let idx = self
            .q
            .iter()
            .rposition(|p| p.layer == buffered_max)
            .expect("layer count out of sync with queue contents");
        let victim = self.q.remove(idx).expect("index in range");
        self.count(victim.layer, -1);
        self.count(pkt.layer, 1);
        self.q.push_back(pkt);
        EnqueueOutcome::DroppedOther(victim)
    }

    pub fn dequeue(&mut self) -> Option<Packet> {
        let p = self.q.pop_front()?;
        self.count(p.layer, -1);
        Some(p)
    }
}
