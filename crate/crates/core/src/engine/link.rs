//! Point-to-point links and the per-direction serializer.
//!
//! A [`Transmitter`] serves one direction of a link. Interfering traffic
//! bound to that direction has strict (non-preemptive) priority over
//! everything the simulator queues itself: a packet may start only once
//! every interference packet that arrived before its start has been served.

use super::packet::NodeId;
use super::time::{serialization_time, SimTime};
use crate::traffic::InterferenceGenerator;

/// Width of the buckets used to record realized interference load.
pub const LOAD_BIN: SimTime = SimTime::from_millis(1);

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub capacity_bps: u64,
    pub prop_delay: SimTime,
    pub endpoints: (NodeId, NodeId),
}

impl Link {
    pub fn serialization(&self, bits: u32) -> SimTime {
        serialization_time(bits as u64, self.capacity_bps)
    }

    /// Arrival time at the far end of a packet that starts serializing at
    /// `depart` on an otherwise idle link.
    pub fn transmit(&self, size_bits: u32, depart: SimTime) -> SimTime {
        depart + self.serialization(size_bits) + self.prop_delay
    }
}

pub struct Transmitter {
    link: Link,
    busy_until: SimTime,
    interference: Option<InterferenceGenerator>,
    interference_ser: SimTime,
    interference_bits: u32,
    // realized interference bits per LOAD_BIN, indexed by arrival bin
    load_bins: Vec<u64>,
}

impl Transmitter {
    pub fn new(link: Link, interference: Option<InterferenceGenerator>) -> Self {
        let bits = interference.as_ref().map_or(0, |g| g.packet_bits());
        let interference_ser = if bits > 0 {
            link.serialization(bits)
        } else {
            SimTime::ZERO
        };
        Self {
            link,
            busy_until: SimTime::ZERO,
            interference,
            interference_ser,
            interference_bits: bits,
            load_bins: Vec::new(),
        }
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }

    /// Serves every interference packet arriving at or before `t`.
    pub fn absorb_until(&mut self, t: SimTime) {
        let Some(gen) = self.interference.as_mut() else {
            return;
        };
        while let Some(a) = gen.peek() {
            if a > t {
                break;
            }
            gen.advance();
            self.busy_until = self.busy_until.max(a) + self.interference_ser;
            let bin = (a.as_nanos() / LOAD_BIN.as_nanos()) as usize;
            if self.load_bins.len() <= bin {
                self.load_bins.resize(bin + 1, 0);
            }
            self.load_bins[bin] += self.interference_bits as u64;
        }
    }

    /// Reserves the link for a packet of `bits` offered at `now`. Returns
    /// `(start, done)`; the packet reaches the far end at `done + prop_delay`.
    pub fn reserve(&mut self, now: SimTime, bits: u32) -> (SimTime, SimTime) {
        let mut start = now.max(self.busy_until);
        loop {
            self.absorb_until(start);
            if self.busy_until <= start {
                break;
            }
            start = self.busy_until;
        }
        let done = start + self.link.serialization(bits);
        self.busy_until = done;
        (start, done)
    }

    /// Realized interference bits arriving in `[from, to)`. Both bounds are
    /// rounded down to whole load bins, and the caller must already have
    /// absorbed interference up to `to`.
    pub fn interference_bits(&self, from: SimTime, to: SimTime) -> u64 {
        let a = (from.as_nanos() / LOAD_BIN.as_nanos()) as usize;
        let b = (to.as_nanos() / LOAD_BIN.as_nanos()) as usize;
        let hi = b.min(self.load_bins.len());
        if a >= hi {
            return 0;
        }
        self.load_bins[a..hi].iter().sum()
    }

    pub fn has_interference(&self) -> bool {
        self.interference.is_some()
    }
}
