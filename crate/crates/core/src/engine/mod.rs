//! Discrete-event core: clock, event queue, links and video queues.

mod event;
mod link;
mod packet;
mod queue;
mod time;

pub use event::EventQueue;
pub use link::{Link, Transmitter, LOAD_BIN};
pub use packet::{ConnId, NodeId, Packet, PacketKind, Payload, CELL_BITS};
pub use queue::{EnqueueOutcome, PriorityQueue};
pub use time::{serialization_time, SimTime};
