use crate::credit::CreditFeedback;
use crate::rate::{BwdFeedback, FwdFeedback};

/// Video and interference packets are ATM-cell sized.
pub const CELL_BITS: u32 = 424;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnId(pub u16);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u16);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PacketKind {
    Video,
    RateFwdFb,
    RateBwdFb,
    CreditFb,
    Interference,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    None,
    Fwd(FwdFeedback),
    Bwd(Box<BwdFeedback>),
    Credit(Box<CreditFeedback>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Packet {
    pub kind: PacketKind,
    pub conn: ConnId,
    /// 1 is the base layer (highest priority). Zero for non-video packets.
    pub layer: u8,
    pub seq: u32,
    pub size_bits: u32,
    pub payload: Payload,
}

impl Packet {
    pub fn video(conn: ConnId, layer: u8, seq: u32) -> Self {
        debug_assert!(layer >= 1);
        Packet {
            kind: PacketKind::Video,
            conn,
            layer,
            seq,
            size_bits: CELL_BITS,
            payload: Payload::None,
        }
    }

    pub fn control(conn: ConnId, payload: Payload) -> Self {
        let kind = match payload {
            Payload::Fwd(_) => PacketKind::RateFwdFb,
            Payload::Bwd(_) => PacketKind::RateBwdFb,
            Payload::Credit(_) => PacketKind::CreditFb,
            Payload::None => panic!("control packet without a payload"),
        };
        Packet {
            kind,
            conn,
            layer: 0,
            seq: 0,
            size_bits: CELL_BITS,
            payload,
        }
    }

    pub fn is_video(&self) -> bool {
        self.kind == PacketKind::Video
    }
}
