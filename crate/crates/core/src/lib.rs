//! Discrete-event simulation of layered video multicast over ATM-style
//! networks, with a rate-based and a credit-based layer control mechanism.

pub mod cli;
pub mod credit;
pub mod engine;
pub mod metrics;
pub mod network;
pub mod rate;
pub mod scenario;
pub mod traffic;
pub mod video;
