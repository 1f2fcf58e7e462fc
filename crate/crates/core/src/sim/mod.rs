//! Discrete-event simulation of a nanosensor network.

pub mod channel;
pub mod config;
pub mod engine;
pub mod log;
pub mod queue;
pub mod topology;
