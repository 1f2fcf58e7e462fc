//! Simulator and protocol library for wireless nanosensor networks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod error;
pub mod link;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod sim;
pub mod similarity;
pub mod stability;

pub use error::{Error, Result};
pub use metrics::{MetricsRow, RunMetrics};
pub use model::{MessageKind, NodeId, Position, RoutePath};
pub use sim::config::{LogDetail, ProtocolKind, ScenarioConfig};
pub use sim::engine::{run, run_on, run_with};
pub use sim::log::{EventLog, FlowSummary, LogRecord};
pub use sim::queue::SimTime;
pub use sim::topology::Topology;
