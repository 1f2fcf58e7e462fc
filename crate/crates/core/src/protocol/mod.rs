//! Routing protocols driven by the simulation engine.

mod baselines;
mod rmrls;

pub use baselines::{RandomNextHop, Sfr};
pub use rmrls::{Rmrls, RoutingTableEntry};

use crate::model::NodeId;
use crate::sim::config::ProtocolKind;
use crate::sim::engine::{DataPacket, Message, Net};

/// Protocol timers, delivered through [`Protocol::on_timer`].
#[derive(Debug, Clone, PartialEq)]
pub enum Timer {
    /// Candidate collection at `node` is over.
    DiscoveryDone { node: NodeId, nonce: u64 },
    /// The sink stops collecting paths for a request.
    NcWindow { source: NodeId, request: u32 },
    /// A source gives up waiting for a route reply.
    RouteTimeout { source: NodeId, request: u32 },
    /// End-to-end acknowledgement deadline of a data packet.
    AckTimeout { source: NodeId, seq: u32, generation: u64 },
    /// An end-to-end acknowledgement reached its source.
    AckArrived { source: NodeId, seq: u32 },
    /// A flooded packet reaches `node`.
    Flood { node: NodeId, packet: DataPacket },
}

/// Event handlers of a routing protocol.
pub trait Protocol {
    fn kind(&self) -> ProtocolKind;

    /// A source produced a packet.
    fn on_generate(&mut self, net: &mut Net, source: NodeId, packet: DataPacket);

    /// `at` received `msg` from its neighbor `from`.
    fn on_receive(&mut self, net: &mut Net, at: NodeId, from: NodeId, msg: Message);

    /// A unicast from `from` to `to` was not acknowledged.
    fn on_undelivered(&mut self, net: &mut Net, from: NodeId, to: NodeId, msg: Message);

    fn on_timer(&mut self, net: &mut Net, timer: Timer);

    /// Called once after the last event.
    fn on_finish(&mut self, _net: &mut Net) {}
}

pub(crate) fn build(kind: ProtocolKind, net: &Net) -> Box<dyn Protocol> {
    match kind {
        ProtocolKind::Rmrls => Box::new(Rmrls::new(net)),
        ProtocolKind::Sfr => Box::new(Sfr::new(net)),
        ProtocolKind::RandomNextHop => Box::new(RandomNextHop::new(net)),
    }
}
