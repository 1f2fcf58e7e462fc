//! Comparison protocols: selective flooding and random closer-neighbor
//! forwarding.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;

use super::{Protocol, Timer};
use crate::model::NodeId;
use crate::sim::config::{LogDetail, ProtocolKind};
use crate::sim::engine::{DataPacket, FlowTag, Message, Net};
use crate::sim::log::DropReason;
use crate::sim::queue::SimTime;

/// Selective flooding: every node hands each new packet to all qualified
/// neighbors closer to the sink, or straight to the sink when in range.
///
/// A flood completes within microseconds, so each one is resolved in a
/// single pass that visits forwarders in order of their copy's arrival.
/// Outside full logging, a source's last flood is replayed as a batch of
/// debits while no node's eligibility has changed since.
pub struct Sfr {
    /// Whether a node has forwarded the current flood.
    seen: Vec<bool>,
    touched: Vec<NodeId>,
    frontier: BinaryHeap<Reverse<(SimTime, NodeId, u32)>>,
    targets: Vec<NodeId>,
    received: Vec<NodeId>,
    /// Transmissions and receptions per node in the current flood.
    counts: Vec<(u32, u32)>,
    plans: Vec<Option<FloodPlan>>,
    caching: bool,
}

#[derive(Debug, Clone)]
struct FloodPlan {
    epoch: u64,
    bits: u32,
    debits: Vec<(NodeId, f64)>,
    /// Delay and hop count of the first copy at the sink.
    arrival: Option<(SimTime, u32)>,
    last: NodeId,
}

impl Sfr {
    pub fn new(net: &Net) -> Self {
        Self::with_caching(net, true)
    }

    /// Like [`Sfr::new`], optionally without replaying earlier floods.
    pub fn with_caching(net: &Net, caching: bool) -> Self {
        let n = net.topo().len();
        Self {
            seen: vec![false; n],
            touched: Vec::new(),
            frontier: BinaryHeap::new(),
            targets: Vec::new(),
            received: Vec::new(),
            counts: vec![(0, 0); n],
            plans: vec![None; n],
            caching: caching && !net.wants(LogDetail::Full),
        }
    }

    /// Receivers of `node`'s transmissions of a packet.
    pub fn targets(net: &Net, node: NodeId, out: &mut Vec<NodeId>) {
        if net.topo().are_neighbors(node, NodeId::NC) {
            out.clear();
            out.push(NodeId::NC);
        } else {
            net.closer_qualified(node, out);
        }
    }

    fn flood(&mut self, net: &mut Net, packet: DataPacket) {
        let flow = FlowTag::data(packet.source);
        let src = packet.source.index();
        if let Some(plan) = &self.plans[src] {
            if plan.epoch == net.epoch() && plan.bits == packet.bits && net.debit_all(&plan.debits, flow) {
                let (arrival, last) = (plan.arrival, plan.last);
                self.finish(net, packet, arrival, last);
                return;
            }
        }
        let epoch = net.epoch();
        let start = net.now();
        let mut arrival: Option<(SimTime, u32)> = None;
        let mut last = packet.source;
        let mut clean = true;
        self.frontier.push(Reverse((start, packet.source, 0)));
        self.seen[packet.source.index()] = true;
        self.touched.push(packet.source);
        while let Some(Reverse((t, node, hops))) = self.frontier.pop() {
            last = node;
            Self::targets(net, node, &mut self.targets);
            net.transmit_each(node, &self.targets, packet.bits, flow, &mut self.received);
            clean &= self.received.len() == self.targets.len() && net.alive(node);
            self.counts[node.index()].0 += self.targets.len() as u32;
            for &to in &self.received {
                let at = t + net.hop_delay(node, to, packet.bits);
                if to.is_nc() {
                    if arrival.map_or(true, |(a, _)| at < a) {
                        arrival = Some((at, hops + 1));
                    }
                    continue;
                }
                self.counts[to.index()].1 += 1;
                if !self.seen[to.index()] {
                    self.seen[to.index()] = true;
                    self.touched.push(to);
                    self.frontier.push(Reverse((at, to, hops + 1)));
                }
            }
        }
        let arrival = arrival.map(|(at, hops)| (SimTime(at.0 - start.0), hops));
        let store = self.caching && clean && net.epoch() == epoch;
        let (tx, rx) = (net.costs().transmit(packet.bits), net.costs().receive(packet.bits));
        let mut debits = Vec::new();
        for n in self.touched.drain(..) {
            self.seen[n.index()] = false;
            let (t, r) = std::mem::take(&mut self.counts[n.index()]);
            if store {
                debits.push((n, t as f64 * tx + r as f64 * rx));
            }
        }
        self.plans[src] = store.then_some(FloodPlan {
            epoch,
            bits: packet.bits,
            debits,
            arrival,
            last,
        });
        self.finish(net, packet, arrival, last);
    }

    fn finish(&mut self, net: &mut Net, packet: DataPacket, arrival: Option<(SimTime, u32)>, last: NodeId) {
        match arrival {
            Some((delay, hops)) => {
                net.schedule(
                    delay,
                    Timer::Flood {
                        node: NodeId::NC,
                        packet: DataPacket { hops, ..packet },
                    },
                );
            }
            None => {
                net.drop_packet(packet.source, packet.seq, last, DropReason::Void);
            }
        }
    }
}

impl Protocol for Sfr {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Sfr
    }

    fn on_generate(&mut self, net: &mut Net, _source: NodeId, packet: DataPacket) {
        self.flood(net, packet);
    }

    fn on_receive(&mut self, _net: &mut Net, _at: NodeId, _from: NodeId, _msg: Message) {}

    fn on_undelivered(&mut self, _net: &mut Net, _from: NodeId, _to: NodeId, _msg: Message) {}

    fn on_timer(&mut self, net: &mut Net, timer: Timer) {
        if let Timer::Flood { packet, .. } = timer {
            net.deliver(&packet);
        }
    }
}

/// Forwards each packet to one uniformly chosen qualified neighbor closer
/// to the sink, or straight to the sink when in range.
pub struct RandomNextHop {
    scratch: Vec<NodeId>,
}

impl RandomNextHop {
    pub fn new(_net: &Net) -> Self {
        RandomNextHop { scratch: Vec::new() }
    }

    fn forward(&mut self, net: &mut Net, node: NodeId, packet: DataPacket) {
        let next = if net.topo().are_neighbors(node, NodeId::NC) {
            NodeId::NC
        } else {
            net.closer_qualified(node, &mut self.scratch);
            if self.scratch.is_empty() {
                net.drop_packet(packet.source, packet.seq, node, DropReason::Void);
                return;
            }
            self.scratch[net.rng().random_range(0..self.scratch.len())]
        };
        let flow = FlowTag::data(packet.source);
        let (source, seq) = (packet.source, packet.seq);
        if !net.unicast(node, next, Message::Data(packet), flow) {
            net.drop_packet(source, seq, node, DropReason::SourceDead);
        }
    }
}

impl Protocol for RandomNextHop {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::RandomNextHop
    }

    fn on_generate(&mut self, net: &mut Net, source: NodeId, packet: DataPacket) {
        self.forward(net, source, packet);
    }

    fn on_receive(&mut self, net: &mut Net, at: NodeId, _from: NodeId, msg: Message) {
        if let Message::Data(mut packet) = msg {
            packet.hops += 1;
            if at.is_nc() {
                net.deliver(&packet);
            } else {
                self.forward(net, at, packet);
            }
        }
    }

    fn on_undelivered(&mut self, net: &mut Net, from: NodeId, _to: NodeId, msg: Message) {
        if let Message::Data(p) = msg {
            net.drop_packet(p.source, p.seq, from, DropReason::ForwardingFailure);
        }
    }

    fn on_timer(&mut self, _net: &mut Net, _timer: Timer) {}
}
