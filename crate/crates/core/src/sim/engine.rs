//! Event loop, radio and energy bookkeeping shared by every protocol.

use std::sync::Arc;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{EnergyCosts, EnergyGate};
use crate::error::Result;
use crate::link::{EstimatorConfig, LinkEstimator};
use crate::model::{ControlMessage, MessageKind, NodeId, WireSizes};
use crate::protocol::{self, Protocol, Timer};
use crate::sim::channel::ChannelModel;
use crate::sim::config::{LogDetail, ScenarioConfig};
use crate::sim::log::{DropReason, EventLog, FlowSummary, LogRecord, TopoNode};
pub use crate::sim::log::{EnergyClass, FlowTag};
use crate::sim::queue::{EventQueue, SimTime};
use crate::sim::topology::{NodeRole, Topology};

const CHANNEL_STREAM: u64 = 2;
const PROTOCOL_STREAM: u64 = 3;
const PHASE_STREAM: u64 = 4;

/// Link quality assumed before a link's first batch of samples is in.
pub const DEFAULT_LINK_QUALITY: f64 = 0.5;

/// A data packet in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPacket {
    pub source: NodeId,
    pub seq: u32,
    pub generated: SimTime,
    pub bits: u32,
    /// Source route, for protocols that use one.
    pub route: Option<Arc<[NodeId]>>,
    /// Hops travelled so far.
    pub hops: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Control(ControlMessage),
    Data(DataPacket),
    /// End-to-end acknowledgement of a delivered packet.
    DataAck {
        source: NodeId,
        seq: u32,
    },
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Control(c) => c.kind(),
            Message::Data(_) => MessageKind::Data,
            Message::DataAck { .. } => MessageKind::DataAck,
        }
    }

    pub fn bits(&self, sizes: &WireSizes) -> u32 {
        match self {
            Message::Data(p) => p.bits,
            other => sizes.bits(other.kind(), 0),
        }
    }
}

/// What a node knows about one neighbor.
#[derive(Debug, Clone)]
pub struct LinkState {
    pub last_hello: Option<SimTime>,
    /// Residual energy the neighbor advertised in its last HELLO.
    pub reported_energy: Option<f64>,
    pub estimator: LinkEstimator,
    /// Noiseless received power over this link, watts.
    pub mean_rx_w: f64,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub energy: f64,
    pub alive: bool,
    /// Mains-powered nodes never spend or harvest energy.
    pub powered: bool,
    pub initial: f64,
    pub harvested: f64,
    pub spent: f64,
    /// Aligned with the topology's neighbor list.
    pub links: Vec<LinkState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fate {
    Pending,
    Delivered,
    Dropped,
}

#[derive(Debug, Clone)]
struct FlowStats {
    source: NodeId,
    generated: u64,
    delivered: u64,
    delivered_bits: u64,
    data_j: f64,
    control_j: f64,
    fates: Vec<Fate>,
}

pub(crate) enum Event {
    Generate(NodeId),
    Arrive {
        from: NodeId,
        to: NodeId,
        msg: Box<Message>,
        flow: Option<FlowTag>,
        unicast: bool,
    },
    Undelivered {
        from: NodeId,
        to: NodeId,
        msg: Box<Message>,
    },
    Hello(NodeId),
    Harvest {
        duration_s: f64,
        next_is_wet: bool,
    },
    EnergySample,
    Kill(NodeId),
    Epoch,
    Timer(Timer),
}

/// Shared network state handed to protocol handlers.
pub struct Net {
    cfg: ScenarioConfig,
    topo: Topology,
    now: SimTime,
    queue: EventQueue<Event>,
    nodes: Vec<NodeState>,
    flows: Vec<FlowStats>,
    flow_slot: Vec<Option<usize>>,
    log: EventLog,
    channel: ChannelModel,
    costs: EnergyCosts,
    gate: EnergyGate,
    est_cfg: EstimatorConfig,
    rng_channel: ChaCha8Rng,
    rng_protocol: ChaCha8Rng,
    periodic_end: SimTime,
    hello_timeout: SimTime,
    threshold: f64,
    epoch: u64,
}

impl Net {
    fn new(cfg: &ScenarioConfig, topo: Topology) -> Result<Self> {
        let channel = cfg.channel_model();
        let costs = cfg.costs()?;
        let gate = cfg.gate()?;
        let est_cfg = cfg.estimator_config();
        let mut rng_channel = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_channel.set_stream(CHANNEL_STREAM);
        let mut rng_protocol = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_protocol.set_stream(PROTOCOL_STREAM);

        let mut nodes = Vec::with_capacity(topo.len());
        for info in topo.nodes() {
            let powered = info.id.is_nc();
            let initial = if powered {
                f64::INFINITY
            } else {
                cfg.energy
                    .overrides
                    .iter()
                    .rev()
                    .find(|o| o.node == info.id.0)
                    .map_or(cfg.energy.initial_j, |o| o.joules)
            };
            let mut links = Vec::with_capacity(topo.neighbors(info.id).len());
            for &nb in topo.neighbors(info.id) {
                let pl = channel.path_loss(topo.distance(info.id, nb) * 1e-3)?;
                links.push(LinkState {
                    last_hello: None,
                    reported_energy: None,
                    estimator: LinkEstimator::new(),
                    mean_rx_w: cfg.radio.tx_power_w / pl,
                });
            }
            nodes.push(NodeState {
                energy: initial,
                alive: true,
                powered,
                initial,
                harvested: 0.0,
                spent: 0.0,
                links,
            });
        }

        let mut flows = Vec::new();
        let mut flow_slot = vec![None; topo.len()];
        for s in topo.sources() {
            flow_slot[s.id.index()] = Some(flows.len());
            flows.push(FlowStats {
                source: s.id,
                generated: 0,
                delivered: 0,
                delivered_bits: 0,
                data_j: 0.0,
                control_j: 0.0,
                fates: Vec::new(),
            });
        }

        Ok(Self {
            cfg: cfg.clone(),
            topo,
            now: SimTime::ZERO,
            queue: EventQueue::new(),
            nodes,
            flows,
            flow_slot,
            log: EventLog::new(cfg.log.detail),
            channel,
            costs,
            gate,
            est_cfg,
            rng_channel,
            rng_protocol,
            periodic_end: SimTime::from_secs(cfg.traffic.sim_time_s + cfg.traffic.drain_s),
            hello_timeout: SimTime::from_secs(
                cfg.protocol_params.hello_period_s * cfg.protocol_params.missed_hellos as f64,
            ),
            threshold: gate.threshold(),
            epoch: 0,
        })
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn cfg(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn topo(&self) -> &Topology {
        &self.topo
    }

    pub fn gate(&self) -> &EnergyGate {
        &self.gate
    }

    pub fn costs(&self) -> &EnergyCosts {
        &self.costs
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng_protocol
    }

    pub fn alive(&self, id: NodeId) -> bool {
        self.nodes[id.index()].alive
    }

    pub fn energy(&self, id: NodeId) -> f64 {
        self.nodes[id.index()].energy
    }

    pub fn node_state(&self, id: NodeId) -> &NodeState {
        &self.nodes[id.index()]
    }

    pub fn is_relay(&self, id: NodeId) -> bool {
        self.topo.node(id).is_relay()
    }

    /// `at`'s view of its neighbor `nb`.
    pub fn link(&self, at: NodeId, nb: NodeId) -> Option<&LinkState> {
        self.topo
            .neighbor_slot(at, nb)
            .map(|i| &self.nodes[at.index()].links[i])
    }

    /// Estimated quality of the link from `nb` to `at`.
    pub fn link_quality(&self, at: NodeId, nb: NodeId) -> f64 {
        self.link(at, nb)
            .and_then(|l| l.estimator.quality())
            .unwrap_or(DEFAULT_LINK_QUALITY)
    }

    /// Whether `at` has stopped hearing HELLOs from `nb`. Neighbors never
    /// heard from are not suspected.
    pub fn suspects_down(&self, at: NodeId, nb: NodeId) -> bool {
        self.link(at, nb).is_some_and(|l| self.silent(l))
    }

    fn silent(&self, link: &LinkState) -> bool {
        link.last_hello
            .is_some_and(|t| self.now.0.saturating_sub(t.0) > self.hello_timeout.0)
    }

    /// Collects into `out` the relay neighbors of `at` that are closer to the
    /// sink, not suspected down, and last advertised enough energy to take
    /// part.
    pub fn closer_qualified(&self, at: NodeId, out: &mut Vec<NodeId>) {
        out.clear();
        let links = &self.nodes[at.index()].links;
        let neighbors = self.topo.neighbors(at);
        for &slot in self.topo.closer_relay_slots(at) {
            let link = &links[slot as usize];
            if self.silent(link) || link.reported_energy.is_some_and(|e| e < self.threshold) {
                continue;
            }
            out.push(neighbors[slot as usize]);
        }
    }

    /// Air time plus propagation delay of `bits` over the link `a`-`b`.
    pub fn hop_delay(&self, a: NodeId, b: NodeId, bits: u32) -> SimTime {
        let prop = self.channel.propagation_delay_s(self.topo.link_distance(a, b) * 1e-3);
        let air = bits as f64 / self.cfg.radio.data_rate_bps;
        SimTime(SimTime::from_secs(prop + air).0.max(1))
    }

    pub fn schedule(&mut self, delay: SimTime, timer: Timer) {
        self.queue.push(self.now + delay, Event::Timer(timer));
    }

    pub fn log_at(&mut self, level: LogDetail, f: impl FnOnce() -> LogRecord) {
        self.log.push_at(level, f);
    }

    pub fn wants(&self, level: LogDetail) -> bool {
        self.log.wants(level)
    }

    #[inline]
    fn attribute(&mut self, flow: Option<FlowTag>, joules: f64) {
        if let Some(tag) = flow {
            if let Some(slot) = self.flow_slot[tag.source.index()] {
                let f = &mut self.flows[slot];
                match tag.class {
                    EnergyClass::Data => f.data_j += joules,
                    EnergyClass::Control => f.control_j += joules,
                }
            }
        }
    }

    /// Debits up to `amount` and returns what was taken.
    #[inline]
    fn debit(&mut self, id: NodeId, amount: f64) -> f64 {
        let n = &mut self.nodes[id.index()];
        if n.powered || !n.alive {
            return 0.0;
        }
        let taken = amount.min(n.energy);
        n.energy -= taken;
        n.spent += taken;
        if n.energy <= 0.0 {
            self.kill(id);
        }
        taken
    }

    fn kill(&mut self, id: NodeId) {
        let n = &mut self.nodes[id.index()];
        if n.alive && !n.powered {
            n.alive = false;
            let t = self.now;
            debug!("{id} died at {t}");
            self.log.push(LogRecord::Death { t, node: id });
            self.epoch += 1;
            // neighbors start suspecting the node once its HELLOs go missing
            let at = self.now + self.hello_timeout + SimTime(1);
            self.queue.push(at, Event::Epoch);
        }
    }

    /// Changes whenever some node's eligibility as a forwarder, as seen by
    /// its neighbors, may have changed.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Debits every `(node, joules)` pair at once, attributing the total to
    /// `flow`. Does nothing and returns false if any node is dead or cannot
    /// cover its debit.
    pub fn debit_all(&mut self, debits: &[(NodeId, f64)], flow: Option<FlowTag>) -> bool {
        let affordable = debits.iter().all(|&(id, j)| {
            let n = &self.nodes[id.index()];
            n.alive && (n.powered || n.energy > j)
        });
        if !affordable {
            return false;
        }
        let mut spent = 0.0;
        for &(id, j) in debits {
            spent += self.debit(id, j);
        }
        self.attribute(flow, spent);
        true
    }

    #[inline]
    fn charge_tx(&mut self, from: NodeId, to: Option<NodeId>, kind: MessageKind, bits: u32, flow: Option<FlowTag>) {
        let taken = self.debit(from, self.costs.transmit(bits));
        self.attribute(flow, taken);
        let t = self.now;
        self.log.push_at(LogDetail::Full, || LogRecord::Tx {
            t,
            from,
            to,
            kind,
            bits,
            energy_j: taken,
            flow,
        });
    }

    /// Charges `at` for receiving; returns false when `at` is dead or dies
    /// doing so.
    #[inline]
    fn charge_rx(&mut self, at: NodeId, from: NodeId, kind: MessageKind, bits: u32, flow: Option<FlowTag>) -> bool {
        let t = self.now;
        if !self.alive(at) {
            self.log.push_at(LogDetail::Full, || LogRecord::Lost {
                t,
                node: at,
                from,
                kind,
            });
            return false;
        }
        let taken = self.debit(at, self.costs.receive(bits));
        self.attribute(flow, taken);
        self.log.push_at(LogDetail::Full, || LogRecord::Rx {
            t,
            node: at,
            from,
            kind,
            energy_j: taken,
            flow,
        });
        self.alive(at)
    }

    /// Sends `msg` from `from` to the neighbor `to`. Returns false when the
    /// sender is dead. If `to` turns out to be dead the protocol hears about
    /// it through [`Protocol::on_undelivered`] after the ACK timeout.
    pub fn unicast(&mut self, from: NodeId, to: NodeId, msg: Message, flow: Option<FlowTag>) -> bool {
        if !self.alive(from) {
            return false;
        }
        debug_assert!(self.topo.are_neighbors(from, to), "{from} -> {to} is not a link");
        let bits = msg.bits(&self.cfg.sizes);
        self.charge_tx(from, Some(to), msg.kind(), bits, flow);
        let at = self.now + self.hop_delay(from, to, bits);
        self.queue.push(
            at,
            Event::Arrive {
                from,
                to,
                msg: Box::new(msg),
                flow,
                unicast: true,
            },
        );
        true
    }

    /// Broadcasts `msg` to every neighbor of `from`.
    pub fn broadcast(&mut self, from: NodeId, msg: Message, flow: Option<FlowTag>) -> bool {
        if !self.alive(from) {
            return false;
        }
        let bits = msg.bits(&self.cfg.sizes);
        self.charge_tx(from, None, msg.kind(), bits, flow);
        for i in 0..self.topo.neighbors(from).len() {
            let to = self.topo.neighbors(from)[i];
            let at = self.now + self.hop_delay(from, to, bits);
            self.queue.push(
                at,
                Event::Arrive {
                    from,
                    to,
                    msg: Box::new(msg.clone()),
                    flow,
                    unicast: false,
                },
            );
        }
        true
    }

    /// Charges a short exchange over `from`-`to` without scheduling its
    /// arrival; returns whether `to` received it.
    pub fn exchange(&mut self, from: NodeId, to: NodeId, kind: MessageKind, flow: Option<FlowTag>) -> bool {
        if !self.alive(from) {
            return false;
        }
        let bits = self.cfg.sizes.bits(kind, 0);
        self.charge_tx(from, Some(to), kind, bits, flow);
        self.charge_rx(to, from, kind, bits, flow)
    }

    /// Like [`Net::exchange`] for a data packet: returns whether `to`
    /// received it.
    pub fn exchange_data(&mut self, from: NodeId, to: NodeId, bits: u32, flow: Option<FlowTag>) -> bool {
        if !self.alive(from) {
            return false;
        }
        self.charge_tx(from, Some(to), MessageKind::Data, bits, flow);
        self.charge_rx(to, from, MessageKind::Data, bits, flow)
    }

    /// Sends a data packet of `bits` from `from` to each of `targets` in
    /// turn, as separate unicasts, and collects into `received` the targets
    /// that got it. Stops early if the sender dies.
    pub fn transmit_each(
        &mut self,
        from: NodeId,
        targets: &[NodeId],
        bits: u32,
        flow: Option<FlowTag>,
        received: &mut Vec<NodeId>,
    ) {
        received.clear();
        if self.log.wants(LogDetail::Full) {
            for &to in targets {
                if self.exchange_data(from, to, bits, flow) {
                    received.push(to);
                }
            }
            return;
        }
        let tx = self.costs.transmit(bits);
        let rx = self.costs.receive(bits);
        let slot = flow.and_then(|f| self.flow_slot[f.source.index()].map(|s| (s, f.class)));
        let mut spent = 0.0;
        for &to in targets {
            if !self.nodes[from.index()].alive {
                break;
            }
            spent += self.debit(from, tx);
            let r = &self.nodes[to.index()];
            if r.powered {
                received.push(to);
            } else if r.alive {
                spent += self.debit(to, rx);
                if self.nodes[to.index()].alive {
                    received.push(to);
                }
            }
        }
        if let Some((s, class)) = slot {
            match class {
                EnergyClass::Data => self.flows[s].data_j += spent,
                EnergyClass::Control => self.flows[s].control_j += spent,
            }
        }
    }

    fn fate_slot(&mut self, source: NodeId, seq: u32) -> Option<&mut Fate> {
        let slot = self.flow_slot[source.index()]?;
        self.flows[slot].fates.get_mut(seq as usize)
    }

    /// Records the delivery of a packet. Later copies of the same packet are
    /// ignored; returns true for the first.
    pub fn deliver(&mut self, packet: &DataPacket) -> bool {
        match self.fate_slot(packet.source, packet.seq) {
            Some(f) if *f == Fate::Pending => *f = Fate::Delivered,
            _ => return false,
        }
        let slot = self.flow_slot[packet.source.index()].expect("fate exists");
        let flow = &mut self.flows[slot];
        flow.delivered += 1;
        flow.delivered_bits += packet.bits as u64;
        let t = self.now;
        self.log.push_at(LogDetail::Packets, || LogRecord::Delivered {
            t,
            source: packet.source,
            seq: packet.seq,
            generated: packet.generated,
            hops: packet.hops,
        });
        true
    }

    /// Records that a packet was lost at `at`. No effect once a fate is set.
    pub fn drop_packet(&mut self, source: NodeId, seq: u32, at: NodeId, reason: DropReason) -> bool {
        match self.fate_slot(source, seq) {
            Some(f) if *f == Fate::Pending => *f = Fate::Dropped,
            _ => return false,
        }
        let t = self.now;
        self.log.push_at(LogDetail::Packets, || LogRecord::Dropped {
            t,
            source,
            seq,
            at,
            reason,
        });
        true
    }

    pub fn is_resolved(&self, source: NodeId, seq: u32) -> bool {
        self.flow_slot[source.index()]
            .and_then(|s| self.flows[s].fates.get(seq as usize))
            .is_some_and(|f| *f != Fate::Pending)
    }

    fn hello(&mut self, node: NodeId) {
        if !self.alive(node) {
            return;
        }
        let energy = self.energy(node);
        let bits = self.cfg.sizes.hello;
        self.charge_tx(node, None, MessageKind::Hello, bits, None);
        let now = self.now;
        for i in 0..self.topo.neighbors(node).len() {
            let nb = self.topo.neighbors(node)[i];
            if !self.charge_rx(nb, node, MessageKind::Hello, bits, None) {
                continue;
            }
            let slot = self.topo.neighbor_slot(nb, node).expect("adjacency is symmetric");
            let link = &mut self.nodes[nb.index()].links[slot];
            link.last_hello = Some(now);
            let admitted = |e: Option<f64>| e.map_or(true, |e| e >= self.threshold);
            if admitted(link.reported_energy) != admitted(Some(energy)) {
                self.epoch += 1;
            }
            link.reported_energy = Some(energy);
            let sample = self.channel.sample_rssi(link.mean_rx_w, &mut self.rng_channel);
            if let Err(e) = link.estimator.observe(&self.est_cfg, sample) {
                warn!("link {node}->{nb}: {e}");
            }
        }
    }

    fn harvest(&mut self, duration_s: f64) {
        let amount = self.cfg.energy.harvest_rate_w * duration_s;
        let cap = self.cfg.energy.capacity_j;
        let t = self.now;
        for i in 0..self.nodes.len() {
            let n = &mut self.nodes[i];
            if n.powered || !n.alive {
                continue;
            }
            let credit = amount.min(cap - n.energy).max(0.0);
            if credit > 0.0 {
                n.energy += credit;
                n.harvested += credit;
                self.log.push_at(LogDetail::Full, || LogRecord::Harvest {
                    t,
                    node: NodeId(i as u32),
                    energy_j: credit,
                });
            }
        }
    }
}

/// Runs one scenario: places nodes from the configured seed and drives the
/// configured protocol to completion.
pub fn run(cfg: &ScenarioConfig) -> Result<EventLog> {
    cfg.validate()?;
    let topo = Topology::generate(cfg, cfg.seed)?;
    run_on(cfg, topo)
}

/// Runs a scenario on a given topology.
pub fn run_on(cfg: &ScenarioConfig, topo: Topology) -> Result<EventLog> {
    run_with(cfg, topo, |net| protocol::build(cfg.protocol, net))
}

/// Runs a scenario with a caller-built protocol instance.
pub fn run_with<F>(cfg: &ScenarioConfig, topo: Topology, build: F) -> Result<EventLog>
where
    F: FnOnce(&Net) -> Box<dyn Protocol>,
{
    let mut net = Net::new(cfg, topo)?;
    let mut proto = build(&net);
    start(&mut net);
    let end = net.periodic_end;
    while let Some((t, ev)) = net.queue.pop() {
        if t > end {
            break;
        }
        net.now = t;
        dispatch(&mut net, proto.as_mut(), ev);
    }
    net.now = net.now.max(end);
    proto.on_finish(&mut net);
    Ok(finish(net))
}

fn start(net: &mut Net) {
    let cfg = net.cfg.clone();
    net.log.push(LogRecord::RunInfo {
        protocol: cfg.protocol,
        seed: cfg.seed,
        sim_time_s: cfg.traffic.sim_time_s,
        packet_bits: cfg.traffic.packet_bits(),
        detail: cfg.log.detail,
    });
    net.log.push(LogRecord::Topology {
        comm_range_mm: net.topo.comm_range_mm(),
        nodes: net
            .topo
            .nodes()
            .iter()
            .map(|n| TopoNode {
                id: n.id,
                x: n.position.x,
                y: n.position.y,
                role: n.role,
            })
            .collect(),
    });
    for i in 0..net.nodes.len() {
        if net.nodes[i].energy <= 0.0 {
            net.kill(NodeId(i as u32));
        }
    }

    let mut phase = ChaCha8Rng::seed_from_u64(cfg.seed);
    phase.set_stream(PHASE_STREAM);
    let hello = cfg.protocol_params.hello_period_s;
    let interval = cfg.traffic.packet_interval_s;
    for n in net.topo.nodes().to_vec() {
        match n.role {
            NodeRole::Sink | NodeRole::Relay => {
                let t = SimTime::from_secs(phase.random::<f64>() * hello);
                net.queue.push(t, Event::Hello(n.id));
            }
            NodeRole::Source { .. } => {
                let t = SimTime::from_secs(cfg.traffic.start_s + phase.random::<f64>() * interval);
                net.queue.push(t, Event::Generate(n.id));
            }
        }
    }
    if cfg.energy.harvest_rate_w > 0.0 {
        net.queue.push(
            SimTime::from_secs(cfg.slots.wet_s),
            Event::Harvest {
                duration_s: cfg.slots.wet_s,
                next_is_wet: false,
            },
        );
    }
    if net.log.wants(LogDetail::Packets) {
        net.queue.push(SimTime::ZERO, Event::EnergySample);
    }
    for f in &cfg.failures {
        if (f.node as usize) < net.nodes.len() {
            net.queue.push(SimTime::from_secs(f.at_s), Event::Kill(NodeId(f.node)));
        } else {
            warn!("failure scheduled for unknown node {}", f.node);
        }
    }
}

fn dispatch(net: &mut Net, proto: &mut dyn Protocol, ev: Event) {
    match ev {
        Event::Generate(src) => {
            let interval = SimTime::from_secs(net.cfg.traffic.packet_interval_s);
            let next = net.now + interval;
            if next < SimTime::from_secs(net.cfg.traffic.sim_time_s) {
                net.queue.push(next, Event::Generate(src));
            }
            if !net.alive(src) {
                return;
            }
            let slot = net.flow_slot[src.index()].expect("sources have flows");
            let flow = &mut net.flows[slot];
            let seq = flow.fates.len() as u32;
            flow.fates.push(Fate::Pending);
            flow.generated += 1;
            let packet = DataPacket {
                source: src,
                seq,
                generated: net.now,
                bits: net.cfg.traffic.packet_bits(),
                route: None,
                hops: 0,
            };
            proto.on_generate(net, src, packet);
        }
        Event::Arrive {
            from,
            to,
            msg,
            flow,
            unicast,
        } => {
            let bits = msg.bits(&net.cfg.sizes);
            if net.charge_rx(to, from, msg.kind(), bits, flow) {
                proto.on_receive(net, to, from, *msg);
            } else if unicast && net.alive(from) {
                let at = net.now + SimTime::from_secs(net.cfg.protocol_params.ack_timeout_s);
                net.queue.push(at, Event::Undelivered { from, to, msg });
            }
        }
        Event::Undelivered { from, to, msg } => {
            if net.alive(from) {
                proto.on_undelivered(net, from, to, *msg);
            } else if let Message::Data(p) = *msg {
                net.drop_packet(p.source, p.seq, from, DropReason::ForwardingFailure);
            }
        }
        Event::Hello(node) => {
            net.hello(node);
            let next = net.now + SimTime::from_secs(net.cfg.protocol_params.hello_period_s);
            if next <= net.periodic_end && net.alive(node) {
                net.queue.push(next, Event::Hello(node));
            }
        }
        Event::Harvest {
            duration_s,
            next_is_wet,
        } => {
            net.harvest(duration_s);
            let s = &net.cfg.slots;
            // WET, SWIPT, then WIT (no harvesting) before the next cycle
            let (delay, duration, after) = if next_is_wet {
                (s.wit_s + s.wet_s, s.wet_s, false)
            } else {
                (s.swipt_s, s.swipt_s, true)
            };
            let next = net.now + SimTime::from_secs(delay);
            if next <= net.periodic_end {
                net.queue.push(
                    next,
                    Event::Harvest {
                        duration_s: duration,
                        next_is_wet: after,
                    },
                );
            }
        }
        Event::EnergySample => {
            let t = net.now;
            for i in 1..net.nodes.len() {
                let energy_j = net.nodes[i].energy;
                net.log.push(LogRecord::EnergySample {
                    t,
                    node: NodeId(i as u32),
                    energy_j,
                });
            }
            let next = net.now + SimTime::from_secs(net.cfg.log.energy_sample_s);
            if next <= net.periodic_end {
                net.queue.push(next, Event::EnergySample);
            }
        }
        Event::Kill(node) => net.kill(node),
        Event::Epoch => net.epoch += 1,
        Event::Timer(timer) => proto.on_timer(net, timer),
    }
}

fn finish(mut net: Net) -> EventLog {
    for slot in 0..net.flows.len() {
        let src = net.flows[slot].source;
        for seq in 0..net.flows[slot].fates.len() {
            net.drop_packet(src, seq as u32, src, DropReason::Unresolved);
        }
    }
    for f in &net.flows {
        let info = net.topo.node(f.source);
        net.log.push(LogRecord::FlowSummary(FlowSummary {
            source: f.source,
            bucket: info.bucket().unwrap_or(0),
            distance_mm: net.topo.distance_to_nc(f.source),
            generated: f.generated,
            delivered: f.delivered,
            delivered_bits: f.delivered_bits,
            data_energy_j: f.data_j,
            control_energy_j: f.control_j,
        }));
    }
    for (i, n) in net.nodes.iter().enumerate().skip(1) {
        net.log.push(LogRecord::NodeEnergy {
            node: NodeId(i as u32),
            initial_j: n.initial,
            final_j: n.energy,
            harvested_j: n.harvested,
            spent_j: n.spent,
            alive: n.alive,
        });
    }
    net.log
}
