//! Reliable multipath routing with link stability: energy-gated neighbor
//! discovery, entropy-weighted next-hop scoring, main and backup routes
//! chosen at the sink, and failover on route errors.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use log::{debug, trace};

use super::{Protocol, Timer};
use crate::model::{ControlMessage, MessageKind, NodeId, RouteError, RoutePath, RouteReply, RouteRequest};
use crate::sim::config::{LogDetail, ProtocolKind};
use crate::sim::engine::{DataPacket, FlowTag, Message, Net};
use crate::sim::log::{CollectedPath, DropReason, FailoverTrigger, LogRecord, NcSelection, RreqForward};
use crate::sim::queue::SimTime;
use crate::similarity::{main_order, select_backup, similarity, SimilarityParams};
use crate::stability::{select_next_hops, FactorMatrix, FactorRow, ScoredCandidate};

/// A node's route to the sink.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTableEntry {
    pub request_id: u32,
    pub main: RoutePath,
    pub backup: Option<RoutePath>,
    pub on_backup: bool,
    pub expires: SimTime,
}

impl RoutingTableEntry {
    pub fn active(&self) -> &RoutePath {
        match (&self.backup, self.on_backup) {
            (Some(b), true) => b,
            _ => &self.main,
        }
    }
}

#[derive(Debug, Default)]
struct NodeRouting {
    table: Option<RoutingTableEntry>,
    seen: HashSet<(NodeId, u32)>,
    next_request: u32,
    rounds: u32,
    pending_request: Option<u32>,
    buffer: Vec<DataPacket>,
    /// Unacknowledged packets and the route generation they were sent on.
    outstanding: BTreeMap<u32, u64>,
    generation: u64,
}

#[derive(Debug)]
enum Purpose {
    Originate {
        request: u32,
    },
    /// Forward a request whose record already ends at the discovering node.
    Forward(RouteRequest),
}

#[derive(Debug)]
struct Discovery {
    node: NodeId,
    source: NodeId,
    purpose: Purpose,
    replies: Vec<(NodeId, f64)>,
}

#[derive(Debug, Default)]
struct Collection {
    open: bool,
    paths: Vec<RoutePath>,
}

pub struct Rmrls {
    nodes: Vec<NodeRouting>,
    discoveries: BTreeMap<u64, Discovery>,
    next_nonce: u64,
    collections: BTreeMap<(NodeId, u32), Collection>,
    tau: usize,
    similarity: SimilarityParams,
}

impl Rmrls {
    pub fn new(net: &Net) -> Self {
        let p = &net.cfg().protocol_params;
        Self {
            nodes: (0..net.topo().len()).map(|_| NodeRouting::default()).collect(),
            discoveries: BTreeMap::new(),
            next_nonce: 0,
            collections: BTreeMap::new(),
            tau: p.tau,
            similarity: p.similarity,
        }
    }

    /// The routing table entry of `node`, if any.
    pub fn table(&self, node: NodeId) -> Option<&RoutingTableEntry> {
        self.nodes[node.index()].table.as_ref()
    }

    fn valid_table(&mut self, node: NodeId, now: SimTime) -> Option<&RoutingTableEntry> {
        let st = &mut self.nodes[node.index()];
        if st.table.as_ref().is_some_and(|t| t.expires <= now) {
            st.table = None;
            st.generation += 1;
        }
        st.table.as_ref()
    }

    fn ensure_discovery(&mut self, net: &mut Net, src: NodeId) {
        let limit = net.cfg().traffic.iterations;
        let st = &mut self.nodes[src.index()];
        if st.pending_request.is_some() {
            return;
        }
        if st.rounds >= limit {
            for p in std::mem::take(&mut st.buffer) {
                net.drop_packet(p.source, p.seq, src, DropReason::DiscoveryBudget);
            }
            return;
        }
        st.rounds += 1;
        let request = st.next_request;
        st.next_request += 1;
        st.pending_request = Some(request);
        debug!("{src} starts route request {request}");
        let timeout = SimTime::from_secs(net.cfg().protocol_params.route_timeout_s);
        net.schedule(timeout, Timer::RouteTimeout { source: src, request });
        self.start_discovery(net, src, src, Purpose::Originate { request });
    }

    fn start_discovery(&mut self, net: &mut Net, node: NodeId, source: NodeId, purpose: Purpose) {
        let nonce = self.next_nonce;
        self.next_nonce += 1;
        let msg = Message::Control(ControlMessage::Ndis { nonce });
        if !net.broadcast(node, msg, FlowTag::control(source)) {
            return;
        }
        self.discoveries.insert(
            nonce,
            Discovery {
                node,
                source,
                purpose,
                replies: Vec::new(),
            },
        );
        let window = SimTime::from_secs(net.cfg().protocol_params.discovery_window_s);
        net.schedule(window, Timer::DiscoveryDone { node, nonce });
    }

    fn on_ndis(&mut self, net: &mut Net, at: NodeId, from: NodeId, nonce: u64) {
        let Some(source) = self.discoveries.get(&nonce).map(|d| d.source) else {
            return;
        };
        if !(at.is_nc() || net.is_relay(at)) {
            return;
        }
        let energy = net.energy(at);
        if !net.gate().admits(energy) {
            return;
        }
        let reported = if energy.is_finite() { energy } else { f64::MAX };
        let t = net.now();
        net.log_at(LogDetail::Full, || LogRecord::Nfee {
            t,
            from: at,
            to: from,
            residual_energy: reported,
        });
        let msg = ControlMessage::Nfee {
            neighbor: at,
            residual_energy: reported,
            addressee: from,
            nonce,
        };
        net.unicast(at, from, Message::Control(msg), FlowTag::control(source));
    }

    fn on_discovery_done(&mut self, net: &mut Net, node: NodeId, nonce: u64) {
        let Some(d) = self.discoveries.remove(&nonce) else {
            return;
        };
        if !net.alive(node) {
            return;
        }
        let (record, request) = match &d.purpose {
            Purpose::Originate { request } => (RoutePath::origin(node), *request),
            Purpose::Forward(req) => (req.record.clone(), req.request_id),
        };
        let mut cands: Vec<(NodeId, f64)> = d
            .replies
            .iter()
            .copied()
            .filter(|(id, _)| !record.contains(*id))
            .collect();
        cands.sort_by_key(|c| c.0);
        cands.dedup_by_key(|c| c.0);
        let targets: Vec<ScoredCandidate> = if cands.iter().any(|c| c.0.is_nc()) {
            vec![ScoredCandidate {
                id: NodeId::NC,
                score: 1.0,
                link_quality: net.link_quality(node, NodeId::NC),
            }]
        } else if cands.is_empty() {
            Vec::new()
        } else {
            let ids: Vec<NodeId> = cands.iter().map(|c| c.0).collect();
            let rows: Vec<FactorRow> = cands
                .iter()
                .map(|&(id, e)| FactorRow {
                    residual_energy: e,
                    link_quality: net.link_quality(node, id),
                    distance_to_nc: net.topo().distance_to_nc(id),
                })
                .collect();
            match FactorMatrix::new(ids, rows).and_then(|m| select_next_hops(&m, self.tau)) {
                Ok(t) => t,
                Err(e) => {
                    debug!("{node}: candidate scoring failed: {e}");
                    Vec::new()
                }
            }
        };
        if targets.is_empty() {
            if let Purpose::Originate { request } = d.purpose {
                self.fail_request(net, node, request, DropReason::NoCandidates);
            }
            return;
        }
        let t = net.now();
        net.log_at(LogDetail::Full, || {
            LogRecord::RreqForward(Box::new(RreqForward {
                t,
                node,
                source: d.source,
                request,
                record: record.hops().to_vec(),
                record_total: record.total_stability(),
                candidates: cands.len(),
                targets: targets.iter().map(|c| (c.id, c.score)).collect(),
                via_cache: false,
            }))
        });
        for c in targets {
            let req = RouteRequest {
                source: d.source,
                destination: NodeId::NC,
                request_id: request,
                record: record.clone(),
                hop_score: c.score,
                via_cache: false,
            };
            net.unicast(
                node,
                c.id,
                Message::Control(ControlMessage::Rreq(req)),
                FlowTag::control(d.source),
            );
        }
    }

    fn fail_request(&mut self, net: &mut Net, src: NodeId, request: u32, reason: DropReason) {
        let st = &mut self.nodes[src.index()];
        if st.pending_request != Some(request) {
            return;
        }
        st.pending_request = None;
        for p in std::mem::take(&mut st.buffer) {
            net.drop_packet(p.source, p.seq, src, reason);
        }
        let t = net.now();
        net.log_at(LogDetail::Flows, || LogRecord::RouteFailure {
            t,
            source: src,
            request,
            reason,
        });
    }

    fn on_rreq(&mut self, net: &mut Net, at: NodeId, from: NodeId, req: RouteRequest) {
        let src = req.source;
        net.exchange(at, from, MessageKind::Ack, FlowTag::control(src));
        if at.is_nc() {
            self.collect(net, req);
            return;
        }
        if !net.is_relay(at) {
            return;
        }
        if req.record.contains(at) || !self.nodes[at.index()].seen.insert((src, req.request_id)) {
            let t = net.now();
            net.log_at(LogDetail::Full, || LogRecord::RreqDiscard {
                t,
                node: at,
                source: src,
                request: req.request_id,
            });
            return;
        }
        let Ok(record) = req.record.extend(at, req.hop_score) else {
            return;
        };
        let now = net.now();
        let cached = self.valid_table(at, now).and_then(|entry| {
            let path = entry.active();
            let suffix = path.suffix_from(at)?;
            let next = suffix.hops().get(1).copied()?;
            let loops = suffix.hops()[1..].iter().any(|h| record.contains(*h));
            let down = !next.is_nc() && net.suspects_down(at, next);
            (!loops && !down).then(|| (next, suffix.first_hop_score().unwrap_or(0.0)))
        });
        let forwarded = RouteRequest {
            source: src,
            destination: NodeId::NC,
            request_id: req.request_id,
            record,
            hop_score: 0.0,
            via_cache: false,
        };
        match cached {
            Some((next, score)) => {
                let t = net.now();
                net.log_at(LogDetail::Full, || {
                    LogRecord::RreqForward(Box::new(RreqForward {
                        t,
                        node: at,
                        source: src,
                        request: forwarded.request_id,
                        record: forwarded.record.hops().to_vec(),
                        record_total: forwarded.record.total_stability(),
                        candidates: 1,
                        targets: vec![(next, score)],
                        via_cache: true,
                    }))
                });
                let msg = RouteRequest {
                    hop_score: score,
                    via_cache: true,
                    ..forwarded
                };
                net.unicast(
                    at,
                    next,
                    Message::Control(ControlMessage::Rreq(msg)),
                    FlowTag::control(src),
                );
            }
            None => self.start_discovery(net, at, src, Purpose::Forward(forwarded)),
        }
    }

    fn collect(&mut self, net: &mut Net, req: RouteRequest) {
        let Ok(path) = req.record.extend(NodeId::NC, req.hop_score) else {
            return;
        };
        let key = (req.source, req.request_id);
        if let Entry::Vacant(slot) = self.collections.entry(key) {
            slot.insert(Collection {
                open: true,
                paths: Vec::new(),
            });
            let window = SimTime::from_secs(net.cfg().protocol_params.nc_window_s);
            net.schedule(
                window,
                Timer::NcWindow {
                    source: req.source,
                    request: req.request_id,
                },
            );
        }
        let col = self.collections.get_mut(&key).expect("just inserted");
        if !col.open || col.paths.iter().any(|p| p.hops() == path.hops()) {
            return;
        }
        let t = net.now();
        net.log_at(LogDetail::Full, || LogRecord::NcCollect {
            t,
            source: req.source,
            request: req.request_id,
            path: path.hops().to_vec(),
            hop_scores: path.hop_scores().to_vec(),
            total: path.total_stability(),
        });
        col.paths.push(path);
    }

    fn close_window(&mut self, net: &mut Net, source: NodeId, request: u32) {
        let Some(col) = self.collections.get_mut(&(source, request)) else {
            return;
        };
        col.open = false;
        let paths = std::mem::take(&mut col.paths);
        if paths.is_empty() {
            return;
        }
        let main_idx = (0..paths.len())
            .min_by(|&a, &b| main_order(&paths[a], &paths[b]))
            .expect("paths is not empty");
        let main = paths[main_idx].clone();
        let others: Vec<RoutePath> = paths
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != main_idx)
            .map(|(_, p)| p.clone())
            .collect();
        let backup = select_backup(&main, &others, &self.similarity).ok().flatten().cloned();
        let backup_idx = backup
            .as_ref()
            .and_then(|b| paths.iter().position(|p| p.hops() == b.hops()));
        let t = net.now();
        let sim = self.similarity;
        net.log_at(LogDetail::Flows, || {
            LogRecord::NcSelection(Box::new(NcSelection {
                t,
                source,
                request,
                collected: paths
                    .iter()
                    .map(|p| CollectedPath {
                        hops: p.hops().to_vec(),
                        total: p.total_stability(),
                    })
                    .collect(),
                main: main_idx,
                backup: backup_idx,
                omega: paths
                    .iter()
                    .map(|p| similarity(&main, p, &sim).unwrap_or(f64::NAN))
                    .collect(),
            }))
        });
        let prev = main.prev_before(NodeId::NC).expect("complete paths have a last relay");
        let reply = RouteReply {
            request_id: request,
            main,
            backup,
        };
        net.unicast(
            NodeId::NC,
            prev,
            Message::Control(ControlMessage::Rrep(reply)),
            FlowTag::control(source),
        );
    }

    fn on_rrep(&mut self, net: &mut Net, at: NodeId, from: NodeId, rep: RouteReply) {
        let src = rep.main.source();
        net.exchange(at, from, MessageKind::Ack, FlowTag::control(src));
        let ttl = SimTime::from_secs(net.cfg().protocol_params.route_ttl_s);
        let expires = net.now() + ttl;
        if at == src {
            self.install(net, src, rep, expires);
            return;
        }
        if let Some(suffix) = rep.main.suffix_from(at) {
            self.nodes[at.index()].table = Some(RoutingTableEntry {
                request_id: rep.request_id,
                main: suffix,
                backup: None,
                on_backup: false,
                expires,
            });
        }
        if let Some(prev) = rep.main.prev_before(at) {
            net.unicast(
                at,
                prev,
                Message::Control(ControlMessage::Rrep(rep)),
                FlowTag::control(src),
            );
        }
    }

    fn install(&mut self, net: &mut Net, src: NodeId, rep: RouteReply, expires: SimTime) {
        let st = &mut self.nodes[src.index()];
        if st.pending_request != Some(rep.request_id) {
            return;
        }
        st.pending_request = None;
        st.generation += 1;
        let t = net.now();
        net.log_at(LogDetail::Flows, || LogRecord::RouteInstalled {
            t,
            source: src,
            request: rep.request_id,
            main: rep.main.hops().to_vec(),
            backup: rep.backup.as_ref().map(|b| b.hops().to_vec()),
        });
        st.table = Some(RoutingTableEntry {
            request_id: rep.request_id,
            main: rep.main,
            backup: rep.backup,
            on_backup: false,
            expires,
        });
        for p in std::mem::take(&mut st.buffer) {
            self.send_data(net, src, p);
        }
    }

    /// Round-trip time of a data packet and its end-to-end ACK over `hops`.
    fn round_trip(net: &Net, hops: &[NodeId], bits: u32) -> SimTime {
        let ack = net.cfg().sizes.data_ack;
        let mut total = 0u64;
        for w in hops.windows(2) {
            total += net.hop_delay(w[0], w[1], bits).0 + net.hop_delay(w[1], w[0], ack).0;
        }
        SimTime(total)
    }

    fn send_data(&mut self, net: &mut Net, src: NodeId, mut packet: DataPacket) {
        if !net.alive(src) {
            net.drop_packet(packet.source, packet.seq, src, DropReason::SourceDead);
            return;
        }
        let now = net.now();
        let Some(entry) = self.valid_table(src, now) else {
            self.nodes[src.index()].buffer.push(packet);
            self.ensure_discovery(net, src);
            return;
        };
        let hops: Arc<[NodeId]> = Arc::from(entry.active().hops());
        let next = hops[1];
        if !next.is_nc() && net.suspects_down(src, next) {
            self.route_error(net, src, src, next, FailoverTrigger::RouteError);
            // the failover changed or cleared the route
            self.send_data(net, src, packet);
            return;
        }
        let rtt = Self::round_trip(net, &hops, packet.bits);
        let timeout = SimTime::from_secs(rtt.as_secs() * net.cfg().protocol_params.e2e_timeout_factor);
        let st = &mut self.nodes[src.index()];
        st.outstanding.insert(packet.seq, st.generation);
        let generation = st.generation;
        net.schedule(
            timeout,
            Timer::AckTimeout {
                source: src,
                seq: packet.seq,
                generation,
            },
        );
        packet.route = Some(hops);
        net.unicast(src, next, Message::Data(packet), FlowTag::data(src));
    }

    fn on_data(&mut self, net: &mut Net, at: NodeId, from: NodeId, mut packet: DataPacket) {
        let src = packet.source;
        net.exchange(at, from, MessageKind::Ack, FlowTag::data(src));
        packet.hops += 1;
        let Some(route) = packet.route.clone() else {
            return;
        };
        if at.is_nc() {
            net.deliver(&packet);
            self.return_ack(net, &route, &packet);
            return;
        }
        let Some(i) = route.iter().position(|&h| h == at) else {
            return;
        };
        let next = route[i + 1];
        if !next.is_nc() && net.suspects_down(at, next) {
            self.forwarding_failure(net, at, next, packet, DropReason::NeighborDown);
            return;
        }
        net.unicast(at, next, Message::Data(packet), FlowTag::data(src));
    }

    /// Walks the end-to-end ACK back along `route`, charging every hop.
    fn return_ack(&mut self, net: &mut Net, route: &[NodeId], packet: &DataPacket) {
        let flow = FlowTag::data(packet.source);
        let ack_bits = net.cfg().sizes.data_ack;
        let mut delay = 0u64;
        for w in route.windows(2).rev() {
            let (to, from) = (w[0], w[1]);
            if !net.exchange(from, to, MessageKind::DataAck, flow) {
                return;
            }
            delay += net.hop_delay(from, to, ack_bits).0;
        }
        net.schedule(
            SimTime(delay),
            Timer::AckArrived {
                source: packet.source,
                seq: packet.seq,
            },
        );
    }

    fn forwarding_failure(&mut self, net: &mut Net, at: NodeId, to: NodeId, packet: DataPacket, reason: DropReason) {
        let src = packet.source;
        net.drop_packet(src, packet.seq, at, reason);
        self.invalidate_cache(net, at, at, to);
        if at == src {
            self.route_error(net, src, at, to, FailoverTrigger::RouteError);
            return;
        }
        let Some(route) = packet.route else {
            return;
        };
        let Some(i) = route.iter().position(|&h| h == at) else {
            return;
        };
        let err = RouteError {
            source: src,
            request_id: self.nodes[src.index()].table.as_ref().map_or(0, |t| t.request_id),
            failed_from: at,
            failed_to: to,
            route: route[..=i].to_vec(),
        };
        net.unicast(
            at,
            route[i - 1],
            Message::Control(ControlMessage::Rerr(err)),
            FlowTag::control(src),
        );
    }

    /// Drops a relay's cached route through the failed link `a`-`b`.
    fn invalidate_cache(&mut self, net: &Net, node: NodeId, a: NodeId, b: NodeId) {
        if !net.is_relay(node) {
            return;
        }
        let st = &mut self.nodes[node.index()];
        if st
            .table
            .as_ref()
            .is_some_and(|t| t.main.contains_link(a, b) || t.main.contains(b))
        {
            st.table = None;
        }
    }

    fn on_rerr(&mut self, net: &mut Net, at: NodeId, from: NodeId, err: RouteError) {
        net.exchange(at, from, MessageKind::Ack, FlowTag::control(err.source));
        if at == err.source {
            self.route_error(net, at, err.failed_from, err.failed_to, FailoverTrigger::RouteError);
            return;
        }
        self.invalidate_cache(net, at, err.failed_from, err.failed_to);
        let Some(i) = err.route.iter().position(|&h| h == at) else {
            return;
        };
        if i == 0 {
            return;
        }
        let prev = err.route[i - 1];
        let src = err.source;
        net.unicast(
            at,
            prev,
            Message::Control(ControlMessage::Rerr(err)),
            FlowTag::control(src),
        );
    }

    /// The source learns that the link `a`-`b` on its route failed.
    fn route_error(&mut self, net: &mut Net, src: NodeId, a: NodeId, b: NodeId, trigger: FailoverTrigger) {
        let st = &mut self.nodes[src.index()];
        let Some(entry) = st.table.as_mut() else {
            return;
        };
        if !entry.active().contains_link(a, b) {
            return;
        }
        let backup_ok = !entry.on_backup
            && entry
                .backup
                .as_ref()
                .is_some_and(|p| !p.contains(b) && !p.contains_link(a, b));
        self.failover(net, src, trigger, Some((a, b)), backup_ok);
    }

    fn failover(
        &mut self,
        net: &mut Net,
        src: NodeId,
        trigger: FailoverTrigger,
        failed_link: Option<(NodeId, NodeId)>,
        to_backup: bool,
    ) {
        let st = &mut self.nodes[src.index()];
        st.generation += 1;
        if to_backup {
            if let Some(t) = st.table.as_mut() {
                t.on_backup = true;
            }
        } else {
            st.table = None;
        }
        let t = net.now();
        debug!("{src} route failure via {trigger:?}, backup: {to_backup}");
        net.log_at(LogDetail::Flows, || LogRecord::Failover {
            t,
            source: src,
            trigger,
            failed_link,
            to_backup,
        });
        if !to_backup {
            self.ensure_discovery(net, src);
        }
    }

    fn on_ack_timeout(&mut self, net: &mut Net, src: NodeId, seq: u32, generation: u64) {
        let st = &mut self.nodes[src.index()];
        if st.outstanding.remove(&seq).is_none() || st.generation != generation {
            return;
        }
        let Some(entry) = st.table.as_ref() else {
            return;
        };
        trace!("{src}: no end-to-end ACK for {seq}");
        let to_backup = !entry.on_backup && entry.backup.is_some();
        self.failover(net, src, FailoverTrigger::AckTimeout, None, to_backup);
    }
}

impl Protocol for Rmrls {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::Rmrls
    }

    fn on_generate(&mut self, net: &mut Net, source: NodeId, packet: DataPacket) {
        self.send_data(net, source, packet);
    }

    fn on_receive(&mut self, net: &mut Net, at: NodeId, from: NodeId, msg: Message) {
        match msg {
            Message::Control(ControlMessage::Ndis { nonce }) => self.on_ndis(net, at, from, nonce),
            Message::Control(ControlMessage::Nfee {
                neighbor,
                residual_energy,
                addressee,
                nonce,
            }) => {
                if let Some(d) = self.discoveries.get_mut(&nonce) {
                    if d.node == at && addressee == at {
                        d.replies.push((neighbor, residual_energy));
                    }
                }
            }
            Message::Control(ControlMessage::Rreq(req)) => self.on_rreq(net, at, from, req),
            Message::Control(ControlMessage::Rrep(rep)) => self.on_rrep(net, at, from, rep),
            Message::Control(ControlMessage::Rerr(err)) => self.on_rerr(net, at, from, err),
            Message::Data(p) => self.on_data(net, at, from, p),
            Message::Control(_) | Message::DataAck { .. } => {}
        }
    }

    fn on_undelivered(&mut self, net: &mut Net, from: NodeId, to: NodeId, msg: Message) {
        if let Message::Data(p) = msg {
            self.forwarding_failure(net, from, to, p, DropReason::ForwardingFailure);
        }
    }

    fn on_timer(&mut self, net: &mut Net, timer: Timer) {
        match timer {
            Timer::DiscoveryDone { node, nonce } => self.on_discovery_done(net, node, nonce),
            Timer::NcWindow { source, request } => self.close_window(net, source, request),
            Timer::RouteTimeout { source, request } => {
                self.fail_request(net, source, request, DropReason::RouteTimeout)
            }
            Timer::AckTimeout {
                source,
                seq,
                generation,
            } => self.on_ack_timeout(net, source, seq, generation),
            Timer::AckArrived { source, seq } => {
                self.nodes[source.index()].outstanding.remove(&seq);
            }
            Timer::Flood { .. } => {}
        }
    }
}
