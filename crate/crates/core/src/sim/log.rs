//! Structured event log. Records serialize to one JSON object per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{MessageKind, NodeId};
use crate::sim::config::{LogDetail, ProtocolKind};
use crate::sim::queue::SimTime;
use crate::sim::topology::NodeRole;

/// Why a packet never reached the sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// No qualified neighbor is closer to the sink.
    Void,
    /// Discovery found no candidate next hop.
    NoCandidates,
    /// No route reply arrived in time.
    RouteTimeout,
    /// The per-source discovery budget is spent.
    DiscoveryBudget,
    /// The next hop was dead.
    ForwardingFailure,
    /// The next hop had missed its HELLOs and was presumed dead.
    NeighborDown,
    /// The source itself died holding the packet.
    SourceDead,
    /// Still queued or travelling when the run ended.
    Unresolved,
}

/// Why an installed route stopped being used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailoverTrigger {
    RouteError,
    AckTimeout,
    Expired,
}

/// Which bucket of a flow's energy a transmission is charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyClass {
    Data,
    Control,
}

/// Attribution of a transmission to a source's flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowTag {
    pub source: NodeId,
    pub class: EnergyClass,
}

impl FlowTag {
    pub fn data(source: NodeId) -> Option<Self> {
        Some(Self {
            source,
            class: EnergyClass::Data,
        })
    }

    pub fn control(source: NodeId) -> Option<Self> {
        Some(Self {
            source,
            class: EnergyClass::Control,
        })
    }
}

/// A path the sink collected for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectedPath {
    pub hops: Vec<NodeId>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoNode {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    pub role: NodeRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcSelection {
    pub t: SimTime,
    pub source: NodeId,
    pub request: u32,
    pub collected: Vec<CollectedPath>,
    pub main: usize,
    pub backup: Option<usize>,
    /// Similarity of each collected path to the main path.
    pub omega: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RreqForward {
    pub t: SimTime,
    pub node: NodeId,
    pub source: NodeId,
    pub request: u32,
    /// Route record including `node`.
    pub record: Vec<NodeId>,
    pub record_total: f64,
    /// Qualified candidates seen by discovery.
    pub candidates: usize,
    pub targets: Vec<(NodeId, f64)>,
    pub via_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum LogRecord {
    RunInfo {
        protocol: ProtocolKind,
        seed: u64,
        sim_time_s: f64,
        packet_bits: u32,
        detail: LogDetail,
    },
    Topology {
        comm_range_mm: f64,
        nodes: Vec<TopoNode>,
    },
    Tx {
        t: SimTime,
        from: NodeId,
        to: Option<NodeId>,
        kind: MessageKind,
        bits: u32,
        energy_j: f64,
        flow: Option<FlowTag>,
    },
    Rx {
        t: SimTime,
        node: NodeId,
        from: NodeId,
        kind: MessageKind,
        energy_j: f64,
        flow: Option<FlowTag>,
    },
    /// A transmission reached a dead receiver.
    Lost {
        t: SimTime,
        node: NodeId,
        from: NodeId,
        kind: MessageKind,
    },
    Harvest {
        t: SimTime,
        node: NodeId,
        energy_j: f64,
    },
    Nfee {
        t: SimTime,
        from: NodeId,
        to: NodeId,
        residual_energy: f64,
    },
    RreqForward(Box<RreqForward>),
    RreqDiscard {
        t: SimTime,
        node: NodeId,
        source: NodeId,
        request: u32,
    },
    NcCollect {
        t: SimTime,
        source: NodeId,
        request: u32,
        path: Vec<NodeId>,
        hop_scores: Vec<f64>,
        total: f64,
    },
    NcSelection(Box<NcSelection>),
    RouteInstalled {
        t: SimTime,
        source: NodeId,
        request: u32,
        main: Vec<NodeId>,
        backup: Option<Vec<NodeId>>,
    },
    RouteFailure {
        t: SimTime,
        source: NodeId,
        request: u32,
        reason: DropReason,
    },
    Failover {
        t: SimTime,
        source: NodeId,
        trigger: FailoverTrigger,
        failed_link: Option<(NodeId, NodeId)>,
        to_backup: bool,
    },
    Death {
        t: SimTime,
        node: NodeId,
    },
    EnergySample {
        t: SimTime,
        node: NodeId,
        energy_j: f64,
    },
    Delivered {
        t: SimTime,
        source: NodeId,
        seq: u32,
        generated: SimTime,
        hops: u32,
    },
    Dropped {
        t: SimTime,
        source: NodeId,
        seq: u32,
        at: NodeId,
        reason: DropReason,
    },
    FlowSummary(FlowSummary),
    NodeEnergy {
        node: NodeId,
        initial_j: f64,
        final_j: f64,
        harvested_j: f64,
        spent_j: f64,
        alive: bool,
    },
}

/// Per-source traffic and energy totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub source: NodeId,
    pub bucket: u32,
    pub distance_mm: f64,
    pub generated: u64,
    pub delivered: u64,
    pub delivered_bits: u64,
    /// Energy spent network-wide moving this source's data and ACKs.
    pub data_energy_j: f64,
    /// Energy spent network-wide on this source's route control.
    pub control_energy_j: f64,
}

impl FlowSummary {
    pub fn energy_j(&self) -> f64 {
        self.data_energy_j + self.control_energy_j
    }
}

/// In-memory event log filtered by a detail level.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    detail: LogDetail,
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new(detail: LogDetail) -> Self {
        Self {
            detail,
            records: Vec::new(),
        }
    }

    pub fn detail(&self) -> LogDetail {
        self.detail
    }

    pub fn wants(&self, level: LogDetail) -> bool {
        self.detail >= level
    }

    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    /// Pushes the record built by `f` when the log keeps `level` detail.
    pub fn push_at(&mut self, level: LogDetail, f: impl FnOnce() -> LogRecord) {
        if self.wants(level) {
            self.records.push(f());
        }
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn flows(&self) -> impl Iterator<Item = &FlowSummary> + '_ {
        self.records.iter().filter_map(|r| match r {
            LogRecord::FlowSummary(f) => Some(f),
            _ => None,
        })
    }

    pub fn run_info(&self) -> Option<(ProtocolKind, u64, f64)> {
        self.records.iter().find_map(|r| match r {
            LogRecord::RunInfo {
                protocol,
                seed,
                sim_time_s,
                ..
            } => Some((*protocol, *seed, *sim_time_s)),
            _ => None,
        })
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self> {
        let mut records = Vec::new();
        let mut detail = LogDetail::Full;
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(&line)?;
            if let LogRecord::RunInfo { detail: d, .. } = &rec {
                detail = *d;
            }
            records.push(rec);
        }
        Ok(Self { detail, records })
    }
}
