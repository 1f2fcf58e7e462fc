//! Node placement and the unit-disk neighbor graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NodeId, Position};
use crate::sim::config::ScenarioConfig;

const PLACEMENT_STREAM: u64 = 1;
const MAX_PLACEMENT_TRIES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NodeRole {
    Sink,
    Relay,
    /// Traffic source in distance bucket `bucket`.
    Source {
        bucket: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: NodeId,
    pub position: Position,
    pub role: NodeRole,
}

impl NodeInfo {
    pub fn is_relay(&self) -> bool {
        matches!(self.role, NodeRole::Relay)
    }

    pub fn bucket(&self) -> Option<u32> {
        match self.role {
            NodeRole::Source { bucket } => Some(bucket),
            _ => None,
        }
    }
}

/// Placed nodes and their neighbor lists. Node `i` has id `i`; the sink is
/// node 0, relays follow, then sources.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: Vec<NodeInfo>,
    /// Neighbors of each node, sorted by id.
    adjacency: Vec<Vec<NodeId>>,
    nc_distance: Vec<f64>,
    /// Distances aligned with `adjacency`.
    adjacency_mm: Vec<Vec<f64>>,
    /// Slots in the neighbor list of relays strictly closer to the sink.
    closer: Vec<Vec<u32>>,
    comm_range_mm: f64,
}

/// Bucket of a source at `distance_mm` from the sink: bucket `d` covers
/// `(d-1, d]`.
pub fn bucket_of(distance_mm: f64) -> u32 {
    (distance_mm.ceil() as u32).max(1)
}

impl Topology {
    /// Places relays uniformly in the deployment area and sources in their
    /// distance annuli, deterministically from `seed`.
    pub fn generate(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(PLACEMENT_STREAM);
        let area = &cfg.area;
        let relays: Vec<Position> = (0..cfg.topology.node_count)
            .map(|_| {
                Position::new(
                    rng.random::<f64>() * area.width_mm,
                    rng.random::<f64>() * area.height_mm,
                )
            })
            .collect();
        let sources = if cfg.traffic.explicit_sources.is_empty() {
            let mut v = Vec::with_capacity(cfg.source_count());
            for b in 1..=cfg.traffic.buckets {
                for _ in 0..cfg.traffic.sources_per_bucket {
                    v.push(place_in_bucket(cfg, b, &mut rng)?);
                }
            }
            v
        } else {
            cfg.traffic.explicit_sources.clone()
        };
        Self::from_positions(area.nc_position(), &relays, &sources, cfg.topology.comm_range_mm)
    }

    pub fn from_positions(nc: Position, relays: &[Position], sources: &[Position], comm_range_mm: f64) -> Result<Self> {
        let mut nodes = Vec::with_capacity(1 + relays.len() + sources.len());
        nodes.push(NodeInfo {
            id: NodeId::NC,
            position: nc,
            role: NodeRole::Sink,
        });
        for &p in relays {
            nodes.push(NodeInfo {
                id: NodeId(nodes.len() as u32),
                position: p,
                role: NodeRole::Relay,
            });
        }
        for &p in sources {
            let d = p.distance(&nc);
            if !(d > 0.0) {
                return Err(Error::Config(format!("source at {p:?} coincides with the NC")));
            }
            nodes.push(NodeInfo {
                id: NodeId(nodes.len() as u32),
                position: p,
                role: NodeRole::Source { bucket: bucket_of(d) },
            });
        }
        for n in &nodes {
            if !n.position.x.is_finite() || !n.position.y.is_finite() {
                return Err(Error::Config(format!("node {} has a non-finite position", n.id)));
            }
        }
        let adjacency = build_adjacency(&nodes, comm_range_mm);
        let nc_distance: Vec<f64> = nodes.iter().map(|n| n.position.distance(&nc)).collect();
        let closer = adjacency
            .iter()
            .enumerate()
            .map(|(i, list)| {
                list.iter()
                    .enumerate()
                    .filter(|(_, nb)| nodes[nb.index()].is_relay() && nc_distance[nb.index()] < nc_distance[i])
                    .map(|(slot, _)| slot as u32)
                    .collect()
            })
            .collect();
        let adjacency_mm = adjacency
            .iter()
            .enumerate()
            .map(|(i, list)| {
                list.iter()
                    .map(|nb| nodes[i].position.distance(&nodes[nb.index()].position))
                    .collect()
            })
            .collect();
        Ok(Self {
            nodes,
            adjacency,
            adjacency_mm,
            nc_distance,
            closer,
            comm_range_mm,
        })
    }

    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeInfo {
        &self.nodes[id.index()]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        &self.adjacency[id.index()]
    }

    /// Position of `b` in `a`'s neighbor list.
    pub fn neighbor_slot(&self, a: NodeId, b: NodeId) -> Option<usize> {
        self.adjacency[a.index()].binary_search(&b).ok()
    }

    /// Neighbor-list slots of `id`'s relay neighbors strictly closer to the
    /// sink.
    pub fn closer_relay_slots(&self, id: NodeId) -> &[u32] {
        &self.closer[id.index()]
    }

    pub fn are_neighbors(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbor_slot(a, b).is_some()
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        self.node(a).position.distance(&self.node(b).position)
    }

    /// Length of the link `a`-`b`; falls back to the plain distance when
    /// they are not neighbors.
    pub fn link_distance(&self, a: NodeId, b: NodeId) -> f64 {
        match self.neighbor_slot(a, b) {
            Some(i) => self.adjacency_mm[a.index()][i],
            None => self.distance(a, b),
        }
    }

    pub fn distance_to_nc(&self, id: NodeId) -> f64 {
        self.nc_distance[id.index()]
    }

    pub fn comm_range_mm(&self) -> f64 {
        self.comm_range_mm
    }

    pub fn sources(&self) -> impl Iterator<Item = &NodeInfo> + '_ {
        self.nodes.iter().filter(|n| matches!(n.role, NodeRole::Source { .. }))
    }

    pub fn relay_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_relay()).count()
    }
}

fn build_adjacency(nodes: &[NodeInfo], range: f64) -> Vec<Vec<NodeId>> {
    let mut adj = vec![Vec::new(); nodes.len()];
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            let d = a.position.distance(&b.position);
            if d > 0.0 && d <= range {
                adj[a.id.index()].push(b.id);
                adj[b.id.index()].push(a.id);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

/// A point at sink distance in `(b-1, b]` inside the box spanned by the
/// deployment area and the sink.
fn place_in_bucket(cfg: &ScenarioConfig, b: u32, rng: &mut ChaCha8Rng) -> Result<Position> {
    let nc = cfg.area.nc_position();
    let (x0, x1) = (nc.x.min(0.0), nc.x.max(cfg.area.width_mm));
    let (y0, y1) = (nc.y.min(0.0), nc.y.max(cfg.area.height_mm));
    let (r_in, r_out) = ((b - 1) as f64, b as f64);
    for _ in 0..MAX_PLACEMENT_TRIES {
        let r = (r_in * r_in + rng.random::<f64>() * (r_out * r_out - r_in * r_in)).sqrt();
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let p = Position::new(nc.x + r * theta.cos(), nc.y + r * theta.sin());
        let d = p.distance(&nc);
        if p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1 && d > r_in && d <= r_out {
            return Ok(p);
        }
    }
    Err(Error::Config(format!(
        "distance bucket {b} does not intersect the deployment box"
    )))
}
