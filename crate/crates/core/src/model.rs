//! Shared domain types: node identifiers, positions, route paths and the
//! control-message vocabulary, plus the path algebra used by route
//! similarity.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a simulated node. The nano control node (the sink) always
/// has id 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    /// The nano control node.
    pub const NC: NodeId = NodeId(0);

    pub fn is_nc(self) -> bool {
        self == Self::NC
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_nc() {
            write!(f, "NC")
        } else {
            write!(f, "n{}", self.0)
        }
    }
}

/// Planar position in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// An ordered, loop-free sequence of hops from a source to the sink together
/// with the link-stability score of every hop.
///
/// `hop_scores[i]` is the stability of the link `hops[i] -> hops[i + 1]`, so a
/// path under construction (an RREQ route record) has one score fewer than
/// it has hops. `total_stability` is kept equal to the running sum of the
/// scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePath {
    hops: Vec<NodeId>,
    hop_scores: Vec<f64>,
    total_stability: f64,
}

impl RoutePath {
    /// A record that contains only its originator.
    pub fn origin(source: NodeId) -> Self {
        Self {
            hops: vec![source],
            hop_scores: Vec::new(),
            total_stability: 0.0,
        }
    }

    /// Builds a path from hops and per-hop scores, checking loop freedom and
    /// score alignment. The path may be partial (it need not end at the NC).
    pub fn from_parts(hops: Vec<NodeId>, hop_scores: Vec<f64>) -> Result<Self> {
        if hops.is_empty() {
            return Err(Error::InvalidInput("route path has no hops".into()));
        }
        if hop_scores.len() + 1 != hops.len() {
            return Err(Error::InvalidInput(format!(
                "route path with {} hops needs {} hop scores, got {}",
                hops.len(),
                hops.len() - 1,
                hop_scores.len()
            )));
        }
        if let Some(&s) = hop_scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::InvalidInput(format!("invalid hop stability {s}")));
        }
        let mut seen = BTreeSet::new();
        for &h in &hops {
            if !seen.insert(h) {
                return Err(Error::InvalidInput(format!("route path visits {h} twice")));
            }
        }
        let total_stability = hop_scores.iter().sum();
        Ok(Self {
            hops,
            hop_scores,
            total_stability,
        })
    }

    /// Convenience constructor for paths whose per-hop scores are not known;
    /// every hop gets stability 0.
    pub fn unscored(hops: Vec<NodeId>) -> Result<Self> {
        let n = hops.len().saturating_sub(1);
        Self::from_parts(hops, vec![0.0; n])
    }

    /// Same as [`RoutePath::unscored`] but spreads `total` evenly over the
    /// hops. Used where only the accumulated total matters.
    pub fn with_total(hops: Vec<NodeId>, total: f64) -> Result<Self> {
        let n = hops.len().saturating_sub(1).max(1);
        let mut p = Self::unscored(hops)?;
        if !p.hop_scores.is_empty() {
            let each = total / n as f64;
            p.hop_scores.iter_mut().for_each(|s| *s = each);
        }
        p.total_stability = total;
        Ok(p)
    }

    pub fn hops(&self) -> &[NodeId] {
        &self.hops
    }

    pub fn hop_scores(&self) -> &[f64] {
        &self.hop_scores
    }

    pub fn total_stability(&self) -> f64 {
        self.total_stability
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn source(&self) -> NodeId {
        self.hops[0]
    }

    pub fn last(&self) -> NodeId {
        *self.hops.last().expect("route path is never empty")
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.hops.contains(&node)
    }

    /// Whether the undirected link `a - b` is traversed by this path.
    pub fn contains_link(&self, a: NodeId, b: NodeId) -> bool {
        self.hops
            .windows(2)
            .any(|w| (w[0] == a && w[1] == b) || (w[0] == b && w[1] == a))
    }

    /// Whether the path is a complete source-to-sink route.
    pub fn is_complete(&self) -> bool {
        self.hops.len() >= 2 && self.last().is_nc()
    }

    /// Appends a hop reached over a link of stability `score`.
    pub fn extend(&self, next: NodeId, score: f64) -> Result<Self> {
        if self.contains(next) {
            return Err(Error::InvalidInput(format!("route path already contains {next}")));
        }
        let mut p = self.clone();
        p.hops.push(next);
        p.hop_scores.push(score);
        p.total_stability += score;
        Ok(p)
    }

    /// The node after `node` on this path.
    pub fn next_after(&self, node: NodeId) -> Option<NodeId> {
        let i = self.hops.iter().position(|&h| h == node)?;
        self.hops.get(i + 1).copied()
    }

    /// The node before `node` on this path.
    pub fn prev_before(&self, node: NodeId) -> Option<NodeId> {
        let i = self.hops.iter().position(|&h| h == node)?;
        i.checked_sub(1).map(|j| self.hops[j])
    }

    /// The tail of the path starting at `node`, keeping the scores of the
    /// links it still contains.
    pub fn suffix_from(&self, node: NodeId) -> Option<RoutePath> {
        let i = self.hops.iter().position(|&h| h == node)?;
        let hops = self.hops[i..].to_vec();
        let scores = self.hop_scores[i.min(self.hop_scores.len())..].to_vec();
        RoutePath::from_parts(hops, scores).ok()
    }

    /// The stability of the first link of the path, if any.
    pub fn first_hop_score(&self) -> Option<f64> {
        self.hop_scores.first().copied()
    }
}

impl fmt::Display for RoutePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, h) in self.hops.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{h}")?;
        }
        Ok(())
    }
}

/// Number of distinct nodes that appear on both paths.
pub fn shared_node_count(a: &RoutePath, b: &RoutePath) -> usize {
    let sa: BTreeSet<_> = a.hops().iter().collect();
    b.hops().iter().collect::<BTreeSet<_>>().intersection(&sa).count()
}

fn undirected_links(p: &RoutePath) -> BTreeSet<(NodeId, NodeId)> {
    p.hops().windows(2).map(|w| (w[0].min(w[1]), w[0].max(w[1]))).collect()
}

/// Number of undirected links traversed by both paths.
pub fn shared_link_count(a: &RoutePath, b: &RoutePath) -> usize {
    undirected_links(a).intersection(&undirected_links(b)).count()
}

/// The kinds of control and data messages exchanged by nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MessageKind {
    Ndis,
    Nfee,
    Rreq,
    Rrep,
    Ack,
    Hello,
    Rerr,
    Data,
    DataAck,
}

impl MessageKind {
    pub const CONTROL: [MessageKind; 7] = [
        MessageKind::Ndis,
        MessageKind::Nfee,
        MessageKind::Rreq,
        MessageKind::Rrep,
        MessageKind::Ack,
        MessageKind::Hello,
        MessageKind::Rerr,
    ];

    pub fn is_control(self) -> bool {
        !matches!(self, MessageKind::Data | MessageKind::DataAck)
    }
}

/// Accounting sizes, in bits, of every message kind.
///
/// Messages in the simulator carry full variable-length fields; these sizes
/// are what a transmission costs in the energy model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WireSizes {
    pub ndis: u32,
    pub nfee: u32,
    pub rreq: u32,
    pub rrep: u32,
    pub ack: u32,
    pub hello: u32,
    pub rerr: u32,
    pub data_ack: u32,
}

impl Default for WireSizes {
    fn default() -> Self {
        Self {
            ndis: 16,
            nfee: 16,
            rreq: 48,
            rrep: 48,
            ack: 16,
            hello: 16,
            rerr: 16,
            data_ack: 16,
        }
    }
}

impl WireSizes {
    /// Size of a message of `kind`; data packets use `packet_bits`.
    pub fn bits(&self, kind: MessageKind, packet_bits: u32) -> u32 {
        match kind {
            MessageKind::Ndis => self.ndis,
            MessageKind::Nfee => self.nfee,
            MessageKind::Rreq => self.rreq,
            MessageKind::Rrep => self.rrep,
            MessageKind::Ack => self.ack,
            MessageKind::Hello => self.hello,
            MessageKind::Rerr => self.rerr,
            MessageKind::Data => packet_bits,
            MessageKind::DataAck => self.data_ack,
        }
    }

    /// Bits of the four messages a node must be able to afford before it
    /// joins route establishment.
    pub fn establishment_bits(&self) -> u32 {
        self.ndis + self.nfee + self.rreq + self.rrep
    }
}

/// A route request as it travels from the source towards the sink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRequest {
    pub source: NodeId,
    pub destination: NodeId,
    pub request_id: u32,
    /// Route record so far, ending with the sender of this copy.
    pub record: RoutePath,
    /// Stability of the link this copy is travelling over.
    pub hop_score: f64,
    /// Set when the sender forwarded along its cached route instead of
    /// running candidate discovery.
    pub via_cache: bool,
}

impl RouteRequest {
    /// Total link stability including the hop this copy travels over.
    pub fn total_stability(&self) -> f64 {
        self.record.total_stability() + self.hop_score
    }
}

/// The sink's answer to a route request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteReply {
    pub request_id: u32,
    pub main: RoutePath,
    pub backup: Option<RoutePath>,
}

/// A route error travelling back to the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteError {
    pub source: NodeId,
    pub request_id: u32,
    pub failed_from: NodeId,
    pub failed_to: NodeId,
    /// Hops from the source to `failed_from`, walked backwards.
    pub route: Vec<NodeId>,
}

/// Control messages exchanged by the routing protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControlMessage {
    /// Neighbor discovery broadcast. `nonce` matches replies to the
    /// discovery round that asked for them.
    Ndis {
        nonce: u64,
    },
    /// Energy-gated reply to an NDIS.
    Nfee {
        neighbor: NodeId,
        residual_energy: f64,
        addressee: NodeId,
        nonce: u64,
    },
    Rreq(RouteRequest),
    Rrep(RouteReply),
    Ack,
    Hello {
        residual_energy: f64,
    },
    Rerr(RouteError),
}

impl ControlMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            ControlMessage::Ndis { .. } => MessageKind::Ndis,
            ControlMessage::Nfee { .. } => MessageKind::Nfee,
            ControlMessage::Rreq(_) => MessageKind::Rreq,
            ControlMessage::Rrep(_) => MessageKind::Rrep,
            ControlMessage::Ack => MessageKind::Ack,
            ControlMessage::Hello { .. } => MessageKind::Hello,
            ControlMessage::Rerr(_) => MessageKind::Rerr,
        }
    }

    pub fn wire_size_bits(&self, sizes: &WireSizes) -> u32 {
        sizes.bits(self.kind(), 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn path(ids: &[u32]) -> RoutePath {
        RoutePath::unscored(ids.iter().map(|&i| NodeId(i)).collect()).unwrap()
    }

    // A=1 B=2 C=3 D=4 E=5 F=6 G=7 H=8 I=9 J=0 (sink)
    fn figure_paths() -> (RoutePath, RoutePath) {
        (path(&[1, 2, 4, 7, 8, 0]), path(&[1, 3, 5, 6, 9, 7, 8, 0]))
    }

    #[test]
    fn worked_example_counts() {
        let (main, cand) = figure_paths();
        assert_eq!(shared_node_count(&main, &cand), 4);
        assert_eq!(shared_link_count(&main, &cand), 2);
    }

    #[test]
    fn identity_counts() {
        let p = path(&[5, 6, 7, 8, 0]);
        assert_eq!(shared_node_count(&p, &p), 5);
        assert_eq!(shared_link_count(&p, &p), 4);
    }

    #[test]
    fn disjoint_except_endpoints() {
        let a = path(&[1, 2, 3, 0]);
        let b = path(&[1, 4, 5, 6, 0]);
        assert_eq!(shared_node_count(&a, &b), 2);
        assert_eq!(shared_link_count(&a, &b), 0);
    }

    #[test]
    fn links_are_undirected() {
        let a = path(&[1, 2, 3]);
        let b = path(&[3, 2, 1]);
        assert_eq!(shared_link_count(&a, &b), 2);
    }

    #[test]
    fn rejects_loops_and_bad_scores() {
        assert!(RoutePath::unscored(vec![NodeId(1), NodeId(2), NodeId(1)]).is_err());
        assert!(RoutePath::from_parts(vec![NodeId(1), NodeId(2)], vec![]).is_err());
        assert!(RoutePath::from_parts(vec![NodeId(1), NodeId(2)], vec![-0.1]).is_err());
        assert!(RoutePath::from_parts(vec![], vec![]).is_err());
    }

    #[test]
    fn extend_accumulates_stability() {
        let p = RoutePath::origin(NodeId(3))
            .extend(NodeId(4), 0.5)
            .unwrap()
            .extend(NodeId(0), 0.25)
            .unwrap();
        assert_eq!(p.total_stability(), 0.75);
        assert!(p.is_complete());
        assert!(p.extend(NodeId(4), 0.1).is_err());
        let tail = p.suffix_from(NodeId(4)).unwrap();
        assert_eq!(tail.hops(), &[NodeId(4), NodeId(0)]);
        assert_eq!(tail.total_stability(), 0.25);
        assert_eq!(p.next_after(NodeId(3)), Some(NodeId(4)));
        assert_eq!(p.prev_before(NodeId(3)), None);
    }

    #[test]
    fn wire_sizes_match_constants() {
        let sizes = WireSizes::default();
        assert_eq!(ControlMessage::Ndis { nonce: 1 }.wire_size_bits(&sizes), 16);
        let nfee = ControlMessage::Nfee {
            neighbor: NodeId(1),
            residual_energy: 1.0,
            addressee: NodeId(2),
            nonce: 1,
        };
        assert_eq!(nfee.wire_size_bits(&sizes), 16);
        let req = RouteRequest {
            source: NodeId(1),
            destination: NodeId::NC,
            request_id: 1,
            record: RoutePath::origin(NodeId(1)),
            hop_score: 0.3,
            via_cache: false,
        };
        assert_eq!(ControlMessage::Rreq(req).wire_size_bits(&sizes), 48);
        let rep = RouteReply {
            request_id: 1,
            main: path(&[1, 0]),
            backup: None,
        };
        assert_eq!(ControlMessage::Rrep(rep).wire_size_bits(&sizes), 48);
        assert_eq!(sizes.establishment_bits(), 128);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_path() -> impl Strategy<Value = RoutePath> {
            proptest::sample::subsequence((1u32..16).collect::<Vec<_>>(), 1..10)
                .prop_shuffle()
                .prop_map(|mut v| {
                    v.insert(0, 20);
                    v.push(0);
                    path(&v)
                })
        }

        proptest! {
            #[test]
            fn counts_are_symmetric(a in arb_path(), b in arb_path()) {
                prop_assert_eq!(shared_node_count(&a, &b), shared_node_count(&b, &a));
                prop_assert_eq!(shared_link_count(&a, &b), shared_link_count(&b, &a));
            }

            #[test]
            fn links_bounded_by_nodes(a in arb_path(), b in arb_path()) {
                let n = shared_node_count(&a, &b);
                prop_assert!(shared_link_count(&a, &b) <= n.saturating_sub(1));
            }

            #[test]
            fn self_link_count(a in arb_path()) {
                prop_assert_eq!(shared_link_count(&a, &a), a.len() - 1);
            }
        }
    }
}
