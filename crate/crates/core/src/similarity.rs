//! Overlap between a candidate route and the main route, and backup route
//! selection by lowest overlap.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{shared_link_count, shared_node_count, RoutePath};

/// How shared nodes are counted before the endpoint correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NodeCountConvention {
    /// Shared nodes excluding the common source. Reproduces the worked
    /// example (routes sharing A, G, H, J count 3 nodes).
    #[default]
    ExcludeSource,
    /// Plain set intersection.
    Intersection,
}

/// Weights of node and link correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityParams {
    pub k_sim: f64,
    pub sigma: f64,
    pub convention: NodeCountConvention,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        Self {
            k_sim: 0.5,
            sigma: 0.5,
            convention: NodeCountConvention::ExcludeSource,
        }
    }
}

impl SimilarityParams {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.k_sim) || !in_unit(self.sigma) || (self.k_sim + self.sigma - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "similarity weights must be in (0, 1) and sum to 1, got k={} sigma={}",
                self.k_sim, self.sigma
            )));
        }
        Ok(())
    }

    fn node_count(&self, main: &RoutePath, candidate: &RoutePath) -> usize {
        let n = shared_node_count(main, candidate);
        match self.convention {
            NodeCountConvention::ExcludeSource => n.saturating_sub(1),
            NodeCountConvention::Intersection => n,
        }
    }
}

/// Route similarity: `k * max(0, N - 2) + sigma * L`.
pub fn similarity(main: &RoutePath, candidate: &RoutePath, params: &SimilarityParams) -> Result<f64> {
    if main.source() != candidate.source() || main.last() != candidate.last() {
        return Err(Error::InvalidInput(format!(
            "routes {main} and {candidate} do not share endpoints"
        )));
    }
    let n = params.node_count(main, candidate);
    let l = shared_link_count(main, candidate);
    Ok(params.k_sim * n.saturating_sub(2) as f64 + params.sigma * l as f64)
}

/// Orders backup candidates: lower similarity, then higher total stability,
/// then fewer hops, then the hop sequence.
fn backup_order(a: (&RoutePath, f64), b: (&RoutePath, f64)) -> Ordering {
    a.1.total_cmp(&b.1)
        .then(b.0.total_stability().total_cmp(&a.0.total_stability()))
        .then(a.0.len().cmp(&b.0.len()))
        .then_with(|| a.0.hops().cmp(b.0.hops()))
}

/// Picks the candidate least similar to `main`, or `None` when there are no
/// candidates.
pub fn select_backup<'a>(
    main: &RoutePath,
    candidates: &'a [RoutePath],
    params: &SimilarityParams,
) -> Result<Option<&'a RoutePath>> {
    let mut best: Option<(&RoutePath, f64)> = None;
    for c in candidates {
        let omega = similarity(main, c, params)?;
        best = match best {
            Some(b) if backup_order(b, (c, omega)) != Ordering::Greater => Some(b),
            _ => Some((c, omega)),
        };
    }
    Ok(best.map(|(p, _)| p))
}

/// Main-route order used by the sink: higher total stability, then fewer
/// hops, then the hop sequence.
pub fn main_order(a: &RoutePath, b: &RoutePath) -> Ordering {
    b.total_stability()
        .total_cmp(&a.total_stability())
        .then(a.len().cmp(&b.len()))
        .then_with(|| a.hops().cmp(b.hops()))
}
