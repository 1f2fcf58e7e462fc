//! Benchmark fixtures.

use nanosim_core::model::RoutePath;
use nanosim_core::stability::{FactorMatrix, FactorRow};
use nanosim_core::{LogDetail, NodeId, ProtocolKind, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `count` random candidate matrices with `n` rows each.
pub fn factor_matrices(n: usize, count: usize, seed: u64) -> Vec<FactorMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let rows = (0..n)
                .map(|_| {
                    FactorRow::new(
                        rng.random::<f64>() * 8e-6,
                        0.01 + 0.98 * rng.random::<f64>(),
                        0.1 + 9.9 * rng.random::<f64>(),
                    )
                })
                .collect();
            FactorMatrix::new((1..=n as u32).map(NodeId).collect(), rows).expect("valid factors")
        })
        .collect()
}

/// A main path and `count` scored candidates sharing its endpoints, drawn
/// from a pool of `pool` relays.
pub fn route_set(hops: usize, count: usize, pool: u32, seed: u64) -> (RoutePath, Vec<RoutePath>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = NodeId(pool + 1);
    let make = |rng: &mut ChaCha8Rng| {
        let mut ids = vec![source];
        while ids.len() < hops - 1 {
            let id = NodeId(rng.random_range(1..=pool));
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        ids.push(NodeId::NC);
        let scores = (0..hops - 1).map(|_| rng.random::<f64>()).collect();
        RoutePath::from_parts(ids, scores).expect("loop-free path")
    };
    let main = make(&mut rng);
    let others = (0..count).map(|_| make(&mut rng)).collect();
    (main, others)
}

/// A scenario of `nodes` relays running `protocol` for `sim_time_s`.
pub fn scenario(protocol: ProtocolKind, nodes: usize, sim_time_s: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        protocol,
        ..Default::default()
    };
    cfg.topology.node_count = nodes;
    cfg.traffic.sim_time_s = sim_time_s;
    cfg.traffic.drain_s = 0.2;
    cfg.log.detail = LogDetail::Flows;
    cfg
}
