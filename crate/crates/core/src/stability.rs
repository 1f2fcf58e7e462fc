//! Entropy-weighted link-stability scoring of candidate next hops.
//!
//! Each candidate contributes three factors: residual energy and link
//! quality (larger is better) and distance to the sink (smaller is better).
//! Factors are min-max normalized, weighted by their information utility
//! (one minus the normalized Shannon entropy of the column) and summed into
//! a score in [0, 1].

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NodeId;

pub const FACTORS: usize = 3;

/// One candidate's raw evaluation data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub residual_energy: f64,
    pub link_quality: f64,
    pub distance_to_nc: f64,
}

impl FactorRow {
    pub fn new(residual_energy: f64, link_quality: f64, distance_to_nc: f64) -> Self {
        Self {
            residual_energy,
            link_quality,
            distance_to_nc,
        }
    }

    fn values(&self) -> [f64; FACTORS] {
        [self.residual_energy, self.link_quality, self.distance_to_nc]
    }
}

/// Raw n x 3 evaluation data aligned with candidate ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMatrix {
    rows: Vec<FactorRow>,
    candidate_ids: Vec<NodeId>,
}

impl FactorMatrix {
    pub fn new(candidate_ids: Vec<NodeId>, rows: Vec<FactorRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("factor matrix needs at least one candidate".into()));
        }
        if rows.len() != candidate_ids.len() {
            return Err(Error::InvalidInput(format!(
                "{} factor rows for {} candidates",
                rows.len(),
                candidate_ids.len()
            )));
        }
        for (id, r) in candidate_ids.iter().zip(&rows) {
            let ok = r.values().iter().all(|v| v.is_finite())
                && r.residual_energy >= 0.0
                && r.link_quality > 0.0
                && r.link_quality < 1.0
                && r.distance_to_nc > 0.0;
            if !ok {
                return Err(Error::InvalidInput(format!("invalid factors for {id}: {r:?}")));
            }
        }
        Ok(Self { rows, candidate_ids })
    }

    pub fn rows(&self) -> &[FactorRow] {
        &self.rows
    }

    pub fn candidate_ids(&self) -> &[NodeId] {
        &self.candidate_ids
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Min-max normalized factor data, every entry in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMatrix {
    pub rows: Vec<[f64; FACTORS]>,
}

/// Result of normalization.
#[derive(Debug, Clone, PartialEq)]
pub enum Normalized {
    Matrix(NormalizedMatrix),
    /// A single candidate is selected without scoring.
    SingleCandidate,
}

/// Normalizes energy and link quality as benefit factors and distance as a
/// cost factor. A constant column becomes all ones.
pub fn normalize(matrix: &FactorMatrix) -> Normalized {
    if matrix.len() == 1 {
        return Normalized::SingleCandidate;
    }
    let benefit = [true, true, false];
    let mut rows = vec![[0.0; FACTORS]; matrix.len()];
    for j in 0..FACTORS {
        let col: Vec<f64> = matrix.rows.iter().map(|r| r.values()[j]).collect();
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let span = hi - lo;
        for (i, &v) in col.iter().enumerate() {
            rows[i][j] = if span == 0.0 {
                1.0
            } else if benefit[j] {
                (v - lo) / span
            } else {
                (hi - v) / span
            };
        }
    }
    Normalized::Matrix(NormalizedMatrix { rows })
}

/// Entropy weights of the three factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityWeights {
    pub w: [f64; FACTORS],
    pub e: [f64; FACTORS],
    pub z: [f64; FACTORS],
    pub k_ent: f64,
    /// Set when every factor had zero utility and equal weights were used.
    pub uniform_fallback: bool,
}

/// Computes entropy, utility and weight of each factor column.
pub fn entropy_weights(b: &NormalizedMatrix) -> Result<StabilityWeights> {
    let n = b.rows.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "entropy weighting needs at least two candidates".into(),
        ));
    }
    let k_ent = 1.0 / (n as f64).ln();
    let mut e = [0.0; FACTORS];
    for (j, ej) in e.iter_mut().enumerate() {
        let sum: f64 = b.rows.iter().map(|r| r[j]).sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidInput(format!("factor column {j} sums to zero")));
        }
        let h: f64 = b
            .rows
            .iter()
            .map(|r| r[j] / sum)
            .filter(|&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum();
        let ej_raw = (-k_ent * h).clamp(0.0, 1.0);
        // A uniform column evaluates to 1 - O(eps); treat it as exactly 1.
        *ej = if 1.0 - ej_raw < 1e-12 { 1.0 } else { ej_raw };
    }
    let z = e.map(|ej| 1.0 - ej);
    let total: f64 = z.iter().sum();
    let (w, uniform_fallback) = if total > 0.0 {
        (z.map(|zj| zj / total), false)
    } else {
        ([1.0 / FACTORS as f64; FACTORS], true)
    };
    Ok(StabilityWeights {
        w,
        e,
        z,
        k_ent,
        uniform_fallback,
    })
}

/// Weighted sum of each normalized row.
pub fn stability_scores(b: &NormalizedMatrix, weights: &StabilityWeights) -> Vec<f64> {
    b.rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&weights.w)
                .map(|(v, w)| v * w)
                .sum::<f64>()
                .clamp(0.0, 1.0)
        })
        .collect()
}

/// Number of next hops to keep out of `n` candidates.
pub fn next_hop_count(n: usize, tau: usize) -> usize {
    let tau = tau.max(1);
    if n <= tau {
        n
    } else {
        (n / tau).max(1)
    }
}

/// A selected next hop and its stability score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub id: NodeId,
    pub score: f64,
    pub link_quality: f64,
}

/// Scores every candidate and returns all of them, best first.
pub fn rank_candidates(matrix: &FactorMatrix) -> Result<Vec<ScoredCandidate>> {
    let scores = match normalize(matrix) {
        Normalized::SingleCandidate => vec![1.0],
        Normalized::Matrix(b) => stability_scores(&b, &entropy_weights(&b)?),
    };
    let mut ranked: Vec<ScoredCandidate> = matrix
        .candidate_ids
        .iter()
        .zip(&matrix.rows)
        .zip(scores)
        .map(|((&id, r), score)| ScoredCandidate {
            id,
            score,
            link_quality: r.link_quality,
        })
        .collect();
    ranked.sort_by(compare_ranked);
    Ok(ranked)
}

fn compare_ranked(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.link_quality.total_cmp(&a.link_quality))
        .then(a.id.cmp(&b.id))
}

/// The `m` most stable candidates, best first.
pub fn select_next_hops(matrix: &FactorMatrix, tau: usize) -> Result<Vec<ScoredCandidate>> {
    let mut ranked = rank_candidates(matrix)?;
    ranked.truncate(next_hop_count(matrix.len(), tau));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nm(rows: &[[f64; 3]]) -> NormalizedMatrix {
        NormalizedMatrix { rows: rows.to_vec() }
    }

    fn matrix(rows: &[(f64, f64, f64)]) -> FactorMatrix {
        FactorMatrix::new(
            (1..=rows.len() as u32).map(NodeId).collect(),
            rows.iter().map(|&(e, q, d)| FactorRow::new(e, q, d)).collect(),
        )
        .unwrap()
    }

    fn normalized(m: &FactorMatrix) -> NormalizedMatrix {
        match normalize(m) {
            Normalized::Matrix(b) => b,
            Normalized::SingleCandidate => panic!("expected matrix"),
        }
    }

    #[test]
    fn two_point_normalization() {
        let b = normalized(&matrix(&[(1.0, 0.9, 1.0), (0.0, 0.1, 0.0 + 0.5)]));
        assert_eq!(b.rows[0][0], 1.0);
        assert_eq!(b.rows[1][0], 0.0);
        // distance is a cost factor
        assert_eq!(b.rows[0][2], 0.0);
        assert_eq!(b.rows[1][2], 1.0);
    }

    #[test]
    fn constant_column_is_all_ones() {
        let b = normalized(&matrix(&[(5.0, 0.2, 1.0), (5.0, 0.4, 2.0), (5.0, 0.3, 3.0)]));
        assert!(b.rows.iter().all(|r| r[0] == 1.0));
    }

    #[test]
    fn affine_normalization() {
        let b = normalized(&matrix(&[(2.0, 0.2, 1.0), (6.0, 0.4, 2.0), (10.0, 0.3, 3.0)]));
        let energy: Vec<f64> = b.rows.iter().map(|r| r[0]).collect();
        assert_eq!(energy, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn single_candidate_bypasses_scoring() {
        let m = matrix(&[(1.0, 0.5, 1.0)]);
        assert_eq!(normalize(&m), Normalized::SingleCandidate);
        let sel = select_next_hops(&m, 2).unwrap();
        assert_eq!(sel.len(), 1);
        assert_eq!(sel[0].score, 1.0);
    }

    #[test]
    fn one_hot_columns_give_equal_weights() {
        let b = nm(&[[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let w = entropy_weights(&b).unwrap();
        assert_eq!(w.e, [0.0; 3]);
        assert_eq!(w.z, [1.0; 3]);
        assert_eq!(w.w, [1.0 / 3.0; 3]);
        assert_eq!(w.k_ent, 1.0 / 2f64.ln());
        assert!(!w.uniform_fallback);
        let s = stability_scores(&b, &w);
        assert_eq!(s, vec![2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn uniform_column_carries_no_weight() {
        let b = nm(&[[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [0.5, 1.0, 0.5]]);
        let w = entropy_weights(&b).unwrap();
        assert!((w.e[1] - 1.0).abs() < 1e-12);
        assert!(w.z[1].abs() < 1e-12);
        assert!(w.w[1].abs() < 1e-12);
    }

    #[test]
    fn all_uniform_falls_back_to_equal_weights() {
        let b = nm(&[[1.0; 3], [1.0; 3], [1.0; 3]]);
        let w = entropy_weights(&b).unwrap();
        assert!(w.uniform_fallback);
        assert_eq!(w.w, [1.0 / 3.0; 3]);
    }

    #[test]
    fn three_candidate_weights_match_straight_line_evaluation() {
        // Frozen from a straight-line evaluation of the entropy-weight
        // formulas written independently of this module.
        let b = nm(&[[1.0, 0.9, 1.0], [0.5, 0.5, 0.3], [0.0, 0.1, 0.0]]);
        let w = entropy_weights(&b).unwrap();
        let e = [
            0.579_380_164_285_694_9,
            0.776_649_013_811_951_5,
            0.491_715_000_788_650_7,
        ];
        let wt = [
            0.365_040_321_781_805_9,
            0.193_838_019_383_725_52,
            0.441_121_658_834_468_6,
        ];
        for j in 0..3 {
            assert!((w.e[j] - e[j]).abs() < 1e-9, "e[{j}]");
            assert!((w.w[j] - wt[j]).abs() < 1e-9, "w[{j}]");
        }
        let s = stability_scores(&b, &w);
        let expect = [
            0.980_616_198_061_627_5,
            0.411_775_668_233_106_24,
            0.019_383_801_938_372_552,
        ];
        for i in 0..3 {
            assert!((s[i] - expect[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn extreme_rows() {
        let w = StabilityWeights {
            w: [0.2, 0.5, 0.3],
            e: [0.0; 3],
            z: [0.0; 3],
            k_ent: 1.0,
            uniform_fallback: false,
        };
        let s = stability_scores(&nm(&[[1.0; 3], [0.0; 3]]), &w);
        assert!((s[0] - 1.0).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn fan_out_table() {
        assert_eq!(next_hop_count(2, 2), 2);
        assert_eq!(next_hop_count(5, 2), 2);
        assert_eq!(next_hop_count(7, 2), 3);
        assert_eq!(next_hop_count(1, 5), 1);
        assert_eq!(next_hop_count(3, 3), 3);
    }

    #[test]
    fn two_candidate_selection_order() {
        // energy, quality and distance all favour candidate 1 except distance
        let m = FactorMatrix::new(
            vec![NodeId(7), NodeId(3)],
            vec![FactorRow::new(2.0, 0.9, 3.0), FactorRow::new(1.0, 0.1, 1.0)],
        )
        .unwrap();
        let sel = select_next_hops(&m, 2).unwrap();
        assert_eq!(sel.len(), 2);
        assert_eq!(sel[0].id, NodeId(7));
        assert!((sel[0].score - 2.0 / 3.0).abs() < 1e-15);
        assert!((sel[1].score - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ties_break_on_quality_then_id() {
        let m = FactorMatrix::new(
            vec![NodeId(9), NodeId(4), NodeId(2)],
            vec![
                FactorRow::new(1.0, 0.5, 1.0),
                FactorRow::new(1.0, 0.5, 1.0),
                FactorRow::new(1.0, 0.5, 1.0),
            ],
        )
        .unwrap();
        let ranked = rank_candidates(&m).unwrap();
        let ids: Vec<_> = ranked.iter().map(|c| c.id).collect();
        assert_eq!(ids, vec![NodeId(2), NodeId(4), NodeId(9)]);
    }

    #[test]
    fn rejects_invalid_rows() {
        let bad = |r: FactorRow| FactorMatrix::new(vec![NodeId(1)], vec![r]).is_err();
        assert!(bad(FactorRow::new(-1.0, 0.5, 1.0)));
        assert!(bad(FactorRow::new(1.0, 1.0, 1.0)));
        assert!(bad(FactorRow::new(1.0, 0.5, 0.0)));
        assert!(bad(FactorRow::new(f64::NAN, 0.5, 1.0)));
        assert!(FactorMatrix::new(vec![], vec![]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_matrix(max: usize) -> impl Strategy<Value = FactorMatrix> {
            proptest::collection::vec((0.0f64..4e-6, 0.001f64..0.999, 0.01f64..12.0), 2..=max)
                .prop_map(|rows| matrix(&rows))
        }

        proptest! {
            #[test]
            fn weights_form_a_distribution(m in arb_matrix(8)) {
                let b = normalized(&m);
                let w = entropy_weights(&b).unwrap();
                prop_assert!((w.w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for j in 0..3 {
                    prop_assert!(w.w[j] >= 0.0);
                    prop_assert!((0.0..=1.0).contains(&w.e[j]));
                    prop_assert_eq!(w.z[j], 1.0 - w.e[j]);
                }
                for s in stability_scores(&b, &w) {
                    prop_assert!((0.0..=1.0).contains(&s));
                }
            }

            #[test]
            fn scores_are_row_permutation_equivariant(m in arb_matrix(7), seed in any::<u64>()) {
                let n = m.len();
                let mut perm: Vec<usize> = (0..n).collect();
                let mut x = seed;
                for i in (1..n).rev() {
                    x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    perm.swap(i, (x >> 33) as usize % (i + 1));
                }
                let permuted = FactorMatrix::new(
                    perm.iter().map(|&i| m.candidate_ids()[i]).collect(),
                    perm.iter().map(|&i| m.rows()[i]).collect(),
                ).unwrap();
                let b = normalized(&m);
                let s = stability_scores(&b, &entropy_weights(&b).unwrap());
                let bp = normalized(&permuted);
                let sp = stability_scores(&bp, &entropy_weights(&bp).unwrap());
                for (k, &i) in perm.iter().enumerate() {
                    prop_assert!((sp[k] - s[i]).abs() < 1e-12);
                }
            }

            #[test]
            fn dominant_row_scores_highest(m in arb_matrix(6)) {
                let b = normalized(&m);
                let w = entropy_weights(&b).unwrap();
                let s = stability_scores(&b, &w);
                let max = s.iter().cloned().fold(f64::MIN, f64::max);
                for (i, r) in b.rows.iter().enumerate() {
                    let dominant = (0..3).all(|j| b.rows.iter().all(|o| r[j] >= o[j]));
                    if dominant {
                        prop_assert!((s[i] - max).abs() < 1e-12);
                    }
                }
            }

            #[test]
            fn duplicate_row_scores_like_its_original(m in arb_matrix(6), pick in any::<prop::sample::Index>()) {
                let i = pick.index(m.len());
                let mut ids = m.candidate_ids().to_vec();
                let mut rows = m.rows().to_vec();
                ids.push(NodeId(100));
                rows.push(rows[i]);
                let dup = FactorMatrix::new(ids, rows).unwrap();
                let b = normalized(&dup);
                prop_assert_eq!(&b.rows[..m.len()], &normalized(&m).rows[..]);
                let s = stability_scores(&b, &entropy_weights(&b).unwrap());
                prop_assert_eq!(s[i], s[m.len()]);
            }

            #[test]
            fn fan_out_is_bounded(n in 1usize..500, tau in 1usize..20) {
                let m = next_hop_count(n, tau);
                prop_assert!(m >= 1 && m <= n);
            }
        }
    }
}
