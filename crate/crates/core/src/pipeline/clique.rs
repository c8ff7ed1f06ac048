use serde::{Deserialize, Serialize};

use super::RelationMatrix;
use crate::error::{Error, Result};

/// Largest graph the exact clique search accepts.
pub const MAX_CLIQUE_NODES: usize = 25;

/// A selected clique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliqueResult {
    /// Node indices in increasing order.
    pub members: Vec<usize>,
    /// Sum of edge weights over member pairs.
    pub compatibility: f64,
    /// True when no pair satisfied the edge threshold and the single most
    /// probable node was returned instead.
    pub fallback: bool,
}

/// Symmetrized edge weights `w(i, j) = (R(i, j) + R(j, i)) / 2`, row-major.
pub fn edge_weights(relation: &RelationMatrix) -> Vec<f64> {
    let t = relation.t();
    let mut w = vec![0.0; t * t];
    for i in 0..t {
        for j in 0..t {
            if i != j {
                w[i * t + j] = (relation.get(i, j) + relation.get(j, i)) / 2.0;
            }
        }
    }
    w
}

/// Sum of `w(i, j)` over member pairs `i < j`.
///
/// Accumulated member by member (each new member's edges to the earlier
/// ones first), the same order the clique search uses, so equal cliques get
/// bit-identical values.
pub fn compatibility(weights: &[f64], t: usize, members: &[usize]) -> f64 {
    let mut total = 0.0;
    for (b, &j) in members.iter().enumerate() {
        let gain: f64 = members[..b].iter().map(|&i| weights[i * t + j]).sum();
        total += gain;
    }
    total
}

struct Search<'a> {
    t: usize,
    weights: &'a [f64],
    adjacency: Vec<u32>,
    best: Option<(Vec<usize>, f64)>,
}

impl Search<'_> {
    fn consider(&mut self, clique: &[usize], value: f64) {
        let better = match &self.best {
            None => true,
            Some((members, best)) => {
                value > *best || (value == *best && clique.len() > members.len())
            }
        };
        if better {
            self.best = Some((clique.to_vec(), value));
        }
    }

    /// Visits every clique extending `clique` by nodes in `allowed` (common
    /// neighbors of all members, all above the last member), in
    /// lexicographic order of the sorted member lists.
    fn extend(&mut self, clique: &mut Vec<usize>, value: f64, mut allowed: u32) {
        while allowed != 0 {
            let v = allowed.trailing_zeros() as usize;
            allowed &= allowed - 1;
            let gain: f64 = clique.iter().map(|&u| self.weights[u * self.t + v]).sum();
            clique.push(v);
            let next = value + gain;
            if clique.len() >= 2 {
                self.consider(clique, next);
            }
            // remaining bits are all above v and adjacent to every member
            self.extend(clique, next, allowed & self.adjacency[v]);
            clique.pop();
        }
    }
}

/// Maximum-weight clique among edges with `w > kappa`.
///
/// Every clique with at least two members is enumerated exactly; ties go to
/// the larger clique, then to the lexicographically smallest member list.
/// When no edge passes the threshold the node with the highest probability
/// is returned on its own.
pub fn mwcs(relation: &RelationMatrix, probabilities: &[f64], kappa: f64) -> Result<CliqueResult> {
    let t = relation.t();
    if t == 0 {
        return Err(Error::EmptyInput(
            "clique selection needs at least one node",
        ));
    }
    if t > MAX_CLIQUE_NODES {
        return Err(Error::TooManyNodes {
            count: t,
            max: MAX_CLIQUE_NODES,
        });
    }
    if probabilities.len() != t {
        return Err(Error::DimensionMismatch {
            expected: t,
            found: probabilities.len(),
        });
    }
    let weights = edge_weights(relation);
    let adjacency = (0..t)
        .map(|i| {
            (0..t)
                .filter(|&j| j != i && weights[i * t + j] > kappa)
                .fold(0u32, |acc, j| acc | (1 << j))
        })
        .collect();
    let mut search = Search {
        t,
        weights: &weights,
        adjacency,
        best: None,
    };
    let all = if t == 32 { !0 } else { (1u32 << t) - 1 };
    search.extend(&mut Vec::with_capacity(t), 0.0, all);

    Ok(match search.best {
        Some((members, _)) => {
            let compatibility = compatibility(&weights, t, &members);
            CliqueResult {
                members,
                compatibility,
                fallback: false,
            }
        }
        None => {
            let mut best = 0;
            for (i, p) in probabilities.iter().enumerate() {
                if *p > probabilities[best] {
                    best = i;
                }
            }
            CliqueResult {
                members: vec![best],
                compatibility: 0.0,
                fallback: true,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(t: usize, w: f64) -> RelationMatrix {
        let values = (0..t * t)
            .map(|i| if i / t == i % t { 1.0 } else { w })
            .collect();
        RelationMatrix::new(t, values).unwrap()
    }

    #[test]
    fn single_node_falls_back() {
        let r = uniform(1, 0.0);
        let c = mwcs(&r, &[0.3], 0.3).unwrap();
        assert_eq!(c.members, vec![0]);
        assert!(c.fallback);
    }

    #[test]
    fn complete_positive_graph_selects_everything() {
        let r = uniform(4, 0.9);
        let c = mwcs(&r, &[0.1; 4], 0.5).unwrap();
        assert_eq!(c.members, vec![0, 1, 2, 3]);
        assert!((c.compatibility - 5.4).abs() < 1e-12);
        assert!(!c.fallback);
    }

    #[test]
    fn no_feasible_edge_picks_most_probable() {
        let r = uniform(4, 0.1);
        let c = mwcs(&r, &[0.2, 0.7, 0.7, 0.1], 0.3).unwrap();
        assert_eq!(c.members, vec![1]);
        assert!(c.fallback);
    }

    #[test]
    fn asymmetric_relation_is_symmetrized() {
        // R(0,1) = 1.0, R(1,0) = -0.2 -> w = 0.4 > 0.3
        let r = RelationMatrix::new(2, vec![1.0, 1.0, -0.2, 1.0]).unwrap();
        let c = mwcs(&r, &[0.5, 0.5], 0.3).unwrap();
        assert_eq!(c.members, vec![0, 1]);
        assert!((c.compatibility - 0.4).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_lexicographically_smallest() {
        // 0-1 and 2-3 both weigh 0.8, nothing else connects
        let mut v = vec![0.0; 16];
        for (i, j) in [(0, 1), (2, 3)] {
            v[i * 4 + j] = 0.8;
            v[j * 4 + i] = 0.8;
        }
        let r = RelationMatrix::new(4, v).unwrap();
        assert_eq!(mwcs(&r, &[0.0; 4], 0.3).unwrap().members, vec![0, 1]);
    }

    #[test]
    fn node_bound_is_enforced() {
        let r = uniform(26, 0.5);
        assert!(matches!(
            mwcs(&r, &[0.5; 26], 0.3),
            Err(Error::TooManyNodes { count: 26, max: 25 })
        ));
        assert!(mwcs(&uniform(3, 0.5), &[0.5; 2], 0.3).is_err());
    }
}
