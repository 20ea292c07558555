use super::{DesignOutput, Role};
use crate::error::{Error, Result};
use crate::graph::{MarketplaceGraph, NodeId};

/// Multiplicative score factors that turn an existing score-and-normalize
/// ranker into the design: for every consumer `j` in the exposure set,
/// `b_ij S(i,j) / Σ_k b_kj S(k,j) = p*_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoostTable {
    /// One factor per edge; 1 on edges that need no boost.
    pub factors: Vec<f64>,
    pub consumers: Vec<NodeId>,
}

impl BoostTable {
    /// Applies the factors to `scores` and normalizes per consumer.
    pub fn apply(&self, graph: &MarketplaceGraph, scores: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; graph.n_edges()];
        for j in graph.nodes() {
            let total: f64 = graph.in_edges(j).iter().map(|&e| self.factors[e] * scores[e]).sum();
            for &e in graph.in_edges(j) {
                out[e] = self.factors[e] * scores[e] / total;
            }
        }
        out
    }
}

/// Boost factors for the exposure set of `design`. Baseline weights are the
/// per-consumer normalized `scores`, which should be proportional to `p_base`
/// for the non-optimized edges to come out right. When `scores` is `None`,
/// `p_base` itself is used.
pub fn compute_boost_factors(graph: &MarketplaceGraph, design: &DesignOutput, scores: Option<&[f64]>) -> Result<BoostTable> {
    let p_base = graph.p_base();
    let scores = scores.unwrap_or(&p_base);
    if scores.len() != graph.n_edges() {
        return Err(Error::Input(format!("boost: expected {} scores, got {}", graph.n_edges(), scores.len())));
    }
    let roles = design.partition.roles(graph.n_nodes())?;
    let mut factors = vec![1.0; graph.n_edges()];
    let mut saturated = Vec::new();

    for &j in &design.bounds.consumers {
        let parents = graph.in_edges(j);
        if let Some(&e) = parents.iter().find(|&&e| !(scores[e] > 0.0) || !scores[e].is_finite()) {
            let edge = graph.edge(e);
            if matches!(roles[edge.src.index()], Role::Omega(_)) {
                return Err(Error::DegenerateScore {
                    src: edge.src,
                    dst: edge.dst,
                });
            }
            return Err(Error::Input(format!("boost: score on {}->{} must be positive", edge.src, edge.dst)));
        }
        let total: f64 = parents.iter().map(|&e| scores[e]).sum();
        let optimized: Vec<_> = parents
            .iter()
            .copied()
            .filter(|&e| matches!(roles[graph.edge(e).src.index()], Role::Omega(_)))
            .collect();
        let base_mass: f64 = optimized.iter().map(|&e| scores[e] / total).sum();
        let star_mass: f64 = optimized.iter().map(|&e| design.p_star[e]).sum();
        if optimized.len() == parents.len() {
            // no other parent to absorb the remainder, so any common scale works
            for &e in &optimized {
                factors[e] = design.p_star[e] * total / scores[e];
            }
            continue;
        }
        if 1.0 - star_mass <= 0.0 {
            saturated.push(j);
            continue;
        }
        for &e in &optimized {
            let p0 = scores[e] / total;
            factors[e] = design.p_star[e] * (1.0 - base_mass) / (p0 * (1.0 - star_mass));
        }
    }
    if !saturated.is_empty() {
        return Err(Error::DivisionByZero(saturated));
    }
    Ok(BoostTable {
        factors,
        consumers: design.bounds.consumers.clone(),
    })
}
