use crate::design::{Partition, Role};
use crate::error::{Error, Result};
use crate::graph::{MarketplaceGraph, NodeId};

/// Observed exposures of one measurement arm.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArmExposure {
    pub producers: Vec<NodeId>,
    /// Total exposure under the design.
    pub z_star: Vec<f64>,
    /// Per-edge exposure towards children that received this arm's consumer-side experience.
    pub target_samples: Vec<Vec<(NodeId, f64)>>,
    /// Fraction of children observed.
    pub rho: Vec<f64>,
    /// `(observed − 1)/(children − 1)`, 1 for single-child producers.
    pub rho_prime: Vec<f64>,
}

/// `(ρ, ρ')` for a producer with `selected` of its `children` observed.
pub fn selection_rates(selected: usize, children: usize) -> (f64, f64) {
    let rho = selected as f64 / children as f64;
    let rho_prime = if children == 1 {
        1.0
    } else {
        selected.saturating_sub(1) as f64 / (children - 1) as f64
    };
    (rho, rho_prime)
}

impl ArmExposure {
    pub fn len(&self) -> usize {
        self.producers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.producers.is_empty()
    }

    pub fn push(&mut self, producer: NodeId, z_star: f64, samples: Vec<(NodeId, f64)>, n_children: usize) -> Result<()> {
        if n_children == 0 || samples.len() > n_children {
            return Err(Error::Input(format!(
                "estimator: producer {producer} has {} target samples but {n_children} children",
                samples.len()
            )));
        }
        let (rho, rho_prime) = selection_rates(samples.len(), n_children);
        self.producers.push(producer);
        self.z_star.push(z_star);
        self.target_samples.push(samples);
        self.rho.push(rho);
        self.rho_prime.push(rho_prime);
        Ok(())
    }

    pub(crate) fn stats(&self) -> Vec<ProducerStats> {
        self.target_samples
            .iter()
            .zip(self.rho.iter().zip(&self.rho_prime))
            .map(|(samples, (&rho, &rho_prime))| {
                let v1: f64 = samples.iter().map(|s| s.1).sum();
                ProducerStats {
                    v1,
                    v2: samples.iter().map(|s| s.1 * s.1).sum(),
                    v3: v1 * v1,
                    rho,
                    rho_rho_prime: rho * rho_prime,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExposureSample {
    pub arms: Vec<ArmExposure>,
}

impl ExposureSample {
    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }
}

/// Gathers exposures from per-edge mediator values observed under the design.
///
/// Consumers in `Ω_r ∪ Λ_r` see exactly arm `r`'s weights under the design, so
/// their incoming edges double as samples of the arm-`r` exposure. Missing
/// values are NaN.
pub fn collect_exposures(graph: &MarketplaceGraph, partition: &Partition, edge_values: &[f64]) -> Result<ExposureSample> {
    if edge_values.len() != graph.n_edges() {
        return Err(Error::Input(format!(
            "estimator: expected {} edge values, got {}",
            graph.n_edges(),
            edge_values.len()
        )));
    }
    let roles = partition.roles(graph.n_nodes())?;
    let mut sample = ExposureSample {
        arms: vec![ArmExposure::default(); partition.n_arms()],
    };
    for (r, producers) in partition.omega.iter().enumerate() {
        for &i in producers {
            let edges = graph.out_edges(i);
            if edges.is_empty() {
                continue;
            }
            let mut z_star = 0.0;
            let mut samples = Vec::new();
            for e in edges.clone() {
                let value = edge_values[e];
                let dst = graph.edge(e).dst;
                if value.is_nan() {
                    return Err(Error::Input(format!("estimator: no mediator value for edge {i}->{dst}")));
                }
                z_star += value;
                if receives_arm(roles[dst.index()], r) {
                    samples.push((dst, value));
                }
            }
            sample.arms[r].push(i, z_star, samples, edges.len())?;
        }
    }
    Ok(sample)
}

/// Per-producer sums for the moment estimators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ProducerStats {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub rho: f64,
    pub rho_rho_prime: f64,
}

/// Estimated first two moments of total exposure under an arm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetMoments {
    pub mean: f64,
    pub second_moment: f64,
    /// `second_moment − mean²`; may be non-positive in small samples.
    pub variance: f64,
}

/// Moment estimates over a multiset of producers given by position.
pub(crate) fn moments_over(stats: &[ProducerStats], picks: impl Iterator<Item = usize>, arm: usize) -> Result<TargetMoments> {
    let (mut v1, mut v2, mut v3, mut rho, mut rr) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in picks {
        let s = &stats[k];
        v1 += s.v1;
        v2 += s.v2;
        v3 += s.v3;
        rho += s.rho;
        rr += s.rho_rho_prime;
    }
    if !(rho > 0.0) {
        return Err(Error::InsufficientOverlap { arm });
    }
    let mean = v1 / rho;
    // rr = 0 only when every producer has at most one observed child, so v3 = v2
    let cross = if rr > 0.0 { (v3 - v2) / rr } else { 0.0 };
    let second_moment = v2 / rho + cross;
    Ok(TargetMoments {
        mean,
        second_moment,
        variance: second_moment - mean * mean,
    })
}

pub fn estimate_target_moments(sample: &ExposureSample, arm: usize) -> Result<TargetMoments> {
    let exposures = sample
        .arms
        .get(arm)
        .ok_or_else(|| Error::Input(format!("estimator: no exposures for arm {arm}")))?;
    moments_over(&exposures.stats(), 0..exposures.len(), arm)
}

/// Whether `role` belongs to arm `r` on the consumer side.
pub(crate) fn receives_arm(role: Role, r: usize) -> bool {
    role.arm() == Some(r)
}
