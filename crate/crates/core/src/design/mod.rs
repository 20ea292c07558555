//! Allocation design: arms, exposure set, risk bounds, optimized weights on
//! edges into the exposure set, and the boost factors that realize them.

mod boost;
pub mod io;
mod partition;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use boost::{compute_boost_factors, BoostTable};
pub use partition::{sample_partition, ExposureSetMode, Partition, Role};

use crate::error::{Error, Result};
use crate::graph::{MarketplaceGraph, NodeId, TreatmentSet};
use crate::qp::{build_allocation_problem, solve_allocation, AllocationResult, BlockPlan, QpConfig};

/// Box bounds `r_min·p_base ≤ p ≤ r_max·p_base` on optimized edges and
/// `s_min ≤ (1 − Σp)/(1 − Σp_base) ≤ s_max` on the mass left to other parents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskParams {
    pub r_min: f64,
    pub r_max: f64,
    pub s_min: f64,
    pub s_max: f64,
}

impl Default for RiskParams {
    fn default() -> Self {
        Self {
            r_min: 0.0,
            r_max: 10.0,
            s_min: 0.2,
            s_max: 5.0,
        }
    }
}

impl RiskParams {
    pub fn check(&self) -> Result<()> {
        let ok = 0.0 <= self.r_min && self.r_min <= 1.0 && 1.0 <= self.r_max && 0.0 <= self.s_min && self.s_min <= 1.0
            && 1.0 <= self.s_max;
        if !ok {
            return Err(Error::Parameter(format!(
                "risk bounds need 0 <= r_min <= 1 <= r_max and 0 <= s_min <= 1 <= s_max, got {self:?}"
            )));
        }
        Ok(())
    }

    /// `(ℓ, u)` for a consumer whose optimized parents hold `mass` of its baseline weight.
    pub fn sum_bounds(&self, mass: f64) -> (f64, f64) {
        let rest = 1.0 - mass;
        if rest <= 0.0 {
            return (1.0, 1.0);
        }
        ((1.0 - self.s_max * rest).max(0.0), (1.0 - self.s_min * rest).min(1.0))
    }
}

/// Sum bounds for every consumer in the exposure set that has at least one
/// parent in `Ω'`; consumers without such parents are left out.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RiskBounds {
    pub params: RiskParams,
    pub consumers: Vec<NodeId>,
    /// `Σ_{i ∈ Pa(j) ∩ Ω'} p_base_ij` per consumer.
    pub omega_mass: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn compute_sum_bounds(graph: &MarketplaceGraph, partition: &Partition, params: RiskParams) -> Result<RiskBounds> {
    params.check()?;
    let roles = partition.roles(graph.n_nodes())?;
    let mut bounds = RiskBounds {
        params,
        consumers: Vec::new(),
        omega_mass: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
    };
    let mut c_prime = partition.c_prime.clone();
    c_prime.sort_unstable();
    for j in c_prime {
        let mut mass = 0.0;
        let mut has_parent = false;
        for &e in graph.in_edges(j) {
            let edge = graph.edge(e);
            if matches!(roles[edge.src.index()], Role::Omega(_)) {
                mass += edge.p_base;
                has_parent = true;
            }
        }
        if !has_parent {
            continue;
        }
        let (lo, hi) = params.sum_bounds(mass);
        bounds.consumers.push(j);
        bounds.omega_mass.push(mass);
        bounds.lower.push(lo);
        bounds.upper.push(hi);
    }
    Ok(bounds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ConsumerExact,
    Optimized,
    Renormalized,
    Base,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::ConsumerExact => "consumer-exact",
            Provenance::Optimized => "optimized",
            Provenance::Renormalized => "renormalized",
            Provenance::Base => "base",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "consumer-exact" => Provenance::ConsumerExact,
            "optimized" => Provenance::Optimized,
            "renormalized" => Provenance::Renormalized,
            "base" => Provenance::Base,
            _ => return None,
        })
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DesignOptions {
    /// Replaces every affinity in the matching objective.
    pub alpha_override: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct DesignOutput {
    pub p_star: Vec<f64>,
    pub provenance: Vec<Provenance>,
    pub partition: Partition,
    pub bounds: RiskBounds,
    /// Matching objective at the baseline, then after each outer sweep. Empty
    /// when nothing is optimized.
    pub objective_trace: Vec<f64>,
    pub allocation: Option<AllocationResult>,
}

impl DesignOutput {
    /// The design as a treatment arm over all edges.
    pub fn weights(&self) -> &[f64] {
        &self.p_star
    }
}

/// Builds the design weights for a partition:
///
/// 1. edges into `Ω_r ∪ Λ_r` take `p^(r)`;
/// 2. edges from `Ω'` into the exposure set are optimized to match producer exposure;
/// 3. other edges into the exposure set are rescaled so each consumer sums to one;
/// 4. everything else keeps `p_base`.
pub fn assemble_design(
    graph: &MarketplaceGraph,
    treatments: &TreatmentSet,
    partition: &Partition,
    risk: RiskParams,
    qp_config: &QpConfig,
    options: &DesignOptions,
) -> Result<DesignOutput> {
    partition.check(graph)?;
    if partition.n_arms() > treatments.n_arms() {
        return Err(Error::Input(format!(
            "design: partition has {} arms but only {} treatments are defined",
            partition.n_arms(),
            treatments.n_arms()
        )));
    }
    let roles = partition.roles(graph.n_nodes())?;
    let mut p_star = graph.p_base();
    let mut provenance = vec![Provenance::Base; graph.n_edges()];

    for j in graph.nodes() {
        if let Some(r) = roles[j.index()].arm() {
            for &e in graph.in_edges(j) {
                p_star[e] = treatments.weight(r, e);
                provenance[e] = Provenance::ConsumerExact;
            }
        }
    }

    let bounds = compute_sum_bounds(graph, partition, risk)?;
    let mut objective_trace = Vec::new();
    let mut allocation = None;
    if !bounds.consumers.is_empty() {
        let problem = build_allocation_problem(graph, treatments, partition, &bounds, options.alpha_override)?;
        let plan = BlockPlan::round_robin(&problem.consumers, qp_config.k_blocks, qp_config.max_outer);
        let result = solve_allocation(&problem, &plan, qp_config)?;
        for (v, &x) in problem.vars.iter().zip(&result.x) {
            let e = v.edge.expect("graph-built variables carry edges");
            p_star[e] = x;
            provenance[e] = Provenance::Optimized;
        }
        objective_trace.push(result.initial_objective);
        objective_trace.extend_from_slice(&result.sweep_objectives);
        allocation = Some(result);

        for (k, &j) in bounds.consumers.iter().enumerate() {
            let base_rest = 1.0 - bounds.omega_mass[k];
            let star_mass: f64 = graph
                .in_edges(j)
                .iter()
                .filter(|&&e| provenance[e] == Provenance::Optimized)
                .map(|&e| p_star[e])
                .sum();
            let factor = if base_rest > 0.0 { (1.0 - star_mass) / base_rest } else { 1.0 };
            for &e in graph.in_edges(j) {
                if provenance[e] != Provenance::Optimized {
                    p_star[e] = graph.edge(e).p_base * factor;
                    provenance[e] = Provenance::Renormalized;
                }
            }
        }
    }

    Ok(DesignOutput {
        p_star,
        provenance,
        partition: partition.clone(),
        bounds,
        objective_trace,
        allocation,
    })
}

/// Arm fractions, exposure-set draw, risk bounds and solver settings for one
/// design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub frac_omega: Vec<f64>,
    pub frac_lambda: Vec<f64>,
    pub q: f64,
    pub exposure_set: ExposureSetMode,
    pub risk: RiskParams,
    pub qp: QpConfig,
    /// When set, the block count is chosen to give about this many consumers
    /// per block, overriding `qp.k_blocks`.
    pub consumers_per_block: Option<usize>,
    /// Affinity assumed by the design; `None` uses the graph's affinities.
    pub alpha_override: Option<f64>,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            frac_omega: vec![0.1, 0.1],
            frac_lambda: vec![0.1, 0.1],
            q: 0.5,
            exposure_set: ExposureSetMode::Bernoulli,
            risk: RiskParams::default(),
            qp: QpConfig::default(),
            consumers_per_block: None,
            alpha_override: None,
        }
    }
}

impl DesignConfig {
    pub fn check(&self) -> Result<()> {
        if self.consumers_per_block == Some(0) {
            return Err(Error::Parameter("consumers_per_block must be positive".into()));
        }
        self.risk.check()?;
        self.qp.check()
    }
}

/// Design for a given partition under `config`.
pub fn design_for_partition(
    graph: &MarketplaceGraph,
    treatments: &TreatmentSet,
    partition: &Partition,
    config: &DesignConfig,
) -> Result<DesignOutput> {
    config.check()?;
    let mut qp = config.qp;
    if let Some(per_block) = config.consumers_per_block {
        let consumers = compute_sum_bounds(graph, partition, config.risk)?.consumers.len();
        qp.k_blocks = BlockPlan::blocks_for_size(consumers, per_block);
    }
    let options = DesignOptions {
        alpha_override: config.alpha_override,
    };
    assemble_design(graph, treatments, partition, config.risk, &qp, &options)
}

/// Draws a partition from `seed` and builds its design.
pub fn design_experiment(graph: &MarketplaceGraph, treatments: &TreatmentSet, config: &DesignConfig, seed: u64) -> Result<DesignOutput> {
    let partition = sample_partition(graph, &config.frac_omega, &config.frac_lambda, config.q, config.exposure_set, seed)?;
    design_for_partition(graph, treatments, &partition, config)
}
