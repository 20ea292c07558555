//! The exposure-matching least-squares problem
//! `J(x) = Σ_i (h_i − Σ_{v ∈ i} c_v x_v)²` over producers `i`, with box bounds on
//! every variable and a ranged sum over the variables of each consumer.

use serde::Serialize;

use super::admm::solve_qp_warm;
use super::linsys::factor_nnz_estimate;
use super::{CsrMatrix, QpConfig, QpProblem, QpStatus};
use crate::design::{Partition, RiskBounds};
use crate::error::{Error, Result};
use crate::graph::{EdgeId, MarketplaceGraph, NodeId, TreatmentSet};

/// One decision variable: the weight on a producer→consumer edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AllocVar {
    /// Index into [`AllocationProblem::producers`].
    pub producer: usize,
    /// Index into [`AllocationProblem::consumers`].
    pub consumer: usize,
    pub coef: f64,
    pub lower: f64,
    pub upper: f64,
    /// Starting value; must be feasible.
    pub init: f64,
    pub edge: Option<EdgeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllocationProblem {
    pub producers: Vec<NodeId>,
    /// Residual target `h_i` per producer, already net of fixed exposure.
    pub targets: Vec<f64>,
    pub consumers: Vec<NodeId>,
    /// `[ℓ_j, u_j]` on the sum of each consumer's variables.
    pub consumer_bounds: Vec<(f64, f64)>,
    pub vars: Vec<AllocVar>,
}

impl AllocationProblem {
    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn initial_point(&self) -> Vec<f64> {
        self.vars.iter().map(|v| v.init).collect()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.residuals(x).iter().map(|r| r * r).sum()
    }

    /// `h_i − Σ c_v x_v` per producer.
    pub fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let mut res = self.targets.clone();
        for (v, &xv) in self.vars.iter().zip(x) {
            res[v.producer] -= v.coef * xv;
        }
        res
    }

    /// Largest violation of any box or consumer row at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        let mut sums = vec![0.0; self.consumers.len()];
        for (v, &xv) in self.vars.iter().zip(x) {
            worst = worst.max(v.lower - xv).max(xv - v.upper);
            sums[v.consumer] += xv;
        }
        for (s, &(lo, hi)) in sums.iter().zip(&self.consumer_bounds) {
            worst = worst.max(lo - s).max(s - hi);
        }
        worst
    }

    /// Standard form: `P = 2GᵀG`, `q = −2Gᵀh`, constant `hᵀh`, box rows first and
    /// then one row per consumer.
    pub fn to_qp(&self) -> QpProblem {
        let n = self.n_vars();
        let mut by_producer: Vec<Vec<usize>> = vec![Vec::new(); self.producers.len()];
        for (k, v) in self.vars.iter().enumerate() {
            by_producer[v.producer].push(k);
        }
        let mut p_trip = Vec::new();
        let mut q = vec![0.0; n];
        for (i, vars) in by_producer.iter().enumerate() {
            for &a in vars {
                q[a] = -2.0 * self.targets[i] * self.vars[a].coef;
                for &b in vars {
                    p_trip.push((a, b, 2.0 * self.vars[a].coef * self.vars[b].coef));
                }
            }
        }
        let mut a_trip: Vec<_> = (0..n).map(|k| (k, k, 1.0)).collect();
        for (k, v) in self.vars.iter().enumerate() {
            a_trip.push((n + v.consumer, k, 1.0));
        }
        let mut l: Vec<f64> = self.vars.iter().map(|v| v.lower).collect();
        let mut u: Vec<f64> = self.vars.iter().map(|v| v.upper).collect();
        for &(lo, hi) in &self.consumer_bounds {
            l.push(lo);
            u.push(hi);
        }
        QpProblem {
            p: CsrMatrix::from_triplets(n, n, &p_trip),
            q,
            constant: self.targets.iter().map(|h| h * h).sum(),
            a: CsrMatrix::from_triplets(n + self.consumers.len(), n, &a_trip),
            l,
            u,
        }
    }

    /// Factor size the full problem would need, from symbolic analysis only.
    pub fn full_factor_nnz(&self) -> Result<usize> {
        let qp = self.to_qp();
        factor_nnz_estimate(&qp.p, &qp.a)
    }

    /// Euclidean projection of the variables of `consumer` onto its box and sum row.
    fn project_consumer(&self, vars: &[usize], x: &mut [f64], consumer: usize) {
        let clamp_sum = |shift: f64, x: &[f64]| -> f64 {
            vars.iter()
                .map(|&k| (x[k] + shift).clamp(self.vars[k].lower, self.vars[k].upper))
                .sum()
        };
        let (lo, hi) = self.consumer_bounds[consumer];
        let current = clamp_sum(0.0, x);
        let target = if current < lo {
            lo
        } else if current > hi {
            hi
        } else {
            for &k in vars {
                x[k] = x[k].clamp(self.vars[k].lower, self.vars[k].upper);
            }
            return;
        };
        // The clamped sum is monotone in the shift; bisect for the one hitting `target`.
        let span = vars
            .iter()
            .map(|&k| (self.vars[k].upper - self.vars[k].lower).abs() + x[k].abs())
            .fold(1.0_f64, f64::max);
        let (mut a, mut b) = (-2.0 * span, 2.0 * span);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if clamp_sum(mid, x) < target {
                a = mid;
            } else {
                b = mid;
            }
            if b - a <= f64::EPSILON * span {
                break;
            }
        }
        let shift = 0.5 * (a + b);
        for &k in vars {
            x[k] = (x[k] + shift).clamp(self.vars[k].lower, self.vars[k].upper);
        }
    }
}

/// Consumers of an allocation problem dealt into `K` blocks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockPlan {
    /// Consumer indices per block.
    pub blocks: Vec<Vec<usize>>,
    pub max_outer: usize,
}

impl BlockPlan {
    /// Sorts consumers by node id and deals them round-robin into `k_blocks`
    /// blocks (fewer if there are fewer consumers).
    pub fn round_robin(consumers: &[NodeId], k_blocks: usize, max_outer: usize) -> Self {
        let k = k_blocks.max(1).min(consumers.len());
        let mut order: Vec<usize> = (0..consumers.len()).collect();
        order.sort_by_key(|&c| consumers[c]);
        let mut blocks = vec![Vec::new(); k];
        for (pos, c) in order.into_iter().enumerate() {
            blocks[pos % k].push(c);
        }
        Self { blocks, max_outer }
    }

    /// Block count giving roughly `per_block` consumers per block.
    pub fn blocks_for_size(n_consumers: usize, per_block: usize) -> usize {
        n_consumers.div_ceil(per_block.max(1)).max(1)
    }

    pub fn k_blocks(&self) -> usize {
        self.blocks.len()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AllocationResult {
    pub x: Vec<f64>,
    pub initial_objective: f64,
    /// `J` after each outer sweep.
    pub sweep_objectives: Vec<f64>,
    /// `J` after each block solve, across all sweeps.
    pub block_objectives: Vec<f64>,
    /// Block solves whose result would have increased `J` and were discarded.
    pub rejected_blocks: usize,
    pub inner_iterations: usize,
    /// Largest factor held by any block solve.
    pub max_factor_nnz: usize,
}

impl AllocationResult {
    pub fn final_objective(&self) -> f64 {
        self.sweep_objectives.last().copied().unwrap_or(self.initial_objective)
    }
}

/// Block Gauss–Seidel: each block of consumers is re-optimized with every other
/// variable held at its current value. A block result is accepted only if it
/// does not increase the block's share of the objective.
pub fn solve_allocation(problem: &AllocationProblem, plan: &BlockPlan, config: &QpConfig) -> Result<AllocationResult> {
    config.check()?;
    let mut x = problem.initial_point();
    let mut vars_of_consumer: Vec<Vec<usize>> = vec![Vec::new(); problem.consumers.len()];
    for (k, v) in problem.vars.iter().enumerate() {
        vars_of_consumer[v.consumer].push(k);
    }

    let blocks: Vec<BlockData> = plan
        .blocks
        .iter()
        .map(|consumers| BlockData::new(problem, consumers, &vars_of_consumer))
        .collect();
    let mut duals: Vec<Option<Vec<f64>>> = vec![None; blocks.len()];

    let mut residuals = problem.residuals(&x);
    let initial_objective: f64 = residuals.iter().map(|r| r * r).sum();
    let mut result = AllocationResult {
        x: Vec::new(),
        initial_objective,
        sweep_objectives: Vec::new(),
        block_objectives: Vec::new(),
        rejected_blocks: 0,
        inner_iterations: 0,
        max_factor_nnz: 0,
    };
    if problem.vars.is_empty() {
        result.x = x;
        return Ok(result);
    }

    let mut current = initial_objective;
    for _sweep in 0..plan.max_outer {
        for (b, block) in blocks.iter().enumerate() {
            if block.vars.is_empty() {
                result.block_objectives.push(current);
                continue;
            }
            let sub = block.subproblem(problem, &x, &residuals);
            let x0: Vec<f64> = block.vars.iter().map(|&k| x[k]).collect();
            let before = sub.objective(&x0);
            let qp = sub.to_qp();
            let sol = solve_qp_warm(&qp, config, Some(&x0), duals[b].as_deref())?;
            result.inner_iterations += sol.iterations;
            result.max_factor_nnz = result.max_factor_nnz.max(sol.factor_nnz);
            if sol.status == QpStatus::Infeasible {
                let consumers = block.consumers.iter().map(|&c| problem.consumers[c]).collect();
                return Err(Error::Design {
                    message: "block subproblem is infeasible".into(),
                    consumers,
                });
            }
            let mut candidate = sol.x;
            for (c_local, vars) in block.local_vars_of_consumer.iter().enumerate() {
                sub.project_consumer(vars, &mut candidate, c_local);
            }
            let after = sub.objective(&candidate);
            if after <= before {
                for (pos, &k) in block.vars.iter().enumerate() {
                    let v = &problem.vars[k];
                    residuals[v.producer] += v.coef * (x[k] - candidate[pos]);
                    x[k] = candidate[pos];
                }
                duals[b] = Some(sol.y);
                current += after - before;
            } else {
                result.rejected_blocks += 1;
            }
            result.block_objectives.push(current);
        }
        // Recompute exactly to avoid drift from the running update.
        current = residuals.iter().map(|r| r * r).sum();
        let previous = result.sweep_objectives.last().copied().unwrap_or(initial_objective);
        result.sweep_objectives.push(current);
        if previous - current <= 1e-14 * (1.0 + previous) {
            break;
        }
    }
    result.x = x;
    Ok(result)
}

struct BlockData {
    consumers: Vec<usize>,
    /// Global variable indices in block order.
    vars: Vec<usize>,
    /// Producers touched by the block, global indices.
    producers: Vec<usize>,
    local_vars_of_consumer: Vec<Vec<usize>>,
}

impl BlockData {
    fn new(problem: &AllocationProblem, consumers: &[usize], vars_of_consumer: &[Vec<usize>]) -> Self {
        let mut vars = Vec::new();
        let mut local_vars_of_consumer = Vec::with_capacity(consumers.len());
        for &c in consumers {
            let start = vars.len();
            vars.extend_from_slice(&vars_of_consumer[c]);
            local_vars_of_consumer.push((start..vars.len()).collect());
        }
        let mut producers: Vec<usize> = vars.iter().map(|&k| problem.vars[k].producer).collect();
        producers.sort_unstable();
        producers.dedup();
        Self {
            consumers: consumers.to_vec(),
            vars,
            producers,
            local_vars_of_consumer,
        }
    }

    /// The block problem with targets `Δ_i = h_i − Σ_{v ∉ block} c_v x_v`.
    fn subproblem(&self, problem: &AllocationProblem, x: &[f64], residuals: &[f64]) -> AllocationProblem {
        let local_producer = |i: usize| self.producers.binary_search(&i).unwrap();
        let mut targets: Vec<f64> = self.producers.iter().map(|&i| residuals[i]).collect();
        let mut vars = Vec::with_capacity(self.vars.len());
        let mut consumer_of = vec![0usize; self.vars.len()];
        for (c_local, vs) in self.local_vars_of_consumer.iter().enumerate() {
            for &pos in vs {
                consumer_of[pos] = c_local;
            }
        }
        for (pos, &k) in self.vars.iter().enumerate() {
            let v = problem.vars[k];
            let p = local_producer(v.producer);
            // residual excludes the block's own contribution
            targets[p] += v.coef * x[k];
            vars.push(AllocVar {
                producer: p,
                consumer: consumer_of[pos],
                init: x[k],
                ..v
            });
        }
        AllocationProblem {
            producers: self.producers.iter().map(|&i| problem.producers[i]).collect(),
            targets,
            consumers: self.consumers.iter().map(|&c| problem.consumers[c]).collect(),
            consumer_bounds: self.consumers.iter().map(|&c| problem.consumer_bounds[c]).collect(),
            vars,
        }
    }
}

/// Residual target of every measurement producer and the variables of the
/// exposure-matching problem for a partition.
///
/// For producer `i ∈ Ω_r` the target is `Z_i(T^(r)) − Z'_i`, where `Z'_i` is
/// the exposure already fixed by the design: `p^(s)` on edges into `Ω_s ∪ Λ_s`
/// and `p_base` on edges into the untouched remainder. Every edge from `Ω'`
/// into `C'` is a variable. `alpha_override` replaces all affinities.
pub fn build_allocation_problem(
    graph: &MarketplaceGraph,
    treatments: &TreatmentSet,
    partition: &Partition,
    bounds: &RiskBounds,
    alpha_override: Option<f64>,
) -> Result<AllocationProblem> {
    let roles = partition.roles(graph.n_nodes())?;
    let alpha = |e: EdgeId| alpha_override.unwrap_or(graph.edge(e).alpha);

    let mut producers = Vec::new();
    let mut arm_of = Vec::new();
    for (r, omega) in partition.omega.iter().enumerate() {
        for &i in omega {
            producers.push(i);
            arm_of.push(r);
        }
    }
    let mut order: Vec<usize> = (0..producers.len()).collect();
    order.sort_by_key(|&k| producers[k]);
    let producers: Vec<NodeId> = order.iter().map(|&k| producers[k]).collect();
    let arm_of: Vec<usize> = order.iter().map(|&k| arm_of[k]).collect();

    let mut producer_index = vec![usize::MAX; graph.n_nodes()];
    for (k, &i) in producers.iter().enumerate() {
        producer_index[i.index()] = k;
    }
    let mut consumer_index = vec![usize::MAX; graph.n_nodes()];
    for (k, &j) in bounds.consumers.iter().enumerate() {
        consumer_index[j.index()] = k;
    }

    let mut targets = Vec::with_capacity(producers.len());
    for (&i, &r) in producers.iter().zip(&arm_of) {
        let mut h = 0.0;
        for e in graph.out_edges(i) {
            let j = graph.edge(e).dst;
            let a = alpha(e);
            h += a * treatments.weight(r, e);
            if consumer_index[j.index()] != usize::MAX {
                continue;
            }
            let fixed = match roles[j.index()].arm() {
                Some(s) => treatments.weight(s, e),
                None => graph.edge(e).p_base,
            };
            h -= a * fixed;
        }
        targets.push(h);
    }

    let mut vars = Vec::new();
    for (c, &j) in bounds.consumers.iter().enumerate() {
        for &e in graph.in_edges(j) {
            let edge = graph.edge(e);
            let k = producer_index[edge.src.index()];
            if k == usize::MAX {
                continue;
            }
            vars.push(AllocVar {
                producer: k,
                consumer: c,
                coef: alpha(e),
                lower: bounds.params.r_min * edge.p_base,
                upper: bounds.params.r_max * edge.p_base,
                init: edge.p_base,
                edge: Some(e),
            });
        }
    }
    Ok(AllocationProblem {
        producers,
        targets,
        consumers: bounds.consumers.clone(),
        consumer_bounds: bounds.lower.iter().copied().zip(bounds.upper.iter().copied()).collect(),
        vars,
    })
}

/// `Σ_r Σ_{i ∈ Ω_r} (Z_i(T^(r)) − Z_i(T*))²` computed directly from edge
/// weights, independent of the allocation problem's bookkeeping.
pub fn evaluate_allocation_objective(
    graph: &MarketplaceGraph,
    treatments: &TreatmentSet,
    partition: &Partition,
    weights: &[Option<f64>],
    alpha_override: Option<f64>,
) -> Result<f64> {
    if weights.len() != graph.n_edges() {
        return Err(Error::Input(format!("expected {} edge weights, got {}", graph.n_edges(), weights.len())));
    }
    let mut total = 0.0;
    for (r, omega) in partition.omega.iter().enumerate() {
        for &i in omega {
            let mut diff = 0.0;
            for e in graph.out_edges(i) {
                let edge = graph.edge(e);
                let w = weights[e]
                    .ok_or_else(|| Error::Input(format!("missing weight for edge {}->{}", edge.src, edge.dst)))?;
                let a = alpha_override.unwrap_or(edge.alpha);
                diff += a * (treatments.weight(r, e) - w);
            }
            total += diff * diff;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_producer_problem() -> AllocationProblem {
        // producer 0 wants 1.0 from consumers 0 and 1; producer 1 wants 0.3 from consumer 1
        let var = |producer, consumer, init| AllocVar {
            producer,
            consumer,
            coef: 1.0,
            lower: 0.0,
            upper: 1.0,
            init,
            edge: None,
        };
        AllocationProblem {
            producers: vec![NodeId(0), NodeId(1)],
            targets: vec![1.0, 0.3],
            consumers: vec![NodeId(5), NodeId(6)],
            consumer_bounds: vec![(0.0, 0.4), (0.0, 0.9)],
            vars: vec![var(0, 0, 0.1), var(0, 1, 0.1), var(1, 1, 0.1)],
        }
    }

    #[test]
    fn qp_objective_equals_least_squares() {
        let prob = two_producer_problem();
        let qp = prob.to_qp();
        for x in [[0.1, 0.1, 0.1], [0.4, 0.5, 0.3], [0.0, 0.9, 0.0]] {
            assert!((qp.objective(&x) - prob.objective(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_block_matches_full_solve() {
        let prob = two_producer_problem();
        let config = QpConfig::default();
        let full = crate::qp::solve_qp(&prob.to_qp(), &config).unwrap();
        let plan = BlockPlan::round_robin(&prob.consumers, 1, 1);
        let res = solve_allocation(&prob, &plan, &config).unwrap();
        assert!((res.final_objective() - full.objective_value).abs() < 2e-5);
        // optimum: x00 = 0.4, x01 + x11 = 0.9 split to match 0.6 and 0.3
        assert!((res.final_objective() - 0.0).abs() < 1e-5);
        assert!(prob.max_violation(&res.x) < 1e-9);
    }

    #[test]
    fn blocks_deal_round_robin_by_node_id() {
        let ids = [NodeId(9), NodeId(2), NodeId(5), NodeId(1), NodeId(7)];
        let plan = BlockPlan::round_robin(&ids, 2, 3);
        // sorted ids 1,2,5,7,9 -> positions 3,1,2,4,0
        assert_eq!(plan.blocks, vec![vec![3, 2, 0], vec![1, 4]]);
        assert_eq!(BlockPlan::round_robin(&ids, 10, 1).k_blocks(), 5);
        assert_eq!(BlockPlan::blocks_for_size(31, 15), 3);
    }

    #[test]
    fn projection_restores_consumer_rows() {
        let prob = two_producer_problem();
        let mut x = vec![0.9, 0.8, 0.7];
        prob.project_consumer(&[0], &mut x, 0);
        prob.project_consumer(&[1, 2], &mut x, 1);
        assert!(prob.max_violation(&x) < 1e-12);
        assert!((x[0] - 0.4).abs() < 1e-12);
        // equal shift on both variables of consumer 1
        assert!(((0.8 - x[1]) - (0.7 - x[2])).abs() < 1e-12);
    }
}
