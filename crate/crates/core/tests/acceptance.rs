//! Acceptance checks, one line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 1 4 5`. The full-scale
//! ground-truth band (7) only runs with `OASIS_FULL_SCALE=1`.

use std::panic;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use oasis_core::design::{compute_boost_factors, design_experiment, DesignConfig, Provenance};
use oasis_core::estimator::{estimate_arm, estimate_target_moments, importance_weights, ArmExposure, DensityModel, EstimatorMode, ExposureSample};
use oasis_core::graph::{generate_clustered_graph, GraphParams, NodeId};
use oasis_core::qp::synthetic::benchmark_instance;
use oasis_core::qp::{solve_allocation, solve_qp, BlockPlan, CsrMatrix, QpConfig, QpProblem};
use oasis_core::rng::{stream, Purpose};
use oasis_core::sim::{self, run_simulation, Method, SimConfig, SimSetup, Summary};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Rng8 = oasis_core::rng::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normal(rng: &mut Rng8) -> f64 {
    StandardNormal.sample(rng)
}

/// Dense description of a random convex QP, kept alongside its sparse form so
/// the checks below never go through the solver's own matrix code.
struct DenseQp {
    p: Vec<Vec<f64>>,
    q: Vec<f64>,
    a: Vec<Vec<f64>>,
    l: Vec<f64>,
    u: Vec<f64>,
}

impl DenseQp {
    fn random(n: usize, extra_rows: usize, rng: &mut Rng8) -> Self {
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| normal(rng)).collect()).collect();
        let p: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() / n as f64 + if i == j { 0.1 } else { 0.0 })
                    .collect()
            })
            .collect();
        let q: Vec<f64> = (0..n).map(|_| 2.0 * normal(rng)).collect();
        let mut a = Vec::new();
        let (mut l, mut u) = (Vec::new(), Vec::new());
        let mut lo_box = Vec::new();
        let mut hi_box = Vec::new();
        for i in 0..n {
            let lo = -2.0 * rng.random::<f64>();
            let hi = lo + 0.5 + 2.5 * rng.random::<f64>();
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            a.push(row);
            l.push(lo);
            u.push(hi);
            lo_box.push(lo);
            hi_box.push(hi);
        }
        // rows are centred on one box point so the instance stays feasible
        let anchor: Vec<f64> = lo_box.iter().zip(&hi_box).map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect();
        for _ in 0..extra_rows {
            let row: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.6 { rng.random::<f64>() } else { 0.0 }).collect();
            let centre: f64 = row.iter().zip(&anchor).map(|(c, x)| c * x).sum();
            l.push(centre - 0.3 * rng.random::<f64>());
            u.push(centre + 0.3 * rng.random::<f64>());
            a.push(row);
        }
        Self { p, q, a, l, u }
    }

    fn sparse(&self) -> QpProblem {
        let n = self.q.len();
        let triplets = |rows: &[Vec<f64>]| -> Vec<(usize, usize, f64)> {
            rows.iter()
                .enumerate()
                .flat_map(|(i, r)| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(j, v)| (i, j, *v)))
                .collect()
        };
        QpProblem {
            p: CsrMatrix::from_triplets(n, n, &triplets(&self.p)),
            q: self.q.clone(),
            constant: 0.0,
            a: CsrMatrix::from_triplets(self.a.len(), n, &triplets(&self.a)),
            l: self.l.clone(),
            u: self.u.clone(),
        }
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut f = 0.0;
        for i in 0..n {
            f += self.q[i] * x[i];
            for j in 0..n {
                f += 0.5 * x[i] * self.p[i][j] * x[j];
            }
        }
        f
    }

    fn row(&self, k: usize, x: &[f64]) -> f64 {
        self.a[k].iter().zip(x).map(|(a, b)| a * b).sum()
    }

    fn feasible(&self, x: &[f64]) -> bool {
        (0..self.a.len()).all(|k| {
            let v = self.row(k, x);
            v >= self.l[k] - 1e-12 && v <= self.u[k] + 1e-12
        })
    }

    /// Grid search over the box rows, refined around the incumbent by a factor
    /// of four per level down to `final_step`.
    fn grid_minimum(&self, final_step: f64) -> f64 {
        const KEEP: usize = 8;
        let n = self.q.len();
        let (lo, hi): (Vec<f64>, Vec<f64>) = (self.l[..n].to_vec(), self.u[..n].to_vec());
        let side = |pps: usize| 2 * pps + 1;
        // first pass is denser, later passes scan a window of +-20 steps
        let mut pps: usize = 60;
        let mut centres: Vec<Vec<f64>> = vec![(0..n).map(|i| 0.5 * (lo[i] + hi[i])).collect()];
        let mut step: Vec<f64> = (0..n).map(|i| (hi[i] - lo[i]) / (2 * pps) as f64).collect();
        let mut best = f64::INFINITY;
        loop {
            let mut found: Vec<(f64, Vec<f64>)> = Vec::new();
            let count = side(pps).pow(n as u32);
            let mut x = vec![0.0; n];
            for centre in &centres {
                for idx in 0..count {
                    let mut rest = idx;
                    for i in 0..n {
                        let k = (rest % side(pps)) as f64 - pps as f64;
                        rest /= side(pps);
                        x[i] = (centre[i] + k * step[i]).clamp(lo[i], hi[i]);
                    }
                    if self.feasible(&x) {
                        let f = self.objective(&x);
                        best = best.min(f);
                        if found.len() < KEEP || f < found[found.len() - 1].0 {
                            if found.iter().any(|(_, y)| y == &x) {
                                continue;
                            }
                            let at = found.partition_point(|(g, _)| *g <= f);
                            found.insert(at, (f, x.clone()));
                            found.truncate(KEEP);
                        }
                    }
                }
            }
            if step.iter().all(|&s| s <= final_step) || found.is_empty() {
                return best;
            }
            centres = found.into_iter().map(|(_, y)| y).collect();
            if pps > 20 {
                for s in &mut step {
                    *s *= pps as f64 / 20.0;
                }
                pps = 20;
            }
            for s in &mut step {
                *s /= 4.0;
            }
        }
    }

    /// Largest of the stationarity, feasibility and complementarity residuals at `(x, y)`.
    fn kkt_residual(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let mut g = self.q[i];
            for j in 0..n {
                g += self.p[i][j] * x[j];
            }
            for (k, row) in self.a.iter().enumerate() {
                g += row[i] * y[k];
            }
            worst = worst.max(g.abs());
        }
        for k in 0..self.a.len() {
            let v = self.row(k, x);
            worst = worst.max(self.l[k] - v).max(v - self.u[k]);
            let slack = if y[k] > 0.0 { (self.u[k] - v).abs() } else { (v - self.l[k]).abs() };
            worst = worst.max(y[k].abs() * slack);
        }
        worst
    }
}

fn qp_oracle() -> Outcome {
    let config = QpConfig {
        eps_abs: 1e-9,
        eps_rel: 1e-9,
        max_iter: 200_000,
        ..Default::default()
    };
    let mut rng = stream(101, Purpose::Synthetic, 0);
    let mut worst_gap: f64 = 0.0;
    for t in 0..100 {
        let n = 1 + t % 3;
        let qp = DenseQp::random(n, t % 2, &mut rng);
        let sol = solve_qp(&qp.sparse(), &config).expect("small QP solves");
        let grid = qp.grid_minimum(1e-6);
        worst_gap = worst_gap.max((qp.objective(&sol.x) - grid).abs());
    }
    let mut worst_kkt: f64 = 0.0;
    for t in 0..100 {
        let n = 4 + t % 47;
        let qp = DenseQp::random(n, 1 + t % 5, &mut rng);
        let sol = solve_qp(&qp.sparse(), &config).expect("QP solves");
        let r = qp.kkt_residual(&sol.x, &sol.y);
        worst_kkt = worst_kkt.max(r);
    }
    outcome(
        worst_gap <= 1e-4 && worst_kkt <= 1e-4,
        format!("max |f - f_grid| = {worst_gap:.2e} (<= 1e-4), max KKT residual = {worst_kkt:.2e} (<= 1e-4)"),
    )
}

fn block_monotonicity() -> Outcome {
    let mut worst_rise = f64::NEG_INFINITY;
    let mut min_vars = usize::MAX;
    for t in 0..50u64 {
        let n = 500 + 20 * t as usize;
        let problem = benchmark_instance(n, 100, 1000 + t);
        let k = [2, 5, 10][t as usize % 3];
        let plan = BlockPlan::round_robin(&problem.consumers, k, 10);
        let result = solve_allocation(&problem, &plan, &QpConfig::default()).expect("allocation solves");
        let mut previous = result.initial_objective;
        for &j in &result.block_objectives {
            worst_rise = worst_rise.max(j - previous);
            previous = j;
        }
        min_vars = min_vars.min(problem.n_vars());
    }
    outcome(
        worst_rise <= 1e-6 && min_vars >= 500,
        format!("50 instances, >= {min_vars} variables, largest rise across a block solve = {worst_rise:.2e} (<= 1e-6)"),
    )
}

fn scaling_benchmark() -> Outcome {
    let config = QpConfig::default();
    let problem = benchmark_instance(5000, 100, 5000);
    let plan = BlockPlan::round_robin(&problem.consumers, 10, 2);

    let start = Instant::now();
    let iterative = solve_allocation(&problem, &plan, &config).expect("iterative solve");
    let t_iter = start.elapsed();

    let start = Instant::now();
    let full = solve_qp(&problem.to_qp(), &config).expect("full solve");
    let t_full = start.elapsed();
    let j_full = problem.objective(&full.x);
    let j_iter = iterative.final_objective();
    let small_ok = j_iter <= 1.05 * j_full && t_iter < t_full;

    let large = benchmark_instance(20_000, 100, 20_000);
    let plan = BlockPlan::round_robin(&large.consumers, 10, 2);
    let start = Instant::now();
    let result = solve_allocation(&large, &plan, &config);
    let t_large = start.elapsed();
    let full_nnz = large.full_factor_nnz().expect("symbolic analysis");
    let (large_ok, large_detail) = match result {
        Ok(r) => (
            r.max_factor_nnz < full_nnz,
            format!("n=20000 iterative done in {:.1}s, factor nnz {} vs full {}", t_large.as_secs_f64(), r.max_factor_nnz, full_nnz),
        ),
        Err(e) => (false, format!("n=20000 iterative failed: {e}")),
    };
    outcome(
        small_ok && large_ok,
        format!(
            "n=5000 J_iter/J_full = {:.4} (<= 1.05), time {:.2}s vs {:.2}s; {large_detail}",
            j_iter / j_full,
            t_iter.as_secs_f64(),
            t_full.as_secs_f64()
        ),
    )
}

fn unbiasedness() -> Outcome {
    let source = DensityModel::gaussian(0.0, 1.0).unwrap();
    let target = DensityModel::gaussian(0.5, 1.2).unwrap();
    let repeats = 1000;
    let n = 500;
    let estimates: Vec<f64> = (0..repeats)
        .map(|t| {
            let mut rng = stream(404, Purpose::Synthetic, t);
            let z: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
            let y: Vec<f64> = z.iter().map(|&z| 2.0 * z + normal(&mut rng)).collect();
            let w = importance_weights(&z, &target, &source, None);
            estimate_arm(&y, &w.values, EstimatorMode::Plain).unwrap()
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / repeats as f64;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64;
    let se = (var / repeats as f64).sqrt();
    let dist = (mean - 1.0).abs() / se;
    outcome(dist <= 3.0, format!("mean estimate {mean:.4}, target 1.0, {dist:.2} SE away (<= 3)"))
}

/// `n` producers with 2..=20 children each, per-edge values U[0, 1], children
/// observed independently with probability 1/2.
fn moment_sample(n: usize, seed: u64) -> ExposureSample {
    let mut rng = stream(seed, Purpose::Synthetic, n as u64);
    let mut arm = ArmExposure::default();
    for i in 0..n {
        let d = rng.random_range(2..=20usize);
        let values: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        let observed: Vec<(NodeId, f64)> = values
            .iter()
            .enumerate()
            .filter(|_| rng.random::<f64>() < 0.5)
            .map(|(j, &v)| (NodeId(j as u32), v))
            .collect();
        arm.push(NodeId(i as u32), values.iter().sum(), observed, d).unwrap();
    }
    ExposureSample { arms: vec![arm] }
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn moment_estimates() -> Outcome {
    // degree uniform on 2..=20: E[d] = 11, E[d²] = 151
    let mean_true = 11.0 / 2.0;
    let second_true = 11.0 / 12.0 + 151.0 / 4.0;

    let big = estimate_target_moments(&moment_sample(10_000, 0), 0).unwrap();
    let rel_mean = (big.mean - mean_true).abs() / mean_true;
    let rel_second = (big.second_moment - second_true).abs() / second_true;

    // replicate RMS errors give the slopes and show how typical the single draw is
    let sizes = [100usize, 1000, 10_000];
    let reps = 200;
    let mut rms_mean = Vec::new();
    let mut rms_second = Vec::new();
    for &n in &sizes {
        let (mut s1, mut s2) = (0.0, 0.0);
        for rep in 0..reps {
            let m = estimate_target_moments(&moment_sample(n, 1 + rep), 0).unwrap();
            s1 += ((m.mean - mean_true) / mean_true).powi(2);
            s2 += ((m.second_moment - second_true) / second_true).powi(2);
        }
        rms_mean.push((s1 / reps as f64).sqrt().ln());
        rms_second.push((s2 / reps as f64).sqrt().ln());
    }
    let log_n: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let (b1, b2) = (slope(&log_n, &rms_mean), slope(&log_n, &rms_second));
    let in_band = |b: f64| (-0.6..=-0.4).contains(&b);
    let (e1, e2) = (rms_mean[2].exp(), rms_second[2].exp());
    outcome(
        rel_mean <= 0.02 && rel_second <= 0.02 && in_band(b1) && in_band(b2),
        format!(
            "n=1e4 relative errors {:.3}% / {:.3}% (<= 2%; replicate RMS {:.3}% / {:.3}%), log-error slopes {b1:.3} / {b2:.3} (in [-0.6, -0.4])",
            100.0 * rel_mean,
            100.0 * rel_second,
            100.0 * e1,
            100.0 * e2
        ),
    )
}

fn coverage_of(summary: &Summary, method: Method) -> f64 {
    summary.method(method).map_or(f64::NAN, |m| m.coverage)
}

fn desk_config(d_ba: f64, d_er: f64, methods: Vec<Method>, seed: u64) -> SimConfig {
    let mut config = SimConfig {
        delta: 0.5,
        repeats: 200,
        seed,
        methods,
        ..Default::default()
    };
    config.graph.d_ba = d_ba;
    config.graph.d_er = d_er;
    config.estimator.bootstrap = 200;
    config
}

fn desk_coverage() -> Outcome {
    let (_, sparse) = run_simulation(desk_config(10.0, 1.0, vec![Method::Oasis], 61)).expect("sparse setting runs");
    let sparse = sim::summarize(&sparse).unwrap();
    let (_, dense) = run_simulation(desk_config(16.0, 8.0, vec![Method::Oasis, Method::Cb], 62)).expect("dense setting runs");
    let dense = sim::summarize(&dense).unwrap();
    let c_sparse = coverage_of(&sparse, Method::Oasis);
    let (c_oasis, c_cb) = (coverage_of(&dense, Method::Oasis), coverage_of(&dense, Method::Cb));
    outcome(
        (0.90..=0.99).contains(&c_sparse) && c_oasis >= 0.88 && c_oasis >= c_cb,
        format!(
            "(10,1): OASIS coverage {c_sparse:.3} (in [0.90, 0.99]); (16,8): OASIS {c_oasis:.3} (>= 0.88) vs CB {c_cb:.3}"
        ),
    )
}

fn full_scale_truth() -> Outcome {
    let mut config = SimConfig::full_scale(0);
    config.delta = 0.25;
    config.repeats = 1;
    let setup = SimSetup::new(config).expect("full-scale setup");
    let (tau0, diff) = (setup.truth.tau[0], setup.truth.diffs[0]);
    outcome(
        (9.6..=10.0).contains(&tau0) && (0.02..=0.07).contains(&diff),
        format!(
            "{} nodes: tau_0 = {tau0:.4} (in [9.6, 10.0]), tau_1 - tau_0 = {diff:.4} (in [0.02, 0.07])",
            setup.graph.n_nodes()
        ),
    )
}

fn design_invariants() -> Outcome {
    let (mut simplex, mut bounds, mut boost): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut optimized_edges = 0;
    for t in 0..50u64 {
        let mut rng = stream(808, Purpose::Synthetic, t);
        let params = GraphParams {
            n_clusters: rng.random_range(1..=3),
            cluster_size: rng.random_range(80..=200),
            d_ba: rng.random_range(3.0..14.0),
            ba_power: 0.25,
            d_er: rng.random_range(0.0..4.0),
        };
        let mut graph = generate_clustered_graph(&params, t).unwrap();
        let treatments = sim::generate_attributes(&mut graph, t).unwrap();
        let config = DesignConfig {
            q: rng.random_range(0.2..=1.0),
            consumers_per_block: Some(rng.random_range(5..=40)),
            alpha_override: if rng.random::<bool>() { Some(1.0) } else { None },
            ..Default::default()
        };
        let design = design_experiment(&graph, &treatments, &config, t).expect("design builds");
        let risk = config.risk;
        for j in graph.nodes().filter(|&j| graph.in_degree(j) > 0) {
            let sum: f64 = graph.in_edges(j).iter().map(|&e| design.p_star[e]).sum();
            simplex = simplex.max((sum - 1.0).abs());
        }
        for (k, &j) in design.bounds.consumers.iter().enumerate() {
            let mut total = 0.0;
            for &e in graph.in_edges(j) {
                if design.provenance[e] == Provenance::Optimized {
                    let (p, base) = (design.p_star[e], graph.edge(e).p_base);
                    bounds = bounds.max(risk.r_min * base - p).max(p - risk.r_max * base);
                    total += p;
                    optimized_edges += 1;
                }
            }
            bounds = bounds.max(design.bounds.lower[k] - total).max(total - design.bounds.upper[k]);
        }
        let table = compute_boost_factors(&graph, &design, None).expect("boost table");
        let boosted = table.apply(&graph, &graph.p_base());
        for &j in &design.bounds.consumers {
            for &e in graph.in_edges(j) {
                boost = boost.max((boosted[e] - design.p_star[e]).abs());
            }
        }
    }
    outcome(
        simplex <= 1e-9 && bounds <= 1e-6 && boost <= 1e-9 && optimized_edges > 0,
        format!(
            "50 designs, {optimized_edges} optimized edges: simplex error {simplex:.1e} (<= 1e-9), bound violation {bounds:.1e} (<= 1e-6), boost error {boost:.1e} (<= 1e-9)"
        ),
    )
}

fn sutva_null() -> Outcome {
    let mut config = desk_config(10.0, 0.0, vec![Method::Oasis, Method::Cb], 91);
    config.delta = 1.0;
    config.identical_arms = true;
    config.repeats = 500;
    let (setup, results) = run_simulation(config).expect("null setting runs");
    let summary = sim::summarize(&results).unwrap();
    let (c_oasis, c_cb) = (coverage_of(&summary, Method::Oasis), coverage_of(&summary, Method::Cb));
    let band = 0.93..=0.97;
    outcome(
        band.contains(&c_oasis) && band.contains(&c_cb) && setup.truth.diffs[0] == 0.0,
        format!("500 repeats, true effect {}: OASIS coverage {c_oasis:.3}, CB {c_cb:.3} (both in [0.93, 0.97])", setup.truth.diffs[0]),
    )
}

fn main() -> ExitCode {
    let full_scale = std::env::var("OASIS_FULL_SCALE").is_ok_and(|v| v == "1");
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "QP oracle equivalence", qp_oracle),
        (2, "block-sweep monotonicity", block_monotonicity),
        (3, "iterative vs full solve scaling", scaling_benchmark),
        (4, "reweighting unbiasedness", unbiasedness),
        (5, "target moment estimates", moment_estimates),
        (6, "desk-scale coverage", desk_coverage),
        (7, "full-scale ground truth band", full_scale_truth),
        (8, "design invariants", design_invariants),
        (9, "null effect coverage", sutva_null),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        if id == 7 && !full_scale {
            println!("[SKIP] {id} {name}: set OASIS_FULL_SCALE=1 to run");
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(check).unwrap_or_else(|e| {
            let message = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {message}"))
        });
        let elapsed: Duration = start.elapsed();
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id} {name}: {} [{:.1}s]", result.detail, elapsed.as_secs_f64());
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
