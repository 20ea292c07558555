//! Monte Carlo comparison of the design-and-reweight pipeline against an
//! oracle cluster-randomized baseline on generated clustered graphs.

mod report;

use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{
    box_stats, coverage_svg, quantile, read_results, read_results_file, results_svg, summarize, write_results,
    write_results_file, BoxStats, MethodSummary, Panel, Summary,
};

use crate::design::{design_experiment, DesignConfig, ExposureSetMode, Partition, RiskParams};
use crate::error::{Error, Result};
use crate::estimator::{bootstrap_ci, collect_exposures, normal_quantile, EstimatorConfig, ExposureSample};
use crate::graph::{generate_clustered_graph, GraphParams, MarketplaceGraph, NodeId, TreatmentSet};
use crate::qp::QpConfig;
use crate::rng::{self, Purpose};

pub const SCHEMA_VERSION: u32 = 1;

/// `(d_ba, d_er)` pairs of the reduced-size settings: sparse/pure, medium, dense/impure.
pub const DESK_SETTINGS: [(f64, f64); 3] = [(10.0, 1.0), (24.0, 3.0), (16.0, 8.0)];
/// `(d_ba, d_er)` pairs at full size (10 clusters of 5000).
pub const FULL_SETTINGS: [(f64, f64); 3] = [(20.0, 1.0), (50.0, 5.0), (80.0, 40.0)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Oasis,
    Cb,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Oasis => "oasis",
            Method::Cb => "cb",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub schema_version: u32,
    pub graph: GraphParams,
    /// Exponent on edge weights in the mediator; 1 is the linear case.
    pub delta: f64,
    pub frac_omega: Vec<f64>,
    pub frac_lambda: Vec<f64>,
    pub q: f64,
    pub exposure_set: ExposureSetMode,
    pub risk: RiskParams,
    pub qp: QpConfig,
    /// When set, the block count is chosen per repeat to give about this many
    /// consumers per block, overriding `qp.k_blocks`.
    pub consumers_per_block: Option<usize>,
    /// Affinity assumed by the design; `None` uses the true affinities.
    pub alpha_override: Option<f64>,
    pub estimator: EstimatorConfig,
    pub repeats: usize,
    pub seed: u64,
    /// Makes the treatment arm equal to the control (a null effect).
    pub identical_arms: bool,
    pub methods: Vec<Method>,
    pub noise_sd: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let (d_ba, d_er) = DESK_SETTINGS[0];
        Self {
            schema_version: SCHEMA_VERSION,
            graph: GraphParams {
                n_clusters: 10,
                cluster_size: 500,
                d_ba,
                ba_power: 0.25,
                d_er,
            },
            delta: 0.5,
            frac_omega: vec![0.1, 0.1],
            frac_lambda: vec![0.1, 0.1],
            q: 0.5,
            exposure_set: ExposureSetMode::Bernoulli,
            risk: RiskParams::default(),
            qp: QpConfig::default(),
            consumers_per_block: Some(15),
            alpha_override: Some(1.0),
            estimator: EstimatorConfig::default(),
            repeats: 200,
            seed: 1,
            identical_arms: false,
            methods: vec![Method::Oasis, Method::Cb],
            noise_sd: 1.0,
        }
    }
}

impl SimConfig {
    /// Full-size graph for one of [`FULL_SETTINGS`].
    pub fn full_scale(setting: usize) -> Self {
        let (d_ba, d_er) = FULL_SETTINGS[setting];
        let mut config = Self::default();
        config.graph = GraphParams {
            n_clusters: 10,
            cluster_size: 5000,
            d_ba,
            ba_power: 0.25,
            d_er,
        };
        config
    }

    pub fn design_config(&self) -> DesignConfig {
        DesignConfig {
            frac_omega: self.frac_omega.clone(),
            frac_lambda: self.frac_lambda.clone(),
            q: self.q,
            exposure_set: self.exposure_set,
            risk: self.risk,
            qp: self.qp,
            consumers_per_block: self.consumers_per_block,
            alpha_override: self.alpha_override,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::Parameter(format!("delta must be positive, got {}", self.delta)));
        }
        if self.repeats == 0 {
            return Err(Error::Parameter("repeats must be positive".into()));
        }
        if self.frac_omega.len() != 2 || self.frac_lambda.len() != 2 {
            return Err(Error::Parameter("the simulation uses one control and one treatment arm".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Parameter("no methods selected".into()));
        }
        if self.consumers_per_block == Some(0) {
            return Err(Error::Parameter("consumers_per_block must be positive".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Parameter(format!("noise_sd must be non-negative, got {}", self.noise_sd)));
        }
        self.risk.check()?;
        self.qp.check()?;
        self.estimator.check()
    }
}

/// Logistic link `g(x) = scale / (1 + e^{-x/10})` plus Gaussian noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResponseModel {
    pub scale: f64,
    pub noise_sd: f64,
}

impl Default for ResponseModel {
    fn default() -> Self {
        Self {
            scale: 10.0,
            noise_sd: 1.0,
        }
    }
}

impl ResponseModel {
    pub fn link(&self, x: f64) -> f64 {
        self.scale / (1.0 + (-x / 10.0).exp())
    }

    /// Noise-free response for consumer-side exposure `w` and total exposure `z`.
    pub fn mean_response(&self, w: f64, z: f64) -> f64 {
        self.link(w + z * (1.0 + w))
    }
}

/// Fills affinities and baseline weights and returns control plus one
/// treatment arm. `U ~ U[10, 100]`, `V ~ U[1, 2]` per directed edge in edge
/// order; `α = U / d_j`, `p_base = V / Σ V` per consumer, and the treatment is
/// `p_base · sqrt(α / ln(1 + d_i d_j))` renormalized per consumer.
pub fn generate_attributes(graph: &mut MarketplaceGraph, seed: u64) -> Result<TreatmentSet> {
    if !graph.is_symmetric() {
        return Err(Error::Graph("attribute generation needs a symmetric graph".into()));
    }
    let mut rng = rng::stream(seed, Purpose::Attributes, 0);
    let u_dist = Uniform::new(10.0, 100.0).expect("valid range");
    let v_dist = Uniform::new(1.0, 2.0).expect("valid range");
    let m = graph.n_edges();
    let mut alpha = vec![0.0; m];
    let mut v = vec![0.0; m];
    for e in 0..m {
        let d_j = graph.in_degree(graph.edge(e).dst) as f64;
        alpha[e] = u_dist.sample(&mut rng) / d_j;
        v[e] = v_dist.sample(&mut rng);
    }
    let mut p_base = vec![0.0; m];
    for j in graph.nodes() {
        let parents = graph.in_edges(j);
        let total: f64 = parents.iter().map(|&e| v[e]).sum();
        for &e in parents {
            p_base[e] = v[e] / total;
        }
    }
    graph.set_attributes(&p_base, &alpha)?;
    let treated = treatment_weights(graph);
    TreatmentSet::new(graph, vec![p_base, treated])
}

/// `p_base · sqrt(α / ln(1 + d_i d_j))` normalized per consumer, from the
/// graph's current attributes.
pub fn treatment_weights(graph: &MarketplaceGraph) -> Vec<f64> {
    let mut treated = vec![0.0; graph.n_edges()];
    for j in graph.nodes() {
        let parents = graph.in_edges(j);
        let d_j = parents.len() as f64;
        for &e in parents {
            let edge = graph.edge(e);
            let d_i = graph.in_degree(edge.src) as f64;
            treated[e] = edge.p_base * (edge.alpha / (1.0 + d_i * d_j).ln()).sqrt();
        }
        let total: f64 = parents.iter().map(|&e| treated[e]).sum();
        for &e in parents {
            treated[e] /= total;
        }
    }
    treated
}

/// Consumer-side exposure `W` and total exposure `Z(δ)` of every node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeExposures {
    pub w: Vec<f64>,
    pub z: Vec<f64>,
}

/// `W_i = (1/d_i) Σ_{k∈Pa(i)} α_ki p_ki` and `Z_i = Σ_{j∈Ch(i)} α_ij p_ij^δ`.
pub fn compute_exposures(graph: &MarketplaceGraph, weights: &[f64], delta: f64) -> NodeExposures {
    let n = graph.n_nodes();
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    for (e, edge) in graph.edges().iter().enumerate() {
        let p = weights[e];
        w[edge.dst.index()] += edge.alpha * p;
        z[edge.src.index()] += edge.alpha * p.powf(delta);
    }
    for j in graph.nodes() {
        let d = graph.in_degree(j);
        if d > 0 {
            w[j.index()] /= d as f64;
        }
    }
    NodeExposures { w, z }
}

/// Per-edge mediator values `α_ij p_ij^δ`.
pub fn edge_mediators(graph: &MarketplaceGraph, weights: &[f64], delta: f64) -> Vec<f64> {
    graph
        .edges()
        .iter()
        .zip(weights)
        .map(|(edge, &p)| edge.alpha * p.powf(delta))
        .collect()
}

pub fn generate_responses(exposures: &NodeExposures, model: &ResponseModel, rng: &mut rng::Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, model.noise_sd).expect("non-negative sd");
    exposures
        .w
        .iter()
        .zip(&exposures.z)
        .map(|(&w, &z)| model.mean_response(w, z) + noise.sample(rng))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tau: Vec<f64>,
    /// `tau[r] − tau[0]` for `r ≥ 1`.
    pub diffs: Vec<f64>,
}

/// Noise-free population means under each global treatment.
pub fn ground_truth(graph: &MarketplaceGraph, treatments: &TreatmentSet, delta: f64, model: &ResponseModel) -> GroundTruth {
    let n = graph.n_nodes() as f64;
    let tau: Vec<f64> = treatments
        .arms()
        .iter()
        .map(|arm| {
            let ex = compute_exposures(graph, arm, delta);
            ex.w.iter().zip(&ex.z).map(|(&w, &z)| model.mean_response(w, z)).sum::<f64>() / n
        })
        .collect();
    GroundTruth {
        diffs: tau.iter().skip(1).map(|t| t - tau[0]).collect(),
        tau,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub repeat: usize,
    pub method: Method,
    pub estimate: f64,
    pub truth: f64,
    pub error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub covered: bool,
}

impl TrialResult {
    pub fn new(repeat: usize, method: Method, estimate: f64, ci: [f64; 2], truth: f64) -> Self {
        Self {
            repeat,
            method,
            estimate,
            truth,
            error: estimate - truth,
            ci_lo: ci[0],
            ci_hi: ci[1],
            covered: ci[0] <= truth && truth <= ci[1],
        }
    }
}

/// Graph, attributes and ground truth shared by every repeat of a setting.
#[derive(Clone, Debug)]
pub struct SimSetup {
    pub config: SimConfig,
    pub graph: MarketplaceGraph,
    pub treatments: TreatmentSet,
    pub model: ResponseModel,
    pub truth: GroundTruth,
}

impl SimSetup {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.check()?;
        let mut graph = generate_clustered_graph(&config.graph, config.seed)?;
        let mut treatments = generate_attributes(&mut graph, config.seed)?;
        if config.identical_arms {
            treatments = TreatmentSet::new(&graph, vec![graph.p_base(), graph.p_base()])?;
        }
        let model = ResponseModel {
            noise_sd: config.noise_sd,
            ..Default::default()
        };
        let truth = ground_truth(&graph, &treatments, config.delta, &model);
        Ok(Self {
            config,
            graph,
            treatments,
            model,
            truth,
        })
    }

    fn repeat_seed(&self, repeat: usize) -> u64 {
        rng::derive_seed(self.config.seed, repeat as u64)
    }
}

/// One design experiment: partition, design, responses under the design, and
/// the reweighted estimate of the treatment-minus-control effect.
pub fn run_oasis_trial(setup: &SimSetup, repeat: usize) -> Result<TrialResult> {
    let config = &setup.config;
    let graph = &setup.graph;
    let seed = setup.repeat_seed(repeat);
    let design = design_experiment(graph, &setup.treatments, &config.design_config(), seed)?;
    let observed = observe(graph, &design.p_star, &design.partition, config.delta, &setup.model, seed)?;
    let report = bootstrap_ci(&design.partition, &observed.sample, &observed.responses, &config.estimator, seed)?;
    let effect = &report.effects[0];
    Ok(TrialResult::new(repeat, Method::Oasis, effect.diff, effect.ci, setup.truth.diffs[0]))
}

/// What an experiment run under a design records.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub sample: ExposureSample,
    /// One response per node.
    pub responses: Vec<f64>,
}

/// Runs the response model under `weights`: per-edge mediators give the
/// exposure sample and node responses get noise from the responses stream of `seed`.
pub fn observe(
    graph: &MarketplaceGraph,
    weights: &[f64],
    partition: &Partition,
    delta: f64,
    model: &ResponseModel,
    seed: u64,
) -> Result<Observation> {
    let exposures = compute_exposures(graph, weights, delta);
    let responses = generate_responses(&exposures, model, &mut rng::stream(seed, Purpose::Responses, 0));
    let sample = collect_exposures(graph, partition, &edge_mediators(graph, weights, delta))?;
    Ok(Observation { sample, responses })
}

/// Oracle cluster randomization: two distinct generator clusters receive the
/// control and treatment on all their incoming edges; the estimate is the
/// difference of cluster means with a Welch normal interval.
pub fn run_cb_trial(setup: &SimSetup, repeat: usize) -> Result<TrialResult> {
    let graph = &setup.graph;
    let k = graph.n_clusters();
    if k < 2 {
        return Err(Error::Parameter(format!("cluster randomization needs at least 2 clusters, graph has {k}")));
    }
    let seed = setup.repeat_seed(repeat);
    let picked = sample_indices(&mut rng::stream(seed, Purpose::ClusterChoice, 0), k, 2);
    let clusters = [picked.index(0) as u32, picked.index(1) as u32];

    let mut weights = graph.p_base();
    for j in graph.nodes() {
        if let Some(r) = clusters.iter().position(|&c| c == graph.cluster_of(j)) {
            for &e in graph.in_edges(j) {
                weights[e] = setup.treatments.weight(r, e);
            }
        }
    }
    let exposures = compute_exposures(graph, &weights, setup.config.delta);
    let responses = generate_responses(&exposures, &setup.model, &mut rng::stream(seed, Purpose::Responses, 1));

    let members = |c: u32| -> Vec<f64> {
        graph
            .nodes()
            .filter(|&i| graph.cluster_of(i) == c)
            .map(|i: NodeId| responses[i.index()])
            .collect()
    };
    let (y0, y1) = (members(clusters[0]), members(clusters[1]));
    let (m0, s0) = crate::estimator::mean_sd(&y0);
    let (m1, s1) = crate::estimator::mean_sd(&y1);
    let diff = m1 - m0;
    let se = (s1 * s1 / y1.len() as f64 + s0 * s0 / y0.len() as f64).sqrt();
    let z = normal_quantile(1.0 - setup.config.estimator.alpha / 2.0);
    Ok(TrialResult::new(repeat, Method::Cb, diff, [diff - z * se, diff + z * se], setup.truth.diffs[0]))
}

/// Runs the given repeats for every configured method, in parallel, and
/// returns results ordered by repeat then method.
pub fn run_repeats(setup: &SimSetup, repeats: impl IntoIterator<Item = usize>) -> Result<Vec<TrialResult>> {
    let repeats: Vec<usize> = repeats.into_iter().collect();
    let per_repeat: Vec<Vec<TrialResult>> = repeats
        .par_iter()
        .map(|&t| {
            let mut methods = setup.config.methods.clone();
            methods.sort();
            methods.dedup();
            methods
                .iter()
                .map(|m| match m {
                    Method::Oasis => run_oasis_trial(setup, t),
                    Method::Cb => run_cb_trial(setup, t),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut results: Vec<TrialResult> = per_repeat.into_iter().flatten().collect();
    results.sort_by_key(|r| (r.repeat, r.method));
    Ok(results)
}

pub fn run_simulation(config: SimConfig) -> Result<(SimSetup, Vec<TrialResult>)> {
    let setup = SimSetup::new(config)?;
    let results = run_repeats(&setup, 0..setup.config.repeats)?;
    Ok((setup, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, SIMPLEX_TOL};

    fn small_config() -> SimConfig {
        SimConfig {
            graph: GraphParams {
                n_clusters: 4,
                cluster_size: 150,
                d_ba: 8.0,
                ba_power: 0.25,
                d_er: 1.0,
            },
            estimator: EstimatorConfig {
                bootstrap: 100,
                ..Default::default()
            },
            repeats: 2,
            ..Default::default()
        }
    }

    fn cycle(n: usize) -> MarketplaceGraph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in [(i + 1) % n, (i + n - 1) % n] {
                edges.push(Edge {
                    src: NodeId(i as u32),
                    dst: NodeId(j as u32),
                    p_base: 0.5,
                    alpha: 1.0,
                });
            }
        }
        MarketplaceGraph::from_edges(n, edges, vec![0; n]).unwrap()
    }

    #[test]
    fn link_function() {
        let model = ResponseModel::default();
        assert_eq!(model.link(0.0), 5.0);
        assert!(model.link(-1e3) > 0.0 && model.link(1e3) <= 10.0);
        assert!(model.link(1.0) > model.link(0.5));
    }

    #[test]
    fn attributes_are_normalized_and_bounded() {
        let config = small_config();
        let mut g = generate_clustered_graph(&config.graph, 3).unwrap();
        let t = generate_attributes(&mut g, 3).unwrap();
        for j in g.nodes() {
            let d = g.in_degree(j) as f64;
            for arm in t.arms() {
                let s: f64 = g.in_edges(j).iter().map(|&e| arm[e]).sum();
                assert!((s - 1.0).abs() < SIMPLEX_TOL);
            }
            for &e in g.in_edges(j) {
                let a = g.edge(e).alpha;
                assert!(10.0 / d <= a && a <= 100.0 / d);
            }
        }
        assert_ne!(t.arm(0), t.arm(1));
    }

    #[test]
    fn regular_graph_with_equal_affinity_keeps_arms_equal() {
        let mut g = cycle(4);
        g.set_attributes(&vec![0.5; g.n_edges()], &vec![20.0; g.n_edges()]).unwrap();
        assert_eq!(treatment_weights(&g), g.p_base());
        // unequal affinities move the treatment away from the baseline
        let mut alpha = vec![20.0; g.n_edges()];
        alpha[0] = 60.0;
        g.set_attributes(&vec![0.5; g.n_edges()], &alpha).unwrap();
        assert_ne!(treatment_weights(&g), g.p_base());
    }

    #[test]
    fn exposure_arithmetic() {
        let mut g = cycle(3);
        let alpha = vec![2.0; g.n_edges()];
        g.set_attributes(&vec![0.5; g.n_edges()], &alpha).unwrap();
        let ex = compute_exposures(&g, &g.p_base(), 1.0);
        // two children, α = 2, p = 0.5 each
        assert!((ex.z[0] - 2.0).abs() < 1e-15);
        assert!((ex.w[0] - 1.0).abs() < 1e-15);
        let mut halved = g.p_base();
        halved[0] = 0.25;
        let a = edge_mediators(&g, &g.p_base(), 0.5)[0];
        let b = edge_mediators(&g, &halved, 0.5)[0];
        assert!((a / b - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mediator_strength_decreases_in_delta() {
        let config = small_config();
        let mut g = generate_clustered_graph(&config.graph, 5).unwrap();
        generate_attributes(&mut g, 5).unwrap();
        let p = g.p_base();
        let z: Vec<Vec<f64>> = [0.25, 0.5, 1.0].iter().map(|&d| compute_exposures(&g, &p, d).z).collect();
        for i in 0..g.n_nodes() {
            assert!(z[0][i] >= z[1][i] && z[1][i] >= z[2][i]);
        }
    }

    #[test]
    fn identical_arms_have_zero_truth() {
        let config = SimConfig {
            identical_arms: true,
            ..small_config()
        };
        let setup = SimSetup::new(config).unwrap();
        assert_eq!(setup.truth.diffs[0], 0.0);
        let again = SimSetup::new(setup.config.clone()).unwrap();
        assert_eq!(setup.truth, again.truth);
    }

    #[test]
    fn noise_free_responses_match_truth() {
        let setup = SimSetup::new(SimConfig {
            noise_sd: 0.0,
            ..small_config()
        })
        .unwrap();
        let ex = compute_exposures(&setup.graph, setup.treatments.arm(0), setup.config.delta);
        let y = generate_responses(&ex, &setup.model, &mut rng::stream(1, Purpose::Responses, 0));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - setup.truth.tau[0]).abs() < 1e-12);
    }

    #[test]
    fn trials_are_reproducible_and_order_free() {
        let setup = SimSetup::new(small_config()).unwrap();
        let all = run_repeats(&setup, 0..2).unwrap();
        let mut reversed = run_repeats(&setup, [1, 0]).unwrap();
        reversed.sort_by_key(|r| (r.repeat, r.method));
        assert_eq!(all, reversed);
        assert_eq!(all.len(), 4);
        for r in &all {
            assert_eq!(r.covered, r.ci_lo <= r.truth && r.truth <= r.ci_hi);
            assert!(r.estimate.is_finite());
        }
    }

    #[test]
    fn cb_needs_two_clusters() {
        let mut config = small_config();
        config.graph.n_clusters = 1;
        config.graph.cluster_size = 300;
        let setup = SimSetup::new(config).unwrap();
        assert!(matches!(run_cb_trial(&setup, 0), Err(Error::Parameter(_))));
    }
}
