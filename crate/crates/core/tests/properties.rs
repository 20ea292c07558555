use oasis_core::design::{compute_boost_factors, design_experiment, DesignConfig, Provenance, Role};
use oasis_core::estimator::{effective_sample_size, estimate_arm, importance_weights, DensityModel, EstimatorMode};
use oasis_core::graph::io::write_graph;
use oasis_core::graph::{generate_clustered_graph, GraphParams, MarketplaceGraph, TreatmentSet};
use oasis_core::qp::synthetic::benchmark_instance;
use oasis_core::qp::{solve_allocation, BlockPlan, QpConfig};
use oasis_core::sim::{compute_exposures, generate_attributes, ground_truth, ResponseModel};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = GraphParams> {
    (1usize..4, 20usize..80, 1.0f64..8.0, 0.0f64..3.0).prop_map(|(n_clusters, cluster_size, d_ba, d_er)| GraphParams {
        n_clusters,
        cluster_size,
        d_ba,
        ba_power: 0.25,
        d_er,
    })
}

fn world(params: &GraphParams, seed: u64) -> (MarketplaceGraph, TreatmentSet) {
    let mut graph = generate_clustered_graph(params, seed).unwrap();
    let treatments = generate_attributes(&mut graph, seed).unwrap();
    (graph, treatments)
}

fn simplex_error(graph: &MarketplaceGraph, weights: &[f64]) -> f64 {
    graph
        .nodes()
        .filter(|&j| graph.in_degree(j) > 0)
        .map(|j| (graph.in_edges(j).iter().map(|&e| weights[e]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_graphs_are_symmetric_simplices(params in params(), seed in any::<u64>()) {
        let (graph, treatments) = world(&params, seed);
        prop_assert!(graph.is_symmetric());
        for i in graph.nodes() {
            prop_assert_eq!(graph.in_degree(i), graph.out_degree(i));
        }
        prop_assert!(simplex_error(&graph, &graph.p_base()) <= 1e-9);
        prop_assert!(simplex_error(&graph, treatments.arm(1)) <= 1e-9);

        let (again, _) = world(&params, seed);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_graph(&graph, &mut a).unwrap();
        write_graph(&again, &mut b).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn designs_respect_roles_and_bounds(seed in any::<u64>(), q in 0.0f64..=1.0, d_ba in 3.0f64..8.0) {
        let params = GraphParams { n_clusters: 2, cluster_size: 60, d_ba, ba_power: 0.25, d_er: 1.0 };
        let (graph, treatments) = world(&params, seed);
        let config = DesignConfig { q, consumers_per_block: Some(10), ..Default::default() };
        let design = design_experiment(&graph, &treatments, &config, seed).unwrap();
        let roles = design.partition.roles(graph.n_nodes()).unwrap();
        let risk = config.risk;
        let in_exposure_set: Vec<bool> = {
            let mut mark = vec![false; graph.n_nodes()];
            for &j in &design.bounds.consumers { mark[j.index()] = true; }
            mark
        };

        for j in graph.nodes() {
            let incoming = graph.in_edges(j);
            match roles[j.index()].arm() {
                Some(r) => for &e in incoming {
                    prop_assert_eq!(design.p_star[e], treatments.weight(r, e));
                },
                None if !in_exposure_set[j.index()] => for &e in incoming {
                    prop_assert_eq!(design.p_star[e], graph.edge(e).p_base);
                },
                None => {}
            }
        }
        for (k, &j) in design.bounds.consumers.iter().enumerate() {
            let mut optimized_sum = 0.0;
            for &e in graph.in_edges(j) {
                if design.provenance[e] == Provenance::Optimized {
                    let base = graph.edge(e).p_base;
                    let p = design.p_star[e];
                    prop_assert!(p >= risk.r_min * base - 1e-6 && p <= risk.r_max * base + 1e-6);
                    prop_assert!(matches!(roles[graph.edge(e).src.index()], Role::Omega(_)));
                    optimized_sum += p;
                }
            }
            prop_assert!(optimized_sum >= design.bounds.lower[k] - 1e-6 && optimized_sum <= design.bounds.upper[k] + 1e-6);
        }
        prop_assert!(simplex_error(&graph, &design.p_star) <= 1e-9);

        let table = compute_boost_factors(&graph, &design, None).unwrap();
        let boosted = table.apply(&graph, &graph.p_base());
        for &j in &design.bounds.consumers {
            for &e in graph.in_edges(j) {
                prop_assert!((boosted[e] - design.p_star[e]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn block_sweeps_never_increase_the_objective(seed in any::<u64>(), k in 1usize..8, n in 40usize..200) {
        let problem = benchmark_instance(n, n / 4 + 2, seed);
        let plan = BlockPlan::round_robin(&problem.consumers, k, 3);
        let result = solve_allocation(&problem, &plan, &QpConfig::default()).unwrap();
        let mut previous = result.initial_objective;
        for &j in &result.block_objectives {
            prop_assert!(j <= previous + 1e-6, "{} after {}", j, previous);
            previous = j;
        }
        prop_assert!(problem.max_violation(&result.x) <= 1e-6);
        let again = solve_allocation(&problem, &plan, &QpConfig::default()).unwrap();
        prop_assert_eq!(result.x, again.x);
    }

    #[test]
    fn weights_are_positive_and_ess_is_bounded(
        z in prop::collection::vec(-3.0f64..3.0, 3..60),
        shift in -1.0f64..1.0,
        scale in 0.5f64..2.0,
    ) {
        let source = DensityModel::gaussian(0.0, 1.0).unwrap();
        let target = DensityModel::gaussian(shift, scale).unwrap();
        let weights = importance_weights(&z, &target, &source, None);
        prop_assert!(weights.values.iter().all(|&w| w > 0.0));
        let ess = effective_sample_size(&weights.values);
        prop_assert!(ess <= z.len() as f64 * (1.0 + 1e-12));
        let equal = vec![0.7; z.len()];
        prop_assert!((effective_sample_size(&equal) - z.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn same_density_reduces_to_the_arm_mean(
        z in prop::collection::vec(-3.0f64..3.0, 2..50),
        y in prop::collection::vec(-10.0f64..10.0, 50),
    ) {
        let y = &y[..z.len()];
        let density = DensityModel::gaussian(0.3, 1.1).unwrap();
        let weights = importance_weights(&z, &density, &density, Some(50.0));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        for mode in [EstimatorMode::Plain, EstimatorMode::SelfNormalized] {
            prop_assert_eq!(estimate_arm(y, &weights.values, mode).unwrap(), mean);
        }
    }

    #[test]
    fn exposure_falls_as_delta_grows(seed in any::<u64>(), d1 in 0.05f64..2.0, step in 0.01f64..1.0) {
        let params = GraphParams { n_clusters: 2, cluster_size: 40, d_ba: 4.0, ba_power: 0.25, d_er: 1.0 };
        let (graph, treatments) = world(&params, seed);
        let low = compute_exposures(&graph, treatments.arm(1), d1);
        let high = compute_exposures(&graph, treatments.arm(1), d1 + step);
        for (a, b) in low.z.iter().zip(&high.z) {
            prop_assert!(b <= a);
        }
        let model = ResponseModel::default();
        prop_assert_eq!(ground_truth(&graph, &treatments, d1, &model), ground_truth(&graph, &treatments, d1, &model));
    }
}

#[test]
fn mean_degree_tracks_targets() {
    for (d_ba, d_er) in [(10.0, 1.0), (16.0, 8.0)] {
        let params = GraphParams {
            n_clusters: 4,
            cluster_size: 500,
            d_ba,
            ba_power: 0.25,
            d_er,
        };
        let mean: f64 = (0..20)
            .map(|seed| generate_clustered_graph(&params, seed).unwrap().mean_in_degree())
            .sum::<f64>()
            / 20.0;
        let target = d_ba + d_er;
        assert!((mean - target).abs() <= 0.1 * target, "{mean} vs {target}");
    }
}
