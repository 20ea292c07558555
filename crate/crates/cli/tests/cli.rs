use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use oasis_core::design::{design_experiment, DesignConfig};
use oasis_core::estimator::{bootstrap_ci, EstimateReport, EstimatorConfig};
use oasis_core::graph::{generate_clustered_graph, GraphParams};
use oasis_core::sim::{self, ResponseModel};

fn oasis(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oasis"))
        .args(args)
        .current_dir(dir)
        .env_remove("OASIS_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) {
    let out = oasis(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

const PARAMS: GraphParams = GraphParams {
    n_clusters: 3,
    cluster_size: 120,
    d_ba: 8.0,
    ba_power: 0.25,
    d_er: 1.0,
};

fn gen_graph(dir: &Path) {
    ok(&["gen-graph", "--clusters", "3", "--cluster-size", "120", "--d-ba", "8", "--d-er", "1", "--seed", "5", "--out", "g"], dir);
}

#[test]
fn files_match_in_memory_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen_graph(dir);
    ok(&["design", "--graph", "g", "--seed", "11", "--consumers-per-block", "15", "--out", "d/design.tsv"], dir);
    ok(&["observe", "--graph", "g", "--design", "d/design.tsv", "--delta", "0.5", "--seed", "11", "--out", "obs"], dir);
    ok(
        &[
            "estimate", "--graph", "g", "--partition", "d/design.partition.tsv", "--exposures", "obs/exposures.tsv",
            "--targets", "obs/targets.tsv", "--responses", "obs/responses.tsv", "--bootstrap", "150", "--seed", "11",
            "--out", "report.json",
        ],
        dir,
    );
    let from_files: EstimateReport = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();

    let mut graph = generate_clustered_graph(&PARAMS, 5).unwrap();
    let treatments = sim::generate_attributes(&mut graph, 5).unwrap();
    let config = DesignConfig {
        consumers_per_block: Some(15),
        ..Default::default()
    };
    let design = design_experiment(&graph, &treatments, &config, 11).unwrap();
    let observed = sim::observe(&graph, &design.p_star, &design.partition, 0.5, &ResponseModel::default(), 11).unwrap();
    let estimator = EstimatorConfig {
        bootstrap: 150,
        ..Default::default()
    };
    let in_memory = bootstrap_ci(&design.partition, &observed.sample, &observed.responses, &estimator, 11).unwrap();

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
    assert_eq!(from_files.arms.len(), in_memory.arms.len());
    for (a, b) in from_files.arms.iter().zip(&in_memory.arms) {
        assert!(close(a.tau_hat, b.tau_hat), "{} vs {}", a.tau_hat, b.tau_hat);
        assert!(close(a.sigma_hat, b.sigma_hat));
        assert!(close(a.ci[0], b.ci[0]) && close(a.ci[1], b.ci[1]));
    }
    for (a, b) in from_files.effects.iter().zip(&in_memory.effects) {
        assert!(close(a.diff, b.diff), "{} vs {}", a.diff, b.diff);
        assert!(close(a.ci[0], b.ci[0]) && close(a.ci[1], b.ci[1]));
    }
}

#[test]
fn resolved_config_reproduces_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        &["simulate", "--clusters", "3", "--cluster-size", "100", "--d-ba", "6", "--repeats", "2", "--bootstrap", "100", "--seed", "9", "--out", "a"],
        dir,
    );
    ok(&["simulate", "--config", "a/config-resolved.json", "--out", "b"], dir);
    for name in ["results.csv", "summary.json", "config-resolved.json"] {
        assert_eq!(fs::read(dir.join("a").join(name)).unwrap(), fs::read(dir.join("b").join(name)).unwrap(), "{name}");
    }

    gen_graph(dir);
    ok(&["design", "--graph", "g", "--seed", "3", "--k-blocks", "20", "--out", "d1/design.tsv"], dir);
    ok(&["design", "--config", "d1/design.config-resolved.json", "--out", "d2/design.tsv"], dir);
    for name in ["design.tsv", "design.partition.tsv", "design.trace.tsv"] {
        assert_eq!(fs::read(dir.join("d1").join(name)).unwrap(), fs::read(dir.join("d2").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&["gen-graph", "--clusters", "2", "--cluster-size", "50", "--d-ba", "4", "--seed", "42", "--out", "flag"], dir);
    let out = Command::new(env!("CARGO_BIN_EXE_oasis"))
        .args(["gen-graph", "--clusters", "2", "--cluster-size", "50", "--d-ba", "4", "--out", "env"])
        .current_dir(dir)
        .env("OASIS_SEED", "42")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(dir.join("flag/graph.tsv")).unwrap(), fs::read(dir.join("env/graph.tsv")).unwrap());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let unknown = oasis(&["design", "--no-such-flag"], dir);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));

    gen_graph(dir);
    let invalid = oasis(&["design", "--graph", "g", "--r-max", "0.5", "--out", "d.tsv"], dir);
    assert_eq!(invalid.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("oas-design"));

    let missing = oasis(&["estimate", "--graph", "nowhere", "--partition", "p", "--exposures", "x", "--targets", "t", "--responses", "y", "--out", "r.json"], dir);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("net-graph"));

    assert_eq!(oasis(&["--help"], dir).status.code(), Some(0));
}

#[test]
fn report_boxes_match_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        &["simulate", "--clusters", "3", "--cluster-size", "100", "--d-ba", "6", "--repeats", "4", "--bootstrap", "100", "--out", "s"],
        dir,
    );
    ok(&["report", "--results", "s/results.csv", "--labels", "cell", "--out", "r"], dir);
    let svg = fs::read_to_string(dir.join("r/results.svg")).unwrap();
    assert_eq!(svg.matches("data-method=").count(), 2);
    let results = sim::read_results_file(&dir.join("s/results.csv")).unwrap();
    let summary = sim::summarize(&results).unwrap();
    for m in &summary.methods {
        let tag = format!("data-method=\"{}\"", m.method.as_str());
        let at = svg.find(&tag).expect("box per method");
        let rest = &svg[at..];
        let attr = |name: &str| -> f64 {
            let key = format!("{name}=\"");
            let start = rest.find(&key).unwrap() + key.len();
            rest[start..start + rest[start..].find('"').unwrap()].parse().unwrap()
        };
        assert_eq!(attr("data-q1"), m.error.q1);
        assert_eq!(attr("data-median"), m.error.median);
        assert_eq!(attr("data-q3"), m.error.q3);
    }
    assert!(dir.join("r/coverage.svg").exists());
}
