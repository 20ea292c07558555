//! Resolved per-command configs and the command bodies.
//!
//! Every command merges its JSON config (if any) with the flags, writes the
//! merged config as `config-resolved.json`, and then runs. A resolved config
//! can be passed back through `--config` to repeat the run.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use oasis_core::design::io as design_io;
use oasis_core::design::{compute_boost_factors, compute_sum_bounds, design_experiment, design_for_partition, DesignConfig, DesignOutput, ExposureSetMode};
use oasis_core::estimator::io as estimator_io;
use oasis_core::estimator::{bootstrap_ci, DensityKind, EstimatorConfig, EstimatorMode};
use oasis_core::graph::io as graph_io;
use oasis_core::graph::{generate_clustered_graph, validate, GraphParams, MarketplaceGraph, TreatmentSet};
use oasis_core::sim::{self, Method, Panel, ResponseModel, SimConfig, SCHEMA_VERSION};
use oasis_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{BoostArgs, CliError, DesignArgs, EstimateArgs, GenGraphArgs, GraphInput, ObserveArgs, ReportArgs, SimulateArgs};

pub const RESOLVED_CONFIG: &str = "config-resolved.json";

type CliResult<T = ()> = std::result::Result<T, CliError>;

trait InModule<T> {
    fn module(self, module: &'static str) -> CliResult<T>;
}

impl<T> InModule<T> for Result<T> {
    fn module(self, module: &'static str) -> CliResult<T> {
        self.map_err(|source| CliError::Module { module, source })
    }
}

fn required<T: Clone>(value: &Option<T>, flag: &str) -> CliResult<T> {
    value.clone().ok_or_else(|| CliError::Usage(format!("missing --{flag} (or its config field)")))
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Module {
        module: "oasis-cli",
        source: Error::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Module {
        module: "oasis-cli",
        source: Error::Config(format!("{}: {e}", path.display())),
    })
}

fn check_schema(version: u32) -> CliResult {
    if version != SCHEMA_VERSION {
        return Err(CliError::Module {
            module: "oasis-cli",
            source: Error::Config(format!("schema_version {version} is not supported (expected {SCHEMA_VERSION})")),
        });
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult {
    let io = |e: std::io::Error| CliError::Module {
        module: "oasis-cli",
        source: Error::io(path, e),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("configs serialize");
    text.push('\n');
    fs::write(path, text).map_err(io)
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| CliError::Module {
        module: "oasis-cli",
        source: Error::io(dir, e),
    })
}

/// `dir/name.tsv` -> `dir/name.<suffix>`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphPaths {
    pub graph: Option<PathBuf>,
    pub nodes: Option<PathBuf>,
    pub treatments: Option<PathBuf>,
}

impl GraphPaths {
    fn merge(&mut self, input: &GraphInput) {
        if input.graph.is_some() {
            self.graph = input.graph.clone();
        }
        if input.nodes.is_some() {
            self.nodes = input.nodes.clone();
        }
    }

    fn edge_file(&self) -> CliResult<PathBuf> {
        let graph = required(&self.graph, "graph")?;
        Ok(if graph.is_dir() { graph.join(graph_io::GRAPH_FILE) } else { graph })
    }

    fn beside_edges(&self, explicit: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
        match explicit {
            Some(p) => Ok(p.clone()),
            None => Ok(self.edge_file()?.with_file_name(name)),
        }
    }

    fn load_graph(&self) -> CliResult<MarketplaceGraph> {
        let edges = self.edge_file()?;
        let nodes = self.beside_edges(&self.nodes, graph_io::NODES_FILE)?;
        graph_io::load_graph(&edges, &nodes).module("net-graph")
    }

    fn load_treatments(&self, graph: &MarketplaceGraph) -> CliResult<TreatmentSet> {
        let path = self.beside_edges(&self.treatments, graph_io::TREATMENT_FILE)?;
        graph_io::load_treatments(graph, &path).module("net-graph")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenGraphRun {
    pub schema_version: u32,
    pub graph: GraphParams,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for GenGraphRun {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            graph: SimConfig::default().graph,
            seed: 1,
            out: None,
        }
    }
}

pub fn gen_graph(args: GenGraphArgs) -> CliResult {
    let mut run: GenGraphRun = load_config(args.common.config.as_deref())?;
    check_schema(run.schema_version)?;
    let g = &mut run.graph;
    g.n_clusters = args.clusters.unwrap_or(g.n_clusters);
    g.cluster_size = args.cluster_size.unwrap_or(g.cluster_size);
    g.d_ba = args.d_ba.unwrap_or(g.d_ba);
    g.d_er = args.d_er.unwrap_or(g.d_er);
    g.ba_power = args.ba_power.unwrap_or(g.ba_power);
    run.seed = args.common.seed.unwrap_or(run.seed);
    if args.out.is_some() {
        run.out = args.out;
    }
    let out = required(&run.out, "out")?;

    let mut graph = generate_clustered_graph(&run.graph, run.seed).module("net-graph")?;
    let treatments = sim::generate_attributes(&mut graph, run.seed).module("net-graph")?;
    let report = validate(&graph, &treatments);
    if !report.is_ok() {
        return Err(CliError::Module {
            module: "net-graph",
            source: Error::Graph(format!("{} violations, first: {:?}", report.violations.len(), report.violations[0])),
        });
    }
    graph_io::save(&graph, &treatments, &out).module("net-graph")?;
    write_json(&run, &out.join(RESOLVED_CONFIG))?;
    info!("{} nodes, {} edges written to {}", graph.n_nodes(), graph.n_edges(), out.display());
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignRun {
    pub schema_version: u32,
    pub inputs: GraphPaths,
    pub partition: Option<PathBuf>,
    pub design: DesignConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for DesignRun {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            inputs: GraphPaths::default(),
            partition: None,
            design: DesignConfig::default(),
            seed: 1,
            out: None,
        }
    }
}

fn write_trace(trace: &[f64], path: &Path) -> CliResult {
    let mut text = String::from("sweep\tobjective\n");
    for (k, v) in trace.iter().enumerate() {
        text.push_str(&format!("{k}\t{}\n", graph_io::fmt_real(*v)));
    }
    fs::write(path, text).map_err(|e| CliError::Module {
        module: "oas-design",
        source: Error::io(path, e),
    })
}

pub fn design(args: DesignArgs) -> CliResult {
    let mut run: DesignRun = load_config(args.common.config.as_deref())?;
    check_schema(run.schema_version)?;
    run.inputs.merge(&args.input);
    if args.treatments.is_some() {
        run.inputs.treatments = args.treatments;
    }
    if args.partition.is_some() {
        run.partition = args.partition;
    }
    let d = &mut run.design;
    if let Some(v) = args.frac_omega {
        d.frac_omega = v;
    }
    if let Some(v) = args.frac_lambda {
        d.frac_lambda = v;
    }
    d.q = args.q.unwrap_or(d.q);
    if let Some(frac) = args.gamma {
        d.exposure_set = ExposureSetMode::Gamma { frac };
    }
    d.risk.r_min = args.r_min.unwrap_or(d.risk.r_min);
    d.risk.r_max = args.r_max.unwrap_or(d.risk.r_max);
    d.risk.s_min = args.s_min.unwrap_or(d.risk.s_min);
    d.risk.s_max = args.s_max.unwrap_or(d.risk.s_max);
    d.qp.k_blocks = args.k_blocks.unwrap_or(d.qp.k_blocks);
    d.qp.max_outer = args.max_outer.unwrap_or(d.qp.max_outer);
    if args.consumers_per_block.is_some() {
        d.consumers_per_block = args.consumers_per_block;
    }
    if args.alpha_override.is_some() {
        d.alpha_override = args.alpha_override;
    }
    run.seed = args.common.seed.unwrap_or(run.seed);
    if args.out.is_some() {
        run.out = args.out;
    }
    let out = required(&run.out, "out")?;
    run.design.check().module("oas-design")?;

    let graph = run.inputs.load_graph()?;
    let treatments = run.inputs.load_treatments(&graph)?;
    let design = match &run.partition {
        Some(path) => {
            let partition = design_io::load_partition(&graph, path).module("oas-design")?;
            design_for_partition(&graph, &treatments, &partition, &run.design)
        }
        None => design_experiment(&graph, &treatments, &run.design, run.seed),
    }
    .module("oas-design")?;

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    design_io::save_design(&graph, &design, &out).module("oas-design")?;
    design_io::save_partition(&graph, &design.partition, &sidecar(&out, "partition.tsv")).module("oas-design")?;
    write_trace(&design.objective_trace, &sidecar(&out, "trace.tsv"))?;
    write_json(&run, &sidecar(&out, RESOLVED_CONFIG))?;
    if let Some(last) = design.objective_trace.last() {
        info!("objective {:.6e} -> {last:.6e}", design.objective_trace[0]);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserveRun {
    pub schema_version: u32,
    pub inputs: GraphPaths,
    pub design: Option<PathBuf>,
    pub partition: Option<PathBuf>,
    pub delta: f64,
    pub noise_sd: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for ObserveRun {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            inputs: GraphPaths::default(),
            design: None,
            partition: None,
            delta: 0.5,
            noise_sd: 1.0,
            seed: 1,
            out: None,
        }
    }
}

pub const EXPOSURES_FILE: &str = "exposures.tsv";
pub const TARGETS_FILE: &str = "targets.tsv";
pub const RESPONSES_FILE: &str = "responses.tsv";

pub fn observe(args: ObserveArgs) -> CliResult {
    let mut run: ObserveRun = load_config(args.common.config.as_deref())?;
    check_schema(run.schema_version)?;
    run.inputs.merge(&args.input);
    if args.design.is_some() {
        run.design = args.design;
    }
    if args.partition.is_some() {
        run.partition = args.partition;
    }
    run.delta = args.delta.unwrap_or(run.delta);
    run.noise_sd = args.noise_sd.unwrap_or(run.noise_sd);
    run.seed = args.common.seed.unwrap_or(run.seed);
    if args.out.is_some() {
        run.out = args.out;
    }
    let design_path = required(&run.design, "design")?;
    let partition_path = run.partition.clone().unwrap_or_else(|| sidecar(&design_path, "partition.tsv"));
    run.partition = Some(partition_path.clone());
    let out = required(&run.out, "out")?;
    if !(run.delta > 0.0) || !(run.noise_sd >= 0.0) {
        return Err(CliError::Module {
            module: "sim-harness",
            source: Error::Parameter(format!("need delta > 0 and noise_sd >= 0, got {} and {}", run.delta, run.noise_sd)),
        });
    }

    let graph = run.inputs.load_graph()?;
    let (p_star, _) = design_io::load_design(&graph, &design_path).module("oas-design")?;
    let partition = design_io::load_partition(&graph, &partition_path).module("oas-design")?;
    let model = ResponseModel {
        noise_sd: run.noise_sd,
        ..Default::default()
    };
    let observed = sim::observe(&graph, &p_star, &partition, run.delta, &model, run.seed).module("sim-harness")?;

    create_dir(&out)?;
    estimator_io::save_exposures(&observed.sample, &out.join(EXPOSURES_FILE), &out.join(TARGETS_FILE)).module("isa-estimator")?;
    estimator_io::save_responses(&observed.responses, &out.join(RESPONSES_FILE)).module("isa-estimator")?;
    write_json(&run, &out.join(RESOLVED_CONFIG))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateRun {
    pub schema_version: u32,
    pub inputs: GraphPaths,
    pub partition: Option<PathBuf>,
    pub exposures: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub responses: Option<PathBuf>,
    pub estimator: EstimatorConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for EstimateRun {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            inputs: GraphPaths::default(),
            partition: None,
            exposures: None,
            targets: None,
            responses: None,
            estimator: EstimatorConfig::default(),
            seed: 1,
            out: None,
        }
    }
}

pub fn estimate(args: EstimateArgs) -> CliResult {
    let mut run: EstimateRun = load_config(args.common.config.as_deref())?;
    check_schema(run.schema_version)?;
    run.inputs.merge(&args.input);
    for (slot, flag) in [
        (&mut run.partition, args.partition),
        (&mut run.exposures, args.exposures),
        (&mut run.targets, args.targets),
        (&mut run.responses, args.responses),
        (&mut run.out, args.out),
    ] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    let e = &mut run.estimator;
    e.bootstrap = args.bootstrap.unwrap_or(e.bootstrap);
    e.alpha = args.alpha.unwrap_or(e.alpha);
    if let Some(c) = args.clip {
        e.clip = (c > 0.0).then_some(c);
    }
    match args.mode.as_deref() {
        Some("plain") => e.mode = EstimatorMode::Plain,
        Some(_) => e.mode = EstimatorMode::SelfNormalized,
        None => {}
    }
    match args.density.as_deref() {
        Some("gaussian") => e.density = DensityKind::Gaussian,
        Some(_) => e.density = DensityKind::Kde,
        None => {}
    }
    run.seed = args.common.seed.unwrap_or(run.seed);
    let partition_path = required(&run.partition, "partition")?;
    let exposures = required(&run.exposures, "exposures")?;
    let targets = required(&run.targets, "targets")?;
    let responses_path = required(&run.responses, "responses")?;
    let out = required(&run.out, "out")?;
    run.estimator.check().module("isa-estimator")?;

    let graph = run.inputs.load_graph()?;
    let partition = design_io::load_partition(&graph, &partition_path).module("oas-design")?;
    let sample = estimator_io::load_exposures(&graph, &partition, &exposures, &targets).module("isa-estimator")?;
    let responses = estimator_io::load_responses(graph.n_nodes(), &responses_path).module("isa-estimator")?;
    let report = bootstrap_ci(&partition, &sample, &responses, &run.estimator, run.seed).module("isa-estimator")?;

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    estimator_io::save_report(&report, &out).module("isa-estimator")?;
    write_json(&run, &sidecar(&out, RESOLVED_CONFIG))?;
    for effect in &report.effects {
        info!("arm {} effect {:.6} ci [{:.6}, {:.6}]", effect.r, effect.diff, effect.ci[0], effect.ci[1]);
    }
    Ok(())
}

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RESULTS_SVG: &str = "results.svg";
pub const COVERAGE_SVG: &str = "coverage.svg";

fn write_plots(panels: &[Panel], columns: usize, nominal: f64, out: &Path) -> CliResult {
    let results = sim::results_svg(panels, columns).module("sim-harness")?;
    let coverage = sim::coverage_svg(panels, nominal).module("sim-harness")?;
    for (name, text) in [(RESULTS_SVG, results), (COVERAGE_SVG, coverage)] {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| CliError::Module {
            module: "sim-harness",
            source: Error::io(&path, e),
        })?;
    }
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> CliResult {
    let mut config: SimConfig = load_config(args.common.config.as_deref())?;
    config.repeats = args.repeats.unwrap_or(config.repeats);
    let g = &mut config.graph;
    g.n_clusters = args.clusters.unwrap_or(g.n_clusters);
    g.cluster_size = args.cluster_size.unwrap_or(g.cluster_size);
    g.d_ba = args.d_ba.unwrap_or(g.d_ba);
    g.d_er = args.d_er.unwrap_or(g.d_er);
    config.delta = args.delta.unwrap_or(config.delta);
    config.estimator.bootstrap = args.bootstrap.unwrap_or(config.estimator.bootstrap);
    config.estimator.alpha = args.alpha.unwrap_or(config.estimator.alpha);
    config.noise_sd = args.noise_sd.unwrap_or(config.noise_sd);
    if args.consumers_per_block.is_some() {
        config.consumers_per_block = args.consumers_per_block;
    }
    config.identical_arms |= args.identical_arms;
    if let Some(methods) = args.methods {
        config.methods = methods.iter().map(|m| if m == "cb" { Method::Cb } else { Method::Oasis }).collect();
    }
    config.seed = args.common.seed.unwrap_or(config.seed);
    let out = required(&args.out, "out")?;
    config.check().module("sim-harness")?;

    create_dir(&out)?;
    write_json(&config, &out.join(RESOLVED_CONFIG))?;
    info!("{} repeats on {} threads", config.repeats, rayon::current_num_threads());
    let (setup, results) = sim::run_simulation(config.clone()).module("sim-harness")?;
    sim::write_results_file(&results, &out.join(RESULTS_FILE)).module("sim-harness")?;
    let summary = sim::summarize(&results).module("sim-harness")?;
    write_json(&summary, &out.join(SUMMARY_FILE))?;
    if args.svg {
        let panel = Panel {
            label: format!("d_ba={} d_er={} delta={}", config.graph.d_ba, config.graph.d_er, config.delta),
            summary: summary.clone(),
        };
        write_plots(&[panel], 1, 1.0 - config.estimator.alpha, &out)?;
    }
    info!("truth {:?}", setup.truth.diffs);
    for m in &summary.methods {
        info!("{}: coverage {:.3}, mean error {:.4}", m.method.as_str(), m.coverage, m.mean_error);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostRun {
    pub schema_version: u32,
    pub inputs: GraphPaths,
    pub design: Option<PathBuf>,
    pub partition: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for BoostRun {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            inputs: GraphPaths::default(),
            design: None,
            partition: None,
            out: None,
        }
    }
}

pub fn boost(args: BoostArgs) -> CliResult {
    let mut run: BoostRun = load_config(args.common.config.as_deref())?;
    check_schema(run.schema_version)?;
    run.inputs.merge(&args.input);
    if args.design.is_some() {
        run.design = args.design;
    }
    if args.partition.is_some() {
        run.partition = args.partition;
    }
    if args.out.is_some() {
        run.out = args.out;
    }
    let design_path = required(&run.design, "design")?;
    let partition_path = run.partition.clone().unwrap_or_else(|| sidecar(&design_path, "partition.tsv"));
    run.partition = Some(partition_path.clone());
    let out = required(&run.out, "out")?;

    let graph = run.inputs.load_graph()?;
    let (p_star, provenance) = design_io::load_design(&graph, &design_path).module("oas-design")?;
    let partition = design_io::load_partition(&graph, &partition_path).module("oas-design")?;
    let bounds = compute_sum_bounds(&graph, &partition, Default::default()).module("oas-design")?;
    let design = DesignOutput {
        p_star,
        provenance,
        partition,
        bounds,
        objective_trace: Vec::new(),
        allocation: None,
    };
    let table = compute_boost_factors(&graph, &design, None).module("oas-design")?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    design_io::save_boost(&graph, &table, &out).module("oas-design")?;
    write_json(&run, &sidecar(&out, RESOLVED_CONFIG))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportRun {
    pub schema_version: u32,
    pub results: Vec<PathBuf>,
    pub labels: Vec<String>,
    pub columns: usize,
    pub nominal: f64,
    pub out: Option<PathBuf>,
}

impl Default for ReportRun {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            results: Vec::new(),
            labels: Vec::new(),
            columns: 3,
            nominal: 0.95,
            out: None,
        }
    }
}

pub fn report(args: ReportArgs) -> CliResult {
    let mut run: ReportRun = load_config(args.common.config.as_deref())?;
    check_schema(run.schema_version)?;
    if !args.results.is_empty() {
        run.results = args.results;
    }
    if !args.labels.is_empty() {
        run.labels = args.labels;
    }
    run.columns = args.columns.unwrap_or(run.columns);
    run.nominal = args.nominal.unwrap_or(run.nominal);
    if args.out.is_some() {
        run.out = args.out;
    }
    let out = required(&run.out, "out")?;
    if run.results.is_empty() {
        return Err(CliError::Usage("missing --results".into()));
    }
    if !run.labels.is_empty() && run.labels.len() != run.results.len() {
        return Err(CliError::Usage(format!(
            "{} labels given for {} results files",
            run.labels.len(),
            run.results.len()
        )));
    }

    let mut panels = Vec::with_capacity(run.results.len());
    for (k, path) in run.results.iter().enumerate() {
        let results = sim::read_results_file(path).module("sim-harness")?;
        let summary = sim::summarize(&results).module("sim-harness")?;
        let label = match run.labels.get(k) {
            Some(l) => l.clone(),
            None => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        };
        panels.push(Panel { label, summary });
    }
    create_dir(&out)?;
    write_plots(&panels, run.columns, run.nominal, &out)?;
    let summaries: Vec<_> = panels.iter().map(|p| (&p.label, &p.summary)).collect();
    write_json(&summaries, &out.join(SUMMARY_FILE))?;
    write_json(&run, &out.join(RESOLVED_CONFIG))?;
    info!("{} panels written to {}", panels.len(), out.display());
    Ok(())
}
