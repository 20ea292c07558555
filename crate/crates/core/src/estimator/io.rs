//! Exposure, target-sample and response files, and the JSON report.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{ArmExposure, EstimateReport, ExposureSample};
use crate::design::Partition;
use crate::error::{Error, Result};
use crate::graph::io::{create, expect_fields, fmt_real, open, TsvRows};
use crate::graph::{MarketplaceGraph, NodeId};

pub const EXPOSURE_HEADER: &str = "node\tarm\tz_star";
pub const TARGET_HEADER: &str = "src\tdst\tarm\tz";
pub const RESPONSE_HEADER: &str = "node\ty";

pub fn write_exposures<W: Write>(sample: &ExposureSample, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{EXPOSURE_HEADER}")?;
    for (r, arm) in sample.arms.iter().enumerate() {
        for (i, z) in arm.producers.iter().zip(&arm.z_star) {
            writeln!(w, "{i}\t{r}\t{}", fmt_real(*z))?;
        }
    }
    w.flush()
}

pub fn write_target_samples<W: Write>(sample: &ExposureSample, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TARGET_HEADER}")?;
    for (r, arm) in sample.arms.iter().enumerate() {
        for (i, samples) in arm.producers.iter().zip(&arm.target_samples) {
            for (j, z) in samples {
                writeln!(w, "{i}\t{j}\t{r}\t{}", fmt_real(*z))?;
            }
        }
    }
    w.flush()
}

/// Rebuilds an exposure sample from its two files. Observation rates come from
/// the graph and partition, so every child of a measurement producer that
/// received the producer's arm must have a target sample.
pub fn read_exposure_sample<R1: Read, R2: Read>(
    graph: &MarketplaceGraph,
    partition: &Partition,
    exposures: R1,
    exposures_name: &str,
    targets: R2,
    targets_name: &str,
) -> Result<ExposureSample> {
    let roles = partition.roles(graph.n_nodes())?;
    let arm_of = |node: u32, arm: usize, file: &str, line: usize| -> Result<NodeId> {
        let i = NodeId(node);
        let ok = (node as usize) < graph.n_nodes() && partition.omega.get(arm).is_some_and(|set| set.binary_search(&i).is_ok());
        if !ok {
            return Err(Error::parse(file, line, format!("node {node} is not in measurement arm {arm}")));
        }
        Ok(i)
    };

    let mut z_star: HashMap<(NodeId, usize), f64> = HashMap::new();
    for row in TsvRows::open(exposures, exposures_name, EXPOSURE_HEADER)? {
        let row = row?;
        expect_fields(exposures_name, &row, 3)?;
        let arm: usize = row.get(exposures_name, 1, "arm")?;
        let i = arm_of(row.get(exposures_name, 0, "node")?, arm, exposures_name, row.line)?;
        let z: f64 = row.get(exposures_name, 2, "z_star")?;
        if z_star.insert((i, arm), z).is_some() {
            return Err(Error::parse(exposures_name, row.line, format!("duplicate exposure for node {i}")));
        }
    }

    let mut observed: HashMap<(NodeId, NodeId), f64> = HashMap::new();
    for row in TsvRows::open(targets, targets_name, TARGET_HEADER)? {
        let row = row?;
        expect_fields(targets_name, &row, 4)?;
        let arm: usize = row.get(targets_name, 2, "arm")?;
        let i = arm_of(row.get(targets_name, 0, "src")?, arm, targets_name, row.line)?;
        let dst: u32 = row.get(targets_name, 1, "dst")?;
        let j = NodeId(dst);
        let valid = graph.n_nodes() > dst as usize && graph.find_edge(i, j).is_some() && roles[j.index()].arm() == Some(arm);
        if !valid {
            return Err(Error::parse(
                targets_name,
                row.line,
                format!("edge {i}->{j} is not an arm-{arm} target edge"),
            ));
        }
        let z: f64 = row.get(targets_name, 3, "z")?;
        if observed.insert((i, j), z).is_some() {
            return Err(Error::parse(targets_name, row.line, format!("duplicate sample for edge {i}->{j}")));
        }
    }

    let mut sample = ExposureSample {
        arms: vec![ArmExposure::default(); partition.n_arms()],
    };
    for (r, producers) in partition.omega.iter().enumerate() {
        for &i in producers {
            if graph.out_degree(i) == 0 {
                continue;
            }
            let z = *z_star
                .get(&(i, r))
                .ok_or_else(|| Error::Input(format!("estimator: {exposures_name} has no exposure for producer {i}")))?;
            let mut samples = Vec::new();
            for j in graph.children(i) {
                if roles[j.index()].arm() == Some(r) {
                    let v = observed.get(&(i, j)).ok_or_else(|| {
                        Error::Input(format!("estimator: {targets_name} has no sample for edge {i}->{j}"))
                    })?;
                    samples.push((j, *v));
                }
            }
            sample.arms[r].push(i, z, samples, graph.out_degree(i))?;
        }
    }
    Ok(sample)
}

/// Writes every finite response.
pub fn write_responses<W: Write>(responses: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{RESPONSE_HEADER}")?;
    for (i, y) in responses.iter().enumerate() {
        if y.is_finite() {
            writeln!(w, "{i}\t{}", fmt_real(*y))?;
        }
    }
    w.flush()
}

/// Per-node responses; nodes without a row are NaN.
pub fn read_responses<R: Read>(n_nodes: usize, reader: R, name: &str) -> Result<Vec<f64>> {
    let mut out = vec![f64::NAN; n_nodes];
    for row in TsvRows::open(reader, name, RESPONSE_HEADER)? {
        let row = row?;
        expect_fields(name, &row, 2)?;
        let node: usize = row.get(name, 0, "node")?;
        let y: f64 = row.get(name, 1, "y")?;
        let slot = out
            .get_mut(node)
            .ok_or_else(|| Error::parse(name, row.line, format!("node {node} outside graph")))?;
        if !slot.is_nan() {
            return Err(Error::parse(name, row.line, format!("duplicate response for node {node}")));
        }
        *slot = y;
    }
    Ok(out)
}

pub fn save_exposures(sample: &ExposureSample, exposures: &Path, targets: &Path) -> Result<()> {
    write_exposures(sample, create(exposures)?).map_err(|e| Error::io(exposures, e))?;
    write_target_samples(sample, create(targets)?).map_err(|e| Error::io(targets, e))
}

pub fn load_exposures(graph: &MarketplaceGraph, partition: &Partition, exposures: &Path, targets: &Path) -> Result<ExposureSample> {
    read_exposure_sample(
        graph,
        partition,
        open(exposures)?,
        &exposures.display().to_string(),
        open(targets)?,
        &targets.display().to_string(),
    )
}

pub fn save_responses(responses: &[f64], path: &Path) -> Result<()> {
    write_responses(responses, create(path)?).map_err(|e| Error::io(path, e))
}

pub fn load_responses(n_nodes: usize, path: &Path) -> Result<Vec<f64>> {
    read_responses(n_nodes, open(path)?, &path.display().to_string())
}

pub fn save_report(report: &EstimateReport, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| Error::io(path, e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}
