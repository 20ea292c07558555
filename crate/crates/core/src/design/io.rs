//! Tab-separated design, partition and boost files.

use std::io::{Read, Write};
use std::path::Path;

use super::{BoostTable, DesignOutput, Partition, Provenance, Role};
use crate::error::{Error, Result};
use crate::graph::io::{create, expect_fields, fmt_real, open, TsvRows};
use crate::graph::{MarketplaceGraph, NodeId};

pub const DESIGN_HEADER: &str = "src\tdst\tp_star\tprovenance";
pub const PARTITION_HEADER: &str = "node\trole";
pub const BOOST_HEADER: &str = "src\tdst\tb";

pub fn write_design<W: Write>(graph: &MarketplaceGraph, design: &DesignOutput, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{DESIGN_HEADER}")?;
    for (e, edge) in graph.edges().iter().enumerate() {
        writeln!(w, "{}\t{}\t{}\t{}", edge.src, edge.dst, fmt_real(design.p_star[e]), design.provenance[e])?;
    }
    w.flush()
}

/// Reads design weights and labels; every edge of the graph must be present once.
pub fn read_design<R: Read>(graph: &MarketplaceGraph, reader: R, name: &str) -> Result<(Vec<f64>, Vec<Provenance>)> {
    let mut weights: Vec<Option<(f64, Provenance)>> = vec![None; graph.n_edges()];
    for row in TsvRows::open(reader, name, DESIGN_HEADER)? {
        let row = row?;
        expect_fields(name, &row, 4)?;
        let src: u32 = row.get(name, 0, "src")?;
        let dst: u32 = row.get(name, 1, "dst")?;
        let p: f64 = row.get(name, 2, "p_star")?;
        let label: String = row.get(name, 3, "provenance")?;
        let prov = Provenance::parse(&label)
            .ok_or_else(|| Error::parse(name, row.line, format!("unknown provenance `{label}`")))?;
        let e = edge_id(graph, src, dst).ok_or_else(|| Error::parse(name, row.line, format!("edge {src}->{dst} not in graph")))?;
        if weights[e].replace((p, prov)).is_some() {
            return Err(Error::parse(name, row.line, format!("duplicate edge {src}->{dst}")));
        }
    }
    let mut p = Vec::with_capacity(weights.len());
    let mut labels = Vec::with_capacity(weights.len());
    for (e, w) in weights.into_iter().enumerate() {
        let (v, l) = w.ok_or_else(|| {
            let edge = graph.edge(e);
            Error::Input(format!("design: {name} has no weight for edge {}->{}", edge.src, edge.dst))
        })?;
        p.push(v);
        labels.push(l);
    }
    Ok((p, labels))
}

pub fn write_partition<W: Write>(graph: &MarketplaceGraph, partition: &Partition, mut w: W) -> std::io::Result<()> {
    let roles = partition
        .roles(graph.n_nodes())
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    writeln!(w, "{PARTITION_HEADER}")?;
    for (i, role) in roles.iter().enumerate() {
        writeln!(w, "{i}\t{}", role.label())?;
    }
    w.flush()
}

/// Reads a partition. The file does not record `q`; it is set to the realized
/// fraction of eligible children that entered the exposure set.
pub fn read_partition<R: Read>(graph: &MarketplaceGraph, reader: R, name: &str) -> Result<Partition> {
    let mut partition = Partition {
        omega: Vec::new(),
        lambda: Vec::new(),
        c_prime: Vec::new(),
        q: 0.0,
    };
    let grow = |sets: &mut Vec<Vec<NodeId>>, r: usize| {
        if sets.len() <= r {
            sets.resize(r + 1, Vec::new());
        }
    };
    for row in TsvRows::open(reader, name, PARTITION_HEADER)? {
        let row = row?;
        expect_fields(name, &row, 2)?;
        let node: u32 = row.get(name, 0, "node")?;
        if node as usize >= graph.n_nodes() {
            return Err(Error::parse(name, row.line, format!("node {node} outside graph")));
        }
        let label: String = row.get(name, 1, "role")?;
        let role = Role::parse(&label).ok_or_else(|| Error::parse(name, row.line, format!("unknown role `{label}`")))?;
        match role {
            Role::Omega(r) => {
                grow(&mut partition.omega, r);
                partition.omega[r].push(NodeId(node));
            }
            Role::Lambda(r) => {
                grow(&mut partition.lambda, r);
                partition.lambda[r].push(NodeId(node));
            }
            Role::CPrime => partition.c_prime.push(NodeId(node)),
            Role::Rest => {}
        }
    }
    let arms = partition.omega.len().max(partition.lambda.len());
    grow(&mut partition.omega, arms.saturating_sub(1));
    grow(&mut partition.lambda, arms.saturating_sub(1));
    for set in partition.omega.iter_mut().chain(partition.lambda.iter_mut()) {
        set.sort_unstable();
    }
    partition.c_prime.sort_unstable();
    partition.check(graph)?;
    let eligible_count = partition.eligible_children(graph)?.len();
    partition.q = if eligible_count == 0 {
        0.0
    } else {
        partition.c_prime.len() as f64 / eligible_count as f64
    };
    Ok(partition)
}

/// Writes the factors on every incoming edge of each exposure-set consumer.
pub fn write_boost<W: Write>(graph: &MarketplaceGraph, table: &BoostTable, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{BOOST_HEADER}")?;
    for &j in &table.consumers {
        for &e in graph.in_edges(j) {
            let edge = graph.edge(e);
            writeln!(w, "{}\t{}\t{}", edge.src, edge.dst, fmt_real(table.factors[e]))?;
        }
    }
    w.flush()
}

fn edge_id(graph: &MarketplaceGraph, src: u32, dst: u32) -> Option<usize> {
    if (src as usize) < graph.n_nodes() && (dst as usize) < graph.n_nodes() {
        graph.find_edge(NodeId(src), NodeId(dst))
    } else {
        None
    }
}

pub fn save_design(graph: &MarketplaceGraph, design: &DesignOutput, path: &Path) -> Result<()> {
    write_design(graph, design, create(path)?).map_err(|e| Error::io(path, e))
}

pub fn load_design(graph: &MarketplaceGraph, path: &Path) -> Result<(Vec<f64>, Vec<Provenance>)> {
    read_design(graph, open(path)?, &path.display().to_string())
}

pub fn save_partition(graph: &MarketplaceGraph, partition: &Partition, path: &Path) -> Result<()> {
    write_partition(graph, partition, create(path)?).map_err(|e| Error::io(path, e))
}

pub fn load_partition(graph: &MarketplaceGraph, path: &Path) -> Result<Partition> {
    read_partition(graph, open(path)?, &path.display().to_string())
}

pub fn save_boost(graph: &MarketplaceGraph, table: &BoostTable, path: &Path) -> Result<()> {
    write_boost(graph, table, create(path)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{assemble_design, RiskParams};
    use crate::graph::fixtures::{toy_graph, toy_treatments};
    use crate::qp::QpConfig;

    #[test]
    fn design_and_partition_round_trip() {
        let g = toy_graph();
        let t = toy_treatments(&g);
        let part = Partition {
            omega: vec![vec![NodeId(0)], vec![NodeId(5)]],
            lambda: vec![vec![NodeId(4)], vec![NodeId(1)]],
            c_prime: vec![NodeId(2)],
            q: 1.0,
        };
        let d = assemble_design(&g, &t, &part, RiskParams::default(), &QpConfig::default(), &Default::default()).unwrap();

        let mut buf = Vec::new();
        write_design(&g, &d, &mut buf).unwrap();
        let (p, labels) = read_design(&g, buf.as_slice(), "d.tsv").unwrap();
        assert_eq!(p, d.p_star);
        assert_eq!(labels, d.provenance);

        let mut buf = Vec::new();
        write_partition(&g, &part, &mut buf).unwrap();
        let back = read_partition(&g, buf.as_slice(), "p.tsv").unwrap();
        assert_eq!(back.omega, part.omega);
        assert_eq!(back.lambda, part.lambda);
        assert_eq!(back.c_prime, part.c_prime);
        assert_eq!(back.q, 1.0);
    }

    #[test]
    fn unknown_role_is_a_parse_error() {
        let g = toy_graph();
        let text = "node\trole\n0\tomega:0\n1\tsideways\n";
        match read_partition(&g, text.as_bytes(), "p.tsv") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
