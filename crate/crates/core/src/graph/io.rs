//! Tab-separated graph, node and treatment files.
//!
//! * graph: `src\tdst\tp_base\talpha`, one row per directed edge
//! * nodes: `node\tcluster`
//! * treatments: `src\tdst\tarm\tp`
//!
//! Reals are written with 17 significant digits, which round-trips every `f64` exactly.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::{Edge, MarketplaceGraph, NodeId, TreatmentSet};
use crate::error::{Error, Result};

pub const GRAPH_HEADER: &str = "src\tdst\tp_base\talpha";
pub const NODES_HEADER: &str = "node\tcluster";
pub const TREATMENT_HEADER: &str = "src\tdst\tarm\tp";

pub const GRAPH_FILE: &str = "graph.tsv";
pub const NODES_FILE: &str = "nodes.tsv";
pub const TREATMENT_FILE: &str = "treatments.tsv";

/// Formats a real with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_graph<W: Write>(graph: &MarketplaceGraph, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{GRAPH_HEADER}")?;
    for e in graph.edges() {
        writeln!(w, "{}\t{}\t{}\t{}", e.src, e.dst, fmt_real(e.p_base), fmt_real(e.alpha))?;
    }
    w.flush()
}

pub fn write_nodes<W: Write>(graph: &MarketplaceGraph, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{NODES_HEADER}")?;
    for i in graph.nodes() {
        writeln!(w, "{}\t{}", i, graph.cluster_of(i))?;
    }
    w.flush()
}

pub fn write_treatments<W: Write>(graph: &MarketplaceGraph, t: &TreatmentSet, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TREATMENT_HEADER}")?;
    for r in 0..t.n_arms() {
        for (id, e) in graph.edges().iter().enumerate() {
            writeln!(w, "{}\t{}\t{}\t{}", e.src, e.dst, r, fmt_real(t.weight(r, id)))?;
        }
    }
    w.flush()
}

/// Rows of a TSV file after the header, with 1-based line numbers.
pub(crate) struct TsvRows<R> {
    name: String,
    lines: std::iter::Enumerate<std::io::Lines<BufReader<R>>>,
}

impl<R: Read> TsvRows<R> {
    pub(crate) fn open(reader: R, name: &str, header: &str) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines().enumerate();
        match lines.next() {
            Some((_, Ok(line))) if line.trim_end() == header => {}
            Some((_, Ok(line))) => {
                return Err(Error::parse(name, 1, format!("expected header `{header}`, found `{}`", line.trim_end())))
            }
            Some((_, Err(e))) => return Err(Error::io(name, e)),
            None => return Err(Error::parse(name, 1, "empty file")),
        }
        Ok(Self {
            name: name.to_string(),
            lines,
        })
    }
}

pub(crate) struct Row {
    pub line: usize,
    fields: Vec<String>,
}

impl Row {
    pub(crate) fn get<T: FromStr>(&self, file: &str, k: usize, what: &str) -> Result<T> {
        let raw = self.fields[k].trim();
        raw.parse()
            .map_err(|_| Error::parse(file, self.line, format!("invalid {what} `{raw}`")))
    }
}

impl<R: Read> Iterator for TsvRows<R> {
    type Item = Result<Row>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (idx, line) = self.lines.next()?;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(self.name.clone(), e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(Ok(Row {
                line: idx + 1,
                fields: line.split('\t').map(str::to_string).collect(),
            }));
        }
    }
}

pub(crate) fn expect_fields(file: &str, row: &Row, n: usize) -> Result<()> {
    if row.fields.len() != n {
        return Err(Error::parse(file, row.line, format!("expected {n} fields, found {}", row.fields.len())));
    }
    Ok(())
}

/// Reads the node file and the edge file into a graph.
pub fn read_graph<R1: Read, R2: Read>(graph: R1, graph_name: &str, nodes: R2, nodes_name: &str) -> Result<MarketplaceGraph> {
    let mut rows = TsvRows::open(nodes, nodes_name, NODES_HEADER)?;
    let mut labels: Vec<Option<u32>> = Vec::new();
    while let Some(row) = rows.next() {
        let row = row?;
        expect_fields(nodes_name, &row, 2)?;
        let node: usize = row.get(nodes_name, 0, "node id")?;
        let cluster: u32 = row.get(nodes_name, 1, "cluster label")?;
        if node >= labels.len() {
            labels.resize(node + 1, None);
        }
        if labels[node].replace(cluster).is_some() {
            return Err(Error::parse(nodes_name, row.line, format!("node {node} listed twice")));
        }
    }
    let n_nodes = labels.len();
    let clusters = labels
        .into_iter()
        .enumerate()
        .map(|(i, c)| c.ok_or_else(|| Error::parse(nodes_name, 0, format!("node ids must be dense; {i} is missing"))))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = TsvRows::open(graph, graph_name, GRAPH_HEADER)?;
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    while let Some(row) = rows.next() {
        let row = row?;
        expect_fields(graph_name, &row, 4)?;
        let src: u32 = row.get(graph_name, 0, "src")?;
        let dst: u32 = row.get(graph_name, 1, "dst")?;
        let p_base: f64 = row.get(graph_name, 2, "p_base")?;
        let alpha: f64 = row.get(graph_name, 3, "alpha")?;
        if src as usize >= n_nodes || dst as usize >= n_nodes {
            return Err(Error::parse(graph_name, row.line, format!("edge {src}->{dst} references an unknown node")));
        }
        if src == dst {
            return Err(Error::parse(graph_name, row.line, format!("self-loop on node {src}")));
        }
        if !seen.insert((src, dst)) {
            return Err(Error::parse(graph_name, row.line, format!("duplicate edge {src}->{dst}")));
        }
        edges.push(Edge {
            src: NodeId(src),
            dst: NodeId(dst),
            p_base,
            alpha,
        });
    }
    MarketplaceGraph::from_edges(n_nodes, edges, clusters)
}

/// Reads a treatment file against a loaded graph. Arm 0 defaults to `p_base`
/// when absent; every other arm must cover every edge.
pub fn read_treatments<R: Read>(graph: &MarketplaceGraph, reader: R, name: &str) -> Result<TreatmentSet> {
    let mut rows = TsvRows::open(reader, name, TREATMENT_HEADER)?;
    let mut arms: Vec<Vec<Option<f64>>> = Vec::new();
    while let Some(row) = rows.next() {
        let row = row?;
        expect_fields(name, &row, 4)?;
        let src: u32 = row.get(name, 0, "src")?;
        let dst: u32 = row.get(name, 1, "dst")?;
        let arm: usize = row.get(name, 2, "arm")?;
        let p: f64 = row.get(name, 3, "weight")?;
        let edge = if (src as usize) < graph.n_nodes() {
            graph.find_edge(NodeId(src), NodeId(dst))
        } else {
            None
        };
        let edge = edge.ok_or_else(|| Error::parse(name, row.line, format!("edge {src}->{dst} not in graph")))?;
        if arm >= arms.len() {
            arms.resize(arm + 1, vec![None; graph.n_edges()]);
        }
        if arms[arm][edge].replace(p).is_some() {
            return Err(Error::parse(name, row.line, format!("duplicate weight for {src}->{dst} arm {arm}")));
        }
    }
    if arms.is_empty() {
        return Ok(TreatmentSet::control(graph));
    }
    let p_base = graph.p_base();
    let mut out = Vec::with_capacity(arms.len());
    for (r, arm) in arms.into_iter().enumerate() {
        if r == 0 && arm.iter().all(Option::is_none) {
            out.push(p_base.clone());
            continue;
        }
        let filled = arm
            .into_iter()
            .enumerate()
            .map(|(id, w)| {
                w.ok_or_else(|| {
                    let e = graph.edge(id);
                    Error::parse(name, 0, format!("arm {r} has no weight for edge {}->{}", e.src, e.dst))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(filled);
    }
    TreatmentSet::new(graph, out)
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn save_graph(graph: &MarketplaceGraph, graph_path: &Path, nodes_path: &Path) -> Result<()> {
    write_graph(graph, create(graph_path)?).map_err(|e| Error::io(graph_path, e))?;
    write_nodes(graph, create(nodes_path)?).map_err(|e| Error::io(nodes_path, e))
}

pub fn load_graph(graph_path: &Path, nodes_path: &Path) -> Result<MarketplaceGraph> {
    read_graph(
        open(graph_path)?,
        &graph_path.display().to_string(),
        open(nodes_path)?,
        &nodes_path.display().to_string(),
    )
}

pub fn save_treatments(graph: &MarketplaceGraph, t: &TreatmentSet, path: &Path) -> Result<()> {
    write_treatments(graph, t, create(path)?).map_err(|e| Error::io(path, e))
}

pub fn load_treatments(graph: &MarketplaceGraph, path: &Path) -> Result<TreatmentSet> {
    read_treatments(graph, open(path)?, &path.display().to_string())
}

/// Writes `graph.tsv`, `nodes.tsv` and `treatments.tsv` into `dir`.
pub fn save(graph: &MarketplaceGraph, treatments: &TreatmentSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_graph(graph, &dir.join(GRAPH_FILE), &dir.join(NODES_FILE))?;
    save_treatments(graph, treatments, &dir.join(TREATMENT_FILE))
}

pub fn load(dir: &Path) -> Result<(MarketplaceGraph, TreatmentSet)> {
    let graph = load_graph(&dir.join(GRAPH_FILE), &dir.join(NODES_FILE))?;
    let treatments = load_treatments(&graph, &dir.join(TREATMENT_FILE))?;
    Ok((graph, treatments))
}
