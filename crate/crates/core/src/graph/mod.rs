//! Directed marketplace graphs.
//!
//! An edge `i -> j` means producer `i`'s content can be shown to consumer `j`
//! with probability `p_ij`. For every consumer the incoming probabilities form
//! a simplex. Edges are stored once, sorted by `(src, dst)`, with a CSR index by
//! source and a second index by destination so both `Pa(j)` and `Ch(i)` are
//! O(degree) to traverse.

mod generate;
pub mod io;
mod validate;

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate_clustered_graph, GraphParams};
pub use validate::{asymmetric_edges, validate, ValidationReport, Violation};

/// Tolerance for per-consumer simplex sums.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

/// Index into [`MarketplaceGraph::edges`].
pub type EdgeId = usize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub p_base: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarketplaceGraph {
    n_nodes: usize,
    edges: Vec<Edge>,
    out_start: Vec<usize>,
    in_start: Vec<usize>,
    in_edges: Vec<EdgeId>,
    cluster_of: Vec<u32>,
}

impl MarketplaceGraph {
    /// Builds the graph and its indices. Rejects self-loops, duplicate
    /// `(src, dst)` pairs and out-of-range endpoints; value-level checks
    /// (simplex sums, positive affinities) are left to [`validate`].
    pub fn from_edges(n_nodes: usize, mut edges: Vec<Edge>, cluster_of: Vec<u32>) -> Result<Self> {
        if cluster_of.len() != n_nodes {
            return Err(Error::Graph(format!(
                "cluster labels cover {} nodes, graph has {n_nodes}",
                cluster_of.len()
            )));
        }
        for e in &edges {
            if e.src.index() >= n_nodes || e.dst.index() >= n_nodes {
                return Err(Error::Graph(format!("edge {}->{} references a node >= {n_nodes}", e.src, e.dst)));
            }
            if e.src == e.dst {
                return Err(Error::Graph(format!("self-loop on node {}", e.src)));
            }
        }
        edges.sort_by_key(|e| (e.src, e.dst));
        if let Some(w) = edges.windows(2).find(|w| w[0].src == w[1].src && w[0].dst == w[1].dst) {
            return Err(Error::Graph(format!("duplicate edge {}->{}", w[0].src, w[0].dst)));
        }

        let mut out_start = vec![0usize; n_nodes + 1];
        let mut in_start = vec![0usize; n_nodes + 1];
        for e in &edges {
            out_start[e.src.index() + 1] += 1;
            in_start[e.dst.index() + 1] += 1;
        }
        for i in 0..n_nodes {
            out_start[i + 1] += out_start[i];
            in_start[i + 1] += in_start[i];
        }
        // Edges are visited in (src, dst) order, so each parent list ends up sorted by src.
        let mut fill = in_start.clone();
        let mut in_edges = vec![0; edges.len()];
        for (id, e) in edges.iter().enumerate() {
            let slot = &mut fill[e.dst.index()];
            in_edges[*slot] = id;
            *slot += 1;
        }
        Ok(Self {
            n_nodes,
            edges,
            out_start,
            in_start,
            in_edges,
            cluster_of,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id]
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n_nodes as u32).map(NodeId)
    }

    /// Edge ids of `Ch(i)`, ascending by child.
    pub fn out_edges(&self, i: NodeId) -> Range<EdgeId> {
        self.out_start[i.index()]..self.out_start[i.index() + 1]
    }

    /// Edge ids of `Pa(j)`, ascending by parent.
    pub fn in_edges(&self, j: NodeId) -> &[EdgeId] {
        &self.in_edges[self.in_start[j.index()]..self.in_start[j.index() + 1]]
    }

    pub fn out_degree(&self, i: NodeId) -> usize {
        self.out_start[i.index() + 1] - self.out_start[i.index()]
    }

    pub fn in_degree(&self, j: NodeId) -> usize {
        self.in_start[j.index() + 1] - self.in_start[j.index()]
    }

    pub fn children(&self, i: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.edges[self.out_edges(i)].iter().map(|e| e.dst)
    }

    pub fn parents(&self, j: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.in_edges(j).iter().map(|&e| self.edges[e].src)
    }

    pub fn find_edge(&self, src: NodeId, dst: NodeId) -> Option<EdgeId> {
        let range = self.out_edges(src);
        let start = range.start;
        self.edges[range]
            .binary_search_by_key(&dst, |e| e.dst)
            .ok()
            .map(|k| start + k)
    }

    pub fn cluster_of(&self, i: NodeId) -> u32 {
        self.cluster_of[i.index()]
    }

    pub fn cluster_labels(&self) -> &[u32] {
        &self.cluster_of
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_of.iter().max().map_or(0, |&c| c as usize + 1)
    }

    pub fn p_base(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.p_base).collect()
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.alpha).collect()
    }

    /// Replaces the per-edge attributes; both slices are indexed by [`EdgeId`].
    pub fn set_attributes(&mut self, p_base: &[f64], alpha: &[f64]) -> Result<()> {
        if p_base.len() != self.edges.len() || alpha.len() != self.edges.len() {
            return Err(Error::Graph(format!(
                "attribute vectors have lengths {}/{}, graph has {} edges",
                p_base.len(),
                alpha.len(),
                self.edges.len()
            )));
        }
        for ((e, &p), &a) in self.edges.iter_mut().zip(p_base).zip(alpha) {
            e.p_base = p;
            e.alpha = a;
        }
        Ok(())
    }

    /// True when `(i -> j) ∈ E ⇔ (j -> i) ∈ E`.
    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|e| self.find_edge(e.dst, e.src).is_some())
    }

    pub fn mean_in_degree(&self) -> f64 {
        if self.n_nodes == 0 {
            0.0
        } else {
            self.edges.len() as f64 / self.n_nodes as f64
        }
    }
}

/// Per-arm edge weights `p^(r)`; arm 0 is the control and equals `p_base`.
#[derive(Clone, Debug, PartialEq)]
pub struct TreatmentSet {
    arms: Vec<Vec<f64>>,
}

impl TreatmentSet {
    /// A control-only set (`m = 0`).
    pub fn control(graph: &MarketplaceGraph) -> Self {
        Self {
            arms: vec![graph.p_base()],
        }
    }

    /// Builds from explicit arm vectors; `arms[0]` must be the control.
    pub fn new(graph: &MarketplaceGraph, arms: Vec<Vec<f64>>) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::Input("treatment set needs at least the control arm".into()));
        }
        if let Some((r, a)) = arms.iter().enumerate().find(|(_, a)| a.len() != graph.n_edges()) {
            return Err(Error::Input(format!(
                "arm {r} has {} weights, graph has {} edges",
                a.len(),
                graph.n_edges()
            )));
        }
        Ok(Self { arms })
    }

    /// Arms including control, i.e. `m + 1`.
    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn arm(&self, r: usize) -> &[f64] {
        &self.arms[r]
    }

    pub fn weight(&self, r: usize, e: EdgeId) -> f64 {
        self.arms[r][e]
    }

    pub fn arms(&self) -> &[Vec<f64>] {
        &self.arms
    }
}
