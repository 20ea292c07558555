use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Edge, MarketplaceGraph, NodeId};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Parameters of the clustered generator: `n_clusters` Barabási–Albert
/// components joined by one Erdős–Rényi overlay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub n_clusters: usize,
    pub cluster_size: usize,
    /// Target mean degree inside each cluster.
    pub d_ba: f64,
    /// Preferential-attachment power; attachment probability ∝ (degree + 1)^power.
    #[serde(default = "default_ba_power")]
    pub ba_power: f64,
    /// Target mean degree of the overlay across all nodes.
    pub d_er: f64,
}

fn default_ba_power() -> f64 {
    0.25
}

impl GraphParams {
    pub fn n_nodes(&self) -> usize {
        self.n_clusters * self.cluster_size
    }

    fn check(&self) -> Result<()> {
        if self.n_clusters < 1 {
            return Err(Error::Parameter("n_clusters must be >= 1".into()));
        }
        if self.cluster_size < 2 {
            return Err(Error::Parameter("cluster_size must be >= 2".into()));
        }
        if !(self.d_ba >= 1.0) || !self.d_ba.is_finite() {
            return Err(Error::Parameter(format!("d_ba must be >= 1, got {}", self.d_ba)));
        }
        if !(self.d_er >= 0.0) || !self.d_er.is_finite() {
            return Err(Error::Parameter(format!("d_er must be >= 0, got {}", self.d_er)));
        }
        if !self.ba_power.is_finite() {
            return Err(Error::Parameter("ba_power must be finite".into()));
        }
        if self.n_nodes() > u32::MAX as usize {
            return Err(Error::Parameter("too many nodes for 32-bit node ids".into()));
        }
        Ok(())
    }
}

/// Union of per-cluster preferential-attachment graphs and a G(n, p) overlay,
/// with every undirected edge turned into a reciprocal pair of directed edges.
///
/// Each new node attaches `ceil(d_ba / 2)` stubs, which gives mean degree close
/// to `d_ba` for even targets. Edge attributes are placeholders (`alpha = 1`,
/// `p_base` uniform over each consumer's parents) until the simulation fills them.
pub fn generate_clustered_graph(params: &GraphParams, seed: u64) -> Result<MarketplaceGraph> {
    params.check()?;
    let n = params.n_nodes();
    let stubs = (params.d_ba / 2.0).ceil() as usize;

    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for c in 0..params.n_clusters {
        let mut rng = rng::stream(seed, Purpose::BarabasiAlbert, c as u64);
        let offset = (c * params.cluster_size) as u32;
        for (a, b) in preferential_attachment(params.cluster_size, stubs, params.ba_power, &mut rng) {
            pairs.push((offset + a.min(b), offset + a.max(b)));
        }
    }
    if params.d_er > 0.0 {
        let p = (params.d_er / (n as f64 - 1.0)).min(1.0);
        let mut rng = rng::stream(seed, Purpose::ErdosRenyi, 0);
        erdos_renyi(n, p, &mut rng, |a, b| pairs.push((a.min(b), a.max(b))));
    }
    pairs.sort_unstable();
    pairs.dedup();

    let mut edges = Vec::with_capacity(2 * pairs.len());
    for &(a, b) in &pairs {
        for (s, d) in [(a, b), (b, a)] {
            edges.push(Edge {
                src: NodeId(s),
                dst: NodeId(d),
                p_base: 0.0,
                alpha: 1.0,
            });
        }
    }
    let mut in_deg = vec![0u32; n];
    for e in &edges {
        in_deg[e.dst.index()] += 1;
    }
    for e in &mut edges {
        e.p_base = 1.0 / in_deg[e.dst.index()] as f64;
    }
    let clusters = (0..n).map(|i| (i / params.cluster_size) as u32).collect();
    MarketplaceGraph::from_edges(n, edges, clusters)
}

/// Undirected preferential attachment on `n` nodes. Node `t` connects to
/// `min(stubs, t)` distinct earlier nodes drawn with probability ∝ (degree + 1)^power.
fn preferential_attachment(n: usize, stubs: usize, power: f64, rng: &mut rng::Rng) -> Vec<(u32, u32)> {
    let mut degree = vec![0usize; n];
    let mut tree = Fenwick::new(n);
    let weight = |d: usize| (d as f64 + 1.0).powf(power);
    let mut out = Vec::with_capacity(n * stubs);
    let mut chosen = Vec::with_capacity(stubs);
    tree.set(0, weight(0));
    for t in 1..n {
        let k = stubs.min(t);
        chosen.clear();
        while chosen.len() < k {
            let target = tree.sample(rng);
            if target >= t || chosen.contains(&target) {
                continue;
            }
            chosen.push(target);
            // Zero the weight so the remaining stubs pick distinct targets.
            tree.set(target, 0.0);
        }
        for &v in &chosen {
            degree[v] += 1;
            tree.set(v, weight(degree[v]));
            out.push((t as u32, v as u32));
        }
        degree[t] = k;
        tree.set(t, weight(k));
    }
    out
}

/// G(n, p) over unordered pairs using geometric skips between successes
/// (Batagelj & Brandes), so the cost is linear in the number of edges.
fn erdos_renyi(n: usize, p: f64, rng: &mut rng::Rng, mut emit: impl FnMut(u32, u32)) {
    if p <= 0.0 || n < 2 {
        return;
    }
    if p >= 1.0 {
        for v in 1..n {
            for w in 0..v {
                emit(v as u32, w as u32);
            }
        }
        return;
    }
    let log_q = (1.0 - p).ln();
    let (mut v, mut w) = (1usize, -1i64);
    while v < n {
        let r: f64 = rng.random();
        w += 1 + ((1.0 - r).ln() / log_q).floor() as i64;
        while w >= v as i64 && v < n {
            w -= v as i64;
            v += 1;
        }
        if v < n {
            emit(v as u32, w as u32);
        }
    }
}

/// Binary indexed tree over non-negative weights supporting point updates and
/// sampling an index with probability proportional to its weight.
struct Fenwick {
    tree: Vec<f64>,
    values: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0.0; n + 1],
            values: vec![0.0; n],
        }
    }

    fn set(&mut self, i: usize, value: f64) {
        let delta = value - self.values[i];
        self.values[i] = value;
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
    }

    fn total(&self) -> f64 {
        let mut k = self.values.len();
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k -= k & k.wrapping_neg();
        }
        s
    }

    fn sample(&self, rng: &mut rng::Rng) -> usize {
        let n = self.values.len();
        loop {
            let mut target = rng.random::<f64>() * self.total();
            let mut pos = 0usize;
            let mut step = n.next_power_of_two();
            while step > 0 {
                let next = pos + step;
                if next <= n && self.tree[next] <= target {
                    target -= self.tree[next];
                    pos = next;
                }
                step >>= 1;
            }
            // Accumulated rounding can land on a zero-weight slot; redraw.
            if pos < n && self.values[pos] > 0.0 {
                return pos;
            }
        }
    }
}
