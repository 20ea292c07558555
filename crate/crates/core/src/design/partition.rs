use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{MarketplaceGraph, NodeId};
use crate::rng::{self, Purpose};

/// Role of a node in a design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Omega(usize),
    Lambda(usize),
    CPrime,
    Rest,
}

impl Role {
    /// Arm whose consumer-side experience the node receives, if any.
    pub fn arm(self) -> Option<usize> {
        match self {
            Role::Omega(r) | Role::Lambda(r) => Some(r),
            _ => None,
        }
    }

    pub fn label(self) -> String {
        match self {
            Role::Omega(r) => format!("omega:{r}"),
            Role::Lambda(r) => format!("lambda:{r}"),
            Role::CPrime => "cprime".into(),
            Role::Rest => "rest".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cprime" => Some(Role::CPrime),
            "rest" => Some(Role::Rest),
            _ => {
                let (kind, arm) = s.split_once(':')?;
                let arm = arm.parse().ok()?;
                match kind {
                    "omega" => Some(Role::Omega(arm)),
                    "lambda" => Some(Role::Lambda(arm)),
                    _ => None,
                }
            }
        }
    }
}

/// How the exposure set is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExposureSetMode {
    /// Every eligible child of `Ω'` enters independently with probability `q`.
    #[default]
    Bernoulli,
    /// A random set `Γ` of the given fraction of nodes is drawn alongside the
    /// arms and intersected with the children of `Ω'`.
    Gamma { frac: f64 },
}

/// Measurement arms `Ω_r`, shadow arms `Λ_r` and the exposure set `C'`, each
/// sorted by node id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub omega: Vec<Vec<NodeId>>,
    pub lambda: Vec<Vec<NodeId>>,
    pub c_prime: Vec<NodeId>,
    pub q: f64,
}

impl Partition {
    pub fn n_arms(&self) -> usize {
        self.omega.len()
    }

    /// Per-node roles; fails if any node is claimed twice or is out of range.
    pub fn roles(&self, n_nodes: usize) -> Result<Vec<Role>> {
        let mut roles = vec![Role::Rest; n_nodes];
        let mut assign = |i: NodeId, role: Role| -> Result<()> {
            let slot = roles
                .get_mut(i.index())
                .ok_or_else(|| Error::Input(format!("design: partition node {i} outside graph")))?;
            if *slot != Role::Rest {
                return Err(Error::Input(format!(
                    "design: node {i} is both {} and {}",
                    slot.label(),
                    role.label()
                )));
            }
            *slot = role;
            Ok(())
        };
        for (r, set) in self.omega.iter().enumerate() {
            for &i in set {
                assign(i, Role::Omega(r))?;
            }
        }
        for (r, set) in self.lambda.iter().enumerate() {
            for &i in set {
                assign(i, Role::Lambda(r))?;
            }
        }
        for &j in &self.c_prime {
            assign(j, Role::CPrime)?;
        }
        Ok(roles)
    }

    pub fn omega_prime(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.omega.iter().flatten().copied()
    }

    /// Nodes outside `Ω' ∪ Λ'` with at least one parent in `Ω'`, ascending.
    pub fn eligible_children(&self, graph: &MarketplaceGraph) -> Result<Vec<NodeId>> {
        let roles = self.roles(graph.n_nodes())?;
        Ok(eligible(graph, &roles))
    }

    /// Checks disjointness and that `C'` only holds eligible children.
    pub fn check(&self, graph: &MarketplaceGraph) -> Result<()> {
        if self.lambda.len() != self.omega.len() {
            return Err(Error::Input("design: omega and lambda arm counts differ".into()));
        }
        let roles = self.roles(graph.n_nodes())?;
        let mut is_eligible = vec![false; graph.n_nodes()];
        let mut without_cprime = roles.clone();
        for &j in &self.c_prime {
            without_cprime[j.index()] = Role::Rest;
        }
        for j in eligible(graph, &without_cprime) {
            is_eligible[j.index()] = true;
        }
        if let Some(j) = self.c_prime.iter().find(|j| !is_eligible[j.index()]) {
            return Err(Error::Input(format!("design: exposure-set node {j} is not a child of any omega node")));
        }
        Ok(())
    }
}

fn eligible(graph: &MarketplaceGraph, roles: &[Role]) -> Vec<NodeId> {
    let mut mark = vec![false; graph.n_nodes()];
    for i in graph.nodes() {
        if matches!(roles[i.index()], Role::Omega(_)) {
            for j in graph.children(i) {
                if matches!(roles[j.index()], Role::Rest | Role::CPrime) {
                    mark[j.index()] = true;
                }
            }
        }
    }
    (0..graph.n_nodes()).filter(|&j| mark[j]).map(NodeId::from).collect()
}

/// Draws disjoint arms uniformly at random and then the exposure set.
///
/// Arm sizes are `round(frac · n)`. All draws come from the seeded stream: one
/// shuffle for the arms and one uniform per eligible child, in ascending node order.
pub fn sample_partition(
    graph: &MarketplaceGraph,
    frac_omega: &[f64],
    frac_lambda: &[f64],
    q: f64,
    mode: ExposureSetMode,
    seed: u64,
) -> Result<Partition> {
    let n = graph.n_nodes();
    if frac_omega.is_empty() || frac_omega.len() != frac_lambda.len() {
        return Err(Error::Parameter("need one omega and one lambda fraction per arm".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Parameter(format!("q must lie in [0, 1], got {q}")));
    }
    let gamma_frac = match mode {
        ExposureSetMode::Bernoulli => 0.0,
        ExposureSetMode::Gamma { frac } => frac,
    };
    let fracs: Vec<f64> = frac_omega.iter().chain(frac_lambda).copied().chain([gamma_frac]).collect();
    if fracs.iter().any(|f| !(0.0..1.0).contains(f)) || fracs.iter().sum::<f64>() >= 1.0 {
        return Err(Error::Parameter(format!("arm fractions {fracs:?} must be non-negative and sum to < 1")));
    }
    let sizes: Vec<usize> = fracs.iter().map(|f| (f * n as f64).round() as usize).collect();
    if sizes.iter().sum::<usize>() > n {
        return Err(Error::Parameter(format!("arms need {} nodes but the graph has {n}", sizes.iter().sum::<usize>())));
    }
    if sizes[..frac_omega.len()].iter().any(|&s| s == 0) {
        return Err(Error::Parameter(format!("omega fractions {frac_omega:?} leave an empty arm for {n} nodes")));
    }

    let mut order: Vec<NodeId> = graph.nodes().collect();
    order.shuffle(&mut rng::stream(seed, Purpose::Partition, 0));
    let mut chunks = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in &sizes {
        let mut chunk = order[start..start + s].to_vec();
        chunk.sort_unstable();
        chunks.push(chunk);
        start += s;
    }
    let m = frac_omega.len();
    let gamma = chunks.pop().unwrap();
    let lambda = chunks.split_off(m);
    let omega = chunks;

    let mut partition = Partition {
        omega,
        lambda,
        c_prime: Vec::new(),
        q,
    };
    let candidates = partition.eligible_children(graph)?;
    partition.c_prime = match mode {
        ExposureSetMode::Bernoulli => {
            let mut rng = rng::stream(seed, Purpose::Partition, 1);
            candidates.into_iter().filter(|_| rng.random::<f64>() < q).collect()
        }
        ExposureSetMode::Gamma { .. } => {
            let mut in_gamma = vec![false; n];
            for j in gamma {
                in_gamma[j.index()] = true;
            }
            candidates.into_iter().filter(|j| in_gamma[j.index()]).collect()
        }
    };
    Ok(partition)
}
