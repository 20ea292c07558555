use std::fmt;

use super::{MarketplaceGraph, NodeId, TreatmentSet, SIMPLEX_TOL};

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// Incoming weights of `node` under `arm` do not sum to one.
    /// `deficit = 1 - sum` (negative when the sum overshoots).
    Simplex { arm: usize, node: NodeId, sum: f64, deficit: f64 },
    WeightOutOfRange { arm: usize, src: NodeId, dst: NodeId, value: f64 },
    AlphaNotPositive { src: NodeId, dst: NodeId, alpha: f64 },
    ControlMismatch { src: NodeId, dst: NodeId, p_base: f64, control: f64 },
    ArmLength { arm: usize, len: usize, expected: usize },
    Asymmetric { src: NodeId, dst: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Simplex { arm, node, sum, deficit } => {
                write!(f, "arm {arm}: incoming weights of node {node} sum to {sum} (deficit {deficit:e})")
            }
            Violation::WeightOutOfRange { arm, src, dst, value } => {
                write!(f, "arm {arm}: weight {value} on {src}->{dst} outside [0, 1]")
            }
            Violation::AlphaNotPositive { src, dst, alpha } => write!(f, "alpha {alpha} on {src}->{dst} is not positive"),
            Violation::ControlMismatch { src, dst, p_base, control } => {
                write!(f, "arm 0 weight {control} on {src}->{dst} differs from p_base {p_base}")
            }
            Violation::ArmLength { arm, len, expected } => write!(f, "arm {arm} has {len} weights, expected {expected}"),
            Violation::Asymmetric { src, dst } => write!(f, "edge {src}->{dst} has no reverse edge"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "no violations");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks the value-level invariants of a graph and its treatments: affinities
/// are positive, weights lie in `[0, 1]`, every consumer with parents has a
/// simplex of incoming weights for `p_base` and every arm, and arm 0 equals
/// `p_base`. Simplex failures of `p_base` are reported as arm 0.
pub fn validate(graph: &MarketplaceGraph, treatments: &TreatmentSet) -> ValidationReport {
    let mut violations = Vec::new();
    for e in graph.edges() {
        if !(e.alpha > 0.0) {
            violations.push(Violation::AlphaNotPositive {
                src: e.src,
                dst: e.dst,
                alpha: e.alpha,
            });
        }
    }

    let p_base = graph.p_base();
    check_arm(graph, 0, &p_base, &mut violations);

    for (r, arm) in treatments.arms().iter().enumerate() {
        if arm.len() != graph.n_edges() {
            violations.push(Violation::ArmLength {
                arm: r,
                len: arm.len(),
                expected: graph.n_edges(),
            });
            continue;
        }
        if r == 0 {
            for (id, e) in graph.edges().iter().enumerate() {
                if arm[id] != e.p_base {
                    violations.push(Violation::ControlMismatch {
                        src: e.src,
                        dst: e.dst,
                        p_base: e.p_base,
                        control: arm[id],
                    });
                }
            }
        } else {
            check_arm(graph, r, arm, &mut violations);
        }
    }
    ValidationReport { violations }
}

/// Graphs from the clustered generator are reciprocal; this reports edges that are not.
pub fn asymmetric_edges(graph: &MarketplaceGraph) -> Vec<Violation> {
    graph
        .edges()
        .iter()
        .filter(|e| graph.find_edge(e.dst, e.src).is_none())
        .map(|e| Violation::Asymmetric { src: e.src, dst: e.dst })
        .collect()
}

fn check_arm(graph: &MarketplaceGraph, arm: usize, weights: &[f64], out: &mut Vec<Violation>) {
    for (id, e) in graph.edges().iter().enumerate() {
        let w = weights[id];
        if !(0.0..=1.0).contains(&w) {
            out.push(Violation::WeightOutOfRange {
                arm,
                src: e.src,
                dst: e.dst,
                value: w,
            });
        }
    }
    for j in graph.nodes() {
        let parents = graph.in_edges(j);
        if parents.is_empty() {
            continue;
        }
        let sum: f64 = parents.iter().map(|&e| weights[e]).sum();
        if !((sum - 1.0).abs() <= SIMPLEX_TOL) {
            out.push(Violation::Simplex {
                arm,
                node: j,
                sum,
                deficit: 1.0 - sum,
            });
        }
    }
}
