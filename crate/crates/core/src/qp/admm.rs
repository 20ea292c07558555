//! Alternating-direction iteration on the split `Ax = z, z ∈ [l, u]`.

use super::linsys::KktSolver;
use super::{QpConfig, QpProblem, QpSolution, QpStatus};
use crate::error::Result;

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_SCALE: f64 = 1e3;
const ADAPT_INTERVAL: usize = 25;
const ADAPT_TOLERANCE: f64 = 5.0;
const EPS_INFEASIBLE: f64 = 1e-5;

pub fn solve_qp(problem: &QpProblem, config: &QpConfig) -> Result<QpSolution> {
    solve_qp_warm(problem, config, None, None)
}

/// Solves from a warm start. Missing or wrongly sized starts fall back to zeros.
pub fn solve_qp_warm(problem: &QpProblem, config: &QpConfig, x0: Option<&[f64]>, y0: Option<&[f64]>) -> Result<QpSolution> {
    config.check()?;
    problem.check()?;
    let n = problem.n_vars();
    let m = problem.n_constraints();
    let (p, a, q, l, u) = (&problem.p, &problem.a, &problem.q, &problem.l, &problem.u);

    let mut x = match x0 {
        Some(v) if v.len() == n => v.to_vec(),
        _ => vec![0.0; n],
    };
    let mut y = match y0 {
        Some(v) if v.len() == m => v.to_vec(),
        _ => vec![0.0; m],
    };
    if n == 0 {
        return Ok(QpSolution {
            x,
            y,
            objective_value: problem.constant,
            primal_residual: 0.0,
            dual_residual: 0.0,
            iterations: 0,
            status: QpStatus::Solved,
            certificate_norm: None,
            factor_nnz: 0,
            refactorizations: 0,
        });
    }

    let row_rho = |base: f64, k: usize| {
        if l[k] == f64::NEG_INFINITY && u[k] == f64::INFINITY {
            RHO_MIN
        } else if l[k] == u[k] {
            RHO_EQ_SCALE * base
        } else {
            base
        }
    };
    let mut rho_base = config.rho;
    let mut rho: Vec<f64> = (0..m).map(|k| row_rho(rho_base, k)).collect();
    let mut kkt = KktSolver::new(p, a, config.sigma, &rho)?;
    let mut refactorizations = 0;

    let mut ax = vec![0.0; m];
    a.mul_vec(&x, &mut ax);
    let mut z: Vec<f64> = (0..m).map(|k| ax[k].clamp(l[k], u[k])).collect();

    let mut rhs = vec![0.0; n];
    let mut work_m = vec![0.0; m];
    let mut z_tilde = vec![0.0; m];
    let mut px = vec![0.0; n];
    let mut aty = vec![0.0; n];
    let mut delta_y = vec![0.0; m];
    let mut at_dy = vec![0.0; n];
    let alpha = config.relax_alpha;
    let q_norm = inf_norm(q);

    let mut status = QpStatus::MaxIter;
    let mut certificate_norm = None;
    let mut r_prim = f64::INFINITY;
    let mut r_dual = f64::INFINITY;
    let mut iterations = 0;

    for iter in 1..=config.max_iter {
        iterations = iter;
        // x̃ from the regularized system
        for k in 0..m {
            work_m[k] = rho[k] * z[k] - y[k];
        }
        a.tmul_vec(&work_m, &mut rhs);
        for i in 0..n {
            rhs[i] += config.sigma * x[i] - q[i];
        }
        kkt.solve(&mut rhs);
        a.mul_vec(&rhs, &mut z_tilde);

        for i in 0..n {
            x[i] = alpha * rhs[i] + (1.0 - alpha) * x[i];
        }
        for k in 0..m {
            let relaxed = alpha * z_tilde[k] + (1.0 - alpha) * z[k];
            let z_new = (relaxed + y[k] / rho[k]).clamp(l[k], u[k]);
            delta_y[k] = rho[k] * (relaxed - z_new);
            y[k] += delta_y[k];
            z[k] = z_new;
        }

        a.mul_vec(&x, &mut ax);
        p.mul_vec(&x, &mut px);
        a.tmul_vec(&y, &mut aty);
        r_prim = ax.iter().zip(&z).fold(0.0_f64, |s, (a, b)| s.max((a - b).abs()));
        r_dual = (0..n).fold(0.0_f64, |s, i| s.max((px[i] + q[i] + aty[i]).abs()));
        let prim_scale = inf_norm(&ax).max(inf_norm(&z));
        let dual_scale = inf_norm(&px).max(inf_norm(&aty)).max(q_norm);
        let eps_prim = config.eps_abs + config.eps_rel * prim_scale;
        let eps_dual = config.eps_abs + config.eps_rel * dual_scale;
        if r_prim <= eps_prim && r_dual <= eps_dual {
            status = QpStatus::Solved;
            break;
        }

        if let Some(norm) = infeasibility_certificate(problem, &delta_y, &mut at_dy) {
            status = QpStatus::Infeasible;
            certificate_norm = Some(norm);
            break;
        }

        if iter % ADAPT_INTERVAL == 0 {
            let num = r_prim / prim_scale.max(1e-30);
            let den = r_dual / dual_scale.max(1e-30);
            if num > 0.0 && den > 0.0 {
                let proposed = (rho_base * (num / den).sqrt()).clamp(RHO_MIN, RHO_MAX);
                if proposed > ADAPT_TOLERANCE * rho_base || proposed < rho_base / ADAPT_TOLERANCE {
                    rho_base = proposed;
                    for k in 0..m {
                        rho[k] = row_rho(rho_base, k);
                    }
                    kkt.refactor(p, a, &rho)?;
                    refactorizations += 1;
                }
            }
        }
    }

    Ok(QpSolution {
        objective_value: problem.objective(&x),
        x,
        y,
        primal_residual: r_prim,
        dual_residual: r_dual,
        iterations,
        status,
        certificate_norm,
        factor_nnz: kkt.factor_nnz(),
        refactorizations,
    })
}

/// A change in the multipliers `δy` with `Aᵀδy ≈ 0` and `uᵀδy₊ + lᵀδy₋ < 0`
/// proves the constraint set empty.
fn infeasibility_certificate(problem: &QpProblem, dy: &[f64], at_dy: &mut [f64]) -> Option<f64> {
    let norm = inf_norm(dy);
    if norm < 1e-10 {
        return None;
    }
    problem.a.tmul_vec(dy, at_dy);
    if inf_norm(at_dy) > EPS_INFEASIBLE * norm {
        return None;
    }
    let mut support = 0.0;
    for (k, &d) in dy.iter().enumerate() {
        if d > 0.0 {
            support += problem.u[k] * d;
        } else if d < 0.0 {
            support += problem.l[k] * d;
        }
    }
    (support < -EPS_INFEASIBLE * norm).then_some(norm)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |s, x| s.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::CsrMatrix;

    fn identity_rows(n: usize) -> CsrMatrix {
        CsrMatrix::from_triplets(n, n, &(0..n).map(|i| (i, i, 1.0)).collect::<Vec<_>>())
    }

    #[test]
    fn one_dimensional_clamp() {
        // (2 - p)^2 = p^2 - 4p + 4
        let problem = QpProblem {
            p: CsrMatrix::from_triplets(1, 1, &[(0, 0, 2.0)]),
            q: vec![-4.0],
            constant: 4.0,
            a: identity_rows(1),
            l: vec![0.0],
            u: vec![1.5],
        };
        let sol = solve_qp(&problem, &QpConfig::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 1.5).abs() < 1e-5);
        assert!((sol.objective_value - 0.25).abs() < 1e-5);
        assert!(sol.y[0] > 0.0);
    }

    #[test]
    fn identity_objective_has_minimum_at_origin() {
        let n = 4;
        let problem = QpProblem {
            p: CsrMatrix::from_triplets(n, n, &(0..n).map(|i| (i, i, 3.0)).collect::<Vec<_>>()),
            q: vec![0.0; n],
            constant: 0.0,
            a: identity_rows(n),
            l: vec![-10.0; n],
            u: vec![10.0; n],
        };
        let sol = solve_qp(&problem, &QpConfig::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!(sol.x.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn two_variables_sharing_a_budget() {
        // (1 - x1 - x2)^2, 0 ≤ x ≤ 1, x1 + x2 ≤ 0.8
        let problem = QpProblem {
            p: CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 2.0)]),
            q: vec![-2.0, -2.0],
            constant: 1.0,
            a: CsrMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (1, 1, 1.0), (2, 0, 1.0), (2, 1, 1.0)]),
            l: vec![0.0, 0.0, f64::NEG_INFINITY],
            u: vec![1.0, 1.0, 0.8],
        };
        let sol = solve_qp(&problem, &QpConfig::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] + sol.x[1] - 0.8).abs() < 1e-5);
        assert!((sol.objective_value - 0.04).abs() < 1e-5);
    }

    #[test]
    fn detects_infeasible_rows() {
        // x ≥ 1 and x ≤ 0 through two separate rows
        let problem = QpProblem {
            p: CsrMatrix::from_triplets(1, 1, &[(0, 0, 1.0)]),
            q: vec![0.0],
            constant: 0.0,
            a: CsrMatrix::from_triplets(2, 1, &[(0, 0, 1.0), (1, 0, 1.0)]),
            l: vec![1.0, f64::NEG_INFINITY],
            u: vec![f64::INFINITY, 0.0],
        };
        let sol = solve_qp(&problem, &QpConfig::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        assert!(sol.certificate_norm.unwrap() > 0.0);
    }

    #[test]
    fn rejects_inverted_bounds() {
        let problem = QpProblem {
            p: CsrMatrix::zeros(1, 1),
            q: vec![0.0],
            constant: 0.0,
            a: identity_rows(1),
            l: vec![1.0],
            u: vec![0.0],
        };
        assert!(solve_qp(&problem, &QpConfig::default()).is_err());
    }

    #[test]
    fn identical_inputs_give_identical_output() {
        let problem = QpProblem {
            p: CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]),
            q: vec![-1.0, 0.5],
            constant: 0.0,
            a: identity_rows(2),
            l: vec![0.0, 0.0],
            u: vec![1.0, 1.0],
        };
        let a = solve_qp(&problem, &QpConfig::default()).unwrap();
        let b = solve_qp(&problem, &QpConfig::default()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.iterations, b.iterations);
    }
}
