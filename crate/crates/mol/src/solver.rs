//! Forward solvers for the discretized elliptic problems: direct dense LU up
//! to a size cap, BiCGStab with Jacobi preconditioning beyond it, Dirichlet
//! conditions by identity-row replacement, and Newton for the semilinear
//! benchmark problem.

use ndarray::{Array1, Array2};
use ndarray_linalg::Solve;
use serde::{Deserialize, Serialize};

use crate::error::{MolError, Result};
use crate::geometry::BoundarySplit;
use crate::operators::DiscreteOperator;

/// Largest system handed to the dense LU path.
pub const DENSE_SOLVE_CAP: usize = 4096;
const ITER_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMethod {
    DenseLu,
    Iterative,
    Newton,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Array1<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

/// Reaction coefficient: a single scalar or one value per point.
#[derive(Debug, Clone)]
pub enum Coefficient {
    Scalar(f64),
    PerPoint(Vec<f64>),
}

impl Coefficient {
    pub fn values(&self, n: usize) -> Result<Vec<f64>> {
        let vals = match self {
            Coefficient::Scalar(c) => vec![*c; n],
            Coefficient::PerPoint(v) => {
                if v.len() != n {
                    return Err(MolError::Shape(format!(
                        "c has {} values for {} points",
                        v.len(),
                        n
                    )));
                }
                v.clone()
            }
        };
        if let Some((i, &bad)) = vals.iter().enumerate().find(|&(_, &v)| !(v > 0.0)) {
            return Err(MolError::Parameter(format!(
                "c must be positive everywhere; c[{i}] = {bad}"
            )));
        }
        Ok(vals)
    }
}

pub struct ForwardProblem<'a> {
    pub operator: &'a DiscreteOperator,
    pub c: Coefficient,
    pub f_values: Array1<f64>,
    /// Near-boundary split and boundary values g-tilde on those points.
    pub boundary: Option<(BoundarySplit, Vec<f64>)>,
}

fn l2(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// BiCGStab with Jacobi preconditioning on a matrix-free operator.
fn bicgstab<F: Fn(&Array1<f64>) -> Array1<f64>>(
    apply: F,
    diag: &Array1<f64>,
    b: &Array1<f64>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Array1<f64>, usize, f64)> {
    let n = b.len();
    let precond = |v: &Array1<f64>| -> Array1<f64> {
        Array1::from_iter(v.iter().zip(diag.iter()).map(|(x, &d)| {
            if d.abs() > 1e-300 {
                x / d
            } else {
                *x
            }
        }))
    };
    let b_norm = l2(b).max(1e-300);
    let mut x = Array1::<f64>::zeros(n);
    let mut r = b.clone();
    let r0 = r.clone();
    let mut rho = 1.0f64;
    let mut alpha = 1.0f64;
    let mut omega = 1.0f64;
    let mut v = Array1::<f64>::zeros(n);
    let mut p = Array1::<f64>::zeros(n);
    let mut history = Vec::new();
    for it in 0..max_iter {
        let res = l2(&r) / b_norm;
        history.push(res);
        if res < rel_tol {
            return Ok((x, it, res));
        }
        let rho_new: f64 = r0.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
        if rho_new.abs() < 1e-300 {
            return Err(MolError::NonConvergence {
                iterations: it,
                residual: res,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p = &r + &((&p - &(&v * omega)) * beta);
        let p_hat = precond(&p);
        v = apply(&p_hat);
        let r0v: f64 = r0.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        if r0v.abs() < 1e-300 {
            return Err(MolError::NonConvergence {
                iterations: it,
                residual: res,
            });
        }
        alpha = rho / r0v;
        let s = &r - &(&v * alpha);
        if l2(&s) / b_norm < rel_tol {
            x = &x + &(&p_hat * alpha);
            let final_res = l2(&(b - &apply(&x))) / b_norm;
            return Ok((x, it + 1, final_res));
        }
        let s_hat = precond(&s);
        let t = apply(&s_hat);
        let tt: f64 = t.iter().map(|a| a * a).sum();
        if tt < 1e-300 {
            return Err(MolError::NonConvergence {
                iterations: it,
                residual: res,
            });
        }
        omega = t.iter().zip(s.iter()).map(|(a, b)| a * b).sum::<f64>() / tt;
        x = &x + &(&p_hat * alpha) + &(&s_hat * omega);
        r = &s - &(&t * omega);
    }
    let res = l2(&r) / b_norm;
    Err(MolError::NonConvergence {
        iterations: max_iter,
        residual: res,
    })
}

fn dense_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    a.solve(b).map_err(|e| {
        MolError::Solver(format!(
            "dense LU failed (matrix likely singular): {e}"
        ))
    })
}

/// Direct solve below `DENSE_SOLVE_CAP`, preconditioned BiCGStab above it.
pub fn solve_linear(problem: &ForwardProblem) -> Result<SolveReport> {
    solve_linear_with(problem, None)
}

/// Like `solve_linear` but with the method forced; `None` keeps the size
/// heuristic. `Newton` is rejected (linear problem).
pub fn solve_linear_with(
    problem: &ForwardProblem,
    method: Option<SolveMethod>,
) -> Result<SolveReport> {
    if problem.boundary.is_some() {
        return Err(MolError::Parameter(
            "problem has a boundary block; use solve_dirichlet".into(),
        ));
    }
    let n = problem.operator.size();
    if problem.f_values.len() != n {
        return Err(MolError::Shape(format!(
            "rhs has {} values for {} points",
            problem.f_values.len(),
            n
        )));
    }
    let c = problem.c.values(n)?;
    let f = &problem.f_values;

    let use_dense = match method {
        Some(SolveMethod::DenseLu) => true,
        Some(SolveMethod::Iterative) => false,
        Some(SolveMethod::Newton) => {
            return Err(MolError::Parameter(
                "Newton is not a linear solve method".into(),
            ))
        }
        None => n <= DENSE_SOLVE_CAP,
    };
    if use_dense {
        let mut a = problem.operator.to_dense();
        for i in 0..n {
            a[[i, i]] += c[i];
        }
        let u = dense_solve(&a, f)?;
        let residual = &a.dot(&u) - f;
        let res = l2(&residual);
        let rel = res / l2(f).max(1e-300);
        if !res.is_finite() || (l2(f) > 0.0 && rel > 1e-8) {
            return Err(MolError::Solver(format!(
                "direct solve residual {rel:.3e} exceeds 1e-8; system is ill-conditioned"
            )));
        }
        return Ok(SolveReport {
            solution: u,
            residual_norm: res,
            iterations: 1,
            method: SolveMethod::DenseLu,
        });
    }

    let c_arr = Array1::from(c.clone());
    let apply = |x: &Array1<f64>| -> Array1<f64> { problem.operator.apply(x) + &(&c_arr * x) };
    let diag = problem.operator.diagonal() + &c_arr;
    let (u, iterations, rel) = bicgstab(apply, &diag, f, ITER_REL_TOL, 20 * n)?;
    Ok(SolveReport {
        solution: u,
        residual_norm: rel * l2(f),
        iterations,
        method: SolveMethod::Iterative,
    })
}

pub fn solve_dirichlet(problem: &ForwardProblem) -> Result<SolveReport> {
    let (split, g_tilde) = problem.boundary.as_ref().ok_or_else(|| {
        MolError::Parameter("solve_dirichlet needs a boundary split and boundary values".into())
    })?;
    let n = problem.operator.size();
    if problem.f_values.len() != n {
        return Err(MolError::Shape(format!(
            "rhs has {} values for {} points",
            problem.f_values.len(),
            n
        )));
    }
    if g_tilde.len() != split.near_boundary.len() {
        return Err(MolError::Shape(format!(
            "boundary has {} values for {} near-boundary points",
            g_tilde.len(),
            split.near_boundary.len()
        )));
    }
    if split.interior.is_empty() {
        if split.near_boundary.is_empty() {
            return Err(MolError::DegenerateCloud("empty boundary split".into()));
        }
    }
    let c = problem.c.values(n)?;

    let mut is_boundary = vec![false; n];
    let mut g_at = vec![0.0; n];
    for (&i, &g) in split.near_boundary.iter().zip(g_tilde) {
        is_boundary[i] = true;
        g_at[i] = g;
    }
    let mut rhs = problem.f_values.clone();
    for i in 0..n {
        if is_boundary[i] {
            rhs[i] = g_at[i];
        }
    }

    let (u, iterations, method) = if n <= DENSE_SOLVE_CAP {
        let mut a = problem.operator.to_dense();
        for i in 0..n {
            if is_boundary[i] {
                for j in 0..n {
                    a[[i, j]] = if i == j { 1.0 } else { 0.0 };
                }
            } else {
                a[[i, i]] += c[i];
            }
        }
        (dense_solve(&a, &rhs)?, 1, SolveMethod::DenseLu)
    } else {
        let c_arr = Array1::from(c.clone());
        let apply = |x: &Array1<f64>| -> Array1<f64> {
            let mut y = problem.operator.apply(x) + &(&c_arr * x);
            for i in 0..n {
                if is_boundary[i] {
                    y[i] = x[i];
                }
            }
            y
        };
        let mut diag = problem.operator.diagonal() + &c_arr;
        for i in 0..n {
            if is_boundary[i] {
                diag[i] = 1.0;
            }
        }
        let (u, it, _) = bicgstab(apply, &diag, &rhs, ITER_REL_TOL, 20 * n)?;
        (u, it, SolveMethod::Iterative)
    };

    // Residual over interior rows only; boundary rows are identities.
    let lu = problem.operator.apply(&u);
    let mut res_sq = 0.0;
    for &i in &split.interior {
        let r = lu[i] + c[i] * u[i] - problem.f_values[i];
        res_sq += r * r;
    }
    Ok(SolveReport {
        solution: u,
        residual_norm: res_sq.sqrt(),
        iterations,
        method,
    })
}

/// Semilinear reaction term of the benchmark problem.
pub fn semilinear_rhs(u: f64, kappa: f64) -> f64 {
    1.5 * u * u + u + 2.0 * kappa * u - 0.5 * kappa * kappa
}

/// Newton iteration on `F(u) = L u + u - f(u, kappa)` with the analytic
/// Jacobian `J = L + I - diag(3u + 1 + 2 kappa)`.
///
/// Steps are damped by a backtracking line search on `‖F‖`; the full step is
/// taken whenever it already reduces the residual, so the quadratic tail is
/// preserved. The reaction term makes the problem multi-root, and the
/// iteration converges to the root whose basin contains `init`.
pub fn solve_semilinear(
    operator: &DiscreteOperator,
    kappa_at_points: &[f64],
    init: Option<&Array1<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    let n = operator.size();
    if kappa_at_points.len() != n {
        return Err(MolError::Shape(format!(
            "kappa has {} values for {} points",
            kappa_at_points.len(),
            n
        )));
    }
    let mut u = match init {
        Some(v) => {
            if v.len() != n {
                return Err(MolError::Shape(format!(
                    "initial guess has {} values for {} points",
                    v.len(),
                    n
                )));
            }
            v.clone()
        }
        None => Array1::zeros(n),
    };
    let sqrt_n = (n as f64).sqrt();
    let dense = n <= DENSE_SOLVE_CAP;
    let base = if dense {
        Some(operator.to_dense())
    } else {
        None
    };

    let eval_f = |u: &Array1<f64>| -> Array1<f64> {
        let lu = operator.apply(u);
        Array1::from_iter(
            (0..n).map(|i| lu[i] + u[i] - semilinear_rhs(u[i], kappa_at_points[i])),
        )
    };

    let mut fu = eval_f(&u);
    let mut res = l2(&fu) / sqrt_n;
    for it in 0..max_iter {
        if res < tol {
            return Ok(SolveReport {
                solution: u,
                residual_norm: res,
                iterations: it,
                method: SolveMethod::Newton,
            });
        }
        let jac_diag_shift: Vec<f64> = (0..n)
            .map(|i| 1.0 - (3.0 * u[i] + 1.0 + 2.0 * kappa_at_points[i]))
            .collect();
        let neg_f = fu.mapv(|v| -v);
        let delta = if let Some(b) = &base {
            let mut j = b.clone();
            for i in 0..n {
                j[[i, i]] += jac_diag_shift[i];
            }
            dense_solve(&j, &neg_f).map_err(|_| {
                MolError::Solver(format!(
                    "Newton Jacobian singular at iteration {it}, residual {res:.3e}"
                ))
            })?
        } else {
            let shift = Array1::from(jac_diag_shift.clone());
            let apply = |x: &Array1<f64>| -> Array1<f64> { operator.apply(x) + &(&shift * x) };
            let diag = operator.diagonal() + &shift;
            bicgstab(apply, &diag, &neg_f, ITER_REL_TOL, 20 * n)?.0
        };
        let mut lambda = 1.0;
        loop {
            let u_try = &u + &delta.mapv(|v| v * lambda);
            let f_try = eval_f(&u_try);
            let r_try = l2(&f_try) / sqrt_n;
            if (r_try.is_finite() && r_try < res) || lambda < 1e-6 {
                u = u_try;
                fu = f_try;
                res = r_try;
                break;
            }
            lambda *= 0.5;
        }
        if !res.is_finite() {
            return Err(MolError::Solver(format!(
                "Newton residual became non-finite at iteration {}",
                it + 1
            )));
        }
    }
    if res < tol {
        return Ok(SolveReport {
            solution: u,
            residual_norm: res,
            iterations: max_iter,
            method: SolveMethod::Newton,
        });
    }
    Err(MolError::NonConvergence {
        iterations: max_iter,
        residual: res,
    })
}

/// Default right-hand side for experiments: the ambient z-coordinate
/// (sin(theta) on the torus). A constant f would be degenerate on a closed
/// manifold -- L annihilates constants, so (L + cI) u = f with f = const
/// has the kappa-independent solution u = f/c and the solution operator
/// would carry no information about kappa.
pub fn default_forcing(cloud: &crate::geometry::PointCloud) -> Array1<f64> {
    Array1::from_iter(cloud.points.iter().map(|p| p[2]))
}

/// Mean L2 relative error between a computed and a reference vector, the
/// metric used throughout the experiments.
pub fn l2_relative_error(estimate: &Array1<f64>, truth: &Array1<f64>) -> f64 {
    let num: f64 = estimate
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    (num / den.max(1e-300)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        build_knn, grid_cloud, sample_cloud, split_near_boundary, ManifoldKind,
    };
    use crate::operators::{
        build_dm_operator, build_gmls_operator, default_epsilon_grid, dm_neighbor_count,
        tune_epsilon,
    };
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dm_operator(
        n: usize,
        seed: u64,
        kappa: &[f64],
    ) -> (crate::geometry::PointCloud, DiscreteOperator) {
        let cloud = sample_cloud(ManifoldKind::Torus, n, 2.0, 1.0, seed).unwrap();
        let knn = build_knn(&cloud, dm_neighbor_count(n)).unwrap();
        let eps = tune_epsilon(&cloud, &knn, &default_epsilon_grid())
            .unwrap()
            .chosen_epsilon;
        let op = build_dm_operator(&cloud, &knn, kappa, eps, 2).unwrap();
        (cloud, op)
    }

    #[test]
    fn recovers_known_solution() {
        let n = 300;
        let kappa = vec![1.0; n];
        let (_, op) = dm_operator(n, 11, &kappa);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Array1<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let f = op.apply(&v) + &v;
        let problem = ForwardProblem {
            operator: &op,
            c: Coefficient::Scalar(1.0),
            f_values: f,
            boundary: None,
        };
        let report = solve_linear(&problem).unwrap();
        assert_eq!(report.method, SolveMethod::DenseLu);
        assert!(l2_relative_error(&report.solution, &v) < 1e-8);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let n = 200;
        let kappa = vec![1.0; n];
        let (_, op) = dm_operator(n, 3, &kappa);
        let problem = ForwardProblem {
            operator: &op,
            c: Coefficient::Scalar(1.0),
            f_values: Array1::zeros(n),
            boundary: None,
        };
        let report = solve_linear(&problem).unwrap();
        assert!(report.solution.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn solve_is_linear_in_rhs() {
        let n = 250;
        let kappa = vec![1.0; n];
        let (_, op) = dm_operator(n, 6, &kappa);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f1: Array1<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let f2: Array1<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let solve = |f: Array1<f64>| {
            solve_linear(&ForwardProblem {
                operator: &op,
                c: Coefficient::Scalar(2.0),
                f_values: f,
                boundary: None,
            })
            .unwrap()
            .solution
        };
        let u1 = solve(f1.clone());
        let u2 = solve(f2.clone());
        let u12 = solve(&f1 + &f2);
        assert!(l2_relative_error(&u12, &(&u1 + &u2)) < 1e-8);
    }

    #[test]
    fn manufactured_torus_solution_with_dm() {
        // (-div(grad) + 1) cos(theta) = cos(theta) + (R cos + r cos2)/
        // (r^2 (R + r cos)) on the R=2, r=1 torus. A regular grid keeps the
        // quadrature noise of the kernel sums below the solve tolerance.
        let cloud = grid_cloud(ManifoldKind::Torus, 50, 2.0, 1.0).unwrap();
        let n = cloud.len();
        let kappa = vec![1.0; n];
        let knn = build_knn(&cloud, dm_neighbor_count(n)).unwrap();
        let eps = tune_epsilon(&cloud, &knn, &default_epsilon_grid())
            .unwrap()
            .chosen_epsilon;
        let op = build_dm_operator(&cloud, &knn, &kappa, eps, 2).unwrap();
        let intr = cloud.intrinsic.as_ref().unwrap();
        let f: Array1<f64> = intr
            .iter()
            .map(|t| {
                let th = t[0];
                th.cos() + (2.0 * th.cos() + (2.0 * th).cos()) / (2.0 + th.cos())
            })
            .collect();
        let truth: Array1<f64> = intr.iter().map(|t| t[0].cos()).collect();
        let report = solve_linear(&ForwardProblem {
            operator: &op,
            c: Coefficient::Scalar(1.0),
            f_values: f,
            boundary: None,
        })
        .unwrap();
        let err = l2_relative_error(&report.solution, &truth);
        assert!(err < 0.05, "manufactured solution error {err}");
    }

    #[test]
    fn dirichlet_rows_are_exact() {
        let n = 500;
        let cloud = sample_cloud(ManifoldKind::SemiTorus, n, 2.0, 1.0, 9).unwrap();
        let knn = build_knn(&cloud, 18).unwrap();
        let kappa = vec![1.0; n];
        let op = build_gmls_operator(&cloud, &knn, &kappa, 18, 2).unwrap();
        let split = split_near_boundary(&cloud, 0.4).unwrap();
        assert!(!split.near_boundary.is_empty());
        let intr = cloud.intrinsic.as_ref().unwrap();
        let v: Array1<f64> = intr.iter().map(|t| t[0].cos() * t[1].sin()).collect();
        let lv = op.apply(&v);
        let f: Array1<f64> = (0..n).map(|i| lv[i] + v[i]).collect();
        let g: Vec<f64> = split.near_boundary.iter().map(|&i| v[i]).collect();
        let report = solve_dirichlet(&ForwardProblem {
            operator: &op,
            c: Coefficient::Scalar(1.0),
            f_values: f,
            boundary: Some((split.clone(), g)),
        })
        .unwrap();
        for &i in &split.near_boundary {
            assert!((report.solution[i] - v[i]).abs() < 1e-8);
        }
        // Interior rows keep the manufactured relation, so the whole field
        // comes back.
        assert!(l2_relative_error(&report.solution, &v) < 1e-8);
    }

    #[test]
    fn dirichlet_everything_near_boundary() {
        let n = 200;
        let cloud = sample_cloud(ManifoldKind::SemiTorus, n, 2.0, 1.0, 5).unwrap();
        let knn = build_knn(&cloud, 18).unwrap();
        let kappa = vec![1.0; n];
        let op = build_gmls_operator(&cloud, &knn, &kappa, 18, 2).unwrap();
        let split = split_near_boundary(&cloud, 1e9).unwrap();
        assert!(split.interior.is_empty());
        let g: Vec<f64> = split.near_boundary.iter().map(|&i| i as f64 * 0.01).collect();
        let report = solve_dirichlet(&ForwardProblem {
            operator: &op,
            c: Coefficient::Scalar(1.0),
            f_values: Array1::zeros(n),
            boundary: Some((split.clone(), g.clone())),
        })
        .unwrap();
        for (&i, &gi) in split.near_boundary.iter().zip(&g) {
            assert!((report.solution[i] - gi).abs() < 1e-12);
        }
    }

    /// Grid cloud, tuned bandwidth, and the DM operator for the semilinear
    /// benchmark kappa = R + r cos(theta), true u = cos(theta).
    fn semilinear_setup(
        side: usize,
        stencil_factor: usize,
    ) -> (DiscreteOperator, Vec<f64>, Array1<f64>) {
        let cloud = grid_cloud(ManifoldKind::Torus, side, 2.0, 1.0).unwrap();
        let n = cloud.len();
        let knn = build_knn(&cloud, dm_neighbor_count(n)).unwrap();
        let eps = tune_epsilon(&cloud, &knn, &default_epsilon_grid())
            .unwrap()
            .chosen_epsilon;
        let knn_wide = if stencil_factor > 1 {
            build_knn(&cloud, (stencil_factor * dm_neighbor_count(n)).min(n)).unwrap()
        } else {
            knn
        };
        let intr = cloud.intrinsic.as_ref().unwrap();
        let kappa: Vec<f64> = intr.iter().map(|t| 2.0 + t[0].cos()).collect();
        let truth: Array1<f64> = intr.iter().map(|t| t[0].cos()).collect();
        let op = build_dm_operator(&cloud, &knn_wide, &kappa, eps, 2).unwrap();
        (op, kappa, truth)
    }

    #[test]
    fn semilinear_benchmark_converges() {
        // The reaction term makes F multi-root; initialize in the basin of
        // the manufactured branch and check Newton contracts onto it.
        let (op, kappa, truth) = semilinear_setup(30, 2);
        let report = solve_semilinear(&op, &kappa, Some(&truth), 1e-10, 10).unwrap();
        let err = l2_relative_error(&report.solution, &truth);
        assert!(err < 0.1, "semilinear benchmark error {err}");
        assert!(report.iterations <= 10);
        // Restarting from the converged iterate finishes immediately.
        let warm = solve_semilinear(&op, &kappa, Some(&report.solution), 1e-10, 2).unwrap();
        assert!(warm.iterations <= 1);
    }

    #[test]
    fn newton_quadratic_tail() {
        let (op, kappa, truth) = semilinear_setup(20, 2);
        // Track residuals by running with increasing iteration caps.
        let mut residuals = Vec::new();
        for cap in 0..12 {
            match solve_semilinear(&op, &kappa, Some(&truth), 1e-14, cap) {
                Ok(rep) => {
                    residuals.push(rep.residual_norm);
                    break;
                }
                Err(MolError::NonConvergence { residual, .. }) => residuals.push(residual),
                Err(e) => panic!("unexpected error: {e}"),
            }
        }
        for w in residuals.windows(2) {
            if w[0] < 1e-3 && w[0] > 1e-14 {
                assert!(
                    w[1] <= w[0].powf(1.5) + 1e-15,
                    "tail not quadratic: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn rejects_nonpositive_c() {
        let n = 100;
        let kappa = vec![1.0; n];
        let (_, op) = dm_operator(n, 2, &kappa);
        let problem = ForwardProblem {
            operator: &op,
            c: Coefficient::Scalar(0.0),
            f_values: Array1::zeros(n),
            boundary: None,
        };
        assert!(solve_linear(&problem).is_err());
    }
}
