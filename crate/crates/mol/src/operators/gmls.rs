//! Generalized moving least squares estimator: local polynomial fits in
//! tangent coordinates give finite-difference stencil weights, optionally
//! stabilized through a small linear program.

use ndarray::{Array1, Array2};
use ndarray_linalg::Inverse;

use crate::error::{MolError, Result};
use crate::geometry::{NeighborIndex, PointCloud};
use crate::sparse::CsrMatrix;

use super::simplex::{solve_lp, LpOutcome};
use super::tangent::estimate_tangent_frame;
use super::{kappa_hash, DiscreteOperator, EstimatorKind, EstimatorParams, OperatorMatrix};

/// Dimension of the degree `<= p` polynomial space in `d` variables.
pub fn gmls_basis_dim(degree_p: usize, d: usize) -> usize {
    // C(p + d, d)
    let mut num = 1usize;
    let mut den = 1usize;
    for i in 1..=d {
        num *= degree_p + i;
        den *= i;
    }
    num / den
}

#[derive(Debug, Clone)]
pub struct GmlsOptions {
    pub stencil: usize,
    pub degree: usize,
    pub stabilize: bool,
    pub frame_neighbors: usize,
}

impl Default for GmlsOptions {
    fn default() -> Self {
        let degree = 2;
        let m = gmls_basis_dim(degree, 2);
        GmlsOptions {
            stencil: 3 * m,
            degree,
            stabilize: true,
            frame_neighbors: 12,
        }
    }
}

/// Multi-indices `(a, b)` with `a + b <= p`, graded ordering.
fn multi_indices(degree_p: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for total in 0..=degree_p {
        for a in (0..=total).rev() {
            out.push((a, total - a));
        }
    }
    out
}

fn powi(base: f64, exp: usize) -> f64 {
    let mut v = 1.0;
    for _ in 0..exp {
        v *= base;
    }
    v
}

#[derive(Debug, Clone)]
pub struct StabilizeResult {
    pub weights: Vec<f64>,
    /// False when the LP was infeasible and the input passed through.
    pub stabilized: bool,
    pub c_value: f64,
}

/// Adjust stencil weights to make all off-center entries at least `-C` with
/// the smallest possible `C`, while preserving every polynomial moment of the
/// original row. `vandermonde` is the K x m matrix of basis values on the
/// stencil, first row corresponding to the base point.
pub fn stabilize_row(weights: &[f64], vandermonde: &Array2<f64>) -> StabilizeResult {
    let k = weights.len();
    assert_eq!(vandermonde.nrows(), k);
    let m = vandermonde.ncols();
    if k < 2 {
        return StabilizeResult {
            weights: weights.to_vec(),
            stabilized: false,
            c_value: 0.0,
        };
    }
    let min_off = weights[1..].iter().cloned().fold(f64::INFINITY, f64::min);
    if min_off >= 0.0 && weights[0] <= 0.0 {
        return StabilizeResult {
            weights: weights.to_vec(),
            stabilized: true,
            c_value: 0.0,
        };
    }
    let upper = min_off.abs();

    // Variables, all nonnegative:
    //   z = -w_hat_1, y_k = w_hat_k + C (k = 2..K), C, slack s for C <= upper.
    let nvars = k + 2;
    let idx_z = 0;
    let idx_y = |k_off: usize| k_off; // k_off in 1..k
    let idx_c = k;
    let idx_s = k + 1;

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut rhs: Vec<f64> = Vec::with_capacity(m + 1);
    for j in 0..m {
        let mut row = vec![0.0; nvars];
        row[idx_z] = -vandermonde[[0, j]];
        let mut c_coeff = 0.0;
        for k_off in 1..k {
            row[idx_y(k_off)] = vandermonde[[k_off, j]];
            c_coeff -= vandermonde[[k_off, j]];
        }
        row[idx_c] = c_coeff;
        rows.push(row);
        let moment: f64 = (0..k).map(|i| weights[i] * vandermonde[[i, j]]).sum();
        rhs.push(moment);
    }
    let mut cap = vec![0.0; nvars];
    cap[idx_c] = 1.0;
    cap[idx_s] = 1.0;
    rows.push(cap);
    rhs.push(upper);

    let mut cost = vec![0.0; nvars];
    cost[idx_c] = 1.0;

    let sol = solve_lp(&rows, &rhs, &cost);
    if sol.outcome != LpOutcome::Optimal {
        return StabilizeResult {
            weights: weights.to_vec(),
            stabilized: false,
            c_value: 0.0,
        };
    }
    let c_value = sol.x[idx_c];
    let mut out = vec![0.0; k];
    out[0] = -sol.x[idx_z];
    for k_off in 1..k {
        out[k_off] = sol.x[idx_y(k_off)] - c_value;
    }
    StabilizeResult {
        weights: out,
        stabilized: true,
        c_value,
    }
}

struct LocalFit {
    stencil: Vec<usize>,
    vandermonde: Array2<f64>,
    /// Row 1 of each ambient-direction differential matrix G_l.
    g_rows: [Array1<f64>; 3],
    /// Full K x K differential matrices.
    g_full: [Array2<f64>; 3],
}

fn local_fit(
    cloud: &PointCloud,
    knn: &NeighborIndex,
    projectors: &[Array2<f64>],
    tangents: &[[[f64; 3]; 2]],
    base: usize,
    k_stencil: usize,
    degree_p: usize,
) -> Result<LocalFit> {
    let stencil: Vec<usize> = knn.lists[base][..k_stencil].to_vec();
    let alphas = multi_indices(degree_p);
    let m = alphas.len();
    let x0 = &cloud.points[base];
    let t = &tangents[base];

    // Tangent coordinates of each stencil point relative to the base.
    let mut z = vec![[0.0f64; 2]; k_stencil];
    for (row, &j) in z.iter_mut().zip(&stencil) {
        let p = &cloud.points[j];
        let d = [p[0] - x0[0], p[1] - x0[1], p[2] - x0[2]];
        row[0] = t[0][0] * d[0] + t[0][1] * d[1] + t[0][2] * d[2];
        row[1] = t[1][0] * d[0] + t[1][1] * d[1] + t[1][2] * d[2];
    }

    let mut phi = Array2::<f64>::zeros((k_stencil, m));
    for (ki, zi) in z.iter().enumerate() {
        for (j, &(a, b)) in alphas.iter().enumerate() {
            phi[[ki, j]] = powi(zi[0], a) * powi(zi[1], b);
        }
    }

    let ata = phi.t().dot(&phi);
    let ata_inv = ata.inv().map_err(|_| MolError::DegenerateStencil {
        index: base,
        reason: "normal equations are singular".into(),
    })?;
    let pinv_part = ata_inv.dot(&phi.t()); // m x K

    // B_l[i][j] = projected ambient gradient of basis j at stencil point i.
    let mut g_full: [Array2<f64>; 3] = std::array::from_fn(|_| Array2::zeros((k_stencil, k_stencil)));
    let mut g_rows: [Array1<f64>; 3] = std::array::from_fn(|_| Array1::zeros(k_stencil));
    for l in 0..3 {
        let mut b = Array2::<f64>::zeros((k_stencil, m));
        for (ki, (&si, zi)) in stencil.iter().zip(&z).enumerate() {
            let pl = projectors[si].row(l);
            // Projected tangent directions: P^l . t_i.
            let pt = [
                pl[0] * t[0][0] + pl[1] * t[0][1] + pl[2] * t[0][2],
                pl[0] * t[1][0] + pl[1] * t[1][1] + pl[2] * t[1][2],
            ];
            for (j, &(a, bidx)) in alphas.iter().enumerate() {
                let mut g = 0.0;
                if a > 0 {
                    g += a as f64 * powi(zi[0], a - 1) * powi(zi[1], bidx) * pt[0];
                }
                if bidx > 0 {
                    g += bidx as f64 * powi(zi[0], a) * powi(zi[1], bidx - 1) * pt[1];
                }
                b[[ki, j]] = g;
            }
        }
        g_full[l] = b.dot(&pinv_part);
        g_rows[l] = g_full[l].row(0).to_owned();
    }

    Ok(LocalFit {
        stencil,
        vandermonde: phi,
        g_rows,
        g_full,
    })
}

pub fn build_gmls_operator(
    cloud: &PointCloud,
    knn: &NeighborIndex,
    kappa_at_points: &[f64],
    k_stencil: usize,
    degree_p: usize,
) -> Result<DiscreteOperator> {
    build_gmls_operator_with(
        cloud,
        knn,
        kappa_at_points,
        &GmlsOptions {
            stencil: k_stencil,
            degree: degree_p,
            ..Default::default()
        },
    )
}

pub fn build_gmls_operator_with(
    cloud: &PointCloud,
    knn: &NeighborIndex,
    kappa_at_points: &[f64],
    opts: &GmlsOptions,
) -> Result<DiscreteOperator> {
    let n = cloud.len();
    let k_stencil = opts.stencil;
    let degree_p = opts.degree;
    if kappa_at_points.len() != n {
        return Err(MolError::Shape(format!(
            "kappa has {} values for {} points",
            kappa_at_points.len(),
            n
        )));
    }
    if let Some((i, &bad)) = kappa_at_points
        .iter()
        .enumerate()
        .find(|&(_, &v)| !(v > 0.0))
    {
        return Err(MolError::Parameter(format!(
            "kappa must be positive everywhere; kappa[{i}] = {bad}"
        )));
    }
    if degree_p < 2 {
        return Err(MolError::Parameter(format!(
            "GMLS degree {degree_p} < 2"
        )));
    }
    let m = gmls_basis_dim(degree_p, 2);
    if k_stencil <= m {
        return Err(MolError::Parameter(format!(
            "stencil size {k_stencil} must exceed basis dimension {m}"
        )));
    }
    if knn.k < k_stencil {
        return Err(MolError::Parameter(format!(
            "kNN index has {} neighbors per point, stencil needs {k_stencil}",
            knn.k
        )));
    }

    let frame_k = opts.frame_neighbors.clamp(3, n);
    let frame_knn;
    let frame_source = if knn.k >= frame_k {
        knn
    } else {
        frame_knn = crate::geometry::build_knn(cloud, frame_k)?;
        &frame_knn
    };
    let mut projectors = Vec::with_capacity(n);
    let mut tangents = Vec::with_capacity(n);
    for i in 0..n {
        let frame = estimate_tangent_frame(cloud, frame_source, i, 2)?;
        tangents.push([frame.vectors[0], frame.vectors[1]]);
        projectors.push(frame.projector);
    }

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for i in 0..n {
        let fit = local_fit(cloud, knn, &projectors, &tangents, i, k_stencil, degree_p)?;
        let mut lap_row = Array1::<f64>::zeros(k_stencil);
        for l in 0..3 {
            lap_row = lap_row + fit.g_rows[l].dot(&fit.g_full[l]);
        }
        let lap_weights: Vec<f64> = if opts.stabilize {
            stabilize_row(lap_row.as_slice().unwrap(), &fit.vandermonde).weights
        } else {
            lap_row.to_vec()
        };

        let kappa_st: Array1<f64> = fit.stencil.iter().map(|&j| kappa_at_points[j]).collect();
        let mut vals = vec![0.0f64; k_stencil];
        for l in 0..3 {
            let grad_kappa = fit.g_rows[l].dot(&kappa_st);
            for (v, &g) in vals.iter_mut().zip(fit.g_rows[l].iter()) {
                *v -= grad_kappa * g;
            }
        }
        for (v, &w) in vals.iter_mut().zip(&lap_weights) {
            *v -= kappa_at_points[i] * w;
        }
        rows.push(fit.stencil.iter().cloned().zip(vals).collect());
    }

    Ok(DiscreteOperator {
        matrix: OperatorMatrix::Sparse(CsrMatrix::from_rows(n, rows)),
        estimator: EstimatorKind::Gmls,
        params: EstimatorParams::Gmls {
            stencil: k_stencil,
            degree: degree_p,
        },
        kappa_hash: kappa_hash(kappa_at_points),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_knn, sample_cloud, ManifoldKind, PointCloud};
    use ndarray::Array1;

    fn planar_cloud(n_side: usize) -> PointCloud {
        let mut points = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                // Slight shear so the grid is not axis-degenerate.
                let x = i as f64 * 0.1 + j as f64 * 0.013;
                let y = j as f64 * 0.1;
                points.push([x, y, 0.0]);
            }
        }
        PointCloud {
            points,
            intrinsic: None,
            manifold_kind: ManifoldKind::Custom,
            major_radius: 2.0,
            minor_radius: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn basis_dim_matches_binomial() {
        assert_eq!(gmls_basis_dim(2, 2), 6);
        assert_eq!(gmls_basis_dim(3, 2), 10);
        assert_eq!(gmls_basis_dim(2, 1), 3);
    }

    #[test]
    fn planar_polynomial_reproduction() {
        // On a flat cloud the tangent coordinates are (up to rotation) the xy
        // coordinates, and the Laplacian row must reproduce the flat
        // Laplacian of any quadratic exactly.
        let cloud = planar_cloud(9);
        let n = cloud.len();
        let knn = build_knn(&cloud, 18).unwrap();
        let kappa = vec![1.0; n];
        let op = build_gmls_operator(&cloud, &knn, &kappa, 18, 2).unwrap();
        let center = n / 2;
        // f = x^2 + y^2 has flat Laplacian 4 (kappa = 1 gives L f = -4).
        let f: Array1<f64> = cloud
            .points
            .iter()
            .map(|p| p[0] * p[0] + p[1] * p[1])
            .collect();
        let lf = op.apply(&f);
        assert!(
            (lf[center] + 4.0).abs() < 1e-8,
            "L(x^2+y^2) at interior point = {}, want -4",
            lf[center]
        );
        // Linear functions are harmonic.
        let g: Array1<f64> = cloud.points.iter().map(|p| 3.0 * p[0] - p[1]).collect();
        let lg = op.apply(&g);
        assert!(lg[center].abs() < 1e-8, "L(linear) = {}", lg[center]);
    }

    #[test]
    fn annihilates_constants() {
        let n = 400;
        let cloud = sample_cloud(ManifoldKind::Torus, n, 2.0, 1.0, 19).unwrap();
        let knn = build_knn(&cloud, 18).unwrap();
        let kappa: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * (i as f64 * 0.03).sin()).collect();
        let op = build_gmls_operator(&cloud, &knn, &kappa, 18, 2).unwrap();
        let ones = Array1::ones(n);
        let out = op.apply(&ones);
        for v in out.iter() {
            assert!(v.abs() < 1e-10, "constant residual {v}");
        }
    }

    #[test]
    fn linear_in_kappa() {
        let n = 200;
        let cloud = sample_cloud(ManifoldKind::Torus, n, 2.0, 1.0, 7).unwrap();
        let knn = build_knn(&cloud, 18).unwrap();
        let kappa: Vec<f64> = (0..n).map(|i| 2.0 + (i as f64 * 0.11).cos()).collect();
        let doubled: Vec<f64> = kappa.iter().map(|v| 2.0 * v).collect();
        let a = build_gmls_operator(&cloud, &knn, &kappa, 18, 2).unwrap();
        let b = build_gmls_operator(&cloud, &knn, &doubled, 18, 2).unwrap();
        let (da, db) = (a.to_dense(), b.to_dense());
        let scale = da.iter().fold(1e-30f64, |acc, &v| acc.max(v.abs()));
        for (x, y) in da.iter().zip(db.iter()) {
            assert!((2.0 * x - y).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn rejects_small_stencil() {
        let cloud = sample_cloud(ManifoldKind::Torus, 100, 2.0, 1.0, 7).unwrap();
        let knn = build_knn(&cloud, 18).unwrap();
        let kappa = vec![1.0; 100];
        assert!(build_gmls_operator(&cloud, &knn, &kappa, 6, 2).is_err());
        assert!(build_gmls_operator(&cloud, &knn, &kappa, 18, 1).is_err());
    }

    #[test]
    fn stabilize_passthrough_when_signs_ok() {
        // Classic 1-D second-difference stencil, already sign-correct after
        // negation convention (center positive weights negated): take
        // w = [-2, 1, 1] with basis {1, z, z^2} on z = {0, -1, 1}.
        let w = vec![-2.0, 1.0, 1.0];
        let phi = ndarray::array![[1.0, 0.0, 0.0], [1.0, -1.0, 1.0], [1.0, 1.0, 1.0]];
        let res = stabilize_row(&w, &phi);
        assert!(res.stabilized);
        assert_eq!(res.weights, w);
        assert_eq!(res.c_value, 0.0);
    }

    #[test]
    fn stabilize_preserves_moments() {
        // A row with a negative off-center weight forces a nontrivial LP.
        let w = vec![-1.0, 1.5, -0.5];
        let phi = ndarray::array![[1.0, 0.0], [1.0, -1.0], [1.0, 1.0]];
        let res = stabilize_row(&w, &phi);
        assert!(res.stabilized);
        for j in 0..2 {
            let before: f64 = (0..3).map(|i| w[i] * phi[[i, j]]).sum();
            let after: f64 = (0..3).map(|i| res.weights[i] * phi[[i, j]]).sum();
            assert!((before - after).abs() < 1e-8, "moment {j}: {before} vs {after}");
        }
        assert!(res.weights[0] <= 0.0);
        let min_off = res.weights[1..].iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_off >= -res.c_value - 1e-8);
        assert!(res.c_value <= 0.5 + 1e-8);
    }

    #[test]
    fn stabilize_matches_brute_force_vertices() {
        // Enumerate LP vertices directly for the 3-point stencil: two moment
        // equalities leave two degrees of freedom, so vertices come from
        // activating pairs of inequality constraints.
        let w = vec![-1.0, 1.5, -0.5];
        let phi = ndarray::array![[1.0, 0.0], [1.0, -1.0], [1.0, 1.0]];
        let m0: f64 = (0..3).map(|i| w[i] * phi[[i, 0]]).sum();
        let m1: f64 = (0..3).map(|i| w[i] * phi[[i, 1]]).sum();
        let upper = 0.5;
        // Unknowns (w1, w2, w3, c). Inequality constraints as (row, rhs) for
        // row . x = rhs when active.
        let ineqs: Vec<(Vec<f64>, f64)> = vec![
            (vec![1.0, 0.0, 0.0, 0.0], 0.0),   // w1 = 0
            (vec![0.0, 1.0, 0.0, 1.0], 0.0),   // w2 + c = 0
            (vec![0.0, 0.0, 1.0, 1.0], 0.0),   // w3 + c = 0
            (vec![0.0, 0.0, 0.0, 1.0], 0.0),   // c = 0
            (vec![0.0, 0.0, 0.0, 1.0], upper), // c = upper
        ];
        let mut best_c = f64::INFINITY;
        for a in 0..ineqs.len() {
            for b in (a + 1)..ineqs.len() {
                let mat = ndarray::array![
                    [phi[[0, 0]], phi[[1, 0]], phi[[2, 0]], 0.0],
                    [phi[[0, 1]], phi[[1, 1]], phi[[2, 1]], 0.0],
                    [ineqs[a].0[0], ineqs[a].0[1], ineqs[a].0[2], ineqs[a].0[3]],
                    [ineqs[b].0[0], ineqs[b].0[1], ineqs[b].0[2], ineqs[b].0[3]],
                ];
                let rhs = ndarray::array![m0, m1, ineqs[a].1, ineqs[b].1];
                use ndarray_linalg::Solve;
                if let Ok(x) = mat.solve(&rhs) {
                    let (w1, w2, w3, c) = (x[0], x[1], x[2], x[3]);
                    let tol = 1e-9;
                    let feasible = w1 <= tol
                        && w2 + c >= -tol
                        && w3 + c >= -tol
                        && c >= -tol
                        && c <= upper + tol;
                    if feasible && c < best_c {
                        best_c = c;
                    }
                }
            }
        }
        let res = stabilize_row(&w, &phi);
        assert!(res.stabilized);
        assert!(
            (res.c_value - best_c).abs() < 1e-7,
            "LP C {} vs brute force {}",
            res.c_value,
            best_c
        );
    }
}
