//! Diffusion Maps estimator `L = D - W` with a kappa-weighted Gaussian
//! kernel truncated to symmetrized kNN stencils.

use crate::error::{MolError, Result};
use crate::geometry::{squared_distance, NeighborIndex, PointCloud};
use crate::sparse::CsrMatrix;

use super::{kappa_hash, DiscreteOperator, EstimatorKind, EstimatorParams, OperatorMatrix};

fn kernel(s: f64, dim: usize) -> f64 {
    (-s / 4.0).exp() / (4.0 * std::f64::consts::PI).powf(dim as f64 / 2.0)
}

pub fn build_dm_operator(
    cloud: &PointCloud,
    knn: &NeighborIndex,
    kappa_at_points: &[f64],
    epsilon: f64,
    dim: usize,
) -> Result<DiscreteOperator> {
    let n = cloud.len();
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
    if !(epsilon > 0.0) {
        return Err(MolError::Parameter(format!("bandwidth {epsilon} <= 0")));
    }

    // Symmetrized stencils: keep (i, j) if j in knn(i) or i in knn(j).
    let mut stencils: Vec<Vec<usize>> = knn.lists.iter().cloned().collect();
    for (i, list) in knn.lists.iter().enumerate() {
        for &j in list {
            if j != i && !knn.lists[j].contains(&i) {
                stencils[j].push(i);
            }
        }
    }
    for s in &mut stencils {
        s.sort_unstable();
    }

    let inv_n = 1.0 / n as f64;
    let density_scale = epsilon.powf(-(dim as f64) / 2.0) * inv_n;
    let weight_scale = epsilon.powf(-(dim as f64) / 2.0 - 1.0) * inv_n;

    let mut density = vec![0.0; n];
    for i in 0..n {
        let mut q = 0.0;
        for &j in &stencils[i] {
            q += kernel(
                squared_distance(&cloud.points[i], &cloud.points[j]) / epsilon,
                dim,
            );
        }
        density[i] = density_scale * q;
        if density[i] == 0.0 {
            return Err(MolError::DegenerateCloud(format!(
                "density estimate vanished at point {i}; bandwidth too small"
            )));
        }
    }

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(stencils[i].len());
        let mut degree = 0.0;
        for &j in &stencils[i] {
            let w = weight_scale
                * kernel(
                    squared_distance(&cloud.points[i], &cloud.points[j]) / epsilon,
                    dim,
                )
                * (kappa_at_points[i] * kappa_at_points[j]).sqrt()
                / density[j];
            degree += w;
            row.push((j, -w));
        }
        // L = D - W: add the degree on the diagonal. The self weight W_ii is
        // already present in `row`, so the row sums cancel exactly.
        let diag = row.iter_mut().find(|(c, _)| *c == i).unwrap();
        diag.1 += degree;
        rows.push(row);
    }

    Ok(DiscreteOperator {
        matrix: OperatorMatrix::Sparse(CsrMatrix::from_rows(n, rows)),
        estimator: EstimatorKind::Dm,
        params: EstimatorParams::Dm { epsilon, dim },
        kappa_hash: kappa_hash(kappa_at_points),
    })
}
