//! Tangent-space estimation by local principal component analysis.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};

use crate::error::{MolError, Result};
use crate::geometry::{NeighborIndex, PointCloud};

/// Orthonormal tangent directions at a point and the induced projector
/// `P = sum_i t_i t_i^T`.
#[derive(Debug, Clone)]
pub struct TangentFrame {
    pub base_index: usize,
    pub vectors: Vec<[f64; 3]>,
    pub projector: Array2<f64>,
}

pub fn estimate_tangent_frame(
    cloud: &PointCloud,
    knn: &NeighborIndex,
    base: usize,
    dim: usize,
) -> Result<TangentFrame> {
    if knn.k < dim + 1 {
        return Err(MolError::Parameter(format!(
            "need at least {} neighbors for a {dim}-dimensional frame, have {}",
            dim + 1,
            knn.k
        )));
    }
    let neighbors = &knn.lists[base];
    let m = neighbors.len();
    let mut mean = [0.0f64; 3];
    for &j in neighbors {
        for a in 0..3 {
            mean[a] += cloud.points[j][a];
        }
    }
    for a in 0..3 {
        mean[a] /= m as f64;
    }
    let mut cov = Array2::<f64>::zeros((3, 3));
    for &j in neighbors {
        let mut d = [0.0f64; 3];
        for a in 0..3 {
            d[a] = cloud.points[j][a] - mean[a];
        }
        for a in 0..3 {
            for b in 0..3 {
                cov[[a, b]] += d[a] * d[b];
            }
        }
    }
    let (evals, evecs) = cov
        .eigh(UPLO::Lower)
        .map_err(|e| MolError::DegenerateStencil {
            index: base,
            reason: format!("covariance eigendecomposition failed: {e}"),
        })?;
    // Eigenvalues ascend; the top `dim` span the tangent estimate.
    let top = evals[2];
    if top <= 0.0 || evals[3 - dim] <= 1e-12 * top {
        return Err(MolError::DegenerateStencil {
            index: base,
            reason: "neighborhood is rank-deficient".into(),
        });
    }
    let mut vectors = Vec::with_capacity(dim);
    let mut projector = Array2::<f64>::zeros((3, 3));
    for idx in (3 - dim)..3 {
        let v: Array1<f64> = evecs.column(idx).to_owned();
        vectors.push([v[0], v[1], v[2]]);
        for a in 0..3 {
            for b in 0..3 {
                projector[[a, b]] += v[a] * v[b];
            }
        }
    }
    Ok(TangentFrame {
        base_index: base,
        vectors,
        projector,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_knn, sample_cloud, ManifoldKind, PointCloud};
    use approx::assert_abs_diff_eq;

    fn planar_cloud() -> PointCloud {
        let mut points = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                points.push([i as f64 * 0.1, j as f64 * 0.1, 0.0]);
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
    fn planar_neighborhood_projects_to_xy() {
        let cloud = planar_cloud();
        let knn = build_knn(&cloud, 9).unwrap();
        let frame = estimate_tangent_frame(&cloud, &knn, 12, 2).unwrap();
        let expected = ndarray::array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        for (a, b) in frame.projector.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn frame_is_orthonormal_and_projector_idempotent() {
        let cloud = sample_cloud(ManifoldKind::Torus, 600, 2.0, 1.0, 13).unwrap();
        let knn = build_knn(&cloud, 12).unwrap();
        for base in [0usize, 17, 123] {
            let frame = estimate_tangent_frame(&cloud, &knn, base, 2).unwrap();
            for (i, vi) in frame.vectors.iter().enumerate() {
                for (j, vj) in frame.vectors.iter().enumerate() {
                    let dot: f64 = vi.iter().zip(vj).map(|(a, b)| a * b).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(dot, expect, epsilon = 1e-10);
                }
            }
            let p = &frame.projector;
            let pp = p.dot(p);
            let drift = (&pp - p).iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            assert!(drift < 1e-8);
        }
    }

    #[test]
    fn torus_outer_point_annihilates_normal() {
        // Outward normal at (3, 0, 0) is e_x; the projector of a nearby
        // tangent estimate should nearly kill it.
        let n = 2500;
        let mut cloud = sample_cloud(ManifoldKind::Torus, n, 2.0, 1.0, 4).unwrap();
        cloud.points[0] = [3.0, 0.0, 0.0];
        cloud.intrinsic.as_mut().unwrap()[0] = [0.0, 0.0];
        let knn = build_knn(&cloud, 12).unwrap();
        let frame = estimate_tangent_frame(&cloud, &knn, 0, 2).unwrap();
        let normal = ndarray::array![1.0, 0.0, 0.0];
        let pn = frame.projector.dot(&normal);
        let norm = pn.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 0.1, "projected normal magnitude {norm}");
    }

    #[test]
    fn collinear_points_rejected() {
        let points = (0..6).map(|i| [i as f64, 0.0, 0.0]).collect();
        let cloud = PointCloud {
            points,
            intrinsic: None,
            manifold_kind: ManifoldKind::Custom,
            major_radius: 2.0,
            minor_radius: 1.0,
            seed: 0,
        };
        let knn = build_knn(&cloud, 4).unwrap();
        assert!(estimate_tangent_frame(&cloud, &knn, 0, 2).is_err());
    }
}
