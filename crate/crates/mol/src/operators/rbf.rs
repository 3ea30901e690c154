//! Global RBF projection estimator with the inverse-quadratic kernel.
//!
//! The interpolation matrix is inverted through a truncated eigendecomposition
//! (the symmetric analogue of a tolerance pseudo-inverse), and surface
//! derivatives come from differentiating the interpolant through per-point
//! tangent projectors.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};

use crate::error::{MolError, Result};
use crate::geometry::{build_knn, NeighborIndex, PointCloud};

use super::{
    estimate_tangent_frame, kappa_hash, DiscreteOperator, EstimatorKind, EstimatorParams,
    OperatorMatrix,
};

#[derive(Debug, Clone)]
pub struct RbfOptions {
    pub shape: f64,
    pub pinv_tol: f64,
    /// Hard cap on the dense assembly size.
    pub dense_cap: usize,
    /// Neighbors used for the per-point tangent-frame estimate.
    pub frame_neighbors: usize,
}

impl Default for RbfOptions {
    fn default() -> Self {
        RbfOptions {
            shape: 1.0,
            pinv_tol: 1e-6,
            dense_cap: 3000,
            frame_neighbors: 12,
        }
    }
}

/// Inverse quadratic kernel `1 / (1 + (s t)^2)`.
pub fn inverse_quadratic(shape: f64, t: f64) -> f64 {
    let st = shape * t;
    1.0 / (1.0 + st * st)
}

/// Default shape parameter: keeps `s * t` order one on the stencil scale.
pub fn default_rbf_shape(knn: &NeighborIndex) -> f64 {
    let mut nn: Vec<f64> = knn
        .distances
        .iter()
        .filter(|d| d.len() > 1)
        .map(|d| d[1].sqrt())
        .collect();
    nn.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = nn[nn.len() / 2];
    1.0 / (2.0 * median)
}

/// Precomputed pieces of the RBF estimator for one cloud: tangent projectors
/// and the eigendecomposition of the interpolation matrix. Supports both a
/// full dense assembly and a matrix-free application.
pub struct RbfAssembly {
    points: Vec<[f64; 3]>,
    projectors: Vec<Array2<f64>>,
    eigvals: Array1<f64>,
    eigvecs: Array2<f64>,
    pub shape: f64,
    pub pinv_tol: f64,
}

impl RbfAssembly {
    pub fn new(cloud: &PointCloud, opts: &RbfOptions) -> Result<Self> {
        let n = cloud.len();
        if n > opts.dense_cap {
            return Err(MolError::Parameter(format!(
                "cloud size {n} exceeds the dense RBF cap {}",
                opts.dense_cap
            )));
        }
        if !(opts.shape > 0.0) {
            return Err(MolError::Parameter(format!(
                "shape parameter {} must be positive",
                opts.shape
            )));
        }
        let k = opts.frame_neighbors.clamp(3, n);
        let knn = build_knn(cloud, k)?;
        let mut projectors = Vec::with_capacity(n);
        for i in 0..n {
            projectors.push(estimate_tangent_frame(cloud, &knn, i, 2)?.projector);
        }
        let mut phi = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let d = crate::geometry::squared_distance(&cloud.points[i], &cloud.points[j]).sqrt();
                phi[[i, j]] = inverse_quadratic(opts.shape, d);
            }
        }
        let (eigvals, eigvecs) = phi
            .eigh(UPLO::Lower)
            .map_err(|e| MolError::Conditioning(format!("eigendecomposition failed: {e}")))?;
        if !eigvals.iter().any(|&l| l.abs() > opts.pinv_tol) {
            return Err(MolError::Conditioning(
                "interpolation matrix is numerically rank zero at the given tolerance".into(),
            ));
        }
        Ok(RbfAssembly {
            points: cloud.points.clone(),
            projectors,
            eigvals,
            eigvecs,
            shape: opts.shape,
            pinv_tol: opts.pinv_tol,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Apply the tolerance pseudo-inverse of the interpolation matrix.
    pub fn pinv_apply(&self, f: &Array1<f64>) -> Array1<f64> {
        let mut coeffs = self.eigvecs.t().dot(f);
        for (c, &l) in coeffs.iter_mut().zip(self.eigvals.iter()) {
            if l.abs() > self.pinv_tol {
                *c /= l;
            } else {
                *c = 0.0;
            }
        }
        self.eigvecs.dot(&coeffs)
    }

    /// Reconstruct interpolated node values `Phi Phi^+ f`.
    pub fn interpolate_at_nodes(&self, f: &Array1<f64>) -> Array1<f64> {
        let mut coeffs = self.eigvecs.t().dot(f);
        for (c, &l) in coeffs.iter_mut().zip(self.eigvals.iter()) {
            if l.abs() <= self.pinv_tol {
                *c = 0.0;
            }
        }
        self.eigvecs.dot(&coeffs)
    }

    /// Ambient gradient of `phi_s(|x - x_j|)` at `x = x_i`, projected onto
    /// the tangent space at `x_i`.
    fn projected_kernel_gradient(&self, i: usize, j: usize) -> [f64; 3] {
        let xi = &self.points[i];
        let xj = &self.points[j];
        let d2 = crate::geometry::squared_distance(xi, xj);
        let s2 = self.shape * self.shape;
        let denom = 1.0 + s2 * d2;
        let scale = -2.0 * s2 / (denom * denom);
        let g = [
            scale * (xi[0] - xj[0]),
            scale * (xi[1] - xj[1]),
            scale * (xi[2] - xj[2]),
        ];
        let p = &self.projectors[i];
        let mut out = [0.0; 3];
        for l in 0..3 {
            out[l] = p[[l, 0]] * g[0] + p[[l, 1]] * g[1] + p[[l, 2]] * g[2];
        }
        out
    }

    /// Matrix-free `L^RBF u = -sum_l G_l diag(kappa) G_l u`. Algebraically
    /// identical to applying the assembled matrix, at O(N^2) per call.
    pub fn apply(&self, kappa: &[f64], u: &Array1<f64>) -> Array1<f64> {
        let n = self.len();
        assert_eq!(kappa.len(), n);
        assert_eq!(u.len(), n);
        let y = self.pinv_apply(u);
        let mut grads = vec![Array1::<f64>::zeros(n); 3];
        for i in 0..n {
            let mut acc = [0.0f64; 3];
            for j in 0..n {
                let b = self.projected_kernel_gradient(i, j);
                acc[0] += b[0] * y[j];
                acc[1] += b[1] * y[j];
                acc[2] += b[2] * y[j];
            }
            for l in 0..3 {
                grads[l][i] = acc[l];
            }
        }
        let w: Vec<Array1<f64>> = (0..3)
            .map(|l| {
                let scaled: Array1<f64> = (0..n).map(|i| kappa[i] * grads[l][i]).collect();
                self.pinv_apply(&scaled)
            })
            .collect();
        let mut out = Array1::<f64>::zeros(n);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                let b = self.projected_kernel_gradient(i, j);
                acc += b[0] * w[0][j] + b[1] * w[1][j] + b[2] * w[2][j];
            }
            out[i] = -acc;
        }
        out
    }

    /// Dense pseudo-inverse `V Lambda^+ V^T`.
    fn pinv_matrix(&self) -> Array2<f64> {
        let n = self.len();
        let mut scaled = Array2::<f64>::zeros((n, n));
        for (j, &l) in self.eigvals.iter().enumerate() {
            if l.abs() > self.pinv_tol {
                let inv = 1.0 / l;
                for i in 0..n {
                    scaled[[i, j]] = self.eigvecs[[i, j]] * inv;
                }
            }
        }
        scaled.dot(&self.eigvecs.t())
    }

    /// Assemble the full dense operator for a given kappa sample.
    pub fn assemble(&self, kappa: &[f64]) -> Array2<f64> {
        let n = self.len();
        assert_eq!(kappa.len(), n);
        let pinv = self.pinv_matrix();
        let mut total = Array2::<f64>::zeros((n, n));
        let mut b = Array2::<f64>::zeros((n, n));
        for l in 0..3 {
            for i in 0..n {
                for j in 0..n {
                    b[[i, j]] = self.projected_kernel_gradient(i, j)[l];
                }
            }
            let g = b.dot(&pinv);
            let mut kg = g.clone();
            for (mut row, &kv) in kg.rows_mut().into_iter().zip(kappa.iter()) {
                // diag(kappa) G: scale row i of G by kappa_i before the
                // outer G multiplication.
                row.mapv_inplace(|v| v * kv);
            }
            total = total - g.dot(&kg);
        }
        total
    }
}

pub fn build_rbf_operator(
    cloud: &PointCloud,
    kappa_at_points: &[f64],
    shape_s: f64,
    pinv_tol: f64,
) -> Result<DiscreteOperator> {
    build_rbf_operator_with(
        cloud,
        kappa_at_points,
        &RbfOptions {
            shape: shape_s,
            pinv_tol,
            ..Default::default()
        },
    )
}

pub fn build_rbf_operator_with(
    cloud: &PointCloud,
    kappa_at_points: &[f64],
    opts: &RbfOptions,
) -> Result<DiscreteOperator> {
    if kappa_at_points.len() != cloud.len() {
        return Err(MolError::Shape(format!(
            "kappa has {} values for {} points",
            kappa_at_points.len(),
            cloud.len()
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
    let assembly = RbfAssembly::new(cloud, opts)?;
    let matrix = assembly.assemble(kappa_at_points);
    Ok(DiscreteOperator {
        matrix: OperatorMatrix::Dense(matrix),
        estimator: EstimatorKind::Rbf,
        params: EstimatorParams::Rbf {
            shape: opts.shape,
            pinv_tol: opts.pinv_tol,
        },
        kappa_hash: kappa_hash(kappa_at_points),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_cloud, ManifoldKind};
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_at_zero_distance_is_one() {
        for s in [0.1, 1.0, 25.0] {
            assert_eq!(inverse_quadratic(s, 0.0), 1.0);
        }
    }

    #[test]
    fn interpolation_identity_on_well_separated_nodes() {
        let cloud = sample_cloud(ManifoldKind::Torus, 120, 2.0, 1.0, 31).unwrap();
        let knn = build_knn(&cloud, 8).unwrap();
        let opts = RbfOptions {
            shape: default_rbf_shape(&knn),
            ..Default::default()
        };
        let assembly = RbfAssembly::new(&cloud, &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f: Array1<f64> = (0..120).map(|_| rng.random::<f64>() - 0.5).collect();
        let back = assembly.interpolate_at_nodes(&f);
        let err = (&back - &f).iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(err < 1e-6, "interpolation residual {err}");
    }

    #[test]
    fn apply_matches_assembled_matrix() {
        let cloud = sample_cloud(ManifoldKind::Torus, 80, 2.0, 1.0, 9).unwrap();
        let knn = build_knn(&cloud, 8).unwrap();
        let opts = RbfOptions {
            shape: default_rbf_shape(&knn),
            ..Default::default()
        };
        let assembly = RbfAssembly::new(&cloud, &opts).unwrap();
        let kappa: Vec<f64> = (0..80).map(|i| 1.5 + 0.5 * (i as f64 * 0.2).sin()).collect();
        let u: Array1<f64> = (0..80).map(|i| (i as f64 * 0.37).cos()).collect();
        let via_matrix = assembly.assemble(&kappa).dot(&u);
        let via_apply = assembly.apply(&kappa, &u);
        let scale = via_matrix.iter().fold(1e-30f64, |a, &b| a.max(b.abs()));
        for (a, b) in via_matrix.iter().zip(via_apply.iter()) {
            assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_in_kappa() {
        let cloud = sample_cloud(ManifoldKind::Torus, 60, 2.0, 1.0, 2).unwrap();
        let knn = build_knn(&cloud, 8).unwrap();
        let shape = default_rbf_shape(&knn);
        let kappa: Vec<f64> = (0..60).map(|i| 2.0 + (i as f64 * 0.1).cos()).collect();
        let doubled: Vec<f64> = kappa.iter().map(|v| 2.0 * v).collect();
        let a = build_rbf_operator(&cloud, &kappa, shape, 1e-6).unwrap();
        let b = build_rbf_operator(&cloud, &doubled, shape, 1e-6).unwrap();
        let (da, db) = (a.to_dense(), b.to_dense());
        let scale = da.iter().fold(1e-30f64, |acc, &v| acc.max(v.abs()));
        for (x, y) in da.iter().zip(db.iter()) {
            assert!((2.0 * x - y).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn rejects_oversized_cloud() {
        let cloud = sample_cloud(ManifoldKind::Torus, 30, 2.0, 1.0, 2).unwrap();
        let opts = RbfOptions {
            dense_cap: 10,
            ..Default::default()
        };
        assert!(RbfAssembly::new(&cloud, &opts).is_err());
    }
}
