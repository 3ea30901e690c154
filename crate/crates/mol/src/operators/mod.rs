//! Discrete approximations of `-div_g(kappa grad_g .)` on a point cloud.

mod bandwidth;
mod dm;
mod gmls;
mod rbf;
pub mod simplex;
mod tangent;

pub use bandwidth::{default_epsilon_grid, tune_epsilon, BandwidthReport};
pub use dm::build_dm_operator;
pub use gmls::{
    build_gmls_operator, build_gmls_operator_with, gmls_basis_dim, stabilize_row, GmlsOptions,
    StabilizeResult,
};
pub use rbf::{
    build_rbf_operator, build_rbf_operator_with, default_rbf_shape, inverse_quadratic, RbfAssembly,
    RbfOptions,
};
pub use tangent::{estimate_tangent_frame, TangentFrame};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorKind {
    Dm,
    Rbf,
    Gmls,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorKind::Dm => write!(f, "dm"),
            EstimatorKind::Rbf => write!(f, "rbf"),
            EstimatorKind::Gmls => write!(f, "gmls"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorParams {
    Dm { epsilon: f64, dim: usize },
    Rbf { shape: f64, pinv_tol: f64 },
    Gmls { stencil: usize, degree: usize },
}

#[derive(Debug, Clone)]
pub enum OperatorMatrix {
    Sparse(CsrMatrix),
    Dense(Array2<f64>),
}

/// An assembled N x N estimator of `L^kappa`, tagged with its provenance.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub matrix: OperatorMatrix,
    pub estimator: EstimatorKind,
    pub params: EstimatorParams,
    pub kappa_hash: String,
}

impl DiscreteOperator {
    pub fn size(&self) -> usize {
        match &self.matrix {
            OperatorMatrix::Sparse(m) => m.nrows,
            OperatorMatrix::Dense(m) => m.nrows(),
        }
    }

    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        match &self.matrix {
            OperatorMatrix::Sparse(m) => m.matvec(x),
            OperatorMatrix::Dense(m) => m.dot(x),
        }
    }

    pub fn apply_transpose(&self, x: &Array1<f64>) -> Array1<f64> {
        match &self.matrix {
            OperatorMatrix::Sparse(m) => m.matvec_transpose(x),
            OperatorMatrix::Dense(m) => m.t().dot(x),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match &self.matrix {
            OperatorMatrix::Sparse(m) => m.to_dense(),
            OperatorMatrix::Dense(m) => m.clone(),
        }
    }

    pub fn row_sums(&self) -> Array1<f64> {
        match &self.matrix {
            OperatorMatrix::Sparse(m) => m.row_sums(),
            OperatorMatrix::Dense(m) => m.sum_axis(ndarray::Axis(1)),
        }
    }

    /// Diagonal of the matrix, used for Jacobi preconditioning.
    pub fn diagonal(&self) -> Array1<f64> {
        let n = self.size();
        let mut d = Array1::zeros(n);
        match &self.matrix {
            OperatorMatrix::Sparse(m) => {
                for i in 0..n {
                    let (cols, vals) = m.row(i);
                    if let Some(pos) = cols.iter().position(|&c| c == i) {
                        d[i] = vals[pos];
                    }
                }
            }
            OperatorMatrix::Dense(m) => {
                for i in 0..n {
                    d[i] = m[[i, i]];
                }
            }
        }
        d
    }
}

/// Short content hash identifying the kappa sample an operator was built for.
pub fn kappa_hash(values: &[f64]) -> String {
    // FNV-1a over the IEEE bit patterns.
    let mut h: u64 = 0xcbf29ce484222325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    format!("{h:016x}")
}

/// Stencil size used for the DM kernel truncation: `ceil(1.5 sqrt(N))`,
/// clamped to the cloud size.
pub fn dm_neighbor_count(n: usize) -> usize {
    ((1.5 * (n as f64).sqrt()).ceil() as usize).clamp(1, n)
}
