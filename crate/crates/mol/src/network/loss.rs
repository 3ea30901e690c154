//! Data, physics, and boundary losses with analytic gradients. The discrete
//! operators are constants in the differentiation: gradients flow through
//! the network outputs only.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{MolError, Result};
use crate::operators::DiscreteOperator;

use super::model::DeepONetModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub obs: f64,
    pub pde: f64,
    pub bc: f64,
    pub total: f64,
}

/// Observation pairs: kappa on the sensors, reference solutions on the cloud.
#[derive(Debug, Clone)]
pub struct ObsData {
    /// `K_obs x m`.
    pub kappa_sensors: Array2<f64>,
    /// `K_obs x N`.
    pub solutions: Array2<f64>,
}

/// Physics constraints: per-sample operators for the kappa draws, plus the
/// shared reaction coefficient and forcing. `interior` restricts the
/// residual average to those rows (Eq. with boundary); `None` means all N.
pub struct PdeConstraintSet {
    /// `K_pde x m`.
    pub kappa_sensors: Array2<f64>,
    pub operators: Vec<DiscreteOperator>,
    pub c: f64,
    pub f_values: Array1<f64>,
    pub interior: Option<Vec<usize>>,
}

/// Boundary-condition data over the PDE kappa samples.
#[derive(Debug, Clone)]
pub struct BcData {
    pub near_boundary: Vec<usize>,
    pub g_tilde: Vec<f64>,
}

/// Everything a loss/gradient evaluation needs besides the parameters.
pub struct TrainingData {
    /// `N x 3` ambient cloud locations fed to the trunk.
    pub locations: Array2<f64>,
    pub obs: Option<ObsData>,
    pub pde: Option<PdeConstraintSet>,
    pub bc: Option<BcData>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_obs: f64,
    pub w_pde: f64,
    pub w_bc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_obs: 1.0,
            w_pde: 0.0,
            w_bc: 0.0,
        }
    }
}

fn validate(data: &TrainingData, model: &DeepONetModel) -> Result<()> {
    let n = data.locations.nrows();
    if data.locations.ncols() != 3 {
        return Err(MolError::Shape("locations need 3 columns".into()));
    }
    if let Some(obs) = &data.obs {
        if obs.kappa_sensors.nrows() == 0 {
            return Err(MolError::Parameter("observation set is empty".into()));
        }
        if obs.kappa_sensors.ncols() != model.m {
            return Err(MolError::Shape(format!(
                "obs sensors have {} columns, model expects {}",
                obs.kappa_sensors.ncols(),
                model.m
            )));
        }
        if obs.solutions.shape() != [obs.kappa_sensors.nrows(), n] {
            return Err(MolError::Shape(format!(
                "obs solutions shape {:?}, expected [{}, {n}]",
                obs.solutions.shape(),
                obs.kappa_sensors.nrows()
            )));
        }
    }
    if let Some(pde) = &data.pde {
        if pde.kappa_sensors.nrows() == 0 {
            return Err(MolError::Parameter("PDE constraint set is empty".into()));
        }
        if pde.kappa_sensors.ncols() != model.m {
            return Err(MolError::Shape(format!(
                "PDE sensors have {} columns, model expects {}",
                pde.kappa_sensors.ncols(),
                model.m
            )));
        }
        if pde.operators.len() != pde.kappa_sensors.nrows() {
            return Err(MolError::Shape(format!(
                "{} operators for {} PDE samples",
                pde.operators.len(),
                pde.kappa_sensors.nrows()
            )));
        }
        if pde.operators.iter().any(|op| op.size() != n) {
            return Err(MolError::Shape(format!(
                "operator size does not match {n} cloud points"
            )));
        }
        if pde.f_values.len() != n {
            return Err(MolError::Shape(format!(
                "f has {} values for {n} points",
                pde.f_values.len()
            )));
        }
        if let Some(interior) = &pde.interior {
            if interior.iter().any(|&i| i >= n) {
                return Err(MolError::Shape("interior index out of range".into()));
            }
            if interior.is_empty() {
                return Err(MolError::Parameter("interior set is empty".into()));
            }
        }
    }
    if let Some(bc) = &data.bc {
        if data.pde.is_none() {
            return Err(MolError::Parameter(
                "boundary loss needs the PDE kappa samples".into(),
            ));
        }
        if bc.near_boundary.is_empty() {
            return Err(MolError::Parameter("near-boundary set is empty".into()));
        }
        if bc.near_boundary.len() != bc.g_tilde.len() {
            return Err(MolError::Shape(format!(
                "{} near-boundary points but {} boundary values",
                bc.near_boundary.len(),
                bc.g_tilde.len()
            )));
        }
        if bc.near_boundary.iter().any(|&i| i >= n) {
            return Err(MolError::Shape("near-boundary index out of range".into()));
        }
    }
    Ok(())
}

/// Compute the weighted loss bundle and, when `grad` is given, accumulate
/// d(total)/d(params) into it.
pub fn evaluate_losses(
    model: &DeepONetModel,
    params: &[f64],
    data: &TrainingData,
    weights: &LossWeights,
    mut grad: Option<&mut [f64]>,
) -> Result<LossBundle> {
    validate(data, model)?;
    let n = data.locations.nrows();
    let (trunk_out, trunk_cache) = model.trunk_forward_with(params, &data.locations);
    let b0 = params[params.len() - 1];
    let mut bundle = LossBundle {
        obs: 0.0,
        pde: 0.0,
        bc: 0.0,
        total: 0.0,
    };
    // Accumulated dTotal/dTrunkOut contributions arrive through per-batch
    // backward calls; each batch owns its dPred.
    if let Some(obs) = &data.obs {
        let k = obs.kappa_sensors.nrows();
        let (branch_out, branch_cache) = model.branch_forward_with(params, &obs.kappa_sensors);
        let pred = branch_out.dot(&trunk_out.t()) + b0;
        let diff = &pred - &obs.solutions;
        bundle.obs = diff.iter().map(|v| v * v).sum::<f64>() / (k * n) as f64;
        if let Some(g) = grad.as_deref_mut() {
            if weights.w_obs != 0.0 {
                let d_pred = diff.mapv(|v| weights.w_obs * 2.0 * v / (k * n) as f64);
                model.backward(
                    params,
                    &branch_out,
                    &branch_cache,
                    &trunk_out,
                    &trunk_cache,
                    &d_pred,
                    g,
                );
            }
        }
    }
    if let Some(pde) = &data.pde {
        let k = pde.kappa_sensors.nrows();
        let (branch_out, branch_cache) = model.branch_forward_with(params, &pde.kappa_sensors);
        let pred = branch_out.dot(&trunk_out.t()) + b0;
        // Residual rows r_k = (L_k + cI) u_k - f.
        let mut residual = Array2::zeros((k, n));
        for (ki, op) in pde.operators.iter().enumerate() {
            let u: Array1<f64> = pred.row(ki).to_owned();
            let r = op.apply(&u) + &(u.mapv(|v| pde.c * v)) - &pde.f_values;
            for (j, &v) in r.iter().enumerate() {
                residual[[ki, j]] = v;
            }
        }
        let (count, mask): (usize, Option<&Vec<usize>>) = match &pde.interior {
            Some(set) => (set.len(), Some(set)),
            None => (n, None),
        };
        let mut sum = 0.0;
        match mask {
            Some(set) => {
                for ki in 0..k {
                    for &i in set {
                        sum += residual[[ki, i]] * residual[[ki, i]];
                    }
                }
            }
            None => sum = residual.iter().map(|v| v * v).sum(),
        }
        bundle.pde = sum / (k * count) as f64;

        let mut bc_dpred: Option<Array2<f64>> = None;
        if let Some(bc) = &data.bc {
            let n2 = bc.near_boundary.len();
            let mut sum_bc = 0.0;
            let mut d = Array2::zeros((k, n));
            for ki in 0..k {
                for (&i, &gi) in bc.near_boundary.iter().zip(&bc.g_tilde) {
                    let e = pred[[ki, i]] - gi;
                    sum_bc += e * e;
                    d[[ki, i]] = weights.w_bc * 2.0 * e / (k * n2) as f64;
                }
            }
            bundle.bc = sum_bc / (k * n2) as f64;
            bc_dpred = Some(d);
        }

        if let Some(g) = grad.as_deref_mut() {
            let scale = 2.0 / (k * count) as f64;
            let mut d_pred = Array2::zeros((k, n));
            if weights.w_pde != 0.0 {
                // dL/du_k = A^T (scale * masked r_k).
                for (ki, op) in pde.operators.iter().enumerate() {
                    let mut masked: Array1<f64> = Array1::zeros(n);
                    match mask {
                        Some(set) => {
                            for &i in set {
                                masked[i] = scale * residual[[ki, i]];
                            }
                        }
                        None => {
                            for i in 0..n {
                                masked[i] = scale * residual[[ki, i]];
                            }
                        }
                    }
                    let back = op.apply_transpose(&masked) + &masked.mapv(|v| pde.c * v);
                    for (j, &v) in back.iter().enumerate() {
                        d_pred[[ki, j]] += weights.w_pde * v;
                    }
                }
            }
            if let Some(d_bc) = bc_dpred {
                d_pred += &d_bc;
            }
            if weights.w_pde != 0.0 || weights.w_bc != 0.0 {
                model.backward(
                    params,
                    &branch_out,
                    &branch_cache,
                    &trunk_out,
                    &trunk_cache,
                    &d_pred,
                    g,
                );
            }
        }
    } else if data.bc.is_some() {
        // validate() already rejected this; defensive.
        return Err(MolError::Parameter(
            "boundary loss needs the PDE kappa samples".into(),
        ));
    }
    bundle.total = weights.w_obs * bundle.obs + weights.w_pde * bundle.pde + weights.w_bc * bundle.bc;
    Ok(bundle)
}

/// Mean-squared data misfit, Eq.-style average over samples and points.
pub fn loss_obs(
    model: &DeepONetModel,
    kappa_sensors: &Array2<f64>,
    locations: &Array2<f64>,
    solutions: &Array2<f64>,
) -> Result<f64> {
    let data = TrainingData {
        locations: locations.clone(),
        obs: Some(ObsData {
            kappa_sensors: kappa_sensors.clone(),
            solutions: solutions.clone(),
        }),
        pde: None,
        bc: None,
    };
    Ok(evaluate_losses(
        model,
        &model.params,
        &data,
        &LossWeights {
            w_obs: 1.0,
            w_pde: 0.0,
            w_bc: 0.0,
        },
        None,
    )?
    .obs)
}

/// Mean-squared PDE residual of the network predictions under the
/// precomputed discrete operators.
pub fn loss_pde(
    model: &DeepONetModel,
    pde: &PdeConstraintSet,
    locations: &Array2<f64>,
) -> Result<f64> {
    let data = TrainingData {
        locations: locations.clone(),
        obs: None,
        pde: Some(PdeConstraintSet {
            kappa_sensors: pde.kappa_sensors.clone(),
            operators: pde.operators.clone(),
            c: pde.c,
            f_values: pde.f_values.clone(),
            interior: pde.interior.clone(),
        }),
        bc: None,
    };
    Ok(evaluate_losses(
        model,
        &model.params,
        &data,
        &LossWeights {
            w_obs: 0.0,
            w_pde: 1.0,
            w_bc: 0.0,
        },
        None,
    )?
    .pde)
}

/// Mean-squared mismatch to the boundary extension on near-boundary points.
pub fn loss_bc(
    model: &DeepONetModel,
    pde: &PdeConstraintSet,
    locations: &Array2<f64>,
    bc: &BcData,
) -> Result<f64> {
    let data = TrainingData {
        locations: locations.clone(),
        obs: None,
        pde: Some(PdeConstraintSet {
            kappa_sensors: pde.kappa_sensors.clone(),
            operators: pde.operators.clone(),
            c: pde.c,
            f_values: pde.f_values.clone(),
            interior: pde.interior.clone(),
        }),
        bc: Some(bc.clone()),
    };
    Ok(evaluate_losses(
        model,
        &model.params,
        &data,
        &LossWeights {
            w_obs: 0.0,
            w_pde: 0.0,
            w_bc: 1.0,
        },
        None,
    )?
    .bc)
}
