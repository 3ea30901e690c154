//! Full-batch Adam training loop with inverse-time step decay.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{MolError, Result};

use super::loss::{evaluate_losses, LossBundle, LossWeights, TrainingData};
use super::model::DeepONetModel;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    /// Initial step size gamma_0.
    pub lr0: f64,
    /// Decay rate r in gamma_n = gamma_0 / (1 + r * n / s).
    pub decay_r: f64,
    /// Decay scale s.
    pub decay_s: f64,
    /// Record a history row every this many epochs (and at the end).
    pub history_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            weights: LossWeights::default(),
            epochs: 0,
            lr0: 1e-3,
            decay_r: 0.5,
            decay_s: 20_000.0,
            history_every: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub obs: f64,
    pub pde: f64,
    pub bc: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<HistoryRow>,
    pub final_losses: LossBundle,
    pub epochs_run: usize,
    /// Set when a non-finite loss or gradient stopped training early; the
    /// model keeps the last finite parameters.
    pub aborted: bool,
    pub seconds: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Run full-batch Adam on the weighted loss. The model parameters are
/// updated in place; with `epochs == 0` they are returned bit-identical.
pub fn train(
    model: &mut DeepONetModel,
    data: &TrainingData,
    config: &TrainingConfig,
) -> Result<TrainReport> {
    if !(config.lr0 > 0.0) || !(config.decay_s > 0.0) || config.decay_r < 0.0 {
        return Err(MolError::Parameter(format!(
            "bad schedule: lr0={} r={} s={}",
            config.lr0, config.decay_r, config.decay_s
        )));
    }
    if config.history_every == 0 {
        return Err(MolError::Parameter("history_every must be positive".into()));
    }
    let start = Instant::now();
    let np = model.n_params();
    let mut m1 = vec![0.0; np];
    let mut m2 = vec![0.0; np];
    let mut grad = vec![0.0; np];
    let mut history = Vec::new();
    let mut last_good = model.params.clone();
    let mut last_bundle =
        evaluate_losses(model, &model.params, data, &config.weights, None)?;
    let mut aborted = false;
    let mut epochs_run = 0;

    for epoch in 0..config.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let params = model.params.clone();
        let bundle = evaluate_losses(model, &params, data, &config.weights, Some(&mut grad))?;
        let finite = bundle.total.is_finite() && grad.iter().all(|g| g.is_finite());
        if !finite {
            model.params = last_good.clone();
            aborted = true;
            break;
        }
        last_bundle = bundle;
        last_good = params;
        let lr = config.lr0 / (1.0 + config.decay_r * epoch as f64 / config.decay_s);
        if epoch % config.history_every == 0 {
            history.push(HistoryRow {
                epoch,
                obs: bundle.obs,
                pde: bundle.pde,
                bc: bundle.bc,
                total: bundle.total,
                lr,
            });
        }
        let t = (epoch + 1) as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        for i in 0..np {
            m1[i] = ADAM_BETA1 * m1[i] + (1.0 - ADAM_BETA1) * grad[i];
            m2[i] = ADAM_BETA2 * m2[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let step = lr * (m1[i] / bc1) / ((m2[i] / bc2).sqrt() + ADAM_EPS);
            model.params[i] -= step;
        }
        epochs_run = epoch + 1;
    }

    if !aborted && config.epochs > 0 {
        // Loss after the final update, for the report and the closing row.
        let bundle = evaluate_losses(model, &model.params, data, &config.weights, None)?;
        if bundle.total.is_finite() {
            last_bundle = bundle;
        } else {
            model.params = last_good;
            aborted = true;
        }
    }
    history.push(HistoryRow {
        epoch: epochs_run,
        obs: last_bundle.obs,
        pde: last_bundle.pde,
        bc: last_bundle.bc,
        total: last_bundle.total,
        lr: config.lr0 / (1.0 + config.decay_r * epochs_run as f64 / config.decay_s),
    });
    Ok(TrainReport {
        history,
        final_losses: last_bundle,
        epochs_run,
        aborted,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean over samples of ||pred_k - truth_k||_2 / ||truth_k||_2.
pub fn mean_l2_relative_error(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(MolError::Shape(format!(
            "prediction shape {:?} vs reference {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    if pred.nrows() == 0 {
        return Err(MolError::Parameter("no samples".into()));
    }
    let mut acc = 0.0;
    for (p, t) in pred.rows().into_iter().zip(truth.rows()) {
        let num: f64 = p
            .iter()
            .zip(t.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        if den == 0.0 {
            return Err(MolError::Parameter(
                "reference row has zero norm".into(),
            ));
        }
        acc += num / den;
    }
    Ok(acc / pred.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_cloud, ManifoldKind};
    use crate::network::loss::ObsData;
    use crate::network::model::BranchArch;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_data(n: usize, k: usize, m: usize, seed: u64) -> TrainingData {
        let cloud = sample_cloud(ManifoldKind::Torus, n, 2.0, 1.0, seed).unwrap();
        let locations = Array2::from_shape_fn((n, 3), |(i, j)| cloud.points[i][j]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let kappa_sensors = Array2::from_shape_fn((k, m), |_| 1.0 + rng.random::<f64>());
        // Smooth target: u_k(x) = mean(kappa_k) * cos(theta).
        let mut solutions = Array2::zeros((k, n));
        for ki in 0..k {
            let scale = kappa_sensors.row(ki).mean().unwrap();
            for i in 0..n {
                solutions[[ki, i]] = scale * cloud.intrinsic.as_ref().unwrap()[i][0].cos();
            }
        }
        TrainingData {
            locations,
            obs: Some(ObsData {
                kappa_sensors,
                solutions,
            }),
            pde: None,
            bc: None,
        }
    }

    fn tiny_model(m: usize, seed: u64) -> DeepONetModel {
        DeepONetModel::new(m, 8, &BranchArch::Mlp { hidden: vec![16] }, seed).unwrap()
    }

    #[test]
    fn zero_epochs_leaves_params_bitwise_unchanged() {
        let mut model = tiny_model(4, 5);
        let before = model.params.clone();
        let data = toy_data(12, 3, 4, 6);
        let report = train(&mut model, &data, &TrainingConfig::default()).unwrap();
        assert_eq!(report.epochs_run, 0);
        assert!(!report.aborted);
        assert!(model
            .params
            .iter()
            .zip(&before)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(report.history.len(), 1);
    }

    #[test]
    fn loss_decreases_on_toy_problem() {
        let mut model = tiny_model(4, 7);
        let data = toy_data(20, 4, 4, 8);
        let config = TrainingConfig {
            epochs: 400,
            ..TrainingConfig::default()
        };
        let report = train(&mut model, &data, &config).unwrap();
        assert!(!report.aborted);
        let first = report.history.first().unwrap().total;
        let last = report.final_losses.total;
        assert!(
            last < 0.2 * first,
            "loss went {first} -> {last} over 400 epochs"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_data(15, 3, 4, 10);
        let config = TrainingConfig {
            epochs: 50,
            ..TrainingConfig::default()
        };
        let mut a = tiny_model(4, 11);
        let mut b = tiny_model(4, 11);
        let ra = train(&mut a, &data, &config).unwrap();
        let rb = train(&mut b, &data, &config).unwrap();
        assert!(a
            .params
            .iter()
            .zip(&b.params)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(ra.final_losses.total, rb.final_losses.total);
    }

    #[test]
    fn schedule_matches_inverse_time_decay() {
        let data = toy_data(10, 2, 4, 12);
        let mut model = tiny_model(4, 13);
        let config = TrainingConfig {
            epochs: 301,
            history_every: 100,
            ..TrainingConfig::default()
        };
        let report = train(&mut model, &data, &config).unwrap();
        for row in &report.history {
            let expect = config.lr0 / (1.0 + config.decay_r * row.epoch as f64 / config.decay_s);
            assert!((row.lr - expect).abs() < 1e-18, "epoch {}", row.epoch);
        }
        // Rows at 0, 100, 200, 300 plus the closing row at 301.
        assert_eq!(
            report.history.iter().map(|r| r.epoch).collect::<Vec<_>>(),
            vec![0, 100, 200, 300, 301]
        );
    }

    #[test]
    fn nan_aborts_and_keeps_last_finite_params() {
        let mut model = tiny_model(4, 14);
        let mut data = toy_data(10, 2, 4, 15);
        if let Some(obs) = &mut data.obs {
            obs.solutions[[0, 0]] = f64::INFINITY;
        }
        let config = TrainingConfig {
            epochs: 10,
            ..TrainingConfig::default()
        };
        let before = model.params.clone();
        let report = train(&mut model, &data, &config).unwrap();
        assert!(report.aborted);
        assert!(model.params.iter().all(|v| v.is_finite()));
        // The very first evaluation is already non-finite, so nothing moved.
        assert_eq!(model.params, before);
    }

    #[test]
    fn relative_error_basics() {
        let truth = Array2::from_shape_vec((2, 2), vec![3.0, 4.0, 0.0, 1.0]).unwrap();
        let exact = mean_l2_relative_error(&truth, &truth).unwrap();
        assert_eq!(exact, 0.0);
        let mut pred = truth.clone();
        pred[[0, 0]] += 5.0; // row norm 5, error 5 -> rel 1; row 2 untouched
        let err = mean_l2_relative_error(&pred, &truth).unwrap();
        assert!((err - 0.5).abs() < 1e-15);
        let bad = Array2::zeros((2, 3));
        assert!(mean_l2_relative_error(&bad, &truth).is_err());
        let zero_ref = Array2::zeros((1, 2));
        assert!(mean_l2_relative_error(&zero_ref, &zero_ref).is_err());
    }
}
