//! Graph pCN MCMC for recovering kappa = e^alpha from noisy solution
//! observations, with either the direct local-kernel solve or a trained
//! DeepONet surrogate as the forward map.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MolError, Result};
use crate::geometry::{NeighborIndex, PointCloud};
use crate::network::model::DeepONetModel;
use crate::operators::build_dm_operator;
use crate::solver::{solve_linear, Coefficient, ForwardProblem};

use super::prior::{GaussianPrior, KlExponent};

/// Noisy observations v = u + eta with Gamma = sigma^2 I.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    pub data_v: Array1<f64>,
    pub noise_sigma: f64,
    pub generating_seed: u64,
    pub truth_kappa: Option<Array1<f64>>,
    pub truth_u: Option<Array1<f64>>,
}

impl ObservationModel {
    pub fn new(data_v: Array1<f64>, noise_sigma: f64, generating_seed: u64) -> Result<ObservationModel> {
        if !(noise_sigma > 0.0) {
            return Err(MolError::Parameter(format!(
                "noise sigma = {noise_sigma} must be positive"
            )));
        }
        if data_v.iter().any(|v| !v.is_finite()) {
            return Err(MolError::Parameter("observations contain non-finite values".into()));
        }
        Ok(ObservationModel {
            data_v,
            noise_sigma,
            generating_seed,
            truth_kappa: None,
            truth_u: None,
        })
    }

    /// |v - pred|^2_Gamma = (v - pred)^T Gamma^{-1} (v - pred).
    pub fn misfit(&self, prediction: &Array1<f64>) -> f64 {
        let inv = 1.0 / (self.noise_sigma * self.noise_sigma);
        self.data_v
            .iter()
            .zip(prediction)
            .map(|(&v, &p)| (v - p) * (v - p))
            .sum::<f64>()
            * inv
    }
}

/// Direct forward map: kappa = e^alpha, assemble the diffusion-maps
/// operator, solve (L + cI) u = f. Nothing is cached across calls so the
/// per-step cost is honest for benchmarking.
pub struct LocalKernelForward<'a> {
    pub cloud: &'a PointCloud,
    pub knn: &'a NeighborIndex,
    pub epsilon: f64,
    pub c: f64,
    pub f_values: Array1<f64>,
}

impl LocalKernelForward<'_> {
    pub fn apply(&self, alpha: &Array1<f64>) -> Result<Array1<f64>> {
        if alpha.len() != self.cloud.len() {
            return Err(MolError::Shape(format!(
                "alpha has {} entries for a {}-point cloud",
                alpha.len(),
                self.cloud.len()
            )));
        }
        let kappa: Vec<f64> = alpha.iter().map(|&a| a.exp()).collect();
        let op = build_dm_operator(self.cloud, self.knn, &kappa, self.epsilon, 2)?;
        let report = solve_linear(&ForwardProblem {
            operator: &op,
            c: Coefficient::Scalar(self.c),
            f_values: self.f_values.clone(),
            boundary: None,
        })?;
        Ok(report.solution)
    }
}

/// Surrogate forward map: kappa = e^alpha fed straight to the branch net
/// (sensors coincide with the cloud points), one network forward pass.
pub struct SurrogateForward<'a> {
    pub model: &'a DeepONetModel,
    /// `N x 3` trunk inputs, the cloud points.
    pub locations: Array2<f64>,
}

impl SurrogateForward<'_> {
    pub fn apply(&self, alpha: &Array1<f64>) -> Result<Array1<f64>> {
        if alpha.len() != self.model.m {
            return Err(MolError::Config(format!(
                "alpha has {} entries but the surrogate expects m = {} sensors at the cloud points",
                alpha.len(),
                self.model.m
            )));
        }
        let mut sensors = Array2::zeros((1, alpha.len()));
        for (slot, &a) in sensors.row_mut(0).iter_mut().zip(alpha) {
            *slot = a.exp();
        }
        let pred = self.model.predict(&sensors, &self.locations)?;
        Ok(pred.row(0).to_owned())
    }
}

pub enum ForwardMap<'a> {
    LocalKernel(LocalKernelForward<'a>),
    Surrogate(SurrogateForward<'a>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardKind {
    LocalKernel,
    Surrogate,
}

impl ForwardMap<'_> {
    pub fn apply(&self, alpha: &Array1<f64>) -> Result<Array1<f64>> {
        match self {
            ForwardMap::LocalKernel(f) => f.apply(alpha),
            ForwardMap::Surrogate(f) => f.apply(alpha),
        }
    }

    pub fn kind(&self) -> ForwardKind {
        match self {
            ForwardMap::LocalKernel(_) => ForwardKind::LocalKernel,
            ForwardMap::Surrogate(_) => ForwardKind::Surrogate,
        }
    }
}

/// Current chain position with its cached misfit; one forward evaluation
/// per step (for the proposal only).
#[derive(Debug, Clone)]
pub struct PcnState {
    pub alpha: Array1<f64>,
    pub misfit: f64,
}

impl PcnState {
    pub fn init(alpha: Array1<f64>, forward: &ForwardMap, observation: &ObservationModel) -> Result<PcnState> {
        let misfit = observation.misfit(&forward.apply(&alpha)?);
        Ok(PcnState { alpha, misfit })
    }

    /// Zero-misfit start for prior-preservation runs.
    pub fn init_zero_misfit(alpha: Array1<f64>) -> PcnState {
        PcnState { alpha, misfit: 0.0 }
    }
}

/// One pCN step: propose alpha~ = sqrt(1 - beta^2) alpha + beta gamma with
/// gamma from the prior, accept with min{1, exp((misfit - misfit~)/2)}.
/// With `zero_misfit` the likelihood is constant and every proposal is
/// accepted, leaving the prior invariant.
#[allow(clippy::too_many_arguments)]
pub fn pcn_step(
    state: &PcnState,
    prior: &GaussianPrior,
    beta: f64,
    forward: Option<&ForwardMap>,
    observation: Option<&ObservationModel>,
    exponent: KlExponent,
    zero_misfit: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(PcnState, bool)> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(MolError::Parameter(format!(
            "pCN beta = {beta} outside (0, 1)"
        )));
    }
    let gamma = prior.sample_with_rng(rng, exponent);
    let contraction = (1.0 - beta * beta).sqrt();
    let proposal = state.alpha.mapv(|v| contraction * v) + &gamma.mapv(|v| beta * v);
    if zero_misfit {
        return Ok((
            PcnState {
                alpha: proposal,
                misfit: 0.0,
            },
            true,
        ));
    }
    let (forward, observation) = match (forward, observation) {
        (Some(f), Some(o)) => (f, o),
        _ => {
            return Err(MolError::Config(
                "pCN needs a forward map and observations unless zero_misfit is set".into(),
            ))
        }
    };
    let proposal_misfit = observation.misfit(&forward.apply(&proposal)?);
    let log_accept = 0.5 * (state.misfit - proposal_misfit);
    let accept = log_accept >= 0.0 || rng.random::<f64>() < log_accept.exp();
    if accept {
        Ok((
            PcnState {
                alpha: proposal,
                misfit: proposal_misfit,
            },
            true,
        ))
    } else {
        Ok((state.clone(), false))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionConfig {
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub kl_exponent: KlExponent,
    pub zero_misfit: bool,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            beta: 0.02,
            iterations: 7000,
            burn_in: 2000,
            thin: 1,
            seed: 0,
            kl_exponent: KlExponent::CovarianceSqrt,
            zero_misfit: false,
        }
    }
}

/// Full chain output: stored post-burn-in samples plus bookkeeping.
#[derive(Debug, Clone)]
pub struct PcnChain {
    pub beta: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub samples: Vec<Array1<f64>>,
    pub accept_count: usize,
    pub forward_kind: ForwardKind,
    pub mean_step_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionSummary {
    pub posterior_mean_kappa: Vec<f64>,
    pub posterior_std_kappa: Vec<f64>,
    pub reconstructed_u: Vec<f64>,
    pub kappa_rel_error: Option<f64>,
    pub u_rel_error: Option<f64>,
    pub acceptance_rate: f64,
    pub mean_step_seconds: f64,
    pub samples_stored: usize,
    pub forward_kind: ForwardKind,
}

fn rel_l2(est: &[f64], truth: &Array1<f64>) -> f64 {
    let num: f64 = est
        .iter()
        .zip(truth)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    num / den
}

/// Run the chain and summarize the posterior over kappa = e^alpha. The
/// reconstruction u-bar always goes through the local-kernel solve at
/// log(kappa-bar), whichever forward map drove the chain.
pub fn run_inversion(
    prior: &GaussianPrior,
    observation: &ObservationModel,
    forward: &ForwardMap,
    reconstruction: &LocalKernelForward,
    config: &InversionConfig,
) -> Result<(InversionSummary, PcnChain)> {
    if config.thin == 0 {
        return Err(MolError::Config("thin must be at least 1".into()));
    }
    if config.burn_in >= config.iterations {
        return Err(MolError::Config(format!(
            "burn-in {} consumes all {} iterations",
            config.burn_in, config.iterations
        )));
    }
    let n = prior.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = if config.zero_misfit {
        PcnState::init_zero_misfit(Array1::zeros(n))
    } else {
        PcnState::init(Array1::zeros(n), forward, observation)?
    };
    let mut samples = Vec::new();
    let mut accept_count = 0usize;
    let start = Instant::now();
    for it in 0..config.iterations {
        let (next, accepted) = pcn_step(
            &state,
            prior,
            config.beta,
            Some(forward),
            Some(observation),
            config.kl_exponent,
            config.zero_misfit,
            &mut rng,
        )?;
        state = next;
        if accepted {
            accept_count += 1;
        }
        if it >= config.burn_in && (it - config.burn_in) % config.thin == 0 {
            samples.push(state.alpha.clone());
        }
    }
    let mean_step_seconds = start.elapsed().as_secs_f64() / config.iterations as f64;
    if samples.is_empty() {
        return Err(MolError::Config("no samples stored after burn-in".into()));
    }
    let stored = samples.len() as f64;
    let mut mean_kappa = vec![0.0; n];
    let mut mean_kappa_sq = vec![0.0; n];
    for alpha in &samples {
        for (i, &a) in alpha.iter().enumerate() {
            let k = a.exp();
            mean_kappa[i] += k;
            mean_kappa_sq[i] += k * k;
        }
    }
    for i in 0..n {
        mean_kappa[i] /= stored;
        mean_kappa_sq[i] /= stored;
    }
    let std_kappa: Vec<f64> = (0..n)
        .map(|i| (mean_kappa_sq[i] - mean_kappa[i] * mean_kappa[i]).max(0.0).sqrt())
        .collect();
    let log_mean = Array1::from_iter(mean_kappa.iter().map(|&k| k.ln()));
    let reconstructed = reconstruction.apply(&log_mean)?;
    let kappa_rel_error = observation
        .truth_kappa
        .as_ref()
        .map(|t| rel_l2(&mean_kappa, t));
    let u_rel_error = observation
        .truth_u
        .as_ref()
        .map(|t| rel_l2(reconstructed.as_slice().unwrap(), t));
    let summary = InversionSummary {
        posterior_mean_kappa: mean_kappa,
        posterior_std_kappa: std_kappa,
        reconstructed_u: reconstructed.to_vec(),
        kappa_rel_error,
        u_rel_error,
        acceptance_rate: accept_count as f64 / config.iterations as f64,
        mean_step_seconds,
        samples_stored: samples.len(),
        forward_kind: forward.kind(),
    };
    let chain = PcnChain {
        beta: config.beta,
        iterations: config.iterations,
        burn_in: config.burn_in,
        thin: config.thin,
        samples,
        accept_count,
        forward_kind: forward.kind(),
        mean_step_seconds,
    };
    Ok((summary, chain))
}

/// Synthesize observations from a prior-drawn truth: v = u(kappa-dagger) +
/// sigma * eta with standard-normal eta.
pub fn synthesize_observations(
    truth_alpha: &Array1<f64>,
    forward: &LocalKernelForward,
    noise_sigma: f64,
    seed: u64,
) -> Result<ObservationModel> {
    let u = forward.apply(truth_alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array1::from_iter(u.iter().map(|&v| {
        let eta: f64 = StandardNormal.sample(&mut rng);
        v + noise_sigma * eta
    }));
    let mut obs = ObservationModel::new(data, noise_sigma, seed)?;
    obs.truth_kappa = Some(truth_alpha.mapv(|a| a.exp()));
    obs.truth_u = Some(u);
    Ok(obs)
}
