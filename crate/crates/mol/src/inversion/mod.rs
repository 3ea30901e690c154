//! Bayesian recovery of kappa = e^alpha: graph-Laplacian Matern prior,
//! KL sampling, and graph pCN MCMC over either forward map.

pub mod pcn;
pub mod prior;

pub use pcn::{
    pcn_step, run_inversion, synthesize_observations, ForwardKind, ForwardMap, InversionConfig,
    InversionSummary, LocalKernelForward, ObservationModel, PcnChain, PcnState, SurrogateForward,
};
pub use prior::{
    build_prior, sample_prior, sample_prior_with, GaussianPrior, KlExponent,
    DEFAULT_PRIOR_NEIGHBORS, DEFAULT_S, DEFAULT_TAU,
};
