//! Probabilistic-ensemble model-based control with a Wasserstein-robust
//! planning objective.
//!
//! The pipeline is: simulate ([`envsim`]), fit a bootstrap ensemble of
//! Gaussian dynamics models ([`ensemble`]), and plan with CEM over particle
//! rollouts ([`planner`]), optionally penalising each candidate by its
//! worst-case first-order loss under model perturbation ([`drcore`]).

pub mod drcore;
pub mod ensemble;
pub mod envsim;
pub mod error;
pub mod planner;
pub mod rng;

pub use drcore::{dr_objective, dr_value, grad_estimate, DrConfig, DualDiagnostics, GradientEstimate, PNorm};
pub use ensemble::{EnsembleModel, ObsLayout, TrainConfig, TransitionDataset};
pub use envsim::{EnvKind, EnvParams, EnvState, EpisodeRecord, Observation, Policy};
pub use error::{Error, Result};
pub use planner::{ActionSequence, CemState, EnvReward, MpcPolicy, PlannerConfig, TrajectoryBatch};
pub use rng::RngStream;
