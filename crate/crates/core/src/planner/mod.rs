//! Trajectory sampling through the ensemble, CEM action-sequence search and
//! receding-horizon action selection.

mod cem;
mod mpc;
mod propagate;

use serde::{Deserialize, Serialize};

pub use cem::{cem_plan, cem_update, CemResult, Objective};
pub use mpc::{mpc_act, MpcPolicy, PlanningObjective};
pub use propagate::{propagate, propagate_many};

use crate::envsim::{reward_from_obs, EnvKind, EnvParams};
use crate::error::{Error, Result};

/// Lower bound on every CEM variance entry.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub population: usize,
    pub elite_count: usize,
    pub cem_iterations: usize,
    /// Weight kept on the previous CEM distribution at each update.
    pub smoothing: f64,
    /// Particles propagated per ensemble member.
    pub particles: usize,
    pub discount: f64,
    pub initial_variance: f64,
    pub action_low: f64,
    pub action_high: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 25,
            population: 400,
            elite_count: 40,
            cem_iterations: 5,
            smoothing: 0.1,
            particles: 10,
            discount: 0.99,
            initial_variance: 1.0,
            action_low: -2.0,
            action_high: 2.0,
        }
    }
}

impl PlannerConfig {
    /// Defaults with the action bounds of `params` and an initial variance of
    /// `(range / 4)^2`.
    pub fn for_env(params: &EnvParams) -> Self {
        let range = params.action_high - params.action_low;
        Self {
            action_low: params.action_low,
            action_high: params.action_high,
            initial_variance: range * range / 16.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.horizon == 0 {
            return bad("planner horizon must be at least 1");
        }
        if self.population == 0 || self.elite_count == 0 || self.elite_count > self.population {
            return bad("planner needs 1 <= elite_count <= population");
        }
        if self.cem_iterations == 0 {
            return bad("planner needs at least one CEM iteration");
        }
        if self.particles == 0 {
            return bad("planner needs at least one particle");
        }
        if !(0.0..=1.0).contains(&self.smoothing) {
            return bad("smoothing must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        if !(self.initial_variance.is_finite() && self.initial_variance > 0.0) {
            return bad("initial_variance must be positive");
        }
        if !(self.action_low < self.action_high) {
            return bad("planner action bounds must satisfy low < high");
        }
        Ok(())
    }

    pub fn initial_state(&self) -> CemState {
        CemState {
            mean: vec![0.5 * (self.action_low + self.action_high); self.horizon],
            variance: vec![self.initial_variance; self.horizon],
        }
    }
}

/// Open-loop action sequence, clipped to the planner bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSequence(pub Vec<f64>);

impl ActionSequence {
    pub fn clipped(values: Vec<f64>, low: f64, high: f64) -> Self {
        Self(values.into_iter().map(|u| u.clamp(low, high)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Diagonal Gaussian over action sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct CemState {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Known reward evaluated on (possibly model-predicted) observations.
pub trait RewardFn: Sync {
    fn reward(&self, obs: &[f64], action: f64) -> f64;
    /// Reward charged to a particle after its rollout diverges.
    fn floor(&self) -> f64;
}

/// The task reward with the parameters the agent believes in.
#[derive(Debug, Clone, Copy)]
pub struct EnvReward {
    pub kind: EnvKind,
    pub params: EnvParams,
}

impl RewardFn for EnvReward {
    fn reward(&self, obs: &[f64], action: f64) -> f64 {
        reward_from_obs(self.kind, obs, action, &self.params)
    }

    fn floor(&self) -> f64 {
        self.params.reward_floor(self.kind)
    }
}

/// A reward given by a closure, with an explicit floor.
pub struct FnReward<F> {
    pub f: F,
    pub floor: f64,
}

impl<F: Fn(&[f64], f64) -> f64 + Sync> RewardFn for FnReward<F> {
    fn reward(&self, obs: &[f64], action: f64) -> f64 {
        (self.f)(obs, action)
    }

    fn floor(&self) -> f64 {
        self.floor
    }
}

/// Member-blocked particle rollouts of one action sequence.
///
/// Layout is `[member][particle][step]`. `scores` holds, for step `k >= 1`,
/// the score of the sampled transition that produced the step-`k`
/// observation, in the model's normalised head-output coordinates; the
/// step-0 slot is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub members: usize,
    pub particles: usize,
    pub horizon: usize,
    pub obs_dim: usize,
    pub observations: Vec<f64>,
    pub rewards: Vec<f64>,
    pub scores: Vec<f64>,
    /// First step at which each `[member][particle]` rollout left the finite
    /// range, if it did.
    pub diverged_at: Vec<Option<usize>>,
}

impl TrajectoryBatch {
    pub fn zeros(members: usize, particles: usize, horizon: usize, obs_dim: usize) -> Self {
        let n = members * particles * horizon;
        Self {
            members,
            particles,
            horizon,
            obs_dim,
            observations: vec![0.0; n * obs_dim],
            rewards: vec![0.0; n],
            scores: vec![0.0; n * 2 * obs_dim],
            diverged_at: vec![None; members * particles],
        }
    }

    #[inline]
    pub fn index(&self, member: usize, particle: usize, step: usize) -> usize {
        (member * self.particles + particle) * self.horizon + step
    }

    pub fn score_dim(&self) -> usize {
        2 * self.obs_dim
    }

    pub fn reward(&self, member: usize, particle: usize, step: usize) -> f64 {
        self.rewards[self.index(member, particle, step)]
    }

    pub fn score(&self, member: usize, particle: usize, step: usize) -> &[f64] {
        let i = self.index(member, particle, step) * self.score_dim();
        &self.scores[i..i + self.score_dim()]
    }

    pub fn observation(&self, member: usize, particle: usize, step: usize) -> &[f64] {
        let i = self.index(member, particle, step) * self.obs_dim;
        &self.observations[i..i + self.obs_dim]
    }

    /// Per-member Monte-Carlo returns `(1/Q) Σ_q Σ_k γ^k r`.
    pub fn member_returns(&self, discount: f64) -> Vec<f64> {
        (0..self.members)
            .map(|b| {
                let total: f64 = (0..self.particles)
                    .map(|q| {
                        let mut g = 0.0;
                        let mut w = 1.0;
                        for k in 0..self.horizon {
                            g += w * self.reward(b, q, k);
                            w *= discount;
                        }
                        g
                    })
                    .sum();
                total / self.particles as f64
            })
            .collect()
    }
}

/// Monte-Carlo estimate of the expected discounted return under the
/// ensemble mixture.
///
/// Computed as the mean of per-member means so it is bit-identical to the
/// nominal term of the robust objective.
pub fn pets_objective(batch: &TrajectoryBatch, discount: f64) -> f64 {
    let j = batch.member_returns(discount);
    j.iter().sum::<f64>() / j.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(members: usize, particles: usize, horizon: usize, r: impl Fn(usize, usize, usize) -> f64) -> TrajectoryBatch {
        let mut b = TrajectoryBatch::zeros(members, particles, horizon, 1);
        for m in 0..members {
            for q in 0..particles {
                for k in 0..horizon {
                    let i = b.index(m, q, k);
                    b.rewards[i] = r(m, q, k);
                }
            }
        }
        b
    }

    #[test]
    fn objective_reference_values() {
        let ones = filled(2, 3, 3, |_, _, _| 1.0);
        assert_eq!(pets_objective(&ones, 0.999_999_999_999_999_9), 3.0);
        assert_eq!(pets_objective(&ones, 0.5), 1.75);
        let avg = filled(2, 1, 1, |m, _, _| if m == 0 { 2.0 } else { 4.0 });
        assert_eq!(pets_objective(&avg, 0.9), 3.0);
    }

    #[test]
    fn zero_discount_is_mean_first_reward() {
        let b = filled(3, 4, 5, |m, q, k| (m * 7 + q * 3 + k) as f64 * 0.25 - 1.0);
        let first: f64 = (0..3).flat_map(|m| (0..4).map(move |q| (m, q))).map(|(m, q)| b.reward(m, q, 0)).sum::<f64>() / 12.0;
        assert!((pets_objective(&b, 0.0) - first).abs() < 1e-12);
    }

    #[test]
    fn constant_shift_moves_objective_by_discount_sum() {
        let gamma: f64 = 0.9;
        let b = filled(2, 2, 4, |m, q, k| ((m + 2 * q + 3 * k) as f64).sin());
        let shifted = filled(2, 2, 4, |m, q, k| ((m + 2 * q + 3 * k) as f64).sin() + 2.5);
        let geometric: f64 = (0..4).map(|k| gamma.powi(k)).sum();
        let d = pets_objective(&shifted, gamma) - pets_objective(&b, gamma);
        assert!((d - 2.5 * geometric).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(PlannerConfig::default().validate().is_ok());
        let bad = [
            PlannerConfig { elite_count: 500, ..Default::default() },
            PlannerConfig { horizon: 0, ..Default::default() },
            PlannerConfig { particles: 0, ..Default::default() },
            PlannerConfig { discount: 1.0, ..Default::default() },
            PlannerConfig { smoothing: 1.5, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
