//! Wasserstein-robust planning objective: the closed-form worst case over
//! per-member model perturbations, its dual certificates, and the
//! score-function estimate of each member's sensitivity.

mod oracle;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use oracle::worstcase_oracle;

use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::planner::{propagate, ActionSequence, PlannerConfig, RewardFn, TrajectoryBatch};
use crate::rng::RngStream;

/// Order of the Wasserstein ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PNorm {
    One,
    Two,
    Infinity,
}

impl PNorm {
    pub const ALL: [PNorm; 3] = [PNorm::One, PNorm::Two, PNorm::Infinity];

    pub fn as_str(self) -> &'static str {
        match self {
            PNorm::One => "1",
            PNorm::Two => "2",
            PNorm::Infinity => "inf",
        }
    }
}

impl fmt::Display for PNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "one" => Ok(PNorm::One),
            "2" | "two" => Ok(PNorm::Two),
            "inf" | "infinity" => Ok(PNorm::Infinity),
            other => Err(Error::InvalidConfig(format!("p must be 1, 2 or inf, got `{other}`"))),
        }
    }
}

impl TryFrom<String> for PNorm {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PNorm> for String {
    fn from(p: PNorm) -> String {
        p.as_str().to_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrConfig {
    /// Ball radius, in normalised head-output units.
    pub epsilon: f64,
    pub p: PNorm,
    /// Subtract a leave-one-out particle mean from each reward-to-go before
    /// weighting by the score. Same expectation, lower variance.
    pub baseline: bool,
}

impl Default for DrConfig {
    fn default() -> Self {
        Self { epsilon: 0.0, p: PNorm::Two, baseline: false }
    }
}

impl DrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Per-member gradient of the Monte-Carlo return with respect to the
/// member's head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grads: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
}

impl GradientEstimate {
    pub fn from_grads(grads: Vec<Vec<f64>>) -> Self {
        let norms = grads.iter().map(|g| euclidean(g)).collect();
        Self { grads, norms }
    }

    pub fn members(&self) -> usize {
        self.grads.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualDiagnostics {
    pub lambda_star: f64,
    pub delta_star: Vec<f64>,
    /// Every gradient norm was zero; the ball constraint is slack.
    pub degenerate: bool,
}

fn euclidean(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Score-weighted reward-to-go estimate of each member's return gradient.
pub fn grad_estimate(batch: &TrajectoryBatch, discount: f64) -> GradientEstimate {
    grad_estimate_with(batch, discount, false)
}

pub fn grad_estimate_with(batch: &TrajectoryBatch, discount: f64, baseline: bool) -> GradientEstimate {
    let (t, q_n, sd) = (batch.horizon, batch.particles, batch.score_dim());
    let mut grads = vec![vec![0.0; sd]; batch.members];
    if t < 2 {
        return GradientEstimate::from_grads(grads);
    }
    let mut to_go = vec![0.0; q_n * t];
    for (b, g) in grads.iter_mut().enumerate() {
        for q in 0..q_n {
            let mut acc = 0.0;
            for k in (0..t).rev() {
                acc = batch.reward(b, q, k) + discount * acc;
                to_go[q * t + k] = acc;
            }
        }
        let mut w = 1.0;
        for k in 1..t {
            w *= discount;
            let total: f64 = if baseline { (0..q_n).map(|q| to_go[q * t + k]).sum() } else { 0.0 };
            for q in 0..q_n {
                let mut r = to_go[q * t + k];
                if baseline && q_n > 1 {
                    r -= (total - r) / (q_n - 1) as f64;
                }
                let coeff = w * r;
                for (gi, si) in g.iter_mut().zip(batch.score(b, q, k)) {
                    *gi += coeff * si;
                }
            }
        }
        for gi in g.iter_mut() {
            *gi /= q_n as f64;
        }
    }
    GradientEstimate::from_grads(grads)
}

/// Penalty subtracted from the member-mean return.
pub fn dr_penalty(norms: &[f64], config: &DrConfig) -> f64 {
    if config.epsilon == 0.0 || norms.is_empty() {
        return 0.0;
    }
    let b = norms.len() as f64;
    let scale = match config.p {
        PNorm::Two => (norms.iter().map(|n| n * n).sum::<f64>() / b).sqrt(),
        PNorm::One => norms.iter().copied().fold(0.0, f64::max),
        PNorm::Infinity => norms.iter().sum::<f64>() / b,
    };
    config.epsilon * scale
}

/// Worst-case linearised return over the ambiguity ball around every member.
pub fn dr_value(j: &[f64], grads: &GradientEstimate, config: &DrConfig) -> Result<f64> {
    if j.is_empty() || j.len() != grads.members() {
        return Err(Error::InvalidInput(format!(
            "{} member returns for {} gradients",
            j.len(),
            grads.members()
        )));
    }
    let nominal = j.iter().sum::<f64>() / j.len() as f64;
    if config.epsilon == 0.0 {
        return Ok(nominal);
    }
    Ok(nominal - dr_penalty(&grads.norms, config))
}

/// Lagrangian dual of the inner minimisation for `p = 2`, as a function of
/// the multiplier `lambda > 0`.
pub fn dual_function(norms: &[f64], epsilon: f64, lambda: f64) -> f64 {
    let b = norms.len() as f64;
    -norms.iter().map(|n| n * n).sum::<f64>() / (4.0 * lambda * b) - lambda * epsilon * epsilon
}

/// Maximiser of [`dual_function`] and the per-member perturbation sizes it
/// induces.
pub fn dual_optimizers(norms: &[f64], config: &DrConfig) -> Result<DualDiagnostics> {
    if config.p != PNorm::Two {
        return Err(Error::InvalidInput("dual diagnostics are defined for p = 2 only".into()));
    }
    if !(config.epsilon > 0.0 && config.epsilon.is_finite()) {
        return Err(Error::InvalidInput("dual diagnostics need epsilon > 0".into()));
    }
    if norms.is_empty() || norms.iter().any(|n| !(n.is_finite() && *n >= 0.0)) {
        return Err(Error::InvalidInput("gradient norms must be finite and >= 0".into()));
    }
    let mean_sq = norms.iter().map(|n| n * n).sum::<f64>() / norms.len() as f64;
    if mean_sq == 0.0 {
        return Ok(DualDiagnostics { lambda_star: 0.0, delta_star: vec![0.0; norms.len()], degenerate: true });
    }
    let lambda_star = mean_sq.sqrt() / (2.0 * config.epsilon);
    let delta_star = norms.iter().map(|n| n / (2.0 * lambda_star)).collect();
    Ok(DualDiagnostics { lambda_star, delta_star, degenerate: false })
}

/// Robust value of `batch`: member returns penalised by the worst-case
/// first-order loss.
pub fn dr_objective_from_batch(batch: &TrajectoryBatch, discount: f64, config: &DrConfig) -> Result<f64> {
    let j = batch.member_returns(discount);
    if config.epsilon == 0.0 {
        return Ok(j.iter().sum::<f64>() / j.len() as f64);
    }
    let grads = grad_estimate_with(batch, discount, config.baseline);
    dr_value(&j, &grads, config)
}

/// Rolls `seq` out through `model` and scores it with [`dr_objective_from_batch`].
pub fn dr_objective(
    model: &EnsembleModel,
    start: &[f64],
    seq: &ActionSequence,
    planner: &PlannerConfig,
    config: &DrConfig,
    reward: &dyn RewardFn,
    stream: &RngStream,
) -> Result<f64> {
    config.validate()?;
    let batch = propagate(model, start, seq, planner.particles, reward, stream)?;
    dr_objective_from_batch(&batch, planner.discount, config)
}
