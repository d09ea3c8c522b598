//! Probabilistic ensemble dynamics model.
//!
//! Each member is an MLP with a diagonal Gaussian head over the observation
//! delta `next_obs - obs`. The ensemble as a whole is the uniform mixture of
//! its members' predictive densities.

mod checkpoint;
mod dataset;
pub mod mlp;
mod train;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_HEADER};
pub use dataset::{Normalization, TransitionDataset, STD_FLOOR};
pub use mlp::{Activation, Architecture, MlpParams};
pub use train::{train, TrainConfig, TrainingReport};

use crate::envsim::{EnvKind, Observation};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 4.0;

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Value part of [`clamp_log_var`].
#[inline]
pub(crate) fn clamp_log_var_value(raw: f64) -> f64 {
    let upper = LOG_VAR_MAX - softplus(LOG_VAR_MAX - raw);
    (LOG_VAR_MIN + softplus(upper - LOG_VAR_MIN)).clamp(LOG_VAR_MIN, LOG_VAR_MAX)
}

/// Smooth clamp of a log-variance into `[LOG_VAR_MIN, LOG_VAR_MAX]`,
/// returning the clamped value and its derivative.
#[inline]
pub(crate) fn clamp_log_var(raw: f64) -> (f64, f64) {
    let upper = LOG_VAR_MAX - softplus(LOG_VAR_MAX - raw);
    let out = LOG_VAR_MIN + softplus(upper - LOG_VAR_MIN);
    let grad = sigmoid(LOG_VAR_MAX - raw) * sigmoid(upper - LOG_VAR_MIN);
    (out.clamp(LOG_VAR_MIN, LOG_VAR_MAX), grad)
}

/// Diagonal Gaussian over the next-observation delta.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

/// Gradient of the Gaussian log-density with respect to the head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub d_mean: Vec<f64>,
    pub d_logvar: Vec<f64>,
}

impl ScoreVector {
    /// `(d_mean, d_logvar)` concatenated.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.d_mean.clone();
        v.extend_from_slice(&self.d_logvar);
        v
    }
}

/// Negative log-likelihood of `target_delta` under `pred`.
pub fn nll(pred: &GaussianPrediction, target_delta: &[f64]) -> f64 {
    assert_eq!(pred.mean.len(), target_delta.len());
    let d = target_delta.len() as f64;
    let quad: f64 = pred
        .mean
        .iter()
        .zip(&pred.log_variance)
        .zip(target_delta)
        .map(|((m, lv), t)| (t - m).powi(2) * (-lv).exp() + lv)
        .sum();
    0.5 * quad + 0.5 * d * (2.0 * PI).ln()
}

/// Gradient of [`nll`] with respect to `(mean, log_variance)`.
pub fn nll_grad(pred: &GaussianPrediction, target_delta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let s = score(pred, target_delta);
    (
        s.d_mean.iter().map(|v| -v).collect(),
        s.d_logvar.iter().map(|v| -v).collect(),
    )
}

/// Score of an observed delta: the analytic gradient of
/// `ln N(observed; mean, diag(exp(log_variance)))`.
pub fn score(pred: &GaussianPrediction, observed_delta: &[f64]) -> ScoreVector {
    assert_eq!(pred.mean.len(), observed_delta.len());
    let mut d_mean = Vec::with_capacity(observed_delta.len());
    let mut d_logvar = Vec::with_capacity(observed_delta.len());
    for ((m, lv), x) in pred.mean.iter().zip(&pred.log_variance).zip(observed_delta) {
        let inv_var = (-lv).exp();
        let r = x - m;
        d_mean.push(r * inv_var);
        d_logvar.push(0.5 * (r * r * inv_var - 1.0));
    }
    ScoreVector { d_mean, d_logvar }
}

/// Gaussian density of `delta` under `pred`.
pub fn density(pred: &GaussianPrediction, delta: &[f64]) -> f64 {
    (-nll(pred, delta)).exp()
}

/// Rescales a `(cos, sin)` pair back onto the unit circle.
pub(crate) fn renormalize_pair(v: &mut [f64], pair: Option<(usize, usize)>) {
    if let Some((c, s)) = pair {
        let n = v[c].hypot(v[s]);
        if n > 0.0 && n.is_finite() {
            v[c] /= n;
            v[s] /= n;
        }
    }
}

/// Draws `obs + mean + sqrt(exp(log_variance)) ⊙ z` and projects the angle
/// pair (if any) back onto the unit circle.
pub fn sample_next<R: Rng + ?Sized>(
    pred: &GaussianPrediction,
    obs: &Observation,
    angle_pair: Option<(usize, usize)>,
    rng: &mut R,
) -> Observation {
    let mut next: Vec<f64> = obs
        .0
        .iter()
        .zip(pred.mean.iter().zip(&pred.log_variance))
        .map(|(o, (m, lv))| {
            let z: f64 = rng.sample(StandardNormal);
            o + m + (0.5 * lv).exp() * z
        })
        .collect();
    renormalize_pair(&mut next, angle_pair);
    Observation(next)
}

/// Shape of the observation space the model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObsLayout {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub angle_pair: Option<(usize, usize)>,
}

impl ObsLayout {
    pub fn for_env(kind: EnvKind) -> Self {
        Self { obs_dim: kind.obs_dim(), action_dim: 1, angle_pair: Some(kind.angle_pair()) }
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.action_dim
    }
}

/// Ensemble members plus the normalisation statistics they share.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub layout: ObsLayout,
    pub norm: Normalization,
    pub members: Vec<MlpParams>,
}

/// Reusable buffers for [`EnsembleModel::predict_batch`].
#[derive(Debug, Default, Clone)]
pub struct PredictScratch {
    normalized: Vec<f64>,
    mlp: mlp::Scratch,
}

impl EnsembleModel {
    pub fn architecture(layout: ObsLayout, hidden: &[usize]) -> Architecture {
        Architecture {
            input_dim: layout.input_dim(),
            hidden: hidden.to_vec(),
            output_dim: 2 * layout.obs_dim,
            activation: Activation::Swish,
        }
    }

    /// Freshly initialised ensemble with identity normalisation.
    pub fn new(layout: ObsLayout, hidden: &[usize], members: usize, seed: u64) -> Result<Self> {
        if members == 0 {
            return Err(Error::InvalidConfig("ensemble needs at least one member".into()));
        }
        let arch = Self::architecture(layout, hidden);
        let root = RngStream::new(seed).purpose("ensemble-init");
        let members = (0..members)
            .map(|b| MlpParams::init(arch.clone(), &mut root.derive(b as u64).rng()))
            .collect();
        Ok(Self { layout, norm: Normalization::identity(layout), members })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Prediction of one member for one `(obs, action)` pair.
    pub fn forward(&self, member: usize, obs: &[f64], action: &[f64]) -> Result<GaussianPrediction> {
        forward(&self.members[member], obs, action, &self.norm)
    }

    /// Batched prediction for `rows` raw inputs (`obs ‖ action`, row-major).
    /// Fills `mean` and `log_var` with `rows × obs_dim` entries each.
    pub fn predict_batch(
        &self,
        member: usize,
        inputs: &[f64],
        rows: usize,
        scratch: &mut PredictScratch,
        mean: &mut Vec<f64>,
        log_var: &mut Vec<f64>,
    ) {
        let in_dim = self.layout.input_dim();
        let d = self.layout.obs_dim;
        scratch.normalized.clear();
        scratch.normalized.extend(inputs.iter().enumerate().map(|(i, x)| {
            let j = i % in_dim;
            (x - self.norm.input_mean[j]) / self.norm.input_std[j]
        }));
        let out = self.members[member].forward_batch(&scratch.normalized, rows, &mut scratch.mlp);
        mean.clear();
        log_var.clear();
        let log_var_shift: Vec<f64> = self.norm.target_std.iter().map(|s| 2.0 * s.ln()).collect();
        for row in out.chunks_exact(2 * d) {
            for j in 0..d {
                mean.push(row[j] * self.norm.target_std[j] + self.norm.target_mean[j]);
                log_var.push(clamp_log_var_value(row[d + j] + log_var_shift[j]));
            }
        }
    }

    /// Mixture density `(1/B) Σ_b N(next - obs; m_b, Σ_b)`.
    pub fn mixture_density(&self, obs: &[f64], action: &[f64], next: &[f64]) -> Result<f64> {
        let delta: Vec<f64> = next.iter().zip(obs).map(|(n, o)| n - o).collect();
        let mut total = 0.0;
        for b in 0..self.size() {
            total += density(&self.forward(b, obs, action)?, &delta);
        }
        Ok(total / self.size() as f64)
    }

    /// Converts a score taken in raw delta units to the model's normalised
    /// head-output coordinates (mean rescaled by the target deviation).
    pub fn normalized_score(&self, s: &ScoreVector) -> ScoreVector {
        ScoreVector {
            d_mean: s.d_mean.iter().zip(&self.norm.target_std).map(|(g, sd)| g * sd).collect(),
            d_logvar: s.d_logvar.clone(),
        }
    }
}

/// Single-input forward pass of one member.
pub fn forward(
    member: &MlpParams,
    obs: &[f64],
    action: &[f64],
    norm: &Normalization,
) -> Result<GaussianPrediction> {
    let d = obs.len();
    if member.input_dim() != d + action.len() || member.output_dim() != 2 * d {
        return Err(Error::InvalidInput(format!(
            "member expects {} inputs and {} outputs, got obs {} action {}",
            member.input_dim(),
            member.output_dim(),
            d,
            action.len()
        )));
    }
    let x: Vec<f64> = obs
        .iter()
        .chain(action)
        .enumerate()
        .map(|(j, v)| (v - norm.input_mean[j]) / norm.input_std[j])
        .collect();
    let mut scratch = mlp::Scratch::default();
    let out = member.forward_batch(&x, 1, &mut scratch);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::ModelDivergence("network output is not finite".into()));
    }
    let mean = (0..d).map(|j| out[j] * norm.target_std[j] + norm.target_mean[j]).collect();
    let log_variance = (0..d)
        .map(|j| clamp_log_var_value(out[d + j] + 2.0 * norm.target_std[j].ln()))
        .collect();
    Ok(GaussianPrediction { mean, log_variance })
}
