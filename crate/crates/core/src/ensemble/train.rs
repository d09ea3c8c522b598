//! Bootstrap mini-batch training of ensemble members on the Gaussian
//! negative log-likelihood.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, MlpParams, Scratch};
use super::{clamp_log_var, EnsembleModel, TransitionDataset};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 64, learning_rate: 1e-3, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Mean training loss of every epoch, per member.
    pub member_losses: Vec<Vec<f64>>,
}

impl TrainingReport {
    pub fn final_losses(&self) -> Vec<f64> {
        self.member_losses.iter().map(|c| *c.last().unwrap_or(&f64::NAN)).collect()
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut MlpParams, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params.params_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains every member on its own bootstrap resample of `data`, after
/// resetting the model's normalisation to the dataset's statistics.
pub fn train(model: &mut EnsembleModel, data: &TransitionDataset, config: &TrainConfig) -> Result<TrainingReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty dataset".into()));
    }
    if data.layout() != model.layout {
        return Err(Error::InvalidInput("dataset layout does not match the model".into()));
    }
    model.norm = data.normalization().clone();

    // Normalised inputs and raw targets for the whole dataset, computed once.
    let in_dim = model.layout.input_dim();
    let d = model.layout.obs_dim;
    let mut inputs = Vec::with_capacity(data.len() * in_dim);
    let mut targets = Vec::with_capacity(data.len() * d);
    for (o, u, n) in data.rows() {
        let raw: Vec<f64> = o.iter().chain(u).copied().collect();
        inputs.extend(model.norm.normalize_input(&raw));
        targets.extend(n.iter().zip(o).map(|(n, o)| n - o));
    }

    let root = RngStream::new(config.seed).purpose("ensemble-train");
    let norm = model.norm.clone();
    let mut member_losses = Vec::with_capacity(model.size());
    for (b, member) in model.members.iter_mut().enumerate() {
        let ctx = MemberData { inputs: &inputs, targets: &targets, in_dim, obs_dim: d, norm: &norm };
        member_losses.push(train_member(b, member, &ctx, config, root.derive(b as u64))?);
    }
    Ok(TrainingReport { member_losses })
}

struct MemberData<'a> {
    inputs: &'a [f64],
    targets: &'a [f64],
    in_dim: usize,
    obs_dim: usize,
    norm: &'a super::Normalization,
}

fn train_member(
    index: usize,
    params: &mut MlpParams,
    data: &MemberData<'_>,
    config: &TrainConfig,
    stream: RngStream,
) -> Result<Vec<f64>> {
    let n = data.targets.len() / data.obs_dim;
    let mut rng = stream.rng();
    let mut order: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();

    let (in_dim, d) = (data.in_dim, data.obs_dim);
    let log_sd: Vec<f64> = data.norm.target_std.iter().map(|s| 2.0 * s.ln()).collect();
    let mut adam = Adam::new(params.arch.param_count());
    let mut scratch = Scratch::default();
    let mut grads = Gradients::zeros_like(params);
    let mut batch_x = Vec::new();
    let mut d_out = Vec::new();
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let rows = chunk.len();
            batch_x.clear();
            for &i in chunk {
                batch_x.extend_from_slice(&data.inputs[i * in_dim..(i + 1) * in_dim]);
            }
            let out = params.forward_batch(&batch_x, rows, &mut scratch);
            d_out.clear();
            d_out.resize(rows * 2 * d, 0.0);
            let mut batch_loss = 0.0;
            for (r, &i) in chunk.iter().enumerate() {
                let row = &out[r * 2 * d..(r + 1) * 2 * d];
                let target = &data.targets[i * d..(i + 1) * d];
                for j in 0..d {
                    let sd = data.norm.target_std[j];
                    let mean = row[j] * sd + data.norm.target_mean[j];
                    let (lv, dlv) = clamp_log_var(row[d + j] + log_sd[j]);
                    let inv_var = (-lv).exp();
                    let resid = target[j] - mean;
                    batch_loss += 0.5 * (resid * resid * inv_var + lv);
                    d_out[r * 2 * d + j] = -resid * inv_var * sd / rows as f64;
                    d_out[r * 2 * d + d + j] =
                        0.5 * (1.0 - resid * resid * inv_var) * dlv / rows as f64;
                }
            }
            params.backward_batch(&batch_x, rows, &scratch, &mut d_out, &mut grads);
            adam.step(params, &grads, config.learning_rate);
            epoch_loss += batch_loss;
        }
        // The constant (d/2) ln 2π is added so the curve reports the full NLL.
        let mean_loss = epoch_loss / n as f64 + 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
        if !mean_loss.is_finite() || !params.is_finite() {
            return Err(Error::TrainingDivergence { member: index, epoch });
        }
        curve.push(mean_loss);
    }
    Ok(curve)
}
