//! Pendulum and cart-pole swing-up simulators.
//!
//! Both tasks use the angle convention `0 = upright` and integrate with a
//! fixed-step fourth-order Runge-Kutta scheme. Everything here is a pure
//! function of its inputs and an explicit seed.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Pendulum,
    CartpoleSwingup,
}

impl EnvKind {
    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::Pendulum => 3,
            EnvKind::CartpoleSwingup => 5,
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            EnvKind::Pendulum => 2,
            EnvKind::CartpoleSwingup => 4,
        }
    }

    /// Indices of the `(cos, sin)` pair inside an observation.
    pub fn angle_pair(self) -> (usize, usize) {
        match self {
            EnvKind::Pendulum => (0, 1),
            EnvKind::CartpoleSwingup => (2, 3),
        }
    }

    pub fn nominal_params(self) -> EnvParams {
        match self {
            EnvKind::Pendulum => EnvParams {
                dt: 0.05,
                action_low: -2.0,
                action_high: 2.0,
                ..EnvParams::default()
            },
            EnvKind::CartpoleSwingup => EnvParams {
                dt: 0.02,
                action_low: -10.0,
                action_high: 10.0,
                ..EnvParams::default()
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::CartpoleSwingup => "cartpole_swingup",
        }
    }
}

/// Physical parameters shared by both tasks. Each task reads only the
/// fields that apply to it, so a sweep mutates exactly one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    pub pendulum_mass: f64,
    pub pendulum_length: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub cart_mass: f64,
    pub gravity: f64,
    pub dt: f64,
    pub action_low: f64,
    pub action_high: f64,
    pub max_angular_velocity: f64,
    /// Half-width of the uniform noise added to the resting start state.
    pub init_noise: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            pendulum_mass: 1.0,
            pendulum_length: 0.5,
            pole_mass: 1.0,
            pole_length: 0.5,
            cart_mass: 1.0,
            gravity: 9.81,
            dt: 0.05,
            action_low: -2.0,
            action_high: 2.0,
            max_angular_velocity: 8.0,
            init_noise: 0.05,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pendulum_mass", self.pendulum_mass),
            ("pendulum_length", self.pendulum_length),
            ("pole_mass", self.pole_mass),
            ("pole_length", self.pole_length),
            ("cart_mass", self.cart_mass),
            ("gravity", self.gravity),
            ("max_angular_velocity", self.max_angular_velocity),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::InvalidConfig(format!("dt must lie in (0, 0.1], got {}", self.dt)));
        }
        if !(self.action_low.is_finite() && self.action_high.is_finite())
            || self.action_low >= self.action_high
        {
            return Err(Error::InvalidConfig(format!(
                "action bounds must satisfy low < high, got [{}, {}]",
                self.action_low, self.action_high
            )));
        }
        if !(self.init_noise.is_finite() && self.init_noise >= 0.0) {
            return Err(Error::InvalidConfig("init_noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn clip_action(&self, u: f64) -> f64 {
        u.clamp(self.action_low, self.action_high)
    }

    fn max_abs_action(&self) -> f64 {
        self.action_low.abs().max(self.action_high.abs())
    }

    /// Smallest reward the task can emit. Diverged model rollouts are
    /// charged this value.
    pub fn reward_floor(&self, kind: EnvKind) -> f64 {
        let u = self.max_abs_action();
        match kind {
            EnvKind::Pendulum => {
                -(PI * PI + 0.1 * self.max_angular_velocity.powi(2) + 0.001 * u * u)
            }
            EnvKind::CartpoleSwingup => -0.01 * u * u,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvState {
    Pendulum {
        angle: f64,
        angular_velocity: f64,
    },
    Cartpole {
        cart_position: f64,
        cart_velocity: f64,
        pole_angle: f64,
        pole_angular_velocity: f64,
    },
}

impl EnvState {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvState::Pendulum { .. } => EnvKind::Pendulum,
            EnvState::Cartpole { .. } => EnvKind::CartpoleSwingup,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            EnvState::Pendulum { angle, angular_velocity } => vec![angle, angular_velocity],
            EnvState::Cartpole {
                cart_position,
                cart_velocity,
                pole_angle,
                pole_angular_velocity,
            } => vec![cart_position, cart_velocity, pole_angle, pole_angular_velocity],
        }
    }

    pub fn from_slice(kind: EnvKind, v: &[f64]) -> Result<Self> {
        if v.len() != kind.state_dim() {
            return Err(Error::InvalidInput(format!(
                "{} state needs {} entries, got {}",
                kind.name(),
                kind.state_dim(),
                v.len()
            )));
        }
        Ok(match kind {
            EnvKind::Pendulum => EnvState::Pendulum { angle: v[0], angular_velocity: v[1] },
            EnvKind::CartpoleSwingup => EnvState::Cartpole {
                cart_position: v[0],
                cart_velocity: v[1],
                pole_angle: v[2],
                pole_angular_velocity: v[3],
            },
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// Encoded state as seen by the learned model.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub observations: Vec<Observation>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub total_reward: f64,
    pub seed: u64,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    PI - (PI - theta).rem_euclid(2.0 * PI)
}

/// RK4 steps per control interval.
const SUBSTEPS: usize = 2;

fn integrate<const N: usize>(mut x: [f64; N], dt: f64, f: impl Fn(&[f64; N]) -> [f64; N]) -> [f64; N] {
    let h = dt / SUBSTEPS as f64;
    for _ in 0..SUBSTEPS {
        x = rk4(x, h, &f);
    }
    x
}

fn rk4<const N: usize>(x: [f64; N], dt: f64, f: impl Fn(&[f64; N]) -> [f64; N]) -> [f64; N] {
    let shift = |base: &[f64; N], k: &[f64; N], h: f64| {
        let mut out = *base;
        for i in 0..N {
            out[i] += h * k[i];
        }
        out
    };
    let k1 = f(&x);
    let k2 = f(&shift(&x, &k1, dt / 2.0));
    let k3 = f(&shift(&x, &k2, dt / 2.0));
    let k4 = f(&shift(&x, &k3, dt));
    let mut out = x;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// `sin` after reduction into `[-pi/2, pi/2]`, so that `sin(0)` and
/// `sin(pi)` are both exactly zero.
fn reduced_sin(theta: f64) -> f64 {
    let w = wrap_angle(theta);
    if w > FRAC_PI_2 {
        (PI - w).sin()
    } else if w < -FRAC_PI_2 {
        -(PI + w).sin()
    } else {
        w.sin()
    }
}

/// `-(3g / 2l) sin(theta + pi) + 3u / (m l^2)`, written as `+sin(theta)`.
fn pendulum_rhs(x: &[f64; 2], u: f64, p: &EnvParams) -> [f64; 2] {
    let (m, l, g) = (p.pendulum_mass, p.pendulum_length, p.gravity);
    let acc = (3.0 * g / (2.0 * l)) * reduced_sin(x[0]) + 3.0 * u / (m * l * l);
    [x[1], acc]
}

/// Cart-pole with a uniform rod of length `pole_length` hinged on the cart.
fn cartpole_rhs(x: &[f64; 4], u: f64, p: &EnvParams) -> [f64; 4] {
    let (mc, mp, g) = (p.cart_mass, p.pole_mass, p.gravity);
    let half = 0.5 * p.pole_length;
    let total = mc + mp;
    let (sin, cos) = x[2].sin_cos();
    let temp = (u + mp * half * x[3] * x[3] * sin) / total;
    let theta_acc = (g * sin - cos * temp) / (half * (4.0 / 3.0 - mp * cos * cos / total));
    let x_acc = temp - mp * half * theta_acc * cos / total;
    [x[1], x_acc, x[3], theta_acc]
}

/// Advances the state by one `dt`.
pub fn step(kind: EnvKind, state: &EnvState, action: f64, params: &EnvParams) -> Result<EnvState> {
    if state.kind() != kind {
        return Err(Error::InvalidInput(format!(
            "state of kind {} passed to a {} step",
            state.kind().name(),
            kind.name()
        )));
    }
    if !action.is_finite() || !state.is_finite() {
        return Err(Error::InvalidInput("non-finite state or action".into()));
    }
    Ok(match *state {
        EnvState::Pendulum { angle, angular_velocity } => {
            let [a, w] = integrate([angle, angular_velocity], params.dt, |x| {
                pendulum_rhs(x, action, params)
            });
            let limit = params.max_angular_velocity;
            EnvState::Pendulum { angle: a, angular_velocity: w.clamp(-limit, limit) }
        }
        EnvState::Cartpole {
            cart_position,
            cart_velocity,
            pole_angle,
            pole_angular_velocity,
        } => {
            let x = [cart_position, cart_velocity, pole_angle, pole_angular_velocity];
            let [p, v, a, w] = integrate(x, params.dt, |x| cartpole_rhs(x, action, params));
            EnvState::Cartpole {
                cart_position: p,
                cart_velocity: v,
                pole_angle: a,
                pole_angular_velocity: w,
            }
        }
    })
}

fn cartpole_reward(x: f64, sin: f64, cos: f64, action: f64, pole_length: f64) -> f64 {
    let dx = x + pole_length * sin;
    let dy = pole_length * cos - pole_length;
    let width = 0.5 * pole_length;
    (-(dx * dx + dy * dy) / (width * width)).exp() - 0.01 * action * action
}

/// Per-step reward. The cart-pole reward reads `pole_length` from `params`.
pub fn reward(kind: EnvKind, state: &EnvState, action: f64, params: &EnvParams) -> Result<f64> {
    if state.kind() != kind || !state.is_finite() || !action.is_finite() {
        return Err(Error::InvalidInput("reward needs a finite state of the matching kind".into()));
    }
    Ok(match *state {
        EnvState::Pendulum { angle, angular_velocity } => {
            let th = wrap_angle(angle);
            -(th * th + 0.1 * angular_velocity * angular_velocity + 0.001 * action * action)
        }
        EnvState::Cartpole { cart_position, pole_angle, .. } => {
            let (sin, cos) = pole_angle.sin_cos();
            cartpole_reward(cart_position, sin, cos, action, params.pole_length)
        }
    })
}

/// The same reward evaluated on an encoded observation. This is the form
/// the planner uses on model-predicted observations.
pub fn reward_from_obs(kind: EnvKind, obs: &[f64], action: f64, params: &EnvParams) -> f64 {
    match kind {
        EnvKind::Pendulum => {
            let th = obs[1].atan2(obs[0]);
            -(th * th + 0.1 * obs[2] * obs[2] + 0.001 * action * action)
        }
        EnvKind::CartpoleSwingup => {
            let norm = obs[2].hypot(obs[3]);
            cartpole_reward(obs[0], obs[3] / norm, obs[2] / norm, action, params.pole_length)
        }
    }
}

pub fn observe(kind: EnvKind, state: &EnvState) -> Result<Observation> {
    if state.kind() != kind {
        return Err(Error::InvalidInput("observe called with a state of another kind".into()));
    }
    ensure_finite(&state.to_vec(), "state")?;
    Ok(match *state {
        EnvState::Pendulum { angle, angular_velocity } => {
            let (s, c) = angle.sin_cos();
            Observation(vec![c, s, angular_velocity])
        }
        EnvState::Cartpole {
            cart_position,
            cart_velocity,
            pole_angle,
            pole_angular_velocity,
        } => {
            let (s, c) = pole_angle.sin_cos();
            Observation(vec![cart_position, cart_velocity, c, s, pole_angular_velocity])
        }
    })
}

/// Start state with the default noise level.
pub fn reset(kind: EnvKind, seed: u64) -> EnvState {
    reset_with_noise(kind, seed, EnvParams::default().init_noise)
}

/// Resting hanging state plus uniform noise of half-width `noise`.
pub fn reset_with_noise(kind: EnvKind, seed: u64, noise: f64) -> EnvState {
    let mut rng = RngStream::new(seed).purpose("reset").rng();
    let mut jitter = || if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
    match kind {
        EnvKind::Pendulum => {
            EnvState::Pendulum { angle: PI + jitter(), angular_velocity: jitter() }
        }
        EnvKind::CartpoleSwingup => EnvState::Cartpole {
            cart_position: jitter(),
            cart_velocity: jitter(),
            pole_angle: PI + jitter(),
            pole_angular_velocity: jitter(),
        },
    }
}

/// Something that picks an action for the current state.
pub trait Policy {
    fn act(&mut self, state: &EnvState, obs: &Observation, step: usize) -> Result<f64>;
}

impl<F> Policy for F
where
    F: FnMut(&EnvState) -> f64,
{
    fn act(&mut self, state: &EnvState, _obs: &Observation, _step: usize) -> Result<f64> {
        Ok(self(state))
    }
}

/// Runs `horizon` steps from `reset`. Actions are clipped to the bounds
/// before stepping and the clipped value is what the record stores.
pub fn run_episode<P: Policy + ?Sized>(
    kind: EnvKind,
    params: &EnvParams,
    policy: &mut P,
    horizon: usize,
    seed: u64,
) -> Result<EpisodeRecord> {
    if horizon == 0 {
        return Err(Error::InvalidInput("episode horizon must be at least 1".into()));
    }
    params.validate()?;
    let mut state = reset_with_noise(kind, seed, params.init_noise);
    let mut observations = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    observations.push(observe(kind, &state)?);
    for t in 0..horizon {
        let obs = observations.last().expect("seeded with the start observation");
        let raw = policy
            .act(&state, obs, t)
            .map_err(|e| Error::EpisodeAborted { step: t, reason: e.to_string() })?;
        if !raw.is_finite() {
            return Err(Error::EpisodeAborted { step: t, reason: "non-finite action".into() });
        }
        let u = params.clip_action(raw);
        rewards.push(reward(kind, &state, u, params)?);
        state = step(kind, &state, u, params)
            .map_err(|e| Error::EpisodeAborted { step: t, reason: e.to_string() })?;
        actions.push(u);
        observations.push(observe(kind, &state)?);
    }
    let total_reward = rewards.iter().sum();
    Ok(EpisodeRecord { observations, actions, rewards, total_reward, seed })
}
