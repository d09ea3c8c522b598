use std::fmt;
use std::str::FromStr;

use drpets_core::envsim::run_episode;
use drpets_core::planner::EnvReward;
use drpets_core::rng::RngStream;
use drpets_core::{DrConfig, EnsembleModel, EnvKind, EnvParams, MpcPolicy, PNorm, PlannerConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::stats::aggregate;

/// The physical parameter a sweep perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    PendulumMass,
    PoleLength,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::PendulumMass => "pendulum_mass",
            SweepParam::PoleLength => "pole_length",
        }
    }

    pub fn apply(self, params: &EnvParams, value: f64) -> EnvParams {
        let mut p = *params;
        match self {
            SweepParam::PendulumMass => p.pendulum_mass = value,
            SweepParam::PoleLength => p.pole_length = value,
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Algorithm {
    Pets,
    DrPets,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Pets => "PETS",
            Algorithm::DrPets => "DR-PETS",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "pets" => Ok(Algorithm::Pets),
            "dr-pets" | "drpets" => Ok(Algorithm::DrPets),
            other => Err(BenchError::InvalidSpec(format!("unknown algorithm `{other}` (expected PETS or DR-PETS)"))),
        }
    }
}

impl TryFrom<String> for Algorithm {
    type Error = BenchError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> String {
        a.tag().to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub env: EnvKind,
    pub param: SweepParam,
    pub grid: Vec<f64>,
    pub seeds_per_point: usize,
    pub algorithm: Algorithm,
    pub dr: DrConfig,
    pub planner: PlannerConfig,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            env: EnvKind::Pendulum,
            param: SweepParam::PendulumMass,
            grid: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            seeds_per_point: 10,
            algorithm: Algorithm::Pets,
            dr: DrConfig::default(),
            planner: PlannerConfig::default(),
            horizon: 200,
            seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.grid.iter().any(|v| !v.is_finite()) {
            return Err(BenchError::InvalidSpec("grid must be a nonempty list of finite values".into()));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BenchError::InvalidSpec("grid must be strictly increasing".into()));
        }
        if self.seeds_per_point == 0 || self.horizon == 0 {
            return Err(BenchError::InvalidSpec("seeds_per_point and horizon must be at least 1".into()));
        }
        self.dr.validate()?;
        self.planner.validate()?;
        Ok(())
    }

    /// The robust configuration actually planned with; PETS plans with a
    /// zero radius.
    pub fn effective_dr(&self) -> DrConfig {
        match self.algorithm {
            Algorithm::Pets => DrConfig { epsilon: 0.0, ..self.dr },
            Algorithm::DrPets => self.dr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub mean_reward: f64,
    pub stderr: f64,
    pub n_seeds: usize,
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub p: PNorm,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Rows of both results, `self` first.
    pub fn merged(&self, other: &SweepResult) -> SweepResult {
        SweepResult { rows: self.rows.iter().chain(&other.rows).cloned().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDiagnostic {
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub param: f64,
    pub seed_index: usize,
    pub total_reward: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnostic {
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub param: f64,
    pub succeeded: usize,
    pub failed: usize,
    /// False when a single episode succeeded and the standard error is the
    /// conventional zero.
    pub stderr_defined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub result: SweepResult,
    pub episodes: Vec<EpisodeDiagnostic>,
    pub points: Vec<PointDiagnostic>,
}

/// The planner as used against `params`: action bounds always follow the
/// environment.
pub(crate) fn planner_for(planner: &PlannerConfig, params: &EnvParams) -> PlannerConfig {
    PlannerConfig { action_low: params.action_low, action_high: params.action_high, ..*planner }
}

/// Reset seed and planner stream of one sweep episode. Keyed by the grid
/// value itself, not its position, so reordering the grid changes nothing.
pub fn episode_streams(seed: u64, value: f64, seed_index: usize) -> (u64, RngStream) {
    let root = RngStream::new(seed).purpose("sweep").derive(value.to_bits()).derive(seed_index as u64);
    (root.purpose("reset").key(), root.purpose("plan"))
}

/// Runs `seeds_per_point` MPC episodes at every grid value, with the agent
/// planning against `nominal` and the environment perturbed.
pub fn sweep(model: &EnsembleModel, spec: &SweepSpec, nominal: &EnvParams, workers: usize) -> Result<SweepOutcome> {
    sweep_with(model, spec, nominal, workers, &|_| {})
}

pub fn sweep_with(
    model: &EnsembleModel,
    spec: &SweepSpec,
    nominal: &EnvParams,
    workers: usize,
    progress: &(dyn Fn(&EpisodeDiagnostic) + Sync),
) -> Result<SweepOutcome> {
    spec.validate()?;
    nominal.validate()?;
    let dr = spec.effective_dr();
    let planner = planner_for(&spec.planner, nominal);
    let reward = EnvReward { kind: spec.env, params: *nominal };
    let jobs: Vec<(f64, usize)> =
        spec.grid.iter().flat_map(|&v| (0..spec.seeds_per_point).map(move |s| (v, s))).collect();

    let run = |&(value, seed_index): &(f64, usize)| -> EpisodeDiagnostic {
        let (reset_seed, stream) = episode_streams(spec.seed, value, seed_index);
        let env = spec.param.apply(nominal, value);
        let outcome = MpcPolicy::new(model, reward, planner, dr, stream)
            .and_then(|mut policy| run_episode(spec.env, &env, &mut policy, spec.horizon, reset_seed));
        let diag = match outcome {
            Ok(record) => EpisodeDiagnostic {
                algorithm: spec.algorithm,
                epsilon: dr.epsilon,
                param: value,
                seed_index,
                total_reward: Some(record.total_reward),
                status: "ok".into(),
            },
            Err(e) => EpisodeDiagnostic {
                algorithm: spec.algorithm,
                epsilon: dr.epsilon,
                param: value,
                seed_index,
                total_reward: None,
                status: format!("failed: {e}"),
            },
        };
        progress(&diag);
        diag
    };
    let episodes: Vec<EpisodeDiagnostic> = if workers <= 1 {
        jobs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| BenchError::InvalidSpec(format!("cannot start {workers} workers: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    };

    let mut rows = Vec::with_capacity(spec.grid.len());
    let mut points = Vec::with_capacity(spec.grid.len());
    for (gi, &value) in spec.grid.iter().enumerate() {
        let chunk = &episodes[gi * spec.seeds_per_point..(gi + 1) * spec.seeds_per_point];
        let totals: Vec<f64> = chunk.iter().filter_map(|d| d.total_reward).collect();
        let failed = chunk.len() - totals.len();
        if totals.is_empty() {
            return Err(BenchError::NoSuccesses { param: value, failed });
        }
        let (mean_reward, stderr) = aggregate(&totals)?;
        points.push(PointDiagnostic {
            algorithm: spec.algorithm,
            epsilon: dr.epsilon,
            param: value,
            succeeded: totals.len(),
            failed,
            stderr_defined: totals.len() > 1,
        });
        rows.push(SweepRow {
            param: value,
            mean_reward,
            stderr,
            n_seeds: totals.len(),
            algorithm: spec.algorithm,
            epsilon: dr.epsilon,
            p: dr.p,
        });
    }
    Ok(SweepOutcome { result: SweepResult { rows }, episodes, points })
}
