//! Run configuration: one TOML file whose sections mirror the library
//! configs. Missing keys take the defaults of the selected environment;
//! unknown keys are errors.

use drpets_bench::{Algorithm, SweepParam, SweepSpec, TrainRunConfig};
use drpets_core::{DrConfig, EnvKind, EnvParams, PNorm, PlannerConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub seed: u64,
    pub workers: usize,
    pub params: EnvParams,
    pub planner: PlannerConfig,
    pub dr: DrConfig,
    pub model: ModelSection,
    pub collect: CollectSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub ensemble_size: usize,
    pub hidden: Vec<usize>,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub random_episodes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectSection {
    pub episodes: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub param: SweepParam,
    pub grid: Vec<f64>,
    pub seeds_per_point: usize,
    pub algorithm: Algorithm,
    pub horizon: usize,
    /// Train a fresh ensemble while planning with the robust objective
    /// instead of sharing the checkpoint.
    pub retrain: bool,
}

impl RunConfig {
    pub fn defaults(env: EnvKind) -> Self {
        let params = env.nominal_params();
        let train = TrainRunConfig::default();
        let (param, grid) = match env {
            EnvKind::Pendulum => (SweepParam::PendulumMass, vec![0.5, 0.75, 1.0, 1.25, 1.5]),
            EnvKind::CartpoleSwingup => (SweepParam::PoleLength, vec![0.2, 0.35, 0.5, 0.65, 0.8]),
        };
        Self {
            env,
            seed: 0,
            workers: 1,
            params,
            planner: PlannerConfig::for_env(&params),
            dr: DrConfig::default(),
            model: ModelSection {
                ensemble_size: train.ensemble_size,
                hidden: train.hidden,
                episodes: train.episodes,
                steps_per_episode: train.steps_per_episode,
                random_episodes: train.random_episodes,
                epochs: train.train.epochs,
                batch_size: train.train.batch_size,
                learning_rate: train.train.learning_rate,
            },
            collect: CollectSection { episodes: 1, horizon: train.steps_per_episode },
            sweep: SweepSection {
                param,
                grid,
                seeds_per_point: 10,
                algorithm: Algorithm::Pets,
                horizon: train.steps_per_episode,
                retrain: false,
            },
        }
    }

    /// Parses a config file over the defaults of its `env` (pendulum when
    /// absent).
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let env = match user.get("env") {
            None => EnvKind::Pendulum,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| CliError::Config(format!("key `env`: {}", e.message())))?,
        };
        let mut merged = toml::Table::try_from(Self::defaults(env)).expect("defaults serialise");
        merge(&mut merged, user, "")?;
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_owned()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = |r: Result<(), String>| r.map_err(CliError::Config);
        v(self.params.validate().map_err(|e| format!("[params] {e}")))?;
        v(self.planner.validate().map_err(|e| format!("[planner] {e}")))?;
        v(self.dr.validate().map_err(|e| format!("[dr] {e}")))?;
        v(self.train_run().validate().map_err(|e| format!("[model] {e}")))?;
        v(self.sweep_spec().validate().map_err(|e| format!("[sweep] {e}")))?;
        if self.workers == 0 {
            return Err(CliError::Config("key `workers` must be at least 1".into()));
        }
        if self.collect.episodes == 0 || self.collect.horizon == 0 {
            return Err(CliError::Config("[collect] episodes and horizon must be at least 1".into()));
        }
        let fits = match (self.env, self.sweep.param) {
            (EnvKind::Pendulum, SweepParam::PendulumMass) | (EnvKind::CartpoleSwingup, SweepParam::PoleLength) => true,
            _ => false,
        };
        if !fits {
            return Err(CliError::Config(format!(
                "[sweep] key `param`: {} has no effect on {}",
                self.sweep.param.name(),
                self.env.name()
            )));
        }
        Ok(())
    }

    pub fn train_run(&self) -> TrainRunConfig {
        let m = &self.model;
        TrainRunConfig {
            episodes: m.episodes,
            steps_per_episode: m.steps_per_episode,
            random_episodes: m.random_episodes,
            ensemble_size: m.ensemble_size,
            hidden: m.hidden.clone(),
            train: TrainConfig { epochs: m.epochs, batch_size: m.batch_size, learning_rate: m.learning_rate, seed: 0 },
            planner: self.planner,
            dr: DrConfig { epsilon: 0.0, ..self.dr },
            seed: self.seed,
        }
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            env: self.env,
            param: self.sweep.param,
            grid: self.sweep.grid.clone(),
            seeds_per_point: self.sweep.seeds_per_point,
            algorithm: self.sweep.algorithm,
            dr: self.dr,
            planner: self.planner,
            horizon: self.sweep.horizon,
            seed: self.seed,
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(e) = o.epsilon {
            self.dr.epsilon = e;
        }
        if let Some(p) = o.p {
            self.dr.p = p;
        }
        if let Some(a) = o.algorithm {
            self.sweep.algorithm = a;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub p: Option<PNorm>,
    pub algorithm: Option<Algorithm>,
    pub workers: Option<usize>,
}

fn merge(base: &mut toml::Table, user: toml::Table, path: &str) -> Result<(), CliError> {
    for (k, v) in user {
        let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u, &key)?,
            (Some(toml::Value::Table(_)), _) => return Err(CliError::Config(format!("key `{key}` must be a table"))),
            (None, _) => return Err(CliError::Config(format!("unknown key `{key}`"))),
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_pendulum_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::defaults(EnvKind::Pendulum));
    }

    #[test]
    fn env_selects_its_defaults() {
        let c = RunConfig::from_toml("env = \"cartpole_swingup\"\n[planner]\nhorizon = 7\n").unwrap();
        assert_eq!(c.params.action_high, 10.0);
        assert_eq!(c.planner.action_high, 10.0);
        assert_eq!(c.planner.horizon, 7);
        assert_eq!(c.sweep.param, SweepParam::PoleLength);
    }

    #[test]
    fn unknown_keys_are_named() {
        for (text, key) in [("sed = 1", "sed"), ("[planner]\nhorizn = 3", "planner.horizn"), ("[nope]\na = 1", "nope")] {
            let err = RunConfig::from_toml(text).unwrap_err().to_string();
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(RunConfig::from_toml("[planner]\nhorizon = \"x\"").is_err());
        assert!(RunConfig::from_toml("[dr]\np = \"3\"").is_err());
        let c = RunConfig::from_toml("[sweep]\ngrid = [1.0, 0.5]").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::from_toml("[sweep]\nparam = \"pole_length\"").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::defaults(EnvKind::CartpoleSwingup);
        c.dr.epsilon = 0.1 + 0.2;
        c.model.learning_rate = 1.0 / 3.0;
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
