use drpets_core::ensemble::{train, ObsLayout};
use drpets_core::envsim::run_episode;
use drpets_core::planner::EnvReward;
use drpets_core::rng::RngStream;
use drpets_core::{DrConfig, EnsembleModel, EnvKind, EnvParams, MpcPolicy, PlannerConfig, TrainConfig, TransitionDataset};
use serde::{Deserialize, Serialize};

use crate::collect::{append_episodes, dataset_from_episodes, random_episodes};
use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    /// Total episodes, random ones included.
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub random_episodes: usize,
    pub ensemble_size: usize,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub planner: PlannerConfig,
    /// Objective planned with while collecting data; zero radius is plain
    /// PETS.
    pub dr: DrConfig,
    pub seed: u64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            episodes: 30,
            steps_per_episode: 200,
            random_episodes: 1,
            ensemble_size: 5,
            hidden: vec![32, 32],
            train: TrainConfig::default(),
            planner: PlannerConfig::default(),
            dr: DrConfig::default(),
            seed: 0,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BenchError::InvalidSpec(m.into()));
        if self.episodes == 0 || self.steps_per_episode == 0 {
            return bad("episodes and steps_per_episode must be positive");
        }
        if self.random_episodes == 0 || self.random_episodes > self.episodes {
            return bad("random_episodes must lie in 1..=episodes");
        }
        if self.ensemble_size == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("ensemble_size and hidden widths must be positive");
        }
        self.train.validate()?;
        self.planner.validate()?;
        self.dr.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub random: bool,
    pub total_reward: f64,
    pub dataset_rows: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub model: EnsembleModel,
    pub curve: Vec<EpisodeLog>,
    pub dataset: TransitionDataset,
}

/// Random episodes first, then MPC episodes each
/// followed by retraining the ensemble on everything collected so far.
pub fn train_agent(config: &TrainRunConfig, kind: EnvKind, params: &EnvParams) -> Result<TrainedAgent> {
    train_agent_with(config, kind, params, &mut |_| {})
}

/// [`train_agent`], reporting each finished episode to `progress`.
pub fn train_agent_with(
    config: &TrainRunConfig,
    kind: EnvKind,
    params: &EnvParams,
    progress: &mut dyn FnMut(&EpisodeLog),
) -> Result<TrainedAgent> {
    config.validate()?;
    params.validate()?;
    let master = RngStream::new(config.seed);
    let layout = ObsLayout::for_env(kind);
    let mut model =
        EnsembleModel::new(layout, &config.hidden, config.ensemble_size, master.purpose("init").key())?;
    let train_round = |model: &mut EnsembleModel, data: &TransitionDataset, episode: usize| {
        let cfg = TrainConfig { seed: master.purpose("train").derive(episode as u64).key(), ..config.train };
        train(model, data, &cfg).map_err(|source| BenchError::Episode { episode, source })
    };

    let n_random = config.random_episodes;
    let warmup = random_episodes(kind, params, n_random, config.steps_per_episode, master.purpose("random").key())?;
    let mut dataset = dataset_from_episodes(kind, &warmup)?;
    let mut curve = Vec::with_capacity(config.episodes);
    for (e, ep) in warmup.iter().enumerate() {
        let log = EpisodeLog {
            episode: e,
            random: true,
            total_reward: ep.total_reward,
            dataset_rows: (e + 1) * config.steps_per_episode,
        };
        progress(&log);
        curve.push(log);
    }
    train_round(&mut model, &dataset, n_random - 1)?;

    let reward = EnvReward { kind, params: *params };
    let planner = crate::sweep::planner_for(&config.planner, params);
    for e in n_random..config.episodes {
        let stream = master.purpose("mpc").derive(e as u64);
        let mut policy = MpcPolicy::new(&model, reward, planner, config.dr, stream)?;
        let reset_seed = master.purpose("reset").derive(e as u64).key();
        let record = run_episode(kind, params, &mut policy, config.steps_per_episode, reset_seed)
            .map_err(|source| BenchError::Episode { episode: e, source })?;
        append_episodes(&mut dataset, std::slice::from_ref(&record))?;
        train_round(&mut model, &dataset, e)?;
        let log = EpisodeLog { episode: e, random: false, total_reward: record.total_reward, dataset_rows: dataset.len() };
        progress(&log);
        curve.push(log);
    }
    Ok(TrainedAgent { model, curve, dataset })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainRunConfig {
        TrainRunConfig {
            episodes: 2,
            steps_per_episode: 20,
            random_episodes: 1,
            ensemble_size: 2,
            hidden: vec![8],
            train: TrainConfig { epochs: 2, ..TrainConfig::default() },
            planner: PlannerConfig { horizon: 4, population: 10, elite_count: 2, cem_iterations: 2, particles: 2, ..PlannerConfig::default() },
            dr: DrConfig::default(),
            seed: 3,
        }
    }

    #[test]
    fn single_random_episode_trains_on_horizon_rows() {
        let cfg = TrainRunConfig { episodes: 1, ..tiny() };
        let agent = train_agent(&cfg, EnvKind::Pendulum, &EnvKind::Pendulum.nominal_params()).unwrap();
        assert_eq!(agent.dataset.len(), 20);
        assert_eq!(agent.curve.len(), 1);
        assert!(agent.curve[0].random);
    }

    #[test]
    fn learning_curve_is_reproducible() {
        let p = EnvKind::Pendulum.nominal_params();
        let a = train_agent(&tiny(), EnvKind::Pendulum, &p).unwrap();
        let b = train_agent(&tiny(), EnvKind::Pendulum, &p).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.model, b.model);
        assert_eq!(a.dataset.len(), 40);
        assert!(!a.curve[1].random);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let p = EnvKind::Pendulum.nominal_params();
        for cfg in [
            TrainRunConfig { episodes: 0, ..tiny() },
            TrainRunConfig { random_episodes: 0, ..tiny() },
            TrainRunConfig { random_episodes: 3, ..tiny() },
            TrainRunConfig { hidden: vec![], ..tiny() },
        ] {
            assert!(train_agent(&cfg, EnvKind::Pendulum, &p).is_err());
        }
    }
}
