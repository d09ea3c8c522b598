use drpets_core::ensemble::ObsLayout;
use drpets_core::envsim::run_episode;
use drpets_core::rng::RngStream;
use drpets_core::{EnvKind, EnvParams, EnvState, EpisodeRecord, TransitionDataset};
use rand::Rng;

use crate::error::{BenchError, Result};

/// Seed of the reset state of random episode `index` under master `seed`.
pub(crate) fn random_episode_streams(seed: u64, index: usize) -> (u64, RngStream) {
    let root = RngStream::new(seed).purpose("collect").derive(index as u64);
    (root.purpose("reset").key(), root.purpose("actions"))
}

/// Episodes driven by actions drawn uniformly from the action bounds.
pub fn random_episodes(
    kind: EnvKind,
    params: &EnvParams,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<EpisodeRecord>> {
    if episodes == 0 {
        return Err(BenchError::InvalidSpec("at least one episode is required".into()));
    }
    (0..episodes)
        .map(|e| {
            let (reset_seed, actions) = random_episode_streams(seed, e);
            let mut rng = actions.rng();
            let (lo, hi) = (params.action_low, params.action_high);
            let mut policy = |_: &EnvState| rng.random_range(lo..=hi);
            run_episode(kind, params, &mut policy, horizon, reset_seed)
                .map_err(|source| BenchError::Episode { episode: e, source })
        })
        .collect()
}

/// All `(obs, action, next_obs)` triples of `episodes`, in order.
pub fn dataset_from_episodes(kind: EnvKind, episodes: &[EpisodeRecord]) -> Result<TransitionDataset> {
    let mut data = TransitionDataset::new(ObsLayout::for_env(kind));
    append_episodes(&mut data, episodes)?;
    Ok(data)
}

pub(crate) fn append_episodes(data: &mut TransitionDataset, episodes: &[EpisodeRecord]) -> Result<()> {
    let rows = episodes.iter().flat_map(|ep| {
        ep.actions.iter().enumerate().map(move |(t, u)| {
            (ep.observations[t].as_slice(), std::slice::from_ref(u), ep.observations[t + 1].as_slice())
        })
    });
    data.extend(rows)?;
    Ok(())
}

pub fn collect_random(
    kind: EnvKind,
    params: &EnvParams,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    dataset_from_episodes(kind, &random_episodes(kind, params, episodes, horizon, seed)?)
}
