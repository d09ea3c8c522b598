use rand::Rng;
use rand_distr::StandardNormal;

use super::{ActionSequence, RewardFn, TrajectoryBatch};
use crate::ensemble::{renormalize_pair, EnsembleModel, PredictScratch};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Rolls `particles` trajectories per ensemble member from `start` under
/// `seq`. Every particle stays on its member for the whole horizon.
pub fn propagate(
    model: &EnsembleModel,
    start: &[f64],
    seq: &ActionSequence,
    particles: usize,
    reward: &dyn RewardFn,
    stream: &RngStream,
) -> Result<TrajectoryBatch> {
    let mut out = propagate_many(model, start, std::slice::from_ref(seq), particles, reward, std::slice::from_ref(stream))?;
    Ok(out.pop().expect("one sequence in, one batch out"))
}

/// [`propagate`] for several sequences at once, sharing network passes.
///
/// Each sequence draws its noise from its own stream in the fixed order
/// (step, member, particle, dimension), so the result for one sequence does
/// not depend on which other sequences share the call.
pub fn propagate_many(
    model: &EnsembleModel,
    start: &[f64],
    seqs: &[ActionSequence],
    particles: usize,
    reward: &dyn RewardFn,
    streams: &[RngStream],
) -> Result<Vec<TrajectoryBatch>> {
    let d = model.layout.obs_dim;
    if start.len() != d {
        return Err(Error::InvalidInput(format!("start observation has {} entries, expected {d}", start.len())));
    }
    if start.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("start observation is not finite".into()));
    }
    if model.layout.action_dim != 1 {
        return Err(Error::InvalidInput("planning supports scalar actions only".into()));
    }
    if seqs.len() != streams.len() {
        return Err(Error::InvalidInput("one random stream per sequence is required".into()));
    }
    if particles == 0 {
        return Err(Error::InvalidInput("at least one particle is required".into()));
    }
    let Some(horizon) = seqs.first().map(|s| s.len()) else {
        return Ok(Vec::new());
    };
    if horizon == 0 || seqs.iter().any(|s| s.len() != horizon) {
        return Err(Error::InvalidInput("action sequences must share a positive length".into()));
    }
    if seqs.iter().any(|s| s.0.iter().any(|u| !u.is_finite())) {
        return Err(Error::InvalidInput("action sequence is not finite".into()));
    }

    let members = model.size();
    let n_seq = seqs.len();
    let rows = n_seq * particles;
    let in_dim = model.layout.input_dim();
    let pair = model.layout.angle_pair;
    let floor = reward.floor();
    let target_std = &model.norm.target_std;

    let mut batches: Vec<TrajectoryBatch> =
        (0..n_seq).map(|_| TrajectoryBatch::zeros(members, particles, horizon, d)).collect();
    let mut rngs: Vec<_> = streams.iter().map(RngStream::rng).collect();

    // Current state of every (member, sequence, particle).
    let mut states: Vec<f64> = start.repeat(members * rows);
    let mut alive = vec![true; members * rows];
    let mut inputs = vec![0.0; rows * in_dim];
    let mut scratch = PredictScratch::default();
    let (mut mean, mut log_var) = (Vec::new(), Vec::new());
    let mut next = vec![0.0; d];

    for k in 0..horizon {
        for b in 0..members {
            for (c, seq) in seqs.iter().enumerate() {
                let u = seq.0[k];
                let batch = &mut batches[c];
                for q in 0..particles {
                    let slot = b * rows + c * particles + q;
                    let s = &states[slot * d..(slot + 1) * d];
                    let i = batch.index(b, q, k);
                    batch.observations[i * d..(i + 1) * d].copy_from_slice(s);
                    batch.rewards[i] = if alive[slot] {
                        let r = reward.reward(s, u);
                        if r.is_finite() { r } else { floor }
                    } else {
                        floor
                    };
                    let row = &mut inputs[(c * particles + q) * in_dim..(c * particles + q + 1) * in_dim];
                    row[..d].copy_from_slice(if alive[slot] { s } else { start });
                    row[d] = u;
                }
            }
            if k + 1 == horizon {
                continue;
            }
            model.predict_batch(b, &inputs, rows, &mut scratch, &mut mean, &mut log_var);
            for c in 0..n_seq {
                let batch = &mut batches[c];
                let rng = &mut rngs[c];
                for q in 0..particles {
                    let slot = b * rows + c * particles + q;
                    let r = c * particles + q;
                    let i = batch.index(b, q, k + 1) * 2 * d;
                    let state = &mut states[slot * d..(slot + 1) * d];
                    let mut finite = true;
                    for j in 0..d {
                        // Drawn even for dead particles so the stream stays aligned.
                        let z: f64 = rng.sample(StandardNormal);
                        let lv = log_var[r * d + j];
                        let sd = (0.5 * lv).exp();
                        next[j] = state[j] + mean[r * d + j] + sd * z;
                        finite &= next[j].is_finite() && sd > 0.0;
                        if alive[slot] {
                            batch.scores[i + j] = z / sd * target_std[j];
                            batch.scores[i + d + j] = 0.5 * (z * z - 1.0);
                        }
                    }
                    if !alive[slot] {
                        continue;
                    }
                    renormalize_pair(&mut next, pair);
                    if finite && next.iter().all(|v| v.is_finite()) {
                        state.copy_from_slice(&next);
                    } else {
                        alive[slot] = false;
                        batch.diverged_at[b * particles + q] = Some(k + 1);
                        batch.scores[i..i + 2 * d].fill(0.0);
                    }
                }
            }
        }
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::ObsLayout;
    use crate::planner::FnReward;

    fn model(members: usize) -> EnsembleModel {
        let layout = ObsLayout { obs_dim: 2, action_dim: 1, angle_pair: None };
        EnsembleModel::new(layout, &[8, 8], members, 3).unwrap()
    }

    fn quad() -> FnReward<impl Fn(&[f64], f64) -> f64 + Sync> {
        FnReward { f: |o: &[f64], u: f64| -(o[0] * o[0] + o[1] * o[1]) - 0.1 * u * u, floor: -1e3 }
    }

    #[test]
    fn shapes_and_start_state() {
        let m = model(3);
        let seq = ActionSequence(vec![0.3, -0.2, 0.1, 0.0]);
        let b = propagate(&m, &[0.5, -0.5], &seq, 4, &quad(), &RngStream::new(1)).unwrap();
        assert_eq!((b.members, b.particles, b.horizon, b.obs_dim), (3, 4, 4, 2));
        for mb in 0..3 {
            for q in 0..4 {
                assert_eq!(b.observation(mb, q, 0), &[0.5, -0.5]);
                assert!(b.score(mb, q, 0).iter().all(|s| *s == 0.0));
                assert!(b.score(mb, q, 2).iter().any(|s| *s != 0.0));
            }
        }
        assert!(b.diverged_at.iter().all(Option::is_none));
    }

    #[test]
    fn batching_does_not_change_results() {
        let m = model(2);
        let seqs: Vec<_> = (0..3).map(|i| ActionSequence(vec![0.1 * i as f64; 5])).collect();
        let streams: Vec<_> = (0..3).map(|i| RngStream::new(9).derive(i)).collect();
        let together = propagate_many(&m, &[0.1, 0.2], &seqs, 3, &quad(), &streams).unwrap();
        for i in 0..3 {
            let alone = propagate(&m, &[0.1, 0.2], &seqs[i], 3, &quad(), &streams[i]).unwrap();
            assert_eq!(alone, together[i]);
        }
    }

    #[test]
    fn same_stream_replays() {
        let m = model(2);
        let seq = ActionSequence(vec![0.5; 6]);
        let a = propagate(&m, &[0.0, 1.0], &seq, 5, &quad(), &RngStream::new(4)).unwrap();
        let b = propagate(&m, &[0.0, 1.0], &seq, 5, &quad(), &RngStream::new(4)).unwrap();
        let c = propagate(&m, &[0.0, 1.0], &seq, 5, &quad(), &RngStream::new(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn diverged_particles_take_the_floor() {
        let m = model(1);
        let seq = ActionSequence(vec![0.0; 4]);
        let blowup = FnReward { f: |o: &[f64], _u: f64| if o[0] == 0.25 { -1.0 } else { f64::NAN }, floor: -7.0 };
        let b = propagate(&m, &[0.25, 0.0], &seq, 2, &blowup, &RngStream::new(0)).unwrap();
        assert_eq!(b.reward(0, 0, 0), -1.0);
        assert_eq!(b.reward(0, 1, 3), -7.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = model(1);
        let seq = ActionSequence(vec![0.0; 3]);
        let s = RngStream::new(0);
        assert!(propagate(&m, &[0.0], &seq, 2, &quad(), &s).is_err());
        assert!(propagate(&m, &[0.0, f64::NAN], &seq, 2, &quad(), &s).is_err());
        assert!(propagate(&m, &[0.0, 0.0], &ActionSequence(vec![]), 2, &quad(), &s).is_err());
        assert!(propagate(&m, &[0.0, 0.0], &seq, 0, &quad(), &s).is_err());
    }
}
