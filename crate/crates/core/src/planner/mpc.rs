use super::{cem_plan, pets_objective, propagate_many, ActionSequence, CemState, Objective, PlannerConfig, RewardFn};
use crate::drcore::{dr_objective_from_batch, DrConfig};
use crate::ensemble::EnsembleModel;
use crate::envsim::{EnvState, Observation, Policy};
use crate::error::Result;
use crate::rng::RngStream;

/// Network rows per propagation call; bounds the size of the live batches
/// while keeping matrix products tall.
const ROWS_PER_CALL: usize = 2048;

/// Model-based score of candidate sequences from one start observation:
/// the nominal return when `dr.epsilon == 0`, the robust value otherwise.
pub struct PlanningObjective<'a> {
    pub model: &'a EnsembleModel,
    pub start: &'a [f64],
    pub particles: usize,
    pub discount: f64,
    pub dr: DrConfig,
    pub reward: &'a dyn RewardFn,
}

impl Objective for PlanningObjective<'_> {
    fn evaluate(&mut self, candidates: &[ActionSequence], streams: &[RngStream]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(candidates.len());
        let chunk = (ROWS_PER_CALL / self.particles).max(1);
        for (seqs, ss) in candidates.chunks(chunk).zip(streams.chunks(chunk)) {
            for batch in propagate_many(self.model, self.start, seqs, self.particles, self.reward, ss)? {
                out.push(if self.dr.epsilon == 0.0 {
                    pets_objective(&batch, self.discount)
                } else {
                    dr_objective_from_batch(&batch, self.discount, &self.dr)?
                });
            }
        }
        Ok(out)
    }
}

/// One receding-horizon step: plans from `obs` and returns the first action
/// plus the shifted distribution to warm-start the next step.
pub fn mpc_act(
    model: &EnsembleModel,
    obs: &[f64],
    config: &PlannerConfig,
    dr: &DrConfig,
    warm_start: &CemState,
    reward: &dyn RewardFn,
    stream: &RngStream,
) -> Result<(f64, CemState)> {
    dr.validate()?;
    let mut objective = PlanningObjective {
        model,
        start: obs,
        particles: config.particles,
        discount: config.discount,
        dr: *dr,
        reward,
    };
    let plan = cem_plan(&mut objective, config, warm_start, stream)?;
    let action = plan.best.0[0].clamp(config.action_low, config.action_high);
    let mut mean = plan.state.mean;
    mean.rotate_left(1);
    *mean.last_mut().expect("horizon >= 1") = 0.0_f64.clamp(config.action_low, config.action_high);
    let next = CemState { mean, variance: vec![config.initial_variance; config.horizon] };
    Ok((action, next))
}

/// Closed-loop controller that replans at every step.
pub struct MpcPolicy<'a, R: RewardFn> {
    pub model: &'a EnsembleModel,
    pub reward: R,
    pub config: PlannerConfig,
    pub dr: DrConfig,
    warm: CemState,
    stream: RngStream,
}

impl<'a, R: RewardFn> MpcPolicy<'a, R> {
    pub fn new(model: &'a EnsembleModel, reward: R, config: PlannerConfig, dr: DrConfig, stream: RngStream) -> Result<Self> {
        config.validate()?;
        dr.validate()?;
        Ok(Self { model, reward, config, dr, warm: config.initial_state(), stream })
    }

    pub fn warm_start(&self) -> &CemState {
        &self.warm
    }
}

impl<R: RewardFn> Policy for MpcPolicy<'_, R> {
    fn act(&mut self, _state: &EnvState, obs: &Observation, step: usize) -> Result<f64> {
        let (u, next) = mpc_act(
            self.model,
            obs.as_slice(),
            &self.config,
            &self.dr,
            &self.warm,
            &self.reward,
            &self.stream.derive(step as u64),
        )?;
        self.warm = next;
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drcore::PNorm;
    use crate::ensemble::ObsLayout;
    use crate::planner::FnReward;

    fn setup() -> (EnsembleModel, PlannerConfig) {
        let layout = ObsLayout { obs_dim: 2, action_dim: 1, angle_pair: None };
        let model = EnsembleModel::new(layout, &[8], 2, 5).unwrap();
        let config = PlannerConfig { horizon: 5, population: 30, elite_count: 5, cem_iterations: 3, particles: 3, ..PlannerConfig::default() };
        (model, config)
    }

    fn reward() -> FnReward<impl Fn(&[f64], f64) -> f64 + Sync> {
        FnReward { f: |o: &[f64], u: f64| -o[0].powi(2) - (u - 0.5).powi(2), floor: -1e3 }
    }

    #[test]
    fn zero_radius_matches_nominal_planning() {
        let (model, config) = setup();
        let s = RngStream::new(12);
        let init = config.initial_state();
        let nominal = |m: &EnsembleModel| {
            let mut obj = PlanningObjective { model: m, start: &[0.1, 0.2], particles: 3, discount: config.discount, dr: DrConfig::default(), reward: &reward() };
            cem_plan(&mut obj, &config, &init, &s).unwrap()
        };
        let pets = nominal(&model);
        for p in PNorm::ALL {
            let dr = DrConfig { epsilon: 0.0, p, baseline: false };
            let (u, _) = mpc_act(&model, &[0.1, 0.2], &config, &dr, &init, &reward(), &s).unwrap();
            assert_eq!(u, pets.best.0[0]);
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let (model, config) = setup();
        let dr = DrConfig { epsilon: 0.1, ..DrConfig::default() };
        let init = config.initial_state();
        let s = RngStream::new(3);
        let a = mpc_act(&model, &[0.0, 1.0], &config, &dr, &init, &reward(), &s).unwrap();
        let b = mpc_act(&model, &[0.0, 1.0], &config, &dr, &init, &reward(), &s).unwrap();
        assert_eq!(a, b);
        assert!((config.action_low..=config.action_high).contains(&a.0));
        assert_eq!(a.1.variance, vec![config.initial_variance; 5]);
        assert_eq!(*a.1.mean.last().unwrap(), 0.0);
    }

    #[test]
    fn warm_start_shifts_the_mean() {
        let (model, config) = setup();
        let init = CemState { mean: vec![0.1, 0.2, 0.3, 0.4, 0.5], variance: vec![crate::planner::VARIANCE_FLOOR; 5] };
        let c = PlannerConfig { smoothing: 1.0, ..config };
        let (_, next) = mpc_act(&model, &[0.0, 0.0], &c, &DrConfig::default(), &init, &reward(), &RngStream::new(1)).unwrap();
        assert_eq!(next.mean, vec![0.2, 0.3, 0.4, 0.5, 0.0]);
    }
}
