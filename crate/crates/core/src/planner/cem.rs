use rand::Rng;
use rand_distr::StandardNormal;

use super::{ActionSequence, CemState, PlannerConfig, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Scores a batch of candidate sequences. Higher is better.
///
/// `streams[i]` is the randomness reserved for `candidates[i]`; a stochastic
/// objective must draw only from it so that batching is unobservable.
pub trait Objective {
    fn evaluate(&mut self, candidates: &[ActionSequence], streams: &[RngStream]) -> Result<Vec<f64>>;
}

impl<F> Objective for F
where
    F: FnMut(&ActionSequence, &RngStream) -> f64,
{
    fn evaluate(&mut self, candidates: &[ActionSequence], streams: &[RngStream]) -> Result<Vec<f64>> {
        Ok(candidates.iter().zip(streams).map(|(c, s)| self(c, s)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CemResult {
    /// Highest-scoring sequence seen over all iterations.
    pub best: ActionSequence,
    pub best_value: f64,
    pub state: CemState,
    /// Best elite value after each iteration; non-decreasing.
    pub elite_best: Vec<f64>,
}

/// One smoothed refit of the sampling distribution to the top
/// `elite_count` of `population` by `values`.
pub fn cem_update(
    state: &CemState,
    population: &[ActionSequence],
    values: &[f64],
    config: &PlannerConfig,
) -> Result<CemState> {
    let order = ranking(values)?;
    let elites: Vec<&ActionSequence> = order[..config.elite_count].iter().map(|&i| &population[i]).collect();
    Ok(refit(state, &elites, config.smoothing))
}

/// Indices sorted by value, best first. Non-finite values rank last; ties
/// keep population order.
fn ranking(values: &[f64]) -> Result<Vec<usize>> {
    if !values.iter().any(|v| v.is_finite()) {
        return Err(Error::Planning("every candidate evaluated to a non-finite value".into()));
    }
    let key = |v: f64| if v.is_finite() { v } else { f64::NEG_INFINITY };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| key(values[b]).total_cmp(&key(values[a])));
    Ok(order)
}

fn refit(state: &CemState, elites: &[&ActionSequence], alpha: f64) -> CemState {
    let n = elites.len() as f64;
    let h = state.mean.len();
    let mut mean = Vec::with_capacity(h);
    let mut variance = Vec::with_capacity(h);
    for t in 0..h {
        let m = elites.iter().map(|e| e.0[t]).sum::<f64>() / n;
        let v = elites.iter().map(|e| (e.0[t] - m).powi(2)).sum::<f64>() / n;
        mean.push(alpha * state.mean[t] + (1.0 - alpha) * m);
        variance.push((alpha * state.variance[t] + (1.0 - alpha) * v).max(VARIANCE_FLOOR));
    }
    CemState { mean, variance }
}

/// Cross-entropy search over action sequences.
///
/// From the second iteration on, population slot 0 holds the best sequence
/// found so far with its recorded value, so the best elite value never
/// decreases.
pub fn cem_plan<O: Objective + ?Sized>(
    objective: &mut O,
    config: &PlannerConfig,
    init: &CemState,
    stream: &RngStream,
) -> Result<CemResult> {
    config.validate()?;
    if init.mean.len() != config.horizon || init.variance.len() != config.horizon {
        return Err(Error::InvalidInput("initial CEM state does not match the horizon".into()));
    }
    if init.mean.iter().chain(&init.variance).any(|v| !v.is_finite()) || init.variance.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidInput("initial CEM state must be finite with non-negative variance".into()));
    }
    let (lo, hi) = (config.action_low, config.action_high);
    let mut state = CemState {
        mean: init.mean.clone(),
        variance: init.variance.iter().map(|v| v.max(VARIANCE_FLOOR)).collect(),
    };
    let mut best: Option<(ActionSequence, f64)> = None;
    let mut elite_best = Vec::with_capacity(config.cem_iterations);

    for it in 0..config.cem_iterations {
        let it_stream = stream.derive(it as u64);
        let mut rng = it_stream.purpose("cem-sample").rng();
        let sd: Vec<f64> = state.variance.iter().map(|v| v.sqrt()).collect();
        let mut population: Vec<ActionSequence> = (0..config.population)
            .map(|_| {
                let raw = (0..config.horizon)
                    .map(|t| state.mean[t] + sd[t] * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                ActionSequence::clipped(raw, lo, hi)
            })
            .collect();
        let eval_root = it_stream.purpose("cem-eval");
        let first = match &best {
            Some((seq, _)) => {
                population[0] = seq.clone();
                1
            }
            None => 0,
        };
        let streams: Vec<RngStream> = (first..config.population).map(|i| eval_root.derive(i as u64)).collect();
        let fresh = objective.evaluate(&population[first..], &streams)?;
        if fresh.len() != streams.len() {
            return Err(Error::Planning("objective returned the wrong number of values".into()));
        }
        let mut values = Vec::with_capacity(config.population);
        if let Some((_, v)) = &best {
            values.push(*v);
        }
        values.extend(fresh);

        let order = ranking(&values)?;
        let top = order[0];
        if best.as_ref().is_none_or(|(_, v)| values[top] > *v) {
            best = Some((population[top].clone(), values[top]));
        }
        elite_best.push(values[top]);
        let elites: Vec<&ActionSequence> = order[..config.elite_count].iter().map(|&i| &population[i]).collect();
        state = refit(&state, &elites, config.smoothing);
    }
    let (best, best_value) = best.expect("at least one iteration ran");
    Ok(CemResult { best, best_value, state, elite_best })
}
