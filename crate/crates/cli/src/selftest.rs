//! Numerical self-checks of the robust-objective mathematics, each against
//! an independent computation.

use drpets_core::drcore::{dual_function, dual_optimizers, dr_penalty, worstcase_oracle};
use drpets_core::ensemble::{score, GaussianPrediction, ObsLayout};
use drpets_core::planner::{cem_plan, mpc_act, FnReward, PlanningObjective};
use drpets_core::rng::RngStream;
use drpets_core::{dr_value, DrConfig, EnsembleModel, GradientEstimate, PNorm, PlannerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed error, in the suite's own measure.
    pub worst: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelftestSizes {
    pub oracle_instances_per_p: usize,
    pub oracle_resolution: usize,
    pub score_triples: usize,
    pub dual_instances: usize,
    pub equivalence_instances: usize,
}

impl Default for SelftestSizes {
    fn default() -> Self {
        Self {
            oracle_instances_per_p: 100,
            oracle_resolution: 150,
            score_triples: 1000,
            dual_instances: 200,
            equivalence_instances: 200,
        }
    }
}

pub fn run_all(sizes: &SelftestSizes, seed: u64) -> Vec<SuiteReport> {
    vec![
        oracle_agreement(sizes.oracle_instances_per_p, sizes.oracle_resolution, seed),
        score_finite_difference(sizes.score_triples, seed),
        dual_optimality(sizes.dual_instances, seed),
        zero_radius_equivalence(sizes.equivalence_instances, seed),
    ]
}

fn rng(seed: u64, suite: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(RngStream::new(seed).purpose(suite).key())
}

/// Closed-form robust value against brute-force minimisation over the ball,
/// tolerance 1e-3.
pub fn oracle_agreement(per_p: usize, resolution: usize, seed: u64) -> SuiteReport {
    let mut r = rng(seed, "selftest-oracle");
    let mut report = SuiteReport { name: "oracle agreement", cases: 0, failures: 0, worst: 0.0 };
    for p in PNorm::ALL {
        for _ in 0..per_p {
            let b = r.random_range(1..=2);
            let dim = r.random_range(1..=3);
            let grads: Vec<Vec<f64>> = (0..b).map(|_| (0..dim).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
            let j: Vec<f64> = (0..b).map(|_| r.random_range(-5.0..5.0)).collect();
            let config = DrConfig { epsilon: 1.0 - r.random::<f64>(), p, baseline: false };
            let g = GradientEstimate::from_grads(grads);
            let err = match (dr_value(&j, &g, &config), worstcase_oracle(&j, &g, &config, resolution)) {
                (Ok(a), Ok(o)) => (a - o).abs(),
                _ => f64::INFINITY,
            };
            report.cases += 1;
            report.worst = report.worst.max(err);
            if !(err <= 1e-3) {
                report.failures += 1;
            }
        }
    }
    report
}

fn log_gaussian(mean: &[f64], log_var: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(log_var)
        .zip(x)
        .map(|((m, lv), x)| -0.5 * ((x - m) * (x - m) / lv.exp() + lv + (2.0 * std::f64::consts::PI).ln()))
        .sum()
}

/// Analytic score against central differences of the log-density; relative
/// error below 1e-4, with the denominator floored at 1e-3 so entries that
/// are zero in expectation are compared absolutely.
pub fn score_finite_difference(triples: usize, seed: u64) -> SuiteReport {
    let mut r = rng(seed, "selftest-score");
    let mut report = SuiteReport { name: "score finite differences", cases: 0, failures: 0, worst: 0.0 };
    let h = 1e-5;
    for _ in 0..triples {
        let d = r.random_range(1..=3);
        let mean: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let log_var: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..2.0)).collect();
        let x: Vec<f64> = (0..d).map(|i| mean[i] + r.random_range(-3.0..3.0) * (0.5 * log_var[i]).exp()).collect();
        let s = score(&GaussianPrediction { mean: mean.clone(), log_variance: log_var.clone() }, &x);
        let mut worst: f64 = 0.0;
        for i in 0..d {
            let bump = |v: &[f64], delta: f64| {
                let mut w = v.to_vec();
                w[i] += delta;
                w
            };
            let fd_m = (log_gaussian(&bump(&mean, h), &log_var, &x) - log_gaussian(&bump(&mean, -h), &log_var, &x)) / (2.0 * h);
            let fd_v = (log_gaussian(&mean, &bump(&log_var, h), &x) - log_gaussian(&mean, &bump(&log_var, -h), &x)) / (2.0 * h);
            worst = worst.max((s.d_mean[i] - fd_m).abs() / fd_m.abs().max(1e-3));
            worst = worst.max((s.d_logvar[i] - fd_v).abs() / fd_v.abs().max(1e-3));
        }
        report.cases += 1;
        report.worst = report.worst.max(worst);
        if !(worst < 1e-4) {
            report.failures += 1;
        }
    }
    report
}

/// For p = 2: the optimal multiplier saturates the ball, attains the
/// closed-form penalty, and beats multipliers 10% either side.
pub fn dual_optimality(instances: usize, seed: u64) -> SuiteReport {
    let mut r = rng(seed, "selftest-dual");
    let mut report = SuiteReport { name: "dual optimality", cases: 0, failures: 0, worst: 0.0 };
    for _ in 0..instances {
        let b = r.random_range(1..=6);
        let norms: Vec<f64> = (0..b).map(|_| r.random_range(0.01..5.0)).collect();
        let config = DrConfig { epsilon: 1.0 - r.random::<f64>(), p: PNorm::Two, baseline: false };
        report.cases += 1;
        let Ok(diag) = dual_optimizers(&norms, &config) else {
            report.failures += 1;
            continue;
        };
        let eps = config.epsilon;
        let saturation = (diag.delta_star.iter().map(|d| d * d).sum::<f64>() / b as f64 - eps * eps).abs();
        let gap = (dual_function(&norms, eps, diag.lambda_star) + dr_penalty(&norms, &config)).abs();
        let d0 = dual_function(&norms, eps, diag.lambda_star);
        let peaked = dual_function(&norms, eps, 0.9 * diag.lambda_star) < d0 && dual_function(&norms, eps, 1.1 * diag.lambda_star) < d0;
        report.worst = report.worst.max(saturation).max(gap);
        if !(saturation <= 1e-9 && gap <= 1e-9 && peaked && !diag.degenerate) {
            report.failures += 1;
        }
    }
    report
}

/// At zero radius the robust value is the plain member mean, bit for bit,
/// and the planner picks the same action as nominal planning for every p.
pub fn zero_radius_equivalence(instances: usize, seed: u64) -> SuiteReport {
    let mut r = rng(seed, "selftest-zero");
    let mut report = SuiteReport { name: "zero-radius equivalence", cases: 0, failures: 0, worst: 0.0 };
    for _ in 0..instances {
        let b = r.random_range(1..=5);
        let j: Vec<f64> = (0..b).map(|_| r.random_range(-100.0..100.0)).collect();
        let g = GradientEstimate::from_grads((0..b).map(|_| vec![r.random_range(-9.0..9.0); 4]).collect());
        let plain = j.iter().sum::<f64>() / b as f64;
        report.cases += 1;
        for p in PNorm::ALL {
            let v = dr_value(&j, &g, &DrConfig { epsilon: 0.0, p, baseline: false });
            if v.ok().map(f64::to_bits) != Some(plain.to_bits()) {
                report.failures += 1;
            }
        }
    }

    let layout = ObsLayout { obs_dim: 2, action_dim: 1, angle_pair: None };
    let planner = PlannerConfig { horizon: 6, population: 40, elite_count: 6, cem_iterations: 3, particles: 3, ..PlannerConfig::default() };
    let reward = FnReward { f: |o: &[f64], u: f64| -o[0] * o[0] - 0.1 * o[1] * o[1] - 0.01 * u * u, floor: -1e3 };
    for k in 0..4u64 {
        let Ok(model) = EnsembleModel::new(layout, &[8], 3, seed ^ k) else {
            report.failures += 1;
            continue;
        };
        let start = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let stream = RngStream::new(seed).purpose("selftest-plan").derive(k);
        let init = planner.initial_state();
        let mut nominal = PlanningObjective {
            model: &model,
            start: &start,
            particles: planner.particles,
            discount: planner.discount,
            dr: DrConfig::default(),
            reward: &reward,
        };
        let reference = cem_plan(&mut nominal, &planner, &init, &stream).map(|p| p.best.0[0]);
        for p in PNorm::ALL {
            report.cases += 1;
            let dr = DrConfig { epsilon: 0.0, p, baseline: true };
            let got = mpc_act(&model, &start, &planner, &dr, &init, &reward, &stream).map(|(u, _)| u);
            match (&reference, got) {
                (Ok(a), Ok(b)) if a.to_bits() == b.to_bits() => {}
                _ => report.failures += 1,
            }
        }
    }
    report
}

pub fn render_table(reports: &[SuiteReport]) -> String {
    let mut out = format!("{:<28} {:>6} {:>9} {:>12}  result\n", "suite", "cases", "failures", "worst");
    for r in reports {
        out.push_str(&format!(
            "{:<28} {:>6} {:>9} {:>12.3e}  {}\n",
            r.name,
            r.cases,
            r.failures,
            r.worst,
            if r.passed() { "pass" } else { "FAIL" }
        ));
    }
    out
}
