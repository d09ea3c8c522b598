//! Acceptance run: one line per criterion, exit status 1 if a mandatory
//! criterion fails. Set `DRPETS_ACCEPTANCE_ONLY=1,2,5` to run a subset.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use drpets_bench::{
    render_svg, sweep, train_agent_with, write_csv, write_diagnostics, Algorithm, SweepOutcome, SweepResult, SweepRow,
    SweepSpec, TrainRunConfig,
};
use drpets_cli::selftest;
use drpets_core::envsim::run_episode;
use drpets_core::planner::{cem_plan, EnvReward};
use drpets_core::rng::RngStream;
use drpets_core::{
    grad_estimate, ActionSequence, DrConfig, EnsembleModel, EnvKind, EnvParams, MpcPolicy, PNorm, PlannerConfig,
    TrainConfig, TrajectoryBatch,
};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

struct Criterion {
    id: u8,
    name: &'static str,
    /// Stretch criteria are reported but do not fail the run.
    stretch: bool,
    budget: Duration,
    run: fn(&Path) -> Outcome,
}

const MIN: u64 = 60;

fn main() {
    let only: Option<Vec<u8>> = std::env::var("DRPETS_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let work = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let criteria = [
        Criterion { id: 1, name: "zero-radius equivalence", stretch: false, budget: Duration::from_secs(2 * MIN), run: c1_zero_radius },
        Criterion { id: 2, name: "duality agreement", stretch: false, budget: Duration::from_secs(MIN), run: c2_duality },
        Criterion { id: 3, name: "dual optimality", stretch: false, budget: Duration::from_secs(1), run: c3_dual },
        Criterion { id: 4, name: "score correctness", stretch: false, budget: Duration::from_secs(1), run: c4_score },
        Criterion { id: 5, name: "gradient estimator", stretch: false, budget: Duration::from_secs(MIN), run: c5_estimator },
        Criterion { id: 6, name: "planner sanity", stretch: false, budget: Duration::from_secs(10), run: c6_planner },
        Criterion { id: 7, name: "pendulum mass sweep", stretch: false, budget: Duration::from_secs(45 * MIN), run: c7_pendulum },
        Criterion { id: 8, name: "cartpole length sweep", stretch: true, budget: Duration::from_secs(90 * MIN), run: c8_cartpole },
        Criterion { id: 9, name: "reproducibility", stretch: false, budget: Duration::from_secs(5 * MIN), run: c9_reproducible },
    ];
    let mut failed_mandatory = false;
    let mut lines = Vec::new();
    for c in criteria.iter().filter(|c| only.as_ref().is_none_or(|o| o.contains(&c.id))) {
        let dir = work.join(format!("c{}", c.id));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).expect("scratch directory");
        let t0 = Instant::now();
        let out = (c.run)(&dir);
        let took = t0.elapsed();
        let in_time = took <= c.budget;
        let passed = out.passed && in_time;
        let line = format!(
            "criterion {} {:<24} {}{}  [{:.1}s of {}s]  {}{}",
            c.id,
            c.name,
            if passed { "PASS" } else { "FAIL" },
            if c.stretch { " (stretch)" } else { "" },
            took.as_secs_f64(),
            c.budget.as_secs(),
            out.detail,
            if in_time { "" } else { "; over time budget" }
        );
        println!("{line}");
        lines.push(line);
        failed_mandatory |= !passed && !c.stretch;
    }
    println!("\nsummary:");
    for l in &lines {
        println!("  {l}");
    }
    if failed_mandatory {
        std::process::exit(1);
    }
}

fn progress(msg: impl AsRef<str>) {
    eprintln!("    .. {}", msg.as_ref());
}

fn c1_zero_radius(dir: &Path) -> Outcome {
    let kind = EnvKind::Pendulum;
    let params = kind.nominal_params();
    let planner = PlannerConfig { horizon: 10, population: 40, elite_count: 4, cem_iterations: 2, particles: 3, ..PlannerConfig::for_env(&params) };
    let cfg = TrainRunConfig {
        episodes: 3,
        steps_per_episode: 100,
        ensemble_size: 3,
        hidden: vec![16, 16],
        train: TrainConfig { epochs: 10, ..TrainConfig::default() },
        planner,
        seed: 11,
        ..TrainRunConfig::default()
    };
    let model = match train_agent_with(&cfg, kind, &params, &mut |_| {}) {
        Ok(a) => a.model,
        Err(e) => return Outcome::new(false, format!("training failed: {e}")),
    };
    let reward = EnvReward { kind, params };
    let actions = |dr: DrConfig| -> Vec<u64> {
        let mut policy = MpcPolicy::new(&model, reward, planner, dr, RngStream::new(5).purpose("episode")).unwrap();
        let rec = run_episode(kind, &params, &mut policy, 200, 9).unwrap();
        rec.actions.iter().map(|a| a.to_bits()).collect()
    };
    let reference = actions(DrConfig::default());
    let mut mismatched = Vec::new();
    for p in PNorm::ALL {
        for baseline in [false, true] {
            if actions(DrConfig { epsilon: 0.0, p, baseline }) != reference {
                mismatched.push(format!("p={p} baseline={baseline}"));
            }
        }
    }

    let spec = SweepSpec {
        grid: vec![0.75, 1.0, 1.25],
        seeds_per_point: 2,
        planner,
        horizon: 50,
        seed: 4,
        ..SweepSpec::default()
    };
    let csv = |s: &SweepSpec| -> String {
        let out = sweep(&model, s, &params, 1).unwrap();
        let mut buf = Vec::new();
        write_csv(&out.result, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let mut csv_equal = true;
    let (mut pets, mut dr) = (String::new(), String::new());
    for p in PNorm::ALL {
        let config = DrConfig { epsilon: 0.0, p, baseline: false };
        pets = csv(&SweepSpec { dr: config, ..spec.clone() });
        dr = csv(&SweepSpec { algorithm: Algorithm::DrPets, dr: config, ..spec.clone() });
        csv_equal &= pets == dr.replace("DR-PETS", "PETS");
    }
    let _ = fs::write(dir.join("pets.csv"), &pets);
    let _ = fs::write(dir.join("drpets.csv"), &dr);
    Outcome::new(
        mismatched.is_empty() && csv_equal && reference.len() == 200,
        format!(
            "200-step actions identical for {} of 6 robust configs; sweep CSVs identical apart from the algorithm label for every p: {csv_equal}",
            6 - mismatched.len()
        ),
    )
}

fn c2_duality(_: &Path) -> Outcome {
    let r = selftest::oracle_agreement(100, 200, 2);
    Outcome::new(r.passed(), format!("{} instances (100 per p), {} outside 1e-3, worst |diff| {:.2e}", r.cases, r.failures, r.worst))
}

fn c3_dual(_: &Path) -> Outcome {
    let r = selftest::dual_optimality(500, 3);
    Outcome::new(r.passed(), format!("{} instances, {} failing, worst residual {:.2e} (tol 1e-9)", r.cases, r.failures, r.worst))
}

fn c4_score(_: &Path) -> Outcome {
    let r = selftest::score_finite_difference(1000, 4);
    Outcome::new(r.passed(), format!("{} triples, {} failing, worst rel. err {:.2e} (tol 1e-4)", r.cases, r.failures, r.worst))
}

/// One-dimensional chain `x1 = x0 + mu + sigma z` with reward `-x^2`; only
/// the step-1 reward depends on the step-1 transition.
fn c5_estimator(_: &Path) -> Outcome {
    let (x0, mu, sigma, gamma) = (0.2, 0.8, 0.6, 0.9);
    let q = 100_000;
    let mut batch = TrajectoryBatch::zeros(1, q, 2, 1);
    let mut rng = RngStream::new(5).rng();
    for p in 0..q {
        let z: f64 = rng.sample(StandardNormal);
        let x1 = x0 + mu + sigma * z;
        let (i0, i1) = (batch.index(0, p, 0), batch.index(0, p, 1));
        batch.observations[i0] = x0;
        batch.rewards[i0] = -x0 * x0;
        batch.observations[i1] = x1;
        batch.rewards[i1] = -x1 * x1;
        batch.scores[2 * i1] = z / sigma;
        batch.scores[2 * i1 + 1] = 0.5 * (z * z - 1.0);
    }
    let g = grad_estimate(&batch, gamma);
    // E[return] = -x0^2 - gamma ((x0 + mu)^2 + exp(logvar)).
    let d_mean = -2.0 * gamma * (x0 + mu);
    let d_logvar = -gamma * sigma * sigma;
    let e_mean = (g.grads[0][0] - d_mean).abs() / d_mean.abs();
    let e_logvar = (g.grads[0][1] - d_logvar).abs() / d_logvar.abs();
    Outcome::new(
        e_mean < 0.05 && e_logvar < 0.05,
        format!("Q=1e5: rel. err mean {e_mean:.4}, log-variance {e_logvar:.4} (tol 0.05)"),
    )
}

/// Worst per-element distance to the optimum over `trials` random interior
/// targets, plus whether every iteration kept the elite best monotone and
/// every evaluated action inside the bounds.
fn cem_quadratic(horizon: usize, trials: u64) -> Result<(f64, bool, bool), String> {
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    let mut in_bounds = true;
    for t in 0..trials {
        let mut rng = RngStream::new(6).derive(t).rng();
        let config = PlannerConfig { horizon, population: 200, elite_count: 20, cem_iterations: 5, ..PlannerConfig::default() };
        let target: Vec<f64> = (0..horizon).map(|_| rng.random_range(-1.5..1.5)).collect();
        let (lo, hi) = (config.action_low, config.action_high);
        let mut objective = |s: &ActionSequence, _: &RngStream| -> f64 {
            in_bounds &= s.0.iter().all(|u| (lo..=hi).contains(u));
            -s.0.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        let out = cem_plan(&mut objective, &config, &config.initial_state(), &RngStream::new(60).derive(t))
            .map_err(|e| format!("planning failed: {e}"))?;
        monotone &= out.elite_best.windows(2).all(|w| w[1] >= w[0]);
        in_bounds &= out.best.0.iter().all(|u| (lo..=hi).contains(u));
        worst = out.best.0.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    Ok((worst, monotone, in_bounds))
}

/// Judged on 3-element sequences; longer ones are reported for reference,
/// since five rounds of 200 samples do not resolve 0.05 in more dimensions.
fn c6_planner(_: &Path) -> Outcome {
    let (worst, monotone, in_bounds) = match cem_quadratic(3, 20) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e),
    };
    let longer: Vec<String> = [5, 10]
        .iter()
        .filter_map(|&h| cem_quadratic(h, 20).ok().map(|(w, _, _)| format!("T={h}: {w:.3}")))
        .collect();
    Outcome::new(
        worst < 0.05 && monotone && in_bounds,
        format!(
            "T=3, 20 targets: worst per-element error {worst:.4} (tol 0.05), elite best monotone: {monotone}, actions in bounds: {in_bounds}; for reference {}",
            longer.join(", ")
        ),
    )
}

fn save_sweep(dir: &Path, name: &str, out: &SweepOutcome) {
    let mut buf = Vec::new();
    write_csv(&out.result, &mut buf).unwrap();
    let _ = fs::write(dir.join(format!("{name}.csv")), buf);
    let mut log = Vec::new();
    write_diagnostics(&out.episodes, &out.points, &mut log).unwrap();
    let _ = fs::write(dir.join(format!("{name}.log")), log);
}

fn row_at(result: &SweepResult, param: f64) -> &SweepRow {
    result.rows.iter().find(|r| r.param == param).expect("grid point present")
}

fn mean_over(result: &SweepResult, params: &[f64]) -> f64 {
    params.iter().map(|&p| row_at(result, p).mean_reward).sum::<f64>() / params.len() as f64
}

/// Radius chosen on a separate tuning seed set: the best mean over the
/// perturbed points among radii whose nominal mean stays within 15% of
/// PETS; if none does, the radius with the smallest nominal loss.
fn tune_epsilon(
    model: &EnsembleModel,
    base: &SweepSpec,
    nominal: &EnvParams,
    nominal_value: f64,
    perturbed: &[f64],
    seeds: usize,
    dir: &Path,
) -> (DrConfig, String) {
    let mut grid = vec![nominal_value];
    grid.extend_from_slice(perturbed);
    grid.sort_by(f64::total_cmp);
    let tuning = SweepSpec { grid, seeds_per_point: seeds, seed: base.seed + 1_000, ..base.clone() };
    let pets = sweep(model, &tuning, nominal, 1).expect("tuning sweep");
    save_sweep(dir, "tune-pets", &pets);
    let pets_nominal = row_at(&pets.result, nominal_value).mean_reward;
    let mut scored = Vec::new();
    for eps in [0.01, 0.05, 0.1, 0.5] {
        let dr = DrConfig { epsilon: eps, ..DrConfig::default() };
        let out = sweep(model, &SweepSpec { algorithm: Algorithm::DrPets, dr, ..tuning.clone() }, nominal, 1).expect("tuning sweep");
        save_sweep(dir, &format!("tune-eps{eps}"), &out);
        let gap = (row_at(&out.result, nominal_value).mean_reward - pets_nominal) / pets_nominal.abs();
        let score = mean_over(&out.result, perturbed);
        progress(format!("tuning eps={eps}: nominal change {:+.1}%, perturbed mean {score:.1}", 100.0 * gap));
        scored.push((dr, gap, score));
    }
    let admissible = scored.iter().filter(|(_, gap, _)| *gap >= -0.15);
    let pick = admissible
        .max_by(|a, b| a.2.total_cmp(&b.2))
        .or_else(|| scored.iter().max_by(|a, b| a.1.total_cmp(&b.1)))
        .expect("four candidates");
    let summary = scored.iter().map(|(d, gap, s)| format!("{}:{:+.0}%/{s:.0}", d.epsilon, 100.0 * gap)).collect::<Vec<_>>().join(" ");
    (pick.0, summary)
}

struct SweepCheck {
    pets: SweepOutcome,
    dr: SweepOutcome,
    dr_config: DrConfig,
    tuning: String,
}

fn train_and_sweep(
    dir: &Path,
    kind: EnvKind,
    train: &TrainRunConfig,
    base: SweepSpec,
    nominal_value: f64,
    perturbed: &[f64],
    tuning_seeds: usize,
) -> Result<SweepCheck, String> {
    let params = kind.nominal_params();
    let t0 = Instant::now();
    let agent = train_agent_with(train, kind, &params, &mut |l| {
        if l.episode % 5 == 4 || l.episode + 1 == train.episodes {
            progress(format!("{} training episode {} reward {:.1} [{:.0}s]", kind.name(), l.episode, l.total_reward, t0.elapsed().as_secs_f64()));
        }
    })
    .map_err(|e| format!("training failed: {e}"))?;
    let _ = fs::write(dir.join("model.ckpt"), drpets_core::ensemble::save_checkpoint(&agent.model));
    let (dr_config, tuning) = tune_epsilon(&agent.model, &base, &params, nominal_value, perturbed, tuning_seeds, dir);
    progress(format!("chosen eps={} [{:.0}s]", dr_config.epsilon, t0.elapsed().as_secs_f64()));
    let pets = sweep(&agent.model, &base, &params, 1).map_err(|e| format!("PETS sweep failed: {e}"))?;
    progress(format!("PETS sweep done [{:.0}s]", t0.elapsed().as_secs_f64()));
    let dr_spec = SweepSpec { algorithm: Algorithm::DrPets, dr: dr_config, ..base };
    let dr = sweep(&agent.model, &dr_spec, &params, 1).map_err(|e| format!("DR-PETS sweep failed: {e}"))?;
    save_sweep(dir, "pets", &pets);
    save_sweep(dir, "drpets", &dr);
    let _ = fs::write(dir.join("sweep.svg"), render_svg(&pets.result.merged(&dr.result), dr_spec.param.name()));
    Ok(SweepCheck { pets, dr, dr_config, tuning })
}

fn table(check: &SweepCheck) -> String {
    check
        .pets
        .result
        .rows
        .iter()
        .zip(&check.dr.result.rows)
        .map(|(p, d)| format!("{}: {:.1}±{:.1} vs {:.1}±{:.1}", p.param, p.mean_reward, p.stderr, d.mean_reward, d.stderr))
        .collect::<Vec<_>>()
        .join(", ")
}

fn pendulum_planner() -> PlannerConfig {
    let params = EnvKind::Pendulum.nominal_params();
    PlannerConfig { horizon: 15, population: 80, elite_count: 8, cem_iterations: 3, particles: 5, ..PlannerConfig::for_env(&params) }
}

/// Difference of two sweep means judged against the standard error of the
/// difference.
fn within_one_stderr(a: &SweepRow, b: &SweepRow) -> bool {
    (a.mean_reward - b.mean_reward).abs() <= a.stderr.hypot(b.stderr)
}

fn c7_pendulum(dir: &Path) -> Outcome {
    let train = TrainRunConfig { planner: pendulum_planner(), ..TrainRunConfig::default() };
    let base = SweepSpec { planner: pendulum_planner(), ..SweepSpec::default() };
    let check = match train_and_sweep(dir, EnvKind::Pendulum, &train, base, 1.0, &[1.25, 1.5], 2) {
        Ok(c) => c,
        Err(e) => return Outcome::new(false, e),
    };
    let (p, d) = (&check.pets.result, &check.dr.result);
    let heavy: Vec<(&SweepRow, &SweepRow)> = [1.25, 1.5].iter().map(|&m| (row_at(p, m), row_at(d, m))).collect();
    let above = heavy.iter().filter(|(p, d)| d.mean_reward >= p.mean_reward).count();
    let close = heavy.iter().filter(|(p, d)| d.mean_reward < p.mean_reward && within_one_stderr(p, d)).count();
    let direction = above == 2 || (above == 1 && close == 1);
    let (pn, dn) = (row_at(p, 1.0), row_at(d, 1.0));
    let nominal_gap = (dn.mean_reward - pn.mean_reward).abs() / pn.mean_reward.abs();
    Outcome::new(
        direction && nominal_gap <= 0.15,
        format!(
            "eps={} (tuning {}); PETS vs DR-PETS {}; DR-PETS >= PETS at {above}/2 heavy masses; nominal gap {:.1}% (tol 15%)",
            check.dr_config.epsilon,
            check.tuning,
            table(&check),
            100.0 * nominal_gap
        ),
    )
}

fn cartpole_planner() -> PlannerConfig {
    let params = EnvKind::CartpoleSwingup.nominal_params();
    PlannerConfig { horizon: 25, population: 80, elite_count: 8, cem_iterations: 3, particles: 5, ..PlannerConfig::for_env(&params) }
}

fn c8_cartpole(dir: &Path) -> Outcome {
    let kind = EnvKind::CartpoleSwingup;
    let train = TrainRunConfig { planner: cartpole_planner(), ..TrainRunConfig::default() };
    let base = SweepSpec {
        env: kind,
        param: drpets_bench::SweepParam::PoleLength,
        grid: vec![0.2, 0.35, 0.5, 0.65, 0.8],
        planner: cartpole_planner(),
        ..SweepSpec::default()
    };
    let check = match train_and_sweep(dir, kind, &train, base, 0.5, &[0.65, 0.8], 1) {
        Ok(c) => c,
        Err(e) => return Outcome::new(false, e),
    };
    let (p, d) = (&check.pets.result, &check.dr.result);
    let long: Vec<(&SweepRow, &SweepRow)> = [0.65, 0.8].iter().map(|&l| (row_at(p, l), row_at(d, l))).collect();
    let above = long.iter().filter(|(p, d)| d.mean_reward >= p.mean_reward).count();
    let close = long.iter().filter(|(p, d)| d.mean_reward < p.mean_reward && within_one_stderr(p, d)).count();
    let pooled = |rows: &[&SweepRow]| (rows.iter().map(|r| r.stderr * r.stderr).sum::<f64>() / rows.len() as f64).sqrt();
    let pets_se = pooled(&long.iter().map(|x| x.0).collect::<Vec<_>>());
    let dr_se = pooled(&long.iter().map(|x| x.1).collect::<Vec<_>>());
    Outcome::new(
        (above == 2 || (above == 1 && close == 1)) && dr_se <= pets_se,
        format!(
            "eps={} (tuning {}); PETS vs DR-PETS {}; DR-PETS >= PETS at {above}/2 long poles; pooled stderr PETS {pets_se:.2} vs DR-PETS {dr_se:.2}",
            check.dr_config.epsilon,
            check.tuning,
            table(&check)
        ),
    )
}

const REPRO_CONFIG: &str = r#"
seed = 21
[planner]
horizon = 8
population = 30
elite_count = 4
cem_iterations = 2
particles = 3
[model]
ensemble_size = 3
hidden = [16, 16]
episodes = 3
steps_per_episode = 60
epochs = 5
[sweep]
grid = [0.75, 1.0, 1.25]
seeds_per_point = 2
horizon = 60
algorithm = "DR-PETS"
[dr]
epsilon = 0.05
"#;

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

/// Train and sweep through the command line, then repeat both from the
/// echoed configuration into fresh directories.
fn c9_reproducible(dir: &Path) -> Outcome {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, REPRO_CONFIG).unwrap();
    let cli = |args: &[&Path]| -> i32 {
        let mut argv = vec!["drpets".to_owned()];
        argv.extend(args.iter().map(|a| a.to_string_lossy().into_owned()));
        drpets_cli::run_from(argv)
    };
    let (first, second) = (dir.join("first"), dir.join("second"));
    let p = Path::new;
    let mut codes = vec![
        cli(&[p("train"), p("--config"), &cfg, p("--out"), &first]),
        cli(&[p("sweep"), p("--config"), &cfg, p("--out"), &first]),
    ];
    let echoed = first.join("config.resolved");
    codes.push(cli(&[p("train"), p("--config"), &echoed, p("--out"), &second]));
    codes.push(cli(&[p("sweep"), p("--config"), &echoed, p("--out"), &second]));
    if codes.iter().any(|c| *c != 0) {
        return Outcome::new(false, format!("command exit codes {codes:?}"));
    }
    let (a, b) = (tree(&first), tree(&second));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    Outcome::new(
        a == b && ["config.resolved", "episodes.log", "model.ckpt", "sweep.csv", "sweep.svg"].iter().all(|f| names.contains(f)),
        format!("re-run from echoed config byte-identical over {names:?}: {}", a == b),
    )
}
