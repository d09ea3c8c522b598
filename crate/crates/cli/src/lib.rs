//! `drpets` command-line front end. Every output of a run lands under
//! `--out`; the resolved configuration is written next to it so the run can
//! be repeated exactly.

pub mod config;
pub mod selftest;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use drpets_bench::{
    export, parse_csv, random_episodes, sweep_with, train_agent_with, write_diagnostics, Algorithm, BenchError,
    SweepResult,
};
use drpets_core::ensemble::{load_checkpoint, save_checkpoint};
use drpets_core::{EnsembleModel, PNorm};
use serde::Serialize;

use config::{Overrides, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_INVALID,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::InvalidSpec(m) => CliError::Config(m),
            BenchError::Core(drpets_core::Error::InvalidConfig(m)) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "drpets", version, about = "Model-based RL with distributionally robust planning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out uniformly random episodes and store their transitions.
    Collect(Common),
    /// Train an ensemble with the collect/train/plan loop.
    Train(Common),
    /// Evaluate a trained ensemble over a parameter grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Model to plan with; defaults to `<out>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Draw sweep CSVs into one figure.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Input CSVs; defaults to `<out>/sweep.csv`.
        #[arg(long = "csv")]
        csv: Vec<PathBuf>,
    },
    /// Run the numerical self-checks and print a pass/fail table.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_parser = parse_p)]
    pub p: Option<PNorm>,
    #[arg(long, value_parser = parse_algorithm)]
    pub algorithm: Option<Algorithm>,
    #[arg(long)]
    pub workers: Option<usize>,
}

fn parse_p(s: &str) -> Result<PNorm, String> {
    s.parse().map_err(|e: drpets_core::Error| e.to_string())
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: BenchError| e.to_string())
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Collect(c) => collect(&c),
        Command::Train(c) => train(&c),
        Command::Sweep { common, checkpoint } => sweep(&common, checkpoint.as_deref()),
        Command::Plot { common, csv } => plot(&common, &csv),
        Command::Selftest { seed } => {
            let reports = selftest::run_all(&selftest::SelftestSizes::default(), seed);
            print!("{}", selftest::render_table(&reports));
            if reports.iter().all(|r| r.passed()) {
                Ok(())
            } else {
                Err(CliError::Runtime("self-test failed".into()))
            }
        }
    }
}

/// Loads, overrides and validates the configuration, then echoes it into
/// the output directory.
fn prepare(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        None => RunConfig::from_toml("")?,
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
    };
    cfg.apply(&Overrides { seed: c.seed, epsilon: c.epsilon, p: c.p, algorithm: c.algorithm, workers: c.workers });
    cfg.validate()?;
    fs::create_dir_all(&c.out)?;
    fs::write(c.out.join("config.resolved"), cfg.to_toml())?;
    Ok(cfg)
}

fn json_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| CliError::Runtime(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CollectLog {
    episode: usize,
    seed: u64,
    total_reward: f64,
    status: &'static str,
}

fn collect(c: &Common) -> Result<(), CliError> {
    let cfg = prepare(c)?;
    let episodes = random_episodes(cfg.env, &cfg.params, cfg.collect.episodes, cfg.collect.horizon, cfg.seed)?;
    let data = drpets_bench::dataset_from_episodes(cfg.env, &episodes)?;
    let d = cfg.env.obs_dim();
    let mut w = csv::Writer::from_path(c.out.join("transitions.csv")).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut header: Vec<String> = (0..d).map(|i| format!("obs{i}")).collect();
    header.push("action".into());
    header.extend((0..d).map(|i| format!("next{i}")));
    w.write_record(&header).map_err(|e| CliError::Runtime(e.to_string()))?;
    for (obs, action, next) in data.rows() {
        let rec: Vec<String> = obs.iter().chain(action).chain(next).map(|x| format!("{x:.16e}")).collect();
        w.write_record(&rec).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    let logs: Vec<CollectLog> = episodes
        .iter()
        .enumerate()
        .map(|(i, e)| CollectLog { episode: i, seed: e.seed, total_reward: e.total_reward, status: "ok" })
        .collect();
    json_lines(&c.out.join("episodes.log"), &logs)?;
    eprintln!("collected {} transitions into {}", data.len(), c.out.display());
    Ok(())
}

fn train_model(cfg: &RunConfig, run: &drpets_bench::TrainRunConfig, out: &Path) -> Result<EnsembleModel, CliError> {
    let t0 = Instant::now();
    let agent = train_agent_with(run, cfg.env, &cfg.params, &mut |l| {
        eprintln!(
            "episode {:>3} {} reward {:>10.2} rows {:>6} [{:.0}s]",
            l.episode,
            if l.random { "random" } else { "mpc   " },
            l.total_reward,
            l.dataset_rows,
            t0.elapsed().as_secs_f64()
        )
    })?;
    fs::write(out.join("model.ckpt"), save_checkpoint(&agent.model))?;
    json_lines(&out.join("episodes.log"), &agent.curve)?;
    Ok(agent.model)
}

fn train(c: &Common) -> Result<(), CliError> {
    let cfg = prepare(c)?;
    train_model(&cfg, &cfg.train_run(), &c.out)?;
    Ok(())
}

fn sweep(c: &Common, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let cfg = prepare(c)?;
    let model = if cfg.sweep.retrain {
        let run = drpets_bench::TrainRunConfig { dr: cfg.sweep_spec().effective_dr(), ..cfg.train_run() };
        train_model(&cfg, &run, &c.out)?
    } else {
        let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| c.out.join("model.ckpt"));
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("cannot read checkpoint {}: {e}", path.display())))?;
        load_checkpoint(&text).map_err(|e| CliError::Usage(format!("bad checkpoint {}: {e}", path.display())))?
    };
    let spec = cfg.sweep_spec();
    let t0 = Instant::now();
    let outcome = sweep_with(&model, &spec, &cfg.params, cfg.workers, &|d| {
        eprintln!(
            "{} {}={} seed {} -> {} [{:.0}s]",
            d.algorithm,
            spec.param.name(),
            d.param,
            d.seed_index,
            d.total_reward.map_or(d.status.clone(), |r| format!("{r:.2}")),
            t0.elapsed().as_secs_f64()
        )
    })?;
    export(&outcome.result, &c.out.join("sweep.csv"), Some((&c.out.join("sweep.svg"), spec.param.name())))?;
    let mut log = BufWriter::new(fs::File::create(c.out.join("episodes.log"))?);
    write_diagnostics(&outcome.episodes, &outcome.points, &mut log)?;
    log.flush()?;
    Ok(())
}

fn plot(c: &Common, inputs: &[PathBuf]) -> Result<(), CliError> {
    let cfg = prepare(c)?;
    let default = [c.out.join("sweep.csv")];
    let inputs = if inputs.is_empty() { &default[..] } else { inputs };
    let mut merged = SweepResult::default();
    for path in inputs {
        let file = fs::File::open(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let r = parse_csv(file).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        merged = merged.merged(&r);
    }
    fs::write(c.out.join("sweep.svg"), drpets_bench::render_svg(&merged, cfg.sweep.param.name()))?;
    Ok(())
}
