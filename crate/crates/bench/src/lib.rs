//! Experiment harness: random data collection, the collect/train/plan loop,
//! seeded parameter sweeps, and CSV/SVG export of their results.

mod collect;
mod error;
mod export;
mod stats;
mod sweep;
mod train_run;

pub use collect::{collect_random, dataset_from_episodes, random_episodes};
pub use error::{BenchError, Result};
pub use export::{export, parse_csv, render_svg, write_csv, write_diagnostics, CSV_HEADER};
pub use stats::aggregate;
pub use sweep::{
    episode_streams, sweep, sweep_with, Algorithm, EpisodeDiagnostic, PointDiagnostic, SweepOutcome, SweepParam, SweepResult, SweepRow, SweepSpec,
};
pub use train_run::{train_agent, train_agent_with, EpisodeLog, TrainRunConfig, TrainedAgent};
