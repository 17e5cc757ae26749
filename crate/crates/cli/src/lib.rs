//! Library side of the `mdg` binary: configuration, world files, the
//! sampling driver, evaluation reports and the self-test.

pub mod config;
pub mod error;
pub mod report;
pub mod sample;
pub mod selftest;
pub mod world_file;

pub use config::{sha256_hex, world_hash, ExperimentConfig, RunConfig, ScheduleConfig};
pub use error::{CliError, CliResult, ErrorReport};
pub use report::{cmd_eval, evaluate, EvalReport, ModeSummary, PairComparison};
pub use sample::{cmd_sample, load_trajectories, plan_sample, run_samples, SampleRecord, SampleSummary};
pub use selftest::{run_selftest, CheckResult};
pub use world_file::{cmd_gen_world, load_world, WorldFile, WorldSummary};
