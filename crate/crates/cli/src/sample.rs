//! The `sample` command: seeded guided sampling over many conditions.

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use mdg_core::guidance::TripletMetrics;
use mdg_core::{mdg_sample, Embedding, GuidanceMode, NoiseSchedule, SamplingContext, SyntheticWorld};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SAMPLES_CSV: &str = "samples.csv";
pub const TRAJECTORIES_JSON: &str = "trajectories.json";
pub const STEP_TRACE_CSV: &str = "step_trace.csv";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const CONFIG_JSON: &str = "config.json";

/// The conditions of one sample. Independent of the guidance mode, so runs
/// with different modes are paired sample by sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub concept: usize,
    pub video: Embedding,
    pub text: Embedding,
    pub sampler_seed: u64,
    pub ground_truth: Embedding,
}

pub fn plan_sample(world: &SyntheticWorld, run_seed: u64, sample_id: usize) -> CliResult<SamplePlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(sample_id as u64);
    let concept = rng.random_range(0..world.concepts());
    let (video, text) = world.emit_condition_with(concept, &mut rng)?;
    let sampler_seed = rng.random();
    let ground_truth = world.sample_ground_truth(concept, &mut rng)?;
    Ok(SamplePlan { concept, video, text, sampler_seed, ground_truth })
}

/// One row of `samples.csv`. Column order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: usize,
    pub mode: GuidanceMode,
    #[serde(rename = "V")]
    pub volume: f64,
    pub dcos_tv: f64,
    pub dcos_ta: f64,
    pub dcos_va: f64,
    pub dcos: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub concept: usize,
    pub sampler_seed: u64,
    pub video: Embedding,
    pub text: Embedding,
    pub ground_truth: Embedding,
    pub final_latent: Vec<f64>,
    pub final_embedding: Embedding,
    pub metrics: TripletMetrics,
    /// Timestep of each DDIM step.
    pub timesteps: Vec<usize>,
    /// Volume of the clean prediction after each DDIM step's guidance.
    pub volume_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub config_hash: String,
    pub world_hash: String,
    pub mode: GuidanceMode,
    pub run_seed: u64,
    pub samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub world_hash: String,
    pub mode: GuidanceMode,
    pub num_samples: usize,
    pub run_seed: u64,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub mode: GuidanceMode,
    pub num_samples: usize,
    pub mean_volume: f64,
    pub mean_dcos: f64,
    pub config_hash: String,
    pub world_hash: String,
}

#[derive(Serialize)]
struct StepRow {
    step: usize,
    t: usize,
    mode: GuidanceMode,
    mean_v: f64,
}

fn run_one(
    world: &SyntheticWorld,
    schedule: &NoiseSchedule,
    config: &ExperimentConfig,
    sample_id: usize,
) -> CliResult<SampleRecord> {
    let ctx = SamplingContext::from_world(world, schedule, config.schedule.ddim_steps);
    let plan = plan_sample(world, config.run.seed, sample_id)?;
    let traj = mdg_sample(&ctx, plan.concept, &plan.video, &plan.text, &config.guidance, plan.sampler_seed)?;
    log::debug!("sample {sample_id}: concept {} V {:.4}", plan.concept, traj.final_metrics.volume);
    Ok(SampleRecord {
        sample_id,
        concept: plan.concept,
        sampler_seed: plan.sampler_seed,
        video: plan.video,
        text: plan.text,
        ground_truth: plan.ground_truth,
        final_latent: traj.final_latent.clone(),
        final_embedding: traj.final_embedding.clone(),
        metrics: traj.final_metrics,
        timesteps: traj.records.iter().map(|r| r.t).collect(),
        volume_trace: traj.volume_trace(),
    })
}

/// Samples `config.run.num_samples` items on a pool of `jobs` threads.
/// Records come back in sample order whatever the completion order.
pub fn run_samples(world: &SyntheticWorld, config: &ExperimentConfig, jobs: usize) -> CliResult<Vec<SampleRecord>> {
    let schedule = config.schedule.build()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Output(e.to_string()))?;
    pool.install(|| (0..config.run.num_samples).into_par_iter().map(|i| run_one(world, &schedule, config, i)).collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Output(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Output(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Runs the sampler and writes `samples.csv`, `trajectories.json`,
/// `step_trace.csv`, `config.json` and `manifest.json` into `out`.
pub fn cmd_sample(
    config: &ExperimentConfig,
    world: &SyntheticWorld,
    world_hash: &str,
    out: &Path,
    jobs: usize,
) -> CliResult<SampleSummary> {
    config.validate()?;
    if config.world != world.params {
        log::warn!("config world parameters differ from the loaded world; using the world file");
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let records = run_samples(world, config, jobs)?;
    let mode = config.guidance.mode;
    let config_hash = config.hash();

    let rows = records.iter().map(|r| SampleRow {
        sample_id: r.sample_id,
        mode,
        volume: r.metrics.volume,
        dcos_tv: r.metrics.dcos_tv,
        dcos_ta: r.metrics.dcos_ta,
        dcos_va: r.metrics.dcos_va,
        dcos: r.metrics.dcos_total(),
    });
    write_csv(&out.join(SAMPLES_CSV), rows)?;

    let n = records.len() as f64;
    let steps = records[0].timesteps.len();
    let trace = (0..steps).map(|s| StepRow {
        step: s,
        t: records[0].timesteps[s],
        mode,
        mean_v: records.iter().map(|r| r.volume_trace[s]).sum::<f64>() / n,
    });
    write_csv(&out.join(STEP_TRACE_CSV), trace)?;

    let mean_volume = records.iter().map(|r| r.metrics.volume).sum::<f64>() / n;
    let mean_dcos = records.iter().map(|r| r.metrics.dcos_total()).sum::<f64>() / n;
    let file = TrajectoryFile {
        config_hash: config_hash.clone(),
        world_hash: world_hash.to_string(),
        mode,
        run_seed: config.run.seed,
        samples: records,
    };
    write_json(&out.join(TRAJECTORIES_JSON), &file)?;
    let mut effective = config.clone();
    effective.run.out_dir = None;
    write_json(&out.join(CONFIG_JSON), &effective)?;
    let manifest = Manifest {
        config_hash: config_hash.clone(),
        world_hash: world_hash.to_string(),
        mode,
        num_samples: file.samples.len(),
        run_seed: config.run.seed,
        files: [SAMPLES_CSV, TRAJECTORIES_JSON, STEP_TRACE_CSV, CONFIG_JSON].map(String::from).to_vec(),
    };
    write_json(&out.join(MANIFEST_JSON), &manifest)?;
    log::info!("{mode}: {} samples, mean V {mean_volume:.4}, mean dcos {mean_dcos:.4}", file.samples.len());

    Ok(SampleSummary {
        mode,
        num_samples: file.samples.len(),
        mean_volume,
        mean_dcos,
        config_hash,
        world_hash: world_hash.to_string(),
    })
}

pub fn load_trajectories(dir: &Path) -> CliResult<TrajectoryFile> {
    let path = dir.join(TRAJECTORIES_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
