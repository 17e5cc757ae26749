//! The `eval` command: compares result directories produced by `sample`.

use crate::error::{CliError, CliResult};
use crate::sample::{load_trajectories, TrajectoryFile};
use mdg_core::eval::{frechet_distance, retrieval_accuracy, sign_test, SemanticReport, SemanticSample, SignTest};
use mdg_core::{GuidanceMode, SyntheticWorld};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const COMPARISONS_CSV: &str = "comparisons.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub label: String,
    pub mode: GuidanceMode,
    pub config_hash: String,
    pub num_samples: usize,
    pub mean: SemanticSample,
    /// Fréchet distance from generated audio embeddings to the matched
    /// ground-truth embeddings.
    pub frechet_vs_ground_truth: f64,
    pub retrieval_accuracy: f64,
}

/// Paired comparison of run `a` against run `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    pub num_pairs: usize,
    /// Mean of `V_a − V_b`.
    pub delta_volume: f64,
    pub delta_dcos: f64,
    pub delta_frechet: f64,
    pub delta_retrieval: f64,
    /// Sign test of `V_a < V_b`.
    pub volume_a_lower: SignTest,
    /// Sign test of `V_b < V_a`.
    pub volume_b_lower: SignTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub world_hash: String,
    pub modes: Vec<ModeSummary>,
    pub comparisons: Vec<PairComparison>,
}

#[derive(Serialize)]
struct ReportRow<'a> {
    label: &'a str,
    mode: GuidanceMode,
    n: usize,
    #[serde(rename = "V")]
    volume: f64,
    dcos_tv: f64,
    dcos_ta: f64,
    dcos_va: f64,
    dcos: f64,
    frechet: f64,
    retrieval: f64,
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    a: &'a str,
    b: &'a str,
    n: usize,
    delta_v: f64,
    delta_dcos: f64,
    delta_frechet: f64,
    delta_retrieval: f64,
    p_a_lower: f64,
    p_b_lower: f64,
}

fn summarize(label: String, file: &TrajectoryFile, world: &SyntheticWorld) -> CliResult<ModeSummary> {
    let samples = file.samples.iter().map(|s| SemanticSample::from(s.metrics)).collect();
    let report = SemanticReport::from_samples(samples)?;
    let generated: Vec<_> = file.samples.iter().map(|s| s.final_embedding.clone()).collect();
    let truth: Vec<_> = file.samples.iter().map(|s| s.ground_truth.clone()).collect();
    let frechet = frechet_distance(&generated, &truth)?.distance;
    let items: Vec<_> = file.samples.iter().map(|s| (s.final_embedding.clone(), s.concept)).collect();
    Ok(ModeSummary {
        label,
        mode: file.mode,
        config_hash: file.config_hash.clone(),
        num_samples: file.samples.len(),
        mean: report.mean,
        frechet_vs_ground_truth: frechet,
        retrieval_accuracy: retrieval_accuracy(world.anchors(), &items)?,
    })
}

fn compare(a: (&ModeSummary, &TrajectoryFile), b: (&ModeSummary, &TrajectoryFile)) -> CliResult<PairComparison> {
    let (sa, fa) = a;
    let (sb, fb) = b;
    let paired = fa.samples.len() == fb.samples.len()
        && fa
            .samples
            .iter()
            .zip(&fb.samples)
            .all(|(x, y)| x.sample_id == y.sample_id && x.concept == y.concept && x.sampler_seed == y.sampler_seed);
    if !paired {
        return Err(CliError::SchemaMismatch(format!(
            "{} and {} were not sampled on the same conditions and seeds",
            sa.label, sb.label
        )));
    }
    let dv: Vec<f64> = fa.samples.iter().zip(&fb.samples).map(|(x, y)| x.metrics.volume - y.metrics.volume).collect();
    let flipped: Vec<f64> = dv.iter().map(|d| -d).collect();
    Ok(PairComparison {
        a: sa.label.clone(),
        b: sb.label.clone(),
        num_pairs: dv.len(),
        delta_volume: sa.mean.volume - sb.mean.volume,
        delta_dcos: sa.mean.dcos - sb.mean.dcos,
        delta_frechet: sa.frechet_vs_ground_truth - sb.frechet_vs_ground_truth,
        delta_retrieval: sa.retrieval_accuracy - sb.retrieval_accuracy,
        volume_a_lower: sign_test(&dv)?,
        volume_b_lower: sign_test(&flipped)?,
    })
}

/// Builds the comparison report. Every directory must come from the world
/// with hash `world_hash`.
pub fn evaluate(dirs: &[PathBuf], world: &SyntheticWorld, world_hash: &str) -> CliResult<EvalReport> {
    if dirs.is_empty() {
        return Err(CliError::Config("eval needs at least one results directory".into()));
    }
    let files = dirs.iter().map(|d| load_trajectories(d)).collect::<CliResult<Vec<_>>>()?;
    for (dir, file) in dirs.iter().zip(&files) {
        if file.world_hash != world_hash {
            return Err(CliError::SchemaMismatch(format!(
                "{} was sampled from world {} but the evaluation world is {world_hash}",
                dir.display(),
                file.world_hash
            )));
        }
    }
    let modes = dirs
        .iter()
        .zip(&files)
        .map(|(d, f)| summarize(d.display().to_string(), f, world))
        .collect::<CliResult<Vec<_>>>()?;
    let mut comparisons = Vec::new();
    for i in 0..files.len() {
        for j in i + 1..files.len() {
            comparisons.push(compare((&modes[i], &files[i]), (&modes[j], &files[j]))?);
        }
    }
    if files.len() == 1 {
        comparisons.push(compare((&modes[0], &files[0]), (&modes[0], &files[0]))?);
    }
    Ok(EvalReport { world_hash: world_hash.to_string(), modes, comparisons })
}

/// Writes `report.json`, `report.csv` and `comparisons.csv` into `out`.
pub fn cmd_eval(dirs: &[PathBuf], world: &SyntheticWorld, world_hash: &str, out: &Path) -> CliResult<EvalReport> {
    let report = evaluate(dirs, world, world_hash)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Output(e.to_string()))?;
    text.push('\n');
    let json = out.join(REPORT_JSON);
    std::fs::write(&json, text).map_err(|e| CliError::io(&json, e))?;

    let csv_err = |e: csv::Error| CliError::Output(e.to_string());
    let mut w = csv::Writer::from_path(out.join(REPORT_CSV)).map_err(csv_err)?;
    for m in &report.modes {
        w.serialize(ReportRow {
            label: &m.label,
            mode: m.mode,
            n: m.num_samples,
            volume: m.mean.volume,
            dcos_tv: m.mean.dcos_tv,
            dcos_ta: m.mean.dcos_ta,
            dcos_va: m.mean.dcos_va,
            dcos: m.mean.dcos,
            frechet: m.frechet_vs_ground_truth,
            retrieval: m.retrieval_accuracy,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;

    let mut w = csv::Writer::from_path(out.join(COMPARISONS_CSV)).map_err(csv_err)?;
    for c in &report.comparisons {
        w.serialize(ComparisonRow {
            a: &c.a,
            b: &c.b,
            n: c.num_pairs,
            delta_v: c.delta_volume,
            delta_dcos: c.delta_dcos,
            delta_frechet: c.delta_frechet,
            delta_retrieval: c.delta_retrieval,
            p_a_lower: c.volume_a_lower.p_value,
            p_b_lower: c.volume_b_lower.p_value,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;
    for m in &report.modes {
        log::info!(
            "{} [{}]: V {:.4} dcos {:.4} FD {:.4} retrieval {:.3}",
            m.label,
            m.mode,
            m.mean.volume,
            m.mean.dcos,
            m.frechet_vs_ground_truth,
            m.retrieval_accuracy
        );
    }
    Ok(report)
}
