//! Quick invariant checks runnable from the binary.

use crate::config::ExperimentConfig;
use crate::error::CliResult;
use mdg_core::diffusion::{forward_sample, initial_noise, predict_clean};
use mdg_core::{
    frechet_distance, gram, make_world, mdg_sample, normalize, Embedding, GuidanceConfig, GuidanceMode, Modality,
    SamplingContext, TripletGram,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn unit(d: usize, rng: &mut ChaCha8Rng) -> Embedding {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(e) = normalize(&v) {
            return e;
        }
    }
}

fn volume_bounds(rng: &mut ChaCha8Rng) -> CliResult<CheckResult> {
    let mut worst = 0.0f64;
    let mut in_range = true;
    for _ in 0..1000 {
        let (a, b, c) = (unit(16, rng), unit(16, rng), unit(16, rng));
        let v = gram(&a, &b, &c)?.volume()?;
        let w = gram(&c, &a, &b)?.volume()?;
        in_range &= (0.0..=1.0).contains(&v);
        worst = worst.max((v - w).abs());
    }
    Ok(CheckResult {
        name: "volume bounds and permutation invariance",
        passed: in_range && worst < 1e-12,
        detail: format!("max permutation gap {worst:.2e}"),
    })
}

fn gradient(rng: &mut ChaCha8Rng) -> CliResult<CheckResult> {
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 20 {
        let cols = [unit(16, rng), unit(16, rng), unit(16, rng)].map(|e| e.into_vec());
        let g = TripletGram::from_columns(&cols[0], &cols[1], &cols[2])?;
        if g.volume()? <= 0.05 {
            continue;
        }
        checked += 1;
        let analytic = g.volume_grad(Modality::Audio, 1e-6)?;
        let h = 1e-5;
        let mut err = 0.0;
        let mut norm = 0.0;
        for i in 0..16 {
            let mut p = cols.clone();
            let mut m = cols.clone();
            p[1][i] += h;
            m[1][i] -= h;
            let vp = TripletGram::from_columns(&p[0], &p[1], &p[2])?.volume()?;
            let vm = TripletGram::from_columns(&m[0], &m[1], &m[2])?.volume()?;
            let fd = (vp - vm) / (2.0 * h);
            err += (fd - analytic[i]).powi(2);
            norm += fd * fd;
        }
        worst = worst.max(err.sqrt() / norm.sqrt().max(1e-8));
    }
    Ok(CheckResult {
        name: "volume gradient against central differences",
        passed: worst <= 1e-4,
        detail: format!("max relative error {worst:.2e}"),
    })
}

fn round_trip(config: &ExperimentConfig, rng: &mut ChaCha8Rng) -> CliResult<CheckResult> {
    let schedule = config.schedule.build()?;
    let z0 = initial_noise(8, rng);
    let eps = initial_noise(8, rng);
    let mut worst = 0.0f64;
    for t in 1..=schedule.len() {
        let back = predict_clean(&forward_sample(&z0, t, &eps, &schedule)?, &eps, &schedule)?;
        for (a, b) in back.z.iter().zip(&z0) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(CheckResult {
        name: "clean prediction inverts the forward process",
        passed: worst <= 1e-10,
        detail: format!("max error {worst:.2e}"),
    })
}

fn no_op(config: &ExperimentConfig) -> CliResult<CheckResult> {
    let world = make_world(config.world.clone())?;
    let check = world.check()?;
    let schedule = config.schedule.build()?;
    let ctx = SamplingContext::from_world(&world, &schedule, config.schedule.ddim_steps);
    let mut identical = true;
    for seed in 0..3u64 {
        let (ev, ep) = world.emit_condition(0, seed)?;
        let none = GuidanceConfig { mode: GuidanceMode::None, ..config.guidance.clone() };
        let zero = GuidanceConfig { mode: GuidanceMode::Volume, eta: 0.0, ..config.guidance.clone() };
        identical &= mdg_sample(&ctx, 0, &ev, &ep, &none, seed)?.final_latent
            == mdg_sample(&ctx, 0, &ev, &ep, &zero, seed)?.final_latent;
    }
    Ok(CheckResult {
        name: "world invariants and no-op guidance",
        passed: identical,
        detail: format!(
            "max anchor cosine {:.3}, min construction cosine {:.4}",
            check.max_anchor_cosine, check.min_construction_cosine
        ),
    })
}

fn frechet_self(rng: &mut ChaCha8Rng) -> CliResult<CheckResult> {
    let set: Vec<Vec<f64>> = (0..200).map(|_| initial_noise(8, rng)).collect();
    let d = frechet_distance(&set, &set)?.distance;
    Ok(CheckResult { name: "Fréchet self-distance", passed: d.abs() <= 1e-6, detail: format!("{d:.2e}") })
}

/// Runs every check; errors inside a check count as failures.
pub fn run_selftest(config: &ExperimentConfig) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.run.seed);
    let outcomes = [
        ("volume bounds and permutation invariance", volume_bounds(&mut rng)),
        ("volume gradient against central differences", gradient(&mut rng)),
        ("clean prediction inverts the forward process", round_trip(config, &mut rng)),
        ("world invariants and no-op guidance", no_op(config)),
        ("Fréchet self-distance", frechet_self(&mut rng)),
    ];
    outcomes
        .into_iter()
        .map(|(name, r)| r.unwrap_or_else(|e| CheckResult { name, passed: false, detail: e.to_string() }))
        .collect()
}
