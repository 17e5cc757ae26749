//! Runs every guidance mode on the same seeds and prints mean metrics.
//!
//! `cargo run --release -p mdg-core --example compare_modes -- [samples] [prior_std] [radius]`

use mdg_core::eval::{frechet_distance, nearest_anchor, sign_test};
use mdg_core::{make_world, mdg_sample, GuidanceConfig, GuidanceMode, NoiseSchedule, SamplingContext, WorldParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> mdg_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut params = WorldParams::default();
    if let Some(s) = args.get(2).and_then(|s| s.parse().ok()) {
        params.prior_std = s;
    }
    if let Some(r) = args.get(3).and_then(|s| s.parse().ok()) {
        params.latent_radius = r;
    }
    if let Some(s) = args.get(4).and_then(|s| s.parse().ok()) {
        params.sigma_mod = s;
    }
    let world = make_world(params)?;
    let schedule = NoiseSchedule::default();
    let ctx = SamplingContext::from_world(&world, &schedule, 30);

    let mut gt = Vec::new();
    let mut draws = Vec::new();
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let c = rng.random_range(0..world.concepts());
        let (ev, ep) = world.emit_condition_with(c, &mut rng)?;
        gt.push(world.sample_ground_truth(c, &mut rng)?.into_vec());
        draws.push((c, ev, ep, rng.random::<u64>()));
    }
    let mut gt2 = Vec::new();
    for (c, ..) in &draws {
        let mut rng = ChaCha8Rng::seed_from_u64(gt2.len() as u64 ^ 0xfeed);
        gt2.push(world.sample_ground_truth(*c, &mut rng)?.into_vec());
    }
    println!("ground truth vs resampled ground truth: fd {:.4}", frechet_distance(&gt2, &gt)?.distance);
    let mut base_v = Vec::new();
    for mode in [GuidanceMode::None, GuidanceMode::Pairwise, GuidanceMode::Volume] {
        let cfg = GuidanceConfig::with_mode(mode);
        let mut vs = Vec::new();
        let (mut dc, mut hits) = (0.0, 0);
        let mut embs = Vec::new();
        for (c, ev, ep, seed) in &draws {
            let tr = mdg_sample(&ctx, *c, ev, ep, &cfg, *seed)?;
            vs.push(tr.final_metrics.volume);
            dc += tr.final_metrics.dcos_total();
            hits += usize::from(nearest_anchor(world.anchors(), &tr.final_embedding)? == *c);
            embs.push(tr.final_embedding.into_vec());
        }
        let fd = frechet_distance(&embs, &gt)?.distance;
        let mean_v = vs.iter().sum::<f64>() / n as f64;
        let p = if base_v.is_empty() {
            base_v = vs.clone();
            1.0
        } else {
            let d: Vec<f64> = vs.iter().zip(&base_v).map(|(a, b)| a - b).collect();
            sign_test(&d)?.p_value
        };
        println!(
            "{mode:>8}: V {mean_v:.4}  dcos {:.4}  retrieval {:.3}  fd {fd:.4}  p {p:.2e}",
            dc / n as f64,
            hits as f64 / n as f64
        );
    }
    Ok(())
}
