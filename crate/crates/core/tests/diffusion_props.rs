use mdg_core::diffusion::{
    ddim_sample, forward_sample, initial_noise, oracle_denoiser, predict_clean, CfgOracle, GaussianComponent,
    GaussianMixturePrior, LatentState, NoisePredictor, NoiseSchedule,
};
use mdg_core::eval::frechet_from_params;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn gaussian(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Sample mean and unbiased covariance, written out directly.
fn fit(samples: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = samples.len() as f64;
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = DVector::from_iterator(d, s.iter().zip(&mean).map(|(x, m)| x - m));
        cov += &c * c.transpose();
    }
    (mean, cov / (n - 1.0))
}

#[test]
fn round_trip_is_identity_at_every_timestep() {
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z0 = gaussian(8, &mut rng);
    let eps = gaussian(8, &mut rng);
    for t in 1..=sched.len() {
        let zt = forward_sample(&z0, t, &eps, &sched).unwrap();
        let back = predict_clean(&zt, &eps, &sched).unwrap();
        let err = back.z.iter().zip(&z0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-10, "t = {t}: {err}");
    }
}

#[test]
fn forward_marginal_mean_within_three_sigma() {
    // n·‖mean − √ᾱ z₀‖² / (1 − ᾱ) is χ²(d); reject at the two-sided 3σ level
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let z0 = vec![1.5, -0.5, 2.0, 0.0];
    let n = 10_000;
    let bound = ChiSquared::new(z0.len() as f64).unwrap().inverse_cdf(0.9973);
    for t in [1usize, 250, 600, 1000] {
        let a = sched.alpha_bar(t).unwrap();
        let mut mean = [0.0; 4];
        for _ in 0..n {
            let zt = forward_sample(&z0, t, &gaussian(4, &mut rng), &sched).unwrap();
            for (m, x) in mean.iter_mut().zip(&zt.z) {
                *m += x / n as f64;
            }
        }
        let stat: f64 =
            mean.iter().zip(&z0).map(|(m, x)| (m - a.sqrt() * x).powi(2)).sum::<f64>() * n as f64 / (1.0 - a);
        assert!(stat <= bound, "t = {t}: {stat} > {bound}");
    }
}

#[test]
fn full_grid_ddim_with_single_gaussian_oracle_recovers_prior() {
    let sched = NoiseSchedule::default();
    let mean = vec![0.5, -1.0, 0.0, 2.0, 1.0, -0.3, 0.7, 0.0];
    let var = vec![1.0, 0.5, 2.0, 1.0, 0.8, 1.5, 1.0, 0.3];
    let prior = GaussianMixturePrior::single(mean.clone(), var.clone()).unwrap();
    let oracle = CfgOracle { prior: &prior, schedule: &sched, condition: None, scale: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let samples: Vec<Vec<f64>> =
        (0..1000).map(|_| ddim_sample(&oracle, &sched, sched.len(), initial_noise(8, &mut rng)).unwrap()).collect();
    let (m, c) = fit(&samples);
    let fd = frechet_from_params(&m, &c, &mean, &DMatrix::from_diagonal(&DVector::from_vec(var))).unwrap();
    assert!(fd <= 0.05, "fd = {fd}");
}

#[test]
fn short_ddim_on_standard_normal_contracts_by_angle_product() {
    // with ε̂ = √(1−ᾱ) z each step multiplies z by cos(θ_prev − θ), θ = acos √ᾱ
    let sched = NoiseSchedule::default();
    let prior = GaussianMixturePrior::single(vec![0.0; 4], vec![1.0; 4]).unwrap();
    let oracle = CfgOracle { prior: &prior, schedule: &sched, condition: None, scale: 1.0 };
    let ts = sched.ddim_timesteps(30).unwrap();
    let theta = |t: usize| sched.alpha_bar(t).unwrap().sqrt().acos();
    let mut factor = 1.0;
    for (i, &t) in ts.iter().enumerate() {
        let prev = ts.get(i + 1).copied().unwrap_or(0);
        factor *= (theta(t) - theta(prev)).cos();
    }
    let z = vec![1.0, -2.0, 0.5, 3.0];
    let out = ddim_sample(&oracle, &sched, 30, z.clone()).unwrap();
    for (o, x) in out.iter().zip(&z) {
        assert!((o - factor * x).abs() < 1e-12);
    }
    assert!(factor < 1.0 && factor > 0.9);
}

#[test]
fn oracle_jacobian_matches_finite_differences() {
    let sched = NoiseSchedule::default();
    let prior = GaussianMixturePrior::new(vec![
        GaussianComponent { weight: 0.3, mean: vec![1.0, -1.0, 0.5], var: vec![0.5, 1.0, 2.0] },
        GaussianComponent { weight: 0.7, mean: vec![-1.0, 0.5, 0.0], var: vec![1.0, 0.3, 0.7] },
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for condition in [None, Some(1)] {
        let oracle = CfgOracle { prior: &prior, schedule: &sched, condition, scale: 2.5 };
        for t in [50usize, 400, 900] {
            let z = LatentState::new(gaussian(3, &mut rng), t);
            let j = oracle.jacobian(&z).unwrap();
            let h = 1e-6;
            for k in 0..3 {
                let mut p = z.clone();
                let mut m = z.clone();
                p.z[k] += h;
                m.z[k] -= h;
                let (ep, em) = (oracle.predict(&p).unwrap(), oracle.predict(&m).unwrap());
                for r in 0..3 {
                    let fd = (ep[r] - em[r]) / (2.0 * h);
                    assert!((fd - j[(r, k)]).abs() < 1e-6 * (1.0 + fd.abs()), "t {t} ({r},{k})");
                }
            }
        }
    }
}

#[test]
fn unconditional_oracle_follows_dominant_component() {
    let sched = NoiseSchedule::default();
    let prior = GaussianMixturePrior::new(vec![
        GaussianComponent { weight: 0.5, mean: vec![20.0, 20.0], var: vec![1.0, 1.0] },
        GaussianComponent { weight: 0.5, mean: vec![-20.0, -20.0], var: vec![1.0, 1.0] },
    ])
    .unwrap();
    let a = sched.alpha_bar(100).unwrap();
    let z = LatentState::new(vec![20.0 * a.sqrt() + 0.1, 20.0 * a.sqrt() - 0.2], 100);
    let u = oracle_denoiser(&z, &prior, None, &sched).unwrap();
    let c = oracle_denoiser(&z, &prior, Some(0), &sched).unwrap();
    for (x, y) in u.iter().zip(&c) {
        assert!((x - y).abs() < 1e-6);
    }
}

proptest! {
    #[test]
    fn ddim_timesteps_descend(steps in 1usize..200) {
        let sched = NoiseSchedule::default();
        let ts = sched.ddim_timesteps(steps).unwrap();
        prop_assert_eq!(ts.len(), steps);
        prop_assert_eq!(ts[0], 1000);
        prop_assert!(ts.windows(2).all(|w| w[0] > w[1]));
        prop_assert!(*ts.last().unwrap() >= 1);
    }

    #[test]
    fn round_trip_holds_for_arbitrary_latents(seed in any::<u64>(), t in 1usize..=1000) {
        let sched = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z0 = gaussian(6, &mut rng);
        let eps = gaussian(6, &mut rng);
        let zt = forward_sample(&z0, t, &eps, &sched).unwrap();
        let back = predict_clean(&zt, &eps, &sched).unwrap();
        for (a, b) in back.z.iter().zip(&z0) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }
}
