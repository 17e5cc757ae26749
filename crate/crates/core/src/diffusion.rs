//! Latent diffusion substrate: noise schedule, forward process, clean-latent
//! prediction, deterministic DDIM steps, classifier-free guidance and an exact
//! posterior denoiser for Gaussian-mixture priors.
//!
//! Timesteps index the training grid `1..=T`. Timestep 0 is the clean end of
//! the chain with `ᾱ₀ = 1`, so a DDIM step that lands on 0 returns the clean
//! prediction.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, MdgError, Result};

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_DDIM_STEPS: usize = 30;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Per-step variances `β_t` and their cumulative products `ᾱ_t = Π (1 − β_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(MdgError::InvalidRange("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(MdgError::InvalidRange(format!("beta {b} outside (0, 1)")));
        }
        let alpha_bars = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    /// Number of training-grid steps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `ᾱ_t` for `t ∈ [0, T]`, with `ᾱ₀ = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        match t {
            0 => Ok(1.0),
            t if t <= self.len() => Ok(self.alpha_bars[t - 1]),
            t => Err(MdgError::TimestepOutOfRange { t, min: 0, max: self.len() }),
        }
    }

    fn noisy_alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(MdgError::TimestepOutOfRange { t, min: 1, max: self.len() });
        }
        self.alpha_bar(t)
    }

    /// `steps` evenly spaced timesteps in descending order, starting at `T`.
    pub fn ddim_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        if steps == 0 || steps > self.len() {
            return Err(MdgError::InvalidRange(format!("DDIM steps must be in [1, {}], got {steps}", self.len())));
        }
        let t = self.len() as f64;
        Ok((0..steps).map(|i| ((steps - i) as f64 * t / steps as f64).round() as usize).collect())
    }
}

/// Linear `β` schedule between `beta_start` and `beta_end` over `t` steps.
pub fn make_schedule(t: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t == 0 {
        return Err(MdgError::InvalidRange("T must be positive".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(MdgError::InvalidRange(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let betas = if t == 1 {
        vec![beta_start]
    } else {
        let step = (beta_end - beta_start) / (t - 1) as f64;
        (0..t).map(|i| beta_start + step * i as f64).collect()
    };
    NoiseSchedule::from_betas(betas)
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_TRAIN_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule is valid")
    }
}

/// A latent vector tagged with its timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub t: usize,
}

impl LatentState {
    pub fn new(z: Vec<f64>, t: usize) -> Self {
        Self { z, t }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }
}

/// `z_t = √ᾱ_t z₀ + √(1 − ᾱ_t) ε`.
pub fn forward_sample(z0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<LatentState> {
    check_len(z0.len(), eps.len())?;
    let a = schedule.alpha_bar(t)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let z = z0.iter().zip(eps).map(|(x, e)| sa * x + sn * e).collect();
    Ok(LatentState::new(z, t))
}

/// Clean-latent estimate `z̃₀ = (z_t − √(1 − ᾱ_t) ε̂) / √ᾱ_t`.
pub fn predict_clean(zt: &LatentState, eps_hat: &[f64], schedule: &NoiseSchedule) -> Result<LatentState> {
    check_len(zt.dim(), eps_hat.len())?;
    let a = schedule.noisy_alpha_bar(zt.t)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let z = zt.z.iter().zip(eps_hat).map(|(x, e)| (x - sn * e) / sa).collect();
    Ok(LatentState::new(z, 0))
}

/// Deterministic DDIM update from `zt.t` to `t_prev`.
pub fn ddim_step(zt: &LatentState, eps_hat: &[f64], t_prev: usize, schedule: &NoiseSchedule) -> Result<LatentState> {
    if t_prev > zt.t {
        return Err(MdgError::TimestepOrder { t: zt.t, t_prev });
    }
    check_len(zt.dim(), eps_hat.len())?;
    if t_prev == zt.t {
        return Ok(zt.clone());
    }
    let x0 = predict_clean(zt, eps_hat, schedule)?;
    if t_prev == 0 {
        return Ok(x0);
    }
    let ap = schedule.alpha_bar(t_prev)?;
    let (sa, sn) = (ap.sqrt(), (1.0 - ap).sqrt());
    let z = x0.z.iter().zip(eps_hat).map(|(x, e)| sa * x + sn * e).collect();
    Ok(LatentState::new(z, t_prev))
}

/// Classifier-free guidance: `ε_u + s (ε_c − ε_u)`.
pub fn cfg_combine(eps_cond: &[f64], eps_uncond: &[f64], scale: f64) -> Result<Vec<f64>> {
    check_len(eps_cond.len(), eps_uncond.len())?;
    Ok(eps_cond.iter().zip(eps_uncond).map(|(c, u)| u + scale * (c - u)).collect())
}

/// One diagonal-covariance mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Distribution of clean latents; one component per semantic concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixturePrior {
    components: Vec<GaussianComponent>,
}

impl GaussianMixturePrior {
    /// Validates the components and rescales the weights to sum to one.
    pub fn new(mut components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components.first().ok_or(MdgError::EmptyInput)?;
        let l = first.mean.len();
        if l == 0 {
            return Err(MdgError::InvalidDims("latent dimension must be positive".into()));
        }
        let mut total = 0.0;
        for c in &components {
            check_len(l, c.mean.len())?;
            check_len(l, c.var.len())?;
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(MdgError::InvalidRange(format!("mixture weight {} must be positive", c.weight)));
            }
            if c.var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(MdgError::InvalidRange("mixture variances must be positive".into()));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(MdgError::NonFiniteInput);
            }
            total += c.weight;
        }
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self { components })
    }

    /// Single isotropic-free Gaussian `N(mean, diag(var))`.
    pub fn single(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        Self::new(vec![GaussianComponent { weight: 1.0, mean, var }])
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    fn component(&self, c: usize) -> Result<&GaussianComponent> {
        self.components.get(c).ok_or(MdgError::UnknownConcept { index: c, count: self.len() })
    }

    /// Draws a clean latent from component `c`.
    pub fn sample_component<R: Rng + ?Sized>(&self, c: usize, rng: &mut R) -> Result<Vec<f64>> {
        let comp = self.component(c)?;
        Ok(comp
            .mean
            .iter()
            .zip(&comp.var)
            .map(|(m, v)| {
                let n: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * n
            })
            .collect())
    }

    /// Posterior mean `E[z₀ | z_t]` under component `c`, and the diagonal of
    /// its Jacobian with respect to `z_t`.
    fn component_posterior(&self, c: usize, z: &[f64], a: f64) -> (Vec<f64>, Vec<f64>) {
        let comp = &self.components[c];
        let sa = a.sqrt();
        let mut mean = Vec::with_capacity(z.len());
        let mut gain = Vec::with_capacity(z.len());
        for ((zi, mu), var) in z.iter().zip(&comp.mean).zip(&comp.var) {
            let k = sa * var / (a * var + 1.0 - a);
            mean.push(mu + k * (zi - sa * mu));
            gain.push(k);
        }
        (mean, gain)
    }

    /// Log of `w_c · N(z_t; √ᾱ μ_c, ᾱ σ²_c + 1 − ᾱ)` and its gradient in `z_t`.
    fn component_log_density(&self, c: usize, z: &[f64], a: f64) -> (f64, Vec<f64>) {
        let comp = &self.components[c];
        let sa = a.sqrt();
        let mut lp = comp.weight.ln();
        let mut grad = Vec::with_capacity(z.len());
        for ((zi, mu), var) in z.iter().zip(&comp.mean).zip(&comp.var) {
            let s2 = a * var + 1.0 - a;
            let d = zi - sa * mu;
            lp -= 0.5 * (d * d / s2 + (2.0 * std::f64::consts::PI * s2).ln());
            grad.push(-d / s2);
        }
        (lp, grad)
    }

    /// Component responsibilities at `z_t`, computed in log space.
    pub fn responsibilities(&self, z: &[f64], a: f64) -> Vec<f64> {
        let lps: Vec<f64> = (0..self.len()).map(|c| self.component_log_density(c, z, a).0).collect();
        softmax(&lps)
    }

    /// `E[z₀ | z_t]` for the given condition (or the full mixture) with its
    /// Jacobian.
    fn posterior_mean(&self, z: &[f64], a: f64, condition: Option<usize>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        check_len(self.dim(), z.len())?;
        let l = z.len();
        if let Some(c) = condition {
            self.component(c)?;
            let (m, k) = self.component_posterior(c, z, a);
            return Ok((m, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(k))));
        }
        let dens: Vec<(f64, Vec<f64>)> = (0..self.len()).map(|c| self.component_log_density(c, z, a)).collect();
        let lps: Vec<f64> = dens.iter().map(|d| d.0).collect();
        let r = softmax(&lps);
        let mut gbar = vec![0.0; l];
        for (rc, (_, g)) in r.iter().zip(&dens) {
            for (gb, gi) in gbar.iter_mut().zip(g) {
                *gb += rc * gi;
            }
        }
        let mut mean = vec![0.0; l];
        let mut jac = DMatrix::zeros(l, l);
        for (c, (rc, (_, g))) in r.iter().zip(&dens).enumerate() {
            if *rc == 0.0 {
                continue;
            }
            let (m, k) = self.component_posterior(c, z, a);
            for i in 0..l {
                mean[i] += rc * m[i];
                jac[(i, i)] += rc * k[i];
                for j in 0..l {
                    // ∂r_c/∂z_j = r_c (g_cj − ḡ_j)
                    jac[(i, j)] += m[i] * rc * (g[j] - gbar[j]);
                }
            }
        }
        Ok((mean, jac))
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Exact noise prediction `ε̂ = (z_t − √ᾱ_t E[z₀|z_t]) / √(1 − ᾱ_t)` under the
/// mixture prior, conditioned on one component or marginalized over all.
pub fn oracle_denoiser(
    zt: &LatentState,
    prior: &GaussianMixturePrior,
    condition: Option<usize>,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    Ok(oracle_with_jacobian(zt, prior, condition, schedule, false)?.0)
}

fn oracle_with_jacobian(
    zt: &LatentState,
    prior: &GaussianMixturePrior,
    condition: Option<usize>,
    schedule: &NoiseSchedule,
    want_jacobian: bool,
) -> Result<(Vec<f64>, Option<DMatrix<f64>>)> {
    let a = schedule.noisy_alpha_bar(zt.t)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let (mean, mjac) = prior.posterior_mean(&zt.z, a, condition)?;
    let eps = zt.z.iter().zip(&mean).map(|(z, m)| (z - sa * m) / sn).collect();
    let jac = want_jacobian.then(|| {
        let l = zt.dim();
        (DMatrix::identity(l, l) - mjac * sa) / sn
    });
    Ok((eps, jac))
}

/// A noise predictor `ε̂(z_t, t)`.
///
/// Any network trained with the ε-prediction objective
/// `E‖ε − ε_θ(√ᾱ z₀ + √(1−ᾱ) ε, t)‖²` fits this interface; here the exact
/// posterior of a Gaussian mixture stands in for it.
pub trait NoisePredictor {
    fn predict(&self, z: &LatentState) -> Result<Vec<f64>>;

    /// `∂ε̂/∂z_t`, used when guidance differentiates through the denoiser.
    fn jacobian(&self, z: &LatentState) -> Result<DMatrix<f64>>;
}

/// Oracle denoiser with classifier-free guidance toward one concept.
#[derive(Debug, Clone, Copy)]
pub struct CfgOracle<'a> {
    pub prior: &'a GaussianMixturePrior,
    pub schedule: &'a NoiseSchedule,
    /// `None` samples the unconditional mixture.
    pub condition: Option<usize>,
    pub scale: f64,
}

impl NoisePredictor for CfgOracle<'_> {
    fn predict(&self, z: &LatentState) -> Result<Vec<f64>> {
        let uncond = oracle_denoiser(z, self.prior, None, self.schedule)?;
        match self.condition {
            None => Ok(uncond),
            Some(c) => {
                let cond = oracle_denoiser(z, self.prior, Some(c), self.schedule)?;
                cfg_combine(&cond, &uncond, self.scale)
            }
        }
    }

    fn jacobian(&self, z: &LatentState) -> Result<DMatrix<f64>> {
        let ju = oracle_with_jacobian(z, self.prior, None, self.schedule, true)?.1.expect("requested");
        match self.condition {
            None => Ok(ju),
            Some(c) => {
                let jc = oracle_with_jacobian(z, self.prior, Some(c), self.schedule, true)?.1.expect("requested");
                Ok(&ju + (jc - &ju) * self.scale)
            }
        }
    }
}

/// Draws `z_T ~ N(0, I)`.
pub fn initial_noise<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Plain deterministic DDIM from `z_T` down to the clean latent.
pub fn ddim_sample(
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    steps: usize,
    z_init: Vec<f64>,
) -> Result<Vec<f64>> {
    let ts = schedule.ddim_timesteps(steps)?;
    let mut state = LatentState::new(z_init, ts[0]);
    for (i, &t) in ts.iter().enumerate() {
        debug_assert_eq!(state.t, t);
        let eps = predictor.predict(&state)?;
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        state = ddim_step(&state, &eps, t_prev, schedule)?;
    }
    Ok(state.z)
}
