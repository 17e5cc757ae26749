//! Training-free guidance of the DDIM sampler.
//!
//! At every denoising step after a warmup prefix, the current latent `z_t` is
//! nudged to lower an alignment objective measured on the audio embedding of
//! its clean prediction:
//!
//! * `Volume`: the parallelotope volume `V(e_v, e_a, e_p)`;
//! * `Pairwise`: `δ_cos(v, a) + δ_cos(p, a)`, the cosine baseline;
//! * `None`: plain sampling.
//!
//! The gradient runs through `z_t → z̃₀ → e_a`. By default the noise
//! prediction is held constant, making `∂z̃₀/∂z_t = I / √ᾱ_t`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    ddim_step, initial_noise, predict_clean, CfgOracle, GaussianMixturePrior, LatentState, NoisePredictor,
    NoiseSchedule,
};
use crate::error::{check_len, MdgError, Result};
use crate::geometry::{cosine_distance, dot, gram, Embedding, Modality, DEFAULT_V_FLOOR};
use crate::world::AudioEncoder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    None,
    Pairwise,
    Volume,
}

impl std::fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GuidanceMode::None => "none",
            GuidanceMode::Pairwise => "pairwise",
            GuidanceMode::Volume => "volume",
        })
    }
}

impl std::str::FromStr for GuidanceMode {
    type Err = MdgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GuidanceMode::None),
            "pairwise" => Ok(GuidanceMode::Pairwise),
            "volume" => Ok(GuidanceMode::Volume),
            other => Err(MdgError::ConfigInvalid(format!("unknown guidance mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Gd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    /// Learning rate η.
    pub eta: f64,
    /// Inner optimization steps N per guided denoising step.
    pub inner_steps: usize,
    /// Fraction of the DDIM steps run before guidance switches on.
    pub warmup_fraction: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Keep Adam moments across denoising steps instead of resetting them.
    pub adam_persist: bool,
    /// Treat the noise prediction as constant when differentiating.
    pub detach_denoiser: bool,
    /// Classifier-free guidance scale.
    pub cfg_scale: f64,
    /// Volume below which the `V²` gradient is used.
    pub v_floor: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            mode: GuidanceMode::Volume,
            eta: 0.1,
            inner_steps: 1,
            warmup_fraction: 0.2,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            adam_persist: false,
            detach_denoiser: true,
            cfg_scale: 2.5,
            v_floor: DEFAULT_V_FLOOR,
        }
    }
}

impl GuidanceConfig {
    pub fn with_mode(mode: GuidanceMode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MdgError::ConfigInvalid(m.to_string()));
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be a finite nonnegative number");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive");
        }
        if !self.cfg_scale.is_finite() {
            return bad("cfg_scale must be finite");
        }
        if self.v_floor.is_nan() || self.v_floor < 0.0 {
            return bad("v_floor must be nonnegative");
        }
        Ok(())
    }

    /// Number of leading DDIM steps that run unguided: `⌈fraction · steps⌉`.
    pub fn warmup_steps(&self, steps: usize) -> usize {
        // tolerate products like 0.2 * 30 landing a hair above an integer
        ((self.warmup_fraction * steps as f64) - 1e-9).ceil().max(0.0) as usize
    }

    fn is_active(&self) -> bool {
        self.mode != GuidanceMode::None && self.inner_steps > 0
    }
}

/// Plain gradient step `z ← z − η g`.
pub fn guidance_step(zt: &LatentState, grad: &[f64], eta: f64) -> Result<LatentState> {
    check_len(zt.dim(), grad.len())?;
    let z = zt.z.iter().zip(grad).map(|(z, g)| z - eta * g).collect();
    Ok(LatentState::new(z, zt.t))
}

/// Bias-corrected Adam moments for one latent.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamState {
    pub fn new(dim: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, m: vec![0.0; dim], v: vec![0.0; dim], step: 0 }
    }

    pub fn step(&mut self, z: &mut [f64], grad: &[f64], eta: f64) -> Result<()> {
        check_len(self.m.len(), z.len())?;
        check_len(z.len(), grad.len())?;
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..z.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            z[i] -= eta * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Optimizer applied to the latent during one guided denoising step.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentOptimizer {
    Gd,
    Adam(AdamState),
}

impl LatentOptimizer {
    pub fn from_config(config: &GuidanceConfig, dim: usize) -> Self {
        match config.optimizer {
            OptimizerKind::Gd => LatentOptimizer::Gd,
            OptimizerKind::Adam => {
                LatentOptimizer::Adam(AdamState::new(dim, config.adam_beta1, config.adam_beta2, config.adam_eps))
            }
        }
    }

    pub fn step(&mut self, zt: &mut LatentState, grad: &[f64], eta: f64) -> Result<()> {
        match self {
            LatentOptimizer::Gd => {
                *zt = guidance_step(zt, grad, eta)?;
                Ok(())
            }
            LatentOptimizer::Adam(state) => state.step(&mut zt.z, grad, eta),
        }
    }
}

/// Where the noise prediction inside the objective comes from.
#[derive(Clone, Copy)]
pub enum EpsSource<'a> {
    /// A fixed prediction; the gradient ignores its dependence on `z_t`.
    Frozen(&'a [f64]),
    /// Re-evaluated at `z_t` and differentiated through.
    Live(&'a dyn NoisePredictor),
}

/// Objective value at `z_t` with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub audio: Embedding,
}

/// Alignment objective of the audio embedding against fixed video and text
/// embeddings, and its gradient in `e_a`.
pub fn embedding_objective(
    mode: GuidanceMode,
    ev: &Embedding,
    ea: &Embedding,
    ep: &Embedding,
    v_floor: f64,
) -> Result<(f64, Vec<f64>)> {
    match mode {
        GuidanceMode::Volume => {
            let g = gram(ev, ea, ep)?;
            Ok((g.volume()?, g.volume_grad(Modality::Audio, v_floor)?))
        }
        GuidanceMode::Pairwise => {
            let value = 2.0 - dot(ea.as_slice(), ev.as_slice()) - dot(ea.as_slice(), ep.as_slice());
            let grad = ev.as_slice().iter().zip(ep.as_slice()).map(|(v, p)| -(v + p)).collect();
            Ok((value, grad))
        }
        GuidanceMode::None => Err(MdgError::ConfigInvalid("objective requested with guidance mode none".into())),
    }
}

/// Evaluates the guidance objective at `z_t` and its gradient with respect to
/// `z_t`.
///
/// Returns `V` as the value; below `v_floor` the gradient is that of `V²`.
pub fn objective_and_grad(
    zt: &LatentState,
    eps: EpsSource<'_>,
    ev: &Embedding,
    ep: &Embedding,
    encoder: &dyn AudioEncoder,
    schedule: &NoiseSchedule,
    config: &GuidanceConfig,
) -> Result<ObjectiveEval> {
    let (eps_hat, jac) = match eps {
        EpsSource::Frozen(e) => (e.to_vec(), None),
        EpsSource::Live(p) => (p.predict(zt)?, Some(p.jacobian(zt)?)),
    };
    let z0 = predict_clean(zt, &eps_hat, schedule)?;
    let ea = encoder.encode(&z0.z)?;
    let (value, grad_ea) = embedding_objective(config.mode, ev, &ea, ep, config.v_floor)?;
    let (_, grad_z0) = encoder.encode_vjp(&z0.z, &grad_ea)?;

    let a = schedule.alpha_bar(zt.t)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let grad: Vec<f64> = match jac {
        None => grad_z0.iter().map(|g| g / sa).collect(),
        Some(j) => {
            // ∂z̃₀/∂z_t = (I − √(1−ᾱ) ∂ε̂/∂z_t) / √ᾱ
            let gz = nalgebra::DVector::from_vec(grad_z0);
            let jt_g = j.transpose() * &gz;
            ((gz - jt_g * sn) / sa).iter().copied().collect()
        }
    };
    if grad.iter().any(|g: &f64| !g.is_finite()) {
        return Err(MdgError::Numerical("guidance gradient is not finite".into()));
    }
    Ok(ObjectiveEval { value, grad, audio: ea })
}

/// Everything the sampler needs besides the per-sample condition.
#[derive(Clone, Copy)]
pub struct SamplingContext<'a> {
    pub prior: &'a GaussianMixturePrior,
    pub encoder: &'a dyn AudioEncoder,
    pub schedule: &'a NoiseSchedule,
    pub ddim_steps: usize,
}

/// Alignment metrics of one triplet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletMetrics {
    pub volume: f64,
    pub dcos_tv: f64,
    pub dcos_ta: f64,
    pub dcos_va: f64,
}

impl TripletMetrics {
    pub fn compute(ev: &Embedding, ea: &Embedding, ep: &Embedding) -> Result<Self> {
        Ok(Self {
            volume: gram(ev, ea, ep)?.volume()?,
            dcos_tv: cosine_distance(ep, ev)?,
            dcos_ta: cosine_distance(ep, ea)?,
            dcos_va: cosine_distance(ev, ea)?,
        })
    }

    pub fn dcos_total(&self) -> f64 {
        self.dcos_tv + self.dcos_ta + self.dcos_va
    }
}

/// One denoising step of a guided run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: usize,
    pub guided: bool,
    pub z_before: Vec<f64>,
    pub z_after: Vec<f64>,
    pub v_before: f64,
    pub v_after: f64,
    /// Objective value at each inner iteration (empty when unguided).
    pub objective_trace: Vec<f64>,
    /// Metrics of the clean prediction after guidance.
    pub metrics: TripletMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidedTrajectory {
    pub concept: usize,
    pub seed: u64,
    pub records: Vec<StepRecord>,
    pub final_latent: Vec<f64>,
    pub final_embedding: Embedding,
    pub final_metrics: TripletMetrics,
}

impl GuidedTrajectory {
    pub fn volume_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.v_after).collect()
    }
}

fn clean_metrics(
    state: &LatentState,
    eps: &[f64],
    ctx: &SamplingContext<'_>,
    ev: &Embedding,
    ep: &Embedding,
) -> Result<TripletMetrics> {
    let z0 = predict_clean(state, eps, ctx.schedule)?;
    TripletMetrics::compute(ev, &ctx.encoder.encode(&z0.z)?, ep)
}

/// Guided DDIM sampling of one audio latent for concept `condition`.
///
/// Starts from `z_T ~ N(0, I)` drawn from `seed`. Each step predicts the
/// noise with classifier-free guidance; past the warmup prefix the latent is
/// optimized for `inner_steps` iterations against the objective, the noise is
/// re-predicted at the guided latent, and the DDIM update is applied.
pub fn mdg_sample(
    ctx: &SamplingContext<'_>,
    condition: usize,
    ev: &Embedding,
    ep: &Embedding,
    config: &GuidanceConfig,
    seed: u64,
) -> Result<GuidedTrajectory> {
    config.validate()?;
    if condition >= ctx.prior.len() {
        return Err(MdgError::UnknownConcept { index: condition, count: ctx.prior.len() });
    }
    let dim = ctx.encoder.latent_dim();
    check_len(ctx.prior.dim(), dim)?;
    let predictor =
        CfgOracle { prior: ctx.prior, schedule: ctx.schedule, condition: Some(condition), scale: config.cfg_scale };
    let ts = ctx.schedule.ddim_timesteps(ctx.ddim_steps)?;
    let warmup = config.warmup_steps(ts.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = LatentState::new(initial_noise(dim, &mut rng), ts[0]);
    let mut persistent = LatentOptimizer::from_config(config, dim);
    let mut records = Vec::with_capacity(ts.len());

    for (i, &t) in ts.iter().enumerate() {
        let mut eps = predictor.predict(&state)?;
        let z_before = state.z.clone();
        let before = clean_metrics(&state, &eps, ctx, ev, ep)?;
        let guided = config.is_active() && i >= warmup;
        let mut objective_trace = Vec::new();

        if guided {
            let frozen = eps.clone();
            let mut fresh;
            let opt = if config.adam_persist {
                &mut persistent
            } else {
                fresh = LatentOptimizer::from_config(config, dim);
                &mut fresh
            };
            for _ in 0..config.inner_steps {
                let source =
                    if config.detach_denoiser { EpsSource::Frozen(&frozen) } else { EpsSource::Live(&predictor) };
                let eval = objective_and_grad(&state, source, ev, ep, ctx.encoder, ctx.schedule, config)?;
                objective_trace.push(eval.value);
                opt.step(&mut state, &eval.grad, config.eta)?;
            }
            eps = predictor.predict(&state)?;
        }

        let after = if guided { clean_metrics(&state, &eps, ctx, ev, ep)? } else { before };
        records.push(StepRecord {
            step: i,
            t,
            guided,
            z_before,
            z_after: state.z.clone(),
            v_before: before.volume,
            v_after: after.volume,
            objective_trace,
            metrics: after,
        });
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        state = ddim_step(&state, &eps, t_prev, ctx.schedule)?;
    }

    let final_embedding = ctx.encoder.encode(&state.z)?;
    let final_metrics = TripletMetrics::compute(ev, &final_embedding, ep)?;
    Ok(GuidedTrajectory { concept: condition, seed, records, final_latent: state.z, final_embedding, final_metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gd_step_examples() {
        let z = LatentState::new(vec![1.0, 2.0, 3.0], 10);
        assert_eq!(guidance_step(&z, &[0.0; 3], 0.1).unwrap(), z);
        let s = guidance_step(&z, &[1.0, 0.0, 0.0], 0.1).unwrap();
        assert_abs_diff_eq!(s.z[0], 0.9, epsilon = 1e-15);
        assert_eq!(&s.z[1..], &[2.0, 3.0]);
        assert!(guidance_step(&z, &[1.0], 0.1).is_err());
    }

    #[test]
    fn adam_first_step_matches_hand_recurrence() {
        let g = [0.5, -2.0, 1e-3, 0.0];
        let mut z = vec![0.0; 4];
        let mut adam = AdamState::new(4, 0.9, 0.999, 1e-8);
        adam.step(&mut z, &g, 0.1).unwrap();
        for (zi, gi) in z.iter().zip(g) {
            // m = 0.1 g, v = 0.001 g², m̂ = g, v̂ = g²
            let m_hat = (0.1 * gi) / (1.0 - 0.9);
            let v_hat = (0.001 * gi * gi) / (1.0 - 0.999);
            let expected = -0.1 * m_hat / (v_hat.sqrt() + 1e-8);
            assert_abs_diff_eq!(*zi, expected, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(z[0], -0.1, epsilon = 1e-7);
        assert_abs_diff_eq!(z[1], 0.1, epsilon = 1e-7);
        assert_eq!(z[3], 0.0);
    }

    #[test]
    fn adam_second_step_uses_moments() {
        let mut z = vec![0.0];
        let mut adam = AdamState::new(1, 0.9, 0.999, 1e-8);
        adam.step(&mut z, &[1.0], 0.1).unwrap();
        adam.step(&mut z, &[-1.0], 0.1).unwrap();
        // m = 0.09 - 0.1 = -0.01, m̂ = -0.01/0.19; v = 0.001999·…
        let m_hat = (0.9 * 0.1 - 0.1) / (1.0 - 0.81);
        let v_hat = (0.999 * 0.001 + 0.001) / (1.0 - 0.999f64.powi(2));
        let first = -0.1 / (1.0 + 1e-8);
        assert_abs_diff_eq!(z[0], first - 0.1 * m_hat / (v_hat.sqrt() + 1e-8), epsilon = 1e-12);
    }

    #[test]
    fn warmup_count() {
        let c = GuidanceConfig::default();
        assert_eq!(c.warmup_steps(30), 6);
        assert_eq!(GuidanceConfig { warmup_fraction: 0.0, ..c.clone() }.warmup_steps(30), 0);
        assert_eq!(GuidanceConfig { warmup_fraction: 1.0, ..c.clone() }.warmup_steps(30), 30);
        assert_eq!(GuidanceConfig { warmup_fraction: 0.21, ..c }.warmup_steps(30), 7);
    }

    #[test]
    fn config_validation() {
        assert!(GuidanceConfig::default().validate().is_ok());
        assert!(GuidanceConfig { eta: -0.1, ..Default::default() }.validate().is_err());
        assert!(GuidanceConfig { warmup_fraction: 1.5, ..Default::default() }.validate().is_err());
        assert!(GuidanceConfig { adam_beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!("volume".parse::<GuidanceMode>().is_ok());
        assert!("cosine".parse::<GuidanceMode>().is_err());
    }

    #[test]
    fn pairwise_objective_on_orthogonal_audio() {
        let ev = crate::geometry::normalize(&[1.0, 0.0, 0.0]).unwrap();
        let ep = crate::geometry::normalize(&[1.0, 1.0, 0.0]).unwrap();
        let ea = crate::geometry::normalize(&[0.0, 0.0, 1.0]).unwrap();
        let (v, _) = embedding_objective(GuidanceMode::Pairwise, &ev, &ea, &ep, DEFAULT_V_FLOOR).unwrap();
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-15);
        assert!(embedding_objective(GuidanceMode::None, &ev, &ea, &ep, DEFAULT_V_FLOOR).is_err());
    }
}
