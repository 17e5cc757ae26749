//! A synthetic tri-modal universe standing in for real video, text and audio
//! encoders.
//!
//! Every concept `c` owns a unit anchor in the shared space. Video and text
//! embeddings are noisy copies of the anchor. Audio lives in a latent space
//! with one Gaussian per concept; the audio encoder is `normalize(W z + b)`
//! with `W` fitted so each concept mean encodes onto its anchor.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{GaussianComponent, GaussianMixturePrior};
use crate::error::{check_len, MdgError, Result};
use crate::geometry::{dot, norm, normalize, triplet_volume, Embedding, ZERO_NORM};

/// Anchors of distinct concepts may not be more similar than this.
pub const ANCHOR_COSINE_CAP: f64 = 0.5;
/// Each concept mean must encode this close to its anchor.
pub const CONSTRUCTION_COSINE: f64 = 0.99;
pub const MAX_ANCHOR_ATTEMPTS: usize = 1000;

/// A differentiable map from clean audio latents to the shared space.
pub trait AudioEncoder {
    fn latent_dim(&self) -> usize;

    fn encode(&self, z0: &[f64]) -> Result<Embedding>;

    /// Returns the embedding and `(∂e/∂z₀)ᵀ u`.
    fn encode_vjp(&self, z0: &[f64], u: &[f64]) -> Result<(Embedding, Vec<f64>)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    pub concepts: usize,
    pub embed_dim: usize,
    pub latent_dim: usize,
    /// Noise scale of the video and text emitters.
    pub sigma_mod: f64,
    pub seed: u64,
    /// Norm of each concept's latent mean.
    pub latent_radius: f64,
    /// Per-coordinate standard deviation of each concept's latent Gaussian.
    pub prior_std: f64,
    /// Norm of the encoder bias.
    pub bias_norm: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            concepts: 8,
            embed_dim: 16,
            latent_dim: 8,
            sigma_mod: 0.05,
            seed: 42,
            latent_radius: 3.0,
            prior_std: 2.0,
            bias_norm: 0.1,
        }
    }
}

/// The immutable synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub params: WorldParams,
    anchors: Vec<Embedding>,
    /// `D × L`, row major.
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    prior: GaussianMixturePrior,
}

/// Summary of the construction checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldCheck {
    pub max_anchor_cosine: f64,
    pub min_construction_cosine: f64,
    /// `V(anchor_c, encode(μ_c), anchor_c)` per concept.
    pub matched_volumes: Vec<f64>,
}

fn gaussian_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn max_pairwise_cosine(anchors: &[Embedding]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for i in 0..anchors.len() {
        for j in i + 1..anchors.len() {
            m = m.max(dot(anchors[i].as_slice(), anchors[j].as_slice()));
        }
    }
    m
}

/// Builds a world; deterministic in `params.seed`.
pub fn make_world(params: WorldParams) -> Result<SyntheticWorld> {
    let WorldParams { concepts: j, embed_dim: d, latent_dim: l, sigma_mod, .. } = params;
    if d < 3 || l < 2 || j < 2 {
        return Err(MdgError::InvalidDims(format!("need D >= 3, L >= 2, J >= 2; got D = {d}, L = {l}, J = {j}")));
    }
    if !(sigma_mod >= 0.0 && sigma_mod.is_finite()) {
        return Err(MdgError::InvalidDims(format!("sigma_mod must be >= 0, got {sigma_mod}")));
    }
    if !(params.latent_radius > 0.0 && params.prior_std > 0.0 && params.bias_norm >= 0.0) {
        return Err(MdgError::InvalidDims("latent_radius and prior_std must be positive".into()));
    }
    if j > d {
        return Err(MdgError::InvariantViolation(format!(
            "cannot place {j} linearly independent concept anchors in {d} dimensions"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut anchors = None;
    for _ in 0..MAX_ANCHOR_ATTEMPTS {
        let cand = (0..j).map(|_| normalize(&gaussian_vec(d, &mut rng))).collect::<Result<Vec<_>>>()?;
        if max_pairwise_cosine(&cand) <= ANCHOR_COSINE_CAP {
            anchors = Some(cand);
            break;
        }
    }
    let anchors = anchors.ok_or_else(|| {
        MdgError::InvariantViolation(format!(
            "no anchor set with pairwise cosine <= {ANCHOR_COSINE_CAP} after {MAX_ANCHOR_ATTEMPTS} attempts"
        ))
    })?;

    // concept means: orthogonal directions of norm `latent_radius` when J <= L
    let g = DMatrix::from_fn(l, j, |_, _| rng.sample::<f64, _>(StandardNormal));
    let means = if j <= l {
        g.qr().q().columns(0, j) * params.latent_radius
    } else {
        g * (params.latent_radius / (l as f64).sqrt())
    };

    let b = {
        let v = gaussian_vec(d, &mut rng);
        let n = norm(&v);
        v.into_iter().map(|x| x * params.bias_norm / n).collect::<Vec<_>>()
    };

    // least-squares fit W μ_c + b ≈ anchor_c
    let targets = DMatrix::from_fn(d, j, |r, c| anchors[c].as_slice()[r] - b[r]);
    let pinv =
        means.clone().pseudo_inverse(1e-12).map_err(|e| MdgError::Numerical(format!("pseudo-inverse failed: {e}")))?;
    let wm = targets * pinv;
    let w: Vec<Vec<f64>> = (0..d).map(|r| (0..l).map(|c| wm[(r, c)]).collect()).collect();

    let var = params.prior_std * params.prior_std;
    let components = (0..j)
        .map(|c| GaussianComponent {
            weight: 1.0 / j as f64,
            mean: means.column(c).iter().copied().collect(),
            var: vec![var; l],
        })
        .collect();
    let prior = GaussianMixturePrior::new(components)?;

    let world = SyntheticWorld { params, anchors, w, b, prior };
    world.check()?;
    Ok(world)
}

impl SyntheticWorld {
    pub fn concepts(&self) -> usize {
        self.anchors.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.b.len()
    }

    pub fn anchors(&self) -> &[Embedding] {
        &self.anchors
    }

    pub fn anchor(&self, c: usize) -> Result<&Embedding> {
        self.anchors.get(c).ok_or(MdgError::UnknownConcept { index: c, count: self.concepts() })
    }

    pub fn prior(&self) -> &GaussianMixturePrior {
        &self.prior
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    /// Verifies the construction invariants, e.g. after deserializing.
    pub fn check(&self) -> Result<WorldCheck> {
        let (j, d, l) = (self.concepts(), self.embed_dim(), self.prior.dim());
        if self.prior.len() != j || self.w.len() != d || self.w.iter().any(|r| r.len() != l) {
            return Err(MdgError::InvariantViolation("world arrays have inconsistent shapes".into()));
        }
        for a in &self.anchors {
            check_len(d, a.dim())?;
            if (norm(a.as_slice()) - 1.0).abs() > 1e-9 {
                return Err(MdgError::InvariantViolation("anchor is not unit norm".into()));
            }
        }
        let max_anchor_cosine = max_pairwise_cosine(&self.anchors);
        if max_anchor_cosine > ANCHOR_COSINE_CAP {
            return Err(MdgError::InvariantViolation(format!(
                "anchor cosine {max_anchor_cosine:.4} exceeds cap {ANCHOR_COSINE_CAP}"
            )));
        }
        let mut min_construction_cosine = f64::INFINITY;
        let mut matched_volumes = Vec::with_capacity(j);
        for (c, comp) in self.prior.components().iter().enumerate() {
            let e = self.encode(&comp.mean)?;
            let cos = e.dot(&self.anchors[c])?;
            min_construction_cosine = min_construction_cosine.min(cos);
            matched_volumes.push(triplet_volume(&self.anchors[c], &e, &self.anchors[c])?);
        }
        if min_construction_cosine < CONSTRUCTION_COSINE {
            return Err(MdgError::InvariantViolation(format!(
                "a concept mean encodes with cosine {min_construction_cosine:.4} < {CONSTRUCTION_COSINE} to its anchor \
                 (J = {j} concepts cannot all be fitted through a rank-{l} encoder)"
            )));
        }
        Ok(WorldCheck { max_anchor_cosine, min_construction_cosine, matched_volumes })
    }

    /// Video and text embeddings of concept `c`: independent noisy copies of
    /// its anchor.
    pub fn emit_condition_with<R: Rng + ?Sized>(&self, c: usize, rng: &mut R) -> Result<(Embedding, Embedding)> {
        let anchor = self.anchor(c)?.as_slice();
        let sigma = self.params.sigma_mod;
        if sigma == 0.0 {
            let a = self.anchor(c)?.clone();
            return Ok((a.clone(), a));
        }
        let mut emit = || {
            let v: Vec<f64> = anchor.iter().map(|a| a + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
            normalize(&v)
        };
        let ev = emit()?;
        let ep = emit()?;
        Ok((ev, ep))
    }

    pub fn emit_condition(&self, c: usize, seed: u64) -> Result<(Embedding, Embedding)> {
        self.emit_condition_with(c, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn affine(&self, z0: &[f64]) -> Result<Vec<f64>> {
        check_len(self.prior.dim(), z0.len())?;
        Ok(self.w.iter().zip(&self.b).map(|(row, bi)| dot(row, z0) + bi).collect())
    }

    /// Encodes a clean latent drawn from concept `c`'s Gaussian.
    pub fn sample_ground_truth<R: Rng + ?Sized>(&self, c: usize, rng: &mut R) -> Result<Embedding> {
        let z = self
            .prior
            .sample_component(c, rng)
            .map_err(|_| MdgError::UnknownConcept { index: c, count: self.concepts() })?;
        self.encode(&z)
    }
}

impl AudioEncoder for SyntheticWorld {
    fn latent_dim(&self) -> usize {
        self.prior.dim()
    }

    fn encode(&self, z0: &[f64]) -> Result<Embedding> {
        let u = self.affine(z0)?;
        let n = norm(&u);
        if n <= ZERO_NORM {
            return Err(MdgError::ZeroVector { norm: n });
        }
        normalize(&u)
    }

    /// `Wᵀ (I − e eᵀ) u / ‖W z₀ + b‖`.
    fn encode_vjp(&self, z0: &[f64], u: &[f64]) -> Result<(Embedding, Vec<f64>)> {
        let h = self.affine(z0)?;
        check_len(h.len(), u.len())?;
        let n = norm(&h);
        if n <= ZERO_NORM {
            return Err(MdgError::ZeroVector { norm: n });
        }
        let e = normalize(&h)?;
        let eu = dot(e.as_slice(), u);
        let proj: Vec<f64> = u.iter().zip(e.as_slice()).map(|(ui, ei)| (ui - ei * eu) / n).collect();
        let mut out = vec![0.0; z0.len()];
        for (row, p) in self.w.iter().zip(&proj) {
            for (o, wij) in out.iter_mut().zip(row) {
                *o += wij * p;
            }
        }
        Ok((e, out))
    }
}

/// Shorthand for `make_world` with default latent geometry.
pub fn make_world_with(
    concepts: usize,
    embed_dim: usize,
    latent_dim: usize,
    sigma_mod: f64,
    seed: u64,
) -> Result<SyntheticWorld> {
    make_world(WorldParams { concepts, embed_dim, latent_dim, sigma_mod, seed, ..WorldParams::default() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_emitters_return_anchors() {
        let w = make_world_with(2, 8, 8, 0.0, 1).unwrap();
        for c in 0..2 {
            let (ev, ep) = w.emit_condition(c, 99).unwrap();
            assert_eq!(&ev, w.anchor(c).unwrap());
            assert_eq!(&ep, w.anchor(c).unwrap());
        }
    }

    #[test]
    fn default_world_invariants() {
        let w = make_world_with(8, 16, 8, 0.1, 42).unwrap();
        let check = w.check().unwrap();
        assert!(check.max_anchor_cosine <= ANCHOR_COSINE_CAP);
        assert!(check.min_construction_cosine >= CONSTRUCTION_COSINE);
        assert!(check.matched_volumes.iter().all(|v| *v <= 0.15));
        let sum: f64 = w.prior().components().iter().map(|c| c.weight).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn seeded_determinism() {
        let a = make_world_with(8, 16, 8, 0.05, 7).unwrap();
        let b = make_world_with(8, 16, 8, 0.05, 7).unwrap();
        assert_eq!(a, b);
        let c = make_world_with(8, 16, 8, 0.05, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_dims() {
        assert!(matches!(make_world_with(8, 2, 8, 0.0, 1), Err(MdgError::InvalidDims(_))));
        assert!(matches!(make_world_with(1, 16, 8, 0.0, 1), Err(MdgError::InvalidDims(_))));
        assert!(matches!(make_world_with(8, 16, 1, 0.0, 1), Err(MdgError::InvalidDims(_))));
        assert!(matches!(make_world_with(8, 16, 8, -0.1, 1), Err(MdgError::InvalidDims(_))));
    }

    #[test]
    fn unreachable_caps() {
        assert!(matches!(make_world_with(20, 16, 8, 0.0, 1), Err(MdgError::InvariantViolation(_))));
        // more concepts than latent dimensions cannot all be fitted
        assert!(matches!(make_world_with(12, 32, 4, 0.0, 1), Err(MdgError::InvariantViolation(_))));
    }

    #[test]
    fn different_seeds_give_different_conditions() {
        let w = make_world_with(8, 16, 8, 0.05, 42).unwrap();
        let (a, _) = w.emit_condition(3, 1).unwrap();
        let (b, _) = w.emit_condition(3, 2).unwrap();
        assert_ne!(a, b);
        assert!(matches!(w.emit_condition(8, 1), Err(MdgError::UnknownConcept { .. })));
    }

    #[test]
    fn encode_is_scale_free_without_bias() {
        let mut w = make_world_with(8, 16, 8, 0.05, 42).unwrap();
        w.b.iter_mut().for_each(|b| *b = 0.0);
        let z: Vec<f64> = (0..8).map(|i| 0.3 * i as f64 - 1.0).collect();
        let z2: Vec<f64> = z.iter().map(|x| 2.0 * x).collect();
        let (a, b) = (w.encode(&z).unwrap(), w.encode(&z2).unwrap());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
