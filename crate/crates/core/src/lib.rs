//! Training-free multimodal guidance for latent diffusion sampling.
//!
//! The sampler steers an audio latent so that its embedding, together with
//! fixed video and text embeddings, spans as small a parallelotope as
//! possible. A pairwise-cosine objective is provided as a baseline, and a
//! synthetic tri-modal world with an exact posterior denoiser replaces the
//! pretrained networks.
//!
//! Modules:
//! - [`geometry`]: unit embeddings, Gram matrix, volume and its gradient
//! - [`contrastive`]: volume and cosine InfoNCE losses
//! - [`diffusion`]: schedule, forward process, DDIM, CFG, oracle denoiser
//! - [`guidance`]: the guided sampling loop
//! - [`world`]: the synthetic concepts and encoders
//! - [`eval`]: consistency metrics, Fréchet distance, retrieval, sign test

pub mod contrastive;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod guidance;
pub mod world;

pub use contrastive::{loss_av2t, loss_pairwise_infonce, loss_t2av, ModalityPair, TripletBatch};
pub use diffusion::{
    cfg_combine, ddim_step, forward_sample, make_schedule, oracle_denoiser, predict_clean, CfgOracle,
    GaussianComponent, GaussianMixturePrior, LatentState, NoisePredictor, NoiseSchedule,
};
pub use error::{MdgError, Result};
pub use eval::{frechet_distance, retrieval_accuracy, semantic_report, sign_test, SemanticReport, SemanticSample};
pub use geometry::{cosine_distance, gram, normalize, volume, volume_grad, Embedding, Modality, TripletGram};
pub use guidance::{
    guidance_step, mdg_sample, objective_and_grad, EpsSource, GuidanceConfig, GuidanceMode, GuidedTrajectory,
    OptimizerKind, SamplingContext, TripletMetrics,
};
pub use world::{make_world, AudioEncoder, SyntheticWorld, WorldParams};

impl<'a> SamplingContext<'a> {
    /// Sampling context backed by a synthetic world.
    pub fn from_world(world: &'a SyntheticWorld, schedule: &'a NoiseSchedule, ddim_steps: usize) -> Self {
        SamplingContext { prior: world.prior(), encoder: world, schedule, ddim_steps }
    }
}
