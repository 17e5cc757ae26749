//! Seeded inputs shared by the benchmarks.

use mdg_core::diffusion::initial_noise;
use mdg_core::{normalize, Embedding};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Embedding {
    normalize(&initial_noise(dim, rng)).expect("gaussian draw is nonzero")
}

pub fn random_triplet(dim: usize, seed: u64) -> (Embedding, Embedding, Embedding) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (random_unit(dim, &mut rng), random_unit(dim, &mut rng), random_unit(dim, &mut rng))
}

/// `n` unit embeddings of dimension `dim`.
pub fn embedding_cloud(n: usize, dim: usize, seed: u64) -> Vec<Embedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_unit(dim, &mut rng)).collect()
}
