//! InfoNCE checks against a brute-force evaluation of the loss definitions.

use mdg_core::contrastive::{
    infonce_from_logits, loss_av2t, loss_pairwise_infonce, loss_t2av, ModalityPair, TripletBatch,
};
use mdg_core::geometry::{normalize, triplet_volume, Embedding};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Triplet = (Embedding, Embedding, Embedding);

fn unit(d: usize, rng: &mut impl Rng) -> Embedding {
    normalize(&(0..d).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>()).unwrap()
}

fn random_batch(b: usize, d: usize, seed: u64) -> Vec<Triplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..b).map(|_| (unit(d, &mut rng), unit(d, &mut rng), unit(d, &mut rng))).collect()
}

/// Direct evaluation: −(1/B) Σ_i log( exp(s_ii) / Σ_j exp(s_ij) ), no
/// stabilization.
fn brute(b: usize, score: impl Fn(usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for i in 0..b {
        let den: f64 = (0..b).map(|j| score(i, j).exp()).sum();
        total -= (score(i, i).exp() / den).ln();
    }
    total / b as f64
}

#[test]
fn uniform_batches_give_log_b() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = (unit(8, &mut rng), unit(8, &mut rng), unit(8, &mut rng));
    for b in [2usize, 5, 16] {
        let batch = TripletBatch::new(vec![t.clone(); b], 0.07).unwrap();
        let ln_b = (b as f64).ln();
        assert!((loss_av2t(&batch).unwrap() - ln_b).abs() < 1e-9);
        assert!((loss_t2av(&batch).unwrap() - ln_b).abs() < 1e-9);
        for pair in [ModalityPair::VideoAudio, ModalityPair::VideoText, ModalityPair::AudioText] {
            assert!((loss_pairwise_infonce(&batch, pair).unwrap() - ln_b).abs() < 1e-9);
        }
    }
}

#[test]
fn matches_brute_force_double_loop() {
    for (b, seed) in [(2usize, 1u64), (2, 9), (6, 4)] {
        let items = random_batch(b, 8, seed);
        let tau = 0.5;
        let batch = TripletBatch::new(items.clone(), tau).unwrap();
        let av2t = brute(b, |i, j| -triplet_volume(&items[i].0, &items[i].1, &items[j].2).unwrap() / tau);
        let t2av = brute(b, |i, j| -triplet_volume(&items[j].0, &items[j].1, &items[i].2).unwrap() / tau);
        let va = brute(b, |i, j| items[i].0.dot(&items[j].1).unwrap() / tau);
        assert!((loss_av2t(&batch).unwrap() - av2t).abs() < 1e-12);
        assert!((loss_t2av(&batch).unwrap() - t2av).abs() < 1e-12);
        assert!((loss_pairwise_infonce(&batch, ModalityPair::VideoAudio).unwrap() - va).abs() < 1e-12);
    }
}

#[test]
fn high_temperature_flattens_to_log_b() {
    let items = random_batch(7, 8, 12);
    let batch = TripletBatch::new(items, 1e9).unwrap();
    assert!((loss_av2t(&batch).unwrap() - 7f64.ln()).abs() < 1e-8);
    assert!((loss_t2av(&batch).unwrap() - 7f64.ln()).abs() < 1e-8);
}

#[test]
fn temperature_never_changes_row_argmax() {
    let items = random_batch(6, 8, 21);
    let argmax = |tau: f64| -> Vec<usize> {
        (0..6)
            .map(|i| {
                (0..6)
                    .map(|j| items[i].0.dot(&items[j].2).unwrap() / tau)
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, s)| if s > best.1 { (j, s) } else { best })
                    .0
            })
            .collect()
    };
    let batch = TripletBatch::new(items.clone(), 0.07).unwrap();
    let l1 = loss_pairwise_infonce(&batch, ModalityPair::VideoText).unwrap();
    let l2 = loss_pairwise_infonce(&batch.with_temperature(0.7).unwrap(), ModalityPair::VideoText).unwrap();
    assert_ne!(l1, l2);
    assert_eq!(argmax(0.07), argmax(0.7));
}

#[test]
fn shrinking_matched_volume_never_increases_loss() {
    let off = 0.8;
    let mut last = f64::INFINITY;
    for k in 0..=10 {
        let pos = off * (10 - k) as f64 / 10.0;
        let vols: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { pos } else { off }).collect()).collect();
        let logits: Vec<Vec<f64>> = vols.iter().map(|r| r.iter().map(|v| -v / 0.07).collect()).collect();
        let l = infonce_from_logits(&logits).unwrap();
        assert!(l <= last);
        assert!(l >= 0.0);
        last = l;
    }
}

fn rotate(e: &Embedding, q: &nalgebra::DMatrix<f64>) -> Embedding {
    let v = q * nalgebra::DVector::from_column_slice(e.as_slice());
    normalize(v.as_slice()).unwrap()
}

proptest! {
    #[test]
    fn volume_losses_are_rotation_invariant(seed in any::<u64>()) {
        let items = random_batch(4, 6, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let g = nalgebra::DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let rotated: Vec<Triplet> = items
            .iter()
            .map(|(v, a, p)| (rotate(v, &q), rotate(a, &q), rotate(p, &q)))
            .collect();
        let b1 = TripletBatch::new(items, 0.07).unwrap();
        let b2 = TripletBatch::new(rotated, 0.07).unwrap();
        prop_assert!((loss_av2t(&b1).unwrap() - loss_av2t(&b2).unwrap()).abs() < 1e-8);
        prop_assert!((loss_t2av(&b1).unwrap() - loss_t2av(&b2).unwrap()).abs() < 1e-8);
        prop_assert!(loss_av2t(&b1).unwrap() >= 0.0);
    }
}
