//! InfoNCE objectives where the similarity between a triplet's members is the
//! negated parallelotope volume, plus the ordinary cosine InfoNCE baseline.

use crate::error::{check_len, MdgError, Result};
use crate::geometry::{triplet_volume, Embedding};

/// Conventional contrastive temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// A batch of matched `(video, audio, text)` embeddings.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    items: Vec<(Embedding, Embedding, Embedding)>,
    temperature: f64,
}

impl TripletBatch {
    pub fn new(items: Vec<(Embedding, Embedding, Embedding)>, temperature: f64) -> Result<Self> {
        if items.len() < 2 {
            return Err(MdgError::EmptyBatch(items.len()));
        }
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(MdgError::InvalidTemperature(temperature));
        }
        let d = items[0].0.dim();
        for (v, a, p) in &items {
            check_len(d, v.dim())?;
            check_len(d, a.dim())?;
            check_len(d, p.dim())?;
        }
        Ok(Self { items, temperature })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn items(&self) -> &[(Embedding, Embedding, Embedding)] {
        &self.items
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(MdgError::InvalidTemperature(temperature));
        }
        self.temperature = temperature;
        Ok(self)
    }
}

/// The two embeddings compared by the pairwise baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModalityPair {
    VideoAudio,
    VideoText,
    AudioText,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean InfoNCE over rows of a logit matrix whose positives sit on the
/// diagonal.
pub fn infonce_from_logits(logits: &[Vec<f64>]) -> Result<f64> {
    if logits.len() < 2 {
        return Err(MdgError::EmptyBatch(logits.len()));
    }
    let b = logits.len();
    let mut total = 0.0;
    for (i, row) in logits.iter().enumerate() {
        check_len(b, row.len())?;
        total += log_sum_exp(row) - row[i];
    }
    let loss = total / b as f64;
    if loss.is_finite() {
        // roundoff can dip a hair below zero in the separated limit
        Ok(loss.max(0.0))
    } else {
        Err(MdgError::Numerical("InfoNCE loss is not finite".into()))
    }
}

/// InfoNCE with logits `−V[i][j]/τ`; `volumes[i][i]` is the matched volume.
pub fn volume_infonce(volumes: &[Vec<f64>], temperature: f64) -> Result<f64> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(MdgError::InvalidTemperature(temperature));
    }
    let logits: Vec<Vec<f64>> = volumes.iter().map(|row| row.iter().map(|v| -v / temperature).collect()).collect();
    infonce_from_logits(&logits)
}

/// Audio-video anchored loss: row `i` contrasts `(v_i, a_i)` against every
/// text `p_j` in the batch (including `j = i`).
pub fn loss_av2t(batch: &TripletBatch) -> Result<f64> {
    let vols = batch
        .items
        .iter()
        .map(|(v, a, _)| batch.items.iter().map(|(_, _, p)| triplet_volume(v, a, p)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    volume_infonce(&vols, batch.temperature)
}

/// Text anchored loss: row `i` contrasts text `p_i` against every matched
/// `(v_j, a_j)` pair.
pub fn loss_t2av(batch: &TripletBatch) -> Result<f64> {
    let vols = batch
        .items
        .iter()
        .map(|(_, _, p)| batch.items.iter().map(|(v, a, _)| triplet_volume(v, a, p)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    volume_infonce(&vols, batch.temperature)
}

/// Cosine-similarity InfoNCE between two modalities of the batch.
pub fn loss_pairwise_infonce(batch: &TripletBatch, pair: ModalityPair) -> Result<f64> {
    let pick = |t: &(Embedding, Embedding, Embedding)| -> (Embedding, Embedding) {
        match pair {
            ModalityPair::VideoAudio => (t.0.clone(), t.1.clone()),
            ModalityPair::VideoText => (t.0.clone(), t.2.clone()),
            ModalityPair::AudioText => (t.1.clone(), t.2.clone()),
        }
    };
    let pairs: Vec<_> = batch.items.iter().map(pick).collect();
    let logits = pairs
        .iter()
        .map(|(x, _)| pairs.iter().map(|(_, y)| Ok(x.dot(y)? / batch.temperature)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    infonce_from_logits(&logits)
}
