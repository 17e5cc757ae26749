//! Unit embeddings, the tri-modal Gram matrix and the volume of the
//! parallelotope spanned by three embeddings.
//!
//! For columns `Z = [e_v, e_a, e_p]` the Gram matrix is `K = ZᵀZ` and the
//! volume is `V = sqrt(det K)`. `V` is 0 when the three vectors are linearly
//! dependent and 1 when they are orthonormal.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, MdgError, Result};

/// Norm below which a vector is considered zero.
pub const ZERO_NORM: f64 = 1e-12;
/// Below this volume the gradient of `V²` is returned instead of `∇V`.
pub const DEFAULT_V_FLOOR: f64 = 1e-6;
/// Tiny negative determinants from roundoff are clamped to zero.
pub const DET_CLAMP: f64 = 1e-9;
/// Determinants below this indicate a corrupted Gram matrix.
pub const DET_CORRUPT: f64 = -1e-6;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A unit-norm vector in the shared semantic space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `v` to unit length.
    pub fn normalize(v: &[f64]) -> Result<Self> {
        if v.len() < 3 {
            return Err(MdgError::InvalidDims(format!("embedding dimension must be at least 3, got {}", v.len())));
        }
        let n = norm(v);
        if !n.is_finite() {
            return Err(MdgError::NonFiniteInput);
        }
        if n <= ZERO_NORM {
            return Err(MdgError::ZeroVector { norm: n });
        }
        Ok(Self(v.iter().map(|x| x / n).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        check_len(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Shorthand for [`Embedding::normalize`].
pub fn normalize(v: &[f64]) -> Result<Embedding> {
    Embedding::normalize(v)
}

/// Which column of the triplet a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Video,
    Audio,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Video, Modality::Audio, Modality::Text];

    pub fn index(self) -> usize {
        match self {
            Modality::Video => 0,
            Modality::Audio => 1,
            Modality::Text => 2,
        }
    }
}

type Mat3 = [[f64; 3]; 3];

fn det3(k: &Mat3) -> f64 {
    k[0][0] * (k[1][1] * k[2][2] - k[1][2] * k[2][1]) - k[0][1] * (k[1][0] * k[2][2] - k[1][2] * k[2][0])
        + k[0][2] * (k[1][0] * k[2][1] - k[1][1] * k[2][0])
}

/// Adjugate (transposed cofactor matrix). Finite even when `k` is singular.
fn adj3(k: &Mat3) -> Mat3 {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| k[r0][c0] * k[r1][c1] - k[r0][c1] * k[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let mut adj = [[0.0; 3]; 3];
    for (i, row) in cof.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            adj[j][i] = *v;
        }
    }
    adj
}

/// The 3×3 Gram matrix of a triplet together with its columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGram {
    columns: [Vec<f64>; 3],
    k: Mat3,
    det: f64,
}

impl TripletGram {
    /// Builds the Gram matrix of three raw columns. Columns need not be unit
    /// norm; [`gram`] is the entry point for embeddings.
    pub fn from_columns(a: &[f64], b: &[f64], c: &[f64]) -> Result<Self> {
        check_len(a.len(), b.len())?;
        check_len(a.len(), c.len())?;
        let columns = [a.to_vec(), b.to_vec(), c.to_vec()];
        let mut k = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in i..3 {
                let v = dot(&columns[i], &columns[j]);
                k[i][j] = v;
                k[j][i] = v;
            }
        }
        let det = det3(&k);
        Ok(Self { columns, k, det })
    }

    pub fn k(&self) -> &[[f64; 3]; 3] {
        &self.k
    }

    pub fn column(&self, m: Modality) -> &[f64] {
        &self.columns[m.index()]
    }

    pub fn dim(&self) -> usize {
        self.columns[0].len()
    }

    /// `det K`, unclamped.
    pub fn det(&self) -> f64 {
        self.det
    }

    /// `sqrt(max(det K, 0))`.
    pub fn volume(&self) -> Result<f64> {
        if !self.det.is_finite() {
            return Err(MdgError::NonFiniteInput);
        }
        if self.det < DET_CORRUPT {
            return Err(MdgError::Numerical(format!("Gram determinant {:e} is negative beyond roundoff", self.det)));
        }
        // negatives in (DET_CORRUPT, 0) are roundoff on a PSD matrix
        Ok(self.det.max(0.0).sqrt())
    }

    /// Gradient of the volume with respect to one raw column.
    ///
    /// Uses `∇_c V = (Z adj K)_{:,c} / V`. When `V < v_floor` the gradient of
    /// `V² = det K`, namely `2 (Z adj K)_{:,c}`, is returned instead; it is
    /// finite at singular `K` and vanishes on rank-1 triplets.
    pub fn volume_grad(&self, column: Modality, v_floor: f64) -> Result<Vec<f64>> {
        let v = self.volume()?;
        let adj = adj3(&self.k);
        let c = column.index();
        let mut g = vec![0.0; self.dim()];
        for (j, col) in self.columns.iter().enumerate() {
            let w = adj[j][c];
            for (gi, zi) in g.iter_mut().zip(col) {
                *gi += zi * w;
            }
        }
        let scale = if v >= v_floor { 1.0 / v } else { 2.0 };
        for gi in g.iter_mut() {
            *gi *= scale;
        }
        if g.iter().all(|x| x.is_finite()) {
            Ok(g)
        } else {
            Err(MdgError::SingularGram)
        }
    }
}

/// Gram matrix `K = ZᵀZ` of the triplet `(e_v, e_a, e_p)`.
pub fn gram(ev: &Embedding, ea: &Embedding, ep: &Embedding) -> Result<TripletGram> {
    TripletGram::from_columns(ev.as_slice(), ea.as_slice(), ep.as_slice())
}

/// Parallelotope volume `sqrt(det K)`.
pub fn volume(g: &TripletGram) -> Result<f64> {
    g.volume()
}

/// Volume of the triplet in one call.
pub fn triplet_volume(ev: &Embedding, ea: &Embedding, ep: &Embedding) -> Result<f64> {
    gram(ev, ea, ep)?.volume()
}

/// `∇V` with respect to one column, falling back to `∇V²` below `v_floor`.
pub fn volume_grad(g: &TripletGram, column: Modality, v_floor: f64) -> Result<Vec<f64>> {
    g.volume_grad(column, v_floor)
}

/// `1 − cos(e1, e2)`, in `[0, 2]`.
pub fn cosine_distance(e1: &Embedding, e2: &Embedding) -> Result<f64> {
    Ok((1.0 - e1.dot(e2)?).clamp(0.0, 2.0))
}
