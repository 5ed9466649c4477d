//! Symmetric InfoNCE over in-batch ground/satellite pairs.
//!
//! Row `i` of the similarity matrix holds the ground embedding `i` against
//! every satellite embedding of the batch; the diagonal is the positive and
//! the other `B - 1` entries are negatives.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Embedding;
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Direction {
    GroundToSatellite,
    SatelliteToGround,
    #[default]
    Symmetric,
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g2s" | "ground_to_satellite" => Ok(Direction::GroundToSatellite),
            "s2g" | "satellite_to_ground" => Ok(Direction::SatelliteToGround),
            "symmetric" | "sym" => Ok(Direction::Symmetric),
            other => Err(Error::parameter(format!("unknown loss direction `{other}`"))),
        }
    }
}

/// Dense `rows × cols` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> SimilarityMatrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::parameter(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(SimilarityMatrix { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![T::zero(); self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        SimilarityMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// `M[i][j] = ⟨ground[i], satellite[j]⟩`.
pub fn similarity_matrix<T: Scalar>(
    ground: &[Embedding<T>],
    satellite: &[Embedding<T>],
) -> Result<SimilarityMatrix<T>> {
    if ground.len() != satellite.len() {
        return Err(Error::parameter(format!(
            "batch mismatch: {} ground vs {} satellite embeddings",
            ground.len(),
            satellite.len()
        )));
    }
    let dim = ground.first().map_or(0, Embedding::dim);
    if ground.iter().chain(satellite).any(|e| e.dim() != dim) {
        return Err(Error::parameter("embeddings of a batch must share one dimension"));
    }
    let b = ground.len();
    let mut data = Vec::with_capacity(b * b);
    for g in ground {
        for s in satellite {
            data.push(dot(g.as_slice(), s.as_slice()));
        }
    }
    Ok(SimilarityMatrix { rows: b, cols: b, data })
}

/// Loss value together with its gradients.
#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    pub loss: T,
    /// `∂L/∂M`
    pub d_sim: SimilarityMatrix<T>,
    /// `∂L/∂τ`
    pub d_tau: T,
}

fn validate<T: Scalar>(m: &SimilarityMatrix<T>, tau: T) -> Result<()> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::parameter(format!("temperature must be positive, got {:?}", tau)));
    }
    if m.rows != m.cols || m.rows == 0 {
        return Err(Error::parameter(format!(
            "similarity matrix must be square and non-empty, got {}x{}",
            m.rows, m.cols
        )));
    }
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("similarity matrix has non-finite entries"));
    }
    Ok(())
}

/// Row-direction loss `mean_i −log softmax(M[i]/τ)[i]` and its gradients,
/// accumulated with weight `scale` into `d_sim`/`d_tau`.
fn rowwise<T: Scalar>(m: &SimilarityMatrix<T>, tau: T, scale: T, d_sim: &mut [T], d_tau: &mut T) -> T {
    let b = m.rows;
    let inv_b = T::one() / T::cast(b as f64);
    let mut loss = T::zero();
    let mut probs = vec![T::zero(); b];
    for i in 0..b {
        let row = &m.data[i * b..(i + 1) * b];
        let max = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v / tau));
        let mut total = T::zero();
        for (p, &v) in probs.iter_mut().zip(row) {
            *p = (v / tau - max).exp();
            total = total + *p;
        }
        loss = loss + (total.ln() + max - row[i] / tau);
        for j in 0..b {
            let p = probs[j] / total;
            let g = (p - if i == j { T::one() } else { T::zero() }) * inv_b * scale;
            d_sim[i * b + j] = d_sim[i * b + j] + g / tau;
            *d_tau = *d_tau - g * row[j] / (tau * tau);
        }
    }
    loss * inv_b * scale
}

pub fn info_nce_with_grad<T: Scalar>(m: &SimilarityMatrix<T>, tau: T, direction: Direction) -> Result<LossGrad<T>> {
    validate(m, tau)?;
    let b = m.rows;
    let mut d = vec![T::zero(); b * b];
    let mut d_tau = T::zero();
    let half = T::cast(0.5);
    let loss = match direction {
        Direction::GroundToSatellite => rowwise(m, tau, T::one(), &mut d, &mut d_tau),
        Direction::SatelliteToGround | Direction::Symmetric => {
            let scale = if direction == Direction::Symmetric {
                half
            } else {
                T::one()
            };
            let mt = m.transpose();
            let mut dt = vec![T::zero(); b * b];
            let l_sg = rowwise(&mt, tau, scale, &mut dt, &mut d_tau);
            for i in 0..b {
                for j in 0..b {
                    d[i * b + j] = dt[j * b + i];
                }
            }
            if direction == Direction::Symmetric {
                l_sg + rowwise(m, tau, half, &mut d, &mut d_tau)
            } else {
                l_sg
            }
        }
    };
    if !loss.is_finite() {
        return Err(Error::numeric("InfoNCE loss is not finite"));
    }
    Ok(LossGrad {
        loss,
        d_sim: SimilarityMatrix {
            rows: b,
            cols: b,
            data: d,
        },
        d_tau,
    })
}

pub fn info_nce<T: Scalar>(m: &SimilarityMatrix<T>, tau: T, direction: Direction) -> Result<T> {
    info_nce_with_grad(m, tau, direction).map(|g| g.loss)
}
