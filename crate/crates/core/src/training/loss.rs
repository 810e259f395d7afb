//! The four training losses and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pipeline::mse;
use crate::tensor::{Image, Tensor};
use crate::wavelet::{dwt, extract_ll};

/// Weights of (hiding, low-frequency, secret-reveal, cover-reveal).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub hiding: f64,
    pub freq: f64,
    pub secret_reveal: f64,
    pub cover_reveal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { hiding: 1.0, freq: 10.0, secret_reveal: 5.0, cover_reveal: 5.0 }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.hiding, self.freq, self.secret_reveal, self.cover_reveal]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_hid: f64,
    pub l_freq: f64,
    pub l_srev: f64,
    pub l_crev: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn from_terms(terms: [f64; 4], weights: &LossWeights) -> Self {
        Self {
            l_hid: terms[0],
            l_freq: terms[1],
            l_srev: terms[2],
            l_crev: terms[3],
            l_total: loss_total(terms, weights.as_array()),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_hid, self.l_freq, self.l_srev, self.l_crev, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn loss_hiding(stego: &Image, cover: &Image) -> Result<f64> {
    mse(stego, cover)
}

/// MSE between the LL subbands of the two images.
pub fn loss_freq(stego: &Image, cover: &Image) -> Result<f64> {
    stego.ensure_same_shape(cover)?;
    let a = extract_ll(&dwt(&Tensor::<f64>::from_images(&[stego])?)?)?;
    let b = extract_ll(&dwt(&Tensor::<f64>::from_images(&[cover])?)?)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

pub fn loss_srev(rec_secret: &Image, secret: &Image) -> Result<f64> {
    mse(rec_secret, secret)
}

pub fn loss_crev(rec_cover: &Image, cover: &Image) -> Result<f64> {
    mse(rec_cover, cover)
}

pub fn loss_total(terms: [f64; 4], weights: [f64; 4]) -> f64 {
    terms.iter().zip(weights.iter()).map(|(t, w)| t * w).sum()
}
