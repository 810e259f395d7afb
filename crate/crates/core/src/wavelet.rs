//! Single-level orthonormal 2-D Haar transform.
//!
//! For every 2×2 block `[[a, b], [c, d]]` of every channel:
//!
//! ```text
//! LL = ( a + b + c + d) / 2      HL = (-a + b - c + d) / 2
//! LH = (-a - b + c + d) / 2      HH = ( a - b - c + d) / 2
//! ```
//!
//! Subbands are stored band-major: channels `[0, C)` hold LL, `[C, 2C)` HL,
//! `[2C, 3C)` LH and `[3C, 4C)` HH. The analysis matrix is orthogonal, so
//! [`iwt`] is both the inverse and the transpose of [`dwt`]; backpropagation
//! through one is the other.

use crate::error::{Error, Result};
use crate::tensor::{Image, Real, Tensor};

/// Number of subbands produced per source channel.
pub const BANDS: usize = 4;

/// Forward transform of a `C×N×H×W` batch into `4C×N×(H/2)×(W/2)` subbands.
pub fn dwt<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, n, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!("dwt needs even height and width, got {h}×{w}")));
    }
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Tensor::zeros(BANDS * c, n, h2, w2);
    let half = T::from_f64_lossy(0.5);
    let src = x.data();
    let plane_out = h2 * w2;
    let band_stride = c * n * plane_out;
    let dst = out.data_mut();
    for ch in 0..c {
        for i in 0..n {
            let sp = (ch * n + i) * h * w;
            let op = (ch * n + i) * plane_out;
            for y in 0..h2 {
                let r0 = sp + 2 * y * w;
                let r1 = r0 + w;
                for xx in 0..w2 {
                    let a = src[r0 + 2 * xx];
                    let b = src[r0 + 2 * xx + 1];
                    let cc = src[r1 + 2 * xx];
                    let d = src[r1 + 2 * xx + 1];
                    let o = op + y * w2 + xx;
                    dst[o] = (a + b + cc + d) * half;
                    dst[o + band_stride] = (b - a - cc + d) * half;
                    dst[o + 2 * band_stride] = (cc + d - a - b) * half;
                    dst[o + 3 * band_stride] = (a - b - cc + d) * half;
                }
            }
        }
    }
    Ok(out)
}

/// Inverse (and transpose) of [`dwt`]. No clamping is applied.
pub fn iwt<T: Real>(sub: &Tensor<T>) -> Result<Tensor<T>> {
    let [c4, n, h2, w2] = sub.shape();
    if c4 % BANDS != 0 || c4 == 0 {
        return Err(Error::Dimension(format!(
            "iwt needs a channel count divisible by 4, got {c4}"
        )));
    }
    let c = c4 / BANDS;
    let (h, w) = (2 * h2, 2 * w2);
    let mut out = Tensor::zeros(c, n, h, w);
    let half = T::from_f64_lossy(0.5);
    let src = sub.data();
    let plane_in = h2 * w2;
    let band_stride = c * n * plane_in;
    let dst = out.data_mut();
    for ch in 0..c {
        for i in 0..n {
            let ip = (ch * n + i) * plane_in;
            let op = (ch * n + i) * h * w;
            for y in 0..h2 {
                let r0 = op + 2 * y * w;
                let r1 = r0 + w;
                for xx in 0..w2 {
                    let s = ip + y * w2 + xx;
                    let ll = src[s];
                    let hl = src[s + band_stride];
                    let lh = src[s + 2 * band_stride];
                    let hh = src[s + 3 * band_stride];
                    dst[r0 + 2 * xx] = (ll - hl - lh + hh) * half;
                    dst[r0 + 2 * xx + 1] = (ll + hl - lh - hh) * half;
                    dst[r1 + 2 * xx] = (ll - hl + lh - hh) * half;
                    dst[r1 + 2 * xx + 1] = (ll + hl + lh + hh) * half;
                }
            }
        }
    }
    Ok(out)
}

/// Low-frequency block: channels `[0, C)` of a subband tensor.
pub fn extract_ll<T: Real>(sub: &Tensor<T>) -> Result<Tensor<T>> {
    let c4 = sub.channels();
    if !c4.is_multiple_of(BANDS) || c4 == 0 {
        return Err(Error::Dimension(format!(
            "subband tensor needs a channel count divisible by 4, got {c4}"
        )));
    }
    sub.channel_range(0, c4 / BANDS)
}

/// Transform a single image; the result has batch size one.
pub fn dwt_image(img: &Image) -> Result<Tensor<f32>> {
    img.ensure_even()?;
    dwt(&Tensor::from_images(&[img])?)
}

/// Reconstruct a single image from a batch-of-one subband tensor.
pub fn iwt_image(sub: &Tensor<f32>) -> Result<Image> {
    if sub.batch() != 1 {
        return Err(Error::Dimension(format!("expected a single sample, got {}", sub.batch())));
    }
    Ok(iwt(sub)?.image(0))
}
