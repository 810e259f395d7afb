//! Numeric containers shared by every stage of the network.
//!
//! Two shapes live here:
//!
//! * [`Image`] is a single planar `C×H×W` picture in 32-bit floats, the unit
//!   that is read from disk, cropped, concealed and revealed.
//! * [`Tensor`] is a batch of planes stored channel-major (`C×N×H×W`). Keeping
//!   the channel axis outermost turns channel concatenation into a plain
//!   append and lets a convolution write its GEMM result in place. With
//!   `n == 1` the layout is identical to an ordinary planar image.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating point element type usable by the network (`f32` or `f64`).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Tag written into checkpoint manifests.
    const DTYPE: &'static str;

    /// `C ← alpha·op(A)·op(B) + beta·C` for row-major `C` of shape `m×n`.
    ///
    /// `A` is `m×k` (or `k×m` when `trans_a`), `B` is `k×n` (or `n×k` when
    /// `trans_b`), both row-major and densely packed.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts")
    }

    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8>;
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self>;
}

macro_rules! impl_real {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Real for $t {
            const DTYPE: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k, "gemm: lhs too short");
                assert!(b.len() >= k * n, "gemm: rhs too short");
                assert!(c.len() >= m * n, "gemm: output too short");
                let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: the asserts above guarantee every strided access
                // stays inside the three slices.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            fn to_le_bytes_vec(values: &[Self]) -> Vec<u8> {
                values.iter().flat_map(|v| v.to_le_bytes()).collect()
            }

            fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self> {
                const W: usize = std::mem::size_of::<$t>();
                bytes
                    .chunks_exact(W)
                    .map(|c| <$t>::from_le_bytes(c.try_into().unwrap()))
                    .collect()
            }
        }
    };
}

impl_real!(f32, "f32", matrixmultiply::sgemm);
impl_real!(f64, "f64", matrixmultiply::dgemm);

/// Planar `C×H×W` image with intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "image dimensions must be positive, got {channels}×{height}×{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "buffer of {} values does not match {channels}×{height}×{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image contains non-finite values".into()));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn clamped(&self) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }

    /// Clamp to `[0, 1]` and round to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        out.data
            .iter_mut()
            .for_each(|v| *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
        out
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn ensure_even(&self) -> Result<()> {
        if !self.height.is_multiple_of(2) || !self.width.is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "height and width must be even, got {}×{}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Batch of planes, laid out `C×N×H×W` (channel-major).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    channels: usize,
    batch: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self { channels, batch, height, width, data: vec![T::zero(); channels * batch * height * width] }
    }

    pub fn from_vec(
        channels: usize,
        batch: usize,
        height: usize,
        width: usize,
        data: Vec<T>,
    ) -> Result<Self> {
        if data.len() != channels * batch * height * width {
            return Err(Error::Dimension(format!(
                "buffer of {} values does not match {channels}×{batch}×{height}×{width}",
                data.len()
            )));
        }
        Ok(Self { channels, batch, height, width, data })
    }

    /// Stack same-shaped images into one batch.
    pub fn from_images(images: &[&Image]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Dimension("cannot stack an empty image list".into()))?;
        let (c, h, w) = first.shape();
        let n = images.len();
        let plane = h * w;
        let mut data = vec![T::zero(); c * n * plane];
        for (i, img) in images.iter().enumerate() {
            first.ensure_same_shape(img)?;
            for ch in 0..c {
                let src = &img.data[ch * plane..(ch + 1) * plane];
                let dst = &mut data[(ch * n + i) * plane..(ch * n + i + 1) * plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = T::from_f32(*s).unwrap();
                }
            }
        }
        Ok(Self { channels: c, batch: n, height: h, width: w, data })
    }

    /// Extract sample `index` as an image (values converted to `f32`).
    pub fn image(&self, index: usize) -> Image {
        let plane = self.plane();
        let mut data = Vec::with_capacity(self.channels * plane);
        for ch in 0..self.channels {
            let off = (ch * self.batch + index) * plane;
            data.extend(self.data[off..off + plane].iter().map(|v| v.to_f32().unwrap()));
        }
        Image { channels: self.channels, height: self.height, width: self.width, data }
    }

    pub fn images(&self) -> Vec<Image> {
        (0..self.batch).map(|i| self.image(i)).collect()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.batch, self.height, self.width]
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Number of values in one channel across the whole batch.
    pub fn channel_len(&self) -> usize {
        self.batch * self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Contiguous range of channels `[start, end)`.
    pub fn channel_range(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.channels {
            return Err(Error::Dimension(format!(
                "channel range {start}..{end} out of bounds for {} channels",
                self.channels
            )));
        }
        let cl = self.channel_len();
        Ok(Self {
            channels: end - start,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data: self.data[start * cl..end * cl].to_vec(),
        })
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Dimension(format!(
                "tensor shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert!(self.same_shape(other));
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a = f(*a, *b));
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += *b);
    }

    pub fn sub_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a -= *b);
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|v| *v * *v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Offset of the plane holding channel `c` of sample `i`.
    pub fn plane_offset(&self, c: usize, i: usize) -> usize {
        (c * self.batch + i) * self.plane()
    }

    pub fn get(&self, c: usize, i: usize, y: usize, x: usize) -> T {
        self.data[self.plane_offset(c, i) + y * self.width + x]
    }

    /// Same values reinterpreted in another element type.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            batch: self.batch,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64().unwrap())).collect(),
        }
    }
}
