//! Densely connected convolutional subnetworks (ψ, ρ, η).
//!
//! Layer `j` sees the concatenation of the block input and every earlier
//! hidden output. Hidden layers end in a leaky rectifier, the last layer is
//! linear and maps back to the branch width. Everything works on `C×N×H×W`
//! tensors so a concatenation is just a longer buffer.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

/// One `k×k` convolution with "same" zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `out × in × k × k`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// `input` holds `in_channels` planes of `n×h×w`; writes `out_channels`
    /// planes into `out`.
    fn forward(&self, input: &[T], n: usize, h: usize, w: usize, out: &mut [T]) {
        let cols = im2col(input, self.in_channels, n, h, w, self.kernel);
        let len = n * h * w;
        for (o, b) in self.bias.iter().enumerate() {
            out[o * len..(o + 1) * len].fill(*b);
        }
        T::gemm(
            self.out_channels,
            self.patch_len(),
            len,
            T::one(),
            &self.weight,
            false,
            &cols,
            false,
            T::one(),
            out,
        );
    }

    /// Accumulates parameter gradients into `grad` and input gradients into
    /// `g_input`.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        input: &[T],
        g_out: &[T],
        n: usize,
        h: usize,
        w: usize,
        grad: &mut ConvLayer<T>,
        g_input: &mut [T],
    ) {
        let len = n * h * w;
        let cols = im2col(input, self.in_channels, n, h, w, self.kernel);
        // dW += gOut · colsᵀ
        T::gemm(
            self.out_channels,
            len,
            self.patch_len(),
            T::one(),
            g_out,
            false,
            &cols,
            true,
            T::one(),
            &mut grad.weight,
        );
        for (o, gb) in grad.bias.iter_mut().enumerate() {
            *gb += g_out[o * len..(o + 1) * len].iter().copied().sum::<T>();
        }
        // dCols = Wᵀ · gOut
        let mut g_cols = vec![T::zero(); self.patch_len() * len];
        T::gemm(
            self.patch_len(),
            self.out_channels,
            len,
            T::one(),
            &self.weight,
            true,
            g_out,
            false,
            T::zero(),
            &mut g_cols,
        );
        col2im_add(&g_cols, self.in_channels, n, h, w, self.kernel, g_input);
    }
}

fn im2col<T: Real>(input: &[T], channels: usize, n: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = k / 2;
    let len = n * h * w;
    let mut cols = vec![T::zero(); channels * k * k * len];
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * len;
                let dx = kx as isize - pad as isize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for i in 0..n {
                    let src_plane = (c * n + i) * h * w;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad as isize;
                        if sy < 0 || sy >= h as isize || x0 >= x1 {
                            continue;
                        }
                        let src = src_plane + sy as usize * w;
                        let dst = row + (i * h + y) * w;
                        let sx0 = (x0 as isize + dx) as usize;
                        cols[dst + x0..dst + x1]
                            .copy_from_slice(&input[src + sx0..src + sx0 + (x1 - x0)]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Real>(
    cols: &[T],
    channels: usize,
    n: usize,
    h: usize,
    w: usize,
    k: usize,
    out: &mut [T],
) {
    let pad = k / 2;
    let len = n * h * w;
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * len;
                let dx = kx as isize - pad as isize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for i in 0..n {
                    let dst_plane = (c * n + i) * h * w;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad as isize;
                        if sy < 0 || sy >= h as isize || x0 >= x1 {
                            continue;
                        }
                        let dst = dst_plane + sy as usize * w;
                        let src = row + (i * h + y) * w;
                        let sx0 = (x0 as isize + dx) as usize;
                        for (o, v) in out[dst + sx0..dst + sx0 + (x1 - x0)]
                            .iter_mut()
                            .zip(&cols[src + x0..src + x1])
                        {
                            *o += *v;
                        }
                    }
                }
            }
        }
    }
}

/// Parameters of one dense subnetwork.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSubnet<T> {
    pub channels: usize,
    pub growth: usize,
    pub layers: Vec<ConvLayer<T>>,
}

/// Activations retained by a forward call for the matching backward call.
#[derive(Clone, Debug)]
pub struct SubnetTape<T> {
    /// Input followed by every hidden output, `C×N×H×W` each.
    features: Vec<T>,
    batch: usize,
    height: usize,
    width: usize,
    channels: usize,
}

impl<T: Real> SubnetTape<T> {
    /// The tensor the subnet was applied to.
    pub fn input(&self) -> Tensor<T> {
        let len = self.channels * self.batch * self.height * self.width;
        Tensor::from_vec(self.channels, self.batch, self.height, self.width, self.features[..len].to_vec())
            .expect("tape input shape")
    }
}

impl<T: Real> DenseSubnet<T> {
    /// All layers zero; used for gradient accumulators.
    pub fn zeros(channels: usize, growth: usize, num_layers: usize, kernel: usize) -> Self {
        let layers = (0..num_layers)
            .map(|j| {
                let cin = channels + j * growth;
                let cout = if j + 1 == num_layers { channels } else { growth };
                ConvLayer::zeros(cin, cout, kernel)
            })
            .collect();
        Self { channels, growth, layers }
    }

    /// Hidden weights ~ N(0, gain²/fan_in), hidden biases and the whole final
    /// layer zero.
    pub fn init<R: Rng>(
        channels: usize,
        growth: usize,
        num_layers: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(channels, growth, num_layers, kernel);
        let gain2 = 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE);
        let hidden = num_layers - 1;
        for layer in net.layers.iter_mut().take(hidden) {
            let fan_in = (layer.in_channels * kernel * kernel) as f64;
            let normal = Normal::new(0.0, (gain2 / fan_in).sqrt()).unwrap();
            for v in layer.weight.iter_mut() {
                *v = T::from_f64_lossy(normal.sample(rng));
            }
        }
        net
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Output of the dense block (same shape as `x`) plus the tape needed to
    /// differentiate it.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, SubnetTape<T>)> {
        if x.channels() != self.channels {
            return Err(Error::Dimension(format!(
                "subnet expects {} channels, got {}",
                self.channels,
                x.channels()
            )));
        }
        let (n, h, w) = (x.batch(), x.height(), x.width());
        let len = n * h * w;
        let hidden = self.layers.len() - 1;
        let mut features = vec![T::zero(); (self.channels + hidden * self.growth) * len];
        features[..self.channels * len].copy_from_slice(x.data());
        let slope = T::from_f64_lossy(LEAKY_SLOPE);
        let mut filled = self.channels;
        for layer in &self.layers[..hidden] {
            let (inp, rest) = features.split_at_mut(filled * len);
            let out = &mut rest[..layer.out_channels * len];
            layer.forward(inp, n, h, w, out);
            out.iter_mut().for_each(|v| {
                if *v < T::zero() {
                    *v *= slope
                }
            });
            filled += layer.out_channels;
        }
        let last = &self.layers[hidden];
        let mut out = vec![T::zero(); self.channels * len];
        last.forward(&features[..filled * len], n, h, w, &mut out);
        let tape = SubnetTape { features, batch: n, height: h, width: w, channels: self.channels };
        Ok((Tensor::from_vec(self.channels, n, h, w, out)?, tape))
    }

    /// Gradient w.r.t. the subnet input; parameter gradients are added to
    /// `grad`.
    pub fn backward(
        &self,
        tape: &SubnetTape<T>,
        g_out: &Tensor<T>,
        grad: &mut DenseSubnet<T>,
    ) -> Tensor<T> {
        let (n, h, w) = (tape.batch, tape.height, tape.width);
        let len = n * h * w;
        let hidden = self.layers.len() - 1;
        let total = self.channels + hidden * self.growth;
        let mut g_feat = vec![T::zero(); total * len];
        let last = &self.layers[hidden];
        last.backward(
            &tape.features,
            g_out.data(),
            n,
            h,
            w,
            &mut grad.layers[hidden],
            &mut g_feat,
        );
        let slope = T::from_f64_lossy(LEAKY_SLOPE);
        for j in (0..hidden).rev() {
            let start = self.channels + j * self.growth;
            let layer = &self.layers[j];
            let (g_in, g_rest) = g_feat.split_at_mut(start * len);
            let g_here = &mut g_rest[..layer.out_channels * len];
            let act = &tape.features[start * len..(start + layer.out_channels) * len];
            // Post-activation sign equals pre-activation sign for a positive slope.
            g_here.iter_mut().zip(act).for_each(|(g, a)| {
                if *a < T::zero() {
                    *g *= slope
                }
            });
            layer.backward(
                &tape.features[..start * len],
                g_here,
                n,
                h,
                w,
                &mut grad.layers[j],
                g_in,
            );
        }
        g_feat.truncate(self.channels * len);
        Tensor::from_vec(self.channels, n, h, w, g_feat).expect("gradient shape")
    }
}
