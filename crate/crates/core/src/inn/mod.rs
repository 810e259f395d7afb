//! The invertible network: a stack of affine coupling blocks operating on
//! Haar subbands.
//!
//! [`InnModel::forward`] threads `(cover, secret)` through blocks `1..K` and
//! returns `(unused, stego)`. [`InnModel::inverse`] threads `(main, z)` through
//! blocks `K..1` and returns `(recovered, unused)`, where `recovered` is the
//! latent branch (the secret for a stego input) and `unused` the main branch.

mod coupling;
mod subnet;

pub use coupling::{alpha, alpha_grad, alpha_slice, CouplingBlock, ForwardTape, InverseTape};
pub use subnet::{ConvLayer, DenseSubnet, SubnetTape, LEAKY_SLOPE};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub num_blocks: usize,
    /// `4C`: twelve for RGB inputs.
    pub channels_per_branch: usize,
    pub growth: usize,
    pub num_subnet_layers: usize,
    /// Upper bound of α.
    pub clamp_k: f64,
    pub kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_blocks: 16,
            channels_per_branch: 12,
            growth: 32,
            num_subnet_layers: 5,
            clamp_k: 2.0,
            kernel: 3,
        }
    }
}

impl ModelConfig {
    /// Small network for single-core desk experiments.
    pub fn toy() -> Self {
        Self { num_blocks: 4, growth: 16, num_subnet_layers: 3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_blocks", self.num_blocks),
            ("channels_per_branch", self.channels_per_branch),
            ("growth", self.growth),
            ("num_subnet_layers", self.num_subnet_layers),
            ("kernel", self.kernel),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("model.kernel must be odd, got {}", self.kernel)));
        }
        if !(self.clamp_k.is_finite() && self.clamp_k > 0.0) {
            return Err(Error::Config(format!("model.clamp_k must be positive, got {}", self.clamp_k)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnModel<T = f32> {
    pub config: ModelConfig,
    pub blocks: Vec<CouplingBlock<T>>,
}

/// Per-block tapes of a differentiable forward pass.
pub struct ForwardTrace<T>(Vec<ForwardTape<T>>);

/// Per-block tapes of a differentiable inverse pass (stored in execution
/// order, i.e. block `K` first).
pub struct InverseTrace<T>(Vec<InverseTape<T>>);

/// Build a model with random hidden layers and zero final layers.
pub fn init_model<T: Real, R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<InnModel<T>> {
    config.validate()?;
    let blocks = (0..config.num_blocks)
        .map(|_| {
            CouplingBlock::init(
                config.channels_per_branch,
                config.growth,
                config.num_subnet_layers,
                config.kernel,
                rng,
            )
        })
        .collect();
    Ok(InnModel { config: config.clone(), blocks })
}

impl<T: Real> InnModel<T> {
    /// Same architecture, every parameter zero. Used for gradients and
    /// optimizer moments.
    pub fn zeros(config: &ModelConfig) -> Self {
        let blocks = (0..config.num_blocks)
            .map(|_| {
                CouplingBlock::zeros(
                    config.channels_per_branch,
                    config.growth,
                    config.num_subnet_layers,
                    config.kernel,
                )
            })
            .collect();
        Self { config: config.clone(), blocks }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    fn clamp_k(&self) -> T {
        T::from_f64_lossy(self.config.clamp_k)
    }

    fn check_input(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
        a.ensure_same_shape(b)?;
        if a.channels() != self.config.channels_per_branch {
            return Err(Error::Dimension(format!(
                "model expects {} channels per branch, got {}",
                self.config.channels_per_branch,
                a.channels()
            )));
        }
        Ok(())
    }

    /// Concealing pass; returns `(unused_latent, stego_sub)`.
    pub fn forward(&self, secret_sub: &Tensor<T>, cover_sub: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_input(secret_sub, cover_sub)?;
        let k = self.clamp_k();
        let mut cover = cover_sub.clone();
        let mut secret = secret_sub.clone();
        for block in &self.blocks {
            (cover, secret) = block.forward(&cover, &secret, k)?;
        }
        Ok((secret, cover))
    }

    /// Revealing pass; returns `(recovered_sub, unused)`.
    pub fn inverse(&self, z_sub: &Tensor<T>, main_sub: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_input(z_sub, main_sub)?;
        let k = self.clamp_k();
        let mut main = main_sub.clone();
        let mut z = z_sub.clone();
        for block in self.blocks.iter().rev() {
            (main, z) = block.inverse(&main, &z, k)?;
        }
        Ok((z, main))
    }

    /// [`forward`](Self::forward) retaining activations for backpropagation.
    pub fn forward_traced(
        &self,
        secret_sub: &Tensor<T>,
        cover_sub: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, ForwardTrace<T>)> {
        self.check_input(secret_sub, cover_sub)?;
        let k = self.clamp_k();
        let mut cover = cover_sub.clone();
        let mut secret = secret_sub.clone();
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (c, s, tape) = block.forward_taped(&cover, &secret, k)?;
            cover = c;
            secret = s;
            tapes.push(tape);
        }
        Ok((secret, cover, ForwardTrace(tapes)))
    }

    /// [`inverse`](Self::inverse) retaining activations for backpropagation.
    pub fn inverse_traced(
        &self,
        z_sub: &Tensor<T>,
        main_sub: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, InverseTrace<T>)> {
        self.check_input(z_sub, main_sub)?;
        let k = self.clamp_k();
        let mut main = main_sub.clone();
        let mut z = z_sub.clone();
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for block in self.blocks.iter().rev() {
            let (m, zz, tape) = block.inverse_taped(&main, &z, k)?;
            main = m;
            z = zz;
            tapes.push(tape);
        }
        Ok((z, main, InverseTrace(tapes)))
    }

    /// Gradients of a forward pass. Inputs are the gradients w.r.t.
    /// `(unused_latent, stego_sub)`; returns gradients w.r.t.
    /// `(secret_sub, cover_sub)` and accumulates parameter gradients.
    pub fn backward_forward(
        &self,
        trace: &ForwardTrace<T>,
        g_unused: &Tensor<T>,
        g_stego: &Tensor<T>,
        grad: &mut InnModel<T>,
    ) -> (Tensor<T>, Tensor<T>) {
        let k = self.clamp_k();
        let mut g_cover = g_stego.clone();
        let mut g_secret = g_unused.clone();
        for (i, tape) in trace.0.iter().enumerate().rev() {
            (g_cover, g_secret) =
                self.blocks[i].backward_forward(tape, &g_cover, &g_secret, k, &mut grad.blocks[i]);
        }
        (g_secret, g_cover)
    }

    /// Gradients of an inverse pass. Inputs are the gradients w.r.t.
    /// `(recovered_sub, unused)`; returns gradients w.r.t. `(z_sub, main_sub)`.
    pub fn backward_inverse(
        &self,
        trace: &InverseTrace<T>,
        g_recovered: &Tensor<T>,
        g_unused: &Tensor<T>,
        grad: &mut InnModel<T>,
    ) -> (Tensor<T>, Tensor<T>) {
        let k = self.clamp_k();
        let mut g_main = g_unused.clone();
        let mut g_z = g_recovered.clone();
        let last = self.blocks.len() - 1;
        // Tapes run block K..1; undo them in the opposite order.
        for (step, tape) in trace.0.iter().enumerate().rev() {
            let i = last - step;
            (g_main, g_z) =
                self.blocks[i].backward_inverse(tape, &g_main, &g_z, k, &mut grad.blocks[i]);
        }
        (g_z, g_main)
    }

    /// Every parameter buffer with a stable dotted name.
    pub fn named_params(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            for (name, net) in ["psi", "rho", "eta"].iter().zip(block.subnets()) {
                for (l, layer) in net.layers.iter().enumerate() {
                    out.push((format!("blocks.{b}.{name}.{l}.weight"), layer.weight.as_slice()));
                    out.push((format!("blocks.{b}.{name}.{l}.bias"), layer.bias.as_slice()));
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            for net in block.subnets_mut() {
                for layer in &mut net.layers {
                    out.push(layer.weight.as_mut_slice());
                    out.push(layer.bias.as_mut_slice());
                }
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Copy in another precision.
    pub fn cast<U: Real>(&self) -> InnModel<U> {
        let mut out = InnModel::<U>::zeros(&self.config);
        for (dst, (_, src)) in out.params_mut().into_iter().zip(self.named_params()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::from_f64_lossy(s.to_f64().unwrap());
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named_params().iter().all(|(_, p)| p.iter().all(|v| v.is_finite()))
    }
}
