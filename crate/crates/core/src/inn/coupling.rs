//! Affine coupling blocks.
//!
//! Forward (concealing):
//!
//! ```text
//! c' = c + ψ(s)
//! s' = s ⊙ exp(α(ρ(c'))) + η(c')
//! ```
//!
//! Inverse (revealing), with `m` the main branch and `z` the latent branch:
//!
//! ```text
//! z = (z' − η(m')) ⊙ exp(−α(ρ(m')))
//! m = m' − ψ(z)
//! ```

use rand::Rng;

use super::subnet::{DenseSubnet, SubnetTape};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `k · sigmoid(x)`.
pub fn alpha<T: Real>(x: T, clamp_k: T) -> T {
    clamp_k * sigmoid(x)
}

/// Derivative of [`alpha`].
pub fn alpha_grad<T: Real>(x: T, clamp_k: T) -> T {
    let s = sigmoid(x);
    clamp_k * s * (T::one() - s)
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Elementwise [`alpha`] over a slice.
pub fn alpha_slice<T: Real>(xs: &[T], clamp_k: T) -> Vec<T> {
    xs.iter().map(|&x| alpha(x, clamp_k)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock<T> {
    pub psi: DenseSubnet<T>,
    pub rho: DenseSubnet<T>,
    pub eta: DenseSubnet<T>,
}

#[derive(Clone, Debug)]
pub struct ForwardTape<T> {
    psi: SubnetTape<T>,
    rho: SubnetTape<T>,
    eta: SubnetTape<T>,
    rho_out: Tensor<T>,
    /// `exp(α(ρ(c')))`
    scale: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct InverseTape<T> {
    psi: SubnetTape<T>,
    rho: SubnetTape<T>,
    eta: SubnetTape<T>,
    rho_out: Tensor<T>,
    /// `exp(−α(ρ(m')))`
    scale: Tensor<T>,
}

fn check_pair<T: Real>(channels: usize, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    a.ensure_same_shape(b)?;
    if a.channels() != channels {
        return Err(Error::Dimension(format!(
            "coupling block expects {channels} channels per branch, got {}",
            a.channels()
        )));
    }
    Ok(())
}

impl<T: Real> CouplingBlock<T> {
    pub fn zeros(channels: usize, growth: usize, layers: usize, kernel: usize) -> Self {
        Self {
            psi: DenseSubnet::zeros(channels, growth, layers, kernel),
            rho: DenseSubnet::zeros(channels, growth, layers, kernel),
            eta: DenseSubnet::zeros(channels, growth, layers, kernel),
        }
    }

    pub fn init<R: Rng>(channels: usize, growth: usize, layers: usize, kernel: usize, rng: &mut R) -> Self {
        Self {
            psi: DenseSubnet::init(channels, growth, layers, kernel, rng),
            rho: DenseSubnet::init(channels, growth, layers, kernel, rng),
            eta: DenseSubnet::init(channels, growth, layers, kernel, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.psi.channels
    }

    pub fn subnets(&self) -> [&DenseSubnet<T>; 3] {
        [&self.psi, &self.rho, &self.eta]
    }

    pub fn subnets_mut(&mut self) -> [&mut DenseSubnet<T>; 3] {
        [&mut self.psi, &mut self.rho, &mut self.eta]
    }

    /// Returns `(c', s')`.
    pub fn forward(
        &self,
        cover: &Tensor<T>,
        secret: &Tensor<T>,
        clamp_k: T,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        self.forward_taped(cover, secret, clamp_k).map(|(c, s, _)| (c, s))
    }

    pub fn forward_taped(
        &self,
        cover: &Tensor<T>,
        secret: &Tensor<T>,
        clamp_k: T,
    ) -> Result<(Tensor<T>, Tensor<T>, ForwardTape<T>)> {
        check_pair(self.channels(), cover, secret)?;
        let (psi_out, psi_tape) = self.psi.forward(secret)?;
        let mut cover_next = cover.clone();
        cover_next.add_assign(&psi_out);
        let (rho_out, rho_tape) = self.rho.forward(&cover_next)?;
        let (eta_out, eta_tape) = self.eta.forward(&cover_next)?;
        let scale = rho_out.map(|r| alpha(r, clamp_k).exp());
        let mut secret_next = secret.zip_map(&scale, |s, e| s * e);
        secret_next.add_assign(&eta_out);
        let tape = ForwardTape { psi: psi_tape, rho: rho_tape, eta: eta_tape, rho_out, scale };
        Ok((cover_next, secret_next, tape))
    }

    /// Returns `(m, z)`.
    pub fn inverse(
        &self,
        main_next: &Tensor<T>,
        z_next: &Tensor<T>,
        clamp_k: T,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        self.inverse_taped(main_next, z_next, clamp_k).map(|(m, z, _)| (m, z))
    }

    pub fn inverse_taped(
        &self,
        main_next: &Tensor<T>,
        z_next: &Tensor<T>,
        clamp_k: T,
    ) -> Result<(Tensor<T>, Tensor<T>, InverseTape<T>)> {
        check_pair(self.channels(), main_next, z_next)?;
        let (rho_out, rho_tape) = self.rho.forward(main_next)?;
        let (eta_out, eta_tape) = self.eta.forward(main_next)?;
        let scale = rho_out.map(|r| (-alpha(r, clamp_k)).exp());
        let mut z = z_next.clone();
        z.sub_assign(&eta_out);
        let z = z.zip_map(&scale, |d, e| d * e);
        let (psi_out, psi_tape) = self.psi.forward(&z)?;
        let mut main = main_next.clone();
        main.sub_assign(&psi_out);
        let tape = InverseTape { psi: psi_tape, rho: rho_tape, eta: eta_tape, rho_out, scale };
        Ok((main, z, tape))
    }

    /// Backpropagate through [`forward_taped`](Self::forward_taped).
    /// Takes gradients w.r.t. `(c', s')`, returns gradients w.r.t. `(c, s)`.
    pub fn backward_forward(
        &self,
        tape: &ForwardTape<T>,
        g_cover_next: &Tensor<T>,
        g_secret_next: &Tensor<T>,
        clamp_k: T,
        grad: &mut CouplingBlock<T>,
    ) -> (Tensor<T>, Tensor<T>) {
        let secret = tape.psi.input();
        let mut g_secret = g_secret_next.zip_map(&tape.scale, |g, e| g * e);
        // d s'/d r = s · e · α'(r)
        let mut g_rho = g_secret_next.zip_map(&secret, |g, s| g * s);
        g_rho
            .data_mut()
            .iter_mut()
            .zip(tape.scale.data().iter().zip(tape.rho_out.data()))
            .for_each(|(g, (e, r))| *g = *g * *e * alpha_grad(*r, clamp_k));
        let mut g_cover = g_cover_next.clone();
        g_cover.add_assign(&self.eta.backward(&tape.eta, g_secret_next, &mut grad.eta));
        g_cover.add_assign(&self.rho.backward(&tape.rho, &g_rho, &mut grad.rho));
        g_secret.add_assign(&self.psi.backward(&tape.psi, &g_cover, &mut grad.psi));
        (g_cover, g_secret)
    }

    /// Backpropagate through [`inverse_taped`](Self::inverse_taped).
    /// Takes gradients w.r.t. `(m, z)`, returns gradients w.r.t. `(m', z')`.
    pub fn backward_inverse(
        &self,
        tape: &InverseTape<T>,
        g_main: &Tensor<T>,
        g_z: &Tensor<T>,
        clamp_k: T,
        grad: &mut CouplingBlock<T>,
    ) -> (Tensor<T>, Tensor<T>) {
        let z = tape.psi.input();
        let neg_g_main = g_main.map(|g| -g);
        let mut g_z_total = g_z.clone();
        g_z_total.add_assign(&self.psi.backward(&tape.psi, &neg_g_main, &mut grad.psi));
        let g_z_next = g_z_total.zip_map(&tape.scale, |g, e| g * e);
        let g_eta = g_z_next.map(|g| -g);
        // d z/d r = −z · α'(r)
        let mut g_rho = g_z_total.zip_map(&z, |g, zz| g * zz);
        g_rho
            .data_mut()
            .iter_mut()
            .zip(tape.rho_out.data())
            .for_each(|(g, r)| *g = -*g * alpha_grad(*r, clamp_k));
        let mut g_main_next = g_main.clone();
        g_main_next.add_assign(&self.eta.backward(&tape.eta, &g_eta, &mut grad.eta));
        g_main_next.add_assign(&self.rho.backward(&tape.rho, &g_rho, &mut grad.rho));
        (g_main_next, g_z_next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randomize(block: &mut CouplingBlock<f64>, rng: &mut ChaCha8Rng, scale: f64) {
        for net in block.subnets_mut() {
            for layer in &mut net.layers {
                for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                    *v = rng.gen_range(-scale..scale);
                }
            }
        }
    }

    fn field(rng: &mut ChaCha8Rng, c: usize) -> Tensor<f64> {
        let data = (0..c * 2 * 3 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(c, 2, 3, 4, data).unwrap()
    }

    #[test]
    fn alpha_values() {
        assert_eq!(alpha(0.0f64, 2.0), 1.0);
        assert!((alpha(3f64.ln(), 2.0) - 1.5).abs() < 1e-12);
        assert!((alpha(60.0f64, 2.0) - 2.0).abs() < 1e-12);
        assert!(alpha(-60.0f64, 2.0).abs() < 1e-12);
        assert!(alpha(-800.0f64, 2.0).is_finite());
        let xs = alpha_slice(&[0.0f32, 3f32.ln()], 2.0);
        assert!((xs[1] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn zero_block_scales_secret_only() {
        let block = CouplingBlock::<f32>::zeros(4, 3, 3, 3);
        let c = Tensor::from_vec(4, 1, 2, 2, vec![0.5; 16]).unwrap();
        let s = Tensor::from_vec(4, 1, 2, 2, vec![0.2; 16]).unwrap();
        let (c2, s2) = block.forward(&c, &s, 2.0).unwrap();
        assert_eq!(c2, c);
        assert!(s2.data().iter().all(|v| (v - 0.2 * 1f32.exp()).abs() < 1e-6));
        assert!((s2.data()[0] - 0.54366).abs() < 1e-5);
        let (m, z) = block.inverse(&c, &s, 2.0).unwrap();
        assert_eq!(m, c);
        assert!(z.data().iter().all(|v| (v - 0.2 * (-1f32).exp()).abs() < 1e-6));
    }

    #[test]
    fn inverse_undoes_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut block = CouplingBlock::<f64>::zeros(4, 3, 3, 3);
        randomize(&mut block, &mut rng, 0.3);
        let b32 = CouplingBlock::<f32> {
            psi: cast_net(&block.psi),
            rho: cast_net(&block.rho),
            eta: cast_net(&block.eta),
        };
        let c: Tensor<f32> = field(&mut rng, 4).cast();
        let s: Tensor<f32> = field(&mut rng, 4).cast();
        let (c2, s2) = b32.forward(&c, &s, 2.0).unwrap();
        let (c1, s1) = b32.inverse(&c2, &s2, 2.0).unwrap();
        assert!(c1.max_abs_diff(&c) <= 1e-4);
        assert!(s1.max_abs_diff(&s) <= 1e-4);
        // Twice around.
        let (c3, s3) = b32.forward(&c1, &s1, 2.0).unwrap();
        let (c4, s4) = b32.inverse(&c3, &s3, 2.0).unwrap();
        assert!(c4.max_abs_diff(&c) <= 2e-4);
        assert!(s4.max_abs_diff(&s) <= 2e-4);
    }

    fn cast_net(net: &DenseSubnet<f64>) -> DenseSubnet<f32> {
        DenseSubnet {
            channels: net.channels,
            growth: net.growth,
            layers: net
                .layers
                .iter()
                .map(|l| super::super::subnet::ConvLayer {
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                    kernel: l.kernel,
                    weight: l.weight.iter().map(|v| *v as f32).collect(),
                    bias: l.bias.iter().map(|v| *v as f32).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn cover_update_is_purely_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut block = CouplingBlock::<f64>::zeros(4, 3, 3, 3);
        randomize(&mut block, &mut rng, 0.3);
        let s = field(&mut rng, 4);
        let c_a = field(&mut rng, 4);
        let c_b = field(&mut rng, 4);
        let (a2, _) = block.forward(&c_a, &s, 2.0).unwrap();
        let (b2, _) = block.forward(&c_b, &s, 2.0).unwrap();
        let mut da = a2.clone();
        da.sub_assign(&c_a);
        let mut db = b2.clone();
        db.sub_assign(&c_b);
        assert!(da.max_abs_diff(&db) < 1e-12);
        let (psi, _) = block.psi.forward(&s).unwrap();
        assert!(da.max_abs_diff(&psi) < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let block = CouplingBlock::<f32>::zeros(4, 3, 3, 3);
        let a = Tensor::zeros(4, 1, 2, 2);
        let b = Tensor::zeros(4, 1, 2, 4);
        assert!(block.forward(&a, &b, 2.0).is_err());
        assert!(block.inverse(&a, &b, 2.0).is_err());
        let c = Tensor::zeros(3, 1, 2, 2);
        assert!(block.forward(&c, &c, 2.0).is_err());
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn forward_and_inverse_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut block = CouplingBlock::<f64>::zeros(4, 3, 3, 3);
        randomize(&mut block, &mut rng, 0.3);
        let c = field(&mut rng, 4);
        let s = field(&mut rng, 4);
        let (pc, ps) = (field(&mut rng, 4), field(&mut rng, 4));
        let k = 2.0;
        let f_obj = |b: &CouplingBlock<f64>, c: &Tensor<f64>, s: &Tensor<f64>| {
            let (c2, s2) = b.forward(c, s, k).unwrap();
            dot(&c2, &pc) + dot(&s2, &ps)
        };
        let i_obj = |b: &CouplingBlock<f64>, c: &Tensor<f64>, s: &Tensor<f64>| {
            let (m, z) = b.inverse(c, s, k).unwrap();
            dot(&m, &pc) + dot(&z, &ps)
        };
        let (_, _, ftape) = block.forward_taped(&c, &s, k).unwrap();
        let mut fgrad = CouplingBlock::zeros(4, 3, 3, 3);
        let (gc, gs) = block.backward_forward(&ftape, &pc, &ps, k, &mut fgrad);
        let (_, _, itape) = block.inverse_taped(&c, &s, k).unwrap();
        let mut igrad = CouplingBlock::zeros(4, 3, 3, 3);
        let (gm, gz) = block.backward_inverse(&itape, &pc, &ps, k, &mut igrad);

        let eps = 1e-6;
        let check = |fd: f64, an: f64, what: &str| {
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "{what}: fd {fd} vs {an}");
        };
        for idx in [0, 5, 33, 70, 95] {
            for (obj, g_first, g_second, name) in [
                (&f_obj as &dyn Fn(&CouplingBlock<f64>, &Tensor<f64>, &Tensor<f64>) -> f64, &gc, &gs, "fwd"),
                (&i_obj, &gm, &gz, "inv"),
            ] {
                let mut cp = c.clone();
                cp.data_mut()[idx] += eps;
                let mut cm = c.clone();
                cm.data_mut()[idx] -= eps;
                let fd = (obj(&block, &cp, &s) - obj(&block, &cm, &s)) / (2.0 * eps);
                check(fd, g_first.data()[idx], name);
                let mut sp = s.clone();
                sp.data_mut()[idx] += eps;
                let mut sm = s.clone();
                sm.data_mut()[idx] -= eps;
                let fd = (obj(&block, &c, &sp) - obj(&block, &c, &sm)) / (2.0 * eps);
                check(fd, g_second.data()[idx], name);
            }
        }
        for (net_idx, w) in [(0usize, 3usize), (1, 40), (2, 7)] {
            for (obj, grad, name) in [
                (&f_obj as &dyn Fn(&CouplingBlock<f64>, &Tensor<f64>, &Tensor<f64>) -> f64, &fgrad, "fwd"),
                (&i_obj, &igrad, "inv"),
            ] {
                let mut bp = block.clone();
                bp.subnets_mut()[net_idx].layers[1].weight[w] += eps;
                let mut bm = block.clone();
                bm.subnets_mut()[net_idx].layers[1].weight[w] -= eps;
                let fd = (obj(&bp, &c, &s) - obj(&bm, &c, &s)) / (2.0 * eps);
                check(fd, grad.subnets()[net_idx].layers[1].weight[w], name);
            }
        }
    }
}
