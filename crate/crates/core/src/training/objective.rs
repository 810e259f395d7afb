//! Batched training objective and its exact gradient.
//!
//! Per pair: conceal the secret in the cover, blend the residual back with
//! the pair's λ, reveal the secret from that stego with noise `Z`, reveal the
//! cover from itself with noise `Z̃`, and score all four losses. Reveal
//! outputs are not clamped here.

use crate::error::{Error, Result};
use crate::inn::InnModel;
use crate::tensor::{Real, Tensor};
use crate::wavelet::{dwt, iwt, BANDS};

use super::loss::{LossBreakdown, LossWeights};

/// Everything random about a step, fixed up front.
#[derive(Clone, Debug)]
pub struct StepInputs<T> {
    /// `C×N×H×W`
    pub secrets: Tensor<T>,
    pub covers: Tensor<T>,
    /// One λ per pair.
    pub lams: Vec<f64>,
    /// Subband-shaped noise for the secret reveal.
    pub noise_secret: Tensor<T>,
    /// Subband-shaped noise for the cover reveal.
    pub noise_cover: Tensor<T>,
}

impl<T: Real> StepInputs<T> {
    fn validate(&self) -> Result<()> {
        self.secrets.ensure_same_shape(&self.covers)?;
        let [c, n, h, w] = self.covers.shape();
        if self.lams.len() != n {
            return Err(Error::Dimension(format!("{} lambdas for {n} pairs", self.lams.len())));
        }
        if let Some(l) = self.lams.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::Domain(format!("lambda must lie in [0, 1], got {l}")));
        }
        let sub = [BANDS * c, n, h / 2, w / 2];
        if self.noise_secret.shape() != sub || self.noise_cover.shape() != sub {
            return Err(Error::Dimension("noise tensors must match the subband shape".into()));
        }
        Ok(())
    }
}

fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = (*x - *y).to_f64().unwrap();
            d * d
        })
        .sum();
    sum / a.len() as f64
}

/// `init + λ_i (cover − init)` per sample.
fn blend<T: Real>(cover: &Tensor<T>, init: &Tensor<T>, lams: &[f64]) -> Tensor<T> {
    let mut out = init.clone();
    let [c, n, ..] = cover.shape();
    let plane = cover.plane();
    for ch in 0..c {
        for (i, &lam) in lams.iter().enumerate().take(n) {
            let off = cover.plane_offset(ch, i);
            let (lam, keep) = (T::from_f64_lossy(lam), T::from_f64_lossy(1.0 - lam));
            for (o, cv) in out.data_mut()[off..off + plane].iter_mut().zip(&cover.data()[off..off + plane]) {
                *o = *cv * lam + *o * keep;
            }
        }
    }
    out
}

fn scale_samples<T: Real>(x: &Tensor<T>, factors: &[f64]) -> Tensor<T> {
    let mut out = x.clone();
    let plane = x.plane();
    for ch in 0..x.channels() {
        for (i, &f) in factors.iter().enumerate() {
            let off = x.plane_offset(ch, i);
            let f = T::from_f64_lossy(f);
            out.data_mut()[off..off + plane].iter_mut().for_each(|v| *v *= f);
        }
    }
    out
}

/// `scale · (a − b)`
fn scaled_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>, scale: f64) -> Tensor<T> {
    let s = T::from_f64_lossy(scale);
    a.zip_map(b, |x, y| s * (x - y))
}

struct Forward<T> {
    stego: Tensor<T>,
    stego_sub: Tensor<T>,
    cover_sub: Tensor<T>,
    rec_secret: Tensor<T>,
    rec_cover: Tensor<T>,
}

fn ll_mse<T: Real>(a_sub: &Tensor<T>, b_sub: &Tensor<T>) -> f64 {
    let c = a_sub.channels() / BANDS;
    let len = c * a_sub.channel_len();
    let sum: f64 = a_sub.data()[..len]
        .iter()
        .zip(&b_sub.data()[..len])
        .map(|(x, y)| {
            let d = (*x - *y).to_f64().unwrap();
            d * d
        })
        .sum();
    sum / len as f64
}

/// Loss terms only; no activations are kept.
pub fn objective<T: Real>(model: &InnModel<T>, inputs: &StepInputs<T>, weights: &LossWeights) -> Result<LossBreakdown> {
    inputs.validate()?;
    let secret_sub = dwt(&inputs.secrets)?;
    let cover_sub = dwt(&inputs.covers)?;
    let (_, stego_init_sub) = model.forward(&secret_sub, &cover_sub)?;
    let stego = blend(&inputs.covers, &iwt(&stego_init_sub)?, &inputs.lams);
    let stego_sub = dwt(&stego)?;
    let (rec_s, _) = model.inverse(&inputs.noise_secret, &stego_sub)?;
    let (rec_c, _) = model.inverse(&inputs.noise_cover, &cover_sub)?;
    let f = Forward {
        rec_secret: iwt(&rec_s)?,
        rec_cover: iwt(&rec_c)?,
        stego,
        stego_sub,
        cover_sub,
    };
    Ok(LossBreakdown::from_terms(terms(&f, inputs), weights))
}

fn terms<T: Real>(f: &Forward<T>, inputs: &StepInputs<T>) -> [f64; 4] {
    [
        mse(&f.stego, &inputs.covers),
        ll_mse(&f.stego_sub, &f.cover_sub),
        mse(&f.rec_secret, &inputs.secrets),
        mse(&f.rec_cover, &inputs.covers),
    ]
}

/// Loss terms and the gradient of the weighted total w.r.t. every parameter.
pub fn objective_and_gradient<T: Real>(
    model: &InnModel<T>,
    inputs: &StepInputs<T>,
    weights: &LossWeights,
) -> Result<(LossBreakdown, InnModel<T>)> {
    inputs.validate()?;
    let secret_sub = dwt(&inputs.secrets)?;
    let cover_sub = dwt(&inputs.covers)?;
    let (unused, stego_init_sub, ftrace) = model.forward_traced(&secret_sub, &cover_sub)?;
    let stego = blend(&inputs.covers, &iwt(&stego_init_sub)?, &inputs.lams);
    let stego_sub = dwt(&stego)?;
    let (rec_s_sub, main_s, itrace_s) = model.inverse_traced(&inputs.noise_secret, &stego_sub)?;
    let (rec_c_sub, main_c, itrace_c) = model.inverse_traced(&inputs.noise_cover, &cover_sub)?;
    let f = Forward {
        stego,
        stego_sub,
        cover_sub,
        rec_secret: iwt(&rec_s_sub)?,
        rec_cover: iwt(&rec_c_sub)?,
    };
    let breakdown = LossBreakdown::from_terms(terms(&f, inputs), weights);

    let mut grad = model.zeros_like();
    let numel = inputs.covers.len() as f64;
    let ll_numel = (f.cover_sub.len() / BANDS) as f64;

    // Cover reveal path.
    let g_rec_c = dwt(&scaled_diff(&f.rec_cover, &inputs.covers, 2.0 * weights.cover_reveal / numel))?;
    model.backward_inverse(&itrace_c, &g_rec_c, &main_c.map(|_| T::zero()), &mut grad);

    // Secret reveal path, continuing into the stego image.
    let g_rec_s = dwt(&scaled_diff(&f.rec_secret, &inputs.secrets, 2.0 * weights.secret_reveal / numel))?;
    let (_, mut g_stego_sub) =
        model.backward_inverse(&itrace_s, &g_rec_s, &main_s.map(|_| T::zero()), &mut grad);
    let ll_len = f.cover_sub.len() / BANDS;
    let ll_scale = T::from_f64_lossy(2.0 * weights.freq / ll_numel);
    for ((g, s), c) in g_stego_sub.data_mut()[..ll_len]
        .iter_mut()
        .zip(&f.stego_sub.data()[..ll_len])
        .zip(&f.cover_sub.data()[..ll_len])
    {
        *g += ll_scale * (*s - *c);
    }
    let mut g_stego = iwt(&g_stego_sub)?;
    g_stego.add_assign(&scaled_diff(&f.stego, &inputs.covers, 2.0 * weights.hiding / numel));

    // Through the blend: d stego / d init = 1 − λ_i.
    let one_minus: Vec<f64> = inputs.lams.iter().map(|l| 1.0 - l).collect();
    let g_init = scale_samples(&g_stego, &one_minus);
    let g_stego_init_sub = dwt(&g_init)?;
    model.backward_forward(&ftrace, &unused.map(|_| T::zero()), &g_stego_init_sub, &mut grad);
    Ok((breakdown, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inn::{init_model, ModelConfig};
    use crate::pipeline::gaussian_like;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inputs(rng: &mut ChaCha8Rng, n: usize, lam: Option<f64>) -> StepInputs<f64> {
        let img = |rng: &mut ChaCha8Rng| {
            let data = (0..3 * n * 8 * 8).map(|_| rng.gen::<f64>()).collect();
            Tensor::from_vec(3, n, 8, 8, data).unwrap()
        };
        StepInputs {
            secrets: img(rng),
            covers: img(rng),
            lams: (0..n).map(|_| lam.unwrap_or_else(|| rng.gen())).collect(),
            noise_secret: gaussian_like([12, n, 4, 4], rng),
            noise_cover: gaussian_like([12, n, 4, 4], rng),
        }
    }

    #[test]
    fn blend_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = inputs(&mut rng, 2, None);
        assert_eq!(blend(&x.covers, &x.secrets, &[0.0, 0.0]), x.secrets);
        assert_eq!(blend(&x.covers, &x.secrets, &[1.0, 1.0]), x.covers);
        let mixed = blend(&x.covers, &x.secrets, &[1.0, 0.0]);
        assert_eq!(mixed.image(0), x.covers.image(0));
        assert_eq!(mixed.image(1), x.secrets.image(1));
    }

    #[test]
    fn objective_paths_agree() {
        let cfg = ModelConfig { num_blocks: 2, growth: 4, num_subnet_layers: 2, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model: InnModel<f64> = init_model(&cfg, &mut rng).unwrap();
        for p in model.params_mut() {
            p.iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
        }
        let x = inputs(&mut rng, 2, None);
        let w = LossWeights::default();
        let a = objective(&model, &x, &w).unwrap();
        let (b, _) = objective_and_gradient(&model, &x, &w).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
    }

    #[test]
    fn fresh_model_has_zero_hiding_loss_at_lambda_zero() {
        let cfg = ModelConfig { num_blocks: 2, growth: 4, num_subnet_layers: 2, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model: InnModel<f64> = init_model(&cfg, &mut rng).unwrap();
        let x = inputs(&mut rng, 2, Some(0.0));
        let l = objective(&model, &x, &LossWeights::default()).unwrap();
        assert!(l.l_hid < 1e-20);
        assert!(l.l_freq < 1e-20);
        assert!(l.l_srev > 0.0 && l.l_crev > 0.0);
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let cfg = ModelConfig { num_blocks: 1, growth: 4, num_subnet_layers: 2, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model: InnModel<f64> = init_model(&cfg, &mut rng).unwrap();
        let mut x = inputs(&mut rng, 2, None);
        x.lams.pop();
        assert!(objective(&model, &x, &LossWeights::default()).is_err());
        let mut y = inputs(&mut rng, 2, None);
        y.lams[0] = 2.0;
        assert!(objective_and_gradient(&model, &y, &LossWeights::default()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = ModelConfig { num_blocks: 2, growth: 4, num_subnet_layers: 3, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model: InnModel<f64> = init_model(&cfg, &mut rng).unwrap();
        for p in model.params_mut() {
            p.iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
        }
        let x = inputs(&mut rng, 2, None);
        let w = LossWeights::default();
        let (_, grad) = objective_and_gradient(&model, &x, &w).unwrap();
        let grads: Vec<Vec<f64>> = grad.named_params().into_iter().map(|(_, p)| p.to_vec()).collect();
        let eps = 1e-5;
        for pi in (0..grads.len()).step_by(3) {
            let j = (pi * 13) % grads[pi].len();
            let mut plus = model.clone();
            plus.params_mut()[pi][j] += eps;
            let mut minus = model.clone();
            minus.params_mut()[pi][j] -= eps;
            let fd = (objective(&plus, &x, &w).unwrap().l_total - objective(&minus, &x, &w).unwrap().l_total)
                / (2.0 * eps);
            let an = grads[pi][j];
            assert!((fd - an).abs() <= 1e-6 + 1e-4 * fd.abs(), "param {pi}[{j}]: fd {fd} vs {an}");
        }
    }
}
