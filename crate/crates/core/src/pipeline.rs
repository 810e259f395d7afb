//! Image-level concealing, revealing and the PSNR steganalysis verdict.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inn::InnModel;
use crate::tensor::{Image, Real, Tensor};
use crate::wavelet::{dwt, iwt};

/// Default decision threshold in dB.
pub const DEFAULT_THRESHOLD_DB: f64 = 25.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Cover,
    Stego,
}

impl Verdict {
    /// Stego iff `score ≤ threshold`. An infinite score is always a cover.
    pub fn from_score(psnr_db: f64, threshold_db: f64) -> Self {
        if psnr_db <= threshold_db {
            Verdict::Stego
        } else {
            Verdict::Cover
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Cover => "cover",
            Verdict::Stego => "stego",
        })
    }
}

#[derive(Clone, Debug)]
pub struct DetectionResult {
    pub psnr_db: f64,
    pub verdict: Verdict,
    /// Revealed content, clamped to `[0, 1]`.
    pub recovered: Image,
    pub threshold_db: f64,
}

/// Draw a standard-normal tensor of the given shape in storage order.
pub fn gaussian_like<T: Real, R: Rng>(shape: [usize; 4], rng: &mut R) -> Tensor<T> {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::from_vec(shape[0], shape[1], shape[2], shape[3], data).expect("shape product")
}

/// Initial stego image: inverse wavelet of the stego branch. Not clamped.
pub fn conceal(model: &InnModel, secret: &Image, cover: &Image) -> Result<Image> {
    secret.ensure_same_shape(cover)?;
    cover.ensure_even()?;
    let s = dwt(&Tensor::<f32>::from_images(&[secret])?)?;
    let c = dwt(&Tensor::<f32>::from_images(&[cover])?)?;
    let (_, stego) = model.forward(&s, &c)?;
    Ok(iwt(&stego)?.image(0))
}

/// `(cover − init_stego) ⊙ lam + init_stego`, evaluated as
/// `cover·lam + init_stego·(1 − lam)` so both endpoints are exact.
pub fn residual_augment(cover: &Image, init_stego: &Image, lam: f64) -> Result<Image> {
    check_lam(lam)?;
    cover.ensure_same_shape(init_stego)?;
    let (lam, keep) = (lam as f32, (1.0 - lam) as f32);
    let mut out = init_stego.clone();
    out.data_mut()
        .iter_mut()
        .zip(cover.data())
        .for_each(|(s, c)| *s = *c * lam + *s * keep);
    Ok(out)
}

pub(crate) fn check_lam(lam: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::Domain(format!("lambda must lie in [0, 1], got {lam}")));
    }
    Ok(())
}

/// Backward pass from Gaussian noise and `image`; clamped to `[0, 1]`.
pub fn reveal<R: Rng>(model: &InnModel, image: &Image, rng: &mut R) -> Result<Image> {
    image.ensure_even()?;
    let main = dwt(&Tensor::<f32>::from_images(&[image])?)?;
    let z = gaussian_like::<f32, _>(main.shape(), rng);
    let (recovered, _) = model.inverse(&z, &main)?;
    Ok(iwt(&recovered)?.image(0).clamped())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio with unit peak; `+∞` for identical inputs.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / err).log10())
}

pub fn detect<R: Rng>(
    model: &InnModel,
    image: &Image,
    threshold_db: f64,
    rng: &mut R,
) -> Result<DetectionResult> {
    if !threshold_db.is_finite() && threshold_db != f64::NEG_INFINITY {
        return Err(Error::Domain(format!("threshold must be finite, got {threshold_db}")));
    }
    let recovered = reveal(model, image, rng)?;
    let psnr_db = psnr(image, &recovered)?;
    Ok(DetectionResult {
        psnr_db,
        verdict: Verdict::from_score(psnr_db, threshold_db),
        recovered,
        threshold_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inn::{init_model, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Image {
        Image::from_fn(c, h, w, |_, _, _| rng.gen())
    }

    fn toy_model(seed: u64) -> InnModel {
        let cfg = ModelConfig { num_blocks: 2, growth: 4, num_subnet_layers: 2, ..ModelConfig::default() };
        init_model(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn verdict_rule() {
        assert_eq!(Verdict::from_score(30.0, 25.0), Verdict::Cover);
        assert_eq!(Verdict::from_score(20.0, 25.0), Verdict::Stego);
        assert_eq!(Verdict::from_score(25.0, 25.0), Verdict::Stego);
        assert_eq!(Verdict::from_score(f64::INFINITY, 25.0), Verdict::Cover);
        assert_eq!(Verdict::from_score(-5.0, f64::NEG_INFINITY), Verdict::Cover);
    }

    #[test]
    fn psnr_values() {
        let a = Image::filled(3, 4, 4, 0.0);
        let b = Image::filled(3, 4, 4, 1.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b).unwrap().abs() < 1e-12);
        let c = Image::filled(3, 4, 4, 0.1);
        assert!((psnr(&a, &c).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&a, &Image::zeros(3, 2, 2)).is_err());
    }

    #[test]
    fn psnr_symmetric_and_decreasing_in_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = random_image(&mut rng, 3, 8, 8);
        let noise: Vec<f32> = (0..base.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for amp in [0.01f32, 0.02, 0.05, 0.1, 0.2] {
            let mut noisy = base.clone();
            noisy.data_mut().iter_mut().zip(&noise).for_each(|(v, n)| *v += amp * n);
            let p = psnr(&base, &noisy).unwrap();
            assert_eq!(p, psnr(&noisy, &base).unwrap());
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn residual_augment_endpoints_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cover = random_image(&mut rng, 3, 4, 4);
        let init = random_image(&mut rng, 3, 4, 4);
        assert_eq!(residual_augment(&cover, &init, 0.0).unwrap(), init);
        assert_eq!(residual_augment(&cover, &init, 1.0).unwrap(), cover);
        let c = Image::filled(1, 2, 2, 0.8);
        let s = Image::filled(1, 2, 2, 0.4);
        let mid = residual_augment(&c, &s, 0.5).unwrap();
        assert!(mid.data().iter().all(|v| (v - 0.6).abs() < 1e-6));
        assert!(matches!(residual_augment(&c, &s, 1.5), Err(Error::Domain(_))));
        assert!(residual_augment(&c, &s, -0.1).is_err());
    }

    #[test]
    fn fresh_model_conceal_is_identity() {
        let model = toy_model(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_image(&mut rng, 3, 8, 6);
        let c = random_image(&mut rng, 3, 8, 6);
        let stego = conceal(&model, &s, &c).unwrap();
        assert_eq!(stego.shape(), c.shape());
        let diff = stego.data().iter().zip(c.data()).fold(0f32, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff <= 1e-5);
    }

    #[test]
    fn conceal_rejects_bad_shapes() {
        let model = toy_model(3);
        let a = Image::zeros(3, 4, 4);
        assert!(conceal(&model, &a, &Image::zeros(3, 4, 6)).is_err());
        let odd = Image::zeros(3, 5, 4);
        assert!(conceal(&model, &odd, &odd).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(reveal(&model, &odd, &mut rng).is_err());
    }

    #[test]
    fn reveal_is_seeded_and_clamped() {
        let model = toy_model(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = random_image(&mut rng, 3, 6, 6);
        let a = reveal(&model, &img, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = reveal(&model, &img, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), img.shape());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn detect_respects_its_invariant() {
        let model = toy_model(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..4 {
            let img = random_image(&mut rng, 3, 4, 4);
            let r = detect(&model, &img, DEFAULT_THRESHOLD_DB, &mut rng).unwrap();
            assert_eq!(r.verdict == Verdict::Stego, r.psnr_db <= r.threshold_db);
            assert!(r.psnr_db.is_finite() || r.psnr_db == f64::INFINITY);
        }
        let img = random_image(&mut rng, 3, 4, 4);
        assert!(detect(&model, &img, f64::NAN, &mut rng).is_err());
        let all_cover = detect(&model, &img, f64::NEG_INFINITY, &mut rng).unwrap();
        assert_eq!(all_cover.verdict, Verdict::Cover);
    }
}
