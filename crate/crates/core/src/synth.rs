//! Procedural photo-like images for desk-scale runs.
//!
//! Each image is a smooth colour gradient overlaid with a few soft-edged
//! ellipses and rectangles, low-frequency colour waves and a faint grain.
//! That gives piecewise-smooth content with real edges, which is what the
//! hiding network has to learn to exploit, without shipping a dataset.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Image;

fn random_colour<R: Rng>(rng: &mut R) -> [f32; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

fn smoothstep(edge: f32, x: f32) -> f32 {
    (0.5 - x / edge.max(1e-3)).clamp(0.0, 1.0)
}

/// One RGB image of `size×size`.
pub fn synthetic_image<R: Rng>(size: usize, rng: &mut R) -> Image {
    let s = size as f32;
    let c0 = random_colour(rng);
    let c1 = random_colour(rng);
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());

    let mut canvas: Vec<[f32; 3]> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f32 / s, (i % size) as f32 / s);
            let t = ((x - 0.5) * dx + (y - 0.5) * dy + 0.5).clamp(0.0, 1.0);
            [0, 1, 2].map(|c| c0[c] * (1.0 - t) + c1[c] * t)
        })
        .collect();

    let shapes = rng.gen_range(2..6);
    for _ in 0..shapes {
        let colour = random_colour(rng);
        let (cy, cx) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
        let (ry, rx) = (rng.gen_range(0.1 * s..0.45 * s), rng.gen_range(0.1 * s..0.45 * s));
        let soft = rng.gen_range(0.5..2.5f32);
        let ellipse = rng.gen_bool(0.6);
        let opacity = rng.gen_range(0.5..1.0f32);
        for (i, px) in canvas.iter_mut().enumerate() {
            let (y, x) = ((i / size) as f32, (i % size) as f32);
            // Signed distance-ish value in pixels, negative inside.
            let d = if ellipse {
                let r = (((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2)).sqrt();
                (r - 1.0) * ry.min(rx)
            } else {
                ((y - cy).abs() - ry).max((x - cx).abs() - rx)
            };
            let a = smoothstep(soft, d) * opacity;
            for c in 0..3 {
                px[c] = px[c] * (1.0 - a) + colour[c] * a;
            }
        }
    }

    let waves = rng.gen_range(1..3);
    for _ in 0..waves {
        let freq = rng.gen_range(0.5..3.0f32) * std::f32::consts::TAU / s;
        let theta: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
        let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
        let amp = [0, 1, 2].map(|_| rng.gen_range(-0.08..0.08f32));
        for (i, px) in canvas.iter_mut().enumerate() {
            let (y, x) = ((i / size) as f32, (i % size) as f32);
            let v = (freq * (x * theta.cos() + y * theta.sin()) + phase).sin();
            for c in 0..3 {
                px[c] += amp[c] * v;
            }
        }
    }

    let grain = Normal::new(0.0f32, rng.gen_range(0.0..0.01)).unwrap();
    Image::from_fn(3, size, size, |c, y, x| {
        (canvas[y * size + x][c] + grain.sample(rng)).clamp(0.0, 1.0)
    })
}

/// `count` images, quantized to 8-bit levels as if read from PNG.
pub fn synthetic_dataset<R: Rng>(count: usize, size: usize, rng: &mut R) -> Vec<Image> {
    (0..count).map(|_| synthetic_image(size, rng).quantized()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn images_are_valid_and_seeded() {
        let a = synthetic_dataset(3, 16, &mut ChaCha8Rng::seed_from_u64(5));
        let b = synthetic_dataset(3, 16, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        for img in &a {
            assert_eq!(img.shape(), (3, 16, 16));
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
