//! PNG input/output and cropping.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use log::warn;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Image;

/// Decode any supported file into a 3-channel image in `[0, 1]`. Grayscale is
/// replicated across channels.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(Image::from_fn(3, h, w, |c, y, x| rgb.get_pixel(x as u32, y as u32)[c] as f32 / 255.0))
}

/// Write an 8-bit RGB PNG (values clamped and rounded).
pub fn write_png(img: &Image, path: &Path) -> Result<()> {
    if img.channels() != 3 && img.channels() != 1 {
        return Err(Error::Dimension(format!("cannot write a {}-channel image as PNG", img.channels())));
    }
    let q = |c: usize, y: usize, x: usize| {
        let c = c.min(img.channels() - 1);
        (img.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8
    };
    let buf = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([q(0, y, x), q(1, y, x), q(2, y, x)])
    });
    buf.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg" | "bmp")
    )
}

/// Image files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Load every decodable image in `dir` (sorted by name). Undecodable files
/// are skipped with a warning; it is an error if nothing loads.
pub fn load_images(dir: &Path) -> Result<Vec<Image>> {
    Ok(load_images_with_paths(dir)?.into_iter().map(|(_, img)| img).collect())
}

pub fn load_images_with_paths(dir: &Path) -> Result<Vec<(PathBuf, Image)>> {
    let paths = list_images(dir)?;
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        match read_image(&path) {
            Ok(img) => out.push((path, img)),
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no decodable images in {}", dir.display())));
    }
    Ok(out)
}

fn check_crop(img: &Image, size: usize) -> Result<()> {
    if size == 0 || img.height() < size || img.width() < size {
        return Err(Error::Dimension(format!(
            "cannot crop {size}×{size} from a {}×{} image",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Square crop with its top-left corner at `(top, left)`.
pub fn crop(img: &Image, top: usize, left: usize, size: usize) -> Result<Image> {
    if top + size > img.height() || left + size > img.width() {
        return Err(Error::Dimension(format!(
            "crop {size}×{size} at ({top}, {left}) exceeds {}×{}",
            img.height(),
            img.width()
        )));
    }
    Ok(Image::from_fn(img.channels(), size, size, |c, y, x| img.get(c, top + y, left + x)))
}

/// Offsets drawn uniformly from `[0, dim − size]` (rows first).
pub fn random_crop<R: Rng>(img: &Image, size: usize, rng: &mut R) -> Result<Image> {
    check_crop(img, size)?;
    let top = rng.gen_range(0..=img.height() - size);
    let left = rng.gen_range(0..=img.width() - size);
    crop(img, top, left, size)
}

/// Centered crop; offsets are `floor((dim − size) / 2)`.
pub fn center_crop(img: &Image, size: usize) -> Result<Image> {
    check_crop(img, size)?;
    crop(img, (img.height() - size) / 2, (img.width() - size) / 2, size)
}
