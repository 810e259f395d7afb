//! One function per subcommand. Each returns a library error; `main` maps
//! it to an exit code.

use std::fs;
use std::path::{Path, PathBuf};

use innsteg::data::{center_crop, list_images, load_images_with_paths, read_image, write_png};
use innsteg::evaluation::{
    evaluate_detection, generate_eval_stegos, lsb_embed, psnr_histogram, threshold_sweep, write_histogram_csv,
    EvalReport, HistogramRow, PsnrStats,
};
use innsteg::pipeline::{conceal, detect, residual_augment, reveal};
use innsteg::synth::synthetic_dataset;
use innsteg::training::{load_checkpoint, train, TrainOutput};
use innsteg::{Error, Image, InnModel, Result};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;

fn load_model(cfg: &RunConfig) -> Result<InnModel> {
    Ok(load_checkpoint::<f32>(cfg.require_checkpoint()?)?.model)
}

fn rng(cfg: &RunConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let dataset = cfg
        .dataset_dir
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset given (--dataset or \"dataset_dir\")".into()))?;
    let out = cfg.require_output_dir()?;
    cfg.echo(out)?;
    let output = TrainOutput { dir: out.to_path_buf() };
    let ckpt = train(dataset, &cfg.train, Some(&output))?;
    #[derive(Serialize)]
    struct Done<'a> {
        epochs: usize,
        steps: usize,
        checkpoint: &'a Path,
        loss_log: &'a Path,
    }
    print_json(&Done { epochs: ckpt.epoch, steps: ckpt.step, checkpoint: &output.latest(), loss_log: &output.loss_log() })
}

pub fn conceal_cmd(cfg: &RunConfig, cover: &Path, secret: &Path, output: &Path) -> Result<()> {
    let lam = cfg.fixed_lam()?;
    let model = load_model(cfg)?;
    let cover = read_image(cover)?;
    let secret = read_image(secret)?;
    let stego = residual_augment(&cover, &conceal(&model, &secret, &cover)?, lam)?;
    write_png(&stego, output)
}

pub fn reveal_cmd(cfg: &RunConfig, input: &Path, output: &Path) -> Result<()> {
    let model = load_model(cfg)?;
    let image = read_image(input)?;
    write_png(&reveal(&model, &image, &mut rng(cfg))?, output)
}

#[derive(Serialize)]
struct DetectLine {
    path: String,
    #[serde(serialize_with = "finite_or_string")]
    psnr_db: f64,
    verdict: String,
}

fn finite_or_string<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&v.to_string())
    }
}

/// One `path<TAB>psnr_db<TAB>verdict` line per image, or a JSON array.
pub fn detect_cmd(cfg: &RunConfig, target: &Path, json: bool) -> Result<()> {
    let model = load_model(cfg)?;
    let paths: Vec<PathBuf> = if target.is_dir() {
        list_images(target)?
    } else if target.exists() {
        vec![target.to_path_buf()]
    } else {
        return Err(Error::Data(format!("{} does not exist", target.display())));
    };
    if paths.is_empty() {
        return Err(Error::Data(format!("no images in {}", target.display())));
    }
    let mut rng = rng(cfg);
    let mut lines = Vec::with_capacity(paths.len());
    for path in paths {
        let image = read_image(&path)?;
        let res = detect(&model, &image, cfg.threshold_db, &mut rng)?;
        let line = DetectLine { path: path.display().to_string(), psnr_db: res.psnr_db, verdict: res.verdict.to_string() };
        if !json {
            println!("{}\t{}\t{}", line.path, line.psnr_db, line.verdict);
        }
        lines.push(line);
    }
    if json {
        print_json(&lines)?;
    }
    Ok(())
}

fn load_dir(dir: &Path, crop: Option<usize>) -> Result<Vec<(PathBuf, Image)>> {
    let mut images = load_images_with_paths(dir)?;
    if let Some(size) = crop {
        for (_, img) in images.iter_mut() {
            *img = center_crop(img, size)?;
        }
    }
    Ok(images)
}

#[derive(Serialize)]
struct EvalSummary {
    n_cover: usize,
    n_stego: usize,
    accuracy: f64,
    true_positive_rate: f64,
    true_negative_rate: f64,
    threshold_db: f64,
    psnr_gap_db: f64,
    swept_threshold_db: f64,
    swept_balanced_accuracy: f64,
}

/// Conceal cover/secret pairs (matched by sorted file name order), detect
/// covers and stegos, write `report.json`, `histogram.csv` and `sweep.csv`.
pub fn evaluate_cmd(
    cfg: &RunConfig,
    cover_dir: &Path,
    secret_dir: &Path,
    crop: Option<usize>,
    lsb_bpp: Option<f64>,
) -> Result<()> {
    let out = cfg.require_output_dir()?;
    let model = load_model(cfg)?;
    let covers = load_dir(cover_dir, crop)?;
    let secrets = load_dir(secret_dir, crop)?;
    let n = covers.len().min(secrets.len());
    if covers.len() != secrets.len() {
        warn!("{} covers and {} secrets; evaluating the first {n} pairs", covers.len(), secrets.len());
    }
    let (cover_paths, cover_imgs): (Vec<_>, Vec<_>) = covers.into_iter().take(n).unzip();
    let secret_imgs: Vec<Image> = secrets.into_iter().take(n).map(|(_, img)| img).collect();
    cfg.echo(out)?;

    let mut rng = rng(cfg);
    let stegos = match lsb_bpp {
        Some(bpp) => cover_imgs.iter().map(|c| lsb_embed(c, &mut rng, bpp)).collect::<Result<Vec<_>>>()?,
        None => generate_eval_stegos(&model, &cover_imgs, &secret_imgs, cfg.lam_mode, &mut rng)?,
    };
    let report = evaluate_detection(&model, &cover_imgs, &stegos, cfg.threshold_db, &mut rng)?;
    report.save(&out.join("report.json"))?;

    let ids: Vec<String> = cover_paths.iter().map(|p| file_name(p)).collect();
    let rows: Vec<HistogramRow> = ids
        .iter()
        .zip(&report.cover_psnrs)
        .map(|(id, &p)| HistogramRow { image_id: id.clone(), label: "cover".into(), psnr_db: p })
        .chain(
            ids.iter()
                .zip(&report.stego_psnrs)
                .map(|(id, &p)| HistogramRow { image_id: id.clone(), label: "stego".into(), psnr_db: p }),
        )
        .collect();
    write_histogram_csv(&out.join("histogram.csv"), &rows)?;
    let sweep = threshold_sweep(&report.cover_psnrs, &report.stego_psnrs)?;
    sweep.write_csv(&out.join("sweep.csv"))?;
    info!("wrote report, histogram and sweep into {}", out.display());

    print_json(&summary(&report, sweep.threshold_db, sweep.balanced_accuracy))
}

fn summary(r: &EvalReport, swept_threshold_db: f64, swept_balanced_accuracy: f64) -> EvalSummary {
    EvalSummary {
        n_cover: r.n_cover,
        n_stego: r.n_stego,
        accuracy: r.accuracy,
        true_positive_rate: r.true_positive_rate,
        true_negative_rate: r.true_negative_rate,
        threshold_db: r.threshold_db,
        psnr_gap_db: r.psnr_gap(),
        swept_threshold_db,
        swept_balanced_accuracy,
    }
}

/// Per-image PSNR between input and reveal output into `histogram.csv`.
pub fn histogram_cmd(cfg: &RunConfig, image_dir: &Path, label: &str, crop: Option<usize>) -> Result<()> {
    let out = cfg.require_output_dir()?;
    let model = load_model(cfg)?;
    let (paths, images): (Vec<_>, Vec<_>) = load_dir(image_dir, crop)?.into_iter().unzip();
    cfg.echo(out)?;
    let scores = psnr_histogram(&model, &images, &mut rng(cfg))?;
    let rows: Vec<HistogramRow> = scores
        .iter()
        .map(|&(i, p)| HistogramRow { image_id: file_name(&paths[i]), label: label.into(), psnr_db: p })
        .collect();
    write_histogram_csv(&out.join("histogram.csv"), &rows)?;
    let values: Vec<f64> = scores.iter().map(|&(_, p)| p).collect();
    let stats = PsnrStats::from_scores(&values)?;
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

/// Write `count` procedural `size×size` PNGs into the output directory.
pub fn synth_cmd(cfg: &RunConfig, count: usize, size: usize) -> Result<()> {
    let out = cfg.require_output_dir()?;
    if count == 0 || size == 0 {
        return Err(Error::Config("count and size must be positive".into()));
    }
    fs::create_dir_all(out)?;
    for (i, img) in synthetic_dataset(count, size, &mut rng(cfg)).iter().enumerate() {
        write_png(img, &out.join(format!("img_{i:05}.png")))?;
    }
    Ok(())
}
