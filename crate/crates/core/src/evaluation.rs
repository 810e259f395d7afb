//! Detection accuracy, PSNR statistics, threshold sweeps, an LSB-matching
//! baseline embedder and the with/without residual augmentation ablation.

use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inn::InnModel;
use crate::pipeline::{conceal, detect, residual_augment, Verdict, DEFAULT_THRESHOLD_DB};
use crate::tensor::Image;

/// How the residual-augmentation weight is chosen for evaluation stegos.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LamMode {
    #[default]
    Zero,
    /// A fresh `λ ~ U[0, 1)` per pair.
    Uniform,
    Fixed(f64),
}

impl LamMode {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            LamMode::Zero => 0.0,
            LamMode::Uniform => rng.gen(),
            LamMode::Fixed(x) => x,
        }
    }
}

impl fmt::Display for LamMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LamMode::Zero => f.write_str("zero"),
            LamMode::Uniform => f.write_str("uniform"),
            LamMode::Fixed(x) => write!(f, "fixed({x})"),
        }
    }
}

/// JSON has no infinities; non-finite values travel as the strings
/// `"inf"`, `"-inf"` and `"nan"`.
mod ext_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    pub(super) enum Repr {
        Num(f64),
        Text(String),
    }

    pub(super) fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    pub(super) fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("expected a number, got {other:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|x| to_repr(*x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }
}

/// Summary of a list of PSNR scores in dB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsnrStats {
    #[serde(with = "ext_f64")]
    pub mean: f64,
    /// Population standard deviation.
    #[serde(with = "ext_f64")]
    pub std: f64,
    #[serde(with = "ext_f64")]
    pub min: f64,
    #[serde(with = "ext_f64")]
    pub max: f64,
    /// The 10th, 20th, ..., 90th percentiles (linear interpolation).
    #[serde(with = "ext_f64::vec")]
    pub deciles: Vec<f64>,
}

impl PsnrStats {
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Data("no scores to summarize".into()));
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let std = if mean.is_finite() {
            (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt()
        } else {
            f64::NAN
        };
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let deciles = (1..10).map(|d| quantile(&sorted, d as f64 / 10.0)).collect();
        Ok(Self { mean, std, min: sorted[0], max: sorted[sorted.len() - 1], deciles })
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    if lo == hi || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    let t = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * t
}

/// Detection outcome over a labelled set. Stego is the positive class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub n_cover: usize,
    pub n_stego: usize,
    pub accuracy: f64,
    pub true_positive_rate: f64,
    pub true_negative_rate: f64,
    #[serde(with = "ext_f64")]
    pub threshold_db: f64,
    pub cover_psnr_stats: PsnrStats,
    pub stego_psnr_stats: PsnrStats,
    /// Per-image scores in input order.
    #[serde(with = "ext_f64::vec")]
    pub cover_psnrs: Vec<f64>,
    #[serde(with = "ext_f64::vec")]
    pub stego_psnrs: Vec<f64>,
}

impl EvalReport {
    /// Tally verdicts for precomputed scores.
    pub fn from_scores(cover_psnrs: Vec<f64>, stego_psnrs: Vec<f64>, threshold_db: f64) -> Result<Self> {
        if cover_psnrs.is_empty() || stego_psnrs.is_empty() {
            return Err(Error::Data("evaluation needs at least one cover and one stego".into()));
        }
        let tn = cover_psnrs.iter().filter(|&&p| Verdict::from_score(p, threshold_db) == Verdict::Cover).count();
        let tp = stego_psnrs.iter().filter(|&&p| Verdict::from_score(p, threshold_db) == Verdict::Stego).count();
        let (n_cover, n_stego) = (cover_psnrs.len(), stego_psnrs.len());
        Ok(Self {
            n_cover,
            n_stego,
            accuracy: (tp + tn) as f64 / (n_cover + n_stego) as f64,
            true_positive_rate: tp as f64 / n_stego as f64,
            true_negative_rate: tn as f64 / n_cover as f64,
            threshold_db,
            cover_psnr_stats: PsnrStats::from_scores(&cover_psnrs)?,
            stego_psnr_stats: PsnrStats::from_scores(&stego_psnrs)?,
            cover_psnrs,
            stego_psnrs,
        })
    }

    pub fn balanced_accuracy(&self) -> f64 {
        (self.true_positive_rate + self.true_negative_rate) / 2.0
    }

    /// Mean cover score minus mean stego score.
    pub fn psnr_gap(&self) -> f64 {
        self.cover_psnr_stats.mean - self.stego_psnr_stats.mean
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// Conceal every `(secret, cover)` pair, blend per `lam_mode`, clamp and
/// quantize to 8-bit levels.
pub fn generate_eval_stegos<R: Rng>(
    model: &InnModel,
    covers: &[Image],
    secrets: &[Image],
    lam_mode: LamMode,
    rng: &mut R,
) -> Result<Vec<Image>> {
    if covers.len() != secrets.len() {
        return Err(Error::Dimension(format!(
            "{} covers but {} secrets",
            covers.len(),
            secrets.len()
        )));
    }
    covers
        .iter()
        .zip(secrets)
        .map(|(cover, secret)| {
            let lam = lam_mode.draw(rng);
            let init = conceal(model, secret, cover)?;
            Ok(residual_augment(cover, &init, lam)?.clamped().quantized())
        })
        .collect()
}

/// Detection scores for each image in order.
pub fn detection_scores<R: Rng>(
    model: &InnModel,
    images: &[Image],
    threshold_db: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    images.iter().map(|img| Ok(detect(model, img, threshold_db, rng)?.psnr_db)).collect()
}

/// Run detection on every cover, then every stego, and tally the verdicts.
pub fn evaluate_detection<R: Rng>(
    model: &InnModel,
    covers: &[Image],
    stegos: &[Image],
    threshold_db: f64,
    rng: &mut R,
) -> Result<EvalReport> {
    if covers.is_empty() || stegos.is_empty() {
        return Err(Error::Data("evaluation needs at least one cover and one stego".into()));
    }
    let cover_psnrs = detection_scores(model, covers, threshold_db, rng)?;
    let stego_psnrs = detection_scores(model, stegos, threshold_db, rng)?;
    EvalReport::from_scores(cover_psnrs, stego_psnrs, threshold_db)
}

/// `(image index, PSNR(image, reveal(image)))` for every image.
pub fn psnr_histogram<R: Rng>(model: &InnModel, images: &[Image], rng: &mut R) -> Result<Vec<(usize, f64)>> {
    if images.is_empty() {
        return Err(Error::Data("no images for the histogram".into()));
    }
    let scores = detection_scores(model, images, DEFAULT_THRESHOLD_DB, rng)?;
    Ok(scores.into_iter().enumerate().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub image_id: String,
    pub label: String,
    pub psnr_db: f64,
}

pub fn write_histogram_csv(path: &Path, rows: &[HistogramRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_histogram_csv(path: &Path) -> Result<Vec<HistogramRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold_db: f64,
    pub balanced_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub threshold_db: f64,
    pub balanced_accuracy: f64,
    /// Every evaluated candidate in increasing threshold order.
    pub candidates: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for p in &self.candidates {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Balanced accuracy of the `score ≤ threshold → stego` rule.
pub fn balanced_accuracy(cover_psnrs: &[f64], stego_psnrs: &[f64], threshold_db: f64) -> f64 {
    let tnr = cover_psnrs.iter().filter(|&&p| p > threshold_db).count() as f64 / cover_psnrs.len() as f64;
    let tpr = stego_psnrs.iter().filter(|&&p| p <= threshold_db).count() as f64 / stego_psnrs.len() as f64;
    (tnr + tpr) / 2.0
}

/// Search the threshold maximizing balanced accuracy.
///
/// Between consecutive distinct scores the verdicts do not change, so each
/// gap is represented by its midpoint; the two unbounded gaps are
/// represented by the extreme score ∓1 dB. Among equally good gaps the
/// widest wins (unbounded gaps count as infinitely wide), then the lowest.
/// The default threshold is also listed when the scores straddle it.
pub fn threshold_sweep(cover_psnrs: &[f64], stego_psnrs: &[f64]) -> Result<SweepResult> {
    if cover_psnrs.is_empty() || stego_psnrs.is_empty() {
        return Err(Error::Data("threshold sweep needs cover and stego scores".into()));
    }
    if cover_psnrs.iter().chain(stego_psnrs).any(|p| p.is_nan()) {
        return Err(Error::NonFinite("NaN detection score".into()));
    }
    let mut scores: Vec<f64> = cover_psnrs.iter().chain(stego_psnrs).copied().collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();

    // (threshold, width) per gap.
    let mut gaps = Vec::with_capacity(scores.len() + 1);
    let (lo, hi) = (scores[0], scores[scores.len() - 1]);
    if lo.is_finite() {
        gaps.push((lo - 1.0, f64::INFINITY));
    }
    for w in scores.windows(2) {
        let (a, b) = (w[0], w[1]);
        let t = match (a.is_finite(), b.is_finite()) {
            (true, true) => a + (b - a) / 2.0,
            (true, false) => a + 1.0,
            (false, true) => b - 1.0,
            (false, false) => continue,
        };
        gaps.push((t, b - a));
    }
    if hi.is_finite() {
        gaps.push((hi + 1.0, f64::INFINITY));
    }

    let mut best: Option<(f64, f64, f64)> = None;
    for &(t, width) in &gaps {
        let acc = balanced_accuracy(cover_psnrs, stego_psnrs, t);
        let better = match best {
            None => true,
            Some((_, b_acc, b_width)) => acc > b_acc || (acc == b_acc && width > b_width),
        };
        if better {
            best = Some((t, acc, width));
        }
    }
    let (threshold_db, best_acc, _) = best.ok_or_else(|| Error::Data("no finite threshold candidate".into()))?;

    let mut candidates: Vec<SweepPoint> = gaps
        .iter()
        .map(|&(t, _)| SweepPoint { threshold_db: t, balanced_accuracy: balanced_accuracy(cover_psnrs, stego_psnrs, t) })
        .collect();
    let d = DEFAULT_THRESHOLD_DB;
    if lo < d && d < hi && !candidates.iter().any(|p| p.threshold_db == d) {
        candidates.push(SweepPoint { threshold_db: d, balanced_accuracy: balanced_accuracy(cover_psnrs, stego_psnrs, d) });
        candidates.sort_by(|a, b| a.threshold_db.total_cmp(&b.threshold_db));
    }
    Ok(SweepResult { threshold_db, balanced_accuracy: best_acc, candidates })
}

fn to_levels(cover: &Image) -> Result<Vec<u8>> {
    cover
        .data()
        .iter()
        .map(|&v| {
            if (0.0..=1.0).contains(&v) {
                Ok((v * 255.0).round() as u8)
            } else {
                Err(Error::Domain(format!("pixel value {v} is outside [0, 1]")))
            }
        })
        .collect()
}

fn from_levels(like: &Image, levels: &[u8]) -> Image {
    let data = levels.iter().map(|&l| l as f32 / 255.0).collect();
    Image::new(like.channels(), like.height(), like.width(), data).expect("same length")
}

/// LSB matching at explicit sample positions. Wherever the level's LSB
/// differs from the payload bit it moves by ±1 with a random sign; at 0 and
/// 255 the only in-range direction is taken.
pub fn lsb_embed_payload<R: Rng>(cover: &Image, positions: &[usize], bits: &[bool], rng: &mut R) -> Result<Image> {
    if positions.len() != bits.len() {
        return Err(Error::Dimension(format!("{} positions but {} bits", positions.len(), bits.len())));
    }
    let mut levels = to_levels(cover)?;
    for (&pos, &bit) in positions.iter().zip(bits) {
        let v = *levels
            .get(pos)
            .ok_or_else(|| Error::Dimension(format!("position {pos} out of range")))?;
        if (v & 1 == 1) != bit {
            let up = match v {
                0 => true,
                255 => false,
                _ => rng.gen(),
            };
            levels[pos] = if up { v + 1 } else { v - 1 };
        }
    }
    Ok(from_levels(cover, &levels))
}

/// LSB matching over a random `payload_bpp` fraction of the samples
/// (`ceil(payload_bpp · n)` positions, each channel value counted separately)
/// with random payload bits.
pub fn lsb_embed<R: Rng>(cover: &Image, rng: &mut R, payload_bpp: f64) -> Result<Image> {
    if !(payload_bpp > 0.0 && payload_bpp <= 1.0) {
        return Err(Error::Domain(format!("payload must lie in (0, 1] bpp, got {payload_bpp}")));
    }
    let n = cover.data().len();
    let k = ((payload_bpp * n as f64).ceil() as usize).min(n);
    let positions = index::sample(rng, n, k).into_vec();
    let bits: Vec<bool> = (0..k).map(|_| rng.gen()).collect();
    lsb_embed_payload(cover, &positions, &bits, rng)
}

/// One detector on one stego source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub model: String,
    pub source: String,
    pub report: EvalReport,
    /// Best balanced accuracy over a threshold sweep of the same scores.
    pub swept_accuracy: f64,
    pub swept_threshold_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub entries: Vec<AblationEntry>,
}

impl AblationReport {
    pub fn get(&self, model: &str, source: &str) -> Option<&AblationEntry> {
        self.entries.iter().find(|e| e.model == model && e.source == source)
    }

    /// Side-by-side table, one row per stego source.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>14} {:>14} {:>14} {:>14}\n",
            "source", "with_ra acc", "w/o_ra acc", "with_ra swept", "w/o_ra swept"
        ));
        let mut sources: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !sources.contains(&e.source.as_str()) {
                sources.push(&e.source);
            }
        }
        for source in sources {
            let cell = |model: &str, swept: bool| {
                self.get(model, source)
                    .map(|e| format!("{:.4}", if swept { e.swept_accuracy } else { e.report.accuracy }))
                    .unwrap_or_else(|| "-".into())
            };
            out.push_str(&format!(
                "{:<12} {:>14} {:>14} {:>14} {:>14}\n",
                source,
                cell(ABLATION_WITH_RA, false),
                cell(ABLATION_WITHOUT_RA, false),
                cell(ABLATION_WITH_RA, true),
                cell(ABLATION_WITHOUT_RA, true)
            ));
        }
        out
    }
}

pub const ABLATION_WITH_RA: &str = "with_ra";
pub const ABLATION_WITHOUT_RA: &str = "without_ra";
/// Stegos from the two models under test, each blended with `λ ~ U[0, 1)`.
pub const SOURCE_INN_UNIFORM: &str = "inn_uniform";
pub const SOURCE_LSB: &str = "lsb";
/// Payload of the LSB-matching stegos in the ablation.
pub const ABLATION_LSB_BPP: f64 = 1.0;

/// Evaluate both detectors on the same stego sets.
///
/// The INN set alternates between stegos made by the two models (even pair
/// indices by the first, odd by the second), each blended with its own
/// uniform λ; the LSB set embeds into every cover. Covers are quantized to
/// 8-bit levels like the stegos. Both detectors see the same covers and
/// stegos and draw their reveal noise from the same stream.
pub fn run_ablation<R: Rng>(
    model_with_ra: &InnModel,
    model_without_ra: &InnModel,
    covers: &[Image],
    secrets: &[Image],
    threshold_db: f64,
    rng: &mut R,
) -> Result<AblationReport> {
    if model_with_ra.config != model_without_ra.config {
        return Err(Error::Config("ablation models have different architectures".into()));
    }
    if covers.is_empty() || covers.len() != secrets.len() {
        return Err(Error::Data(format!(
            "ablation needs matching nonempty lists, got {} covers and {} secrets",
            covers.len(),
            secrets.len()
        )));
    }
    let mut inn_stegos = Vec::with_capacity(covers.len());
    for (i, (cover, secret)) in covers.iter().zip(secrets).enumerate() {
        let maker = if i % 2 == 0 { model_with_ra } else { model_without_ra };
        let mut s = generate_eval_stegos(maker, std::slice::from_ref(cover), std::slice::from_ref(secret), LamMode::Uniform, rng)?;
        inn_stegos.push(s.remove(0));
    }
    // Covers travel as 8-bit images too.
    let covers: Vec<Image> = covers.iter().map(|c| c.clamped().quantized()).collect();
    let lsb_stegos = covers
        .iter()
        .map(|c| lsb_embed(c, rng, ABLATION_LSB_BPP))
        .collect::<Result<Vec<_>>>()?;
    let detect_seed: u64 = rng.gen();

    let mut entries = Vec::new();
    for (name, model) in [(ABLATION_WITH_RA, model_with_ra), (ABLATION_WITHOUT_RA, model_without_ra)] {
        let mut det_rng = ChaCha8Rng::seed_from_u64(detect_seed);
        let cover_psnrs = detection_scores(model, &covers, threshold_db, &mut det_rng)?;
        for (source, stegos) in [(SOURCE_INN_UNIFORM, &inn_stegos), (SOURCE_LSB, &lsb_stegos)] {
            let stego_psnrs = detection_scores(model, stegos, threshold_db, &mut det_rng)?;
            let sweep = threshold_sweep(&cover_psnrs, &stego_psnrs)?;
            entries.push(AblationEntry {
                model: name.into(),
                source: source.into(),
                report: EvalReport::from_scores(cover_psnrs.clone(), stego_psnrs, threshold_db)?,
                swept_accuracy: sweep.balanced_accuracy,
                swept_threshold_db: sweep.threshold_db,
            });
        }
    }
    Ok(AblationReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inn::{init_model, ModelConfig};
    use crate::pipeline::psnr;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_model(seed: u64) -> InnModel {
        let cfg = ModelConfig { num_blocks: 2, growth: 4, num_subnet_layers: 2, ..ModelConfig::default() };
        init_model(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_images(n: usize, size: usize, seed: u64) -> Vec<Image> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Image::from_fn(3, size, size, |_, _, _| rng.gen::<f32>()).quantized()).collect()
    }

    #[test]
    fn report_arithmetic() {
        let covers = vec![30.0; 10];
        let mut stegos = vec![10.0; 10];
        stegos[3] = 26.0;
        let r = EvalReport::from_scores(covers, stegos, 25.0).unwrap();
        assert_eq!((r.n_cover, r.n_stego), (10, 10));
        assert_eq!(r.accuracy, 0.95);
        assert_eq!(r.true_negative_rate, 1.0);
        assert_eq!(r.true_positive_rate, 0.9);
        assert_eq!(r.cover_psnr_stats.std, 0.0);
        assert_eq!(r.stego_psnr_stats.max, 26.0);
        assert!(EvalReport::from_scores(vec![], vec![1.0], 25.0).is_err());
    }

    #[test]
    fn stats_deciles() {
        let scores: Vec<f64> = (0..=10).rev().map(f64::from).collect();
        let s = PsnrStats::from_scores(&scores).unwrap();
        assert_eq!(s.deciles, (1..10).map(f64::from).collect::<Vec<_>>());
        assert_eq!((s.min, s.max, s.mean), (0.0, 10.0, 5.0));
        assert!((s.std - 10f64.sqrt()).abs() < 1e-12);
        assert!(PsnrStats::from_scores(&[]).is_err());
    }

    #[test]
    fn report_json_keeps_infinities() {
        let r = EvalReport::from_scores(vec![f64::INFINITY, 31.5], vec![12.25], f64::NEG_INFINITY).unwrap();
        let text = r.to_json().unwrap();
        assert!(text.contains("\"-inf\""));
        let back = EvalReport::from_json(&text).unwrap();
        assert_eq!(back.cover_psnrs, r.cover_psnrs);
        assert_eq!(back.threshold_db, f64::NEG_INFINITY);
        assert!(back.cover_psnr_stats.std.is_nan());
        assert!(EvalReport::from_json(&text.replace("\"n_cover\"", "\"n_covers\"")).is_err());
    }

    #[test]
    fn minus_infinity_threshold_calls_everything_cover() {
        let model = small_model(0);
        let imgs = random_images(4, 8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = evaluate_detection(&model, &imgs[..2], &imgs[2..], f64::NEG_INFINITY, &mut rng).unwrap();
        assert_eq!(r.true_positive_rate, 0.0);
        assert_eq!(r.true_negative_rate, 1.0);
        assert_eq!(r.accuracy, 0.5);
        assert!(evaluate_detection(&model, &[], &imgs, 25.0, &mut rng).is_err());
    }

    #[test]
    fn detection_report_matches_recount() {
        let model = small_model(3);
        let imgs = random_images(6, 8, 4);
        let thr = 7.0;
        let r = evaluate_detection(&model, &imgs[..3], &imgs[3..], thr, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut correct = 0;
        for (i, img) in imgs.iter().enumerate() {
            let rec = crate::pipeline::reveal(&model, img, &mut rng).unwrap();
            let p = psnr(img, &rec).unwrap();
            let said_stego = p <= thr;
            correct += (said_stego == (i >= 3)) as usize;
        }
        assert_eq!(r.accuracy, correct as f64 / 6.0);
    }

    #[test]
    fn sweep_separable() {
        let s = threshold_sweep(&[30.0, 32.0, 34.0], &[10.0, 12.0, 14.0]).unwrap();
        assert_eq!(s.balanced_accuracy, 1.0);
        assert_eq!(s.threshold_db, 22.0);
        assert!(s.candidates.iter().any(|p| p.threshold_db == 25.0));
    }

    #[test]
    fn sweep_indistinguishable_and_inverted() {
        let v = [11.0, 17.0, 23.0, 29.0];
        assert_eq!(threshold_sweep(&v, &v).unwrap().balanced_accuracy, 0.5);
        let inv = threshold_sweep(&[20.0], &[30.0]).unwrap();
        assert_eq!(inv.balanced_accuracy, 0.5);
        // The inner gap scores 0; only the extremes reach 0.5.
        let inner = inv.candidates.iter().find(|p| p.threshold_db == 25.0).unwrap();
        assert_eq!(inner.balanced_accuracy, 0.0);
        assert!(threshold_sweep(&[], &v).is_err());
    }

    #[test]
    fn sweep_prefers_the_widest_gap() {
        // Thresholds in [12, 13) and [14, 30) both score 0.75.
        let s = threshold_sweep(&[13.0, 30.0], &[12.0, 14.0]).unwrap();
        assert_eq!(s.balanced_accuracy, 0.75);
        assert_eq!(s.threshold_db, 22.0);
    }

    #[test]
    fn sweep_handles_infinite_cover_scores() {
        let s = threshold_sweep(&[f64::INFINITY, 40.0], &[10.0]).unwrap();
        assert_eq!(s.balanced_accuracy, 1.0);
        assert!(s.threshold_db.is_finite());
        assert!(s.candidates.iter().all(|p| p.threshold_db.is_finite()));
    }

    #[test]
    fn lsb_matching_bits_leave_image_unchanged() {
        let cover = random_images(1, 8, 6).remove(0);
        let levels = to_levels(&cover).unwrap();
        let positions: Vec<usize> = (0..levels.len()).collect();
        let bits: Vec<bool> = levels.iter().map(|l| l & 1 == 1).collect();
        let out = lsb_embed_payload(&cover, &positions, &bits, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out, cover);
        let flipped: Vec<bool> = bits.iter().map(|b| !b).collect();
        let out = lsb_embed_payload(&cover, &positions, &flipped, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (a, b) in out.data().iter().zip(cover.data()) {
            assert_eq!(((a - b) * 255.0).round().abs(), 1.0);
        }
    }

    #[test]
    fn lsb_boundaries_move_inward() {
        let cover = Image::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let out = lsb_embed_payload(&cover, &[0, 1], &[true, false], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.data(), &[1.0 / 255.0, 254.0 / 255.0]);
    }

    #[test]
    fn lsb_psnr_at_one_bpp() {
        // Half the samples mismatch and move by one level: MSE ≈ 0.5 levels².
        let cover = Image::from_fn(3, 128, 128, |c, y, x| ((c * 31 + y * 7 + x * 3) % 250 + 3) as f32 / 255.0);
        let out = lsb_embed(&cover, &mut ChaCha8Rng::seed_from_u64(9), 1.0).unwrap();
        let expected = 10.0 * (255f64 * 255.0 / 0.5).log10();
        assert!((psnr(&out, &cover).unwrap() - expected).abs() < 0.05);
        assert!((expected - 51.14).abs() < 0.01);
    }

    #[test]
    fn lsb_rejects_bad_payload_and_range() {
        let cover = Image::filled(3, 4, 4, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for bpp in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(lsb_embed(&cover, &mut rng, bpp).is_err());
        }
        assert!(lsb_embed(&Image::filled(3, 4, 4, 1.5), &mut rng, 0.5).is_err());
    }

    #[test]
    fn eval_stegos_lam_modes() {
        let model = small_model(7);
        let covers = random_images(3, 8, 8);
        let secrets = random_images(3, 8, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let full = generate_eval_stegos(&model, &covers, &secrets, LamMode::Fixed(1.0), &mut rng).unwrap();
        assert_eq!(full, covers);
        let zero = generate_eval_stegos(&model, &covers, &secrets, LamMode::Zero, &mut rng).unwrap();
        assert_eq!(zero.len(), 3);
        for ((z, c), s) in zero.iter().zip(&covers).zip(&secrets) {
            assert_eq!(*z, conceal(&model, s, c).unwrap().clamped().quantized());
        }
        let uni = generate_eval_stegos(&model, &covers, &secrets, LamMode::Uniform, &mut rng).unwrap();
        assert_eq!(uni.len(), 3);
        assert!(generate_eval_stegos(&model, &covers, &secrets[..2], LamMode::Zero, &mut rng).is_err());
        assert!(generate_eval_stegos(&model, &covers, &secrets, LamMode::Fixed(2.0), &mut rng).is_err());
    }

    #[test]
    fn lam_mode_json() {
        assert_eq!(serde_json::to_string(&LamMode::Zero).unwrap(), "\"zero\"");
        assert_eq!(serde_json::from_str::<LamMode>("{\"fixed\":0.25}").unwrap(), LamMode::Fixed(0.25));
        assert_eq!(serde_json::from_str::<LamMode>("\"uniform\"").unwrap(), LamMode::Uniform);
    }

    #[test]
    fn histogram_rows_and_determinism() {
        let model = small_model(1);
        let img = random_images(1, 8, 2).remove(0);
        let imgs = vec![img.clone(), img.clone(), img];
        let a = psnr_histogram(&model, &imgs, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = psnr_histogram(&model, &imgs, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
        assert_ne!(a[0].1, a[1].1);
        assert!(psnr_histogram(&model, &[], &mut ChaCha8Rng::seed_from_u64(3)).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let rows: Vec<HistogramRow> = a
            .iter()
            .map(|&(i, p)| HistogramRow { image_id: i.to_string(), label: "cover".into(), psnr_db: p })
            .collect();
        write_histogram_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("image_id,label,psnr_db\n"));
        assert_eq!(read_histogram_csv(&path).unwrap(), rows);
    }

    #[test]
    fn ablation_with_identical_models() {
        let model = small_model(4);
        let covers = random_images(4, 8, 10);
        let secrets = random_images(4, 8, 11);
        let r = run_ablation(&model, &model, &covers, &secrets, 10.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(r.entries.len(), 4);
        for source in [SOURCE_INN_UNIFORM, SOURCE_LSB] {
            let a = r.get(ABLATION_WITH_RA, source).unwrap();
            let b = r.get(ABLATION_WITHOUT_RA, source).unwrap();
            assert_eq!(a.report, b.report);
            assert_eq!(a.swept_accuracy, b.swept_accuracy);
        }
        let table = r.table();
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains(SOURCE_LSB) && table.contains(SOURCE_INN_UNIFORM));
        let other = init_model(&ModelConfig::toy(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(run_ablation(&model, &other, &covers, &secrets, 10.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    fn score() -> impl Strategy<Value = f64> {
        // Coarse grid so ties between scores actually happen.
        (0i32..40).prop_map(|v| f64::from(v) * 0.5 + 5.0)
    }

    proptest! {
        #[test]
        fn sweep_beats_every_threshold(
            covers in prop::collection::vec(score(), 1..12),
            stegos in prop::collection::vec(score(), 1..12),
            probe in -10.0f64..40.0,
        ) {
            let s = threshold_sweep(&covers, &stegos).unwrap();
            prop_assert_eq!(s.balanced_accuracy, balanced_accuracy(&covers, &stegos, s.threshold_db));
            for p in &s.candidates {
                prop_assert!(s.balanced_accuracy >= p.balanced_accuracy);
            }
            prop_assert!(s.balanced_accuracy >= balanced_accuracy(&covers, &stegos, probe));
        }

        #[test]
        fn report_matches_tally(
            covers in prop::collection::vec(score(), 1..10),
            stegos in prop::collection::vec(score(), 1..10),
            thr in 0.0f64..30.0,
        ) {
            let r = EvalReport::from_scores(covers.clone(), stegos.clone(), thr).unwrap();
            let mut right = 0;
            for &c in &covers { if !(c <= thr) { right += 1; } }
            for &s in &stegos { if s <= thr { right += 1; } }
            prop_assert_eq!(r.accuracy, right as f64 / (covers.len() + stegos.len()) as f64);
            prop_assert!((0.0..=1.0).contains(&r.true_positive_rate));
            prop_assert!((0.0..=1.0).contains(&r.true_negative_rate));
            let back = EvalReport::from_json(&r.to_json().unwrap()).unwrap();
            prop_assert_eq!(back, r);
        }

        #[test]
        fn lsb_changes_are_bounded(seed in any::<u64>(), bpp in 0.01f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cover = Image::from_fn(3, 6, 6, |_, _, _| rng.gen_range(0u8..=255) as f32 / 255.0);
            let out = lsb_embed(&cover, &mut rng, bpp).unwrap();
            let a = to_levels(&cover).unwrap();
            let b = to_levels(&out).unwrap();
            let changed = a.iter().zip(&b).filter(|(x, y)| x != y).count();
            prop_assert!(a.iter().zip(&b).all(|(x, y)| (*x as i16 - *y as i16).abs() <= 1));
            prop_assert!(changed <= (bpp * a.len() as f64).ceil() as usize);
        }
    }
}
