//! Checkpoint archive.
//!
//! Layout:
//!
//! ```text
//! b"ZSIIS1\n"
//! u64 little-endian manifest length
//! UTF-8 JSON manifest { entries: [{name, dtype, shape, offset, nbytes}], config, epoch, ... }
//! raw little-endian blobs, offsets relative to the end of the manifest
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, TrainConfig};
use crate::error::{Error, Result};
use crate::inn::{InnModel, ModelConfig};
use crate::tensor::Real;

pub const MAGIC: &[u8; 7] = b"ZSIIS1\n";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex-encoded 32-byte seed.
    pub seed: String,
    pub stream: u64,
    /// Decimal string; the position does not fit a JSON number.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bytes = hex::decode(&self.seed).map_err(|e| Error::Format(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Format("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| Error::Format(format!("rng word_pos: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T = f32> {
    pub model: InnModel<T>,
    pub optimizer: Option<Adam<T>>,
    pub config: TrainConfig,
    pub epoch: usize,
    pub step: usize,
    pub rng: Option<RngState>,
}

impl<T: Real> Checkpoint<T> {
    /// Bare model with no training state.
    pub fn from_model(model: InnModel<T>, config: TrainConfig) -> Self {
        Self { model, optimizer: None, config, epoch: 0, step: 0, rng: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerMeta {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    entries: Vec<Entry>,
    config: TrainConfig,
    epoch: usize,
    step: usize,
    optimizer: Option<OptimizerMeta>,
    rng: Option<RngState>,
}

fn param_shapes(cfg: &ModelConfig) -> Vec<Vec<usize>> {
    let zeros = InnModel::<f32>::zeros(cfg);
    let mut shapes = Vec::new();
    for block in &zeros.blocks {
        for net in block.subnets() {
            for layer in &net.layers {
                shapes.push(vec![layer.out_channels, layer.in_channels, layer.kernel, layer.kernel]);
                shapes.push(vec![layer.out_channels]);
            }
        }
    }
    shapes
}

fn groups<T: Real>(ckpt: &Checkpoint<T>) -> Vec<(&'static str, &InnModel<T>)> {
    let mut out = vec![("model", &ckpt.model)];
    if let Some(opt) = &ckpt.optimizer {
        out.push(("adam.m", &opt.m));
        out.push(("adam.v", &opt.v));
    }
    out
}

/// Serialize to the archive byte layout.
pub fn encode_checkpoint<T: Real>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>> {
    if ckpt.model.config != ckpt.config.model {
        return Err(Error::Format("model architecture differs from the recorded config".into()));
    }
    let shapes = param_shapes(&ckpt.model.config);
    let width = std::mem::size_of::<T>() as u64;
    let mut entries = Vec::new();
    let mut blob = Vec::new();
    for (prefix, model) in groups(ckpt) {
        for ((name, values), shape) in model.named_params().into_iter().zip(&shapes) {
            let nbytes = values.len() as u64 * width;
            entries.push(Entry {
                name: format!("{prefix}.{name}"),
                dtype: T::DTYPE.to_string(),
                shape: shape.clone(),
                offset: blob.len() as u64,
                nbytes,
            });
            blob.extend(T::to_le_bytes_vec(values));
        }
    }
    let manifest = Manifest {
        entries,
        config: ckpt.config.clone(),
        epoch: ckpt.epoch,
        step: ckpt.step,
        optimizer: ckpt.optimizer.as_ref().map(|o| OptimizerMeta {
            learning_rate: o.learning_rate,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            step: o.step,
        }),
        rng: ckpt.rng.clone(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

/// Parse the archive byte layout.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("bad magic; not a checkpoint file".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 8 {
        return Err(Error::Format("truncated before manifest length".into()));
    }
    let mlen = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
    let rest = &rest[8..];
    if rest.len() < mlen {
        return Err(Error::Format(format!("truncated manifest: need {mlen} bytes, have {}", rest.len())));
    }
    let manifest: Manifest = serde_json::from_slice(&rest[..mlen])
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let blob = &rest[mlen..];
    manifest.config.model.validate()?;

    let mut model = InnModel::<T>::zeros(&manifest.config.model);
    let mut m = model.zeros_like();
    let mut v = model.zeros_like();
    let shapes = param_shapes(&manifest.config.model);
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let with_opt = manifest.optimizer.is_some();
    let expected = names.len() * if with_opt { 3 } else { 1 };
    if manifest.entries.len() != expected {
        return Err(Error::Format(format!(
            "manifest lists {} tensors, architecture needs {expected}",
            manifest.entries.len()
        )));
    }

    let width = std::mem::size_of::<T>() as u64;
    let mut used = 0u64;
    let mut entries = manifest.entries.iter();
    let mut targets: Vec<(&str, &mut InnModel<T>)> = vec![("model", &mut model)];
    if with_opt {
        targets.push(("adam.m", &mut m));
        targets.push(("adam.v", &mut v));
    }
    for (prefix, target) in targets {
        for ((dst, name), shape) in target.params_mut().into_iter().zip(&names).zip(&shapes) {
            let e = entries.next().expect("entry count checked");
            let want = format!("{prefix}.{name}");
            if e.name != want {
                return Err(Error::Format(format!("expected tensor {want}, found {}", e.name)));
            }
            if e.dtype != T::DTYPE {
                return Err(Error::Format(format!("{}: dtype {} but loading as {}", e.name, e.dtype, T::DTYPE)));
            }
            if &e.shape != shape {
                return Err(Error::Format(format!("{}: shape {:?}, expected {:?}", e.name, e.shape, shape)));
            }
            if e.nbytes != dst.len() as u64 * width {
                return Err(Error::Format(format!("{}: nbytes {} disagrees with shape", e.name, e.nbytes)));
            }
            let end = e.offset.checked_add(e.nbytes).ok_or_else(|| Error::Format("offset overflow".into()))?;
            if end > blob.len() as u64 {
                return Err(Error::Format(format!("{}: blob truncated", e.name)));
            }
            dst.copy_from_slice(&T::from_le_bytes_slice(&blob[e.offset as usize..end as usize]));
            used = used.max(end);
        }
    }
    if used != blob.len() as u64 {
        return Err(Error::Format(format!("{} trailing bytes after the last tensor", blob.len() as u64 - used)));
    }

    let optimizer = manifest.optimizer.map(|o| Adam {
        learning_rate: o.learning_rate,
        beta1: o.beta1,
        beta2: o.beta2,
        eps: o.eps,
        weight_decay: o.weight_decay,
        step: o.step,
        m,
        v,
    });
    Ok(Checkpoint {
        model,
        optimizer,
        config: manifest.config,
        epoch: manifest.epoch,
        step: manifest.step,
        rng: manifest.rng,
    })
}

pub fn save_checkpoint<T: Real>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    decode_checkpoint(&fs::read(path)?)
}

/// Load and require a specific architecture.
pub fn load_checkpoint_expecting<T: Real>(path: &Path, expected: &ModelConfig) -> Result<Checkpoint<T>> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.config.model != expected {
        return Err(Error::Format(format!(
            "checkpoint architecture {:?} does not match expected {:?}",
            ckpt.config.model, expected
        )));
    }
    Ok(ckpt)
}
