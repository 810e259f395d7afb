//! Run configuration: a JSON file, then command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use innsteg::evaluation::LamMode;
use innsteg::pipeline::DEFAULT_THRESHOLD_DB;
use innsteg::training::TrainConfig;
use innsteg::{Error, Result};
use serde::{Deserialize, Serialize};

/// Name of the effective-config echo written into output directories.
pub const ECHO_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Drives training (overriding `train.seed`) and all evaluation noise.
    pub seed: Option<u64>,
    pub dataset_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub threshold_db: f64,
    pub lam_mode: LamMode,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            dataset_dir: None,
            checkpoint: None,
            output_dir: None,
            threshold_db: DEFAULT_THRESHOLD_DB,
            lam_mode: LamMode::Zero,
            train: TrainConfig::default(),
        }
    }
}

/// Overrides taken from command-line flags.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub threshold_db: Option<f64>,
    pub lam: Option<f64>,
    pub dataset_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    /// Parse JSON text. Errors name the offending key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                Error::Config(format!("invalid config: {inner}"))
            } else {
                Error::Config(format!("invalid config at `{path}`: {inner}"))
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// File (if any), then flag overrides, then validation.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = Some(seed);
        }
        let seed = self.seed.unwrap_or(self.train.seed);
        self.seed = Some(seed);
        self.train.seed = seed;
        if let Some(dir) = &o.output_dir {
            self.output_dir = Some(dir.clone());
        }
        if let Some(t) = o.threshold_db {
            self.threshold_db = t;
        }
        if let Some(lam) = o.lam {
            self.lam_mode = LamMode::Fixed(lam);
        }
        if let Some(dir) = &o.dataset_dir {
            self.dataset_dir = Some(dir.clone());
        }
        if let Some(ckpt) = &o.checkpoint {
            self.checkpoint = Some(ckpt.clone());
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.threshold_db.is_nan() || self.threshold_db == f64::INFINITY {
            return Err(Error::Config(format!("threshold_db must be finite, got {}", self.threshold_db)));
        }
        if let LamMode::Fixed(lam) = self.lam_mode {
            if !(0.0..=1.0).contains(&lam) {
                return Err(Error::Config(format!("lam must lie in [0, 1], got {lam}")));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }

    /// Fixed λ for single-image concealing; uniform draws are not allowed there.
    pub fn fixed_lam(&self) -> Result<f64> {
        match self.lam_mode {
            LamMode::Zero => Ok(0.0),
            LamMode::Fixed(x) => Ok(x),
            LamMode::Uniform => Err(Error::Config("conceal needs a fixed lam, not uniform".into())),
        }
    }

    pub fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config("no checkpoint given (--checkpoint or \"checkpoint\")".into()))
    }

    pub fn require_output_dir(&self) -> Result<&Path> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| Error::Config("no output directory given (--out or \"output_dir\")".into()))
    }

    /// Write the effective config into `dir`; it reruns the same command.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(ECHO_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_absent_keys() {
        let cfg = RunConfig::from_json("{\"train\": {\"crop_size\": 32}}").unwrap();
        assert_eq!(cfg.threshold_db, 25.0);
        assert_eq!(cfg.lam_mode, LamMode::Zero);
        assert_eq!(cfg.train.crop_size, 32);
        assert_eq!(cfg.train.learning_rate, 3e-5);
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn errors_name_the_key() {
        let err = RunConfig::from_json("{\"train\": {\"learning_rat\": 1}}").unwrap_err().to_string();
        assert!(err.contains("learning_rat"), "{err}");
        let err = RunConfig::from_json("{\"train\": {\"model\": {\"growth\": \"wide\"}}}").unwrap_err().to_string();
        assert!(err.contains("train.model.growth"), "{err}");
        assert!(matches!(RunConfig::from_json("{\"seed\": 1,"), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_beat_file_values() {
        let mut cfg = RunConfig::from_json("{\"seed\": 3, \"threshold_db\": 20, \"train\": {\"seed\": 9}}").unwrap();
        cfg.apply(&Overrides::default());
        assert_eq!((cfg.seed(), cfg.train.seed), (3, 3));
        cfg.apply(&Overrides { seed: Some(7), threshold_db: Some(30.0), lam: Some(0.5), ..Default::default() });
        assert_eq!((cfg.seed(), cfg.train.seed), (7, 7));
        assert_eq!(cfg.threshold_db, 30.0);
        assert_eq!(cfg.lam_mode, LamMode::Fixed(0.5));
    }

    #[test]
    fn train_seed_used_without_top_level_seed() {
        let mut cfg = RunConfig::from_json("{\"train\": {\"seed\": 9}}").unwrap();
        cfg.apply(&Overrides::default());
        assert_eq!(cfg.seed, Some(9));
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig { lam_mode: LamMode::Fixed(1.5), ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg.lam_mode = LamMode::Uniform;
        assert!(cfg.fixed_lam().is_err());
        cfg.threshold_db = f64::NAN;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn echo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides { seed: Some(4), lam: Some(0.25), ..Default::default() });
        let path = cfg.echo(dir.path()).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), cfg);
    }
}
