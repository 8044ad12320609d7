//! Run configuration: one TOML file with a section per module.
//!
//! Unknown keys are rejected everywhere. `DIFFAD_DATASET` and `DIFFAD_OUTPUT`
//! override the dataset and output paths; nothing else reads the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::eval::{AucConvention, DEFAULT_PAUC_P};
use crate::features::FeatureConfig;
use crate::nn::UNetConfig;
use crate::scoring::{AFConfig, Aggregation, ScoreMethod};
use crate::train::TrainConfig;

pub const ENV_DATASET: &str = "DIFFAD_DATASET";
pub const ENV_OUTPUT: &str = "DIFFAD_OUTPUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub method: ScoreMethod,
    pub aggregation: Aggregation,
    /// Window hop (frames) when cutting training clips.
    pub train_hop: usize,
    /// Window hop (frames) when cutting test clips.
    pub test_hop: usize,
    /// Score with the EMA weights (the default) or the raw weights.
    pub use_ema: bool,
    pub pauc_p: f64,
    pub auc_convention: AucConvention,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            method: ScoreMethod::Af,
            aggregation: Aggregation::Mean,
            train_hop: 128,
            test_hop: 5,
            use_ema: true,
            pauc_p: DEFAULT_PAUC_P,
            auc_convention: AucConvention::DomainPure,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_hop == 0 || self.test_hop == 0 {
            return Err(Error::Config("scoring: hops must be >= 1".into()));
        }
        if !(self.pauc_p > 0.0 && self.pauc_p <= 1.0) {
            return Err(Error::Config(format!(
                "scoring: pauc_p must be in (0, 1], got {}",
                self.pauc_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    /// Master seed: initialization, batching, training noise and inference
    /// corruption all derive from it.
    pub seed: u64,
    pub features: FeatureConfig,
    pub diffusion: DiffusionConfig,
    pub unet: UNetConfig,
    pub train: TrainConfig,
    pub af: AFConfig,
    pub scoring: ScoringConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Desk-scale preset: 32 mel bins, 32x32 windows, the toy network and a
    /// 2000-step schedule. Diffusion depth and sampler match the full setup;
    /// only the DDIM stride is coarser to keep scoring fast.
    pub fn toy() -> Self {
        let mut cfg = Self {
            features: FeatureConfig {
                n_mels: 32,
                ..Default::default()
            },
            unet: UNetConfig::toy(),
            train: TrainConfig {
                learning_rate: 1e-3,
                total_steps: 2000,
                batch_size: 8,
                checkpoint_every: 500,
                ..Default::default()
            },
            diffusion: DiffusionConfig {
                ddim_interval: 20,
                ..Default::default()
            },
            scoring: ScoringConfig {
                train_hop: 32,
                test_hop: 16,
                ..Default::default()
            },
            ..Default::default()
        };
        cfg.sync_seed();
        cfg
    }

    /// Swaps in the toy network, features, diffusion stride, training
    /// schedule and hops, keeping seed, AF settings and paths.
    pub fn into_toy(self) -> Self {
        let toy = Self::toy();
        Self {
            seed: self.seed,
            af: self.af,
            paths: self.paths,
            scoring: ScoringConfig {
                train_hop: toy.scoring.train_hop,
                test_hop: toy.scoring.test_hop,
                ..self.scoring
            },
            ..toy
        }
        .with_synced_seed()
    }

    fn sync_seed(&mut self) {
        self.train.seed = self.seed;
    }

    fn with_synced_seed(mut self) -> Self {
        self.sync_seed();
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let train_seed = raw
            .get("train")
            .and_then(|t| t.get("seed"))
            .and_then(|s| s.as_integer());
        let mut cfg: Self = raw
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(s) = train_seed {
            if s as u64 != cfg.seed {
                return Err(Error::Config("set the seed once, at the top level".into()));
            }
        }
        cfg.sync_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `DIFFAD_DATASET` / `DIFFAD_OUTPUT` when set.
    pub fn apply_env(&mut self) {
        self.apply_overrides(
            std::env::var_os(ENV_DATASET).map(PathBuf::from),
            std::env::var_os(ENV_OUTPUT).map(PathBuf::from),
        );
    }

    pub fn apply_overrides(&mut self, dataset: Option<PathBuf>, output: Option<PathBuf>) {
        if dataset.is_some() {
            self.paths.dataset = dataset;
        }
        if output.is_some() {
            self.paths.output = output;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.diffusion.validate()?;
        self.unet.validate()?;
        self.train.validate()?;
        self.af.validate()?;
        self.scoring.validate()?;
        if self.features.n_mels != self.unet.input_size {
            return Err(Error::Config(format!(
                "features.n_mels ({}) must equal unet.input_size ({}): windows are square",
                self.features.n_mels, self.unet.input_size
            )));
        }
        if self.scoring.test_hop > self.window() {
            return Err(Error::Config(format!(
                "scoring.test_hop ({}) exceeds the window ({}): test frames would go unscored",
                self.scoring.test_hop,
                self.window()
            )));
        }
        if self.train.seed != self.seed {
            return Err(Error::Config("train.seed differs from the top-level seed".into()));
        }
        Ok(())
    }

    pub fn window(&self) -> usize {
        self.unet.input_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for cfg in [RunConfig::default(), RunConfig::toy()] {
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        assert!(RunConfig::from_toml_str("[train]\nlearning_rat = 0.1").is_err());
        assert!(RunConfig::from_toml_str("[unet]\nbase_channels = 64\nwidth = 3").is_err());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 5\n[diffusion]\nsampler = \"ddpm\"").unwrap();
        assert_eq!(cfg.train.seed, 5);
        assert_eq!(cfg.diffusion.reverse_start, 280);
        assert!(RunConfig::from_toml_str("seed = 5\n[train]\nseed = 6").is_err());
    }

    #[test]
    fn section_validation_runs() {
        assert!(RunConfig::from_toml_str("[af]\nk_fraction = 0.0").is_err());
        assert!(RunConfig::from_toml_str("[features]\nn_mels = 64").is_err());
        assert!(RunConfig::from_toml_str("[scoring]\ntest_hop = 129").is_err());
        assert!(RunConfig::from_toml_str("[scoring]\ntest_hop = 128").is_ok());
    }

    #[test]
    fn overrides_only_touch_paths() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(Some("/data".into()), None);
        assert_eq!(cfg.paths.dataset.as_deref(), Some(Path::new("/data")));
        assert_eq!(cfg.paths.output, None);
    }
}
