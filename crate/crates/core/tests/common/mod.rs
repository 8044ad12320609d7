//! Shared fixtures: a small synthetic corpus and a configuration small enough
//! to train and score in seconds.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use diffad::config::RunConfig;
use diffad::dataset::{AnomalyKind, SynthSpec};
use diffad::nn::UNetConfig;

pub fn small_spec(kind: AnomalyKind) -> SynthSpec {
    SynthSpec {
        anomaly_kind: kind,
        n_normal_train: 4,
        n_normal_test: 3,
        n_anomaly_test: 3,
        seed: 3,
        ..Default::default()
    }
}

pub fn small_corpus(dir: &Path) -> PathBuf {
    let root = dir.join("data");
    diffad::dataset::synth_generate(&small_spec(AnomalyKind::AddedTone), &root).unwrap();
    root
}

/// 16 mel bins, the tiny network, 6 training steps and 4 DDIM calls per window.
pub fn tiny_config(data: &Path) -> RunConfig {
    let mut cfg = RunConfig::toy();
    cfg.features.n_mels = 16;
    cfg.unet = UNetConfig::tiny();
    cfg.train.total_steps = 6;
    cfg.train.batch_size = 2;
    cfg.train.checkpoint_every = 3;
    cfg.diffusion.ddim_interval = 70;
    cfg.scoring.train_hop = 16;
    cfg.scoring.test_hop = 16;
    cfg.paths.dataset = Some(data.to_path_buf());
    cfg.validate().unwrap();
    cfg
}
