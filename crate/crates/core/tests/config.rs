//! The documented example configuration and the presets.

use std::path::PathBuf;

use diffad::config::RunConfig;
use diffad::diffusion::{SamplerKind, ScheduleKind};

fn example_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/config.example.toml")
}

#[test]
fn example_file_is_the_default_configuration() {
    let cfg = RunConfig::load(example_path()).unwrap();
    assert_eq!(cfg, RunConfig::default());
}

#[test]
fn defaults_carry_the_reference_setup() {
    let cfg = RunConfig::default();
    assert_eq!(cfg.diffusion.total_steps, 1000);
    assert_eq!(cfg.diffusion.reverse_start, 280);
    assert_eq!(cfg.diffusion.schedule, ScheduleKind::Sigmoid);
    assert_eq!(cfg.diffusion.sampler, SamplerKind::Ddim);
    assert_eq!(cfg.diffusion.ddim_interval, 4);
    assert_eq!(cfg.unet.base_channels, 64);
    assert_eq!(cfg.unet.channel_multipliers, [1, 2, 4, 8]);
    assert_eq!(cfg.unet.attention_heads, 4);
    assert_eq!(cfg.unet.attention_resolutions, [32]);
    assert_eq!(cfg.train.learning_rate, 1e-4);
    assert_eq!(cfg.train.ema_rate, 0.995);
    assert_eq!(cfg.train.total_steps, 64_000);
    assert_eq!(cfg.train.batch_size, 24);
    assert_eq!(cfg.features.n_mels, 128);
    assert_eq!(cfg.features.win_ms, 25.0);
    assert_eq!(cfg.features.hop_ms, 10.0);
    assert_eq!(cfg.features.fft_size, 1024);
    assert_eq!((cfg.scoring.train_hop, cfg.scoring.test_hop), (128, 5));
    assert_eq!(cfg.af.k_fraction, 0.1);
}

#[test]
fn toy_conversion_keeps_seed_scoring_choices_and_paths() {
    let mut cfg =
        RunConfig::from_toml_str("seed = 9\n[af]\nk_fraction = 0.3\nuse_relu = true\n[paths]\ndataset = \"/data\"\n")
            .unwrap();
    cfg.scoring.use_ema = false;
    let toy = cfg.clone().into_toy();
    toy.validate().unwrap();
    assert_eq!(toy.seed, 9);
    assert_eq!(toy.train.seed, 9);
    assert_eq!(toy.af, cfg.af);
    assert_eq!(toy.paths, cfg.paths);
    assert!(!toy.scoring.use_ema);
    assert_eq!(toy.unet, RunConfig::toy().unet);
    assert_eq!(toy.features, RunConfig::toy().features);
    assert_eq!((toy.scoring.train_hop, toy.scoring.test_hop), (32, 16));
}
