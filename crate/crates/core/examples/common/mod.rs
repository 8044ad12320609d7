//! Shared setup for the examples: a synthetic corpus and a toy model trained
//! on it, cached under `$DIFFAD_OUTPUT` (or the system temp dir) between runs.

#![allow(dead_code)]

use std::path::PathBuf;

use diffad::config::{RunConfig, ENV_OUTPUT};
use diffad::dataset::{AnomalyKind, SynthSpec};
use diffad::pipeline;
use diffad::train::checkpoint_path;

pub struct Desk {
    pub cfg: RunConfig,
    pub checkpoint: PathBuf,
    pub work: PathBuf,
}

pub fn work_dir() -> PathBuf {
    std::env::var_os(ENV_OUTPUT).map_or_else(|| std::env::temp_dir().join("diffad-examples"), PathBuf::from)
}

/// First command-line argument as a number, or `default`.
pub fn arg_or<T: std::str::FromStr>(default: T) -> T {
    std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(default)
}

/// Generates the corpus for `kind` (once) and returns its root.
pub fn corpus(kind: AnomalyKind) -> diffad::Result<PathBuf> {
    let root = work_dir().join(kind.to_string());
    if !root.join("manifest.csv").exists() {
        let spec = SynthSpec {
            anomaly_kind: kind,
            ..Default::default()
        };
        pipeline::cmd_generate(&spec, &root)?;
    }
    Ok(root)
}

/// Toy preset trained for `steps` on the added-tone corpus; reuses an
/// earlier checkpoint of the same length.
pub fn desk(steps: u64) -> diffad::Result<Desk> {
    let root = corpus(AnomalyKind::AddedTone)?;
    let mut cfg = RunConfig::toy();
    cfg.train.total_steps = steps;
    cfg.train.checkpoint_every = steps;
    cfg.paths.dataset = Some(root);
    let run = work_dir().join(format!("toy-{steps}"));
    let checkpoint = checkpoint_path(&run, steps);
    if !checkpoint.exists() {
        println!("training the toy model for {steps} steps into {} ...", run.display());
        pipeline::cmd_train(&cfg, None, &run, None)?;
    }
    Ok(Desk {
        cfg,
        checkpoint,
        work: work_dir(),
    })
}
