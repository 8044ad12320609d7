//! Anomalies-filter sweep: reconstruct the dropped-band test clips once,
//! cache the residuals, then rescore over the K grid with and without ReLU.
//!
//! cargo run --release --example sweep -- [training steps, default 2000]

mod common;

use diffad::dataset::AnomalyKind;
use diffad::pipeline;
use diffad::scoring::default_k_grid;

fn main() -> diffad::Result<()> {
    let mut desk = common::desk(common::arg_or(2000u64))?;
    desk.cfg.paths.dataset = Some(common::corpus(AnomalyKind::DroppedBand)?);
    let denoiser = pipeline::load_denoiser(&desk.cfg, &desk.checkpoint)?;
    let clips = pipeline::test_clips(&desk.cfg, None)?;
    let scored = pipeline::reconstruct_clips(&desk.cfg, &denoiser, &clips, 1)?;
    let cache = desk.work.join("dropped_band_residuals.bin");
    pipeline::residual_cache(&scored).save(&cache)?;

    let out = desk.work.join("sweep.csv");
    let rows = pipeline::cmd_sweep(
        &cache,
        &default_k_grid(),
        &out,
        desk.cfg.scoring.aggregation,
        0.1,
        desk.cfg.scoring.auc_convention,
    )?;
    for relu in [false, true] {
        let best = rows
            .iter()
            .filter(|r| r.use_relu == relu)
            .max_by(|a, b| a.auc.total_cmp(&b.auc))
            .unwrap();
        let at = |k: f64| {
            rows.iter()
                .find(|r| r.use_relu == relu && (r.k_fraction - k).abs() < 1e-9)
                .unwrap()
                .auc
        };
        println!(
            "ReLU {relu:<5}: AUC at K=0.03 {:.3}, K=0.30 {:.3}, K=0.99 {:.3}; best {:.3} at K={:.2}",
            at(0.03),
            at(0.3),
            at(0.99),
            best.auc,
            best.k_fraction
        );
    }
    println!("full table: {}", out.display());
    Ok(())
}
