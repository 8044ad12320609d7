//! Scores the added-tone test clips with the toy model, comparing the
//! anomalies filter against plain reconstruction error.
//!
//! cargo run --release --example score -- [training steps, default 2000]

mod common;

use diffad::eval::{evaluate, ScoreRecord};
use diffad::pipeline;
use diffad::scoring::{AfParams, ScoreMethod};

fn main() -> diffad::Result<()> {
    let desk = common::desk(common::arg_or(2000u64))?;
    let denoiser = pipeline::load_denoiser(&desk.cfg, &desk.checkpoint)?;
    let clips = pipeline::test_clips(&desk.cfg, None)?;
    let scored = pipeline::reconstruct_clips(&desk.cfg, &denoiser, &clips, 1)?;
    let variants = [
        ("MAE", ScoreMethod::Mae, desk.cfg.af.params()),
        (
            "AF K=0.1",
            ScoreMethod::Af,
            AfParams {
                k_fraction: 0.1,
                use_relu: false,
            },
        ),
        (
            "AF K=0.1 ReLU",
            ScoreMethod::Af,
            AfParams {
                k_fraction: 0.1,
                use_relu: true,
            },
        ),
    ];
    for (name, method, af) in variants {
        let records = scored
            .iter()
            .map(|s| {
                Ok(ScoreRecord {
                    clip_id: s.meta.clip_id.clone(),
                    machine_type: s.meta.machine_type.clone(),
                    section: s.meta.section.clone(),
                    domain: s.meta.domain,
                    label: s.meta.label,
                    score: s.reconstruction.score(method, af, desk.cfg.scoring.aggregation)?.score,
                })
            })
            .collect::<diffad::Result<Vec<_>>>()?;
        let r = evaluate(&records, desk.cfg.scoring.pauc_p, desk.cfg.scoring.auc_convention)?;
        let m = &r.machines[0];
        println!("{name:<14} AUC {:.3}  pAUC {:.3}  hmean {:.3}", m.auc, m.pauc, r.hmean);
    }
    let out = desk.work.join("scores.csv");
    pipeline::write_score_csv(
        &out,
        &pipeline::score_rows(&desk.cfg, &scored, desk.cfg.scoring.method)?,
    )?;
    println!("configured scores written to {}", out.display());
    Ok(())
}
