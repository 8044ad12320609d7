//! Original, reconstruction, MAE map and AF map of one anomalous and one
//! normal clip, as PGM images plus CSV matrices.
//!
//! cargo run --release --example viz -- [training steps, default 2000]

mod common;

use diffad::dataset::Label;
use diffad::pipeline;

fn main() -> diffad::Result<()> {
    let desk = common::desk(common::arg_or(2000u64))?;
    let clips = pipeline::test_clips(&desk.cfg, None)?;
    let out = desk.work.join("viz");
    for label in [Label::Anomaly, Label::Normal] {
        let clip = clips.iter().find(|c| c.label == label).expect("corpus has both labels");
        let panels = pipeline::cmd_viz(&desk.cfg, &desk.checkpoint, &clip.path, None, &out)?;
        println!("{label}: {}", panels.af_map.display());
    }
    Ok(())
}
