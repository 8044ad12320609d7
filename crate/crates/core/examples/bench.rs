//! DDPM versus DDIM at the full reverse depth (t_hat = 280, DDIM interval 4):
//! denoiser calls per window, wall time and real-time factor on the toy model.
//!
//! cargo run --release --example bench -- [training steps, default 2000]

mod common;

use diffad::pipeline;

fn main() -> diffad::Result<()> {
    let mut desk = common::desk(common::arg_or(2000u64))?;
    desk.cfg.diffusion.ddim_interval = 4;
    let clips = pipeline::test_clips(&desk.cfg, None)?;
    let report = pipeline::cmd_bench(&desk.cfg, &desk.checkpoint, &clips[..2], None)?;
    for r in &report.rows {
        println!(
            "{:<5} {:>3} calls/window, {} windows, {:>6.1}s for {:.0}s of audio, RTF {:.3}",
            r.sampler.to_string(),
            r.calls_per_window,
            r.windows,
            r.wall_s,
            r.audio_s,
            r.rtf
        );
    }
    println!(
        "call ratio {:.2}, wall-time ratio {:.2}",
        report.call_ratio(),
        report.wall_ratio()
    );
    Ok(())
}
