//! Noise schedules: signal level left at a few timesteps, and the full table
//! as CSV when a path is given.
//!
//! cargo run --release --example schedule -- [schedule.csv]

use diffad::diffusion::{DiffusionConfig, NoiseSchedule, ScheduleKind};

fn main() -> diffad::Result<()> {
    let out = std::env::args().nth(1);
    for kind in [ScheduleKind::Linear, ScheduleKind::Sigmoid] {
        let cfg = DiffusionConfig {
            schedule: kind,
            ..Default::default()
        };
        let s = NoiseSchedule::new(&cfg)?;
        println!("{kind:?} (T = {}):", s.total_steps());
        for t in [1, 100, cfg.reverse_start, 500, 1000] {
            println!(
                "  t = {t:>4}: beta {:.2e}  alpha_bar {:.4}  signal sqrt(alpha_bar) {:.3}  noise {:.3}",
                s.beta[t],
                s.alpha_bar[t],
                s.alpha_bar[t].sqrt(),
                (1.0 - s.alpha_bar[t]).sqrt()
            );
        }
        if let (Some(path), ScheduleKind::Sigmoid) = (&out, kind) {
            std::fs::write(path, s.to_csv()).map_err(|e| diffad::Error::Config(e.to_string()))?;
            println!("wrote {path}");
        }
    }
    Ok(())
}
