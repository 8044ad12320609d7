//! Partial diffusion and reconstruction with DDPM and DDIM, driven by an
//! oracle that knows the clean input. With an exact noise estimate both
//! samplers return the input; DDIM needs a fraction of the denoiser calls.
//!
//! cargo run --release --example sampler

use std::cell::Cell;

use ndarray::Array2;

use diffad::diffusion::{reconstruct, DiffusionConfig, NoisePredictor, NoiseSchedule, SamplerKind};

/// Predicts the noise that separates `x_t` from a known clean window.
struct Oracle {
    x0: Array2<f64>,
    sched: NoiseSchedule,
    calls: Cell<usize>,
}

impl NoisePredictor for Oracle {
    fn predict_noise(&self, x_t: &[Array2<f64>], t: usize) -> diffad::Result<Vec<Array2<f64>>> {
        self.calls.set(self.calls.get() + 1);
        let ab = self.sched.alpha_bar[t];
        Ok(x_t
            .iter()
            .map(|x| (x - &(&self.x0 * ab.sqrt())) / (1.0 - ab).sqrt())
            .collect())
    }
}

fn main() -> diffad::Result<()> {
    let x0 = Array2::from_shape_fn((32, 32), |(r, c)| ((r * 7 + c * 3) % 11) as f64 / 10.0);
    for (sampler, interval) in [(SamplerKind::Ddpm, 1), (SamplerKind::Ddim, 4), (SamplerKind::Ddim, 20)] {
        let cfg = DiffusionConfig {
            sampler,
            ddim_interval: interval,
            ..Default::default()
        };
        let sched = NoiseSchedule::new(&cfg)?;
        let oracle = Oracle {
            x0: x0.clone(),
            sched: sched.clone(),
            calls: Cell::new(0),
        };
        let (x_hat, calls) = reconstruct(&x0, &cfg, &sched, &oracle, 7)?;
        let err = (&x_hat - &x0).mapv(f64::abs).mean().unwrap();
        println!(
            "{sampler} (interval {interval:>2}) from t_hat = {}: {calls:>3} denoiser calls, mean |x_hat - x0| = {err:.2e}",
            cfg.reverse_start
        );
    }
    Ok(())
}
