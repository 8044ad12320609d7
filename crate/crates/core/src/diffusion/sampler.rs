use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::schedule::{DiffusionConfig, NoiseSchedule, SamplerKind};
use crate::error::{Error, Result};

/// A noise-prediction model eps(x_t, t). All inputs in one call share `t`.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &[Array2<f64>], t: usize) -> Result<Vec<Array2<f64>>>;
}

impl<F> NoisePredictor for F
where
    F: Fn(&[Array2<f64>], usize) -> Vec<Array2<f64>>,
{
    fn predict_noise(&self, x_t: &[Array2<f64>], t: usize) -> Result<Vec<Array2<f64>>> {
        Ok(self(x_t, t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    pub x_t: Array2<f64>,
    pub t: usize,
    pub eps: Array2<f64>,
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

fn check_t(t: usize, min: usize, sched: &NoiseSchedule) -> Result<()> {
    let max = sched.total_steps();
    if t < min || t > max {
        return Err(Error::TimestepOutOfRange { t, min, max });
    }
    Ok(())
}

fn check_shape(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise
pub fn forward_diffuse(x0: &Array2<f64>, t: usize, sched: &NoiseSchedule, noise: Array2<f64>) -> Result<NoisySample> {
    check_t(t, 1, sched)?;
    check_shape(x0, &noise, "forward_diffuse noise")?;
    let ab = sched.alpha_bar[t];
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let x_t = Zip::from(x0).and(&noise).map_collect(|&x, &e| a * x + b * e);
    Ok(NoisySample { x_t, t, eps: noise })
}

/// One ancestral DDPM step t -> t-1. `z` is ignored at t = 1.
pub fn ddpm_step(
    x_t: &Array2<f64>,
    t: usize,
    eps_hat: &Array2<f64>,
    sched: &NoiseSchedule,
    z: &Array2<f64>,
) -> Result<Array2<f64>> {
    check_t(t, 1, sched)?;
    check_shape(x_t, eps_hat, "ddpm_step eps_hat")?;
    check_shape(x_t, z, "ddpm_step z")?;
    let alpha = sched.alpha[t];
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let eps_coef = (1.0 - alpha) / (1.0 - sched.alpha_bar[t]).sqrt();
    let sigma = if t == 1 { 0.0 } else { sched.beta_tilde[t].sqrt() };
    Ok(Zip::from(x_t)
        .and(eps_hat)
        .and(z)
        .map_collect(|&x, &e, &n| inv_sqrt_alpha * (x - eps_coef * e) + sigma * n))
}

/// The sigma that turns a DDIM step t -> t_prev into the DDPM posterior.
pub fn ddpm_equivalent_sigma(sched: &NoiseSchedule, t: usize, t_prev: usize) -> f64 {
    let (ab, ab_prev) = (sched.alpha_bar[t], sched.alpha_bar[t_prev]);
    ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt()
}

/// Generalized DDIM step t -> t_prev. `noise` may be omitted when sigma = 0.
pub fn ddim_step(
    x_t: &Array2<f64>,
    t: usize,
    t_prev: usize,
    eps_hat: &Array2<f64>,
    sched: &NoiseSchedule,
    sigma: f64,
    noise: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    check_t(t, 1, sched)?;
    if t_prev >= t {
        return Err(Error::TimestepOutOfRange {
            t: t_prev,
            min: 0,
            max: t - 1,
        });
    }
    check_shape(x_t, eps_hat, "ddim_step eps_hat")?;
    if !(sigma >= 0.0) {
        return Err(Error::InvalidSigma {
            sigma,
            t_prev,
            limit: 1.0 - sched.alpha_bar[t_prev],
        });
    }
    let ab = sched.alpha_bar[t];
    let ab_prev = sched.alpha_bar[t_prev];
    let limit = 1.0 - ab_prev;
    let mut dir_var = limit - sigma * sigma;
    if dir_var < 0.0 {
        // rounding slack when sigma is the DDPM value at t_prev = 0
        if dir_var > -1e-12 {
            dir_var = 0.0;
        } else {
            return Err(Error::InvalidSigma { sigma, t_prev, limit });
        }
    }
    let (sqrt_ab, sqrt_1m_ab) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (sqrt_ab_prev, dir) = (ab_prev.sqrt(), dir_var.sqrt());
    let mut out = Zip::from(x_t).and(eps_hat).map_collect(|&x, &e| {
        let x0_pred = (x - sqrt_1m_ab * e) / sqrt_ab;
        sqrt_ab_prev * x0_pred + dir * e
    });
    if sigma > 0.0 {
        let noise = noise.ok_or_else(|| Error::Shape("ddim_step: sigma > 0 needs noise".into()))?;
        check_shape(x_t, noise, "ddim_step noise")?;
        out.scaled_add(sigma, noise);
    }
    Ok(out)
}

/// Descending DDIM timesteps {start, start - interval, ...} that are > 0,
/// followed by a terminal 0.
pub fn ddim_timesteps(start: usize, interval: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (1..=start).rev().step_by(interval.max(1)).collect();
    ts.push(0);
    ts
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub x0_hat: Vec<Array2<f64>>,
    /// Denoiser evaluations spent on each window.
    pub denoiser_calls: usize,
}

/// Partial diffusion: corrupt every window to `cfg.reverse_start` once, then
/// run the configured reverse sampler to t = 0. Each window draws its noise
/// from its own seeded generator.
pub fn reconstruct_batch(
    x0: &[Array2<f64>],
    cfg: &DiffusionConfig,
    sched: &NoiseSchedule,
    denoiser: &dyn NoisePredictor,
    seeds: &[u64],
) -> Result<Reconstruction> {
    cfg.validate()?;
    if x0.is_empty() {
        return Err(Error::Empty("no windows to reconstruct".into()));
    }
    if seeds.len() != x0.len() {
        return Err(Error::Shape(format!("{} seeds for {} windows", seeds.len(), x0.len())));
    }
    if cfg.total_steps != sched.total_steps() {
        return Err(Error::Config(format!(
            "schedule has {} steps, config says {}",
            sched.total_steps(),
            cfg.total_steps
        )));
    }
    let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect();
    let t_start = cfg.reverse_start;
    let mut xs = x0
        .iter()
        .zip(rngs.iter_mut())
        .map(|(x, rng)| {
            let noise = standard_normal(rng, x.dim());
            forward_diffuse(x, t_start, sched, noise).map(|s| s.x_t)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut calls = 0;
    match cfg.sampler {
        SamplerKind::Ddpm => {
            for t in (1..=t_start).rev() {
                let eps = predict(denoiser, &xs, t)?;
                calls += 1;
                for ((x, e), rng) in xs.iter_mut().zip(&eps).zip(rngs.iter_mut()) {
                    let z = if t > 1 {
                        standard_normal(rng, x.dim())
                    } else {
                        Array2::zeros(x.dim())
                    };
                    *x = ddpm_step(x, t, e, sched, &z)?;
                }
            }
        }
        SamplerKind::Ddim => {
            let ts = ddim_timesteps(t_start, cfg.ddim_interval);
            for pair in ts.windows(2) {
                let (t, t_prev) = (pair[0], pair[1]);
                let eps = predict(denoiser, &xs, t)?;
                calls += 1;
                for (x, e) in xs.iter_mut().zip(&eps) {
                    *x = ddim_step(x, t, t_prev, e, sched, 0.0, None)?;
                }
            }
        }
    }
    Ok(Reconstruction {
        x0_hat: xs,
        denoiser_calls: calls,
    })
}

fn predict(denoiser: &dyn NoisePredictor, xs: &[Array2<f64>], t: usize) -> Result<Vec<Array2<f64>>> {
    let eps = denoiser.predict_noise(xs, t)?;
    if eps.len() != xs.len() || eps.iter().zip(xs).any(|(e, x)| e.dim() != x.dim()) {
        return Err(Error::Shape("denoiser output does not match its input".into()));
    }
    Ok(eps)
}

/// Single-window form of [`reconstruct_batch`].
pub fn reconstruct(
    x0: &Array2<f64>,
    cfg: &DiffusionConfig,
    sched: &NoiseSchedule,
    denoiser: &dyn NoisePredictor,
    seed: u64,
) -> Result<(Array2<f64>, usize)> {
    let mut r = reconstruct_batch(std::slice::from_ref(x0), cfg, sched, denoiser, &[seed])?;
    Ok((r.x0_hat.pop().unwrap(), r.denoiser_calls))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleKind;
    use ndarray::arr2;
    use std::cell::Cell;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::new(&DiffusionConfig::default()).unwrap()
    }

    fn scalar(v: f64) -> Array2<f64> {
        arr2(&[[v]])
    }

    /// Schedule with hand-picked alpha_bar at t=1,2.
    fn custom(alpha_bars: &[f64]) -> NoiseSchedule {
        let mut beta = vec![0.0];
        let mut prev = 1.0;
        for &ab in alpha_bars {
            beta.push(1.0 - ab / prev);
            prev = ab;
        }
        NoiseSchedule::from_betas(beta)
    }

    #[test]
    fn forward_hand_value() {
        let s = custom(&[0.64]);
        let out = forward_diffuse(&scalar(0.5), 1, &s, scalar(1.0)).unwrap();
        assert!((out.x_t[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_limits() {
        let s = custom(&[1.0 - 1e-300, 0.0]);
        let x0 = arr2(&[[0.3, -0.2]]);
        let noise = arr2(&[[1.5, 2.5]]);
        let near = forward_diffuse(&x0, 1, &s, noise.clone()).unwrap();
        assert_eq!(near.x_t, x0);
        let far = forward_diffuse(&x0, 2, &s, noise.clone()).unwrap();
        assert_eq!(far.x_t, noise);
    }

    #[test]
    fn forward_rejects_t_zero() {
        assert!(matches!(
            forward_diffuse(&scalar(0.0), 0, &sched(), scalar(0.0)),
            Err(Error::TimestepOutOfRange { .. })
        ));
    }

    #[test]
    fn ddpm_identity_and_hand_value() {
        // alpha_1 = 1 via a near-zero beta
        let s = NoiseSchedule::from_betas(vec![0.0, 0.0, 0.5]);
        let x = scalar(0.7);
        let out = ddpm_step(&x, 2, &scalar(0.0), &s, &scalar(0.0)).unwrap();
        assert!((out[[0, 0]] - 0.7 / 0.5f64.sqrt()).abs() < 1e-12);

        // alpha_t = 0.99, alpha_bar_t = 0.5
        let s = custom(&[0.5 / 0.99, 0.5]);
        assert!((s.alpha[2] - 0.99).abs() < 1e-12);
        let out = ddpm_step(&scalar(1.0), 2, &scalar(1.0), &s, &scalar(0.0)).unwrap();
        let expected = (1.0 / 0.99f64.sqrt()) * (1.0 - 0.01 / 0.5f64.sqrt());
        assert!((out[[0, 0]] - expected).abs() < 1e-12);
        assert!((out[[0, 0]] - 0.990824).abs() < 1e-6);
    }

    #[test]
    fn ddpm_rejects_t_zero() {
        let x = scalar(0.0);
        assert!(ddpm_step(&x, 0, &x, &sched(), &x).is_err());
    }

    #[test]
    fn ddim_hand_value() {
        let s = custom(&[0.9, 0.5]);
        let out = ddim_step(&scalar(1.0), 2, 1, &scalar(0.2), &s, 0.0, None).unwrap();
        let x0 = (1.0 - 0.5f64.sqrt() * 0.2) / 0.5f64.sqrt();
        let expected = 0.9f64.sqrt() * x0 + 0.1f64.sqrt() * 0.2;
        assert!((out[[0, 0]] - expected).abs() < 1e-12);
        assert!((out[[0, 0]] - 1.21515).abs() < 1e-4);
    }

    #[test]
    fn ddim_sigma_too_large_is_rejected() {
        let s = custom(&[0.9, 0.5]);
        let e = ddim_step(&scalar(1.0), 2, 1, &scalar(0.2), &s, 0.5, Some(&scalar(0.0)));
        assert!(matches!(e, Err(Error::InvalidSigma { .. })));
    }

    #[test]
    fn ddim_matches_ddpm_with_posterior_sigma() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in [1usize, 2, 10, 280, 999, 1000] {
            let x = standard_normal(&mut rng, (4, 4));
            let e = standard_normal(&mut rng, (4, 4));
            let z = standard_normal(&mut rng, (4, 4));
            let sigma = ddpm_equivalent_sigma(&s, t, t - 1);
            let a = ddim_step(&x, t, t - 1, &e, &s, sigma, Some(&z)).unwrap();
            let b = ddpm_step(&x, t, &e, &s, &z).unwrap();
            for (p, q) in a.iter().zip(b.iter()) {
                assert!((p - q).abs() < 1e-6, "t={t}");
            }
        }
    }

    #[test]
    fn timestep_subsequences() {
        let ts = ddim_timesteps(280, 4);
        assert_eq!(ts.len(), 71);
        assert_eq!(&ts[..3], &[280, 276, 272]);
        assert_eq!(&ts[69..], &[4, 0]);
        assert_eq!(ddim_timesteps(10, 4), vec![10, 6, 2, 0]);
        assert_eq!(ddim_timesteps(5, 5), vec![5, 0]);
    }

    struct Counting<'a> {
        calls: Cell<usize>,
        x0: &'a Array2<f64>,
        sched: &'a NoiseSchedule,
    }

    impl NoisePredictor for Counting<'_> {
        fn predict_noise(&self, x_t: &[Array2<f64>], t: usize) -> Result<Vec<Array2<f64>>> {
            self.calls.set(self.calls.get() + 1);
            let ab = self.sched.alpha_bar[t];
            Ok(x_t
                .iter()
                .map(|x| (x - &(self.x0 * ab.sqrt())) / (1.0 - ab).sqrt())
                .collect())
        }
    }

    #[test]
    fn call_counts_per_sampler() {
        let s = sched();
        let x0 = Array2::from_elem((3, 3), 0.4);
        for (sampler, expected) in [(SamplerKind::Ddim, 70), (SamplerKind::Ddpm, 280)] {
            let cfg = DiffusionConfig {
                sampler,
                ..Default::default()
            };
            let oracle = Counting {
                calls: Cell::new(0),
                x0: &x0,
                sched: &s,
            };
            let (_, calls) = reconstruct(&x0, &cfg, &s, &oracle, 1).unwrap();
            assert_eq!(calls, expected);
            assert_eq!(oracle.calls.get(), expected);
        }
    }

    #[test]
    fn ddim_with_oracle_recovers_input() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0 = standard_normal(&mut rng, (5, 5));
        for interval in [280usize, 4, 7] {
            let cfg = DiffusionConfig {
                ddim_interval: interval,
                ..Default::default()
            };
            let oracle = Counting {
                calls: Cell::new(0),
                x0: &x0,
                sched: &s,
            };
            let (xhat, calls) = reconstruct(&x0, &cfg, &s, &oracle, 5).unwrap();
            assert_eq!(calls, 280usize.div_ceil(interval));
            for (a, b) in xhat.iter().zip(x0.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reconstruct_is_deterministic_per_seed() {
        let s = NoiseSchedule::new(&DiffusionConfig {
            schedule: ScheduleKind::Linear,
            ..Default::default()
        })
        .unwrap();
        let cfg = DiffusionConfig {
            schedule: ScheduleKind::Linear,
            sampler: SamplerKind::Ddpm,
            reverse_start: 20,
            ddim_interval: 4,
            ..Default::default()
        };
        let shrink = |xs: &[Array2<f64>], _t: usize| xs.iter().map(|x| x * 0.1).collect::<Vec<_>>();
        let x0 = Array2::from_elem((2, 2), 0.5);
        let a = reconstruct(&x0, &cfg, &s, &shrink, 11).unwrap();
        let b = reconstruct(&x0, &cfg, &s, &shrink, 11).unwrap();
        let c = reconstruct(&x0, &cfg, &s, &shrink, 12).unwrap();
        assert_eq!(a.0, b.0);
        assert_ne!(a.0, c.0);
    }
}
