//! Denoising-objective training: Adam, EMA tracking, seeded batching and
//! checkpoint/resume.
//!
//! All randomness is a pure function of `(seed, step)` (noise, timesteps) or
//! `(seed, epoch)` (shuffle order), so a resumed run replays exactly the
//! batches and noise an uninterrupted run would have seen.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionConfig, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{
    init_params, load_checkpoint, save_checkpoint, windows_to_act, Act, Checkpoint, DenoiserParams, ParamStore, UNet,
    UNetConfig,
};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

// stream ids keep the per-step and per-epoch generators independent
const STEP_STREAM: u64 = 1;
const EPOCH_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub ema_rate: f64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Global gradient-norm clip; off unless set.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            ema_rate: 0.995,
            total_steps: 64_000,
            batch_size: 24,
            seed: 0,
            checkpoint_every: 4_000,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.ema_rate > 0.0 && self.ema_rate < 1.0) {
            return Err(Error::Config(format!(
                "ema_rate must be in (0, 1), got {}",
                self.ema_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be >= 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// Parameters plus Adam moments and the loss record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: DenoiserParams,
    pub m: ParamStore<f32>,
    pub v: ParamStore<f32>,
    pub loss_history: Vec<f64>,
}

impl TrainState {
    pub fn new(params: DenoiserParams) -> Self {
        Self {
            m: params.weights.zeros_like(),
            v: params.weights.zeros_like(),
            params,
            loss_history: Vec::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.params.step
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            moments: Some((self.m.clone(), self.v.clone())),
            loss_history: self.loss_history.clone(),
            meta,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let (m, v) = ckpt
            .moments
            .ok_or_else(|| Error::Checkpoint("no optimizer moments; cannot resume training".into()))?;
        if !m.same_layout(&ckpt.params.weights) || !v.same_layout(&ckpt.params.weights) {
            return Err(Error::Checkpoint("moment shapes differ from weights".into()));
        }
        if ckpt.loss_history.len() as u64 != ckpt.params.step {
            return Err(Error::Checkpoint(
                "loss history length differs from step counter".into(),
            ));
        }
        Ok(Self {
            params: ckpt.params,
            m,
            v,
            loss_history: ckpt.loss_history,
        })
    }
}

/// ema <- rate * ema + (1 - rate) * weights.
pub fn ema_update(params: &mut DenoiserParams, rate: f64) {
    let rate = rate as f32;
    for (e, w) in params.ema.values.iter_mut().zip(&params.weights.values) {
        for (e, &w) in e.iter_mut().zip(w) {
            *e = rate * *e + (1.0 - rate) * w;
        }
    }
}

/// One bias-corrected Adam update; `step` is 1-based.
pub fn adam_update(
    weights: &mut ParamStore<f32>,
    grads: &ParamStore<f32>,
    m: &mut ParamStore<f32>,
    v: &mut ParamStore<f32>,
    step: u64,
    lr: f64,
) {
    let (b1, b2) = (ADAM_BETA1 as f32, ADAM_BETA2 as f32);
    let c1 = 1.0 - ADAM_BETA1.powf(step as f64);
    let c2 = 1.0 - ADAM_BETA2.powf(step as f64);
    let lr_t = (lr * c2.sqrt() / c1) as f32;
    let eps = (ADAM_EPS * c2.sqrt()) as f32;
    for (((w, g), m), v) in weights
        .values
        .iter_mut()
        .zip(&grads.values)
        .zip(m.values.iter_mut())
        .zip(v.values.iter_mut())
    {
        for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *w -= lr_t * *m / (v.sqrt() + eps);
        }
    }
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(STEP_STREAM);
    rng
}

/// Forward-diffused batch: (x_t, t, eps) for every window.
fn noisy_batch(
    batch: &[Array2<f64>],
    sched: &NoiseSchedule,
    seed: u64,
    step: u64,
) -> Result<(Act<f32>, Vec<usize>, Vec<f32>)> {
    let x0 = windows_to_act::<f64>(batch)?;
    let hw = x0.hw();
    let big_t = sched.total_steps();
    let mut rng = step_rng(seed, step);
    let ts: Vec<usize> = (0..batch.len()).map(|_| rng.gen_range(1..=big_t)).collect();
    let mut x_t = Vec::with_capacity(x0.data.len());
    let mut eps = Vec::with_capacity(x0.data.len());
    for (n, &t) in ts.iter().enumerate() {
        let (a, b) = (sched.alpha_bar[t].sqrt(), (1.0 - sched.alpha_bar[t]).sqrt());
        for &x in &x0.data[n * hw..(n + 1) * hw] {
            let e: f64 = rng.sample(StandardNormal);
            x_t.push((a * x + b * e) as f32);
            eps.push(e as f32);
        }
    }
    Ok((Act::from_vec(1, batch.len(), x0.h, x0.w, x_t), ts, eps))
}

/// One optimization step on `batch`; returns the batch loss.
///
/// The loss is the mean squared error between the sampled and predicted noise
/// over all batch pixels, so the output gradient is `2 (eps_hat - eps) / N`.
pub fn train_step(
    state: &mut TrainState,
    net: &UNet,
    batch: &[Array2<f64>],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<f64> {
    let step = state.params.step;
    let (x_t, ts, eps) = noisy_batch(batch, sched, cfg.seed, step)?;
    let (eps_hat, tape) = net.forward_tape(&state.params.weights, &x_t, &ts)?;
    let n = eps.len() as f64;
    let loss = eps_hat
        .data
        .iter()
        .zip(&eps)
        .map(|(&p, &e)| {
            let d = p as f64 - e as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step, loss });
    }
    let scale = (2.0 / n) as f32;
    let dout = Act::from_vec(
        1,
        eps_hat.n,
        eps_hat.h,
        eps_hat.w,
        eps_hat.data.iter().zip(&eps).map(|(&p, &e)| scale * (p - e)).collect(),
    );
    let mut grads = net.backward(&state.params.weights, &tape, &dout)?;
    if let Some(max_norm) = cfg.grad_clip {
        let norm = grads.sq_norm().sqrt();
        if norm > max_norm {
            let s = (max_norm / norm) as f32;
            grads.values.iter_mut().flatten().for_each(|g| *g *= s);
        }
    }
    adam_update(
        &mut state.params.weights,
        &grads,
        &mut state.m,
        &mut state.v,
        step + 1,
        cfg.learning_rate,
    );
    ema_update(&mut state.params, cfg.ema_rate);
    state.params.step = step + 1;
    state.loss_history.push(loss);
    Ok(loss)
}

/// Deterministic batch order: epoch `e` visits the windows in a permutation
/// seeded by `(seed, e)`; batches run across epoch boundaries.
#[derive(Debug, Clone)]
pub struct BatchOrder {
    n: usize,
    seed: u64,
    epoch: u64,
    perm: Vec<usize>,
}

impl BatchOrder {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut order = Self {
            n,
            seed,
            epoch: u64::MAX,
            perm: Vec::new(),
        };
        order.load_epoch(0);
        order
    }

    fn load_epoch(&mut self, epoch: u64) {
        if self.epoch == epoch {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ epoch.wrapping_mul(0xD1B5_4A32_D192_ED03));
        rng.set_stream(EPOCH_STREAM);
        self.perm = (0..self.n).collect();
        self.perm.shuffle(&mut rng);
        self.epoch = epoch;
    }

    /// Window indices for training step `step`.
    pub fn batch(&mut self, step: u64, batch_size: usize) -> Vec<usize> {
        let n = self.n as u64;
        (0..batch_size as u64)
            .map(|i| {
                let pos = step * batch_size as u64 + i;
                self.load_epoch(pos / n);
                self.perm[(pos % n) as usize]
            })
            .collect()
    }
}

/// Everything needed to reproduce a training run, written next to its checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSnapshot {
    pub train: TrainConfig,
    pub unet: UNetConfig,
    pub diffusion: DiffusionConfig,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub loss_history: Vec<f64>,
}

pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(format!("ckpt_{step}.bin"))
}

/// Trains until `cfg.total_steps`, checkpointing every `cfg.checkpoint_every`
/// steps and at the end. With `resume`, continues from that checkpoint.
pub fn train_loop(
    windows: &[Array2<f64>],
    cfg: &TrainConfig,
    unet_cfg: &UNetConfig,
    diff_cfg: &DiffusionConfig,
    run_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    diff_cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Empty("training set has no windows".into()));
    }
    let s = unet_cfg.input_size;
    if windows.iter().any(|w| w.dim() != (s, s)) {
        return Err(Error::Shape(format!("training windows must be {s}x{s}")));
    }
    let net = UNet::new(unet_cfg)?;
    let sched = NoiseSchedule::new(diff_cfg)?;
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;

    let snapshot = TrainSnapshot {
        train: cfg.clone(),
        unet: unet_cfg.clone(),
        diffusion: diff_cfg.clone(),
    };
    let snap_path = run_dir.join("train_config.toml");
    let snap_text = toml::to_string(&snapshot).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&snap_path, snap_text).map_err(|e| Error::io(&snap_path, e))?;
    let meta = serde_json::to_value(&snapshot).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut state = match resume {
        Some(path) => {
            let state = TrainState::from_checkpoint(load_checkpoint(path)?)?;
            if state.params.config != *unet_cfg {
                return Err(Error::Checkpoint(
                    "network config differs from the resumed checkpoint".into(),
                ));
            }
            log::info!("resuming from {} at step {}", path.display(), state.step());
            state
        }
        None => TrainState::new(init_params(unet_cfg, cfg.seed)?),
    };

    let log_path = run_dir.join("train_log.csv");
    let mut log_file = if resume.is_some() && log_path.exists() {
        OpenOptions::new().append(true).open(&log_path)
    } else {
        fs::File::create(&log_path).and_then(|mut f| writeln!(f, "step,loss,wall_ms").map(|_| f))
    }
    .map_err(|e| Error::io(&log_path, e))?;

    let mut order = BatchOrder::new(windows.len(), cfg.seed);
    let started = Instant::now();
    let mut last = checkpoint_path(run_dir, state.step());
    while state.step() < cfg.total_steps {
        let idx = order.batch(state.step(), cfg.batch_size);
        let batch: Vec<Array2<f64>> = idx.iter().map(|&i| windows[i].clone()).collect();
        let loss = train_step(&mut state, &net, &batch, &sched, cfg)?;
        let step = state.step();
        writeln!(log_file, "{step},{loss},{}", started.elapsed().as_millis()).map_err(|e| Error::io(&log_path, e))?;
        if step % 100 == 0 {
            log::info!("step {step}: loss {loss:.5}");
        }
        if step % cfg.checkpoint_every == 0 || step == cfg.total_steps {
            last = checkpoint_path(run_dir, step);
            save_checkpoint(&last, &state.to_checkpoint(meta.clone()))?;
        }
    }
    if !last.exists() {
        // resumed at or past the target step
        save_checkpoint(&last, &state.to_checkpoint(meta))?;
    }
    Ok(TrainOutcome {
        final_checkpoint: last,
        loss_history: state.loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(ema: f32, w: f32) -> DenoiserParams {
        let store = |v: f32| ParamStore {
            names: vec!["x".into()],
            shapes: vec![vec![1]],
            values: vec![vec![v]],
        };
        DenoiserParams {
            config: UNetConfig::tiny(),
            weights: store(w),
            ema: store(ema),
            step: 0,
        }
    }

    #[test]
    fn ema_hand_values() {
        let mut p = scalar_params(1.0, 0.0);
        ema_update(&mut p, 0.995);
        assert!((p.ema.values[0][0] - 0.995).abs() < 1e-7);
        let mut p = scalar_params(1.0, 0.25);
        ema_update(&mut p, 0.0);
        assert_eq!(p.ema.values[0][0], 0.25);
        let mut p = scalar_params(1.0, 0.25);
        ema_update(&mut p, 1.0);
        assert_eq!(p.ema.values[0][0], 1.0);
        let mut p = scalar_params(0.5, 0.5);
        ema_update(&mut p, 0.995);
        assert_eq!(p.ema.values[0][0], 0.5);
    }

    #[test]
    fn ema_converges_geometrically() {
        let rate = 0.9;
        let mut p = scalar_params(1.0, 0.0);
        for k in 1..=50 {
            ema_update(&mut p, rate);
            let bound = (rate as f32).powi(k) * 1.0;
            assert!(p.ema.values[0][0].abs() <= bound * (1.0 + 1e-5));
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = scalar_params(0.0, 0.3);
        let g = p.weights.zeros_like();
        let mut m = g.clone();
        let mut v = g.clone();
        for step in 1..5 {
            adam_update(&mut p.weights, &g, &mut m, &mut v, step, 1e-2);
        }
        assert_eq!(p.weights.values[0][0], 0.3);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // bias-corrected first step is lr * g / |g| for |g| >> eps
        let mut p = scalar_params(0.0, 0.0);
        let mut g = p.weights.zeros_like();
        g.values[0][0] = 0.5;
        let (mut m, mut v) = (g.zeros_like(), g.zeros_like());
        adam_update(&mut p.weights, &g, &mut m, &mut v, 1, 1e-3);
        assert!((p.weights.values[0][0] + 1e-3).abs() < 1e-8);
    }

    #[test]
    fn batch_order_covers_each_epoch_once() {
        let mut order = BatchOrder::new(10, 3);
        let mut seen: Vec<usize> = (0..5).flat_map(|s| order.batch(s, 2)).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let mut fresh = BatchOrder::new(10, 3);
        assert_eq!(fresh.batch(7, 3), order.batch(7, 3));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                ema_rate: 1.0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                grad_clip: Some(-1.0),
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
