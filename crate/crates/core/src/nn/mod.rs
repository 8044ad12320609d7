//! The noise-prediction network and its parameters.

mod checkpoint;
mod layers;
mod params;
mod tensor;
mod unet;

use ndarray::Array2;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use params::{Grads, Init, ParamId, ParamSpec, ParamStore};
pub use tensor::{gemm, Act, MatMut, MatRef, Real};
pub use unet::{GradSession, Tape, UNet, UNetConfig};

use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};

/// Trainable weights, their EMA shadow and the training-step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: UNetConfig,
    pub weights: ParamStore<f32>,
    pub ema: ParamStore<f32>,
    pub step: u64,
}

impl DenoiserParams {
    pub fn active(&self, use_ema: bool) -> &ParamStore<f32> {
        if use_ema {
            &self.ema
        } else {
            &self.weights
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.ema.is_finite()
    }
}

/// Seeded initialization: fan-in scaled normal weights, zero biases, unit
/// norm gains and a zero output convolution. The EMA starts equal to the
/// weights.
pub fn init_params(cfg: &UNetConfig, seed: u64) -> Result<DenoiserParams> {
    let net = UNet::new(cfg)?;
    let weights = ParamStore::init(net.param_specs(), seed);
    Ok(DenoiserParams {
        config: cfg.clone(),
        ema: weights.clone(),
        weights,
        step: 0,
    })
}

/// Stacks equally sized windows into a `[1, N, W, W]` activation.
pub fn windows_to_act<T: Real>(windows: &[Array2<f64>]) -> Result<Act<T>> {
    let (h, w) = windows
        .first()
        .map(|x| x.dim())
        .ok_or_else(|| Error::Empty("no windows".into()))?;
    let mut data = Vec::with_capacity(windows.len() * h * w);
    for win in windows {
        if win.dim() != (h, w) {
            return Err(Error::Shape("windows differ in size".into()));
        }
        data.extend(win.iter().map(|&v| T::lit(v)));
    }
    Ok(Act::from_vec(1, windows.len(), h, w, data))
}

pub fn act_to_windows<T: Real>(act: &Act<T>) -> Vec<Array2<f64>> {
    act.data
        .chunks_exact(act.hw())
        .map(|chunk| {
            Array2::from_shape_vec((act.h, act.w), chunk.iter().map(|v| v.to_f64().unwrap()).collect())
                .expect("chunk matches plane size")
        })
        .collect()
}

/// Network plus parameters, usable as the reverse-process noise model.
#[derive(Debug, Clone)]
pub struct Denoiser {
    net: UNet,
    params: DenoiserParams,
    use_ema: bool,
}

impl Denoiser {
    pub fn new(params: DenoiserParams, use_ema: bool) -> Result<Self> {
        let net = UNet::new(&params.config)?;
        net.check_params(&params.weights)?;
        net.check_params(&params.ema)?;
        Ok(Self { net, params, use_ema })
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn params(&self) -> &DenoiserParams {
        &self.params
    }

    pub fn forward(&self, x_t: &Act<f32>, t: &[usize]) -> Result<Act<f32>> {
        forward(&self.net, &self.params, x_t, t, self.use_ema)
    }
}

/// eps_hat for a batch of single-channel inputs.
pub fn forward(net: &UNet, p: &DenoiserParams, x_t: &Act<f32>, t: &[usize], use_ema: bool) -> Result<Act<f32>> {
    net.forward(p.active(use_ema), x_t, t)
}

impl NoisePredictor for Denoiser {
    fn predict_noise(&self, x_t: &[Array2<f64>], t: usize) -> Result<Vec<Array2<f64>>> {
        let x = windows_to_act::<f32>(x_t)?;
        let ts = vec![t; x.n];
        let out = self.forward(&x, &ts)?;
        Ok(act_to_windows(&out))
    }
}

#[cfg(test)]
mod tests;
