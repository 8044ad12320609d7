//! Training behaviour of the denoiser on fixed windows.

use ndarray::Array2;

use diffad::diffusion::{DiffusionConfig, NoiseSchedule};
use diffad::nn::{init_params, UNet, UNetConfig};
use diffad::train::{train_step, TrainConfig, TrainState};

fn window(size: usize) -> Array2<f64> {
    Array2::from_shape_fn((size, size), |(r, c)| {
        let v = ((r as f64 * 0.7).sin() + (c as f64 * 0.3).cos()) * 0.25 + 0.5;
        v.clamp(0.0, 1.0)
    })
}

#[test]
fn untrained_loss_is_the_noise_variance() {
    // 10 windows of 32x32 give 10240 noise samples: the mean square of
    // unit-variance noise is 1 within a few percent
    let cfg = UNetConfig::toy();
    let net = UNet::new(&cfg).unwrap();
    let sched = NoiseSchedule::new(&DiffusionConfig::default()).unwrap();
    let batch = vec![window(32); 10];
    let mut state = TrainState::new(init_params(&cfg, 0).unwrap());
    let loss = train_step(&mut state, &net, &batch, &sched, &TrainConfig::default()).unwrap();
    assert!((loss - 1.0).abs() < 0.1, "step-0 loss {loss}");
}

#[test]
fn a_single_window_is_learned() {
    let cfg = UNetConfig::tiny();
    let net = UNet::new(&cfg).unwrap();
    let sched = NoiseSchedule::new(&DiffusionConfig::default()).unwrap();
    let batch = vec![window(16); 4];
    let train = TrainConfig {
        learning_rate: 1e-3,
        ..Default::default()
    };
    let mut state = TrainState::new(init_params(&cfg, 1).unwrap());
    for _ in 0..500 {
        train_step(&mut state, &net, &batch, &sched, &train).unwrap();
    }
    let h = &state.loss_history;
    let first = h[..50].iter().sum::<f64>() / 50.0;
    let last = h[h.len() - 50..].iter().sum::<f64>() / 50.0;
    assert!(last < 0.5 && last < first, "loss {first:.3} -> {last:.3}");
    assert!(state.params.is_finite());
}
