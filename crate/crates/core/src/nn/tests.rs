use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;

fn random_act(rng: &mut ChaCha8Rng, c: usize, n: usize, h: usize, w: usize) -> Act<f64> {
    let data = (0..c * n * h * w)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Act::from_vec(c, n, h, w, data)
}

/// Parameters with every tensor perturbed away from its init value so no
/// gradient is trivially zero.
fn randomized(net: &UNet, seed: u64) -> ParamStore<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::<f64>::init(net.param_specs(), seed);
    for v in p.values.iter_mut().flatten() {
        *v += 0.2 * rng.sample::<f64, _>(StandardNormal);
    }
    p
}

fn dot(a: &Act<f64>, b: &Act<f64>) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

#[test]
fn zero_output_conv_gives_zero_prediction() {
    let cfg = UNetConfig::tiny();
    let p = init_params(&cfg, 1).unwrap();
    let d = Denoiser::new(p, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_act(&mut rng, 1, 3, 16, 16).cast::<f32>();
    let out = d.forward(&x, &[1, 50, 999]).unwrap();
    assert_eq!((out.c, out.n, out.h, out.w), (1, 3, 16, 16));
    assert!(out.data.iter().all(|&v| v == 0.0));
}

#[test]
fn init_is_deterministic_per_seed() {
    let cfg = UNetConfig::tiny();
    assert_eq!(init_params(&cfg, 7).unwrap(), init_params(&cfg, 7).unwrap());
    assert_ne!(
        init_params(&cfg, 7).unwrap().weights,
        init_params(&cfg, 8).unwrap().weights
    );
}

#[test]
fn gradients_match_central_differences() {
    let net = UNet::new(&UNetConfig::tiny()).unwrap();
    let p = randomized(&net, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_act(&mut rng, 1, 2, 16, 16);
    let t = [3usize, 640];
    let proj = random_act(&mut rng, 1, 2, 16, 16);

    let (out, tape) = net.forward_tape(&p, &x, &t).unwrap();
    assert!(out.is_finite());
    let grads = net.backward(&p, &tape, &proj).unwrap();

    let loss = |p: &ParamStore<f64>| dot(&net.forward(p, &x, &t).unwrap(), &proj);
    let h = 1e-5;
    let mut checked = 0;
    let mut worst = 0.0f64;
    let mut mags = vec![];
    for (tensor, vals) in p.values.iter().enumerate() {
        let picks = 3.min(vals.len());
        for _ in 0..picks {
            let i = rng.gen_range(0..vals.len());
            let mut plus = p.clone();
            plus.values[tensor][i] += h;
            let mut minus = p.clone();
            minus.values[tensor][i] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = grads.values[tensor][i];
            // key biases have exactly zero gradient (softmax shift invariance), so
            // differences at the round-off floor count as agreement
            let diff = (numeric - analytic).abs();
            let rel = if diff < 1e-7 {
                0.0
            } else {
                diff / numeric.abs().max(analytic.abs())
            };
            mags.push(analytic.abs());
            worst = worst.max(diff);
            assert!(
                rel < 1e-4,
                "{}[{i}]: analytic {analytic} numeric {numeric}",
                p.names[tensor]
            );
            checked += 1;
        }
    }
    assert!(checked >= 100, "only {checked} weights checked");
    mags.sort_by(f64::total_cmp);
    assert!(
        mags[mags.len() / 2] > 1e-4,
        "median gradient magnitude {:.2e}",
        mags[mags.len() / 2]
    );
    eprintln!(
        "gradient check: {checked} weights, median |g| {:.2e}, worst absolute error {worst:.2e}",
        mags[mags.len() / 2]
    );
}

#[test]
fn zero_output_gradient_gives_zero_grads() {
    let net = UNet::new(&UNetConfig::tiny()).unwrap();
    let p = randomized(&net, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_act(&mut rng, 1, 1, 16, 16);
    let (_, tape) = net.forward_tape(&p, &x, &[10]).unwrap();
    let g = net.backward(&p, &tape, &Act::zeros(1, 1, 16, 16)).unwrap();
    assert!(g.values.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn backward_without_forward_is_an_error() {
    let net = UNet::new(&UNetConfig::tiny()).unwrap();
    let p = randomized(&net, 3);
    let mut session = GradSession::new(&net, &p);
    assert!(matches!(
        session.backward(&Act::zeros(1, 1, 16, 16)),
        Err(Error::NoForwardPass)
    ));
    let x = Act::zeros(1, 1, 16, 16);
    session.forward(&x, &[5]).unwrap();
    assert!(session.backward(&Act::zeros(1, 1, 16, 16)).is_ok());
    assert!(matches!(
        session.backward(&Act::zeros(1, 1, 16, 16)),
        Err(Error::NoForwardPass)
    ));
}

#[test]
fn shape_errors() {
    let net = UNet::new(&UNetConfig::tiny()).unwrap();
    let p = randomized(&net, 3);
    assert!(matches!(
        net.forward(&p, &Act::zeros(1, 1, 8, 8), &[1]),
        Err(Error::Shape(_))
    ));
    assert!(matches!(
        net.forward(&p, &Act::zeros(1, 2, 16, 16), &[1]),
        Err(Error::Shape(_))
    ));
}

#[test]
fn outputs_and_grads_stay_finite_on_large_inputs() {
    let net = UNet::new(&UNetConfig::tiny()).unwrap();
    let p = randomized(&net, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut x = random_act(&mut rng, 1, 2, 16, 16);
    for v in &mut x.data {
        *v = (*v * 10.0).clamp(-10.0, 10.0);
    }
    let (out, tape) = net.forward_tape(&p, &x, &[0, 1000]).unwrap();
    assert!(out.is_finite());
    let g = net.backward(&p, &tape, &out).unwrap();
    assert!(g.is_finite());
}

/// Parameter count from the block layout, written out independently of the
/// layer registration code.
fn expected_param_count(cfg: &UNetConfig) -> usize {
    let base = cfg.base_channels;
    let temb = cfg.time_embed_dim;
    let conv = |ci: usize, co: usize, k: usize| ci * co * k * k + co;
    let norm = |c: usize| 2 * c;
    let lin = |i: usize, o: usize| i * o + o;
    let res = |ci: usize, co: usize| {
        norm(ci)
            + conv(ci, co, 3)
            + lin(temb, co)
            + norm(co)
            + conv(co, co, 3)
            + if ci != co { conv(ci, co, 1) } else { 0 }
    };
    let attn = |c: usize| norm(c) + conv(c, 3 * c, 1) + conv(c, c, 1);
    let chans: Vec<usize> = cfg.channel_multipliers.iter().map(|m| m * base).collect();
    let res_at: Vec<usize> = (0..chans.len()).map(|i| cfg.input_size >> i).collect();
    let mut total = lin(base, temb) + lin(temb, temb) + conv(1, base, 3);
    let mut c = base;
    let mut skips = vec![];
    for (i, &co) in chans.iter().enumerate() {
        for _ in 0..2 {
            total += res(c, co);
            c = co;
            if cfg.attention_resolutions.contains(&res_at[i]) {
                total += attn(c);
            }
            skips.push(c);
        }
        if i + 1 < chans.len() {
            total += conv(c, c, 3);
        }
    }
    total += 2 * res(c, c) + attn(c);
    for (i, &co) in chans.iter().enumerate().rev() {
        for _ in 0..2 {
            total += res(c + skips.pop().unwrap(), co);
            c = co;
            if cfg.attention_resolutions.contains(&res_at[i]) {
                total += attn(c);
            }
        }
        if i > 0 {
            total += conv(c, c, 3);
        }
    }
    total + norm(c) + conv(c, 1, 3)
}

#[test]
fn parameter_counts_are_locked() {
    for cfg in [UNetConfig::default(), UNetConfig::toy(), UNetConfig::tiny()] {
        let net = UNet::new(&cfg).unwrap();
        assert_eq!(net.param_count(), expected_param_count(&cfg), "{cfg:?}");
    }
}

#[test]
fn config_validation_rejects_bad_layouts() {
    let mut cfg = UNetConfig::toy();
    cfg.attention_resolutions = vec![12];
    assert!(UNet::new(&cfg).is_err());
    let mut cfg = UNetConfig::toy();
    cfg.input_size = 30;
    assert!(UNet::new(&cfg).is_err());
    let mut cfg = UNetConfig::toy();
    cfg.groups_per_norm = 7;
    assert!(UNet::new(&cfg).is_err());
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    let mut params = init_params(&UNetConfig::tiny(), 4).unwrap();
    params.step = 17;
    params.ema.values[0][0] = f32::from_bits(0x3f80_0001);
    let ckpt = Checkpoint {
        moments: Some((params.weights.zeros_like(), params.weights.clone())),
        params,
        loss_history: vec![1.0, 0.5, f64::MIN_POSITIVE],
        meta: serde_json::json!({"note": "x"}),
    };
    save_checkpoint(&path, &ckpt).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.params.ema.values[0][0].to_bits(), 0x3f80_0001);

    std::fs::write(&path, b"garbage").unwrap();
    assert!(load_checkpoint(&path).is_err());
}
