//! Log-mel filterbank of a synthetic two-tone clip and its sliding windows.
//!
//! cargo run --release --example features

use diffad::audio::Waveform;
use diffad::features::{slide_windows, FbankExtractor, FeatureConfig};

fn main() -> diffad::Result<()> {
    let cfg = FeatureConfig::default();
    let sr = cfg.sample_rate as f64;
    let samples: Vec<f32> = (0..(2.0 * sr) as usize)
        .map(|i| {
            let t = i as f64 / sr;
            (0.3 * (std::f64::consts::TAU * 440.0 * t).sin() + 0.1 * (std::f64::consts::TAU * 2500.0 * t).sin()) as f32
        })
        .collect();
    let wave = Waveform::new(samples, cfg.sample_rate)?;
    let extractor = FbankExtractor::new(cfg.clone())?;
    let fbank = extractor.extract(&wave, "two_tones")?;
    println!(
        "{} samples -> {} mel bins x {} frames (window {} samples, hop {})",
        wave.len(),
        fbank.n_mels(),
        fbank.n_frames(),
        cfg.win_samples(),
        cfg.hop_samples()
    );

    // spectral peaks: mel bins louder than both neighbours
    let energy: Vec<f64> = fbank.values.rows().into_iter().map(|r| r.mean().unwrap()).collect();
    let mut peaks: Vec<usize> = (1..energy.len() - 1)
        .filter(|&m| energy[m] > energy[m - 1] && energy[m] > energy[m + 1])
        .collect();
    peaks.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]));
    for &m in &peaks[..2] {
        let fb = extractor.filterbank();
        println!(
            "  peak at mel bin {m:>3} (centre {:>6.0} Hz), mean level {:.3}",
            fb.center_hz(m),
            energy[m]
        );
    }

    for hop in [128, 5] {
        let w = slide_windows(&fbank, cfg.n_mels, hop)?;
        println!(
            "hop {hop:>3}: {} windows of {}x{}",
            w.len(),
            w.window_size(),
            w.window_size()
        );
    }
    Ok(())
}
