//! Log-mel filterbank extraction and sliding-window segmentation.

use std::sync::Arc;

use ndarray::{s, Array2};
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Floor added before the log so silent bins stay finite.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            fft_size: 1024,
            win_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 128,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

impl FeatureConfig {
    pub fn win_samples(&self) -> usize {
        (self.win_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    /// Number of STFT frames for a signal of `len` samples (no centering).
    pub fn n_frames(&self, len: usize) -> usize {
        let win = self.win_samples();
        if len < win {
            0
        } else {
            (len - win) / self.hop_samples() + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("features: {m}")));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if self.win_samples() == 0 || self.hop_samples() == 0 {
            return bad("window and hop must span at least one sample");
        }
        if self.win_samples() > self.fft_size {
            return bad("analysis window longer than fft_size");
        }
        if self.n_mels == 0 {
            return bad("n_mels must be positive");
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return bad("need 0 <= fmin < fmax <= nyquist");
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters with unit peak height (no area normalization).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels + 2` filter edge frequencies in Hz.
    edges_hz: Vec<f64>,
    /// Dense `n_mels x (fft_size / 2 + 1)` weight matrix.
    weights: Array2<f64>,
    bin_hz: f64,
}

impl MelFilterbank {
    pub fn new(cfg: &FeatureConfig) -> Self {
        let n_bins = cfg.fft_size / 2 + 1;
        let lo = hz_to_mel(cfg.fmin);
        let hi = hz_to_mel(cfg.fmax);
        let step = (hi - lo) / (cfg.n_mels + 1) as f64;
        let edges_hz: Vec<f64> = (0..cfg.n_mels + 2).map(|i| mel_to_hz(lo + step * i as f64)).collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        let mut weights = Array2::zeros((cfg.n_mels, n_bins));
        for m in 0..cfg.n_mels {
            for k in 0..n_bins {
                weights[[m, k]] = triangle(&edges_hz[m..m + 3], k as f64 * bin_hz);
            }
        }
        Self {
            edges_hz,
            weights,
            bin_hz,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        self.edges_hz[m + 1]
    }

    /// (left, right) support of filter `m` in Hz.
    pub fn support_hz(&self, m: usize) -> (f64, f64) {
        (self.edges_hz[m], self.edges_hz[m + 2])
    }

    /// Response of filter `m` to a frequency, interpolated continuously.
    pub fn response(&self, m: usize, hz: f64) -> f64 {
        triangle(&self.edges_hz[m..m + 3], hz)
    }

    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }
}

fn triangle(edges: &[f64], f: f64) -> f64 {
    let (l, c, r) = (edges[0], edges[1], edges[2]);
    if f > l && f < c {
        (f - l) / (c - l)
    } else if f == c {
        1.0
    } else if f > c && f < r {
        (r - f) / (r - c)
    } else {
        0.0
    }
}

/// Normalized `n_mels x n_frames` log-mel matrix for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FBankFeature {
    pub values: Array2<f64>,
    pub clip_id: String,
}

impl FBankFeature {
    pub fn new(values: Array2<f64>, clip_id: impl Into<String>) -> Self {
        Self {
            values,
            clip_id: clip_id.into(),
        }
    }

    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Reusable extractor: owns the FFT plan, Hann window and filterbank.
pub struct FbankExtractor {
    cfg: FeatureConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bank: MelFilterbank,
}

impl std::fmt::Debug for FbankExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FbankExtractor").field("cfg", &self.cfg).finish()
    }
}

impl FbankExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        let n = cfg.win_samples();
        // periodic Hann
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let bank = MelFilterbank::new(&cfg);
        Ok(Self { cfg, fft, window, bank })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    /// `n_bins x n_frames` STFT magnitude.
    pub fn magnitude(&self, w: &Waveform) -> Result<Array2<f64>> {
        if w.sample_rate != self.cfg.sample_rate {
            return Err(Error::SampleRateMismatch {
                found: w.sample_rate,
                expected: self.cfg.sample_rate,
            });
        }
        let win = self.cfg.win_samples();
        let hop = self.cfg.hop_samples();
        if w.len() < win {
            return Err(Error::ClipTooShort {
                samples: w.len(),
                required: win,
            });
        }
        let n_frames = self.cfg.n_frames(w.len());
        let n_fft = self.cfg.fft_size;
        let n_bins = n_fft / 2 + 1;
        let mut out = Array2::zeros((n_bins, n_frames));
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for f in 0..n_frames {
            let frame = &w.samples[f * hop..f * hop + win];
            for (slot, (&x, &h)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(x as f64 * h, 0.0);
            }
            for slot in &mut buf[win..] {
                *slot = Complex::new(0.0, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..n_bins {
                out[[k, f]] = buf[k].norm();
            }
        }
        Ok(out)
    }

    /// Log-mel energies before normalization.
    pub fn log_mel(&self, w: &Waveform) -> Result<Array2<f64>> {
        let mag = self.magnitude(w)?;
        let mel = self.bank.weights().dot(&mag);
        Ok(mel.mapv(|v| (v + LOG_FLOOR).ln()))
    }

    pub fn extract(&self, w: &Waveform, clip_id: impl Into<String>) -> Result<FBankFeature> {
        let mut values = self.log_mel(w)?;
        min_max_normalize(&mut values);
        Ok(FBankFeature::new(values, clip_id))
    }
}

/// Magnitude STFT -> HTK mel projection -> natural log -> per-clip min-max.
pub fn extract_fbank(w: &Waveform, cfg: &FeatureConfig) -> Result<FBankFeature> {
    FbankExtractor::new(cfg.clone())?.extract(w, "")
}

/// Rescales to [0, 1]; a constant matrix maps to all zeros.
pub fn min_max_normalize(values: &mut Array2<f64>) {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        values.fill(0.0);
        return;
    }
    values.mapv_inplace(|v| (v - lo) / range);
}

/// Square patches cut along time from one clip's feature.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub windows: Vec<Array2<f64>>,
    pub origin_frames: Vec<usize>,
    pub clip_id: String,
    /// Frame count of the source feature before padding.
    pub n_frames: usize,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn window_size(&self) -> usize {
        self.windows.first().map_or(0, |w| w.nrows())
    }
}

/// Start frames of the windows covering `n_frames`. The last window may run
/// past the end; those frames are reflect-padded.
pub fn window_origins(n_frames: usize, window: usize, hop: usize) -> Vec<usize> {
    if n_frames <= window {
        return vec![0];
    }
    let mut origins: Vec<usize> = (0..=(n_frames - window) / hop).map(|i| i * hop).collect();
    let last = *origins.last().unwrap();
    if last + window < n_frames {
        origins.push(last + hop);
    }
    origins
}

/// Index into `0..len` for position `j` under whole-sample reflection
/// (edge sample not repeated), applied periodically for long pads.
pub(crate) fn reflect_index(j: usize, len: usize) -> usize {
    if len <= 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = j % period;
    if m < len {
        m
    } else {
        period - m
    }
}

pub fn slide_windows(f: &FBankFeature, window: usize, hop: usize) -> Result<WindowBatch> {
    if window == 0 || hop == 0 {
        return Err(Error::Config("window and hop must be positive".into()));
    }
    if window != f.n_mels() {
        return Err(Error::Shape(format!(
            "window height {window} must equal mel dimension {}",
            f.n_mels()
        )));
    }
    let t = f.n_frames();
    if t == 0 {
        return Err(Error::Empty("feature has no frames".into()));
    }
    let origins = window_origins(t, window, hop);
    let windows = origins
        .iter()
        .map(|&o| {
            if o + window <= t {
                f.values.slice(s![.., o..o + window]).to_owned()
            } else {
                let mut w = Array2::zeros((window, window));
                for c in 0..window {
                    let src = reflect_index(o + c, t);
                    w.column_mut(c).assign(&f.values.column(src));
                }
                w
            }
        })
        .collect();
    Ok(WindowBatch {
        windows,
        origin_frames: origins,
        clip_id: f.clip_id.clone(),
        n_frames: t,
    })
}

/// Averages (possibly overlapping) windows back onto the clip's time axis,
/// dropping padded frames.
pub fn overlap_average(windows: &[Array2<f64>], origins: &[usize], n_frames: usize) -> Result<Array2<f64>> {
    if windows.is_empty() || windows.len() != origins.len() {
        return Err(Error::Shape("windows and origins must be non-empty and aligned".into()));
    }
    let (rows, width) = windows[0].dim();
    let mut sum = Array2::<f64>::zeros((rows, n_frames));
    let mut count = vec![0usize; n_frames];
    for (w, &o) in windows.iter().zip(origins) {
        if w.dim() != (rows, width) {
            return Err(Error::Shape("windows differ in size".into()));
        }
        for c in 0..width {
            let frame = o + c;
            if frame >= n_frames {
                break;
            }
            let mut col = sum.column_mut(frame);
            col += &w.column(c);
            count[frame] += 1;
        }
    }
    for (frame, &n) in count.iter().enumerate() {
        if n == 0 {
            return Err(Error::Shape(format!("frame {frame} not covered by any window")));
        }
        sum.column_mut(frame).mapv_inplace(|v| v / n as f64);
    }
    Ok(sum)
}
