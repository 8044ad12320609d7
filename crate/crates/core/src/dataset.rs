//! Dataset discovery (DCASE-style trees) and the synthetic desk corpus.
//!
//! Layout: `root/<machine_type>/{train,test}/<clip>.wav`, with clip names
//! following `section_{SS}_{domain}_{split}_{label}_{id}_{attrs...}.wav`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav_pcm16, Waveform};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, MelFilterbank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomaly,
    Unknown,
}

macro_rules! display_lowercase {
    ($($t:ty => [$($v:ident = $s:literal),*]),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s),* })
            }
        }
        impl std::str::FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$v),)*
                    other => Err(Error::Dataset(format!("unknown {} '{other}'", stringify!($t).to_lowercase()))),
                }
            }
        }
    )*};
}

display_lowercase! {
    Domain => [Source = "source", Target = "target"],
    Split => [Train = "train", Test = "test"],
    Label => [Normal = "normal", Anomaly = "anomaly", Unknown = "unknown"]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub clip_id: String,
    pub path: PathBuf,
    pub machine_type: String,
    pub section: String,
    pub domain: Domain,
    pub split: Split,
    pub label: Label,
}

/// Tokens recovered from a clip file name.
#[derive(Debug, Clone, PartialEq)]
pub struct NameTokens {
    pub section: Option<String>,
    pub domain: Option<Domain>,
    pub split: Option<Split>,
    pub label: Label,
}

/// Parses `section_{SS}_{domain}_{split}_{label}_{id}_{attrs}`; tokens may be
/// missing or reordered, extra attribute tokens are ignored.
pub fn parse_clip_name(stem: &str) -> NameTokens {
    let tokens: Vec<&str> = stem.split('_').collect();
    let mut out = NameTokens {
        section: None,
        domain: None,
        split: None,
        label: Label::Unknown,
    };
    for (i, tok) in tokens.iter().enumerate() {
        match *tok {
            "section" => out.section = tokens.get(i + 1).map(|s| s.to_string()),
            "source" => out.domain = Some(Domain::Source),
            "target" => out.domain = Some(Domain::Target),
            "train" => out.split = Some(Split::Train),
            "test" => out.split = Some(Split::Test),
            "normal" => out.label = Label::Normal,
            "anomaly" => out.label = Label::Anomaly,
            _ => {}
        }
    }
    out
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Walks `root/<machine_type>/{train,test}/*.wav` in sorted order.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<Vec<ClipMeta>> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Dataset(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut clips = Vec::new();
    for machine_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let machine_type = machine_dir
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let mut found_split = false;
        for split in [Split::Train, Split::Test] {
            let dir = machine_dir.join(split.to_string());
            if !dir.is_dir() {
                continue;
            }
            found_split = true;
            for path in sorted_entries(&dir)? {
                if path.extension().and_then(|e| e.to_str()) != Some("wav") {
                    continue;
                }
                let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let tokens = parse_clip_name(&stem);
                if tokens.split.is_some_and(|s| s != split) {
                    log::warn!(
                        "{}: split token disagrees with directory; using '{split}'",
                        path.display()
                    );
                }
                let label = match (split, tokens.label) {
                    (Split::Train, Label::Anomaly) => {
                        return Err(Error::Dataset(format!(
                            "{}: training clip labeled anomaly",
                            path.display()
                        )))
                    }
                    // training data is normal by construction
                    (Split::Train, _) => Label::Normal,
                    (Split::Test, Label::Unknown) => {
                        log::warn!("{}: no normal/anomaly token; label unknown", path.display());
                        Label::Unknown
                    }
                    (_, l) => l,
                };
                let domain = tokens.domain.unwrap_or_else(|| {
                    log::warn!("{}: no domain token; assuming source", path.display());
                    Domain::Source
                });
                clips.push(ClipMeta {
                    clip_id: stem,
                    path,
                    machine_type: machine_type.clone(),
                    section: tokens.section.unwrap_or_else(|| "00".into()),
                    domain,
                    split,
                    label,
                });
            }
        }
        if !found_split {
            return Err(Error::Dataset(format!(
                "{} has neither train/ nor test/",
                machine_dir.display()
            )));
        }
    }
    if clips.is_empty() {
        return Err(Error::Dataset(format!("no clips under {}", root.display())));
    }
    Ok(clips)
}

pub fn write_manifest(path: impl AsRef<Path>, clips: &[ClipMeta]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for c in clips {
        w.serialize(c)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ClipMeta>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::Dataset(format!("manifest {} not found", path.display())));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    AddedTone,
    DroppedBand,
    TransientClick,
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AddedTone => "added_tone",
            Self::DroppedBand => "dropped_band",
            Self::TransientClick => "transient_click",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub machine_type: String,
    pub n_normal_train: usize,
    pub n_normal_test: usize,
    pub n_anomaly_test: usize,
    pub base_tones: Vec<f64>,
    pub anomaly_kind: AnomalyKind,
    /// Standard deviation of the additive Gaussian floor.
    pub noise_floor: f64,
    pub seed: u64,
    pub sample_rate: u32,
    pub duration_secs: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            machine_type: "synth".into(),
            n_normal_train: 100,
            n_normal_test: 20,
            n_anomaly_test: 20,
            base_tones: vec![300.0, 1000.0, 2400.0],
            anomaly_kind: AnomalyKind::AddedTone,
            noise_floor: 0.01,
            seed: 0,
            sample_rate: 16_000,
            duration_secs: 2.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_normal_train == 0 || self.n_normal_test == 0 || self.n_anomaly_test == 0 {
            return Err(Error::Config("synthetic clip counts must be >= 1".into()));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.base_tones.is_empty() || self.base_tones.iter().any(|&f| !(f > 0.0 && f < nyquist)) {
            return Err(Error::Config(format!("base tones must lie in (0, {nyquist}) Hz")));
        }
        if !(self.noise_floor >= 0.0) || !(self.duration_secs > 0.0) {
            return Err(Error::Config("noise_floor must be >= 0 and duration > 0".into()));
        }
        Ok(())
    }

    fn n_samples(&self) -> usize {
        (self.duration_secs * self.sample_rate as f64).round() as usize
    }
}

/// Time-frequency support of an injected perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyTruth {
    pub clip_id: String,
    pub kind: AnomalyKind,
    pub freq_lo: f64,
    pub freq_hi: f64,
    pub start_s: f64,
    pub end_s: f64,
}

/// A normal clip and, for anomaly indices, the same clip with its perturbation.
#[derive(Debug, Clone)]
pub struct SynthPair {
    pub normal: Vec<f32>,
    pub anomalous: Option<(Vec<f32>, AnomalyTruth)>,
}

// half-width of the band around a tone treated as its support
pub const TONE_HALF_WIDTH_HZ: f64 = 80.0;
const DROP_HALF_WIDTH_HZ: f64 = 150.0;
const CLICK_PERIOD_S: f64 = 0.25;
const CLICK_LEN_S: f64 = 0.004;
const FADE_S: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Train,
    TestNormal,
    TestAnomaly,
}

fn clip_rng(seed: u64, role: Role, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ index as u64);
    rng.set_stream(role as u64 + 1);
    rng
}

fn normal_clip(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = spec.n_samples();
    let sr = spec.sample_rate as f64;
    let mut x = vec![0.0; n];
    for &f in &spec.base_tones {
        let amp = 0.15 * (1.0 + 0.1 * rng.gen_range(-1.0..1.0));
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for (i, v) in x.iter_mut().enumerate() {
            *v += amp * (std::f64::consts::TAU * f * i as f64 / sr + phase).sin();
        }
    }
    for v in &mut x {
        *v += spec.noise_floor * rng.sample::<f64, _>(StandardNormal);
    }
    x
}

/// A frequency at least 250 Hz away from every base tone, in 200..4000 Hz.
fn unused_frequency(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let f = rng.gen_range(200.0..4000.0);
        if spec.base_tones.iter().all(|&b| (b - f).abs() > 250.0) {
            return f;
        }
    }
}

fn fade(i: usize, start: usize, end: usize, ramp: usize) -> f64 {
    let from_start = (i - start) as f64 / ramp as f64;
    let to_end = (end - i) as f64 / ramp as f64;
    from_start.min(to_end).min(1.0)
}

fn perturb(spec: &SynthSpec, normal: &[f64], rng: &mut ChaCha8Rng, clip_id: &str) -> (Vec<f64>, AnomalyTruth) {
    let sr = spec.sample_rate as f64;
    let n = normal.len();
    let dur = n as f64 / sr;
    let mut x = normal.to_vec();
    let truth = match spec.anomaly_kind {
        AnomalyKind::AddedTone => {
            let f = unused_frequency(spec, rng);
            let len_s = rng.gen_range(0.35..0.6) * dur;
            let start_s = rng.gen_range(0.05 * dur..0.95 * dur - len_s);
            let (start, end) = ((start_s * sr) as usize, (((start_s + len_s) * sr) as usize).min(n));
            let ramp = ((FADE_S * sr) as usize).max(1);
            let amp = 0.15;
            for i in start..end {
                x[i] += amp * fade(i, start, end, ramp) * (std::f64::consts::TAU * f * i as f64 / sr).sin();
            }
            AnomalyTruth {
                clip_id: clip_id.into(),
                kind: spec.anomaly_kind,
                freq_lo: f - TONE_HALF_WIDTH_HZ,
                freq_hi: f + TONE_HALF_WIDTH_HZ,
                start_s: start as f64 / sr,
                end_s: end as f64 / sr,
            }
        }
        AnomalyKind::DroppedBand => {
            let f = spec.base_tones[rng.gen_range(0..spec.base_tones.len())];
            let (lo, hi) = (f - DROP_HALF_WIDTH_HZ, f + DROP_HALF_WIDTH_HZ);
            notch(&mut x, sr, lo, hi);
            AnomalyTruth {
                clip_id: clip_id.into(),
                kind: spec.anomaly_kind,
                freq_lo: lo,
                freq_hi: hi,
                start_s: 0.0,
                end_s: dur,
            }
        }
        AnomalyKind::TransientClick => {
            let offset = rng.gen_range(0.0..CLICK_PERIOD_S);
            let click = ((CLICK_LEN_S * sr) as usize).max(1);
            let mut first = None;
            let mut last = 0;
            let mut t = offset;
            while t + CLICK_LEN_S < dur {
                let s = (t * sr) as usize;
                for j in 0..click {
                    // decaying alternating impulse: broadband energy
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    x[s + j] += 0.5 * sign * (-(j as f64) / (click as f64 / 4.0)).exp();
                }
                first.get_or_insert(s);
                last = s + click;
                t += CLICK_PERIOD_S;
            }
            AnomalyTruth {
                clip_id: clip_id.into(),
                kind: spec.anomaly_kind,
                freq_lo: 0.0,
                freq_hi: sr / 2.0,
                start_s: first.unwrap_or(0) as f64 / sr,
                end_s: last as f64 / sr,
            }
        }
    };
    (x, truth)
}

/// Zeroes all spectral content in `[lo, hi]` Hz over the whole clip.
fn notch(x: &mut [f64], sr: f64, lo: f64, hi: f64) {
    let n = x.len();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * sr / n as f64;
        if f >= lo && f <= hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    ifft.process(&mut buf);
    for (v, c) in x.iter_mut().zip(&buf) {
        *v = c.re / n as f64;
    }
}

fn clip_name(section: &str, domain: Domain, split: Split, label: Label, index: usize) -> String {
    format!("section_{section}_{domain}_{split}_{label}_{index:04}_synth")
}

fn test_domain(index: usize) -> Domain {
    if index.is_multiple_of(2) {
        Domain::Source
    } else {
        Domain::Target
    }
}

/// Deterministic generation of clip `index` in a role.
fn synth_clip(spec: &SynthSpec, role: Role, index: usize, clip_id: &str) -> SynthPair {
    let mut rng = clip_rng(spec.seed, role, index);
    let normal = normal_clip(spec, &mut rng);
    let anomalous = (role == Role::TestAnomaly).then(|| {
        let (x, truth) = perturb(spec, &normal, &mut rng, clip_id);
        (to_f32(&x), truth)
    });
    SynthPair {
        normal: to_f32(&normal),
        anomalous,
    }
}

fn to_f32(x: &[f64]) -> Vec<f32> {
    x.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect()
}

/// The `index`-th anomalous test clip together with the normal clip it was
/// derived from.
pub fn synth_anomaly_pair(spec: &SynthSpec, index: usize) -> SynthPair {
    let id = clip_name("00", test_domain(index), Split::Test, Label::Anomaly, index);
    synth_clip(spec, Role::TestAnomaly, index, &id)
}

/// Output of [`synth_generate`].
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub clips: Vec<ClipMeta>,
    pub truth: Vec<AnomalyTruth>,
    pub manifest_path: PathBuf,
}

/// Writes the corpus under `out/<machine_type>/{train,test}` plus
/// `out/manifest.csv` and `out/anomaly_truth.csv`.
///
/// Training clips depend only on `(seed, index)`, so corpora that differ in
/// anomaly kind share the same normal training set.
pub fn synth_generate(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<SynthCorpus> {
    spec.validate()?;
    let out = out.as_ref();
    let mdir = out.join(&spec.machine_type);
    let mut clips = Vec::new();
    let mut truth = Vec::new();
    let jobs = (0..spec.n_normal_train)
        .map(|i| (Role::Train, i))
        .chain((0..spec.n_normal_test).map(|i| (Role::TestNormal, i)))
        .chain((0..spec.n_anomaly_test).map(|i| (Role::TestAnomaly, i)));
    for (role, i) in jobs {
        let (domain, split, label) = match role {
            Role::Train => (Domain::Source, Split::Train, Label::Normal),
            Role::TestNormal => (test_domain(i), Split::Test, Label::Normal),
            Role::TestAnomaly => (test_domain(i), Split::Test, Label::Anomaly),
        };
        let clip_id = clip_name("00", domain, split, label, i);
        let pair = synth_clip(spec, role, i, &clip_id);
        let samples = match pair.anomalous {
            Some((x, t)) => {
                truth.push(t);
                x
            }
            None => pair.normal,
        };
        let dir = mdir.join(split.to_string());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{clip_id}.wav"));
        write_wav_pcm16(&path, &Waveform::new(samples, spec.sample_rate)?)?;
        clips.push(ClipMeta {
            clip_id,
            path,
            machine_type: spec.machine_type.clone(),
            section: "00".into(),
            domain,
            split,
            label,
        });
    }
    let manifest_path = out.join("manifest.csv");
    write_manifest(&manifest_path, &clips)?;
    let truth_path = out.join("anomaly_truth.csv");
    let mut w = csv::Writer::from_path(&truth_path)?;
    for t in &truth {
        w.serialize(t)?;
    }
    w.flush().map_err(|e| Error::io(&truth_path, e))?;
    Ok(SynthCorpus {
        clips,
        truth,
        manifest_path,
    })
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<AnomalyTruth>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Boolean mel x frame mask of the perturbation: filters whose support meets
/// the truth band, frames whose analysis window overlaps the truth interval.
pub fn truth_mask(truth: &AnomalyTruth, cfg: &FeatureConfig, n_frames: usize) -> Array2<bool> {
    let fb = MelFilterbank::new(cfg);
    let (win, hop, sr) = (
        cfg.win_samples() as f64,
        cfg.hop_samples() as f64,
        cfg.sample_rate as f64,
    );
    Array2::from_shape_fn((cfg.n_mels, n_frames), |(m, t)| {
        let (lo, hi) = fb.support_hz(m);
        let f_hit = hi > truth.freq_lo && lo < truth.freq_hi;
        let (t0, t1) = (t as f64 * hop / sr, (t as f64 * hop + win) / sr);
        f_hit && t1 > truth.start_s && t0 < truth.end_s
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filename_grammar() {
        let t = parse_clip_name("section_00_source_train_normal_0001_noAttribute");
        assert_eq!(t.section.as_deref(), Some("00"));
        assert_eq!(
            (t.domain, t.split, t.label),
            (Some(Domain::Source), Some(Split::Train), Label::Normal)
        );
        let t = parse_clip_name("section_00_target_test_anomaly_0005_x");
        assert_eq!(
            (t.domain, t.split, t.label),
            (Some(Domain::Target), Some(Split::Test), Label::Anomaly)
        );
        let t = parse_clip_name("section_01_source_test_0007");
        assert_eq!(t.label, Label::Unknown);
        assert_eq!(t.section.as_deref(), Some("01"));
    }

    #[test]
    fn enum_roundtrip() {
        for d in [Domain::Source, Domain::Target] {
            assert_eq!(d.to_string().parse::<Domain>().unwrap(), d);
        }
        assert!("sideways".parse::<Domain>().is_err());
        assert_eq!("anomaly".parse::<Label>().unwrap(), Label::Anomaly);
    }

    #[test]
    fn scan_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(scan_dataset(dir.path().join("missing")).is_err());
        assert!(scan_dataset(dir.path()).is_err());
        fs::create_dir_all(dir.path().join("fan/other")).unwrap();
        assert!(scan_dataset(dir.path()).is_err());
    }

    #[test]
    fn notch_removes_band() {
        let sr = 16_000.0;
        let mut x: Vec<f64> = (0..16_000)
            .map(|i| {
                (std::f64::consts::TAU * 1000.0 * i as f64 / sr).sin()
                    + (std::f64::consts::TAU * 3000.0 * i as f64 / sr).sin()
            })
            .collect();
        notch(&mut x, sr, 900.0, 1100.0);
        let expect: Vec<f64> = (0..16_000)
            .map(|i| (std::f64::consts::TAU * 3000.0 * i as f64 / sr).sin())
            .collect();
        let err = x.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec::default().validate().is_ok());
        let bad = SynthSpec {
            base_tones: vec![9000.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthSpec {
            n_anomaly_test: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
