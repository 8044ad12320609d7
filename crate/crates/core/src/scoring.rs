//! Anomaly scores from original/reconstruction pairs: MAE and the anomalies
//! filter (TopK over optionally rectified residuals), clip aggregation and the
//! cached-residual parameter sweep.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::diffusion::{reconstruct_batch, DiffusionConfig, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::eval::{evaluate, AucConvention, ScoreRecord};
use crate::features::{overlap_average, slide_windows, FBankFeature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    Mae,
    Af,
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mae => "mae",
            Self::Af => "af",
        })
    }
}

/// How window scores combine into the clip score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AfParams {
    pub k_fraction: f64,
    pub use_relu: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AFConfig {
    pub k_fraction: f64,
    pub use_relu: bool,
    /// Per-machine-type overrides.
    pub per_machine: BTreeMap<String, AfParams>,
}

impl Default for AFConfig {
    fn default() -> Self {
        Self {
            k_fraction: 0.1,
            use_relu: false,
            per_machine: BTreeMap::new(),
        }
    }
}

fn check_k(k: f64) -> Result<()> {
    if k > 0.0 && k <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("k_fraction must be in (0, 1], got {k}")))
    }
}

impl AFConfig {
    pub fn validate(&self) -> Result<()> {
        check_k(self.k_fraction)?;
        self.per_machine.values().try_for_each(|p| check_k(p.k_fraction))
    }

    pub fn params(&self) -> AfParams {
        AfParams {
            k_fraction: self.k_fraction,
            use_relu: self.use_relu,
        }
    }

    pub fn for_machine(&self, machine_type: &str) -> AfParams {
        self.per_machine
            .get(machine_type)
            .copied()
            .unwrap_or_else(|| self.params())
    }
}

/// Residual and its anomalies-filter image for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    /// x - x_hat.
    pub residual: Array2<f64>,
    /// Activated residual on the TopK pixels, zero elsewhere.
    pub filtered: Array2<f64>,
    pub window_origin: usize,
}

/// Number of pixels kept: round(k_fraction * n), at least one.
pub fn topk_count(k_fraction: f64, n: usize) -> usize {
    ((k_fraction * n as f64).round() as usize).clamp(1, n.max(1))
}

fn check_shapes(x: &Array2<f64>, xhat: &Array2<f64>) -> Result<()> {
    if x.dim() != xhat.dim() {
        return Err(Error::Shape(format!(
            "original {:?} vs reconstruction {:?}",
            x.dim(),
            xhat.dim()
        )));
    }
    if x.is_empty() {
        return Err(Error::Empty("zero-pixel window".into()));
    }
    Ok(())
}

fn activate(r: f64, use_relu: bool) -> f64 {
    if use_relu {
        r.max(0.0)
    } else {
        r.abs()
    }
}

/// Score and map from a precomputed residual `x - x_hat`.
///
/// The selected values are summed largest-first so the result is independent
/// of pixel order.
pub fn af_from_residual(residual: &Array2<f64>, af: AfParams, window_origin: usize) -> Result<(f64, AnomalyMap)> {
    check_k(af.k_fraction)?;
    if residual.is_empty() {
        return Err(Error::Empty("zero-pixel window".into()));
    }
    let d: Vec<f64> = residual.iter().map(|&r| activate(r, af.use_relu)).collect();
    let n = d.len();
    let k = topk_count(af.k_fraction, n);
    let mut idx: Vec<usize> = (0..n).collect();
    let by_value_desc = |a: &usize, b: &usize| d[*b].total_cmp(&d[*a]).then(a.cmp(b));
    if k < n {
        idx.select_nth_unstable_by(k - 1, by_value_desc);
    }
    let top = &mut idx[..k];
    top.sort_unstable_by(by_value_desc);
    let score = top.iter().map(|&i| d[i]).sum::<f64>() / n as f64;
    let mut filtered = Array2::zeros(residual.dim());
    let cols = residual.ncols();
    for &i in top.iter() {
        filtered[(i / cols, i % cols)] = d[i];
    }
    Ok((
        score,
        AnomalyMap {
            residual: residual.clone(),
            filtered,
            window_origin,
        },
    ))
}

/// S = (1/FT) * sum of the k largest activated residuals, where activation is
/// ReLU(x - x_hat) or |x - x_hat|.
pub fn af_score(x: &Array2<f64>, xhat: &Array2<f64>, af: AfParams) -> Result<(f64, AnomalyMap)> {
    check_shapes(x, xhat)?;
    af_from_residual(&(x - xhat), af, 0)
}

pub fn mae_score(x: &Array2<f64>, xhat: &Array2<f64>) -> Result<f64> {
    check_shapes(x, xhat)?;
    Ok(mae_from_residual(&(x - xhat)))
}

pub fn mae_from_residual(residual: &Array2<f64>) -> f64 {
    residual.iter().map(|r| r.abs()).sum::<f64>() / residual.len() as f64
}

/// Window score under a method.
pub fn window_score(residual: &Array2<f64>, method: ScoreMethod, af: AfParams) -> Result<f64> {
    match method {
        ScoreMethod::Mae => Ok(mae_from_residual(residual)),
        ScoreMethod::Af => af_from_residual(residual, af, 0).map(|(s, _)| s),
    }
}

pub fn aggregate(scores: &[f64], how: Aggregation) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("no window scores".into()));
    }
    Ok(match how {
        Aggregation::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
        Aggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipScore {
    pub clip_id: String,
    pub score: f64,
    pub window_scores: Vec<f64>,
    pub method: ScoreMethod,
}

/// Windows of one clip with their reconstructions; the cache from which every
/// scoring variant is recomputed without re-running diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipReconstruction {
    pub clip_id: String,
    pub originals: Vec<Array2<f64>>,
    pub reconstructions: Vec<Array2<f64>>,
    pub origin_frames: Vec<usize>,
    pub n_frames: usize,
    pub calls_per_window: usize,
}

impl ClipReconstruction {
    pub fn residuals(&self) -> Vec<Array2<f64>> {
        self.originals
            .iter()
            .zip(&self.reconstructions)
            .map(|(x, r)| x - r)
            .collect()
    }

    /// Window-level anomaly maps.
    pub fn maps(&self, af: AfParams) -> Result<Vec<AnomalyMap>> {
        self.residuals()
            .iter()
            .zip(&self.origin_frames)
            .map(|(r, &o)| af_from_residual(r, af, o).map(|(_, m)| m))
            .collect()
    }

    pub fn score(&self, method: ScoreMethod, af: AfParams, how: Aggregation) -> Result<ClipScore> {
        let window_scores = self
            .residuals()
            .iter()
            .map(|r| window_score(r, method, af))
            .collect::<Result<Vec<_>>>()?;
        Ok(ClipScore {
            clip_id: self.clip_id.clone(),
            score: aggregate(&window_scores, how)?,
            window_scores,
            method,
        })
    }

    /// Clip-length (original, reconstruction) with overlapping windows averaged.
    pub fn stitched(&self) -> Result<(Array2<f64>, Array2<f64>)> {
        Ok((
            overlap_average(&self.originals, &self.origin_frames, self.n_frames)?,
            overlap_average(&self.reconstructions, &self.origin_frames, self.n_frames)?,
        ))
    }
}

/// Stable 64-bit FNV-1a, used to derive per-clip seeds from clip ids.
pub fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Per-window seeds derived from the run seed and the clip id.
pub fn window_seeds(seed: u64, clip_id: &str, n: usize) -> Vec<u64> {
    let base = seed ^ fnv1a(clip_id);
    (0..n as u64)
        .map(|i| base.wrapping_add(i.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
        .collect()
}

/// Windows the clip with `hop` and reconstructs every window.
pub fn reconstruct_clip(
    f: &FBankFeature,
    denoiser: &dyn NoisePredictor,
    diff: &DiffusionConfig,
    sched: &NoiseSchedule,
    hop: usize,
    seed: u64,
) -> Result<ClipReconstruction> {
    let batch = slide_windows(f, f.n_mels(), hop)?;
    let seeds = window_seeds(seed, &f.clip_id, batch.len());
    let rec = reconstruct_batch(&batch.windows, diff, sched, denoiser, &seeds)?;
    Ok(ClipReconstruction {
        clip_id: f.clip_id.clone(),
        originals: batch.windows,
        reconstructions: rec.x0_hat,
        origin_frames: batch.origin_frames,
        n_frames: f.n_frames(),
        calls_per_window: rec.denoiser_calls,
    })
}

/// Windows, reconstructs and scores one clip (window scores averaged by default).
#[allow(clippy::too_many_arguments)]
pub fn score_clip(
    f: &FBankFeature,
    denoiser: &dyn NoisePredictor,
    diff: &DiffusionConfig,
    sched: &NoiseSchedule,
    method: ScoreMethod,
    af: AfParams,
    hop: usize,
    how: Aggregation,
    seed: u64,
) -> Result<(ClipScore, ClipReconstruction)> {
    let rec = reconstruct_clip(f, denoiser, diff, sched, hop, seed)?;
    Ok((rec.score(method, af, how)?, rec))
}

/// Residuals of one scored clip plus the labels needed for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedClip {
    pub record: ScoreRecord,
    pub residuals: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualCache {
    pub clips: Vec<CachedClip>,
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    rows: usize,
    cols: usize,
    clips: Vec<(ScoreRecord, usize)>,
}

const CACHE_MAGIC: &[u8; 8] = b"DIFFADRC";

impl ResidualCache {
    /// Little-endian binary: magic, u64 header length, JSON header, f32 residuals.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (rows, cols) = self
            .clips
            .iter()
            .flat_map(|c| c.residuals.first())
            .map(|r| r.dim())
            .next()
            .unwrap_or((0, 0));
        let header = CacheHeader {
            rows,
            cols,
            clips: self
                .clips
                .iter()
                .map(|c| (c.record.clone(), c.residuals.len()))
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(CACHE_MAGIC).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for r in self.clips.iter().flat_map(|c| &c.residuals) {
            if r.dim() != (rows, cols) {
                return Err(Error::Shape("residual windows differ in size".into()));
            }
            for v in r.iter() {
                w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut r = BufReader::new(File::open(path).map_err(io)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Checkpoint(format!("{} is not a residual cache", path.display())));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(io)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json).map_err(io)?;
        let header: CacheHeader = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut clips = Vec::with_capacity(header.clips.len());
        let mut buf = [0u8; 4];
        for (record, n) in header.clips {
            let mut residuals = Vec::with_capacity(n);
            for _ in 0..n {
                let mut m = Array2::zeros((header.rows, header.cols));
                for v in m.iter_mut() {
                    r.read_exact(&mut buf).map_err(io)?;
                    *v = f32::from_le_bytes(buf) as f64;
                }
                residuals.push(m);
            }
            clips.push(CachedClip { record, residuals });
        }
        Ok(Self { clips })
    }
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub machine_type: String,
    pub k_fraction: f64,
    pub use_relu: bool,
    pub auc: f64,
    pub pauc: f64,
    pub s_auc: Option<f64>,
    pub t_auc: Option<f64>,
}

/// K grid 0.03, 0.06, ..., 0.99.
pub fn default_k_grid() -> Vec<f64> {
    (1..=33).map(|i| (i as f64 * 0.03 * 100.0).round() / 100.0).collect()
}

/// Rescores cached residuals for every (K, ReLU) pair and reports AUC
/// metrics per machine type. Diffusion is never re-run.
pub fn af_sweep(
    cache: &ResidualCache,
    k_values: &[f64],
    relu_options: &[bool],
    how: Aggregation,
    p: f64,
    convention: AucConvention,
) -> Result<Vec<SweepRow>> {
    if cache.clips.is_empty() {
        return Err(Error::Empty("residual cache is empty".into()));
    }
    let mut machines: Vec<&str> = cache.clips.iter().map(|c| c.record.machine_type.as_str()).collect();
    machines.sort_unstable();
    machines.dedup();
    let mut rows = Vec::new();
    for machine in machines {
        let clips: Vec<&CachedClip> = cache
            .clips
            .iter()
            .filter(|c| c.record.machine_type == machine && c.record.label != Label::Unknown)
            .collect();
        for &use_relu in relu_options {
            for &k_fraction in k_values {
                let af = AfParams { k_fraction, use_relu };
                let records = clips
                    .iter()
                    .map(|c| {
                        let scores = c
                            .residuals
                            .iter()
                            .map(|r| window_score(r, ScoreMethod::Af, af))
                            .collect::<Result<Vec<_>>>()?;
                        Ok(ScoreRecord {
                            score: aggregate(&scores, how)?,
                            ..c.record.clone()
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let report = evaluate(&records, p, convention)?;
                let m = report
                    .machines
                    .first()
                    .ok_or_else(|| Error::Empty(format!("{machine}: needs normal and anomalous clips")))?;
                rows.push(SweepRow {
                    machine_type: machine.to_string(),
                    k_fraction,
                    use_relu,
                    auc: m.auc,
                    pauc: m.pauc,
                    s_auc: m.s_auc,
                    t_auc: m.t_auc,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Clip-level AF image: the anomalies filter applied to the stitched residual.
pub fn clip_af_map(x: &Array2<f64>, xhat: &Array2<f64>, af: AfParams) -> Result<Array2<f64>> {
    af_score(x, xhat, af).map(|(_, m)| m.filtered)
}

/// |x - x_hat| per pixel.
pub fn mae_map(x: &Array2<f64>, xhat: &Array2<f64>) -> Result<Array2<f64>> {
    check_shapes(x, xhat)?;
    let mut out = Array2::zeros(x.dim());
    Zip::from(&mut out)
        .and(x)
        .and(xhat)
        .for_each(|o, &a, &b| *o = (a - b).abs());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_examples() {
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let z = Array2::zeros((2, 2));
        let (s, m) = af_score(
            &x,
            &z,
            AfParams {
                k_fraction: 0.5,
                use_relu: true,
            },
        )
        .unwrap();
        assert_eq!(s, 0.5);
        assert_eq!(m.filtered, x);
        assert_eq!(mae_score(&x, &z).unwrap(), 0.5);
        let (s, m) = af_score(
            &x,
            &x,
            AfParams {
                k_fraction: 0.3,
                use_relu: false,
            },
        )
        .unwrap();
        assert_eq!(s, 0.0);
        assert!(m.filtered.iter().all(|&v| v == 0.0));
        // negative residual everywhere: ReLU scores zero while MAE does not
        let (s, _) = af_score(
            &z,
            &x,
            AfParams {
                k_fraction: 1.0,
                use_relu: true,
            },
        )
        .unwrap();
        assert_eq!(s, 0.0);
        assert!(mae_score(&z, &x).unwrap() > 0.0);
    }

    #[test]
    fn topk_count_rules() {
        assert_eq!(topk_count(0.5, 4), 2);
        assert_eq!(topk_count(1e-9, 4), 1);
        assert_eq!(topk_count(1.0, 4), 4);
        assert_eq!(topk_count(0.1, 16384), 1638);
    }

    #[test]
    fn shape_mismatch() {
        let a = Array2::zeros((2, 2));
        let b = Array2::zeros((2, 3));
        assert!(af_score(
            &a,
            &b,
            AfParams {
                k_fraction: 0.5,
                use_relu: true
            }
        )
        .is_err());
        assert!(mae_score(&a, &b).is_err());
        assert!(af_score(
            &a,
            &a,
            AfParams {
                k_fraction: 0.0,
                use_relu: true
            }
        )
        .is_err());
    }

    #[test]
    fn aggregation() {
        assert_eq!(aggregate(&[1.0, 3.0], Aggregation::Mean).unwrap(), 2.0);
        assert_eq!(aggregate(&[1.0, 3.0], Aggregation::Max).unwrap(), 3.0);
        assert!(aggregate(&[], Aggregation::Mean).is_err());
    }

    #[test]
    fn k_grid() {
        let g = default_k_grid();
        assert_eq!(g.len(), 33);
        assert_eq!(g[0], 0.03);
        assert_eq!(g[32], 0.99);
    }

    #[test]
    fn per_machine_override() {
        let mut cfg = AFConfig::default();
        cfg.per_machine.insert(
            "fan".into(),
            AfParams {
                k_fraction: 0.5,
                use_relu: true,
            },
        );
        assert_eq!(cfg.for_machine("fan").k_fraction, 0.5);
        assert_eq!(cfg.for_machine("pump"), cfg.params());
        cfg.per_machine.insert(
            "bad".into(),
            AfParams {
                k_fraction: 1.5,
                use_relu: true,
            },
        );
        assert!(cfg.validate().is_err());
    }
}
