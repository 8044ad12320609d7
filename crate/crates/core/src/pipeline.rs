//! End-to-end commands: generate, train, score, eval, sweep, viz, bench.
//!
//! Each command is a plain function over a [`RunConfig`]; the binary only
//! parses arguments and maps errors to exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::load_wav;
use crate::config::RunConfig;
use crate::dataset::{
    read_manifest, scan_dataset, synth_generate, ClipMeta, Domain, Label, Split, SynthCorpus, SynthSpec,
};
use crate::diffusion::{NoiseSchedule, SamplerKind};
use crate::error::{Error, Result};
use crate::eval::{evaluate, AucConvention, MetricReport, ScoreRecord};
use crate::features::{slide_windows, FBankFeature, FbankExtractor};
use crate::nn::{load_checkpoint, Denoiser};
use crate::scoring::{
    af_sweep, clip_af_map, mae_map, reconstruct_clip, write_sweep_csv, Aggregation, CachedClip, ClipReconstruction,
    ResidualCache, ScoreMethod, SweepRow,
};
use crate::train::{train_loop, TrainOutcome};
use crate::viz::{write_panels, Panels};

/// Loads a clip and computes its normalized FBank.
pub fn clip_features(path: &Path, clip_id: &str, extractor: &FbankExtractor) -> Result<(FBankFeature, f64)> {
    let w = load_wav(path, extractor.config().sample_rate)?;
    Ok((extractor.extract(&w, clip_id)?, w.duration_secs()))
}

fn check_dataset_root(cfg: &RunConfig) -> Result<PathBuf> {
    let root = cfg
        .paths
        .dataset
        .clone()
        .ok_or_else(|| Error::Config("no dataset path (set paths.dataset, --dataset or DIFFAD_DATASET)".into()))?;
    if !root.is_dir() {
        return Err(Error::Dataset(format!(
            "dataset path {} does not exist",
            root.display()
        )));
    }
    Ok(root)
}

/// The single machine type to work on: the filter if given, otherwise the only
/// machine present.
fn resolve_machine(clips: &[ClipMeta], filter: Option<&str>) -> Result<String> {
    let mut machines: Vec<&str> = clips.iter().map(|c| c.machine_type.as_str()).collect();
    machines.sort_unstable();
    machines.dedup();
    match filter {
        Some(m) if machines.contains(&m) => Ok(m.to_string()),
        Some(m) => Err(Error::Dataset(format!(
            "machine type '{m}' not in dataset (have {machines:?})"
        ))),
        None if machines.len() == 1 => Ok(machines[0].to_string()),
        None => Err(Error::Config(format!(
            "dataset holds several machine types {machines:?}; one model is trained per type, pick one with --machine"
        ))),
    }
}

pub fn cmd_generate(spec: &SynthSpec, out: &Path) -> Result<SynthCorpus> {
    let corpus = synth_generate(spec, out)?;
    log::info!("wrote {} clips to {}", corpus.clips.len(), out.display());
    Ok(corpus)
}

/// Training windows (hop `scoring.train_hop`) from the normal training clips
/// of one machine type.
pub fn training_windows(cfg: &RunConfig, clips: &[ClipMeta]) -> Result<Vec<Array2<f64>>> {
    let extractor = FbankExtractor::new(cfg.features.clone())?;
    let mut windows = Vec::new();
    for clip in clips.iter().filter(|c| c.split == Split::Train) {
        let (f, _) = clip_features(&clip.path, &clip.clip_id, &extractor)?;
        windows.extend(slide_windows(&f, cfg.window(), cfg.scoring.train_hop)?.windows);
    }
    Ok(windows)
}

/// Trains one machine type's model into `run_dir`, writing `config.toml`,
/// the training log and checkpoints there.
pub fn cmd_train(
    cfg: &RunConfig,
    machine: Option<&str>,
    run_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let root = check_dataset_root(cfg)?;
    let clips = scan_dataset(&root)?;
    let machine = resolve_machine(&clips, machine)?;
    let clips: Vec<ClipMeta> = clips.into_iter().filter(|c| c.machine_type == machine).collect();
    let windows = training_windows(cfg, &clips)?;
    if windows.is_empty() {
        return Err(Error::Dataset(format!("{machine}: no training clips")));
    }
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let snapshot = run_dir.join("config.toml");
    fs::write(&snapshot, cfg.to_toml()?).map_err(|e| Error::io(&snapshot, e))?;
    log::info!("{machine}: training on {} windows", windows.len());
    train_loop(&windows, &cfg.train, &cfg.unet, &cfg.diffusion, run_dir, resume)
}

/// Loads a checkpoint for inference and checks it against the configured network.
pub fn load_denoiser(cfg: &RunConfig, checkpoint: &Path) -> Result<Denoiser> {
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.params.config != cfg.unet {
        return Err(Error::Config(format!(
            "checkpoint network {:?} does not match configured network {:?}",
            ckpt.params.config, cfg.unet
        )));
    }
    Denoiser::new(ckpt.params, cfg.scoring.use_ema)
}

/// One reconstructed test clip.
#[derive(Debug, Clone)]
pub struct ScoredClip {
    pub meta: ClipMeta,
    pub reconstruction: ClipReconstruction,
    pub wall_ms: f64,
    pub duration_secs: f64,
}

/// Reconstructs every clip (parallel over clips, results in input order).
pub fn reconstruct_clips(
    cfg: &RunConfig,
    denoiser: &Denoiser,
    clips: &[ClipMeta],
    jobs: usize,
) -> Result<Vec<ScoredClip>> {
    let extractor = FbankExtractor::new(cfg.features.clone())?;
    let sched = NoiseSchedule::new(&cfg.diffusion)?;
    let work = |clip: &ClipMeta| -> Result<ScoredClip> {
        let start = Instant::now();
        let (f, duration_secs) = clip_features(&clip.path, &clip.clip_id, &extractor)?;
        let reconstruction = reconstruct_clip(&f, denoiser, &cfg.diffusion, &sched, cfg.scoring.test_hop, cfg.seed)?;
        Ok(ScoredClip {
            meta: clip.clone(),
            reconstruction,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            duration_secs,
        })
    };
    if jobs <= 1 {
        return clips.iter().map(work).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| clips.par_iter().map(work).collect())
}

/// One row of the score CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub clip_id: String,
    pub machine_type: String,
    pub section: String,
    pub domain: Domain,
    pub label: Label,
    pub score: f64,
    pub method: ScoreMethod,
    pub k_fraction: f64,
    pub use_relu: bool,
    pub sampler: SamplerKind,
    pub calls_per_window: usize,
    pub windows: usize,
}

/// Inference cost of one clip; kept apart from [`ScoreRow`] so score files are
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub clip_id: String,
    pub sampler: SamplerKind,
    pub calls_per_window: usize,
    pub windows: usize,
    pub wall_ms: f64,
    pub duration_s: f64,
    /// Inference wall time divided by clip duration.
    pub rtf: f64,
}

pub fn timing_rows(cfg: &RunConfig, scored: &[ScoredClip]) -> Vec<TimingRow> {
    scored
        .iter()
        .map(|s| TimingRow {
            clip_id: s.meta.clip_id.clone(),
            sampler: cfg.diffusion.sampler,
            calls_per_window: s.reconstruction.calls_per_window,
            windows: s.reconstruction.originals.len(),
            wall_ms: s.wall_ms,
            duration_s: s.duration_secs,
            rtf: s.wall_ms / 1e3 / s.duration_secs,
        })
        .collect()
}

/// `scores.csv` -> `scores.timing.csv`
pub fn timing_path(score_csv: &Path) -> PathBuf {
    score_csv.with_extension("timing.csv")
}

pub fn score_rows(cfg: &RunConfig, scored: &[ScoredClip], method: ScoreMethod) -> Result<Vec<ScoreRow>> {
    scored
        .iter()
        .map(|s| {
            let af = cfg.af.for_machine(&s.meta.machine_type);
            let clip = s.reconstruction.score(method, af, cfg.scoring.aggregation)?;
            Ok(ScoreRow {
                clip_id: s.meta.clip_id.clone(),
                machine_type: s.meta.machine_type.clone(),
                section: s.meta.section.clone(),
                domain: s.meta.domain,
                label: s.meta.label,
                score: clip.score,
                method,
                k_fraction: af.k_fraction,
                use_relu: af.use_relu,
                sampler: cfg.diffusion.sampler,
                calls_per_window: s.reconstruction.calls_per_window,
                windows: s.reconstruction.originals.len(),
            })
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_score_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_score_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn residual_cache(scored: &[ScoredClip]) -> ResidualCache {
    ResidualCache {
        clips: scored
            .iter()
            .map(|s| CachedClip {
                record: ScoreRecord {
                    clip_id: s.meta.clip_id.clone(),
                    machine_type: s.meta.machine_type.clone(),
                    section: s.meta.section.clone(),
                    domain: s.meta.domain,
                    label: s.meta.label,
                    score: 0.0,
                },
                residuals: s.reconstruction.residuals(),
            })
            .collect(),
    }
}

/// Test clips of the dataset, optionally restricted to one machine type.
pub fn test_clips(cfg: &RunConfig, machine: Option<&str>) -> Result<Vec<ClipMeta>> {
    let root = check_dataset_root(cfg)?;
    let clips = scan_dataset(root)?;
    if let Some(m) = machine {
        resolve_machine(&clips, Some(m))?;
    }
    let out: Vec<ClipMeta> = clips
        .into_iter()
        .filter(|c| c.split == Split::Test && machine.is_none_or(|m| c.machine_type == m))
        .collect();
    if out.is_empty() {
        return Err(Error::Dataset("no test clips".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ScoreOptions<'a> {
    pub machine: Option<&'a str>,
    pub out_csv: &'a Path,
    /// Also save residuals for `sweep`.
    pub cache: Option<&'a Path>,
    pub jobs: usize,
}

/// Scores every test clip with the configured method and writes the score CSV
/// plus its timing sidecar.
pub fn cmd_score(cfg: &RunConfig, checkpoint: &Path, opts: &ScoreOptions<'_>) -> Result<Vec<ScoreRow>> {
    cfg.validate()?;
    let denoiser = load_denoiser(cfg, checkpoint)?;
    let clips = test_clips(cfg, opts.machine)?;
    let scored = reconstruct_clips(cfg, &denoiser, &clips, opts.jobs)?;
    let rows = score_rows(cfg, &scored, cfg.scoring.method)?;
    write_score_csv(opts.out_csv, &rows)?;
    write_csv(&timing_path(opts.out_csv), &timing_rows(cfg, &scored))?;
    if let Some(path) = opts.cache {
        residual_cache(&scored).save(path)?;
    }
    Ok(rows)
}

/// Joins scores with manifest labels (manifest wins) and evaluates.
pub fn cmd_eval(
    scores_csv: &Path,
    manifest_csv: Option<&Path>,
    p: f64,
    convention: AucConvention,
    out_csv: Option<&Path>,
) -> Result<MetricReport> {
    let rows = read_score_csv(scores_csv)?;
    let manifest = manifest_csv.map(read_manifest).transpose()?;
    let records: Vec<ScoreRecord> = rows
        .into_iter()
        .map(|r| {
            let meta = manifest
                .as_ref()
                .and_then(|m| m.iter().find(|c| c.clip_id == r.clip_id));
            if manifest.is_some() && meta.is_none() {
                log::warn!("{}: not in manifest; using the label in the score file", r.clip_id);
            }
            ScoreRecord {
                label: meta.map_or(r.label, |m| m.label),
                domain: meta.map_or(r.domain, |m| m.domain),
                clip_id: r.clip_id,
                machine_type: r.machine_type,
                section: r.section,
                score: r.score,
            }
        })
        .collect();
    let report = evaluate(&records, p, convention)?;
    if let Some(path) = out_csv {
        report.write_csv(path)?;
    }
    Ok(report)
}

pub fn cmd_sweep(
    cache: &Path,
    k_values: &[f64],
    out_csv: &Path,
    how: Aggregation,
    p: f64,
    convention: AucConvention,
) -> Result<Vec<SweepRow>> {
    let cache = ResidualCache::load(cache)?;
    let rows = af_sweep(&cache, k_values, &[false, true], how, p, convention)?;
    write_sweep_csv(out_csv, &rows)?;
    Ok(rows)
}

/// Original, reconstruction, MAE map and AF map of one clip as images.
pub fn cmd_viz(
    cfg: &RunConfig,
    checkpoint: &Path,
    clip: &Path,
    machine: Option<&str>,
    out_dir: &Path,
) -> Result<Panels> {
    cfg.validate()?;
    let denoiser = load_denoiser(cfg, checkpoint)?;
    let extractor = FbankExtractor::new(cfg.features.clone())?;
    let stem = clip.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let (f, _) = clip_features(clip, &stem, &extractor)?;
    let sched = NoiseSchedule::new(&cfg.diffusion)?;
    let rec = reconstruct_clip(&f, &denoiser, &cfg.diffusion, &sched, cfg.scoring.test_hop, cfg.seed)?;
    let (x, xhat) = rec.stitched()?;
    let af = machine.map_or_else(|| cfg.af.params(), |m| cfg.af.for_machine(m));
    write_panels(
        out_dir,
        &stem,
        &x,
        &xhat,
        &mae_map(&x, &xhat)?,
        &clip_af_map(&x, &xhat, af)?,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub sampler: SamplerKind,
    pub calls_per_window: usize,
    pub clips: usize,
    pub windows: usize,
    pub wall_s: f64,
    pub audio_s: f64,
    pub rtf: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Scores under each sampler, in clip order.
    pub scores: Vec<Vec<ScoreRow>>,
}

impl BenchReport {
    pub fn call_ratio(&self) -> f64 {
        self.rows[0].calls_per_window as f64 / self.rows[1].calls_per_window as f64
    }

    pub fn wall_ratio(&self) -> f64 {
        self.rows[0].wall_s / self.rows[1].wall_s
    }
}

/// Scores the same clips under DDPM and DDIM and compares cost.
pub fn cmd_bench(
    cfg: &RunConfig,
    checkpoint: &Path,
    clips: &[ClipMeta],
    out_csv: Option<&Path>,
) -> Result<BenchReport> {
    cfg.validate()?;
    let denoiser = load_denoiser(cfg, checkpoint)?;
    let mut rows = Vec::new();
    let mut scores = Vec::new();
    for sampler in [SamplerKind::Ddpm, SamplerKind::Ddim] {
        let mut run = cfg.clone();
        run.diffusion.sampler = sampler;
        let start = Instant::now();
        let scored = reconstruct_clips(&run, &denoiser, clips, 1)?;
        let wall_s = start.elapsed().as_secs_f64();
        let audio_s: f64 = scored.iter().map(|s| s.duration_secs).sum();
        rows.push(BenchRow {
            sampler,
            calls_per_window: scored.first().map_or(0, |s| s.reconstruction.calls_per_window),
            clips: scored.len(),
            windows: scored.iter().map(|s| s.reconstruction.originals.len()).sum(),
            wall_s,
            audio_s,
            rtf: wall_s / audio_s,
        });
        scores.push(score_rows(&run, &scored, run.scoring.method)?);
    }
    if let Some(path) = out_csv {
        write_csv(path, &rows)?;
    }
    Ok(BenchReport { rows, scores })
}
