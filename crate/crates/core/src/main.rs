use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use diffad::config::RunConfig;
use diffad::dataset::{AnomalyKind, SynthSpec};
use diffad::diffusion::SamplerKind;
use diffad::eval::AucConvention;
use diffad::pipeline::{self, ScoreOptions};
use diffad::scoring::default_k_grid;
use diffad::Error;

#[derive(Parser)]
#[command(name = "diffad", version, about = "Diffusion-based anomalous sound detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration (defaults when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Desk-scale network, features and schedule.
    #[arg(long)]
    toy: bool,
    /// Dataset root (overrides config and DIFFAD_DATASET).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> diffad::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.toy {
            cfg = cfg.into_toy();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.train.seed = s;
        }
        cfg.apply_env();
        cfg.apply_overrides(self.dataset.clone(), None);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the synthetic corpus.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_kind, default_value = "added_tone")]
        kind: AnomalyKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        n_train: usize,
        #[arg(long, default_value_t = 20)]
        n_normal_test: usize,
        #[arg(long, default_value_t = 20)]
        n_anomaly_test: usize,
    },
    /// Train one machine type's denoiser.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        machine: Option<String>,
        #[arg(long)]
        run_dir: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score test clips into a CSV.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        machine: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Save residuals for `sweep`.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, value_parser = parse_sampler)]
        sampler: Option<SamplerKind>,
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
    },
    /// AUC / pAUC / hmean report.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        p: f64,
        /// Compare domain normals against anomalies of every domain.
        #[arg(long)]
        mixed: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rescore cached residuals over the K grid, with and without ReLU.
    Sweep {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        p: f64,
        #[arg(long)]
        mixed: bool,
    },
    /// Original / reconstruction / MAE / AF images for one clip.
    Viz {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        machine: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// DDPM vs DDIM call counts and wall time.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        machine: Option<String>,
        /// Limit the number of test clips.
        #[arg(long, default_value_t = 4)]
        clips: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> Result<AnomalyKind, String> {
    match s {
        "added_tone" => Ok(AnomalyKind::AddedTone),
        "dropped_band" => Ok(AnomalyKind::DroppedBand),
        "transient_click" => Ok(AnomalyKind::TransientClick),
        _ => Err(format!("unknown anomaly kind '{s}'")),
    }
}

fn parse_sampler(s: &str) -> Result<SamplerKind, String> {
    match s {
        "ddpm" => Ok(SamplerKind::Ddpm),
        "ddim" => Ok(SamplerKind::Ddim),
        _ => Err(format!("unknown sampler '{s}'")),
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn convention(mixed: bool) -> AucConvention {
    if mixed {
        AucConvention::Mixed
    } else {
        AucConvention::DomainPure
    }
}

fn run(cli: Cli) -> diffad::Result<()> {
    match cli.cmd {
        Cmd::Generate {
            out,
            kind,
            seed,
            n_train,
            n_normal_test,
            n_anomaly_test,
        } => {
            let spec = SynthSpec {
                anomaly_kind: kind,
                seed,
                n_normal_train: n_train,
                n_normal_test,
                n_anomaly_test,
                ..Default::default()
            };
            let corpus = pipeline::cmd_generate(&spec, &out)?;
            println!(
                "{} clips, manifest {}",
                corpus.clips.len(),
                corpus.manifest_path.display()
            );
        }
        Cmd::Train {
            common,
            machine,
            run_dir,
            resume,
        } => {
            let cfg = common.load()?;
            let outcome = pipeline::cmd_train(&cfg, machine.as_deref(), &run_dir, resume.as_deref())?;
            let last = outcome.loss_history.last().copied().unwrap_or(f64::NAN);
            println!(
                "final loss {last:.5}, checkpoint {}",
                outcome.final_checkpoint.display()
            );
        }
        Cmd::Score {
            common,
            checkpoint,
            machine,
            out,
            cache,
            sampler,
            jobs,
        } => {
            let mut cfg = common.load()?;
            if let Some(s) = sampler {
                cfg.diffusion.sampler = s;
            }
            let opts = ScoreOptions {
                machine: machine.as_deref(),
                out_csv: &out,
                cache: cache.as_deref(),
                jobs,
            };
            let rows = pipeline::cmd_score(&cfg, &checkpoint, &opts)?;
            println!("scored {} clips into {}", rows.len(), out.display());
        }
        Cmd::Eval {
            scores,
            manifest,
            p,
            mixed,
            out,
        } => {
            let report = pipeline::cmd_eval(&scores, manifest.as_deref(), p, convention(mixed), out.as_deref())?;
            print!("{}", report.table());
        }
        Cmd::Sweep { cache, out, p, mixed } => {
            let rows = pipeline::cmd_sweep(
                &cache,
                &default_k_grid(),
                &out,
                Default::default(),
                p,
                convention(mixed),
            )?;
            println!("{} sweep rows into {}", rows.len(), out.display());
        }
        Cmd::Viz {
            common,
            checkpoint,
            clip,
            machine,
            out_dir,
        } => {
            let cfg = common.load()?;
            let panels = pipeline::cmd_viz(&cfg, &checkpoint, &clip, machine.as_deref(), &out_dir)?;
            println!("wrote {}", panels.af_map.display());
        }
        Cmd::Bench {
            common,
            checkpoint,
            machine,
            clips,
            out,
        } => {
            let cfg = common.load()?;
            let mut test = pipeline::test_clips(&cfg, machine.as_deref())?;
            test.truncate(clips.max(1));
            let report = pipeline::cmd_bench(&cfg, &checkpoint, &test, out.as_deref())?;
            for r in &report.rows {
                println!(
                    "{:<5} calls/window {:>4}  wall {:>8.2}s  RTF {:.3}",
                    r.sampler.to_string(),
                    r.calls_per_window,
                    r.wall_s,
                    r.rtf
                );
            }
            println!(
                "call ratio {:.2}, wall ratio {:.2}",
                report.call_ratio(),
                report.wall_ratio()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config(_) | Error::Dataset(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
