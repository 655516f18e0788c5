use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cadence_core::denoiser::DenoiserKind;
use cadence_core::motion::{load_motion, BeatGrid};
use cadence_core::pipeline::cascade::{eval_items, generate_eval_set, write_sample, MusicSidecar, SampleMeta};
use cadence_core::{Cascade32, TrainReal};
use cadence_core::pipeline::data::{gen_data, Dataset};
use cadence_core::pipeline::report::{augmentation_sweep, cmd_eval, plot_data, sweep_table, write_plot_csv, write_sweep_csv, SWEEP_PCTS};
use cadence_core::pipeline::train::{train_align, train_stage};
use cadence_core::pipeline::{RunConfig, HIGH_FPS};
use clap::{Parser, Subcommand};

/// Music-conditioned cascaded motion diffusion on synthetic dance data.
#[derive(Parser)]
#[command(name = "cadence", version)]
struct Cli {
    /// Flat `key = value` config file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the synthetic training and held-out sets.
    GenData,
    /// Trains the music-to-dance alignment adapter.
    TrainAlign,
    /// Trains the low-resolution (15 fps) denoiser.
    TrainM2d {
        #[arg(long)]
        resume: bool,
    },
    /// Trains the super-resolution (60 fps) denoiser.
    TrainSsr {
        #[arg(long)]
        resume: bool,
    },
    /// Samples one clip for a music sidecar, or the whole held-out set.
    Sample {
        /// JSON with `audio_feature` and `beats` (clip or sample sidecar).
        #[arg(long)]
        music: Option<PathBuf>,
        /// 60 fps motion whose leading frames seed the low-res sample.
        #[arg(long, requires = "music")]
        seed_motion: Option<PathBuf>,
        /// Output motion file; a `.json` sidecar is written next to it.
        #[arg(long, requires = "music")]
        output: Option<PathBuf>,
    },
    /// Scores generated samples against reference clips.
    Eval {
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-frame kinetic velocity and beat flags as CSV.
    PlotData {
        #[arg(long)]
        motion: PathBuf,
        /// Sidecar holding the music beats; defaults to the one next to the motion.
        #[arg(long)]
        beats: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluates SSR conditioning augmentation at 0, 10, 20, 30 and 40 percent of T.
    Sweep,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn sample_one(cfg: &RunConfig, music: &Path, seed_motion: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let sidecar = MusicSidecar::load(music)?;
    let cascade = Cascade32::load(cfg)?;
    let seed = match seed_motion {
        Some(p) => Some(load_motion(p)?),
        None => None,
    };
    let out = cascade.sample(&sidecar.audio_feature, cfg.seed, seed.as_ref())?;
    let window_s = out.high.duration();
    let beats: Vec<f64> = sidecar.beats.timestamps().iter().copied().filter(|b| *b <= window_s).collect();
    let meta = SampleMeta {
        audio_feature: sidecar.audio_feature,
        beats: BeatGrid::new(beats, window_s)?,
        seed: cfg.seed,
        aug_step: cfg.pct_step(cfg.ssr_aug_pct),
    };
    let path = output.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.join("sample.motseq"));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .context("output path needs a file name")?;
    write_sample(dir, name, &out.high, &meta)?;
    println!(
        "wrote {} ({} frames at {HIGH_FPS} fps)",
        dir.join(format!("{name}.motseq")).display(),
        out.high.len()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::GenData => {
            let (train, heldout) = gen_data(&cfg)?;
            println!(
                "{} training clips in {}, {} held-out clips in {}",
                train.clips.len(),
                cfg.data_dir().display(),
                heldout.clips.len(),
                cfg.heldout_dir().display()
            );
            println!("manifest sha256 {}", train.digest()?);
        }
        Command::TrainAlign => {
            let s = train_align(&cfg)?;
            println!(
                "alignment: final InfoNCE {:.4}, train recall@1 {:.3}",
                s.epoch_losses.last().copied().unwrap_or(f64::NAN),
                s.train_recall
            );
        }
        Command::TrainM2d { resume } => print_json(&train_stage::<TrainReal>(&cfg, DenoiserKind::M2d, resume)?)?,
        Command::TrainSsr { resume } => print_json(&train_stage::<TrainReal>(&cfg, DenoiserKind::Ssr, resume)?)?,
        Command::Sample {
            music,
            seed_motion,
            output,
        } => match music {
            Some(m) => sample_one(&cfg, &m, seed_motion.as_deref(), output.as_deref())?,
            None => {
                let cascade = Cascade32::load(&cfg)?;
                let items = eval_items(&cfg, &Dataset::load(cfg.heldout_dir())?)?;
                let gen = generate_eval_set(&cascade, &items, &cfg.out.join("samples"), &cfg.out.join("reference"))?;
                println!("wrote {} samples to {}", gen.len(), cfg.out.join("samples").display());
            }
        },
        Command::Eval {
            generated,
            reference,
            report,
        } => {
            let generated = generated.unwrap_or_else(|| cfg.out.join("samples"));
            let reference = reference.unwrap_or_else(|| cfg.out.join("reference"));
            let r = cmd_eval(&generated, &reference, &cfg.skeleton()?)?;
            let path = report.unwrap_or_else(|| cfg.out.join("report.json"));
            std::fs::write(&path, serde_json::to_string_pretty(&r)?)?;
            print_json(&r)?;
        }
        Command::PlotData { motion, beats, output } => {
            let seq = load_motion(&motion)?;
            let side = beats.unwrap_or_else(|| motion.with_extension("json"));
            let music = MusicSidecar::load(&side)?;
            let rows = plot_data(&seq, &music.beats, &cfg.skeleton()?)?;
            let path = output.unwrap_or_else(|| motion.with_extension("csv"));
            write_plot_csv(&rows, &path)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
        Command::Sweep => {
            let cascade = Cascade32::load(&cfg)?;
            let items = eval_items(&cfg, &Dataset::load(cfg.heldout_dir())?)?;
            if items.is_empty() {
                bail!("no held-out clip is long enough for an evaluation window");
            }
            let rows = augmentation_sweep(&cascade, &items, &SWEEP_PCTS)?;
            write_sweep_csv(&rows, &cfg.out.join("sweep.csv"))?;
            print!("{}", sweep_table(&rows));
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
