//! Evaluation reports, plot data and the augmentation sweep.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cascade::{refine, sample_low, CascadeModel, EvalItem, SampleMeta};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_suite, extract_dance_beats, kinetic_velocity, EvalReport, BAS_SIGMA_FRAMES};
use crate::motion::{load_motion, BeatGrid, MotionSequence, SkeletonSpec};
use crate::scalar::Scalar;

fn motion_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "motseq"));
    files.sort();
    if files.is_empty() {
        return Err(Error::format(dir, "directory holds no .motseq files"));
    }
    Ok(files)
}

/// Generated clips with their sample sidecars.
pub fn load_generated(dir: &Path) -> Result<(Vec<MotionSequence>, Vec<BeatGrid>)> {
    let mut motions = Vec::new();
    let mut beats = Vec::new();
    for path in motion_files(dir)? {
        let side = path.with_extension("json");
        let text = std::fs::read_to_string(&side)
            .map_err(|e| Error::format(&side, format!("missing sample sidecar: {e}")))?;
        let meta: SampleMeta = serde_json::from_str(&text)?;
        motions.push(load_motion(&path)?);
        beats.push(meta.beats);
    }
    Ok((motions, beats))
}

pub fn load_reference(dir: &Path) -> Result<Vec<MotionSequence>> {
    motion_files(dir)?.iter().map(load_motion).collect()
}

/// Scores the samples in `generated_dir` against the clips in `reference_dir`.
pub fn cmd_eval(generated_dir: &Path, reference_dir: &Path, skel: &SkeletonSpec) -> Result<EvalReport> {
    let (generated, beats) = load_generated(generated_dir)?;
    let reference = load_reference(reference_dir)?;
    evaluate_suite(&generated, &reference, &beats, skel, BAS_SIGMA_FRAMES)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub time: f64,
    /// Speed over the interval from this frame to the next; empty on the last frame.
    pub kinetic_velocity: Option<f64>,
    pub is_dance_beat: u8,
    pub is_music_beat: u8,
}

/// One row per frame. Dance beats sit at interval midpoints and flag the
/// frame that starts their interval; music beats flag the nearest frame.
pub fn plot_data(motion: &MotionSequence, music: &BeatGrid, skel: &SkeletonSpec) -> Result<Vec<PlotRow>> {
    let fps = f64::from(motion.fps());
    let n = motion.len();
    let speed = kinetic_velocity(motion, skel)?;
    let mut rows: Vec<PlotRow> = (0..n)
        .map(|i| PlotRow {
            time: i as f64 / fps,
            kinetic_velocity: speed.get(i).copied(),
            is_dance_beat: 0,
            is_music_beat: 0,
        })
        .collect();
    for &b in extract_dance_beats(motion, skel)?.timestamps() {
        rows[((b * fps).floor() as usize).min(n - 1)].is_dance_beat = 1;
    }
    for &b in music.timestamps() {
        rows[((b * fps).round() as usize).min(n - 1)].is_music_beat = 1;
    }
    Ok(rows)
}

pub fn write_plot_csv(rows: &[PlotRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plot_csv(path: &Path) -> Result<Vec<PlotRow>> {
    csv::Reader::from_path(path)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)
}

/// Conditioning-augmentation levels compared by the sweep, in percent of T.
pub const SWEEP_PCTS: [usize; 5] = [0, 10, 20, 30, 40];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub aug_pct: usize,
    pub aug_step: usize,
    pub fid_k: f64,
    pub fid_g: f64,
    pub div_k: f64,
    pub div_g: f64,
    pub bas: f64,
}

/// Evaluates SSR refinement at each augmentation level. The low-res samples
/// are drawn once and shared by every level.
pub fn augmentation_sweep<S: Scalar>(cascade: &CascadeModel<S>, items: &[EvalItem], pcts: &[usize]) -> Result<Vec<SweepRow>> {
    if items.is_empty() {
        return Err(Error::invalid("sweep needs at least one evaluation item"));
    }
    let skel = cascade.cfg.skeleton()?;
    let mut lows = Vec::with_capacity(items.len());
    for item in items {
        let cond = cascade.condition(&item.audio_feature)?;
        let set = cascade.settings(item.seed, 0)?;
        lows.push((cond.clone(), sample_low(&cascade.m2d, Some(&cond), &set, None)?));
    }
    let reference: Vec<MotionSequence> = items.iter().map(|i| i.reference.clone()).collect();
    let beats: Vec<BeatGrid> = items.iter().map(|i| i.beats.clone()).collect();
    let mut rows = Vec::with_capacity(pcts.len());
    for &pct in pcts {
        let mut generated = Vec::with_capacity(items.len());
        for (item, (cond, low)) in items.iter().zip(&lows) {
            let set = cascade.settings(item.seed, pct)?;
            generated.push(refine(&cascade.ssr, Some(cond), &set, low)?);
        }
        let r = evaluate_suite(&generated, &reference, &beats, &skel, BAS_SIGMA_FRAMES)?;
        rows.push(SweepRow {
            aug_pct: pct,
            aug_step: cascade.cfg.pct_step(pct),
            fid_k: r.fid_k,
            fid_g: r.fid_g,
            div_k: r.div_k,
            div_g: r.div_g,
            bas: r.bas,
        });
    }
    Ok(rows)
}

/// Plain-text table of sweep results.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = format!(
        "{:>6} {:>6} {:>10} {:>10} {:>8} {:>8} {:>7}\n",
        "s(%)", "s", "FID_k", "FID_g", "Div_k", "Div_g", "BAS"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>6} {:>6} {:>10.4} {:>10.4} {:>8.4} {:>8.4} {:>7.4}\n",
            r.aug_pct, r.aug_step, r.fid_k, r.fid_g, r.div_k, r.div_g, r.bas
        ));
    }
    s
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
