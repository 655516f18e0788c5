//! Synthetic rhythmic dance clips with known beat grids.
//!
//! Every joint swings about a fixed local axis as `A·cos(π(t − φ)/P)` with beat
//! period `P = 60/tempo`, so all angular velocities vanish together at
//! `t = φ + kP`. Those instants are the clip's beats.

use serde::{Deserialize, Serialize};

use super::rotation::{axis_angle, mat_mul, matrix_to_rot6d, Mat3};
use super::sequence::{BeatGrid, MotionSequence};
use super::skeleton::SkeletonSpec;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const GENRES: usize = 4;
pub const GENRE_NAMES: [&str; GENRES] = ["bounce", "sway", "wave", "kick"];
/// Length of [`SyntheticClip::audio_feature`].
pub const AUDIO_FEATURE_DIM: usize = 4 + 4 + GENRES;
pub const SYNTH_FPS: u32 = 60;
pub const TEMPO_RANGE: (f64, f64) = (60.0, 180.0);
pub const DURATION_RANGE: (f64, f64) = (4.0, 20.0);
/// Beat-free margin at both clip ends, seconds.
pub const EDGE_MARGIN: f64 = 0.1;

/// Swing amplitude (radians) per body group `[root, torso, legs, arms]`.
const BASE_AMPLITUDE: [[f64; 4]; GENRES] = [
    [0.15, 0.10, 0.35, 0.20],
    [0.35, 0.20, 0.15, 0.30],
    [0.10, 0.15, 0.10, 0.50],
    [0.15, 0.10, 0.50, 0.25],
];
const AMPLITUDE_NORM: f64 = 0.5;

/// Local swing axis per body group, `0 = x, 1 = y, 2 = z`.
const SWING_AXIS: [[usize; 4]; GENRES] = [[0, 0, 0, 2], [1, 2, 2, 0], [2, 1, 0, 2], [1, 0, 0, 0]];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub tempo_bpm: f64,
    pub duration_s: f64,
    pub genre: usize,
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo && v <= hi;
        if !in_range(self.tempo_bpm, TEMPO_RANGE) {
            return Err(Error::invalid(format!("tempo {} BPM out of range", self.tempo_bpm)));
        }
        if !in_range(self.duration_s, DURATION_RANGE) {
            return Err(Error::invalid(format!("duration {} s out of range", self.duration_s)));
        }
        if self.genre >= GENRES {
            return Err(Error::invalid(format!("genre {} out of range", self.genre)));
        }
        Ok(())
    }

    /// Whether some beat phase keeps every beat at least the edge margin away
    /// from both clip ends. Fast tempos rule out some durations.
    pub fn beats_placeable(&self) -> bool {
        let period = 60.0 / self.tempo_bpm;
        let duration = (self.duration_s * SYNTH_FPS as f64).round() / SYNTH_FPS as f64;
        let r = duration.rem_euclid(period);
        let m = EDGE_MARGIN + 1e-9;
        period >= 2.0 * m && (r >= 2.0 * m || r <= period - 2.0 * m)
    }

    /// Draws tempo, duration and genre uniformly from the supported ranges,
    /// redrawing combinations whose beats cannot avoid the clip edges.
    pub fn random(rng: &mut SplitMix64, duration_range: (f64, f64)) -> Self {
        loop {
            let p = Self {
                tempo_bpm: rng.uniform_range(TEMPO_RANGE.0, TEMPO_RANGE.1),
                duration_s: rng.uniform_range(duration_range.0, duration_range.1),
                genre: rng.below(GENRES as u64) as usize,
            };
            if p.beats_placeable() {
                return p;
            }
        }
    }
}

/// Generator ground truth stored next to each clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub params: SynthParams,
    pub phase_s: f64,
    pub amplitudes: [f64; 4],
    pub audio_feature: Vec<f64>,
    pub beats: BeatGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticClip {
    pub motion: MotionSequence,
    /// `[tempo/180, φ/P, sin 2πφ/P, cos 2πφ/P, amplitudes/0.5 (4), genre one-hot]`.
    pub audio_feature: Vec<f64>,
    pub beats: BeatGrid,
    pub meta: ClipMeta,
}

#[derive(Clone, Copy)]
enum Group {
    Root = 0,
    Torso = 1,
    Leg = 2,
    Arm = 3,
}

struct JointPlan {
    group: Group,
    depth: i32,
    side: f64,
}

fn plan_joints(skel: &SkeletonSpec) -> Vec<JointPlan> {
    let j = skel.num_joints();
    let mut group = vec![Group::Torso; j];
    group[0] = Group::Root;
    let mut mark = |leaf: usize, g: Group| {
        let mut k = leaf;
        while let Some(p) = skel.parents[k] {
            group[k] = g;
            k = p;
        }
    };
    for &f in &skel.feet {
        mark(f, Group::Leg);
    }
    for &h in &skel.hands {
        mark(h, Group::Arm);
    }
    let mut rest = vec![[0.0f64; 3]; j];
    let mut plans: Vec<JointPlan> = Vec::with_capacity(j);
    for k in 0..j {
        let (depth, side) = match skel.parents[k] {
            None => (1, 1.0),
            Some(p) => {
                let o = skel.offsets[k];
                rest[k] = [rest[p][0] + o[0], rest[p][1] + o[1], rest[p][2] + o[2]];
                let depth = if group[p] as usize == group[k] as usize {
                    plans[p].depth + 1
                } else {
                    1
                };
                (depth, if rest[k][0] < 0.0 { -1.0 } else { 1.0 })
            }
        };
        plans.push(JointPlan {
            group: group[k],
            depth,
            side,
        });
    }
    plans
}

/// Chooses the beat phase so that no beat falls within the edge margins.
fn sample_phase(rng: &mut SplitMix64, period: f64, duration: f64) -> Result<f64> {
    for _ in 0..10_000 {
        let phi = rng.uniform_range(EDGE_MARGIN, period - EDGE_MARGIN);
        let tail = (duration - phi).rem_euclid(period);
        if (EDGE_MARGIN..=period - EDGE_MARGIN).contains(&tail) {
            return Ok(phi);
        }
    }
    Err(Error::invalid("could not place beats away from the clip edges"))
}

fn audio_feature(params: &SynthParams, phase: f64, amplitudes: &[f64; 4]) -> Vec<f64> {
    let cycle = phase / (60.0 / params.tempo_bpm);
    let angle = 2.0 * std::f64::consts::PI * cycle;
    let mut f = vec![params.tempo_bpm / TEMPO_RANGE.1, cycle, angle.sin(), angle.cos()];
    f.extend(amplitudes.iter().map(|a| a / AMPLITUDE_NORM));
    f.extend((0..GENRES).map(|g| if g == params.genre { 1.0 } else { 0.0 }));
    f
}

impl ClipMeta {
    /// Beat phase, in seconds, of a window starting `offset_s` into the clip.
    /// The swing repeats every two beats, so only windows whose first beat
    /// swings the same way as the clip's first beat have a phase in `[0, P)`;
    /// other offsets return `None`.
    pub fn window_phase(&self, offset_s: f64) -> Option<f64> {
        let period = 60.0 / self.params.tempo_bpm;
        let phi = (self.phase_s - offset_s).rem_euclid(2.0 * period);
        (phi < period).then_some(phi)
    }

    /// Audio feature describing the window starting at `offset_s`.
    pub fn window_audio_feature(&self, offset_s: f64) -> Result<Vec<f64>> {
        let phi = self
            .window_phase(offset_s)
            .ok_or_else(|| Error::invalid(format!("window at {offset_s} s starts on a mirrored half-cycle")))?;
        Ok(audio_feature(&self.params, phi, &self.amplitudes))
    }

    /// Beats inside `[offset_s, offset_s + len_s]`, relative to the window start.
    pub fn window_beats(&self, offset_s: f64, len_s: f64) -> Result<BeatGrid> {
        let beats = self
            .beats
            .timestamps()
            .iter()
            .map(|b| b - offset_s)
            .filter(|b| (0.0..=len_s).contains(b))
            .collect();
        BeatGrid::new(beats, len_s)
    }
}

pub fn generate_synthetic_clip(
    skel: &SkeletonSpec,
    params: &SynthParams,
    seed: u64,
) -> Result<SyntheticClip> {
    params.validate()?;
    let mut rng = SplitMix64::new(seed);
    let fps = SYNTH_FPS as f64;
    let frames = (params.duration_s * fps).round() as usize;
    let duration = frames as f64 / fps;
    let period = 60.0 / params.tempo_bpm;
    let phase = sample_phase(&mut rng, period, duration)?;

    let base = BASE_AMPLITUDE[params.genre];
    let mut amplitudes = [0.0; 4];
    for (a, b) in amplitudes.iter_mut().zip(base) {
        *a = b * rng.uniform_range(0.7, 1.3);
    }
    let axes = SWING_AXIS[params.genre];

    let plans = plan_joints(skel);
    let rest_pose: Vec<Mat3<f64>> = plans
        .iter()
        .map(|p| match (p.group, p.depth) {
            (Group::Arm, 1) => axis_angle([0.0, 0.0, 1.0], -0.9 * p.side),
            _ => super::rotation::identity(),
        })
        .collect();
    let swing: Vec<([f64; 3], f64)> = plans
        .iter()
        .map(|p| {
            let g = p.group as usize;
            let mut axis = [0.0; 3];
            axis[axes[g]] = p.side;
            (axis, amplitudes[g] * 0.7f64.powi(p.depth - 1))
        })
        .collect();
    let bounce = 0.02 * amplitudes[Group::Leg as usize] / base[Group::Leg as usize];

    let w = skel.frame_width();
    let mut data = Vec::with_capacity(frames * w);
    for i in 0..frames {
        let t = i as f64 / fps;
        let c = (std::f64::consts::PI * (t - phase) / period).cos();
        for (rest, (axis, amp)) in rest_pose.iter().zip(&swing) {
            let r = mat_mul(rest, &axis_angle(*axis, amp * c));
            data.extend(matrix_to_rot6d(&r)?);
        }
        let lift = (2.0 * std::f64::consts::PI * (t - phase) / period).cos();
        data.extend([0.0, 0.9 + bounce * lift, 0.0]);
    }
    let motion = MotionSequence::new(SYNTH_FPS, skel.num_joints(), data)?;

    let beats: Vec<f64> = (0..)
        .map(|k| phase + k as f64 * period)
        .take_while(|&b| b <= duration)
        .collect();
    let beats = BeatGrid::new(beats, duration)?;

    let audio_feature = audio_feature(params, phase, &amplitudes);

    let meta = ClipMeta {
        params: *params,
        phase_s: phase,
        amplitudes,
        audio_feature: audio_feature.clone(),
        beats: beats.clone(),
    };
    Ok(SyntheticClip {
        motion,
        audio_feature,
        beats,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(tempo: f64, dur: f64, genre: usize) -> SynthParams {
        SynthParams {
            tempo_bpm: tempo,
            duration_s: dur,
            genre,
        }
    }

    #[test]
    fn window_features_follow_the_beat_phase() {
        let skel = SkeletonSpec::compact();
        let clip = generate_synthetic_clip(&skel, &params(120.0, 6.0, 2), 3).unwrap();
        let meta = &clip.meta;
        assert_eq!(meta.window_audio_feature(0.0).unwrap(), clip.audio_feature);
        // Shifting by two beats gives the same phase; by one beat, the mirrored swing.
        let f2 = meta.window_audio_feature(1.0).unwrap();
        for (a, b) in f2.iter().zip(&clip.audio_feature) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(meta.window_audio_feature(0.5).is_err());
        let w = meta.window_beats(1.0, 4.0).unwrap();
        assert_eq!(w.len(), 8);
        assert!((w.timestamps()[0] - meta.phase_s).abs() < 1e-12);
    }

    #[test]
    fn placeable_rule_agrees_with_generator() {
        let skel = SkeletonSpec::compact();
        let mut rng = SplitMix64::new(77);
        for _ in 0..300 {
            let p = SynthParams {
                tempo_bpm: rng.uniform_range(150.0, 180.0),
                duration_s: rng.uniform_range(4.0, 5.0),
                genre: 0,
            };
            let ok = generate_synthetic_clip(&skel, &p, 1).is_ok();
            assert_eq!(ok, p.beats_placeable(), "{p:?}");
        }
        for _ in 0..50 {
            assert!(SynthParams::random(&mut rng, (4.0, 5.0)).beats_placeable());
        }
    }

    #[test]
    fn tempo_120_for_4_seconds_has_8_beats() {
        let skel = SkeletonSpec::compact();
        for seed in 0..20 {
            let clip = generate_synthetic_clip(&skel, &params(120.0, 4.0, 0), seed).unwrap();
            let b = clip.beats.timestamps();
            assert_eq!(b.len(), 8);
            for pair in b.windows(2) {
                assert!((pair[1] - pair[0] - 0.5).abs() < 1e-12);
            }
            assert_eq!(clip.motion.len(), 240);
            assert_eq!(clip.audio_feature.len(), AUDIO_FEATURE_DIM);
        }
    }

    #[test]
    fn same_seed_same_clip() {
        let skel = SkeletonSpec::compact();
        let p = params(97.0, 6.3, 2);
        assert_eq!(
            generate_synthetic_clip(&skel, &p, 9).unwrap(),
            generate_synthetic_clip(&skel, &p, 9).unwrap()
        );
        assert_ne!(
            generate_synthetic_clip(&skel, &p, 9).unwrap().motion,
            generate_synthetic_clip(&skel, &p, 10).unwrap().motion
        );
    }

    #[test]
    fn out_of_range_params_are_rejected() {
        let skel = SkeletonSpec::compact();
        for p in [params(59.0, 5.0, 0), params(181.0, 5.0, 0), params(120.0, 3.9, 0), params(120.0, 21.0, 0), params(120.0, 5.0, 4)] {
            assert!(generate_synthetic_clip(&skel, &p, 0).is_err());
        }
    }

    #[test]
    fn beats_avoid_clip_edges() {
        let skel = SkeletonSpec::compact();
        let mut rng = SplitMix64::new(77);
        for seed in 0..50 {
            let p = SynthParams::random(&mut rng, DURATION_RANGE);
            let clip = generate_synthetic_clip(&skel, &p, seed).unwrap();
            let b = clip.beats.timestamps();
            assert!(b[0] >= EDGE_MARGIN - 1e-12);
            assert!(*b.last().unwrap() <= clip.beats.duration() - EDGE_MARGIN + 1e-12);
        }
    }
}
