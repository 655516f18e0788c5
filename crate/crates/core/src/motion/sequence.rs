//! Motion sequences, velocities, resampling and beat grids.

use serde::{Deserialize, Serialize};

use super::skeleton::{SkeletonSpec, ROT_CHANNELS};
use crate::error::{Error, Result};

/// Frame rates a sequence may carry.
pub const SUPPORTED_FPS: [u32; 3] = [15, 30, 60];

/// `L` frames of per-joint rotation-6d followed by root translation.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    fps: u32,
    joints: usize,
    frames: Vec<f64>,
}

impl MotionSequence {
    /// `frames` is row-major `L × (joints·6 + 3)`.
    pub fn new(fps: u32, joints: usize, frames: Vec<f64>) -> Result<Self> {
        if !SUPPORTED_FPS.contains(&fps) {
            return Err(Error::invalid(format!("unsupported frame rate {fps}")));
        }
        if joints == 0 {
            return Err(Error::invalid("sequence needs at least one joint"));
        }
        let width = joints * ROT_CHANNELS + 3;
        if frames.len() % width != 0 {
            return Err(Error::InvalidShape {
                shape: vec![frames.len() / width, width],
                len: frames.len(),
            });
        }
        if frames.len() / width < 2 {
            return Err(Error::invalid("sequence needs at least two frames"));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("motion sequence"));
        }
        Ok(Self { fps, joints, frames })
    }

    /// Every frame set to the identity pose at the given root translation.
    pub fn rest(fps: u32, joints: usize, len: usize, root: [f64; 3]) -> Result<Self> {
        let mut frame = Vec::with_capacity(joints * ROT_CHANNELS + 3);
        for _ in 0..joints {
            frame.extend_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        }
        frame.extend_from_slice(&root);
        Self::new(fps, joints, frame.repeat(len))
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn width(&self) -> usize {
        self.joints * ROT_CHANNELS + 3
    }

    pub fn len(&self) -> usize {
        self.frames.len() / self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Duration in seconds, counting each frame as `1/fps`.
    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.fps as f64
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.frames[i * w..(i + 1) * w]
    }

    pub fn data(&self) -> &[f64] {
        &self.frames
    }

    pub fn into_data(self) -> Vec<f64> {
        self.frames
    }

    fn check_skeleton(&self, skel: &SkeletonSpec) -> Result<()> {
        if skel.num_joints() != self.joints {
            return Err(Error::ShapeMismatch {
                op: "skeleton",
                lhs: vec![self.joints],
                rhs: vec![skel.num_joints()],
            });
        }
        Ok(())
    }

    /// Global joint positions, one `J`-vector per frame.
    pub fn positions(&self, skel: &SkeletonSpec) -> Result<Vec<Vec<[f64; 3]>>> {
        self.check_skeleton(skel)?;
        (0..self.len()).map(|i| skel.forward_kinematics(self.frame(i))).collect()
    }

    /// Keeps every `fps / target_fps`-th frame, starting with frame 0.
    pub fn downsample(&self, target_fps: u32) -> Result<Self> {
        let k = integer_ratio(self.fps, target_fps)?;
        let w = self.width();
        let mut out = Vec::with_capacity(self.frames.len() / k + w);
        for i in (0..self.len()).step_by(k) {
            out.extend_from_slice(self.frame(i));
        }
        if out.len() / w < 2 {
            return Err(Error::invalid("downsampled sequence would be shorter than two frames"));
        }
        Self::new(target_fps, self.joints, out)
    }

    /// Linear interpolation to `target_fps`, giving `k·L` frames for ratio `k`.
    ///
    /// Original frame `i` lands on output frame `k·i` unchanged; the `k − 1`
    /// frames after the last original are extrapolated along the final segment.
    pub fn upsample_linear(&self, target_fps: u32) -> Result<Self> {
        let k = integer_ratio(target_fps, self.fps)?;
        let (w, l) = (self.width(), self.len());
        let mut out = Vec::with_capacity(self.frames.len() * k);
        for i in 0..l {
            let a = self.frame(i);
            out.extend_from_slice(a);
            let (lo, hi, base) = if i + 1 < l {
                (a, self.frame(i + 1), 0.0)
            } else {
                (self.frame(i - 1), a, 1.0)
            };
            for r in 1..k {
                let f = base + r as f64 / k as f64;
                out.extend((0..w).map(|c| lo[c] + (hi[c] - lo[c]) * f));
            }
        }
        Self::new(target_fps, self.joints, out)
    }

    /// Contiguous frame range as a new sequence.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::invalid("window exceeds sequence length"));
        }
        let w = self.width();
        Self::new(self.fps, self.joints, self.frames[start * w..(start + len) * w].to_vec())
    }
}

fn integer_ratio(hi: u32, lo: u32) -> Result<usize> {
    if lo == 0 || hi < lo || hi % lo != 0 {
        return Err(Error::invalid(format!("frame-rate ratio {hi}/{lo} is not an integer")));
    }
    Ok((hi / lo) as usize)
}

/// Forward-difference velocities scaled by fps; the last frame repeats the previous one.
#[derive(Clone, Debug, PartialEq)]
pub struct Velocities {
    pub frames: usize,
    /// Joints with a position velocity entry: every joint except the root.
    pub joints: usize,
    /// `frames × joints × 3`, root-relative.
    pub position: Vec<f64>,
    /// `frames × J × 6`, rotation-6d channels including the root.
    pub rotation: Vec<f64>,
}

impl Velocities {
    pub fn position_at(&self, frame: usize, joint: usize) -> [f64; 3] {
        let o = (frame * self.joints + joint) * 3;
        [self.position[o], self.position[o + 1], self.position[o + 2]]
    }
}

pub fn compute_velocities(seq: &MotionSequence, skel: &SkeletonSpec) -> Result<Velocities> {
    let pos = seq.positions(skel)?;
    let l = seq.len();
    let j = seq.joints();
    let fps = seq.fps() as f64;
    let rel = |i: usize, k: usize| -> [f64; 3] {
        let (p, r) = (pos[i][k], pos[i][0]);
        [p[0] - r[0], p[1] - r[1], p[2] - r[2]]
    };
    let mut position = Vec::with_capacity(l * (j - 1) * 3);
    let mut rotation = Vec::with_capacity(l * j * ROT_CHANNELS);
    for i in 0..l {
        let i0 = i.min(l - 2);
        for k in 1..j {
            let (a, b) = (rel(i0, k), rel(i0 + 1, k));
            position.extend((0..3).map(|c| (b[c] - a[c]) * fps));
        }
        let (fa, fb) = (seq.frame(i0), seq.frame(i0 + 1));
        rotation.extend((0..j * ROT_CHANNELS).map(|c| (fb[c] - fa[c]) * fps));
    }
    Ok(Velocities {
        frames: l,
        joints: j - 1,
        position,
        rotation,
    })
}

/// Ordered beat timestamps in seconds over a clip of known duration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeatGrid {
    timestamps: Vec<f64>,
    duration: f64,
}

impl BeatGrid {
    pub fn new(timestamps: Vec<f64>, duration: f64) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::invalid("beat grid duration must be positive"));
        }
        if timestamps.iter().any(|t| !t.is_finite() || *t < 0.0 || *t > duration) {
            return Err(Error::invalid("beat outside the clip"));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("beats must be strictly increasing"));
        }
        Ok(Self { timestamps, duration })
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}
