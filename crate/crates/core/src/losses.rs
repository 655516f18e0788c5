//! Training objective: reconstruction, all-joint geometry, key-joint position
//! and rotation terms, and the timestep-dependent weight between them.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::motion::skeleton::{SkeletonSpec, ROT_CHANNELS};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Added under square roots in the on-tape Gram–Schmidt step.
const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            alpha: 0.1,
        }
    }
}

impl LossWeights {
    /// Reconstruction term only.
    pub fn simple_only() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            alpha: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.lambda1, self.lambda2, self.lambda3, self.alpha];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) || self.alpha > 1.0 {
            return Err(Error::Config("loss weights must be >= 0 and alpha <= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub simple: f64,
    pub pos_all: f64,
    pub pos_key: f64,
    pub rot_key: f64,
    pub lambda_t: f64,
    pub total: f64,
}

/// λ_t = 1 − α·t/T.
pub fn dynamic_weight(t: usize, steps: usize, alpha: f64) -> Result<f64> {
    if steps == 0 || t > steps {
        return Err(Error::invalid(format!("timestep {t} outside 0..={steps}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(1.0 - alpha * t as f64 / steps as f64)
}

/// Per-frame joint kinematics of a `[L, J·6+3]` sequence on the tape.
pub struct TapeKinematics {
    /// Global position of each joint, `[L, 3]`.
    pub positions: Vec<Var>,
}

fn column<S: Scalar>(tape: &mut Tape<S>, x: Var, c: usize) -> Result<Var> {
    tape.slice(x, 1, c, 1)
}

fn row_norm<S: Scalar>(tape: &mut Tape<S>, x: Var) -> Result<Var> {
    let sq = tape.square(x)?;
    let s = tape.sum_axis(sq, 1)?;
    let s = tape.add_scalar(s, S::lit(NORM_EPS))?;
    tape.sqrt(s)
}

fn cross<S: Scalar>(tape: &mut Tape<S>, a: Var, b: Var) -> Result<Var> {
    let (a0, a1, a2) = (column(tape, a, 0)?, column(tape, a, 1)?, column(tape, a, 2)?);
    let (b0, b1, b2) = (column(tape, b, 0)?, column(tape, b, 1)?, column(tape, b, 2)?);
    let mut comp = |p: Var, q: Var, r: Var, s: Var| -> Result<Var> {
        let x = tape.mul(p, q)?;
        let y = tape.mul(r, s)?;
        tape.sub(x, y)
    };
    let c0 = comp(a1, b2, a2, b1)?;
    let c1 = comp(a2, b0, a0, b2)?;
    let c2 = comp(a0, b1, a1, b0)?;
    tape.concat(&[c0, c1, c2], 1)
}

/// Rotation columns `[b1, b2, b3]`, each `[L, 3]`, from `[L, 6]` rotation-6d rows.
fn rot6d_columns<S: Scalar>(tape: &mut Tape<S>, r6: Var) -> Result<[Var; 3]> {
    let a1 = tape.slice(r6, 1, 0, 3)?;
    let a2 = tape.slice(r6, 1, 3, 3)?;
    let n1 = row_norm(tape, a1)?;
    let b1 = tape.div(a1, n1)?;
    let d = tape.mul(b1, a2)?;
    let d = tape.sum_axis(d, 1)?;
    let proj = tape.mul(b1, d)?;
    let u = tape.sub(a2, proj)?;
    let nu = row_norm(tape, u)?;
    let b2 = tape.div(u, nu)?;
    let b3 = cross(tape, b1, b2)?;
    Ok([b1, b2, b3])
}

/// `Σ_m cols[m] · v[m]` for a per-frame vector `v` given as `[L, 3]`.
fn apply<S: Scalar>(tape: &mut Tape<S>, cols: &[Var; 3], v: Var) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (m, &c) in cols.iter().enumerate() {
        let vm = column(tape, v, m)?;
        let term = tape.mul(c, vm)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("three columns"))
}

/// Forward kinematics for every frame of `x` (`[L, J·6+3]`).
pub fn tape_kinematics<S: Scalar>(tape: &mut Tape<S>, x: Var, skel: &SkeletonSpec) -> Result<TapeKinematics> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 || shape[1] != skel.frame_width() {
        return Err(Error::ShapeMismatch {
            op: "tape_kinematics",
            lhs: shape,
            rhs: vec![0, skel.frame_width()],
        });
    }
    let j = skel.num_joints();
    let mut globals: Vec<[Var; 3]> = Vec::with_capacity(j);
    let mut positions: Vec<Var> = Vec::with_capacity(j);
    for k in 0..j {
        let r6 = tape.slice(x, 1, k * ROT_CHANNELS, ROT_CHANNELS)?;
        let local = rot6d_columns(tape, r6)?;
        match skel.parents[k] {
            None => {
                positions.push(tape.slice(x, 1, skel.translation_offset(), 3)?);
                globals.push(local);
            }
            Some(p) => {
                let g = globals[p];
                let o = skel.offsets[k];
                let mut d: Option<Var> = None;
                for (m, &col) in g.iter().enumerate() {
                    let term = tape.scale(col, S::lit(o[m]))?;
                    d = Some(match d {
                        None => term,
                        Some(a) => tape.add(a, term)?,
                    });
                }
                let d = d.expect("three columns");
                positions.push(tape.add(positions[p], d)?);
                let mut cols = [local[0]; 3];
                for (c, l) in cols.iter_mut().zip(local) {
                    *c = apply(tape, &g, l)?;
                }
                globals.push(cols);
            }
        }
    }
    Ok(TapeKinematics { positions })
}

/// Forward differences scaled by `fps`, with the last row repeated.
pub fn tape_velocity<S: Scalar>(tape: &mut Tape<S>, x: Var, fps: f64) -> Result<Var> {
    let l = tape.shape(x)[0];
    if l < 2 {
        return Err(Error::invalid("velocity needs at least two frames"));
    }
    let next = tape.slice(x, 0, 1, l - 1)?;
    let prev = tape.slice(x, 0, 0, l - 1)?;
    let d = tape.sub(next, prev)?;
    let v = tape.scale(d, S::lit(fps))?;
    let last = tape.slice(v, 0, l - 2, 1)?;
    tape.concat(&[v, last], 0)
}

/// Root-relative positions of every non-root joint, `[L, 3(J−1)]`.
fn relative_positions<S: Scalar>(tape: &mut Tape<S>, k: &TapeKinematics, joints: &[usize]) -> Result<Var> {
    let root = k.positions[0];
    let rel = joints
        .iter()
        .map(|&j| tape.sub(k.positions[j], root))
        .collect::<Result<Vec<_>>>()?;
    tape.concat(&rel, 1)
}

/// Squared error summed over columns, averaged over frames.
fn frame_mean_sq<S: Scalar>(tape: &mut Tape<S>, a: Var, b: Var) -> Result<Var> {
    let l = tape.shape(a)[0];
    let d = tape.sub(a, b)?;
    let s = tape.sum_sq(d)?;
    tape.scale(s, S::one() / S::from_usize_lossy(l))
}

/// Loss terms as tape variables.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub simple: Var,
    pub pos_all: Var,
    pub pos_key: Var,
    pub rot_key: Var,
    pub total: Var,
    pub lambda_t: f64,
}

struct Prepared {
    kin_pred: TapeKinematics,
    kin_gt: TapeKinematics,
}

fn prepare<S: Scalar>(tape: &mut Tape<S>, pred: Var, gt: Var, skel: &SkeletonSpec) -> Result<Prepared> {
    if tape.shape(pred) != tape.shape(gt) {
        return Err(Error::ShapeMismatch {
            op: "loss",
            lhs: tape.shape(pred).to_vec(),
            rhs: tape.shape(gt).to_vec(),
        });
    }
    Ok(Prepared {
        kin_pred: tape_kinematics(tape, pred, skel)?,
        kin_gt: tape_kinematics(tape, gt, skel)?,
    })
}

fn pos_all_var<S: Scalar>(tape: &mut Tape<S>, p: &Prepared, skel: &SkeletonSpec, fps: f64) -> Result<Var> {
    let all: Vec<usize> = (0..skel.num_joints()).collect();
    let pa = tape.concat(&p.kin_pred.positions, 1)?;
    let ga = tape.concat(&p.kin_gt.positions, 1)?;
    let pos = tape.mse(pa, ga)?;
    if skel.num_joints() == 1 {
        return Ok(pos);
    }
    let rp = relative_positions(tape, &p.kin_pred, &all[1..])?;
    let rg = relative_positions(tape, &p.kin_gt, &all[1..])?;
    let vp = tape_velocity(tape, rp, fps)?;
    let vg = tape_velocity(tape, rg, fps)?;
    let vel = tape.mse(vp, vg)?;
    tape.add(pos, vel)
}

fn pos_key_var<S: Scalar>(tape: &mut Tape<S>, p: &Prepared, skel: &SkeletonSpec, fps: f64) -> Result<Var> {
    let key = skel.key_joints();
    if key.is_empty() {
        return Err(Error::invalid("skeleton has no foot or hand tags"));
    }
    let kp: Vec<Var> = key.iter().map(|&j| p.kin_pred.positions[j]).collect();
    let kg: Vec<Var> = key.iter().map(|&j| p.kin_gt.positions[j]).collect();
    let kp = tape.concat(&kp, 1)?;
    let kg = tape.concat(&kg, 1)?;
    let pos = frame_mean_sq(tape, kp, kg)?;
    let rp = relative_positions(tape, &p.kin_pred, &key)?;
    let rg = relative_positions(tape, &p.kin_gt, &key)?;
    let vp = tape_velocity(tape, rp, fps)?;
    let vg = tape_velocity(tape, rg, fps)?;
    let vel = frame_mean_sq(tape, vp, vg)?;
    tape.add(pos, vel)
}

fn rot_key_var<S: Scalar>(tape: &mut Tape<S>, pred: Var, gt: Var, skel: &SkeletonSpec, fps: f64) -> Result<Var> {
    let mut key = skel.key_joints();
    if key.is_empty() {
        return Err(Error::invalid("skeleton has no foot or hand tags"));
    }
    key.insert(0, 0);
    let pick = |tape: &mut Tape<S>, x: Var| -> Result<Var> {
        let cols = key
            .iter()
            .map(|&j| tape.slice(x, 1, j * ROT_CHANNELS, ROT_CHANNELS))
            .collect::<Result<Vec<_>>>()?;
        tape.concat(&cols, 1)
    };
    let rp = pick(tape, pred)?;
    let rg = pick(tape, gt)?;
    let rot = frame_mean_sq(tape, rp, rg)?;
    let vp = tape_velocity(tape, rp, fps)?;
    let vg = tape_velocity(tape, rg, fps)?;
    let vel = frame_mean_sq(tape, vp, vg)?;
    tape.add(rot, vel)
}

/// Builds every loss term for `pred` against `gt` (both `[L, J·6+3]` at `fps`)
/// at diffusion step `t` of `steps`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_var<S: Scalar>(
    tape: &mut Tape<S>,
    pred: Var,
    gt: Var,
    t: usize,
    steps: usize,
    weights: &LossWeights,
    skel: &SkeletonSpec,
    fps: f64,
) -> Result<LossVars> {
    total_loss_split_var(tape, (pred, gt), pred, gt, t, steps, weights, skel, fps)
}

/// Like [`total_loss_var`], but the reconstruction term compares `recon`
/// (the diffusion variable, e.g. normalized motion) while the geometric terms
/// see `pred` and `gt` in motion space.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_split_var<S: Scalar>(
    tape: &mut Tape<S>,
    recon: (Var, Var),
    pred: Var,
    gt: Var,
    t: usize,
    steps: usize,
    weights: &LossWeights,
    skel: &SkeletonSpec,
    fps: f64,
) -> Result<LossVars> {
    weights.validate()?;
    let lambda_t = dynamic_weight(t, steps, weights.alpha)?;
    let prepared = prepare(tape, pred, gt, skel)?;
    if tape.shape(recon.0) != tape.shape(recon.1) {
        return Err(Error::ShapeMismatch {
            op: "reconstruction loss",
            lhs: tape.shape(recon.0).to_vec(),
            rhs: tape.shape(recon.1).to_vec(),
        });
    }
    let simple = tape.mse(recon.0, recon.1)?;
    let pos_all = pos_all_var(tape, &prepared, skel, fps)?;
    let pos_key = pos_key_var(tape, &prepared, skel, fps)?;
    let rot_key = rot_key_var(tape, pred, gt, skel, fps)?;
    let a = tape.scale(pos_all, S::lit(weights.lambda1))?;
    let b = tape.scale(pos_key, S::lit(weights.lambda2))?;
    let c = tape.scale(rot_key, S::lit(weights.lambda3))?;
    let geo = tape.add(a, b)?;
    let geo = tape.add(geo, c)?;
    let geo = tape.scale(geo, S::lit(lambda_t))?;
    let total = tape.add(simple, geo)?;
    Ok(LossVars {
        simple,
        pos_all,
        pos_key,
        rot_key,
        total,
        lambda_t,
    })
}

impl LossVars {
    pub fn breakdown<S: Scalar>(&self, tape: &Tape<S>) -> Result<LossBreakdown> {
        let v = |x: Var| tape.scalar_value(x).map(Scalar::as_f64);
        Ok(LossBreakdown {
            simple: v(self.simple)?,
            pos_all: v(self.pos_all)?,
            pos_key: v(self.pos_key)?,
            rot_key: v(self.rot_key)?,
            lambda_t: self.lambda_t,
            total: v(self.total)?,
        })
    }
}

fn constants<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> (Tape<S>, Var, Var) {
    let mut tape = Tape::new();
    let pa = tape.constant(a.clone());
    let pb = tape.constant(b.clone());
    (tape, pa, pb)
}

/// Mean squared error over all frames and channels.
pub fn loss_simple<S: Scalar>(x0_pred: &Tensor<S>, x0: &Tensor<S>) -> Result<S> {
    let (mut tape, a, b) = constants(x0_pred, x0);
    let l = tape.mse(a, b)?;
    tape.scalar_value(l)
}

pub fn loss_pos_all<S: Scalar>(pred: &Tensor<S>, gt: &Tensor<S>, skel: &SkeletonSpec, fps: f64) -> Result<S> {
    let (mut tape, a, b) = constants(pred, gt);
    let p = prepare(&mut tape, a, b, skel)?;
    let l = pos_all_var(&mut tape, &p, skel, fps)?;
    tape.scalar_value(l)
}

pub fn loss_pos_key<S: Scalar>(pred: &Tensor<S>, gt: &Tensor<S>, skel: &SkeletonSpec, fps: f64) -> Result<S> {
    let (mut tape, a, b) = constants(pred, gt);
    let p = prepare(&mut tape, a, b, skel)?;
    let l = pos_key_var(&mut tape, &p, skel, fps)?;
    tape.scalar_value(l)
}

pub fn loss_rot_key<S: Scalar>(pred: &Tensor<S>, gt: &Tensor<S>, skel: &SkeletonSpec, fps: f64) -> Result<S> {
    let (mut tape, a, b) = constants(pred, gt);
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::ShapeMismatch {
            op: "loss_rot_key",
            lhs: pred.shape().to_vec(),
            rhs: gt.shape().to_vec(),
        });
    }
    let l = rot_key_var(&mut tape, a, b, skel, fps)?;
    tape.scalar_value(l)
}

#[allow(clippy::too_many_arguments)]
pub fn total_loss<S: Scalar>(
    x0_pred: &Tensor<S>,
    x0: &Tensor<S>,
    t: usize,
    steps: usize,
    weights: &LossWeights,
    skel: &SkeletonSpec,
    fps: f64,
) -> Result<LossBreakdown> {
    let (mut tape, a, b) = constants(x0_pred, x0);
    total_loss_var(&mut tape, a, b, t, steps, weights, skel, fps)?.breakdown(&tape)
}
