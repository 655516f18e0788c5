//! Evaluation: kinetic and geometric features, Fréchet distance, diversity,
//! dance-beat extraction and the beat alignment score.
//!
//! Everything here works in `f64`; the inputs are stored motion clips rather
//! than tape values.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{BeatGrid, MotionSequence, SkeletonSpec};

/// Default kernel width of the beat alignment score, in frames.
pub const BAS_SIGMA_FRAMES: f64 = 3.0;
/// Centered moving-average window applied to the kinetic velocity.
pub const SMOOTH_WINDOW: usize = 5;
/// Tolerance, relative to max(1, peak), under which neighbouring kinetic
/// values count as equal.
pub const PLATEAU_TOL: f64 = 1e-9;
/// Height above the lower foot at which a foot counts as lifted, in metres.
pub const FOOT_LIFT: f64 = 0.05;
/// Hand separation below which the hands count as close, in metres.
pub const HANDS_CLOSE: f64 = 0.3;
/// Horizontal foot separation above which the feet count as apart.
pub const FEET_APART: f64 = 0.6;
/// Horizontal hand distance from the root at which an arm counts as extended.
pub const ARM_EXTENDED: f64 = 0.6;

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn too_short(what: &str, need: usize, got: usize) -> Error {
    Error::invalid(format!("{what} needs at least {need} frames, got {got}"))
}

/// Per joint: horizontal kinetic energy `½·mean(vx²+vz²)`, vertical kinetic
/// energy `½·mean(vy²)` and mean squared acceleration, from global positions.
/// Length `3·J`.
pub fn kinetic_features(seq: &MotionSequence, skel: &SkeletonSpec) -> Result<Vec<f64>> {
    if seq.len() < 3 {
        return Err(too_short("kinetic features", 3, seq.len()));
    }
    let pos = seq.positions(skel)?;
    let fps = f64::from(seq.fps());
    let l = pos.len();
    let mut out = Vec::with_capacity(3 * skel.num_joints());
    for j in 0..skel.num_joints() {
        let vel: Vec<[f64; 3]> = (0..l - 1)
            .map(|i| sub(pos[i + 1][j], pos[i][j]).map(|d| d * fps))
            .collect();
        let (mut h, mut v) = (0.0, 0.0);
        for u in &vel {
            h += u[0] * u[0] + u[2] * u[2];
            v += u[1] * u[1];
        }
        let mut acc = 0.0;
        for i in 0..vel.len() - 1 {
            let a = norm(sub(vel[i + 1], vel[i]).map(|d| d * fps));
            acc += a * a;
        }
        let n = vel.len() as f64;
        out.extend([0.5 * h / n, 0.5 * v / n, acc / (n - 1.0)]);
    }
    Ok(out)
}

/// Frame-averaged rates of boolean pose descriptors:
/// per hand, above the root and horizontally extended;
/// per foot, lifted above the lower foot;
/// then hands close together and feet apart when both pairs exist.
pub fn geometric_features(seq: &MotionSequence, skel: &SkeletonSpec) -> Result<Vec<f64>> {
    let pos = seq.positions(skel)?;
    let hands = &skel.hands;
    let feet = &skel.feet;
    let width = 2 * hands.len() + feet.len() + usize::from(hands.len() >= 2) + usize::from(feet.len() >= 2);
    let mut rates = vec![0.0; width];
    for frame in &pos {
        let root = frame[0];
        let mut flags = Vec::with_capacity(width);
        for &h in hands {
            let d = sub(frame[h], root);
            flags.push(d[1] > 0.0);
            flags.push((d[0] * d[0] + d[2] * d[2]).sqrt() > ARM_EXTENDED);
        }
        let lowest = feet.iter().map(|&f| frame[f][1]).fold(f64::INFINITY, f64::min);
        for &f in feet {
            flags.push(frame[f][1] - lowest > FOOT_LIFT);
        }
        if hands.len() >= 2 {
            flags.push(norm(sub(frame[hands[0]], frame[hands[1]])) < HANDS_CLOSE);
        }
        if feet.len() >= 2 {
            let d = sub(frame[feet[0]], frame[feet[1]]);
            flags.push((d[0] * d[0] + d[2] * d[2]).sqrt() > FEET_APART);
        }
        for (r, f) in rates.iter_mut().zip(flags) {
            *r += f64::from(u8::from(f));
        }
    }
    let n = pos.len() as f64;
    Ok(rates.into_iter().map(|r| r / n).collect())
}

/// Mean and covariance of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::ShapeMismatch {
                op: "gaussian_stats",
                lhs: vec![d],
                rhs: vec![cov.nrows(), cov.ncols()],
            });
        }
        Ok(Self { mean, cov })
    }

    /// Sample mean and unbiased covariance; a single vector gets zero covariance.
    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        let first = features.first().ok_or_else(|| Error::invalid("no feature vectors"))?;
        let d = first.len();
        if features.iter().any(|f| f.len() != d) {
            return Err(Error::invalid("feature vectors differ in length"));
        }
        let n = features.len();
        let mut mean = DVector::zeros(d);
        for f in features {
            mean += DVector::from_column_slice(f);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        if n > 1 {
            for f in features {
                let c = DVector::from_column_slice(f) - &mean;
                cov += &c * c.transpose();
            }
            cov /= (n - 1) as f64;
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Symmetric eigen-decomposition with tiny negative eigenvalues clamped to zero.
fn psd_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if *v < -1e-10 * scale {
            return Err(Error::invalid(format!("matrix square root of a non-PSD matrix (eigenvalue {v})")));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = psd_eigen(m)?;
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt)) * e.eigenvectors.transpose())
}

/// `‖µa−µb‖² + Tr(Σa + Σb − 2(ΣaΣb)^½)`. The cross trace is taken as the sum
/// of singular values of `Σb^½ Σa^½`, which avoids squaring small eigenvalues
/// when the covariances are rank deficient.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            op: "frechet_distance",
            lhs: vec![a.dim()],
            rhs: vec![b.dim()],
        });
    }
    let cross: f64 = (psd_sqrt(&b.cov)? * psd_sqrt(&a.cov)?).singular_values().iter().sum();
    let dm = (&a.mean - &b.mean).norm_squared();
    let d = dm + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if !d.is_finite() {
        return Err(Error::NonFinite("frechet_distance"));
    }
    Ok(d)
}

/// Mean Euclidean distance over all unordered pairs.
pub fn diversity(features: &[Vec<f64>]) -> Result<f64> {
    if features.len() < 2 {
        return Err(Error::invalid("diversity needs at least two feature vectors"));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::invalid("feature vectors differ in length"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            let s: f64 = features[i].iter().zip(&features[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            total += s.sqrt();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Summed root-relative joint speed between consecutive frames. Entry `i`
/// describes the interval from frame `i` to `i+1`, so it sits at time
/// `(i + ½)/fps`.
pub fn kinetic_velocity(seq: &MotionSequence, skel: &SkeletonSpec) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(too_short("kinetic velocity", 2, seq.len()));
    }
    let pos = seq.positions(skel)?;
    let fps = f64::from(seq.fps());
    Ok(pos
        .windows(2)
        .map(|w| {
            (1..w[0].len())
                .map(|j| {
                    let r0 = sub(w[0][j], w[0][0]);
                    let r1 = sub(w[1][j], w[1][0]);
                    norm(sub(r1, r0)) * fps
                })
                .sum()
        })
        .collect())
}

/// Centered moving average; near the ends the window shrinks to what exists.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Positions of strict local minima, treating runs of values equal within
/// `tol` as one plateau located at its midpoint. Plateaus touching either end
/// are not minima.
pub fn plateau_minima(x: &[f64], tol: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < x.len() {
        let mut j = i;
        while j + 1 < x.len() && (x[j + 1] - x[i]).abs() <= tol {
            j += 1;
        }
        if i > 0 && j + 1 < x.len() && x[i - 1] > x[i] + tol && x[j + 1] > x[j] + tol {
            out.push((i + j) as f64 / 2.0);
        }
        i = j + 1;
    }
    out
}

/// Dance beats: local minima of the smoothed kinetic velocity.
pub fn extract_dance_beats(seq: &MotionSequence, skel: &SkeletonSpec) -> Result<BeatGrid> {
    if seq.len() < 3 {
        return Err(too_short("beat extraction", 3, seq.len()));
    }
    let k = moving_average(&kinetic_velocity(seq, skel)?, SMOOTH_WINDOW);
    let peak = k.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    let fps = f64::from(seq.fps());
    let times = plateau_minima(&k, PLATEAU_TOL * peak).into_iter().map(|i| (i + 0.5) / fps).collect();
    BeatGrid::new(times, seq.duration())
}

/// For each music beat, a Gaussian kernel of the distance to the nearest dance
/// beat, averaged. `sigma` is in frames at `fps`. No dance beats scores 0.
pub fn beat_align_score(dance: &BeatGrid, music: &BeatGrid, sigma: f64, fps: f64) -> Result<f64> {
    if music.is_empty() {
        return Err(Error::invalid("beat alignment needs at least one music beat"));
    }
    if !(sigma > 0.0 && fps > 0.0) {
        return Err(Error::invalid("sigma and fps must be positive"));
    }
    if dance.is_empty() {
        return Ok(0.0);
    }
    let d = dance.timestamps();
    let mut total = 0.0;
    for &m in music.timestamps() {
        // Nearest dance beat by binary search on the sorted grid.
        let k = d.partition_point(|&t| t < m);
        let mut best = f64::INFINITY;
        for idx in [k.wrapping_sub(1), k] {
            if let Some(&t) = d.get(idx) {
                best = best.min((t - m).abs());
            }
        }
        let frames = best * fps;
        total += (-frames * frames / (2.0 * sigma * sigma)).exp();
    }
    Ok(total / music.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fid_k: f64,
    pub fid_g: f64,
    pub div_k: f64,
    pub div_g: f64,
    pub bas: f64,
    pub clips: usize,
}

/// Scores `generated` against `reference`. `music_beats[i]` holds the beats of
/// the audio that generated clip `i` was produced for.
pub fn evaluate_suite(
    generated: &[MotionSequence],
    reference: &[MotionSequence],
    music_beats: &[BeatGrid],
    skel: &SkeletonSpec,
    sigma: f64,
) -> Result<EvalReport> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::invalid("evaluation needs generated and reference clips"));
    }
    if music_beats.len() != generated.len() {
        return Err(Error::invalid(format!(
            "{} beat grids for {} generated clips",
            music_beats.len(),
            generated.len()
        )));
    }
    let feats = |set: &[MotionSequence], f: fn(&MotionSequence, &SkeletonSpec) -> Result<Vec<f64>>| {
        set.iter().map(|s| f(s, skel)).collect::<Result<Vec<_>>>()
    };
    let (gk, rk) = (feats(generated, kinetic_features)?, feats(reference, kinetic_features)?);
    let (gg, rg) = (feats(generated, geometric_features)?, feats(reference, geometric_features)?);
    let fid = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Result<f64> {
        frechet_distance(&GaussianStats::from_features(a)?, &GaussianStats::from_features(b)?)
    };
    let mut bas = 0.0;
    for (seq, music) in generated.iter().zip(music_beats) {
        let dance = extract_dance_beats(seq, skel)?;
        bas += beat_align_score(&dance, music, sigma, f64::from(seq.fps()))?;
    }
    Ok(EvalReport {
        fid_k: fid(&gk, &rk)?,
        fid_g: fid(&gg, &rg)?,
        div_k: diversity(&gk)?,
        div_g: diversity(&gg)?,
        bas: bas / generated.len() as f64,
        clips: generated.len(),
    })
}
