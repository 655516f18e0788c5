//! Contrastive alignment of music features to motion embeddings.
//!
//! Two frozen encoders map an audio feature and a 30 fps motion clip into a
//! shared 512-wide space. Only the adapter MLP on the music side and the
//! temperature are trained, with a symmetric InfoNCE objective.

use std::collections::BTreeMap;

use crate::autodiff::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::motion::synth::AUDIO_FEATURE_DIM;
use crate::motion::MotionSequence;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::{Bound, ParamSet};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const EMBED_DIM: usize = 512;
pub const ADAPTER_HIDDEN: usize = 512;
pub const ALIGN_FPS: u32 = 30;
pub const ALIGN_FRAMES: usize = 180;
pub const TAU_INIT: f64 = 0.07;
pub const TAU_RANGE: (f64, f64) = (1e-3, 100.0);

const MOTION_HIDDEN: usize = 64;
const LN_EPS: f64 = 1e-5;

fn dense<S: Scalar>(p: &ParamSet<S>, name: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
    x.matmul(p.get(&format!("{name}.w"))?)?.add(p.get(&format!("{name}.b"))?)
}

/// Fixed random projection of the audio feature followed by `tanh`.
#[derive(Clone, Debug, PartialEq)]
pub struct MusicEncoder<S> {
    weight: Tensor<S>,
    bias: Tensor<S>,
}

impl<S: Scalar> MusicEncoder<S> {
    pub fn new(seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let weight = Tensor::randn([AUDIO_FEATURE_DIM, EMBED_DIM], (AUDIO_FEATURE_DIM as f64).powf(-0.5), &mut rng);
        let bias = Tensor::randn([1, EMBED_DIM], 0.1, &mut rng);
        Self { weight, bias }
    }

    /// Encodes one feature vector to `[1, 512]`.
    pub fn encode(&self, feature: &[f64]) -> Result<Tensor<S>> {
        if feature.len() != AUDIO_FEATURE_DIM {
            return Err(Error::ShapeMismatch {
                op: "music_encoder",
                lhs: vec![feature.len()],
                rhs: vec![AUDIO_FEATURE_DIM],
            });
        }
        let x = Tensor::new([1, AUDIO_FEATURE_DIM], feature.iter().map(|&v| S::lit(v)).collect())?;
        Ok(x.matmul(&self.weight)?.add(&self.bias)?.map(|v| v.tanh()))
    }

    pub fn encode_batch(&self, features: &[Vec<f64>]) -> Result<Tensor<S>> {
        let rows = features.iter().map(|f| self.encode(f)).collect::<Result<Vec<_>>>()?;
        Tensor::concat(&rows.iter().collect::<Vec<_>>(), 0)
    }

    pub fn tensors(&self) -> [&Tensor<S>; 2] {
        [&self.weight, &self.bias]
    }
}

/// One-layer single-head transformer over frames, mean-pooled and projected.
/// Each frame token sees its channels and their finite-difference velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionEncoder<S> {
    frame_width: usize,
    params: ParamSet<S>,
}

impl<S: Scalar> MotionEncoder<S> {
    pub fn frame_width(&self) -> usize {
        self.frame_width
    }

    pub fn new(frame_width: usize, seed: u64) -> Result<Self> {
        if frame_width == 0 {
            return Err(Error::invalid("motion encoder needs a positive frame width"));
        }
        let mut rng = SplitMix64::new(seed);
        let h = MOTION_HIDDEN;
        let mut p = ParamSet::new();
        let mut dense = |p: &mut ParamSet<S>, name: &str, i: usize, o: usize| -> Result<()> {
            p.push(format!("{name}.w"), Tensor::randn([i, o], (i as f64).powf(-0.5), &mut rng))?;
            p.push(format!("{name}.b"), Tensor::zeros([1, o]))
        };
        dense(&mut p, "in", 2 * frame_width, h)?;
        for m in ["q", "k", "v", "o"] {
            dense(&mut p, m, h, h)?;
        }
        dense(&mut p, "mlp1", h, 2 * h)?;
        dense(&mut p, "mlp2", 2 * h, h)?;
        dense(&mut p, "out", h, EMBED_DIM)?;
        for n in ["ln1", "ln2", "final_ln"] {
            p.push(format!("{n}.g"), Tensor::full([h], S::one()))?;
            p.push(format!("{n}.b"), Tensor::zeros([h]))?;
        }
        Ok(Self { frame_width, params: p })
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    fn norm(&self, name: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
        let p = &self.params;
        x.layernorm(p.get(&format!("{name}.g"))?, p.get(&format!("{name}.b"))?, S::lit(LN_EPS))
    }

    /// Encodes a 6 s clip at 30 fps to `[1, 512]`.
    pub fn encode(&self, motion: &MotionSequence) -> Result<Tensor<S>> {
        if motion.fps() != ALIGN_FPS || motion.len() != ALIGN_FRAMES {
            return Err(Error::invalid(format!(
                "motion encoder expects {ALIGN_FRAMES} frames at {ALIGN_FPS} fps, got {} at {}",
                motion.len(),
                motion.fps()
            )));
        }
        if motion.width() != self.frame_width {
            return Err(Error::ShapeMismatch {
                op: "motion_encoder",
                lhs: vec![motion.width()],
                rhs: vec![self.frame_width],
            });
        }
        let (l, w) = (motion.len(), self.frame_width);
        let fps = f64::from(motion.fps());
        let mut feats = Vec::with_capacity(l * 2 * w);
        for i in 0..l {
            let (a, b) = if i + 1 < l { (i, i + 1) } else { (i - 1, i) };
            feats.extend(motion.frame(i).iter().map(|&v| S::lit(v)));
            feats.extend(
                motion.frame(b).iter().zip(motion.frame(a)).map(|(&x1, &x0)| S::lit((x1 - x0) * fps)),
            );
        }
        let x = Tensor::new([l, 2 * w], feats)?;
        let mut x = dense(&self.params, "in", &x)?;

        let a = self.norm("ln1", &x)?;
        let q = dense(&self.params, "q", &a)?;
        let k = dense(&self.params, "k", &a)?;
        let v = dense(&self.params, "v", &a)?;
        let scale = S::one() / S::from_usize_lossy(MOTION_HIDDEN).sqrt();
        let att = q.matmul(&k.transpose()?)?.scale(scale)?.softmax(1)?;
        x = x.add(&dense(&self.params, "o", &att.matmul(&v)?)?)?;

        let a = self.norm("ln2", &x)?;
        let m = dense(&self.params, "mlp1", &a)?.gelu()?;
        x = x.add(&dense(&self.params, "mlp2", &m)?)?;

        let x = self.norm("final_ln", &x)?;
        let pooled = x.sum_axis(0, true)?.scale(S::one() / S::from_usize_lossy(l))?;
        dense(&self.params, "out", &pooled)
    }

    pub fn encode_batch(&self, clips: &[MotionSequence]) -> Result<Tensor<S>> {
        let rows = clips.iter().map(|c| self.encode(c)).collect::<Result<Vec<_>>>()?;
        Tensor::concat(&rows.iter().collect::<Vec<_>>(), 0)
    }
}

/// Cuts the first 6 s of a clip and resamples it to 30 fps.
pub fn prepare_alignment_motion(motion: &MotionSequence) -> Result<MotionSequence> {
    let m = if motion.fps() == ALIGN_FPS { motion.clone() } else { motion.downsample(ALIGN_FPS)? };
    if m.len() < ALIGN_FRAMES {
        return Err(Error::invalid(format!(
            "alignment clips need {ALIGN_FRAMES} frames at {ALIGN_FPS} fps, got {}",
            m.len()
        )));
    }
    m.window(0, ALIGN_FRAMES)
}

/// Two-layer GELU MLP plus the log-temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct Adapter<S> {
    pub params: ParamSet<S>,
}

const ADAPTER_NAMES: [&str; 5] = ["fc1.w", "fc1.b", "fc2.w", "fc2.b", "log_tau"];

impl<S: Scalar> Adapter<S> {
    pub fn new(rng: &mut SplitMix64) -> Result<Self> {
        let mut p = ParamSet::new();
        p.push("fc1.w", Tensor::randn([EMBED_DIM, ADAPTER_HIDDEN], (EMBED_DIM as f64).powf(-0.5), rng))?;
        p.push("fc1.b", Tensor::zeros([1, ADAPTER_HIDDEN]))?;
        p.push("fc2.w", Tensor::randn([ADAPTER_HIDDEN, EMBED_DIM], (ADAPTER_HIDDEN as f64).powf(-0.5), rng))?;
        p.push("fc2.b", Tensor::zeros([1, EMBED_DIM]))?;
        p.push("log_tau", Tensor::full([1], S::lit(TAU_INIT.ln())))?;
        Ok(Self { params: p })
    }

    pub fn from_params(params: ParamSet<S>) -> Result<Self> {
        if params.names() != ADAPTER_NAMES {
            return Err(Error::Config("adapter parameter names do not match".into()));
        }
        let shapes: [&[usize]; 5] = [
            &[EMBED_DIM, ADAPTER_HIDDEN],
            &[1, ADAPTER_HIDDEN],
            &[ADAPTER_HIDDEN, EMBED_DIM],
            &[1, EMBED_DIM],
            &[1],
        ];
        for (t, s) in params.tensors().iter().zip(shapes) {
            if t.shape() != s {
                return Err(Error::Config("adapter parameter shapes do not match".into()));
            }
        }
        Ok(Self { params })
    }

    pub fn tau(&self) -> Result<S> {
        Ok(self.params.get("log_tau")?.data()[0].exp())
    }

    pub fn forward_var(&self, tape: &mut Tape<S>, p: &Bound<'_, S>, x: Var) -> Result<Var> {
        let h = tape.matmul(x, p.var("fc1.w")?)?;
        let h = tape.add(h, p.var("fc1.b")?)?;
        let h = tape.gelu(h)?;
        let o = tape.matmul(h, p.var("fc2.w")?)?;
        tape.add(o, p.var("fc2.b")?)
    }

    /// `[N, 512]` music vectors to `[N, 512]` adapted vectors.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let h = dense(&self.params, "fc1", x)?.gelu()?;
        dense(&self.params, "fc2", &h)
    }

    fn clamp_tau(&mut self) -> Result<()> {
        let lt = self.params.get("log_tau")?.data()[0];
        let (lo, hi) = (S::lit(TAU_RANGE.0.ln()), S::lit(TAU_RANGE.1.ln()));
        let clamped = if lt < lo { lo } else if lt > hi { hi } else { lt };
        self.params.set("log_tau", Tensor::full([1], clamped))
    }
}

fn check_rows<S: Scalar>(x: &Tensor<S>, op: &'static str) -> Result<(usize, usize)> {
    let (n, d) = x.dims2()?;
    if n < 2 {
        return Err(Error::invalid(format!("{op} needs at least 2 rows, got {n}")));
    }
    for i in 0..n {
        if x.row(i).iter().all(|v| v.is_zero()) {
            return Err(Error::invalid(format!("{op}: row {i} has zero norm")));
        }
    }
    Ok((n, d))
}

fn normalize_rows_var<S: Scalar>(tape: &mut Tape<S>, x: Var) -> Result<Var> {
    let sq = tape.square(x)?;
    let n2 = tape.sum_axis(sq, 1)?;
    let n = tape.sqrt(n2)?;
    tape.div(x, n)
}

/// Symmetric InfoNCE on a tape; `log_tau` has shape `[1]`.
pub fn infonce_var<S: Scalar>(tape: &mut Tape<S>, music: Var, dance: Var, log_tau: Var) -> Result<Var> {
    let (n, d) = check_rows(tape.value(music), "infonce")?;
    let (n2, d2) = check_rows(tape.value(dance), "infonce")?;
    if (n, d) != (n2, d2) {
        return Err(Error::ShapeMismatch {
            op: "infonce",
            lhs: vec![n, d],
            rhs: vec![n2, d2],
        });
    }
    let m = normalize_rows_var(tape, music)?;
    let dn = normalize_rows_var(tape, dance)?;
    let sim = tape.matmul_nt(m, dn)?;
    let neg = tape.neg(log_tau)?;
    let inv_tau = tape.exp(neg)?;
    let logits = tape.mul(sim, inv_tau)?;
    let eye = tape.constant(Tensor::eye(n));
    let mut total = None;
    for axis in [1, 0] {
        let ls = tape.log_softmax(logits, axis)?;
        let diag = tape.mul(ls, eye)?;
        let s = tape.sum(diag)?;
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    tape.scale(total.expect("two directions"), -S::one() / S::from_usize_lossy(2 * n))
}

/// Plain InfoNCE with a fixed temperature. With `symmetric` false only the
/// music-to-dance direction is averaged.
pub fn infonce_loss<S: Scalar>(music: &Tensor<S>, dance: &Tensor<S>, tau: S, symmetric: bool) -> Result<S> {
    if !(tau > S::zero()) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let mut tape = Tape::new();
    let m = tape.constant(music.clone());
    let d = tape.constant(dance.clone());
    let lt = tape.constant(Tensor::full([1], tau.ln()));
    if symmetric {
        let l = infonce_var(&mut tape, m, d, lt)?;
        return tape.scalar_value(l);
    }
    let (n, _) = check_rows(music, "infonce")?;
    check_rows(dance, "infonce")?;
    let m = normalize_rows_var(&mut tape, m)?;
    let d = normalize_rows_var(&mut tape, d)?;
    let sim = tape.matmul_nt(m, d)?;
    let logits = tape.scale(sim, S::one() / tau)?;
    let ls = tape.log_softmax(logits, 1)?;
    let eye = tape.constant(Tensor::eye(n));
    let diag = tape.mul(ls, eye)?;
    let s = tape.sum(diag)?;
    Ok(-tape.scalar_value(s)? / S::from_usize_lossy(n))
}

pub fn cosine_similarity<S: Scalar>(a: &[S], b: &[S]) -> Result<S> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let dot = a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y);
    let na = a.iter().fold(S::zero(), |acc, &x| acc + x * x).sqrt();
    let nb = b.iter().fold(S::zero(), |acc, &x| acc + x * x).sqrt();
    if na.is_zero() || nb.is_zero() {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok(dot / (na * nb))
}

/// Fraction of rows whose most similar column is the matching one.
pub fn recall_at_1<S: Scalar>(queries: &Tensor<S>, keys: &Tensor<S>) -> Result<f64> {
    let (n, _) = queries.dims2()?;
    if keys.dims2()?.0 != n || n == 0 {
        return Err(Error::invalid("recall needs equally many nonzero queries and keys"));
    }
    let mut hits = 0;
    for i in 0..n {
        let mut best = (0, S::lit(f64::NEG_INFINITY));
        for j in 0..n {
            let s = cosine_similarity(queries.row(i), keys.row(j))?;
            if s > best.1 {
                best = (j, s);
            }
        }
        hits += usize::from(best.0 == i);
    }
    Ok(hits as f64 / n as f64)
}

/// Converts every parameter to another scalar type.
pub fn cast_params<A: Scalar, B: Scalar>(p: &ParamSet<A>) -> ParamSet<B> {
    let mut out = ParamSet::new();
    for (n, t) in p.iter() {
        out.push(n, t.cast()).expect("names are unique in the source set");
    }
    out
}

/// A paired audio feature and full-rate motion clip.
#[derive(Clone, Debug)]
pub struct AlignmentPair {
    pub audio_feature: Vec<f64>,
    pub motion: MotionSequence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AlignTrainConfig {
    fn default() -> Self {
        Self { epochs: 60, batch: 64, lr: 1e-3, seed: 0 }
    }
}

/// Frozen encoders plus the trainable adapter.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentModel<S> {
    pub encoder_seed: u64,
    pub music: MusicEncoder<S>,
    pub motion: MotionEncoder<S>,
    pub adapter: Adapter<S>,
}

impl<S: Scalar> AlignmentModel<S> {
    pub fn new(frame_width: usize, encoder_seed: u64, adapter_seed: u64) -> Result<Self> {
        Ok(Self {
            encoder_seed,
            music: MusicEncoder::new(encoder_seed),
            motion: MotionEncoder::new(frame_width, encoder_seed ^ 0x5EED_0F_0A11)?,
            adapter: Adapter::new(&mut SplitMix64::new(adapter_seed))?,
        })
    }

    /// Adapted music embedding, L2-normalized and scaled to unit RMS: `[1, 512]`.
    pub fn condition(&self, audio_feature: &[f64]) -> Result<Tensor<S>> {
        let a = self.adapter.forward(&self.music.encode(audio_feature)?)?;
        let norm = a.sum_sq().sqrt();
        if norm.is_zero() {
            return Err(Error::NonFinite("zero condition embedding"));
        }
        a.scale(S::from_usize_lossy(EMBED_DIM).sqrt() / norm)
    }

    /// Frozen embeddings of a set of pairs: `(music [N,512], motion [N,512])`.
    pub fn embed_pairs(&self, pairs: &[AlignmentPair]) -> Result<(Tensor<S>, Tensor<S>)> {
        let feats: Vec<Vec<f64>> = pairs.iter().map(|p| p.audio_feature.clone()).collect();
        let clips = pairs
            .iter()
            .map(|p| prepare_alignment_motion(&p.motion))
            .collect::<Result<Vec<_>>>()?;
        Ok((self.music.encode_batch(&feats)?, self.motion.encode_batch(&clips)?))
    }

    pub fn recall_at_1(&self, pairs: &[AlignmentPair]) -> Result<f64> {
        let (m, d) = self.embed_pairs(pairs)?;
        recall_at_1(&self.adapter.forward(&m)?, &d)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut config = BTreeMap::new();
        config.insert("kind".to_string(), "adapter".to_string());
        config.insert("encoder_seed".to_string(), self.encoder_seed.to_string());
        config.insert("frame_width".to_string(), self.motion.frame_width.to_string());
        let params = cast_params(&self.adapter.params);
        Checkpoint { config, params, adam: None }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.get("kind")? != "adapter" {
            return Err(Error::Config("checkpoint is not an adapter".into()));
        }
        let parse = |k: &str| -> Result<u64> {
            ckpt.get(k)?.parse().map_err(|_| Error::Config(format!("bad `{k}` in adapter checkpoint")))
        };
        let seed = parse("encoder_seed")?;
        let fw = parse("frame_width")? as usize;
        let params = cast_params(&ckpt.params);
        Ok(Self {
            encoder_seed: seed,
            music: MusicEncoder::new(seed),
            motion: MotionEncoder::new(fw, seed ^ 0x5EED_0F_0A11)?,
            adapter: Adapter::from_params(params)?,
        })
    }
}

/// Trains the adapter on precomputed frozen embeddings and returns the mean
/// loss of every epoch. Encoders are only borrowed immutably.
pub fn train_adapter<S: Scalar>(
    adapter: &mut Adapter<S>,
    music: &Tensor<S>,
    dance: &Tensor<S>,
    cfg: &AlignTrainConfig,
) -> Result<Vec<f64>> {
    let (n, _) = music.dims2()?;
    if n == 0 {
        return Err(Error::invalid("empty alignment dataset"));
    }
    if dance.dims2()?.0 != n {
        return Err(Error::ShapeMismatch {
            op: "train_adapter",
            lhs: music.shape().to_vec(),
            rhs: dance.shape().to_vec(),
        });
    }
    let batch = cfg.batch.min(n);
    if batch < 2 {
        return Err(Error::invalid("alignment training needs batches of at least 2"));
    }
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut state = AdamState::new(adapter.params.tensors());
    let mut rng = SplitMix64::new(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let (mut sum, mut count) = (0.0, 0);
        for chunk in order.chunks(batch).filter(|c| c.len() >= 2) {
            let pick = |t: &Tensor<S>| -> Result<Tensor<S>> {
                let rows: Vec<Tensor<S>> = chunk.iter().map(|&i| t.slice(0, i, 1)).collect::<Result<_>>()?;
                Tensor::concat(&rows.iter().collect::<Vec<_>>(), 0)
            };
            let (mb, db) = (pick(music)?, pick(dance)?);
            let mut tape = Tape::new();
            let p = adapter.params.bind(&mut tape, true);
            let x = tape.constant(mb);
            let d = tape.constant(db);
            let out = adapter.forward_var(&mut tape, &p, x)?;
            let loss = infonce_var(&mut tape, out, d, p.var("log_tau")?)?;
            let value = tape.scalar_value(loss)?.as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite("alignment loss"));
            }
            let grads = p.gradients(&tape.backward(loss)?);
            adam_step(adapter.params.tensors_mut(), &grads, &mut state, &adam)?;
            adapter.clamp_tau()?;
            sum += value;
            count += 1;
        }
        history.push(sum / count as f64);
    }
    Ok(history)
}

/// Embeds `pairs` with the frozen encoders and trains the adapter on them.
pub fn train_alignment<S: Scalar>(
    model: &mut AlignmentModel<S>,
    pairs: &[AlignmentPair],
    cfg: &AlignTrainConfig,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty alignment dataset"));
    }
    let (m, d) = model.embed_pairs(pairs)?;
    train_adapter(&mut model.adapter, &m, &d, cfg)
}
