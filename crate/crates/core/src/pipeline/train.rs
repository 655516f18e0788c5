//! Alignment, M2D and SSR training loops.

use std::fs::OpenOptions;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, HIGH_FPS, LOW_FPS};
use super::data::{derive_seed, Dataset, DatasetClip};
use super::norm::Normalizer;
use crate::alignment::{cast_params, AlignTrainConfig, AlignmentModel, AlignmentPair};
use crate::autodiff::Tape;
use crate::checkpoint::Checkpoint;
use crate::denoiser::{CondVar, Denoiser, DenoiserConfig, DenoiserKind};
use crate::diffusion::{conditioning_augment, q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::motion::{generate_synthetic_clip, MotionSequence, SkeletonSpec, SynthParams};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Alignment pairs are drawn from their own clips, long enough for the
/// six-second motion encoder window.
pub const ALIGN_CLIP_S: (f64, f64) = (6.0, 7.0);

pub fn motion_tensor<S: Scalar>(seq: &MotionSequence) -> Tensor<S> {
    Tensor::new([seq.len(), seq.width()], seq.data().iter().map(|&v| S::lit(v)).collect())
        .expect("sequence data matches its shape")
}

pub fn tensor_motion<S: Scalar>(t: &Tensor<S>, fps: u32, joints: usize) -> Result<MotionSequence> {
    MotionSequence::new(fps, joints, t.data().iter().map(|v| v.as_f64()).collect())
}

/// Synthetic pairs for adapter training.
pub fn alignment_pairs(skel: &SkeletonSpec, count: usize, seed: u64) -> Result<Vec<AlignmentPair>> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| {
            let params = SynthParams::random(&mut rng, ALIGN_CLIP_S);
            let clip = generate_synthetic_clip(skel, &params, rng.next_u64())?;
            Ok(AlignmentPair {
                audio_feature: clip.audio_feature,
                motion: clip.motion,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignSummary {
    pub epoch_losses: Vec<f64>,
    pub train_recall: f64,
}

/// Trains the alignment adapter and writes `align.ckpt` plus a per-epoch log.
pub fn train_align(cfg: &RunConfig) -> Result<AlignSummary> {
    cfg.validate()?;
    let skel = cfg.skeleton()?;
    let pairs = alignment_pairs(&skel, cfg.align_pairs, derive_seed(cfg.seed, "align-pairs"))?;
    let mut model = AlignmentModel::<f64>::new(
        skel.frame_width(),
        derive_seed(cfg.seed, "align-encoders"),
        derive_seed(cfg.seed, "align-adapter"),
    )?;
    let (m, d) = model.embed_pairs(&pairs)?;
    let train_cfg = AlignTrainConfig {
        epochs: cfg.align_epochs,
        batch: cfg.align_batch,
        lr: cfg.align_lr,
        seed: derive_seed(cfg.seed, "align-train"),
    };
    let epoch_losses = crate::alignment::train_adapter(&mut model.adapter, &m, &d, &train_cfg)?;
    std::fs::create_dir_all(&cfg.out)?;
    model.to_checkpoint().save(cfg.checkpoint_path("align"))?;
    let mut log = csv::Writer::from_path(cfg.log_path("align"))?;
    log.write_record(["epoch", "infonce", "tau"])?;
    let tau = model.adapter.tau()?;
    for (e, l) in epoch_losses.iter().enumerate() {
        log.write_record([(e + 1).to_string(), l.to_string(), tau.to_string()])?;
    }
    log.flush()?;
    let train_recall = crate::alignment::recall_at_1(&model.adapter.forward(&m)?, &d)?;
    Ok(AlignSummary {
        epoch_losses,
        train_recall,
    })
}

pub fn load_alignment<S: Scalar>(cfg: &RunConfig) -> Result<AlignmentModel<S>> {
    let path = cfg.checkpoint_path("align");
    if !path.exists() {
        return Err(Error::Config(format!(
            "alignment checkpoint {} not found; run train-align first",
            path.display()
        )));
    }
    let model = AlignmentModel::<S>::from_checkpoint(&Checkpoint::load(&path)?)?;
    if model.motion.frame_width() != cfg.skeleton()?.frame_width() {
        return Err(Error::Config("alignment checkpoint was trained for another skeleton".into()));
    }
    Ok(model)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub simple: f64,
    pub pos_all: f64,
    pub pos_key: f64,
    pub rot_key: f64,
    pub lambda_t: f64,
    pub total: f64,
    /// Samples in this batch whose condition was replaced by the null condition.
    pub dropped: u64,
    pub batch: u64,
    /// Running fraction of dropped conditions since step 1.
    pub dropout_rate: f64,
}

#[derive(Clone, Copy, Debug)]
struct Window {
    clip: usize,
    offset: usize,
}

/// State of one denoiser stage under training.
pub struct StageTrainer<S> {
    pub kind: DenoiserKind,
    pub model: Denoiser<S>,
    pub norm: Normalizer,
    pub adam: AdamState<S>,
    pub step: u64,
    cfg: RunConfig,
    skel: SkeletonSpec,
    sched: NoiseSchedule<S>,
    rng: SplitMix64,
    dropped: u64,
    seen: u64,
    clips: Vec<DatasetClip>,
    windows: Vec<Window>,
    conds: Vec<Tensor<S>>,
}

fn parse_field<T: std::str::FromStr>(ckpt: &Checkpoint, key: &str) -> Result<T> {
    ckpt.get(key)?
        .parse()
        .map_err(|_| Error::Config(format!("bad `{key}` in checkpoint")))
}

/// Fails unless a stage checkpoint was written for the architecture and
/// schedule that `cfg` describes.
pub fn check_stage_checkpoint(cfg: &RunConfig, kind: DenoiserKind, ckpt: &Checkpoint) -> Result<DenoiserConfig> {
    let expected = cfg.denoiser_config(kind)?;
    let found = DenoiserConfig::from_map(&ckpt.config)?;
    if found != expected {
        return Err(Error::Config(format!(
            "{kind} checkpoint does not match the configured architecture"
        )));
    }
    if ckpt.get("schedule")? != cfg.schedule.to_string()
        || parse_field::<usize>(ckpt, "diffusion_steps")? != cfg.diffusion_steps
    {
        return Err(Error::Config(format!("{kind} checkpoint uses another noise schedule")));
    }
    Ok(found)
}

impl<S: Scalar> StageTrainer<S> {
    /// Fresh trainer; the untrained network predicts the dataset's mean frame.
    pub fn new(cfg: &RunConfig, kind: DenoiserKind, data: &Dataset, align: &AlignmentModel<S>) -> Result<Self> {
        let model = untrained_stage(cfg, kind)?;
        let norm = Normalizer::from_clips(&data.clips)?;
        let adam = AdamState::new(model.params.tensors());
        let rng = SplitMix64::new(derive_seed(cfg.seed, &format!("{kind}-train")));
        Self::assemble(cfg, kind, data, align, (model, norm), adam, rng, 0, 0, 0)
    }

    /// Trainer restored from a checkpoint written by [`StageTrainer::checkpoint`].
    pub fn resume(
        cfg: &RunConfig,
        kind: DenoiserKind,
        data: &Dataset,
        align: &AlignmentModel<S>,
        ckpt: &Checkpoint,
    ) -> Result<Self> {
        let dcfg = check_stage_checkpoint(cfg, kind, ckpt)?;
        let model = Denoiser::from_parts(dcfg, cast_params(&ckpt.params))?;
        let norm = Normalizer::from_config(&ckpt.config)?;
        let adam = ckpt
            .adam
            .as_ref()
            .ok_or_else(|| Error::Config("checkpoint has no optimizer state to resume from".into()))?;
        let adam = AdamState {
            step: adam.step,
            m: adam.m.iter().map(Tensor::cast).collect(),
            v: adam.v.iter().map(Tensor::cast).collect(),
        };
        let rng = SplitMix64::from_state(parse_field(ckpt, "rng_state")?);
        let (step, dropped, seen) = (
            parse_field(ckpt, "step")?,
            parse_field(ckpt, "dropped")?,
            parse_field(ckpt, "seen")?,
        );
        Self::assemble(cfg, kind, data, align, (model, norm), adam, rng, step, dropped, seen)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: &RunConfig,
        kind: DenoiserKind,
        data: &Dataset,
        align: &AlignmentModel<S>,
        (model, norm): (Denoiser<S>, Normalizer),
        adam: AdamState<S>,
        rng: SplitMix64,
        step: u64,
        dropped: u64,
        seen: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let skel = cfg.skeleton()?;
        if norm.width() != skel.frame_width() {
            return Err(Error::Config("normalization statistics do not match the skeleton".into()));
        }
        if data.manifest.skeleton != cfg.skeleton {
            return Err(Error::Config("dataset was generated for another skeleton".into()));
        }
        let len = cfg.high_frames();
        let mut windows = Vec::new();
        let mut conds = Vec::new();
        for (ci, clip) in data.clips.iter().enumerate() {
            if clip.motion.fps() != HIGH_FPS {
                return Err(Error::Config(format!("clip {} is not at {HIGH_FPS} fps", clip.name)));
            }
            for offset in clip.window_offsets(len) {
                let feature = clip.meta.window_audio_feature(offset as f64 / f64::from(HIGH_FPS))?;
                conds.push(align.condition(&feature)?);
                windows.push(Window { clip: ci, offset });
            }
        }
        if windows.is_empty() {
            return Err(Error::Config("no clip is long enough for a training window".into()));
        }
        Ok(Self {
            kind,
            model,
            norm,
            adam,
            step,
            cfg: cfg.clone(),
            skel,
            sched: NoiseSchedule::build(cfg.diffusion_steps, cfg.schedule)?,
            rng,
            dropped,
            seen,
            clips: data.clips.clone(),
            windows,
            conds,
        })
    }

    pub fn windows(&self) -> usize {
        self.windows.len()
    }

    /// Loss and parameter gradients for one training example.
    fn example(&mut self) -> Result<(LossBreakdown, bool, Vec<Tensor<S>>)> {
        let wi = self.rng.below(self.windows.len() as u64) as usize;
        let w = self.windows[wi];
        let high = self.clips[w.clip].motion.window(w.offset, self.cfg.high_frames())?;
        let low = high.downsample(LOW_FPS)?;
        let steps = self.cfg.diffusion_steps;
        let t = 1 + self.rng.below(steps as u64) as usize;
        let (gt, fps) = match self.kind {
            DenoiserKind::M2d => (motion_tensor::<S>(&low), LOW_FPS),
            DenoiserKind::Ssr => (motion_tensor::<S>(&high), HIGH_FPS),
        };
        let gt_n = self.norm.normalize(&gt)?;
        let eps = Tensor::randn(gt.shape().to_vec(), 1.0, &mut self.rng);
        let x_t = q_sample(&gt_n, t, &eps, &self.sched)?;
        let drop = self.rng.bernoulli(self.cfg.cond_dropout);
        let (input, time) = match self.kind {
            DenoiserKind::M2d => (x_t, t as f64),
            DenoiserKind::Ssr => {
                let s = self.rng.below(self.cfg.pct_step(self.cfg.ssr_aug_max_pct) as u64 + 1) as usize;
                let up = self.norm.normalize(&motion_tensor::<S>(&low.upsample_linear(HIGH_FPS)?))?;
                let x_low = conditioning_augment(&up, s, &self.sched, &mut self.rng)?;
                (Tensor::concat(&[&x_t, &x_low], 1)?, (t + s) as f64)
            }
        };

        let mut tape = Tape::new();
        let p = self.model.params.bind(&mut tape, true);
        let x = tape.constant(input);
        let g_n = tape.constant(gt_n);
        let g = tape.constant(gt);
        let cond = if drop {
            CondVar::Null
        } else {
            CondVar::Embedding(tape.constant(self.conds[wi].clone()))
        };
        let pred_n = self.model.forward_var(&mut tape, &p, x, time, cond, Some(&mut self.rng))?;
        let pred = self.norm.denormalize_var(&mut tape, pred_n)?;
        let loss = crate::losses::total_loss_split_var(
            &mut tape,
            (pred_n, g_n),
            pred,
            g,
            t,
            steps,
            &self.cfg.weights,
            &self.skel,
            f64::from(fps),
        )?;
        let breakdown = loss.breakdown(&tape)?;
        if !breakdown.total.is_finite() {
            return Err(Error::Training {
                step: self.step + 1,
                msg: format!("non-finite loss at t = {t}: {breakdown:?}"),
            });
        }
        let grads = p.gradients(&tape.backward(loss.total)?);
        Ok((breakdown, drop, grads))
    }

    /// One optimizer step on a freshly drawn batch.
    pub fn train_step(&mut self) -> Result<StepLog> {
        let batch = self.stage().batch;
        let mut sum: Option<Vec<Tensor<S>>> = None;
        let mut mean = [0.0f64; 6];
        let mut dropped = 0u64;
        for _ in 0..batch {
            let (b, drop, grads) = self.example()?;
            for (m, v) in mean.iter_mut().zip([b.simple, b.pos_all, b.pos_key, b.rot_key, b.lambda_t, b.total]) {
                *m += v / batch as f64;
            }
            dropped += u64::from(drop);
            sum = Some(match sum {
                None => grads,
                Some(acc) => acc.iter().zip(&grads).map(|(a, g)| a.add(g)).collect::<Result<_>>()?,
            });
        }
        let scale = S::one() / S::from_usize_lossy(batch);
        let grads = sum
            .expect("batch is positive")
            .iter()
            .map(|g| g.scale(scale))
            .collect::<Result<Vec<_>>>()?;
        if grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::Training {
                step: self.step + 1,
                msg: "non-finite gradient".into(),
            });
        }
        let adam = AdamConfig {
            lr: self.stage().lr,
            ..AdamConfig::default()
        };
        adam_step(self.model.params.tensors_mut(), &grads, &mut self.adam, &adam)?;
        self.step += 1;
        self.dropped += dropped;
        self.seen += batch as u64;
        Ok(StepLog {
            step: self.step,
            simple: mean[0],
            pos_all: mean[1],
            pos_key: mean[2],
            rot_key: mean[3],
            lambda_t: mean[4],
            total: mean[5],
            dropped,
            batch: batch as u64,
            dropout_rate: self.dropped as f64 / self.seen as f64,
        })
    }

    fn stage(&self) -> &super::config::StageConfig {
        self.cfg.stage(self.kind)
    }

    /// Parameters, optimizer moments and sampler state, all as `f64`.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut config = self.model.config.to_map();
        let mut put = |k: &str, v: String| {
            config.insert(k.to_string(), v);
        };
        put("schedule", self.cfg.schedule.to_string());
        put("diffusion_steps", self.cfg.diffusion_steps.to_string());
        put("step", self.step.to_string());
        put("rng_state", self.rng.state().to_string());
        put("dropped", self.dropped.to_string());
        put("seen", self.seen.to_string());
        self.norm.write_config(&mut config);
        Checkpoint {
            config,
            params: cast_params(&self.model.params),
            adam: Some(AdamState {
                step: self.adam.step,
                m: self.adam.m.iter().map(Tensor::cast).collect(),
                v: self.adam.v.iter().map(Tensor::cast).collect(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub first: Option<StepLog>,
    pub last: Option<StepLog>,
    pub steps: u64,
}

fn open_log(path: &Path, append: bool) -> Result<csv::Writer<std::fs::File>> {
    let exists = append && path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(exists)
        .truncate(!exists)
        .open(path)?;
    Ok(csv::WriterBuilder::new().has_headers(!exists).from_writer(file))
}

/// Trains one stage up to its configured step count, resuming from the
/// stage checkpoint when `resume` is set and one exists. The model is trained
/// in `S`; checkpoints always hold `f64`.
pub fn train_stage<S: Scalar>(cfg: &RunConfig, kind: DenoiserKind, resume: bool) -> Result<StageSummary> {
    cfg.validate()?;
    let data = Dataset::load(cfg.data_dir())?;
    let align = load_alignment::<S>(cfg)?;
    let name = kind.to_string();
    let ckpt_path = cfg.checkpoint_path(&name);
    let resuming = resume && ckpt_path.exists();
    let mut trainer = if resuming {
        StageTrainer::<S>::resume(cfg, kind, &data, &align, &Checkpoint::load(&ckpt_path)?)?
    } else {
        StageTrainer::<S>::new(cfg, kind, &data, &align)?
    };
    let mut log = open_log(&cfg.log_path(&name), resuming)?;
    let target = cfg.stage(kind).train_steps;
    let mut summary = StageSummary {
        first: None,
        last: None,
        steps: 0,
    };
    while trainer.step < target {
        let row = trainer.train_step()?;
        log.serialize(&row)?;
        summary.first.get_or_insert_with(|| row.clone());
        summary.last = Some(row);
        summary.steps += 1;
        if cfg.checkpoint_every > 0 && trainer.step % cfg.checkpoint_every == 0 {
            trainer.checkpoint().save(&ckpt_path)?;
            log.flush()?;
        }
    }
    trainer.checkpoint().save(&ckpt_path)?;
    log.flush()?;
    Ok(summary)
}

/// Loads a trained stage and its normalization for sampling.
pub fn load_stage<S: Scalar>(cfg: &RunConfig, kind: DenoiserKind) -> Result<(Denoiser<S>, Normalizer)> {
    let path = cfg.checkpoint_path(&kind.to_string());
    if !path.exists() {
        return Err(Error::Config(format!("{kind} checkpoint {} not found", path.display())));
    }
    let ckpt = Checkpoint::load(&path)?;
    let dcfg = check_stage_checkpoint(cfg, kind, &ckpt)?;
    Ok((
        Denoiser::from_parts(dcfg, cast_params(&ckpt.params))?,
        Normalizer::from_config(&ckpt.config)?,
    ))
}

/// A stage as it stands before any training step: the output layer is zero,
/// so every prediction is the normalized mean frame.
pub fn untrained_stage<S: Scalar>(cfg: &RunConfig, kind: DenoiserKind) -> Result<Denoiser<S>> {
    let dcfg = cfg.denoiser_config(kind)?;
    let mut init = SplitMix64::new(derive_seed(cfg.seed, &format!("{kind}-init")));
    let mut model = Denoiser::new(dcfg.clone(), &mut init)?;
    model.reset_output(&vec![S::zero(); dcfg.frame_width])?;
    Ok(model)
}
