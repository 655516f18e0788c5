//! Two-stage sampling: M2D at 15 fps, linear upsampling, SSR at 60 fps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, HIGH_FPS, LOW_FPS, UPSAMPLE};
use super::data::{derive_seed, Dataset};
use super::norm::Normalizer;
use super::train::{load_alignment, load_stage, motion_tensor, tensor_motion};
use crate::alignment::AlignmentModel;
use crate::denoiser::{Denoiser, DenoiserKind};
use crate::diffusion::{conditioning_augment, sample_loop, Condition, NoiseSchedule, SamplerConfig, X0Model};
use crate::error::{Error, Result};
use crate::motion::{save_motion, BeatGrid, MotionSequence};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A super-resolution network: x0 prediction given the low-res context.
pub trait SsrModel<S: Scalar> {
    fn predict_ssr(
        &self,
        x_t: &Tensor<S>,
        t: usize,
        cond: Condition<'_, S>,
        x_low: &Tensor<S>,
        s: usize,
    ) -> Result<Tensor<S>>;
}

impl<S: Scalar> SsrModel<S> for Denoiser<S> {
    fn predict_ssr(
        &self,
        x_t: &Tensor<S>,
        t: usize,
        cond: Condition<'_, S>,
        x_low: &Tensor<S>,
        s: usize,
    ) -> Result<Tensor<S>> {
        self.ssr_forward(x_t, t, cond, x_low, s)
    }
}

impl<S: Scalar, F> SsrModel<S> for F
where
    F: Fn(&Tensor<S>, usize, Condition<'_, S>, &Tensor<S>, usize) -> Result<Tensor<S>>,
{
    fn predict_ssr(
        &self,
        x_t: &Tensor<S>,
        t: usize,
        cond: Condition<'_, S>,
        x_low: &Tensor<S>,
        s: usize,
    ) -> Result<Tensor<S>> {
        self(x_t, t, cond, x_low, s)
    }
}

struct WithLow<'a, S, M: ?Sized> {
    model: &'a M,
    x_low: &'a Tensor<S>,
    s: usize,
}

impl<S: Scalar, M: SsrModel<S> + ?Sized> X0Model<S> for WithLow<'_, S, M> {
    fn predict_x0(&self, x_t: &Tensor<S>, t: usize, cond: Condition<'_, S>) -> Result<Tensor<S>> {
        self.model.predict_ssr(x_t, t, cond, self.x_low, self.s)
    }
}

/// Length of the seed dance that guides generation.
pub const SEED_MOTION_S: f64 = 2.0;

/// Everything the cascade needs besides the two networks.
#[derive(Clone, Debug)]
pub struct CascadeSettings<S> {
    pub sampler: SamplerConfig,
    /// Full training schedule; the reverse chains run on its respacing.
    pub schedule: NoiseSchedule<S>,
    pub low_frames: usize,
    pub joints: usize,
    /// Augmentation step applied to the upsampled low-res motion.
    pub aug_step: usize,
    /// Space the networks work in; `None` means raw motion channels.
    pub norm: Option<Normalizer>,
}

impl<S: Scalar> CascadeSettings<S> {
    fn to_model(&self, x: Tensor<S>) -> Result<Tensor<S>> {
        match &self.norm {
            Some(n) => n.normalize(&x),
            None => Ok(x),
        }
    }

    fn to_motion(&self, x: Tensor<S>, fps: u32) -> Result<MotionSequence> {
        let x = match &self.norm {
            Some(n) => n.denormalize(&x)?,
            None => x,
        };
        tensor_motion(&x, fps, self.joints)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeOutput {
    pub low: MotionSequence,
    pub high: MotionSequence,
}

/// Low-resolution stage. `seed_prefix` holds leading 15 fps frames that the
/// sample must reproduce.
pub fn sample_low<S: Scalar, A: X0Model<S> + ?Sized>(
    m2d: &A,
    cond: Option<&Tensor<S>>,
    set: &CascadeSettings<S>,
    seed_prefix: Option<&MotionSequence>,
) -> Result<MotionSequence> {
    let width = set.joints * 6 + 3;
    let prefix = match seed_prefix {
        Some(p) if p.fps() != LOW_FPS => {
            return Err(Error::invalid(format!("seed motion must be at {LOW_FPS} fps, got {}", p.fps())))
        }
        Some(p) => Some(set.to_model(motion_tensor::<S>(p))?),
        None => None,
    };
    let respaced = set.schedule.respaced(set.sampler.inference_steps)?;
    let low = sample_loop(m2d, cond, [set.low_frames, width], &set.sampler, &respaced, prefix.as_ref())?;
    set.to_motion(low, LOW_FPS)
}

/// Super-resolution stage on top of a 15 fps sample.
pub fn refine<S: Scalar, B: SsrModel<S> + ?Sized>(
    ssr: &B,
    cond: Option<&Tensor<S>>,
    set: &CascadeSettings<S>,
    low: &MotionSequence,
) -> Result<MotionSequence> {
    if low.fps() != LOW_FPS {
        return Err(Error::invalid(format!("low-res input must be at {LOW_FPS} fps")));
    }
    let up = set.to_model(motion_tensor::<S>(&low.upsample_linear(HIGH_FPS)?))?;
    let mut aug_rng = SplitMix64::new(derive_seed(set.sampler.seed, "ssr-augment"));
    let x_low = conditioning_augment(&up, set.aug_step, &set.schedule, &mut aug_rng)?;
    let wrapped = WithLow {
        model: ssr,
        x_low: &x_low,
        s: set.aug_step,
    };
    let sampler = SamplerConfig {
        seed: derive_seed(set.sampler.seed, "ssr"),
        ..set.sampler
    };
    let respaced = set.schedule.respaced(sampler.inference_steps)?;
    let shape = [low.len() * UPSAMPLE, low.width()];
    let high = sample_loop(&wrapped, cond, shape, &sampler, &respaced, None)?;
    set.to_motion(high, HIGH_FPS)
}

/// Full cascade: `low_frames` at 15 fps in, `4 × low_frames` at 60 fps out.
pub fn sample_cascade<S: Scalar, A: X0Model<S> + ?Sized, B: SsrModel<S> + ?Sized>(
    m2d: &A,
    ssr: &B,
    cond: Option<&Tensor<S>>,
    set: &CascadeSettings<S>,
    seed_prefix: Option<&MotionSequence>,
) -> Result<CascadeOutput> {
    let low = sample_low(m2d, cond, set, seed_prefix)?;
    let high = refine(ssr, cond, set, &low)?;
    Ok(CascadeOutput { low, high })
}

/// Trained cascade with its alignment model.
pub struct CascadeModel<S> {
    pub cfg: RunConfig,
    pub align: AlignmentModel<S>,
    pub m2d: Denoiser<S>,
    pub ssr: Denoiser<S>,
    pub norm: Normalizer,
    schedule: NoiseSchedule<S>,
}

impl<S: Scalar> CascadeModel<S> {
    pub fn new(
        cfg: &RunConfig,
        align: AlignmentModel<S>,
        m2d: Denoiser<S>,
        ssr: Denoiser<S>,
        norm: Normalizer,
    ) -> Result<Self> {
        cfg.validate()?;
        for (model, kind) in [(&m2d, DenoiserKind::M2d), (&ssr, DenoiserKind::Ssr)] {
            if model.config != cfg.denoiser_config(kind)? {
                return Err(Error::Config(format!("{kind} model does not match the configuration")));
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            align,
            m2d,
            ssr,
            norm,
            schedule: NoiseSchedule::build(cfg.diffusion_steps, cfg.schedule)?,
        })
    }

    /// Loads `align.ckpt`, `m2d.ckpt` and `ssr.ckpt` from the run directory.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let (m2d, norm) = load_stage(cfg, DenoiserKind::M2d)?;
        let (ssr, ssr_norm) = load_stage(cfg, DenoiserKind::Ssr)?;
        if norm != ssr_norm {
            return Err(Error::Config("M2D and SSR checkpoints were trained on different datasets".into()));
        }
        Self::new(cfg, load_alignment(cfg)?, m2d, ssr, norm)
    }

    pub fn settings(&self, seed: u64, aug_pct: usize) -> Result<CascadeSettings<S>> {
        Ok(CascadeSettings {
            sampler: SamplerConfig {
                seed,
                ..self.cfg.sampler()
            },
            schedule: self.schedule.clone(),
            low_frames: self.cfg.low_frames,
            joints: self.cfg.skeleton()?.num_joints(),
            aug_step: self.cfg.pct_step(aug_pct),
            norm: Some(self.norm.clone()),
        })
    }

    pub fn condition(&self, audio_feature: &[f64]) -> Result<Tensor<S>> {
        self.align.condition(audio_feature)
    }

    /// One sample at the configured inference augmentation. The first
    /// [`SEED_MOTION_S`] seconds of `seed_motion`, downsampled to 15 fps, fix the
    /// leading frames of the M2D sample; SSR only sees their upsampled result.
    pub fn sample(&self, audio_feature: &[f64], seed: u64, seed_motion: Option<&MotionSequence>) -> Result<CascadeOutput> {
        let cond = self.condition(audio_feature)?;
        let set = self.settings(seed, self.cfg.ssr_aug_pct)?;
        let prefix = match seed_motion {
            Some(m) => {
                let low = m.downsample(LOW_FPS)?;
                let keep = ((SEED_MOTION_S * f64::from(LOW_FPS)) as usize).min(low.len());
                if keep >= self.cfg.low_frames {
                    return Err(Error::invalid("seed motion must be shorter than the generated window"));
                }
                Some(low.window(0, keep)?)
            }
            None => None,
        };
        sample_cascade(&self.m2d, &self.ssr, Some(&cond), &set, prefix.as_ref())
    }
}

/// Music side of a generated sample, stored next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub audio_feature: Vec<f64>,
    pub beats: BeatGrid,
    pub seed: u64,
    pub aug_step: usize,
}

/// Writes `name.motseq` and its `name.json` sidecar.
pub fn write_sample(dir: &Path, name: &str, motion: &MotionSequence, meta: &SampleMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_motion(motion, dir.join(format!("{name}.motseq")))?;
    std::fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

/// A held-out evaluation window: the reference motion and its music.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub name: String,
    pub reference: MotionSequence,
    pub audio_feature: Vec<f64>,
    pub beats: BeatGrid,
    pub seed: u64,
}

/// The first usable window of every held-out clip.
pub fn eval_items(cfg: &RunConfig, heldout: &Dataset) -> Result<Vec<EvalItem>> {
    let len = cfg.high_frames();
    heldout
        .clips
        .iter()
        .filter_map(|c| c.window_offsets(len).first().map(|&o| (c, o)))
        .map(|(c, o)| {
            let (reference, audio_feature, beats) = c.window(o, len)?;
            Ok(EvalItem {
                name: c.name.clone(),
                reference,
                audio_feature,
                beats,
                seed: derive_seed(cfg.seed, &format!("sample-{}", c.name)),
            })
        })
        .collect()
}

/// Samples every held-out item into `dir` and the matching references into
/// `reference_dir`.
pub fn generate_eval_set<S: Scalar>(
    cascade: &CascadeModel<S>,
    items: &[EvalItem],
    dir: &Path,
    reference_dir: &Path,
) -> Result<Vec<MotionSequence>> {
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let cond = cascade.condition(&item.audio_feature)?;
        let set = cascade.settings(item.seed, cascade.cfg.ssr_aug_pct)?;
        let sample = sample_cascade(&cascade.m2d, &cascade.ssr, Some(&cond), &set, None)?;
        let meta = SampleMeta {
            audio_feature: item.audio_feature.clone(),
            beats: item.beats.clone(),
            seed: item.seed,
            aug_step: set.aug_step,
        };
        write_sample(dir, &item.name, &sample.high, &meta)?;
        std::fs::create_dir_all(reference_dir)?;
        save_motion(&item.reference, reference_dir.join(format!("{}.motseq", item.name)))?;
        out.push(sample.high);
    }
    Ok(out)
}

/// The music fields shared by clip and sample sidecars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MusicSidecar {
    pub audio_feature: Vec<f64>,
    pub beats: BeatGrid,
}

impl MusicSidecar {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, format!("not a music sidecar: {e}")))
    }
}
