//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::checkpoint::parse_key_values;
use crate::denoiser::{DenoiserConfig, DenoiserKind, COND_DIM};
use crate::diffusion::{ReverseNoise, SamplerConfig, ScheduleKind};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::motion::SkeletonSpec;

/// Architecture of one denoiser stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub dropout: f64,
    pub train_steps: u64,
    pub batch: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub skeleton: String,

    pub clips: usize,
    pub heldout_clips: usize,
    pub clip_min_s: f64,
    pub clip_max_s: f64,

    pub align_pairs: usize,
    pub align_epochs: usize,
    pub align_batch: usize,
    pub align_lr: f64,

    pub schedule: ScheduleKind,
    pub diffusion_steps: usize,
    pub inference_steps: usize,
    pub guidance: f64,
    pub cond_dropout: f64,
    pub sampler_noise: ReverseNoise,

    /// Low-resolution window length in frames at 15 fps.
    pub low_frames: usize,
    pub m2d: StageConfig,
    pub ssr: StageConfig,
    pub weights: LossWeights,
    /// Largest conditioning-augmentation step drawn during SSR training, in percent of T.
    pub ssr_aug_max_pct: usize,
    /// Augmentation step used at inference, in percent of T.
    pub ssr_aug_pct: usize,
    pub checkpoint_every: u64,
}

pub const LOW_FPS: u32 = 15;
pub const HIGH_FPS: u32 = 60;
pub const UPSAMPLE: usize = (HIGH_FPS / LOW_FPS) as usize;

impl Default for RunConfig {
    fn default() -> Self {
        let stage = |hidden_dim, train_steps| StageConfig {
            layers: 2,
            hidden_dim,
            heads: 4,
            dropout: 0.1,
            train_steps,
            batch: 8,
            lr: 1e-3,
        };
        Self {
            out: PathBuf::from("run"),
            seed: 0,
            skeleton: "compact".into(),
            clips: 64,
            heldout_clips: 8,
            clip_min_s: 4.0,
            clip_max_s: 8.0,
            align_pairs: 256,
            align_epochs: 60,
            align_batch: 64,
            align_lr: 1e-3,
            schedule: ScheduleKind::Cosine,
            diffusion_steps: 1000,
            inference_steps: 50,
            guidance: 2.5,
            cond_dropout: 0.1,
            sampler_noise: ReverseNoise::Beta,
            low_frames: 60,
            m2d: stage(64, 1000),
            ssr: stage(32, 250),
            weights: LossWeights::default(),
            ssr_aug_max_pct: 40,
            ssr_aug_pct: 30,
            checkpoint_every: 500,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Sets one field by its config key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let stage = match key.split_once('_') {
            Some(("m2d", f)) => Some((&mut self.m2d, f)),
            Some(("ssr", f)) if !f.starts_with("aug") => Some((&mut self.ssr, f)),
            _ => None,
        };
        if let Some((s, field)) = stage {
            match field {
                "layers" => s.layers = parse(key, v)?,
                "hidden" => s.hidden_dim = parse(key, v)?,
                "heads" => s.heads = parse(key, v)?,
                "dropout" => s.dropout = parse(key, v)?,
                "steps" => s.train_steps = parse(key, v)?,
                "batch" => s.batch = parse(key, v)?,
                "lr" => s.lr = parse(key, v)?,
                _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
            }
            return Ok(());
        }
        match key {
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "skeleton" => self.skeleton = v.to_string(),
            "clips" => self.clips = parse(key, v)?,
            "heldout_clips" => self.heldout_clips = parse(key, v)?,
            "clip_min_s" => self.clip_min_s = parse(key, v)?,
            "clip_max_s" => self.clip_max_s = parse(key, v)?,
            "align_pairs" => self.align_pairs = parse(key, v)?,
            "align_epochs" => self.align_epochs = parse(key, v)?,
            "align_batch" => self.align_batch = parse(key, v)?,
            "align_lr" => self.align_lr = parse(key, v)?,
            "schedule" => self.schedule = v.parse()?,
            "diffusion_steps" => self.diffusion_steps = parse(key, v)?,
            "inference_steps" => self.inference_steps = parse(key, v)?,
            "guidance" => self.guidance = parse(key, v)?,
            "cond_dropout" => self.cond_dropout = parse(key, v)?,
            "sampler_noise" => self.sampler_noise = v.parse()?,
            "low_frames" => self.low_frames = parse(key, v)?,
            "lambda1" => self.weights.lambda1 = parse(key, v)?,
            "lambda2" => self.weights.lambda2 = parse(key, v)?,
            "lambda3" => self.weights.lambda3 = parse(key, v)?,
            "alpha" => self.weights.alpha = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "ssr_aug_max_pct" => self.ssr_aug_max_pct = parse(key, v)?,
            "ssr_aug_pct" => self.ssr_aug_pct = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("out", self.out.display().to_string());
        put("seed", self.seed.to_string());
        put("skeleton", self.skeleton.clone());
        put("clips", self.clips.to_string());
        put("heldout_clips", self.heldout_clips.to_string());
        put("clip_min_s", self.clip_min_s.to_string());
        put("clip_max_s", self.clip_max_s.to_string());
        put("align_pairs", self.align_pairs.to_string());
        put("align_epochs", self.align_epochs.to_string());
        put("align_batch", self.align_batch.to_string());
        put("align_lr", self.align_lr.to_string());
        put("schedule", self.schedule.to_string());
        put("diffusion_steps", self.diffusion_steps.to_string());
        put("inference_steps", self.inference_steps.to_string());
        put("guidance", self.guidance.to_string());
        put("cond_dropout", self.cond_dropout.to_string());
        put("sampler_noise", self.sampler_noise.to_string());
        put("low_frames", self.low_frames.to_string());
        for (name, s) in [("m2d", &self.m2d), ("ssr", &self.ssr)] {
            put(&format!("{name}_layers"), s.layers.to_string());
            put(&format!("{name}_hidden"), s.hidden_dim.to_string());
            put(&format!("{name}_heads"), s.heads.to_string());
            put(&format!("{name}_dropout"), s.dropout.to_string());
            put(&format!("{name}_steps"), s.train_steps.to_string());
            put(&format!("{name}_batch"), s.batch.to_string());
            put(&format!("{name}_lr"), s.lr.to_string());
        }
        put("lambda1", self.weights.lambda1.to_string());
        put("lambda2", self.weights.lambda2.to_string());
        put("lambda3", self.weights.lambda3.to_string());
        put("alpha", self.weights.alpha.to_string());
        put("ssr_aug_max_pct", self.ssr_aug_max_pct.to_string());
        put("ssr_aug_pct", self.ssr_aug_pct.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        m
    }

    /// Config file text that parses back to `self`.
    pub fn to_text(&self) -> String {
        self.to_map().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        SkeletonSpec::by_name(&self.skeleton)?;
        if self.clips == 0 {
            return bad("clips must be positive");
        }
        if !(self.clip_min_s <= self.clip_max_s) {
            return bad("clip_min_s must not exceed clip_max_s");
        }
        let window_s = self.low_frames as f64 / f64::from(LOW_FPS);
        if self.clip_min_s < window_s {
            return bad("clips must be at least one training window long");
        }
        if !(self.guidance.is_finite() && self.guidance >= 0.0) {
            return bad("guidance must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return bad("cond_dropout must lie in [0, 1]");
        }
        if self.ssr_aug_max_pct > 100 || self.ssr_aug_pct > 100 {
            return bad("augmentation percentages must not exceed 100");
        }
        if self.align_batch < 2 || self.align_pairs < 2 {
            return bad("alignment needs at least two pairs per batch");
        }
        for s in [&self.m2d, &self.ssr] {
            if s.batch == 0 || !(s.lr > 0.0) {
                return bad("stage batch and lr must be positive");
            }
        }
        self.weights.validate()?;
        self.sampler().validate(self.diffusion_steps)?;
        self.denoiser_config(DenoiserKind::M2d)?;
        self.denoiser_config(DenoiserKind::Ssr)?;
        Ok(())
    }

    pub fn skeleton(&self) -> Result<SkeletonSpec> {
        SkeletonSpec::by_name(&self.skeleton)
    }

    pub fn high_frames(&self) -> usize {
        self.low_frames * UPSAMPLE
    }

    pub fn stage(&self, kind: DenoiserKind) -> &StageConfig {
        match kind {
            DenoiserKind::M2d => &self.m2d,
            DenoiserKind::Ssr => &self.ssr,
        }
    }

    pub fn denoiser_config(&self, kind: DenoiserKind) -> Result<DenoiserConfig> {
        let s = self.stage(kind);
        let cfg = DenoiserConfig {
            kind,
            layers: s.layers,
            hidden_dim: s.hidden_dim,
            heads: s.heads,
            dropout: s.dropout,
            max_frames: match kind {
                DenoiserKind::M2d => self.low_frames,
                DenoiserKind::Ssr => self.high_frames(),
            },
            frame_width: self.skeleton()?.frame_width(),
            cond_dim: COND_DIM,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            guidance_weight: self.guidance,
            inference_steps: self.inference_steps,
            noise: self.sampler_noise,
            seed: self.seed,
        }
    }

    /// A percentage of T as a timestep.
    pub fn pct_step(&self, pct: usize) -> usize {
        (pct * self.diffusion_steps + 50) / 100
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn heldout_dir(&self) -> PathBuf {
        self.out.join("heldout")
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.out.join(format!("{name}.ckpt"))
    }

    pub fn log_path(&self, name: &str) -> PathBuf {
        self.out.join(format!("{name}_log.csv"))
    }
}
