//! Transformer x0-predictors for the low-resolution (M2D) and
//! super-resolution (SSR) stages.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::diffusion::{Condition, X0Model};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Width of the music condition vector.
pub const COND_DIM: usize = 512;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserKind {
    /// Consumes noised frames only.
    M2d,
    /// Consumes noised frames concatenated channel-wise with the upsampled low-res frames.
    Ssr,
}

impl FromStr for DenoiserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m2d" => Ok(Self::M2d),
            "ssr" => Ok(Self::Ssr),
            other => Err(Error::Config(format!("unknown denoiser kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for DenoiserKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::M2d => "m2d",
            Self::Ssr => "ssr",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub kind: DenoiserKind,
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub dropout: f64,
    pub max_frames: usize,
    pub frame_width: usize,
    pub cond_dim: usize,
}

impl DenoiserConfig {
    /// Four layers, 128 wide, 4 heads, for 60-frame windows of the compact skeleton.
    pub fn desk(kind: DenoiserKind) -> Self {
        Self {
            kind,
            layers: 4,
            hidden_dim: 128,
            heads: 4,
            dropout: 0.1,
            max_frames: if kind == DenoiserKind::M2d { 60 } else { 240 },
            frame_width: 57,
            cond_dim: COND_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 || self.heads == 0 {
            return Err(Error::Config("layers, hidden_dim and heads must be positive".into()));
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.max_frames == 0 || self.frame_width == 0 || self.cond_dim == 0 {
            return Err(Error::Config("max_frames, frame_width and cond_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        match self.kind {
            DenoiserKind::M2d => self.frame_width,
            DenoiserKind::Ssr => 2 * self.frame_width,
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        [
            ("kind", self.kind.to_string()),
            ("layers", self.layers.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("heads", self.heads.to_string()),
            ("dropout", self.dropout.to_string()),
            ("max_frames", self.max_frames.to_string()),
            ("frame_width", self.frame_width.to_string()),
            ("cond_dim", self.cond_dim.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        fn field<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
            map.get(key)
                .ok_or_else(|| Error::Config(format!("missing `{key}`")))?
                .parse()
                .map_err(|_| Error::Config(format!("bad value for `{key}`")))
        }
        let cfg = Self {
            kind: map
                .get("kind")
                .ok_or_else(|| Error::Config("missing `kind`".into()))?
                .parse()?,
            layers: field(map, "layers")?,
            hidden_dim: field(map, "hidden_dim")?,
            heads: field(map, "heads")?,
            dropout: field(map, "dropout")?,
            max_frames: field(map, "max_frames")?,
            frame_width: field(map, "frame_width")?,
            cond_dim: field(map, "cond_dim")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exact parameter count for `cfg`.
pub fn count_params(cfg: &DenoiserConfig) -> u64 {
    let h = cfg.hidden_dim as u64;
    let input = cfg.input_width() as u64 * h + h;
    let pos = (cfg.max_frames as u64 + 1) * h;
    let time = 2 * (h * h + h);
    let cond = cfg.cond_dim as u64 * h + h + cfg.cond_dim as u64;
    let block = 12 * h * h + 13 * h;
    let out = h * cfg.frame_width as u64 + cfg.frame_width as u64;
    input + pos + time + cond + cfg.layers as u64 * block + 2 * h + out
}

/// Sinusoidal encoding of a (possibly summed) timestep.
pub fn sinusoidal<S: Scalar>(t: f64, dim: usize) -> Tensor<S> {
    let half = dim / 2;
    let mut v = vec![S::zero(); dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        v[i] = S::lit((t * freq).sin());
        v[half + i] = S::lit((t * freq).cos());
    }
    Tensor::from_parts(vec![1, dim], v)
}

/// Condition input while building a forward pass on a tape.
#[derive(Clone, Copy, Debug)]
pub enum CondVar {
    Embedding(Var),
    Null,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser<S> {
    pub config: DenoiserConfig,
    pub params: ParamSet<S>,
}

fn init<S: Scalar>(shape: [usize; 2], std: f64, rng: &mut SplitMix64) -> Tensor<S> {
    Tensor::randn(shape.to_vec(), std, rng)
}

impl<S: Scalar> Denoiser<S> {
    /// Random initialization; weights drawn with standard deviation `fan_in^-1/2`.
    pub fn new(config: DenoiserConfig, rng: &mut SplitMix64) -> Result<Self> {
        config.validate()?;
        let (h, c) = (config.hidden_dim, config.cond_dim);
        let mut p = ParamSet::new();
        let dense = |p: &mut ParamSet<S>, name: &str, i: usize, o: usize, rng: &mut SplitMix64| -> Result<()> {
            p.push(format!("{name}.w"), init([i, o], (i as f64).powf(-0.5), rng))?;
            p.push(format!("{name}.b"), Tensor::zeros([1, o]))
        };
        let norm = |p: &mut ParamSet<S>, name: &str| -> Result<()> {
            p.push(format!("{name}.g"), Tensor::full([h], S::one()))?;
            p.push(format!("{name}.b"), Tensor::zeros([h]))
        };
        dense(&mut p, "in", config.input_width(), h, rng)?;
        p.push("pos", init([config.max_frames + 1, h], 0.02, rng))?;
        dense(&mut p, "time1", h, h, rng)?;
        dense(&mut p, "time2", h, h, rng)?;
        dense(&mut p, "cond", c, h, rng)?;
        p.push("null_cond", init([1, c], (c as f64).powf(-0.5), rng))?;
        for l in 0..config.layers {
            norm(&mut p, &format!("block{l}.ln1"))?;
            for m in ["q", "k", "v", "o"] {
                dense(&mut p, &format!("block{l}.{m}"), h, h, rng)?;
            }
            norm(&mut p, &format!("block{l}.ln2"))?;
            dense(&mut p, &format!("block{l}.mlp1"), h, 4 * h, rng)?;
            dense(&mut p, &format!("block{l}.mlp2"), 4 * h, h, rng)?;
        }
        norm(&mut p, "final_ln")?;
        dense(&mut p, "out", h, config.frame_width, rng)?;
        Ok(Self { config, params: p })
    }

    pub fn from_parts(config: DenoiserConfig, params: ParamSet<S>) -> Result<Self> {
        config.validate()?;
        let reference = Self::new(config.clone(), &mut SplitMix64::new(0))?;
        if reference.params.names() != params.names() {
            return Err(Error::Config("parameter names do not match the configuration".into()));
        }
        for (a, b) in reference.params.tensors().iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Config("parameter shapes do not match the configuration".into()));
            }
        }
        Ok(Self { config, params })
    }

    /// Zeroes the output weights and sets the output bias to `mean`, so the
    /// untrained network predicts the constant frame `mean`.
    pub fn reset_output(&mut self, mean: &[S]) -> Result<()> {
        let fw = self.config.frame_width;
        if mean.len() != fw {
            return Err(Error::ShapeMismatch {
                op: "reset_output",
                lhs: vec![mean.len()],
                rhs: vec![fw],
            });
        }
        self.params.set("out.w", Tensor::zeros([self.config.hidden_dim, fw]))?;
        self.params.set("out.b", Tensor::new([1, fw], mean.to_vec())?)
    }

    fn dense(&self, tape: &mut Tape<S>, p: &Bound<'_, S>, name: &str, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(&format!("{name}.w"))?)?;
        tape.add(y, p.var(&format!("{name}.b"))?)
    }

    fn norm(&self, tape: &mut Tape<S>, p: &Bound<'_, S>, name: &str, x: Var) -> Result<Var> {
        let (g, b) = (p.var(&format!("{name}.g"))?, p.var(&format!("{name}.b"))?);
        tape.layernorm(x, g, b, S::lit(LN_EPS))
    }

    fn maybe_dropout(&self, tape: &mut Tape<S>, x: Var, rng: &mut Option<&mut SplitMix64>) -> Result<Var> {
        match rng {
            Some(r) if self.config.dropout > 0.0 => tape.dropout(x, self.config.dropout, r),
            _ => Ok(x),
        }
    }

    /// Time embedding: sinusoid followed by a two-layer GELU MLP.
    pub fn embed_timestep_var(&self, tape: &mut Tape<S>, p: &Bound<'_, S>, t: f64) -> Result<Var> {
        let s = tape.constant(sinusoidal(t, self.config.hidden_dim));
        let a = self.dense(tape, p, "time1", s)?;
        let a = tape.gelu(a)?;
        self.dense(tape, p, "time2", a)
    }

    pub fn embed_timestep(&self, t: usize) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let v = self.embed_timestep_var(&mut tape, &p, t as f64)?;
        Ok(tape.value(v).clone())
    }

    /// Full network on a tape. `input` is `[L, input_width]`; `time` is the
    /// value fed to the timestep embedding. Dropout is active iff `rng` is given.
    pub fn forward_var(
        &self,
        tape: &mut Tape<S>,
        p: &Bound<'_, S>,
        input: Var,
        time: f64,
        cond: CondVar,
        mut rng: Option<&mut SplitMix64>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let shape = tape.shape(input).to_vec();
        if shape.len() != 2 || shape[1] != cfg.input_width() {
            return Err(Error::ShapeMismatch {
                op: "denoiser input",
                lhs: shape,
                rhs: vec![0, cfg.input_width()],
            });
        }
        let l = shape[0];
        if l == 0 || l > cfg.max_frames {
            return Err(Error::invalid(format!("{l} frames outside 1..={}", cfg.max_frames)));
        }
        let h = cfg.hidden_dim;
        let dh = h / cfg.heads;

        let c = match cond {
            CondVar::Embedding(v) => {
                let cs = tape.shape(v).to_vec();
                if cs.iter().product::<usize>() != cfg.cond_dim {
                    return Err(Error::ShapeMismatch {
                        op: "condition",
                        lhs: cs,
                        rhs: vec![1, cfg.cond_dim],
                    });
                }
                tape.reshape(v, &[1, cfg.cond_dim])?
            }
            CondVar::Null => p.var("null_cond")?,
        };
        let c = self.dense(tape, p, "cond", c)?;
        let temb = self.embed_timestep_var(tape, p, time)?;
        let token = tape.add(c, temb)?;
        let frames = self.dense(tape, p, "in", input)?;
        let seq = tape.concat(&[token, frames], 0)?;
        let pos = tape.slice(p.var("pos")?, 0, 0, l + 1)?;
        let mut x = tape.add(seq, pos)?;
        x = self.maybe_dropout(tape, x, &mut rng)?;

        let scale = S::one() / S::from_usize_lossy(dh).sqrt();
        for layer in 0..cfg.layers {
            let name = |m: &str| format!("block{layer}.{m}");
            let a = self.norm(tape, p, &name("ln1"), x)?;
            let q = self.dense(tape, p, &name("q"), a)?;
            let k = self.dense(tape, p, &name("k"), a)?;
            let v = self.dense(tape, p, &name("v"), a)?;
            let mut heads = Vec::with_capacity(cfg.heads);
            for hd in 0..cfg.heads {
                let qh = tape.slice(q, 1, hd * dh, dh)?;
                let kh = tape.slice(k, 1, hd * dh, dh)?;
                let vh = tape.slice(v, 1, hd * dh, dh)?;
                let scores = tape.matmul_nt(qh, kh)?;
                let scores = tape.scale(scores, scale)?;
                let att = tape.softmax(scores, 1)?;
                heads.push(tape.matmul(att, vh)?);
            }
            let merged = tape.concat(&heads, 1)?;
            let o = self.dense(tape, p, &name("o"), merged)?;
            let o = self.maybe_dropout(tape, o, &mut rng)?;
            x = tape.add(x, o)?;

            let a = self.norm(tape, p, &name("ln2"), x)?;
            let m = self.dense(tape, p, &name("mlp1"), a)?;
            let m = tape.gelu(m)?;
            let m = self.dense(tape, p, &name("mlp2"), m)?;
            let m = self.maybe_dropout(tape, m, &mut rng)?;
            x = tape.add(x, m)?;
        }
        let x = self.norm(tape, p, "final_ln", x)?;
        let x = tape.slice(x, 0, 1, l)?;
        self.dense(tape, p, "out", x)
    }

    fn infer(&self, input: &Tensor<S>, time: f64, cond: Condition<'_, S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let c = match cond {
            Condition::Embedding(c) => CondVar::Embedding(tape.constant(c.clone())),
            Condition::Null => CondVar::Null,
        };
        let out = self.forward_var(&mut tape, &p, x, time, c, None)?;
        Ok(tape.value(out).clone())
    }

    fn expect_kind(&self, kind: DenoiserKind) -> Result<()> {
        if self.config.kind != kind {
            return Err(Error::invalid(format!(
                "{kind} call on a {} denoiser",
                self.config.kind
            )));
        }
        Ok(())
    }

    /// Low-resolution x0 prediction from `x_t` (`[L, frame_width]`).
    pub fn m2d_forward(&self, x_t: &Tensor<S>, t: usize, cond: Condition<'_, S>) -> Result<Tensor<S>> {
        self.expect_kind(DenoiserKind::M2d)?;
        self.infer(x_t, t as f64, cond)
    }

    /// Super-resolution x0 prediction; `x_low` is the upsampled, augmented
    /// low-res input and `s` the training timestep of its augmentation.
    pub fn ssr_forward(
        &self,
        x_t: &Tensor<S>,
        t: usize,
        cond: Condition<'_, S>,
        x_low: &Tensor<S>,
        s: usize,
    ) -> Result<Tensor<S>> {
        self.expect_kind(DenoiserKind::Ssr)?;
        if x_t.shape() != x_low.shape() {
            return Err(Error::ShapeMismatch {
                op: "ssr_forward",
                lhs: x_t.shape().to_vec(),
                rhs: x_low.shape().to_vec(),
            });
        }
        let input = Tensor::concat(&[x_t, x_low], 1)?;
        self.infer(&input, (t + s) as f64, cond)
    }
}

impl<S: Scalar> X0Model<S> for Denoiser<S> {
    fn predict_x0(&self, x_t: &Tensor<S>, t: usize, cond: Condition<'_, S>) -> Result<Tensor<S>> {
        self.m2d_forward(x_t, t, cond)
    }
}

/// An SSR denoiser with its low-res input and augmentation step fixed.
pub struct SsrWithContext<'a, S> {
    pub model: &'a Denoiser<S>,
    pub x_low: &'a Tensor<S>,
    pub s: usize,
}

impl<S: Scalar> X0Model<S> for SsrWithContext<'_, S> {
    fn predict_x0(&self, x_t: &Tensor<S>, t: usize, cond: Condition<'_, S>) -> Result<Tensor<S>> {
        self.model.ssr_forward(x_t, t, cond, self.x_low, self.s)
    }
}
