//! Forward noising, reverse steps, classifier-free guidance and the sampling loop.

use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation used for the reverse-step noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReverseNoise {
    /// σ_t = β_t.
    #[default]
    Beta,
    /// σ_t = √β̃_t, the true posterior standard deviation.
    Posterior,
    /// Deterministic: σ_t = 0.
    Zero,
}

impl std::str::FromStr for ReverseNoise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(Self::Beta),
            "posterior" => Ok(Self::Posterior),
            "zero" => Ok(Self::Zero),
            other => Err(Error::Config(format!("unknown reverse noise `{other}`"))),
        }
    }
}

impl std::fmt::Display for ReverseNoise {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Beta => "beta",
            Self::Posterior => "posterior",
            Self::Zero => "zero",
        })
    }
}

/// Music condition handed to a denoiser.
#[derive(Clone, Copy, Debug)]
pub enum Condition<'a, S> {
    Embedding(&'a Tensor<S>),
    /// Use the model's learned null embedding.
    Null,
}

/// x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε.
pub fn q_sample<S: Scalar>(
    x0: &Tensor<S>,
    t: usize,
    eps: &Tensor<S>,
    sched: &NoiseSchedule<S>,
) -> Result<Tensor<S>> {
    if t == 0 {
        return Ok(x0.clone());
    }
    sched.check_step(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch {
            op: "q_sample",
            lhs: x0.shape().to_vec(),
            rhs: eps.shape().to_vec(),
        });
    }
    let ab = sched.alpha_bar(t);
    x0.scale(ab.sqrt())?.add(&eps.scale((S::one() - ab).sqrt())?)
}

/// Mean of q(x_{t−1} | x_t, x0) with x0 replaced by the model's prediction.
pub fn posterior_mean<S: Scalar>(
    x0_pred: &Tensor<S>,
    x_t: &Tensor<S>,
    t: usize,
    sched: &NoiseSchedule<S>,
) -> Result<Tensor<S>> {
    sched.check_step(t)?;
    let (ab, ab_prev) = (sched.alpha_bar(t), sched.alpha_bar(t - 1));
    let denom = S::one() - ab;
    let c0 = ab_prev.sqrt() * sched.beta(t) / denom;
    let ct = sched.alpha(t).sqrt() * (S::one() - ab_prev) / denom;
    x0_pred.scale(c0)?.add(&x_t.scale(ct)?)
}

/// One reverse step. The final step (t = 1) returns the x0 prediction as is.
pub fn p_sample_step<S: Scalar>(
    x0_pred: &Tensor<S>,
    x_t: &Tensor<S>,
    t: usize,
    sched: &NoiseSchedule<S>,
    noise: ReverseNoise,
    rng: &mut SplitMix64,
) -> Result<Tensor<S>> {
    if x0_pred.shape() != x_t.shape() {
        return Err(Error::ShapeMismatch {
            op: "p_sample_step",
            lhs: x0_pred.shape().to_vec(),
            rhs: x_t.shape().to_vec(),
        });
    }
    sched.check_step(t)?;
    if t == 1 {
        return Ok(x0_pred.clone());
    }
    let mean = posterior_mean(x0_pred, x_t, t, sched)?;
    let sigma = match noise {
        ReverseNoise::Beta => sched.beta(t),
        ReverseNoise::Posterior => sched.posterior_variance(t).sqrt(),
        ReverseNoise::Zero => return Ok(mean),
    };
    mean.add(&Tensor::randn(mean.shape().to_vec(), sigma.as_f64(), rng))
}

/// w·cond + (1−w)·uncond, returning an input untouched wherever the two agree.
pub fn cfg_combine<S: Scalar>(cond: &Tensor<S>, uncond: &Tensor<S>, w: S) -> Result<Tensor<S>> {
    if cond.shape() != uncond.shape() {
        return Err(Error::ShapeMismatch {
            op: "cfg_combine",
            lhs: cond.shape().to_vec(),
            rhs: uncond.shape().to_vec(),
        });
    }
    if w == S::one() {
        return Ok(cond.clone());
    }
    if w == S::zero() {
        return Ok(uncond.clone());
    }
    let data = cond
        .data()
        .iter()
        .zip(uncond.data())
        .map(|(&c, &u)| if c == u { c } else { w * c + (S::one() - w) * u })
        .collect();
    Tensor::new(cond.shape().to_vec(), data)
}

/// Replaces the condition with the null condition with probability `p`.
pub fn condition_dropout<'a, S>(
    c: Condition<'a, S>,
    p: f64,
    rng: &mut SplitMix64,
) -> Result<Condition<'a, S>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout probability {p} outside [0, 1]")));
    }
    Ok(if rng.bernoulli(p) { Condition::Null } else { c })
}

/// Noises a low-resolution input to step `s` (`s = 0` leaves it unchanged).
pub fn conditioning_augment<S: Scalar>(
    x_low: &Tensor<S>,
    s: usize,
    sched: &NoiseSchedule<S>,
    rng: &mut SplitMix64,
) -> Result<Tensor<S>> {
    if s == 0 {
        return Ok(x_low.clone());
    }
    sched.check_step(s)?;
    let eps = Tensor::randn(x_low.shape().to_vec(), 1.0, rng);
    q_sample(x_low, s, &eps, sched)
}

/// A network that predicts x0 from a noised input at a training-schedule timestep.
pub trait X0Model<S: Scalar> {
    fn predict_x0(&self, x_t: &Tensor<S>, t: usize, cond: Condition<'_, S>) -> Result<Tensor<S>>;
}

impl<S: Scalar, F> X0Model<S> for F
where
    F: Fn(&Tensor<S>, usize, Condition<'_, S>) -> Result<Tensor<S>>,
{
    fn predict_x0(&self, x_t: &Tensor<S>, t: usize, cond: Condition<'_, S>) -> Result<Tensor<S>> {
        self(x_t, t, cond)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub guidance_weight: f64,
    pub inference_steps: usize,
    pub noise: ReverseNoise,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            guidance_weight: 2.5,
            inference_steps: 100,
            noise: ReverseNoise::Beta,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, training_steps: usize) -> Result<()> {
        if !(self.guidance_weight.is_finite() && self.guidance_weight >= 0.0) {
            return Err(Error::invalid("guidance weight must be >= 0"));
        }
        if self.inference_steps < 2 || self.inference_steps > training_steps {
            return Err(Error::invalid(format!(
                "inference steps {} outside 2..={training_steps}",
                self.inference_steps
            )));
        }
        Ok(())
    }
}

fn overwrite_prefix<S: Scalar>(x: &Tensor<S>, prefix: &Tensor<S>) -> Result<Tensor<S>> {
    let mut data = x.data().to_vec();
    data[..prefix.len()].copy_from_slice(prefix.data());
    Tensor::new(x.shape().to_vec(), data)
}

/// Guided x0 prediction for one step.
pub fn guided_x0<S: Scalar, M: X0Model<S> + ?Sized>(
    model: &M,
    x_t: &Tensor<S>,
    t: usize,
    cond: Option<&Tensor<S>>,
    w: S,
) -> Result<Tensor<S>> {
    let pred = match cond {
        None => model.predict_x0(x_t, t, Condition::Null)?,
        Some(c) => {
            let conditioned = model.predict_x0(x_t, t, Condition::Embedding(c))?;
            if w == S::one() {
                conditioned
            } else {
                let unconditioned = model.predict_x0(x_t, t, Condition::Null)?;
                cfg_combine(&conditioned, &unconditioned, w)?
            }
        }
    };
    if pred.shape() != x_t.shape() {
        return Err(Error::ShapeMismatch {
            op: "model output",
            lhs: pred.shape().to_vec(),
            rhs: x_t.shape().to_vec(),
        });
    }
    Ok(pred)
}

/// Runs the reverse chain over `sched` (usually a respaced schedule) from pure noise.
///
/// `seed_prefix` rows replace the leading rows of x_t, noised to the current
/// step, before every model call and are copied verbatim into the result.
pub fn sample_loop<S: Scalar, M: X0Model<S> + ?Sized>(
    model: &M,
    cond: Option<&Tensor<S>>,
    shape: [usize; 2],
    config: &SamplerConfig,
    sched: &NoiseSchedule<S>,
    seed_prefix: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    if let Some(p) = seed_prefix {
        if p.rank() != 2 || p.shape()[1] != shape[1] || p.shape()[0] > shape[0] {
            return Err(Error::ShapeMismatch {
                op: "seed prefix",
                lhs: p.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
    }
    let mut rng = SplitMix64::new(config.seed);
    let w = S::lit(config.guidance_weight);
    let mut x = Tensor::randn(shape.to_vec(), 1.0, &mut rng);
    for t in (1..=sched.steps()).rev() {
        if let Some(p) = seed_prefix {
            let eps = Tensor::randn(p.shape().to_vec(), 1.0, &mut rng);
            x = overwrite_prefix(&x, &q_sample(p, t, &eps, sched)?)?;
        }
        let pred = guided_x0(model, &x, sched.original_timestep(t), cond, w)?;
        x = p_sample_step(&pred, &x, t, sched, config.noise, &mut rng)?;
    }
    match seed_prefix {
        Some(p) => overwrite_prefix(&x, p),
        None => Ok(x),
    }
}
