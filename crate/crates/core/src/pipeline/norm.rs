//! Per-channel standardization of motion frames for diffusion.

use std::collections::BTreeMap;

use super::data::DatasetClip;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Channels that barely move are scaled by this instead of their spread.
pub const STD_FLOOR: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn encode(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn decode(s: &str, key: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("bad number in `{key}`"))))
        .collect()
}

impl Normalizer {
    /// Mean and population standard deviation of every channel over all frames.
    pub fn from_clips(clips: &[DatasetClip]) -> Result<Self> {
        let w = clips.first().ok_or_else(|| Error::invalid("no clips to normalize"))?.motion.width();
        let (mut sum, mut sq, mut n) = (vec![0.0; w], vec![0.0; w], 0usize);
        for c in clips {
            for f in c.motion.data().chunks(w) {
                for k in 0..w {
                    sum[k] += f[k];
                    sq[k] += f[k] * f[k];
                }
                n += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    fn rows<S: Scalar>(v: &[f64]) -> Tensor<S> {
        Tensor::new([1, v.len()], v.iter().map(|&x| S::lit(x)).collect()).expect("row shape")
    }

    pub fn normalize<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.sub(&Self::rows(&self.mean))?.div(&Self::rows(&self.std))
    }

    pub fn denormalize<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.mul(&Self::rows(&self.std))?.add(&Self::rows(&self.mean))
    }

    pub fn denormalize_var<S: Scalar>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let s = tape.constant(Self::rows(&self.std));
        let m = tape.constant(Self::rows(&self.mean));
        let y = tape.mul(x, s)?;
        tape.add(y, m)
    }

    /// Stores the statistics under `norm_mean` / `norm_std`; the decimal
    /// form round-trips every `f64` exactly.
    pub fn write_config(&self, config: &mut BTreeMap<String, String>) {
        config.insert("norm_mean".into(), encode(&self.mean));
        config.insert("norm_std".into(), encode(&self.std));
    }

    pub fn from_config(config: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| config.get(k).ok_or_else(|| Error::Config(format!("missing `{k}`")));
        let mean = decode(get("norm_mean")?, "norm_mean")?;
        let std = decode(get("norm_std")?, "norm_std")?;
        if mean.len() != std.len() || std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("malformed normalization statistics".into()));
        }
        Ok(Self { mean, std })
    }
}
