//! Variance schedules and their evenly strided sub-sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest per-step β allowed.
pub const MAX_BETA: f64 = 0.999;
const COSINE_OFFSET: f64 = 0.008;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!("unknown schedule `{other}`"))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Cosine => "cosine",
        })
    }
}

/// β, α and ᾱ for steps `1..=T`; index 0 holds the noise-free state (ᾱ = 1).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule<S> {
    betas: Vec<S>,
    alphas: Vec<S>,
    alpha_bars: Vec<S>,
    /// Training-schedule timestep each step corresponds to.
    timesteps: Vec<usize>,
}

impl<S: Scalar> NoiseSchedule<S> {
    pub fn build(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!("schedule needs T >= 2, got {steps}")));
        }
        let t_total = steps as f64;
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => {
                let scale = 1000.0 / t_total;
                let (lo, hi) = (1e-4 * scale, 0.02 * scale);
                (0..steps)
                    .map(|i| (lo + (hi - lo) * i as f64 / (t_total - 1.0)).min(MAX_BETA))
                    .collect()
            }
            ScheduleKind::Cosine => {
                let f = |t: f64| {
                    let x = (t / t_total + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                (1..=steps)
                    .map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).min(MAX_BETA))
                    .collect()
            }
        };
        let mut sched = Self {
            betas: vec![S::zero()],
            alphas: vec![S::one()],
            alpha_bars: vec![S::one()],
            timesteps: (0..=steps).collect(),
        };
        let mut bar = 1.0f64;
        for b in betas {
            bar *= 1.0 - b;
            sched.betas.push(S::lit(b));
            sched.alphas.push(S::lit(1.0 - b));
            sched.alpha_bars.push(S::lit(bar));
        }
        sched.validate()?;
        Ok(sched)
    }

    fn validate(&self) -> Result<()> {
        let t = self.steps();
        if self.betas[1..].iter().any(|&b| b <= S::zero() || b >= S::one()) {
            return Err(Error::invalid("β must lie in (0, 1)"));
        }
        if self.alpha_bars.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("ᾱ must be strictly decreasing"));
        }
        if self.alpha_bars[t] >= S::lit(1e-3) {
            return Err(Error::invalid("ᾱ_T must be below 1e-3"));
        }
        Ok(())
    }

    /// `steps` evenly strided timesteps `round(i·T/steps)`, with β recomputed
    /// so that ᾱ at each kept step is unchanged.
    pub fn respaced(&self, steps: usize) -> Result<Self> {
        let t_total = self.steps();
        if steps < 2 || steps > t_total {
            return Err(Error::invalid(format!("cannot respace {t_total} steps to {steps}")));
        }
        let mut out = Self {
            betas: vec![S::zero()],
            alphas: vec![S::one()],
            alpha_bars: vec![S::one()],
            timesteps: vec![0],
        };
        for i in 1..=steps {
            let t = (i as f64 * t_total as f64 / steps as f64).round() as usize;
            let bar = self.alpha_bars[t];
            let beta = S::one() - bar / out.alpha_bars[i - 1];
            out.betas.push(beta);
            out.alphas.push(S::one() - beta);
            out.alpha_bars.push(bar);
            out.timesteps.push(self.timesteps[t]);
        }
        out.validate()?;
        Ok(out)
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta(&self, t: usize) -> S {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> S {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> S {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[S] {
        &self.betas[1..]
    }

    pub fn alpha_bars(&self) -> &[S] {
        &self.alpha_bars[1..]
    }

    /// Training-schedule timestep of step `t` (identity unless respaced).
    pub fn original_timestep(&self, t: usize) -> usize {
        self.timesteps[t]
    }

    /// Variance of the true posterior q(x_{t−1} | x_t, x0).
    pub fn posterior_variance(&self, t: usize) -> S {
        (S::one() - self.alpha_bars[t - 1]) / (S::one() - self.alpha_bars[t]) * self.betas[t]
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_t() {
        assert!(NoiseSchedule::<f64>::build(1, ScheduleKind::Cosine).is_err());
        assert!(NoiseSchedule::<f64>::build(0, ScheduleKind::Linear).is_err());
    }

    #[test]
    fn cosine_is_monotone_and_ends_near_zero() {
        let s = NoiseSchedule::<f64>::build(1000, ScheduleKind::Cosine).unwrap();
        assert!(s.betas().windows(2).all(|w| w[1] >= w[0]));
        assert!(1.0 - s.alpha_bar(1) < 1e-4);
        assert!(s.alpha_bar(1000) < 1e-3);
        assert_eq!(s.alpha_bar(1), 1.0 - s.beta(1));
    }

    #[test]
    fn respacing_keeps_alpha_bar() {
        let s = NoiseSchedule::<f64>::build(1000, ScheduleKind::Cosine).unwrap();
        let r = s.respaced(100).unwrap();
        assert_eq!(r.steps(), 100);
        for i in 1..=100 {
            assert_eq!(r.original_timestep(i), 10 * i);
            assert_eq!(r.alpha_bar(i), s.alpha_bar(10 * i));
        }
        let odd = s.respaced(7).unwrap();
        assert_eq!(odd.original_timestep(1), 143);
        assert_eq!(odd.original_timestep(7), 1000);
        assert!(s.respaced(1001).is_err());
    }

    #[test]
    fn small_t_still_valid() {
        for t in [2, 3, 10, 50] {
            NoiseSchedule::<f64>::build(t, ScheduleKind::Linear).unwrap();
            NoiseSchedule::<f64>::build(t, ScheduleKind::Cosine).unwrap();
        }
    }
}
