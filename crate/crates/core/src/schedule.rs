//! Fixed forward (noising) process.
//!
//! Timesteps are 1-indexed, `t ∈ 1..=T`. Internally every array is stored
//! 0-based with index `t - 1`; accessors take the 1-based `t`. By
//! convention `alpha_bar(0) = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseVector;

pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Reverse-process variance choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaVariant {
    /// σ_t² = β_t
    #[default]
    Beta,
    /// σ_t² = (1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t
    BetaTilde,
}

impl SigmaVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            SigmaVariant::Beta => "beta",
            SigmaVariant::BetaTilde => "beta_tilde",
        }
    }
}

/// Parameters a schedule is built from; persisted in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleParams {
    /// Endpoints (1e-4, 0.02) rescaled by 1000/T.
    pub fn linear_default(timesteps: usize) -> Self {
        let (beta_start, beta_end) = default_endpoints(timesteps);
        Self {
            timesteps,
            beta_start,
            beta_end,
        }
    }
}

pub fn default_endpoints(timesteps: usize) -> (f64, f64) {
    let scale = 1000.0 / timesteps as f64;
    (DEFAULT_BETA_START * scale, DEFAULT_BETA_END * scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_vars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear β from `beta_start` to `beta_end` inclusive over `t = 1..=T`.
    pub fn build_linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::InvalidSchedule(format!("T must be at least 2, got {timesteps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let span = (timesteps - 1) as f64;
        let betas: Vec<f64> = (0..timesteps)
            .map(|i| beta_start + (beta_end - beta_start) * (i as f64 / span))
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(timesteps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let posterior_vars = (0..timesteps)
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bars[i]) * betas[i]
            })
            .collect();
        Ok(Self {
            params: ScheduleParams {
                timesteps,
                beta_start,
                beta_end,
            },
            betas,
            alphas,
            alpha_bars,
            posterior_vars,
        })
    }

    pub fn from_params(params: ScheduleParams) -> Result<Self> {
        Self::build_linear(params.timesteps, params.beta_start, params.beta_end)
    }

    pub fn linear_default(timesteps: usize) -> Result<Self> {
        Self::from_params(ScheduleParams::linear_default(timesteps))
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn timesteps(&self) -> usize {
        self.params.timesteps
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.timesteps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// β̃_t for every t.
    pub fn posterior_vars(&self) -> &[f64] {
        &self.posterior_vars
    }

    /// σ_t² under the given variant.
    pub fn sigma_sq(&self, t: usize, variant: SigmaVariant) -> Result<f64> {
        self.check_t(t)?;
        Ok(match variant {
            SigmaVariant::Beta => self.betas[t - 1],
            SigmaVariant::BetaTilde => self.posterior_vars[t - 1],
        })
    }

    pub fn posterior_sigma(&self, t: usize, variant: SigmaVariant) -> Result<f64> {
        self.sigma_sq(t, variant).map(f64::sqrt)
    }

    /// `√ᾱ_t·x0 + √(1−ᾱ_t)·eps`
    pub fn q_sample(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<DenseVector> {
        self.check_t(t)?;
        if x0.len() != eps.len() {
            return Err(Error::DimensionMismatch {
                expected: x0.len(),
                found: eps.len(),
            });
        }
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }
}
