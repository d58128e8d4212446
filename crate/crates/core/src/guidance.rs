//! Classifier-gradient guidance and its scaling schemes.
//!
//! Every scheme produces `g′ = s · ∇_x log p(y | x_t)` for some positive
//! scalar `s`; they differ only in how `s` is chosen. The entropy-driven
//! scheme sets `s = γ · ln K / H(p(·|x_t))`, so the scale is exactly `γ`
//! when the classifier is maximally uncertain and grows as its prediction
//! sharpens. Entropies are in nats throughout.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{conditioned_input, log_prob_and_input_grad, ClassDistribution, MlpModel};
use crate::numerics::{l2_norm, DenseVector};

pub const DEFAULT_ENTROPY_FLOOR: f64 = 1e-8;
/// Default `s_max` is this multiple of `γ`.
pub const DEFAULT_S_MAX_FACTOR: f64 = 1e4;

/// `−Σ p_i ln p_i` with `0 · ln 0 = 0`.
pub fn entropy(dist: &ClassDistribution) -> f64 {
    let h: f64 = dist
        .probs()
        .iter()
        .zip(dist.log_probs())
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, lp)| -p * lp)
        .sum();
    h.max(0.0)
}

/// Entropy-driven scale `γ · ln K / max(H, floor)`, clamped to `s_max`.
pub fn eds_scale(dist: &ClassDistribution, gamma: f64, entropy_floor: f64, s_max: f64) -> f64 {
    eds_scale_from_entropy(entropy(dist), dist.num_classes(), gamma, entropy_floor, s_max)
}

pub fn eds_scale_from_entropy(h: f64, num_classes: usize, gamma: f64, entropy_floor: f64, s_max: f64) -> f64 {
    let max_entropy = (num_classes as f64).ln();
    (gamma * max_entropy / h.max(entropy_floor)).min(s_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum GuidanceScheme {
    None,
    /// Constant scale for all t.
    Fixed { scale: f64 },
    /// Unscaled for `t > t_cut`, `c` otherwise.
    RangeConstant { c: f64, t_cut: usize },
    /// `c · (T − t)`
    TimeAware { c: f64 },
    /// Unscaled while `‖∇ log p‖ < m`, `c` otherwise.
    GradNorm { c: f64, m: f64 },
    Eds { gamma: f64, entropy_floor: f64, s_max: f64 },
}

impl GuidanceScheme {
    pub fn eds(gamma: f64) -> Self {
        GuidanceScheme::Eds {
            gamma,
            entropy_floor: DEFAULT_ENTROPY_FLOOR,
            s_max: DEFAULT_S_MAX_FACTOR * gamma,
        }
    }

    pub fn tag(&self) -> SchemeTag {
        match self {
            GuidanceScheme::None => SchemeTag::None,
            GuidanceScheme::Fixed { .. } => SchemeTag::Fixed,
            GuidanceScheme::RangeConstant { .. } => SchemeTag::RangeConstant,
            GuidanceScheme::TimeAware { .. } => SchemeTag::TimeAware,
            GuidanceScheme::GradNorm { .. } => SchemeTag::GradNorm,
            GuidanceScheme::Eds { .. } => SchemeTag::Eds,
        }
    }

    pub fn validate(&self, total_steps: usize) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            GuidanceScheme::None => Ok(()),
            GuidanceScheme::Fixed { scale } => positive("scale", scale),
            GuidanceScheme::RangeConstant { c, t_cut } => {
                positive("c", c)?;
                if t_cut == 0 || t_cut > total_steps {
                    return Err(Error::InvalidArgument(format!("t_cut {t_cut} outside 1..={total_steps}")));
                }
                Ok(())
            }
            GuidanceScheme::TimeAware { c } => positive("c", c),
            GuidanceScheme::GradNorm { c, m } => {
                positive("c", c)?;
                positive("m", m)
            }
            GuidanceScheme::Eds {
                gamma,
                entropy_floor,
                s_max,
            } => {
                positive("gamma", gamma)?;
                positive("entropy_floor", entropy_floor)?;
                if !(s_max >= gamma) {
                    return Err(Error::InvalidArgument(format!("s_max {s_max} below gamma {gamma}")));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeTag {
    None,
    Fixed,
    RangeConstant,
    TimeAware,
    GradNorm,
    Eds,
}

impl SchemeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeTag::None => "none",
            SchemeTag::Fixed => "fixed",
            SchemeTag::RangeConstant => "range_constant",
            SchemeTag::TimeAware => "time_aware",
            SchemeTag::GradNorm => "grad_norm",
            SchemeTag::Eds => "eds",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => SchemeTag::None,
            "fixed" => SchemeTag::Fixed,
            "range_constant" => SchemeTag::RangeConstant,
            "time_aware" => SchemeTag::TimeAware,
            "grad_norm" => SchemeTag::GradNorm,
            "eds" => SchemeTag::Eds,
            _ => return None,
        })
    }
}

impl fmt::Display for SchemeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scale `s` applied by `scheme` at step `t` of `total`.
pub fn scale_factor(scheme: &GuidanceScheme, t: usize, total: usize, entropy: f64, grad_norm: f64, num_classes: usize) -> f64 {
    match *scheme {
        GuidanceScheme::None => 0.0,
        GuidanceScheme::Fixed { scale } => scale,
        GuidanceScheme::RangeConstant { c, t_cut } => {
            if t > t_cut {
                1.0
            } else {
                c
            }
        }
        GuidanceScheme::TimeAware { c } => c * total.saturating_sub(t) as f64,
        GuidanceScheme::GradNorm { c, m } => {
            if grad_norm < m {
                1.0
            } else {
                c
            }
        }
        GuidanceScheme::Eds {
            gamma,
            entropy_floor,
            s_max,
        } => eds_scale_from_entropy(entropy, num_classes, gamma, entropy_floor, s_max),
    }
}

/// Per-step guidance telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceStepRecord {
    pub t: usize,
    /// `None` when no classifier was consulted.
    pub entropy: Option<f64>,
    pub grad_norm: Option<f64>,
    pub scale: f64,
    pub scheme: SchemeTag,
}

/// `g′ = s · ∇_{x_t} log p(y | x_t, t)` and the step record.
///
/// The classifier sees `x_t` with the time encoding appended; the returned
/// gradient covers only the data coordinates.
pub fn guided_gradient(
    classifier: &MlpModel,
    x_t: &[f64],
    t: usize,
    total: usize,
    label: usize,
    scheme: &GuidanceScheme,
) -> Result<(DenseVector, GuidanceStepRecord)> {
    let input = conditioned_input(x_t, t, total);
    let (dist, full_grad) = log_prob_and_input_grad(classifier, &input, label)?;
    let raw = &full_grad[..x_t.len()];
    let h = entropy(&dist);
    let grad_norm = l2_norm(raw);
    let s = scale_factor(scheme, t, total, h, grad_norm, dist.num_classes());
    let g_prime = match scheme {
        GuidanceScheme::None => vec![0.0; x_t.len()],
        _ => raw.iter().map(|g| s * g).collect(),
    };
    let record = GuidanceStepRecord {
        t,
        entropy: Some(h),
        grad_norm: Some(grad_norm),
        scale: s,
        scheme: scheme.tag(),
    };
    Ok((g_prime, record))
}
