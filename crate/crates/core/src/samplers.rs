//! DDPM ancestral and DDIM reverse-process samplers with classifier guidance.
//!
//! Guidance enters DDPM as a mean shift `σ_t²·g′` and DDIM as the shifted
//! noise prediction `ε̂ = ε_θ − √(1−ᾱ_t)·g′`. The classifier is evaluated
//! on the pre-step state `x_t` and consumes no randomness. DDPM draws
//! exactly one Gaussian vector per step (the one drawn at t = 1 is
//! discarded); DDIM draws only when `σ > 0`.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::table::{opt_cell, read_table, write_table};
use crate::error::{Error, Result};
use crate::guidance::{guided_gradient, GuidanceScheme, GuidanceStepRecord, SchemeTag};
use crate::neural::{conditioned_input, MlpModel};
use crate::numerics::{gaussian_sample, DenseVector, RngStream};
use crate::schedule::{NoiseSchedule, SigmaVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    #[default]
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub method: SamplerMethod,
    /// DDIM step count; DDPM always walks all T steps.
    pub steps: usize,
    pub sigma_variant: SigmaVariant,
    /// DDIM stochasticity: `σ = ddim_eta · √((1−ᾱ_prev)/(1−ᾱ_t)) · √(1−ᾱ_t/ᾱ_prev)`.
    pub ddim_eta: f64,
    pub scheme: GuidanceScheme,
    pub seed: u64,
    pub num_samples: usize,
    pub parallel: bool,
}

impl SamplerConfig {
    pub fn ddpm(scheme: GuidanceScheme, seed: u64, num_samples: usize) -> Self {
        Self {
            method: SamplerMethod::Ddpm,
            steps: 0,
            sigma_variant: SigmaVariant::Beta,
            ddim_eta: 0.0,
            scheme,
            seed,
            num_samples,
            parallel: true,
        }
    }

    pub fn ddim(steps: usize, scheme: GuidanceScheme, seed: u64, num_samples: usize) -> Self {
        Self {
            method: SamplerMethod::Ddim,
            steps,
            ..Self::ddpm(scheme, seed, num_samples)
        }
    }

    /// Timesteps visited, strictly decreasing and ending at 1.
    pub fn timesteps(&self, total: usize) -> Vec<usize> {
        match self.method {
            SamplerMethod::Ddpm => (1..=total).rev().collect(),
            SamplerMethod::Ddim => ddim_timesteps(total, self.steps),
        }
    }
}

/// Uniform-stride subsequence `round(T − k·T/steps)` for `k < steps`, with
/// 1 appended when the stride does not land on it, deduplicated.
/// For T = 1000 and 25 steps this is `{1000, 960, …, 40, 1}`.
pub fn ddim_timesteps(total: usize, steps: usize) -> Vec<usize> {
    let steps = steps.clamp(1, total);
    let stride = total as f64 / steps as f64;
    let mut ts: Vec<usize> = (0..steps)
        .map(|k| ((total as f64 - k as f64 * stride).round() as usize).clamp(1, total))
        .collect();
    if ts.last() != Some(&1) {
        ts.push(1);
    }
    ts.dedup();
    ts
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sample_id: usize,
    pub label: Option<usize>,
    /// One record per step, in strictly decreasing `t`.
    pub records: Vec<GuidanceStepRecord>,
    pub final_x: DenseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<DenseVector>,
    pub trajectories: Vec<Trajectory>,
}

pub fn predict_noise(eps_model: &MlpModel, schedule: &NoiseSchedule, x_t: &[f64], t: usize) -> Result<DenseVector> {
    eps_model.forward(&conditioned_input(x_t, t, schedule.timesteps()))
}

/// `μ_θ(x_t) = (x_t − (1−α_t)/√(1−ᾱ_t)·ε_θ(x_t, t)) / √α_t`
pub fn ddpm_mean(eps_model: &MlpModel, schedule: &NoiseSchedule, x_t: &[f64], t: usize) -> Result<DenseVector> {
    schedule.check_t(t)?;
    let eps = predict_noise(eps_model, schedule, x_t, t)?;
    if eps.len() != x_t.len() {
        return Err(Error::DimensionMismatch {
            expected: x_t.len(),
            found: eps.len(),
        });
    }
    let alpha = schedule.alpha(t);
    let coef = (1.0 - alpha) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv = 1.0 / alpha.sqrt();
    Ok(x_t.iter().zip(&eps).map(|(x, e)| inv * (x - coef * e)).collect())
}

/// `x_{t−1} = μ_θ(x_t) + σ_t²·g′ + σ_t·z`, with the noise term dropped at t = 1.
pub fn ddpm_step_with_noise(
    eps_model: &MlpModel,
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    g_prime: &[f64],
    variant: SigmaVariant,
    z: &[f64],
) -> Result<DenseVector> {
    if g_prime.len() != x_t.len() || z.len() != x_t.len() {
        return Err(Error::DimensionMismatch {
            expected: x_t.len(),
            found: if g_prime.len() != x_t.len() { g_prime.len() } else { z.len() },
        });
    }
    let mean = ddpm_mean(eps_model, schedule, x_t, t)?;
    let var = schedule.sigma_sq(t, variant)?;
    let sigma = if t == 1 { 0.0 } else { var.sqrt() };
    Ok(mean
        .iter()
        .zip(g_prime)
        .zip(z)
        .map(|((m, g), zi)| m + var * g + sigma * zi)
        .collect())
}

/// DDPM step drawing its own noise vector from `rng`.
pub fn ddpm_step(
    eps_model: &MlpModel,
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    g_prime: &[f64],
    variant: SigmaVariant,
    rng: &mut RngStream,
) -> Result<DenseVector> {
    schedule.check_t(t)?;
    let z = gaussian_sample(rng, x_t.len());
    ddpm_step_with_noise(eps_model, schedule, x_t, t, g_prime, variant, &z)
}

/// `σ` for a DDIM transition `t → t_prev` at stochasticity `eta`.
pub fn ddim_sigma(schedule: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> f64 {
    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    eta * ((1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev)).max(0.0).sqrt()
}

/// Predicted clean sample `(x_t − √(1−ᾱ_t)·ε) / √ᾱ_t`.
pub fn predict_x0(schedule: &NoiseSchedule, x_t: &[f64], t: usize, eps: &[f64]) -> DenseVector {
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.iter().zip(eps).map(|(x, e)| (x - b * e) / a).collect()
}

/// One DDIM transition `t → t_prev` with guidance folded into ε̂.
/// `z` is required when `sigma > 0`.
#[allow(clippy::too_many_arguments)]
pub fn ddim_step_with_noise(
    eps_model: &MlpModel,
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    t_prev: usize,
    g_prime: &[f64],
    sigma: f64,
    z: Option<&[f64]>,
) -> Result<DenseVector> {
    schedule.check_t(t)?;
    if t_prev >= t {
        return Err(Error::TimestepOrder { t, t_prev });
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be nonnegative, got {sigma}")));
    }
    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let limit = 1.0 - ab_prev;
    let sigma_sq = sigma * sigma;
    if sigma_sq > limit {
        return Err(Error::SigmaTooLarge { sigma_sq, limit });
    }
    if g_prime.len() != x_t.len() {
        return Err(Error::DimensionMismatch {
            expected: x_t.len(),
            found: g_prime.len(),
        });
    }
    let eps = predict_noise(eps_model, schedule, x_t, t)?;
    let shift = (1.0 - ab_t).sqrt();
    let eps_hat: Vec<f64> = eps.iter().zip(g_prime).map(|(e, g)| e - shift * g).collect();
    let f = predict_x0(schedule, x_t, t, &eps_hat);
    let dir = (limit - sigma_sq).sqrt();
    let root_prev = ab_prev.sqrt();
    let mut out: Vec<f64> = f.iter().zip(&eps_hat).map(|(fi, e)| root_prev * fi + dir * e).collect();
    if sigma > 0.0 {
        let z = z.ok_or_else(|| Error::InvalidArgument("stochastic DDIM step needs noise".into()))?;
        for (o, zi) in out.iter_mut().zip(z) {
            *o += sigma * zi;
        }
    }
    Ok(out)
}

/// DDIM step drawing noise from `rng` only when `sigma > 0`.
#[allow(clippy::too_many_arguments)]
pub fn ddim_step(
    eps_model: &MlpModel,
    schedule: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    t_prev: usize,
    g_prime: &[f64],
    sigma: f64,
    rng: &mut RngStream,
) -> Result<DenseVector> {
    let z = if sigma > 0.0 { Some(gaussian_sample(rng, x_t.len())) } else { None };
    ddim_step_with_noise(eps_model, schedule, x_t, t, t_prev, g_prime, sigma, z.as_deref())
}

/// Runs one reverse trajectory on stream `(config.seed, sample_id)`.
pub fn sample_one(
    eps_model: &MlpModel,
    classifier: Option<&MlpModel>,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    sample_id: usize,
    label: Option<usize>,
) -> Result<Trajectory> {
    let total = schedule.timesteps();
    let d = eps_model.output_dim();
    let mut rng = RngStream::new(config.seed, sample_id as u64);
    let mut x = gaussian_sample(&mut rng, d);
    let ts = config.timesteps(total);
    let mut records = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let (g_prime, record) = match (classifier, label) {
            (Some(clf), Some(y)) => guided_gradient(clf, &x, t, total, y, &config.scheme)?,
            _ => (
                vec![0.0; d],
                GuidanceStepRecord {
                    t,
                    entropy: None,
                    grad_norm: None,
                    scale: 0.0,
                    scheme: config.scheme.tag(),
                },
            ),
        };
        records.push(record);
        x = match config.method {
            SamplerMethod::Ddpm => ddpm_step(eps_model, schedule, &x, t, &g_prime, config.sigma_variant, &mut rng)?,
            SamplerMethod::Ddim => {
                let t_prev = ts.get(i + 1).copied().unwrap_or(0);
                let sigma = ddim_sigma(schedule, t, t_prev, config.ddim_eta);
                ddim_step(eps_model, schedule, &x, t, t_prev, &g_prime, sigma, &mut rng)?
            }
        };
    }
    Ok(Trajectory {
        sample_id,
        label,
        records,
        final_x: x,
    })
}

/// Balanced labels `i mod K` for `n` samples.
pub fn balanced_labels(n: usize, num_classes: usize) -> Vec<usize> {
    (0..n).map(|i| i % num_classes).collect()
}

/// Samples `config.num_samples` points. A classifier and labels are
/// required unless the scheme is `None`; with scheme `None` a supplied
/// classifier is still consulted for telemetry but contributes no shift.
pub fn sample_batch(
    eps_model: &MlpModel,
    classifier: Option<&MlpModel>,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    labels: Option<&[usize]>,
) -> Result<SampleBatch> {
    let guided = config.scheme != GuidanceScheme::None;
    config.scheme.validate(schedule.timesteps())?;
    if eps_model.input_dim() != eps_model.output_dim() + crate::neural::TIME_FEATURES {
        return Err(Error::DimensionMismatch {
            expected: eps_model.output_dim() + crate::neural::TIME_FEATURES,
            found: eps_model.input_dim(),
        });
    }
    if guided && classifier.is_none() {
        return Err(Error::MissingClassifier);
    }
    if guided && labels.is_none() {
        return Err(Error::MissingLabels);
    }
    if let Some(labels) = labels {
        if labels.len() != config.num_samples {
            return Err(Error::DimensionMismatch {
                expected: config.num_samples,
                found: labels.len(),
            });
        }
        if let Some(clf) = classifier {
            let k = clf.output_dim();
            if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
                return Err(Error::LabelOutOfRange { label: bad, classes: k });
            }
        }
    }
    if config.method == SamplerMethod::Ddim && !(0.0..=1.0).contains(&config.ddim_eta) {
        return Err(Error::InvalidArgument(format!("ddim_eta must lie in [0, 1], got {}", config.ddim_eta)));
    }
    let run = |id: usize| sample_one(eps_model, classifier, schedule, config, id, labels.map(|l| l[id]));
    let trajectories: Vec<Trajectory> = if config.parallel {
        (0..config.num_samples).into_par_iter().map(run).collect::<Result<_>>()?
    } else {
        (0..config.num_samples).map(run).collect::<Result<_>>()?
    };
    let samples = trajectories.iter().map(|t| t.final_x.clone()).collect();
    Ok(SampleBatch { samples, trajectories })
}

pub const TRAJECTORY_COLUMNS: [&str; 7] = ["sample_id", "label", "t", "entropy", "grad_norm", "scale", "scheme"];

/// Samples CSV: `sample_id,label,x0,x1,…`; `label` is empty for
/// unconditional samples.
pub fn write_samples_csv(path: &Path, samples: &[DenseVector], labels: Option<&[usize]>) -> Result<()> {
    let d = samples.first().map(Vec::len).unwrap_or(0);
    let mut header = vec!["sample_id".to_string(), "label".to_string()];
    header.extend((0..d).map(|i| format!("x{i}")));
    let rows = samples.iter().enumerate().map(|(i, x)| {
        let mut row = vec![i.to_string(), opt_cell(labels.map(|l| l[i]))];
        row.extend(x.iter().map(f64::to_string));
        row
    });
    write_table(path, &header, rows)
}

/// Reads a samples CSV. Labels are returned only when every row has one.
pub fn read_samples_csv(path: &Path) -> Result<(Vec<DenseVector>, Option<Vec<usize>>)> {
    let table = read_table(path, &["sample_id", "label"])?;
    let d = table.header.len() - 2;
    if d == 0 {
        return Err(table.error(1, "no coordinate columns"));
    }
    let mut samples = Vec::with_capacity(table.rows.len());
    let mut labels = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        table.parse::<usize>(row, 0)?;
        labels.push(table.parse_opt::<usize>(row, 1)?);
        let x = (0..d).map(|c| table.parse::<f64>(row, c + 2)).collect::<Result<Vec<f64>>>()?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(table.error(row.line, "non-finite coordinate"));
        }
        samples.push(x);
    }
    let labels = match labels.iter().filter(|l| l.is_some()).count() {
        0 => None,
        n if n == labels.len() => Some(labels.into_iter().flatten().collect()),
        _ => return Err(table.error(1, "labels must be present on all rows or none")),
    };
    Ok((samples, labels))
}

/// Trajectory CSV: one row per step with columns [`TRAJECTORY_COLUMNS`].
pub fn write_trajectories_csv(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let header: Vec<String> = TRAJECTORY_COLUMNS.iter().map(|s| s.to_string()).collect();
    let rows = trajectories.iter().flat_map(|tr| {
        tr.records.iter().map(move |r| {
            vec![
                tr.sample_id.to_string(),
                opt_cell(tr.label),
                r.t.to_string(),
                opt_cell(r.entropy),
                opt_cell(r.grad_norm),
                r.scale.to_string(),
                r.scheme.as_str().to_string(),
            ]
        })
    });
    write_table(path, &header, rows)
}

/// Reads a trajectory CSV back into trajectories ordered by sample id.
/// Final states are not stored in this format and come back empty.
pub fn read_trajectories_csv(path: &Path) -> Result<Vec<Trajectory>> {
    let table = read_table(path, &TRAJECTORY_COLUMNS)?;
    let mut by_id: BTreeMap<usize, Trajectory> = BTreeMap::new();
    for row in &table.rows {
        let sample_id: usize = table.parse(row, 0)?;
        let label: Option<usize> = table.parse_opt(row, 1)?;
        let raw_scheme = row.fields.get(6).unwrap_or("").trim();
        let scheme = SchemeTag::parse(raw_scheme)
            .ok_or_else(|| table.error(row.line, format!("column scheme: unknown scheme {raw_scheme:?}")))?;
        let record = GuidanceStepRecord {
            t: table.parse(row, 2)?,
            entropy: table.parse_opt(row, 3)?,
            grad_norm: table.parse_opt(row, 4)?,
            scale: table.parse(row, 5)?,
            scheme,
        };
        let tr = by_id.entry(sample_id).or_insert_with(|| Trajectory {
            sample_id,
            label,
            records: Vec::new(),
            final_x: Vec::new(),
        });
        if tr.label != label {
            return Err(table.error(row.line, format!("label changes within sample {sample_id}")));
        }
        if tr.records.last().is_some_and(|prev| prev.t <= record.t) {
            return Err(table.error(row.line, format!("timesteps of sample {sample_id} must strictly decrease")));
        }
        tr.records.push(record);
    }
    Ok(by_id.into_values().collect())
}
