//! JSON experiment configuration.
//!
//! Every section and field is optional; missing values take the defaults
//! below. Unknown keys are rejected. `resolved()` fills every derived
//! default so the echo written next to run outputs reproduces the run.
//!
//! ```json
//! {
//!   "seed": 0,
//!   "dataset":  { "num_classes": 8, "radius": 6.0, "std": 0.3, "per_class": 1000, "means": null },
//!   "schedule": { "timesteps": 1000, "beta_start": null, "beta_end": null, "sigma_variant": "beta" },
//!   "models":   { "eps_hidden": [128, 128], "clf_hidden": [128, 64], "activation": "silu" },
//!   "training": { "eta": 0.2, "learning_rate": 0.001, "batch_size": 128, "eps_steps": 30000,
//!                 "clf_steps": 20000, "eval_interval": 1000, "validation_fraction": 0.1 },
//!   "sampler":  { "method": "ddpm", "steps": null, "ddim_eta": 0.0, "num_samples": 2000, "seed": null },
//!   "guidance": { "scheme": "eds", "scale": 1.0, "c": null, "t_cut": null, "m": 0.2,
//!                 "gamma": 1.0, "entropy_floor": 1e-8, "s_max": null },
//!   "metrics":  { "k": 3, "num_real": 2000, "vanishing_threshold": 0.05,
//!                 "crossing": "sustained", "histogram_bins": 20 }
//! }
//! ```
//!
//! Null endpoints mean `(1e-4, 0.02)·1000/T`. `c` defaults to 2 for
//! `range_constant`/`grad_norm` and `2/T` for `time_aware`; `t_cut` to
//! `0.7·T`; `s_max` to `1e4·γ`; `sampler.steps` to T; `sampler.seed` to
//! the top-level seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{GuidanceScheme, SchemeTag};
use crate::metrics::CrossingMode;
use crate::neural::Activation;
use crate::samplers::SamplerMethod;
use crate::schedule::{default_endpoints, NoiseSchedule, ScheduleParams, SigmaVariant};
use crate::training::TrainConfig;

use super::mixture::MixtureSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    pub models: ModelsConfig,
    pub training: TrainingConfig,
    pub sampler: SamplerSection,
    pub guidance: GuidanceConfig,
    pub metrics: MetricsConfig,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub radius: f64,
    pub std: f64,
    pub per_class: usize,
    /// Explicit component means; overrides `num_classes`/`radius`.
    pub means: Option<Vec<Vec<f64>>>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            radius: 6.0,
            std: 0.3,
            per_class: 1000,
            means: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
    pub sigma_variant: SigmaVariant,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_start: None,
            beta_end: None,
            sigma_variant: SigmaVariant::Beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub eps_hidden: Vec<usize>,
    pub clf_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            eps_hidden: vec![128, 128],
            clf_hidden: vec![128, 64],
            activation: Activation::Silu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub eta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub eps_steps: usize,
    pub clf_steps: usize,
    pub eval_interval: usize,
    pub validation_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            eta: 0.2,
            learning_rate: 1e-3,
            batch_size: 128,
            eps_steps: 30_000,
            clf_steps: 20_000,
            eval_interval: 1000,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub method: SamplerMethod,
    pub steps: Option<usize>,
    pub ddim_eta: f64,
    pub num_samples: usize,
    pub seed: Option<u64>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            method: SamplerMethod::Ddpm,
            steps: None,
            ddim_eta: 0.0,
            num_samples: 2000,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub scheme: SchemeTag,
    pub scale: f64,
    pub c: Option<f64>,
    pub t_cut: Option<usize>,
    pub m: f64,
    pub gamma: f64,
    pub entropy_floor: f64,
    pub s_max: Option<f64>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeTag::Eds,
            scale: 1.0,
            c: None,
            t_cut: None,
            m: 0.2,
            gamma: 1.0,
            entropy_floor: crate::guidance::DEFAULT_ENTROPY_FLOOR,
            s_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub k: usize,
    pub num_real: usize,
    pub vanishing_threshold: f64,
    pub crossing: CrossingMode,
    pub histogram_bins: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            k: 3,
            num_real: 2000,
            vanishing_threshold: 0.05,
            crossing: CrossingMode::Sustained,
            histogram_bins: 20,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let ds = &self.dataset;
        if ds.means.is_none() && ds.num_classes < 2 {
            return Err(Error::config("dataset.num_classes", "need at least 2 classes"));
        }
        if !(ds.std > 0.0) {
            return Err(Error::config("dataset.std", "must be positive"));
        }
        if ds.per_class == 0 {
            return Err(Error::config("dataset.per_class", "must be at least 1"));
        }
        self.mixture_spec().validate().map_err(|e| Error::config("dataset", e.to_string()))?;

        let sc = &self.schedule;
        if sc.timesteps < 2 {
            return Err(Error::config("schedule.timesteps", "must be at least 2"));
        }
        let (start, end) = self.beta_endpoints();
        if !(start > 0.0) {
            return Err(Error::config("schedule.beta_start", "must be positive"));
        }
        if start > end {
            return Err(Error::config("schedule.beta_start", format!("beta_start {start} exceeds beta_end {end}")));
        }
        if !(end < 1.0) {
            return Err(Error::config("schedule.beta_end", "must be below 1"));
        }

        let tr = &self.training;
        if !(tr.eta >= 0.0) {
            return Err(Error::config("training.eta", "must be nonnegative"));
        }
        if !(tr.learning_rate >= 0.0) {
            return Err(Error::config("training.learning_rate", "must be nonnegative"));
        }
        if tr.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be at least 1"));
        }
        if tr.eps_steps == 0 {
            return Err(Error::config("training.eps_steps", "must be at least 1"));
        }
        if tr.clf_steps == 0 {
            return Err(Error::config("training.clf_steps", "must be at least 1"));
        }
        if tr.eval_interval == 0 {
            return Err(Error::config("training.eval_interval", "must be at least 1"));
        }
        if !(tr.validation_fraction > 0.0 && tr.validation_fraction < 1.0) {
            return Err(Error::config("training.validation_fraction", "must lie in (0, 1)"));
        }
        if self.models.eps_hidden.contains(&0) {
            return Err(Error::config("models.eps_hidden", "layer widths must be positive"));
        }
        if self.models.clf_hidden.contains(&0) {
            return Err(Error::config("models.clf_hidden", "layer widths must be positive"));
        }

        let sa = &self.sampler;
        if let Some(steps) = sa.steps {
            if steps == 0 || steps > sc.timesteps {
                return Err(Error::config("sampler.steps", format!("must lie in 1..={}", sc.timesteps)));
            }
        }
        if !(0.0..=1.0).contains(&sa.ddim_eta) {
            return Err(Error::config("sampler.ddim_eta", "must lie in [0, 1]"));
        }
        if sa.num_samples == 0 {
            return Err(Error::config("sampler.num_samples", "must be at least 1"));
        }

        let scheme = self.guidance_scheme();
        scheme
            .validate(sc.timesteps)
            .map_err(|e| Error::config(format!("guidance.{}", guidance_field(&scheme)), e.to_string()))?;

        let me = &self.metrics;
        if me.k == 0 {
            return Err(Error::config("metrics.k", "must be at least 1"));
        }
        if me.num_real == 0 {
            return Err(Error::config("metrics.num_real", "must be at least 1"));
        }
        if !(me.vanishing_threshold > 0.0 && me.vanishing_threshold < 1.0) {
            return Err(Error::config("metrics.vanishing_threshold", "must lie in (0, 1)"));
        }
        if me.histogram_bins == 0 {
            return Err(Error::config("metrics.histogram_bins", "must be at least 1"));
        }
        Ok(())
    }

    pub fn beta_endpoints(&self) -> (f64, f64) {
        let (ds, de) = default_endpoints(self.schedule.timesteps);
        (self.schedule.beta_start.unwrap_or(ds), self.schedule.beta_end.unwrap_or(de))
    }

    pub fn schedule_params(&self) -> ScheduleParams {
        let (beta_start, beta_end) = self.beta_endpoints();
        ScheduleParams {
            timesteps: self.schedule.timesteps,
            beta_start,
            beta_end,
        }
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::from_params(self.schedule_params())
    }

    pub fn mixture_spec(&self) -> MixtureSpec {
        let ds = &self.dataset;
        let mut spec = MixtureSpec::circle(ds.num_classes, ds.radius, ds.std, ds.per_class, self.seed);
        if let Some(means) = &ds.means {
            spec.means = means.clone();
        }
        spec
    }

    pub fn num_classes(&self) -> usize {
        self.mixture_spec().num_classes()
    }

    /// Mixture for the evaluation reference set: same components, `num_real`
    /// points spread evenly over classes.
    pub fn reference_spec(&self) -> MixtureSpec {
        let mut spec = self.mixture_spec();
        let k = spec.num_classes();
        spec.per_class = self.metrics.num_real.div_ceil(k);
        spec
    }

    pub fn sampler_seed(&self) -> u64 {
        self.sampler.seed.unwrap_or(self.seed)
    }

    pub fn sampler_steps(&self) -> usize {
        self.sampler.steps.unwrap_or(self.schedule.timesteps)
    }

    pub fn guidance_scheme(&self) -> GuidanceScheme {
        let g = &self.guidance;
        let t_max = self.schedule.timesteps;
        match g.scheme {
            SchemeTag::None => GuidanceScheme::None,
            SchemeTag::Fixed => GuidanceScheme::Fixed { scale: g.scale },
            SchemeTag::RangeConstant => GuidanceScheme::RangeConstant {
                c: g.c.unwrap_or(2.0),
                t_cut: g.t_cut.unwrap_or(((7 * t_max) / 10).max(1)),
            },
            SchemeTag::TimeAware => GuidanceScheme::TimeAware {
                c: g.c.unwrap_or(2.0 / t_max as f64),
            },
            SchemeTag::GradNorm => GuidanceScheme::GradNorm {
                c: g.c.unwrap_or(2.0),
                m: g.m,
            },
            SchemeTag::Eds => GuidanceScheme::Eds {
                gamma: g.gamma,
                entropy_floor: g.entropy_floor,
                s_max: g.s_max.unwrap_or(crate::guidance::DEFAULT_S_MAX_FACTOR * g.gamma),
            },
        }
    }

    pub fn eps_layer_dims(&self) -> Vec<usize> {
        let d = self.mixture_spec().dim();
        let mut dims = vec![d + crate::neural::TIME_FEATURES];
        dims.extend(&self.models.eps_hidden);
        dims.push(d);
        dims
    }

    pub fn clf_layer_dims(&self) -> Vec<usize> {
        let spec = self.mixture_spec();
        let mut dims = vec![spec.dim() + crate::neural::TIME_FEATURES];
        dims.extend(&self.models.clf_hidden);
        dims.push(spec.num_classes());
        dims
    }

    pub fn eps_train_config(&self) -> TrainConfig {
        TrainConfig {
            eta: 0.0,
            learning_rate: self.training.learning_rate,
            batch_size: self.training.batch_size,
            total_steps: self.training.eps_steps,
            seed: self.seed,
            eval_interval: self.training.eval_interval,
            validation_fraction: self.training.validation_fraction,
            layer_dims: self.eps_layer_dims(),
            activation: self.models.activation,
        }
    }

    pub fn clf_train_config(&self) -> TrainConfig {
        TrainConfig {
            eta: self.training.eta,
            learning_rate: self.training.learning_rate,
            batch_size: self.training.batch_size,
            total_steps: self.training.clf_steps,
            seed: self.seed,
            eval_interval: self.training.eval_interval,
            validation_fraction: self.training.validation_fraction,
            layer_dims: self.clf_layer_dims(),
            activation: self.models.activation,
        }
    }

    /// Copy with every derived default made explicit.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        let (start, end) = self.beta_endpoints();
        out.schedule.beta_start = Some(start);
        out.schedule.beta_end = Some(end);
        out.sampler.steps = Some(self.sampler_steps());
        out.sampler.seed = Some(self.sampler_seed());
        match self.guidance_scheme() {
            GuidanceScheme::RangeConstant { c, t_cut } => {
                out.guidance.c = Some(c);
                out.guidance.t_cut = Some(t_cut);
            }
            GuidanceScheme::TimeAware { c } | GuidanceScheme::GradNorm { c, .. } => out.guidance.c = Some(c),
            GuidanceScheme::Eds { s_max, .. } => out.guidance.s_max = Some(s_max),
            _ => {}
        }
        out
    }
}

fn guidance_field(scheme: &GuidanceScheme) -> &'static str {
    match scheme {
        GuidanceScheme::None => "scheme",
        GuidanceScheme::Fixed { .. } => "scale",
        GuidanceScheme::RangeConstant { .. } | GuidanceScheme::TimeAware { .. } | GuidanceScheme::GradNorm { .. } => "c",
        GuidanceScheme::Eds { .. } => "gamma",
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = ExperimentConfig::from_json_str("{}").unwrap();
        assert_eq!(c.training.eta, 0.2);
        assert_eq!(c.schedule.timesteps, 1000);
        assert_eq!(c.beta_endpoints(), (1e-4, 0.02));
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn eta_zero_accepted() {
        let c = ExperimentConfig::from_json_str(r#"{"training": {"eta": 0}}"#).unwrap();
        assert_eq!(c.training.eta, 0.0);
        assert_eq!(c.clf_train_config().eta, 0.0);
    }

    #[test]
    fn reversed_betas_name_beta_start() {
        let err = ExperimentConfig::from_json_str(r#"{"schedule": {"beta_start": 0.02, "beta_end": 0.0001}}"#).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "schedule.beta_start"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_key_rejected_with_path() {
        let err = ExperimentConfig::from_json_str(r#"{"guidance": {"gama": 2.0}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("guidance"), "{msg}");
        assert!(msg.contains("gama"), "{msg}");
    }

    #[test]
    fn type_error_reports_path() {
        let err = ExperimentConfig::from_json_str(r#"{"training": {"batch_size": "big"}}"#).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "training.batch_size"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn resolved_echo_round_trips() {
        let c = ExperimentConfig::from_json_str(r#"{"schedule": {"timesteps": 200}, "guidance": {"scheme": "range_constant"}}"#).unwrap();
        let echo = c.resolved();
        assert_eq!(echo.guidance.t_cut, Some(140));
        let back = ExperimentConfig::from_json_str(&echo.to_json_pretty().unwrap()).unwrap();
        assert_eq!(back, echo);
        assert_eq!(back.guidance_scheme(), c.guidance_scheme());
        assert_eq!(back.schedule_params(), c.schedule_params());
    }
}
