//! Classifier-guided diffusion sampling with entropy-driven guidance scaling
//! and entropy-constrained classifier training, on low-dimensional
//! synthetic data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_io;
pub mod error;
pub mod guidance;
pub mod metrics;
pub mod neural;
pub mod numerics;
pub mod samplers;
pub mod schedule;
pub mod training;

pub use error::{Error, Result};
pub use guidance::{GuidanceScheme, GuidanceStepRecord, SchemeTag};
pub use neural::{Activation, ClassDistribution, MlpModel};
pub use numerics::{DenseMatrix, DenseVector, RngStream};
pub use samplers::{SampleBatch, SamplerConfig, SamplerMethod, Trajectory};
pub use schedule::{NoiseSchedule, ScheduleParams, SigmaVariant};
