use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use eds_core::guidance::SchemeTag;
use eds_core::metrics::CrossingMode;
use eds_core::samplers::SamplerMethod;

#[derive(Debug, Parser)]
#[command(name = "eds", version, about = "Entropy-driven classifier guidance for toy diffusion models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Flags override config-file values,
/// which override built-in defaults.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment config; defaults apply when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory receiving every output of the command
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite a completed run directory
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Default)]
pub struct GuidanceArgs {
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<SchemeTag>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Fixed guidance scale
    #[arg(long)]
    pub scale: Option<f64>,
    /// Constant of the range-constant, time-aware and grad-norm schemes
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub t_cut: Option<usize>,
    /// Gradient-norm bound of the grad-norm scheme
    #[arg(long)]
    pub m: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct SamplerArgs {
    #[arg(long, value_parser = parse_method)]
    pub method: Option<SamplerMethod>,
    /// DDIM step count
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub ddim_eta: Option<f64>,
    #[arg(long)]
    pub num_samples: Option<usize>,
    /// Sampler seed; defaults to the master seed
    #[arg(long)]
    pub sampler_seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the training set and the evaluation reference set
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the noise-prediction model
    TrainEps {
        #[command(flatten)]
        common: Common,
        /// Training set CSV; regenerated from the config when omitted
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the noise-aware classifier
    TrainClf {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Entropy-constraint weight; 0 trains the CE-only baseline
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Draw samples and per-step guidance telemetry
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps_ckpt: PathBuf,
        #[arg(long)]
        clf_ckpt: Option<PathBuf>,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[command(flatten)]
        guidance: GuidanceArgs,
    },
    /// Score a samples CSV against the reference set
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: PathBuf,
    },
    /// Extract vanishing points from a trajectory CSV
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectories: PathBuf,
        /// Threshold as a fraction of ln K
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_parser = parse_crossing)]
        crossing: Option<CrossingMode>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Sample and evaluate over a grid of one guidance parameter
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps_ckpt: PathBuf,
        #[arg(long)]
        clf_ckpt: PathBuf,
        /// One of gamma, scale, c, m, t_cut
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        /// Grid points evaluated concurrently
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[command(flatten)]
        guidance: GuidanceArgs,
    },
}

fn parse_scheme(s: &str) -> Result<SchemeTag, String> {
    SchemeTag::parse(s).ok_or_else(|| format!("unknown scheme {s:?}; expected none, fixed, range_constant, time_aware, grad_norm or eds"))
}

fn parse_method(s: &str) -> Result<SamplerMethod, String> {
    match s {
        "ddpm" => Ok(SamplerMethod::Ddpm),
        "ddim" => Ok(SamplerMethod::Ddim),
        _ => Err(format!("unknown method {s:?}; expected ddpm or ddim")),
    }
}

fn parse_crossing(s: &str) -> Result<CrossingMode, String> {
    match s {
        "sustained" => Ok(CrossingMode::Sustained),
        "first_touch" => Ok(CrossingMode::FirstTouch),
        _ => Err(format!("unknown crossing mode {s:?}; expected sustained or first_touch")),
    }
}
