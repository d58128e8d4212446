//! Subcommand implementations. Each command writes into its own run
//! directory and finishes by echoing the effective config to
//! `config.json`, whose presence marks the run as complete.

use std::fs;
use std::path::{Path, PathBuf};

use eds_core::data_io::{
    load_checkpoint_of_kind, load_config, read_dataset_csv, save_checkpoint, write_dataset_csv, CheckpointMeta, Dataset, ExperimentConfig,
    ModelKind,
};
use eds_core::guidance::SchemeTag;
use eds_core::metrics::{evaluate, vanishing_analysis, EntropyTrace, MetricsReport};
use eds_core::numerics::{derive_seed, streams};
use eds_core::samplers::{balanced_labels, read_samples_csv, read_trajectories_csv, sample_batch, write_samples_csv, write_trajectories_csv};
use eds_core::training::{train_classifier, train_epsilon, write_classifier_log, write_epsilon_log};
use eds_core::{Error, MlpModel, NoiseSchedule, SamplerConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::cli::{Command, Common, GuidanceArgs, SamplerArgs};
use crate::error::{CliError, CliResult};

pub const CONFIG_ECHO: &str = "config.json";
pub const COMMAND_ECHO: &str = "command.json";

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::GenData { common } => gen_data(&common),
        Command::TrainEps { common, data } => train_eps(&common, data.as_deref()),
        Command::TrainClf { common, data, eta } => train_clf(&common, data.as_deref(), eta),
        Command::Sample {
            common,
            eps_ckpt,
            clf_ckpt,
            sampler,
            guidance,
        } => sample(&common, &eps_ckpt, clf_ckpt.as_deref(), &sampler, &guidance),
        Command::Eval { common, samples } => eval(&common, &samples),
        Command::Analyze {
            common,
            trajectories,
            threshold,
            crossing,
            bins,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(t) = threshold {
                cfg.metrics.vanishing_threshold = t;
            }
            if let Some(c) = crossing {
                cfg.metrics.crossing = c;
            }
            if let Some(b) = bins {
                cfg.metrics.histogram_bins = b;
            }
            analyze(&common, cfg, &trajectories)
        }
        Command::Sweep {
            common,
            eps_ckpt,
            clf_ckpt,
            param,
            grid,
            jobs,
            sampler,
            guidance,
        } => sweep(&common, &eps_ckpt, &clf_ckpt, &param, &grid, jobs, &sampler, &guidance),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Creates the run directory, refusing to reuse a completed one unless forced.
fn prepare_run_dir(common: &Common) -> CliResult<PathBuf> {
    let dir = common.out.clone();
    if dir.join(CONFIG_ECHO).exists() && !common.force {
        return Err(CliError::RunExists(dir));
    }
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn base_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_sampler_args(cfg: &mut ExperimentConfig, args: &SamplerArgs) {
    if let Some(m) = args.method {
        cfg.sampler.method = m;
    }
    if args.steps.is_some() {
        cfg.sampler.steps = args.steps;
    }
    if let Some(e) = args.ddim_eta {
        cfg.sampler.ddim_eta = e;
    }
    if let Some(n) = args.num_samples {
        cfg.sampler.num_samples = n;
    }
    if args.sampler_seed.is_some() {
        cfg.sampler.seed = args.sampler_seed;
    }
}

fn apply_guidance_args(cfg: &mut ExperimentConfig, args: &GuidanceArgs) {
    let g = &mut cfg.guidance;
    if let Some(s) = args.scheme {
        g.scheme = s;
    }
    if let Some(v) = args.gamma {
        g.gamma = v;
    }
    if let Some(v) = args.scale {
        g.scale = v;
    }
    if args.c.is_some() {
        g.c = args.c;
    }
    if args.t_cut.is_some() {
        g.t_cut = args.t_cut;
    }
    if let Some(v) = args.m {
        g.m = v;
    }
}

#[derive(Serialize)]
struct CommandEcho {
    args: Vec<String>,
}

/// Writes the resolved config and the invoking command line.
fn finish(dir: &Path, cfg: &ExperimentConfig) -> CliResult<()> {
    let echo = CommandEcho {
        args: std::env::args().collect(),
    };
    let path = dir.join(COMMAND_ECHO);
    fs::write(&path, serde_json::to_string_pretty(&echo).map_err(Error::from)?).map_err(|e| io_err(&path, e))?;
    let path = dir.join(CONFIG_ECHO);
    fs::write(&path, cfg.resolved().to_json_pretty()?).map_err(|e| io_err(&path, e))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn training_set(cfg: &ExperimentConfig, data: Option<&Path>) -> CliResult<Dataset> {
    Ok(match data {
        Some(path) => read_dataset_csv(path, cfg.num_classes())?,
        None => cfg.mixture_spec().generate(streams::DATASET)?,
    })
}

fn reference_set(cfg: &ExperimentConfig) -> CliResult<Dataset> {
    Ok(cfg.reference_spec().generate(streams::REFERENCE)?)
}

fn gen_data(common: &Common) -> CliResult<()> {
    let cfg = base_config(common)?;
    cfg.validate()?;
    let dir = prepare_run_dir(common)?;
    let train = training_set(&cfg, None)?;
    let reference = reference_set(&cfg)?;
    write_dataset_csv(&dir.join("train.csv"), &train)?;
    write_dataset_csv(&dir.join("reference.csv"), &reference)?;
    println!("wrote {} training and {} reference points to {}", train.len(), reference.len(), dir.display());
    finish(&dir, &cfg)
}

fn train_eps(common: &Common, data: Option<&Path>) -> CliResult<()> {
    let cfg = base_config(common)?;
    cfg.validate()?;
    let dir = prepare_run_dir(common)?;
    let schedule = cfg.noise_schedule()?;
    let train = training_set(&cfg, data)?;
    let tc = cfg.eps_train_config();
    let trained = train_epsilon(&train, &schedule, &tc)?;
    let meta = CheckpointMeta::new(ModelKind::Epsilon, &trained.model, cfg.schedule_params(), cfg.schedule.sigma_variant, tc.seed);
    save_checkpoint(&trained.model, &meta, &dir.join("eps.ckpt"))?;
    write_epsilon_log(&dir.join("eps_train.csv"), &trained.log)?;
    if let Some(last) = trained.log.last() {
        println!("epsilon model: step {} loss {:.5} val_loss {:.5}", last.step, last.loss, last.val_loss);
    }
    finish(&dir, &cfg)
}

fn train_clf(common: &Common, data: Option<&Path>, eta: Option<f64>) -> CliResult<()> {
    let mut cfg = base_config(common)?;
    if let Some(eta) = eta {
        cfg.training.eta = eta;
    }
    cfg.validate()?;
    let dir = prepare_run_dir(common)?;
    let schedule = cfg.noise_schedule()?;
    let train = training_set(&cfg, data)?;
    let tc = cfg.clf_train_config();
    let trained = train_classifier(&train, &schedule, &tc)?;
    let meta = CheckpointMeta::new(ModelKind::Classifier, &trained.model, cfg.schedule_params(), cfg.schedule.sigma_variant, tc.seed);
    save_checkpoint(&trained.model, &meta, &dir.join("clf.ckpt"))?;
    write_classifier_log(&dir.join("clf_train.csv"), &trained.log)?;
    if let Some(last) = trained.log.last() {
        println!(
            "classifier (eta={}): step {} ce {:.5} val_accuracy {:.4} val_mean_entropy {:.4}",
            tc.eta, last.step, last.ce, last.val_accuracy, last.val_mean_entropy
        );
    }
    finish(&dir, &cfg)
}

/// Loads a checkpoint and checks that it was trained on the configured schedule.
fn load_model(path: &Path, kind: ModelKind, cfg: &ExperimentConfig) -> CliResult<MlpModel> {
    let (model, meta) = load_checkpoint_of_kind(path, kind)?;
    let expected = cfg.schedule_params();
    if meta.schedule != expected {
        return Err(CliError::Mismatch(format!(
            "{} was trained with schedule (T={}, beta {}..{}) but the config specifies (T={}, beta {}..{})",
            path.display(),
            meta.schedule.timesteps,
            meta.schedule.beta_start,
            meta.schedule.beta_end,
            expected.timesteps,
            expected.beta_start,
            expected.beta_end
        )));
    }
    let (want_in, want_out) = match kind {
        ModelKind::Epsilon => (cfg.eps_layer_dims()[0], cfg.mixture_spec().dim()),
        ModelKind::Classifier => (cfg.clf_layer_dims()[0], cfg.num_classes()),
    };
    if model.input_dim() != want_in || model.output_dim() != want_out {
        return Err(CliError::Mismatch(format!(
            "{} maps {} -> {} but the config needs {want_in} -> {want_out}",
            path.display(),
            model.input_dim(),
            model.output_dim()
        )));
    }
    Ok(model)
}

fn sampler_config(cfg: &ExperimentConfig, seed: u64) -> SamplerConfig {
    SamplerConfig {
        method: cfg.sampler.method,
        steps: cfg.sampler_steps(),
        sigma_variant: cfg.schedule.sigma_variant,
        ddim_eta: cfg.sampler.ddim_eta,
        scheme: cfg.guidance_scheme(),
        seed,
        num_samples: cfg.sampler.num_samples,
        parallel: true,
    }
}

struct Models {
    schedule: NoiseSchedule,
    eps: MlpModel,
    clf: Option<MlpModel>,
}

impl Models {
    fn load(cfg: &ExperimentConfig, eps: &Path, clf: Option<&Path>) -> CliResult<Self> {
        Ok(Self {
            schedule: cfg.noise_schedule()?,
            eps: load_model(eps, ModelKind::Epsilon, cfg)?,
            clf: clf.map(|p| load_model(p, ModelKind::Classifier, cfg)).transpose()?,
        })
    }

    /// Labels are assigned round-robin whenever a classifier is present.
    fn draw(&self, cfg: &ExperimentConfig, seed: u64) -> CliResult<(eds_core::SampleBatch, Option<Vec<usize>>)> {
        let sc = sampler_config(cfg, seed);
        let labels = self.clf.as_ref().map(|_| balanced_labels(sc.num_samples, cfg.num_classes()));
        let batch = sample_batch(&self.eps, self.clf.as_ref(), &self.schedule, &sc, labels.as_deref())?;
        Ok((batch, labels))
    }
}

fn sample(common: &Common, eps: &Path, clf: Option<&Path>, sampler: &SamplerArgs, guidance: &GuidanceArgs) -> CliResult<()> {
    let mut cfg = base_config(common)?;
    apply_sampler_args(&mut cfg, sampler);
    apply_guidance_args(&mut cfg, guidance);
    cfg.validate()?;
    if cfg.guidance.scheme != SchemeTag::None && clf.is_none() {
        return Err(CliError::Usage(format!("scheme {} needs --clf-ckpt", cfg.guidance.scheme)));
    }
    let models = Models::load(&cfg, eps, clf)?;
    let dir = prepare_run_dir(common)?;
    let (batch, labels) = models.draw(&cfg, cfg.sampler_seed())?;
    write_samples_csv(&dir.join("samples.csv"), &batch.samples, labels.as_deref())?;
    write_trajectories_csv(&dir.join("trajectories.csv"), &batch.trajectories)?;
    println!(
        "drew {} samples with {:?} and scheme {} into {}",
        batch.samples.len(),
        cfg.sampler.method,
        cfg.guidance.scheme,
        dir.display()
    );
    finish(&dir, &cfg)
}

fn eval(common: &Common, samples: &Path) -> CliResult<()> {
    let cfg = base_config(common)?;
    cfg.validate()?;
    let (points, labels) = read_points(samples, cfg.num_classes())?;
    let dir = prepare_run_dir(common)?;
    let reference = reference_set(&cfg)?;
    let report = evaluate(&reference, &points, labels.as_deref(), &cfg.mixture_spec(), cfg.metrics.k)?;
    write_json(&dir.join("metrics.json"), &report)?;
    report.write_csv(&dir.join("metrics.csv"))?;
    println!(
        "frechet {:.5} precision {:.4} recall {:.4} conditional_accuracy {}",
        report.frechet,
        report.precision,
        report.recall,
        report.conditional_accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into())
    );
    finish(&dir, &cfg)
}

type LabelledPoints = (Vec<Vec<f64>>, Option<Vec<usize>>);

/// Reads either a samples CSV or a labelled dataset CSV such as `reference.csv`.
fn read_points(path: &Path, num_classes: usize) -> CliResult<LabelledPoints> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if text.lines().next().is_some_and(|h| h.starts_with("label,")) {
        let data = read_dataset_csv(path, num_classes)?;
        let points = (0..data.len()).map(|i| data.point(i).to_vec()).collect();
        return Ok((points, Some(data.labels().to_vec())));
    }
    Ok(read_samples_csv(path)?)
}

fn analyze(common: &Common, cfg: ExperimentConfig, trajectories: &Path) -> CliResult<()> {
    cfg.validate()?;
    let trajectories = read_trajectories_csv(trajectories)?;
    let dir = prepare_run_dir(common)?;
    let traces: Vec<EntropyTrace> = trajectories.iter().map(EntropyTrace::from).collect();
    let m = &cfg.metrics;
    let max_entropy = (cfg.num_classes() as f64).ln();
    let va = vanishing_analysis(&traces, m.vanishing_threshold, max_entropy, m.crossing, m.histogram_bins, cfg.schedule.timesteps)?;
    va.write_histogram_csv(&dir.join("vanishing_histogram.csv"))?;
    va.write_crossings_csv(&dir.join("crossings.csv"))?;
    write_json(&dir.join("vanishing_summary.json"), &va.summary)?;
    let s = &va.summary;
    println!(
        "{}/{} trajectories crossed {:.4} (= {} x ln K); mean crossing t {} std {}",
        s.num_crossed,
        s.num_trajectories,
        va.threshold,
        va.threshold_fraction,
        s.mean.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".into()),
        s.std.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".into())
    );
    finish(&dir, &cfg)
}

/// Sets one guidance parameter, checking that it belongs to the scheme.
fn set_param(cfg: &mut ExperimentConfig, param: &str, value: f64) -> CliResult<()> {
    let scheme = cfg.guidance.scheme;
    let allowed: &[SchemeTag] = match param {
        "gamma" => &[SchemeTag::Eds],
        "scale" => &[SchemeTag::Fixed],
        "c" => &[SchemeTag::RangeConstant, SchemeTag::TimeAware, SchemeTag::GradNorm],
        "m" => &[SchemeTag::GradNorm],
        "t_cut" => &[SchemeTag::RangeConstant],
        _ => return Err(CliError::Usage(format!("unknown sweep parameter {param:?}; expected gamma, scale, c, m or t_cut"))),
    };
    if !allowed.contains(&scheme) {
        return Err(CliError::Usage(format!("parameter {param} does not apply to scheme {scheme}")));
    }
    let g = &mut cfg.guidance;
    match param {
        "gamma" => g.gamma = value,
        "scale" => g.scale = value,
        "c" => g.c = Some(value),
        "m" => g.m = value,
        _ => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(CliError::Usage(format!("t_cut must be a positive integer, got {value}")));
            }
            g.t_cut = Some(value as usize);
        }
    }
    Ok(())
}

struct SweepRow {
    index: usize,
    value: f64,
    seed: u64,
    report: MetricsReport,
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    common: &Common,
    eps: &Path,
    clf: &Path,
    param: &str,
    grid: &[f64],
    jobs: usize,
    sampler: &SamplerArgs,
    guidance: &GuidanceArgs,
) -> CliResult<()> {
    let mut cfg = base_config(common)?;
    apply_sampler_args(&mut cfg, sampler);
    apply_guidance_args(&mut cfg, guidance);
    cfg.validate()?;
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let points: Vec<ExperimentConfig> = grid
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            set_param(&mut c, param, v)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<CliResult<_>>()?;
    let models = Models::load(&cfg, eps, Some(clf))?;
    let dir = prepare_run_dir(common)?;
    let reference = reference_set(&cfg)?;
    let spec = cfg.mixture_spec();
    let master = cfg.sampler_seed();

    let run_point = |(index, point): (usize, &ExperimentConfig)| -> CliResult<SweepRow> {
        // Each point's seed depends only on its grid index.
        let seed = derive_seed(master, index as u64);
        let (batch, labels) = models.draw(point, seed)?;
        let report = evaluate(&reference, &batch.samples, labels.as_deref(), &spec, point.metrics.k)?;
        Ok(SweepRow {
            index,
            value: grid[index],
            seed,
            report,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    let mut rows: Vec<SweepRow> = if jobs == 1 {
        points.iter().enumerate().map(run_point).collect::<CliResult<_>>()?
    } else {
        pool.install(|| points.par_iter().enumerate().map(run_point).collect::<CliResult<_>>())?
    };
    rows.sort_by(|a, b| a.report.frechet.total_cmp(&b.report.frechet).then(a.index.cmp(&b.index)));

    let mut header = vec!["grid_index".to_string(), "param".to_string(), "value".to_string(), "sampler_seed".to_string()];
    header.extend(MetricsReport::csv_header(cfg.num_classes()));
    let path = dir.join("sweep.csv");
    let mut writer = csv::Writer::from_path(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| CliError::Usage(format!("{}: {e}", path.display()));
    writer.write_record(&header).map_err(csv_err)?;
    for row in &rows {
        let mut cells = vec![row.index.to_string(), param.to_string(), row.value.to_string(), row.seed.to_string()];
        cells.extend(row.report.csv_row());
        writer.write_record(&cells).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| io_err(&path, e))?;
    if let Some(best) = rows.first() {
        println!("best {param}={} with frechet {:.5} over {} grid points", best.value, best.report.frechet, rows.len());
    }
    finish(&dir, &cfg)
}
