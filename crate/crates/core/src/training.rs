//! Training for the noise predictor and the noise-aware classifier.
//!
//! The classifier objective is `CE + η·L_ect` with `L_ect = −H(p)`, the KL
//! divergence to the uniform distribution minus its constant `ln K`. The
//! constant is dropped, so reported `ect` values lie in `[−ln K, 0]`.

use std::path::Path;

use crate::data_io::table::write_table;
use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::guidance::entropy;
use crate::neural::{
    adam_step, conditioned_input, cross_entropy, grad_params, softmax, Activation, AdamConfig, AdamState,
    ClassDistribution, MlpModel, OutputLoss, SquaredError, TIME_FEATURES,
};
use crate::numerics::{gaussian_sample, streams, RngStream};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// ECT weight; ignored by the noise-predictor trainer.
    pub eta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub seed: u64,
    pub eval_interval: usize,
    pub validation_fraction: f64,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) {
            return Err(Error::InvalidArgument(format!("eta must be nonnegative, got {}", self.eta)));
        }
        if self.batch_size == 0 || self.total_steps == 0 || self.eval_interval == 0 {
            return Err(Error::InvalidArgument("batch_size, total_steps and eval_interval must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidArgument("validation_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub ect: f64,
    pub total: f64,
}

/// `−H(dist)`
pub fn ect_loss(dist: &ClassDistribution) -> f64 {
    -entropy(dist)
}

pub fn total_loss(dist: &ClassDistribution, label: usize, eta: f64) -> Result<LossBreakdown> {
    let ce = cross_entropy(dist, label)?;
    let ect = ect_loss(dist);
    Ok(LossBreakdown {
        ce,
        ect,
        total: ce + eta * ect,
    })
}

/// `CE + η·(−H)` on classifier logits, differentiated jointly.
#[derive(Debug, Clone, Copy)]
pub struct EntropyConstrainedCe {
    pub eta: f64,
}

impl OutputLoss for EntropyConstrainedCe {
    type Target = usize;

    fn loss_and_grad(&self, logits: &[f64], label: &usize, grad: &mut [f64]) -> Result<f64> {
        let dist = softmax(logits);
        let parts = total_loss(&dist, *label, self.eta)?;
        let h = -parts.ect;
        // dCE/dz_j = p_j − 1[j = y];  d(−H)/dz_j = p_j (ln p_j + H)
        for (j, ((g, &p), &lp)) in grad.iter_mut().zip(dist.probs()).zip(dist.log_probs()).enumerate() {
            let ce = if j == *label { p - 1.0 } else { p };
            *g = ce + self.eta * p * (lp + h);
        }
        Ok(parts.total)
    }
}

/// Training split and held-out validation split, fixed by seed.
pub fn split_dataset(dataset: &Dataset, validation_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed, streams::SPLIT);
    for i in (1..n).rev() {
        let j = rng.index(i + 1);
        order.swap(i, j);
    }
    // At least one point on each side once there are two points.
    let n_val = if n < 2 {
        0
    } else {
        ((n as f64 * validation_fraction).round() as usize).clamp(1, n - 1)
    };
    let (val, train) = order.split_at(n_val);
    (dataset.subset(train), dataset.subset(val))
}

/// One row of classifier training telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierLogRow {
    pub step: usize,
    pub ce: f64,
    pub ect: f64,
    pub total: f64,
    pub val_accuracy: f64,
    pub val_mean_entropy: f64,
}

impl ClassifierLogRow {
    pub const CSV_HEADER: &'static str = "step,ce,ect,total,val_accuracy,val_mean_entropy";
}

/// One row of noise-predictor training telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonLogRow {
    pub step: usize,
    pub loss: f64,
    pub val_loss: f64,
}

impl EpsilonLogRow {
    pub const CSV_HEADER: &'static str = "step,loss,val_loss";
}

#[derive(Debug, Clone)]
pub struct Trained<R> {
    pub model: MlpModel,
    pub log: Vec<R>,
}

/// Fixed noisy inputs for validation, drawn once from the validation stream.
struct NoisyBatch {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    noise: Vec<Vec<f64>>,
}

fn noisy_batch(data: &Dataset, schedule: &NoiseSchedule, t_of: impl Fn(&mut RngStream) -> usize, rng: &mut RngStream) -> Result<NoisyBatch> {
    let d = data.dim();
    let total = schedule.timesteps();
    let mut inputs = Vec::with_capacity(data.len() * (d + TIME_FEATURES));
    let mut noise = Vec::with_capacity(data.len());
    for x0 in data.rows() {
        let t = t_of(rng);
        let eps = gaussian_sample(rng, d);
        let x_t = schedule.q_sample(x0, t, &eps)?;
        inputs.extend(conditioned_input(&x_t, t, total));
        noise.push(eps);
    }
    Ok(NoisyBatch {
        inputs,
        labels: data.labels().to_vec(),
        noise,
    })
}

fn check_dataset(dataset: &Dataset, model_input: usize) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.dim() + TIME_FEATURES != model_input {
        return Err(Error::DimensionMismatch {
            expected: model_input - TIME_FEATURES.min(model_input),
            found: dataset.dim(),
        });
    }
    Ok(())
}

/// Flattened `x_t`, labels and the noise that produced each row.
type Minibatch = (Vec<f64>, Vec<usize>, Vec<Vec<f64>>);

/// Per-step minibatch: draw `(x0, y)` with replacement, `t ~ U{1..T}`,
/// `ε ~ N(0, I)`, and form `x_t`.
fn draw_minibatch(
    train: &Dataset,
    schedule: &NoiseSchedule,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<Minibatch> {
    let d = train.dim();
    let total = schedule.timesteps();
    let mut inputs = Vec::with_capacity(batch_size * (d + TIME_FEATURES));
    let mut labels = Vec::with_capacity(batch_size);
    let mut noise = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let i = rng.index(train.len());
        let t = rng.range_inclusive(1, total);
        let eps = gaussian_sample(rng, d);
        let x_t = schedule.q_sample(train.point(i), t, &eps)?;
        inputs.extend(conditioned_input(&x_t, t, total));
        labels.push(train.labels()[i]);
        noise.push(eps);
    }
    Ok((inputs, labels, noise))
}

/// Accuracy and mean predicted entropy of `model` on a fixed noisy batch.
pub fn classifier_stats(model: &MlpModel, inputs: &[f64], labels: &[usize]) -> (f64, f64) {
    let k = model.output_dim();
    let logits = model.forward_batch(inputs, labels.len());
    let mut correct = 0usize;
    let mut h_sum = 0.0;
    for (z, &y) in logits.chunks_exact(k).zip(labels) {
        let dist = softmax(z);
        if dist.argmax() == y {
            correct += 1;
        }
        h_sum += entropy(&dist);
    }
    let n = labels.len().max(1) as f64;
    (correct as f64 / n, h_sum / n)
}

/// Mean predicted entropy over `data` noised to timestep `t` with noise from
/// `(seed, stream)`.
pub fn mean_entropy_at(model: &MlpModel, data: &Dataset, schedule: &NoiseSchedule, t: usize, seed: u64, stream: u64) -> Result<f64> {
    schedule.check_t(t)?;
    let batch = noisy_batch(data, schedule, |_| t, &mut RngStream::new(seed, stream))?;
    Ok(classifier_stats(model, &batch.inputs, &batch.labels).1)
}

/// Accuracy over `data` noised to timestep `t`.
pub fn accuracy_at(model: &MlpModel, data: &Dataset, schedule: &NoiseSchedule, t: usize, seed: u64, stream: u64) -> Result<f64> {
    schedule.check_t(t)?;
    let batch = noisy_batch(data, schedule, |_| t, &mut RngStream::new(seed, stream))?;
    Ok(classifier_stats(model, &batch.inputs, &batch.labels).0)
}

/// Trains the noise-aware classifier on `CE + η·L_ect`.
///
/// Telemetry every `eval_interval` steps (and at the last step): the
/// minibatch losses averaged since the previous row, clean-data (t = 1)
/// accuracy on the validation split, and mean predicted entropy on the
/// validation split at t = T/2.
pub fn train_classifier(dataset: &Dataset, schedule: &NoiseSchedule, config: &TrainConfig) -> Result<Trained<ClassifierLogRow>> {
    config.validate()?;
    let k = dataset.num_classes();
    if config.layer_dims.last() != Some(&k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: config.layer_dims.last().copied().unwrap_or(0),
        });
    }
    check_dataset(dataset, config.layer_dims[0])?;
    let (train, val) = split_dataset(dataset, config.validation_fraction, config.seed);

    let mut model = MlpModel::random(&config.layer_dims, config.activation, &mut RngStream::new(config.seed, streams::INIT))?;
    let mut state = AdamState::new(model.num_params(), AdamConfig::default());
    let loss = EntropyConstrainedCe { eta: config.eta };

    let mut val_rng = RngStream::new(config.seed, streams::VALIDATION);
    let clean = noisy_batch(&val, schedule, |_| 1, &mut val_rng)?;
    let mid_t = (schedule.timesteps() / 2).max(1);
    let mid = noisy_batch(&val, schedule, |_| mid_t, &mut val_rng)?;

    let mut rng = RngStream::new(config.seed, streams::TRAIN);
    let mut log = Vec::new();
    let mut acc = LossBreakdown {
        ce: 0.0,
        ect: 0.0,
        total: 0.0,
    };
    let mut acc_n = 0usize;
    for step in 1..=config.total_steps {
        let (inputs, labels, _) = draw_minibatch(&train, schedule, config.batch_size, &mut rng)?;
        let (_, grad) = grad_params(&model, &inputs, &labels, &loss)?;
        let last = step == config.total_steps;
        let logging = step % config.eval_interval == 0 || last;
        // Telemetry losses use the pre-update parameters of this minibatch.
        let parts = batch_breakdown(&model, &inputs, &labels, config.eta)?;
        acc.ce += parts.ce;
        acc.ect += parts.ect;
        acc.total += parts.total;
        acc_n += 1;
        adam_step(&mut model, &grad, &mut state, config.learning_rate)?;
        if logging {
            let n = acc_n as f64;
            let (val_accuracy, _) = classifier_stats(&model, &clean.inputs, &clean.labels);
            let (_, val_mean_entropy) = classifier_stats(&model, &mid.inputs, &mid.labels);
            log.push(ClassifierLogRow {
                step,
                ce: acc.ce / n,
                ect: acc.ect / n,
                total: acc.total / n,
                val_accuracy,
                val_mean_entropy,
            });
            acc = LossBreakdown {
                ce: 0.0,
                ect: 0.0,
                total: 0.0,
            };
            acc_n = 0;
        }
    }
    Ok(Trained { model, log })
}

fn batch_breakdown(model: &MlpModel, inputs: &[f64], labels: &[usize], eta: f64) -> Result<LossBreakdown> {
    let k = model.output_dim();
    let logits = model.forward_batch(inputs, labels.len());
    let mut out = LossBreakdown {
        ce: 0.0,
        ect: 0.0,
        total: 0.0,
    };
    for (z, &y) in logits.chunks_exact(k).zip(labels) {
        let b = total_loss(&softmax(z), y, eta)?;
        out.ce += b.ce;
        out.ect += b.ect;
        out.total += b.total;
    }
    let n = labels.len() as f64;
    Ok(LossBreakdown {
        ce: out.ce / n,
        ect: out.ect / n,
        total: out.total / n,
    })
}

/// Trains the noise predictor on `‖ε − ε_θ(x_t, t)‖²`.
///
/// Telemetry: minibatch loss averaged since the previous row, and the loss
/// on a fixed noisy validation set (t drawn once per validation point).
pub fn train_epsilon(dataset: &Dataset, schedule: &NoiseSchedule, config: &TrainConfig) -> Result<Trained<EpsilonLogRow>> {
    config.validate()?;
    check_dataset(dataset, config.layer_dims[0])?;
    if config.layer_dims.last() != Some(&dataset.dim()) {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            found: config.layer_dims.last().copied().unwrap_or(0),
        });
    }
    let (train, val) = split_dataset(dataset, config.validation_fraction, config.seed);
    let mut model = MlpModel::random(&config.layer_dims, config.activation, &mut RngStream::new(config.seed, streams::INIT))?;
    let mut state = AdamState::new(model.num_params(), AdamConfig::default());

    let total_t = schedule.timesteps();
    let val_batch = noisy_batch(
        &val,
        schedule,
        |r| r.range_inclusive(1, total_t),
        &mut RngStream::new(config.seed, streams::VALIDATION),
    )?;

    let mut rng = RngStream::new(config.seed, streams::TRAIN);
    let mut log = Vec::new();
    let mut acc = 0.0;
    let mut acc_n = 0usize;
    for step in 1..=config.total_steps {
        let (inputs, _, noise) = draw_minibatch(&train, schedule, config.batch_size, &mut rng)?;
        let (loss, grad) = grad_params(&model, &inputs, &noise, &SquaredError)?;
        acc += loss;
        acc_n += 1;
        adam_step(&mut model, &grad, &mut state, config.learning_rate)?;
        if step % config.eval_interval == 0 || step == config.total_steps {
            log.push(EpsilonLogRow {
                step,
                loss: acc / acc_n as f64,
                val_loss: epsilon_loss(&model, &val_batch.inputs, &val_batch.noise),
            });
            acc = 0.0;
            acc_n = 0;
        }
    }
    Ok(Trained { model, log })
}

fn epsilon_loss(model: &MlpModel, inputs: &[f64], noise: &[Vec<f64>]) -> f64 {
    let d = model.output_dim();
    let out = model.forward_batch(inputs, noise.len());
    let total: f64 = out
        .chunks_exact(d)
        .zip(noise)
        .map(|(o, e)| o.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    total / noise.len() as f64
}

fn header(spec: &str) -> Vec<String> {
    spec.split(',').map(str::to_string).collect()
}

pub fn write_classifier_log(path: &Path, rows: &[ClassifierLogRow]) -> Result<()> {
    let cells = rows.iter().map(|r| {
        let mut row = vec![r.step.to_string()];
        row.extend([r.ce, r.ect, r.total, r.val_accuracy, r.val_mean_entropy].map(|v| v.to_string()));
        row
    });
    write_table(path, &header(ClassifierLogRow::CSV_HEADER), cells)
}

pub fn write_epsilon_log(path: &Path, rows: &[EpsilonLogRow]) -> Result<()> {
    let cells = rows
        .iter()
        .map(|r| vec![r.step.to_string(), r.loss.to_string(), r.val_loss.to_string()]);
    write_table(path, &header(EpsilonLogRow::CSV_HEADER), cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ect_loss_examples() {
        for k in [2usize, 8, 10] {
            let u = ClassDistribution::uniform(k);
            assert!((ect_loss(&u) + (k as f64).ln()).abs() < 1e-12);
        }
        let one_hot = ClassDistribution::from_probs(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(ect_loss(&one_hot), 0.0);
        let d = ClassDistribution::from_probs(vec![0.9, 0.1]).unwrap();
        let direct = -(-0.9f64 * 0.9f64.ln() - 0.1 * 0.1f64.ln());
        assert!((ect_loss(&d) - direct).abs() < 1e-15);
        assert!((ect_loss(&d) + 0.325083).abs() < 1e-6);
    }

    #[test]
    fn total_loss_examples() {
        let d = softmax(&[0.3, -0.2, 1.0]);
        let b = total_loss(&d, 1, 0.0).unwrap();
        assert_eq!(b.total, b.ce);
        let u = ClassDistribution::uniform(10);
        let b = total_loss(&u, 4, 0.2).unwrap();
        assert!((b.total - 0.8 * 10f64.ln()).abs() < 1e-12);
        assert!((b.total - 1.842068).abs() < 1e-6);
        assert!((b.total - (b.ce + 0.2 * b.ect)).abs() < 1e-12);
        assert!(total_loss(&u, 10, 0.2).is_err());
    }

    #[test]
    fn ect_gradient_matches_finite_differences() {
        let logits = [0.7, -1.1, 0.25, 2.0, -0.4];
        let loss = EntropyConstrainedCe { eta: 0.2 };
        let mut grad = vec![0.0; 5];
        loss.loss_and_grad(&logits, &3, &mut grad).unwrap();
        let h = 1e-5;
        for j in 0..5 {
            let mut up = logits;
            let mut dn = logits;
            up[j] += h;
            dn[j] -= h;
            let mut scratch = vec![0.0; 5];
            let fd = (loss.loss_and_grad(&up, &3, &mut scratch).unwrap() - loss.loss_and_grad(&dn, &3, &mut scratch).unwrap()) / (2.0 * h);
            let rel = (fd - grad[j]).abs() / fd.abs().max(grad[j].abs()).max(1e-8);
            assert!(rel < 1e-4, "logit {j}: fd {fd} analytic {}", grad[j]);
        }
    }

    #[test]
    fn split_is_fixed_and_disjoint() {
        let spec = crate::data_io::MixtureSpec::circle(4, 3.0, 0.2, 25, 1);
        let data = spec.generate(0).unwrap();
        let (tr, va) = split_dataset(&data, 0.1, 7);
        assert_eq!(va.len(), 10);
        assert_eq!(tr.len() + va.len(), data.len());
        let (tr2, va2) = split_dataset(&data, 0.1, 7);
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
    }

    fn tiny_config(layer_dims: Vec<usize>) -> TrainConfig {
        TrainConfig {
            eta: 0.2,
            learning_rate: 0.0,
            batch_size: 8,
            total_steps: 1,
            seed: 3,
            eval_interval: 1,
            validation_fraction: 0.1,
            layer_dims,
            activation: Activation::Silu,
        }
    }

    #[test]
    fn zero_lr_leaves_classifier_at_init() {
        let spec = crate::data_io::MixtureSpec::circle(4, 3.0, 0.2, 25, 1);
        let data = spec.generate(0).unwrap();
        let schedule = NoiseSchedule::linear_default(50).unwrap();
        let cfg = tiny_config(vec![5, 8, 4]);
        let out = train_classifier(&data, &schedule, &cfg).unwrap();
        let init = MlpModel::random(&cfg.layer_dims, cfg.activation, &mut RngStream::new(cfg.seed, streams::INIT)).unwrap();
        assert_eq!(out.model, init);
    }

    #[test]
    fn zero_lr_epsilon_val_loss_constant() {
        let spec = crate::data_io::MixtureSpec::circle(4, 3.0, 0.2, 25, 1);
        let data = spec.generate(0).unwrap();
        let schedule = NoiseSchedule::linear_default(50).unwrap();
        let mut cfg = tiny_config(vec![5, 8, 2]);
        cfg.total_steps = 5;
        let out = train_epsilon(&data, &schedule, &cfg).unwrap();
        assert_eq!(out.log.len(), 5);
        assert!(out.log.windows(2).all(|w| w[0].val_loss == w[1].val_loss));
    }

    #[test]
    fn rejects_bad_inputs() {
        let schedule = NoiseSchedule::linear_default(50).unwrap();
        let empty = Dataset::new(2, 4, vec![], vec![]).unwrap();
        assert!(matches!(train_classifier(&empty, &schedule, &tiny_config(vec![5, 8, 4])), Err(Error::EmptyDataset)));
        assert!(matches!(train_epsilon(&empty, &schedule, &tiny_config(vec![5, 8, 2])), Err(Error::EmptyDataset)));
        assert!(Dataset::new(2, 4, vec![0.0, 0.0], vec![4]).is_err());
    }
}
