#![allow(dead_code)]

use eds_core::neural::{grad_input_log_prob, grad_params, softmax, Activation, MlpModel, OutputLoss, SquaredError};
use eds_core::numerics::RngStream;
use eds_core::training::{total_loss, EntropyConstrainedCe};

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor so that near-zero pairs compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central difference of `f` with respect to each coordinate of `x`.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}

/// Random small MLP with the given input and output widths.
pub fn random_model(rng: &mut RngStream, input: usize, output: usize) -> MlpModel {
    let hidden = rng.range_inclusive(0, 2);
    let mut dims = vec![input];
    for _ in 0..hidden {
        dims.push(rng.range_inclusive(2, 7));
    }
    dims.push(output);
    let activation = if rng.uniform() < 0.5 { Activation::Silu } else { Activation::Tanh };
    MlpModel::random(&dims, activation, rng).unwrap()
}

fn model_with(model: &MlpModel, params: &[f64]) -> MlpModel {
    MlpModel::from_params(model.layer_dims(), model.activation(), params.to_vec()).unwrap()
}

/// Worst relative error over one random model for the three analytic
/// gradients: squared-error parameters, ECT-loss parameters, input log-prob.
pub fn gradient_check_case(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 0);
    let input = rng.range_inclusive(1, 5);
    let classes = rng.range_inclusive(2, 6);
    let batch = rng.range_inclusive(1, 4);

    let reg = random_model(&mut rng, input, 3);
    let xs: Vec<f64> = (0..batch * input).map(|_| rng.standard_normal()).collect();
    let targets: Vec<Vec<f64>> = (0..batch).map(|_| (0..3).map(|_| rng.standard_normal()).collect()).collect();
    let (_, analytic) = grad_params(&reg, &xs, &targets, &SquaredError).unwrap();
    let numeric = central_diff(reg.params(), |p| mean_loss(&model_with(&reg, p), &xs, &targets, &SquaredError));
    let mut worst = max_rel_err(&analytic, &numeric);

    let clf = random_model(&mut rng, input, classes);
    let labels: Vec<usize> = (0..batch).map(|_| rng.index(classes)).collect();
    let eta = rng.uniform();
    let loss = EntropyConstrainedCe { eta };
    let (_, analytic) = grad_params(&clf, &xs, &labels, &loss).unwrap();
    let numeric = central_diff(clf.params(), |p| {
        let m = model_with(&clf, p);
        labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let z = m.forward(&xs[i * input..(i + 1) * input]).unwrap();
                total_loss(&softmax(&z), y, eta).unwrap().total
            })
            .sum::<f64>()
            / batch as f64
    });
    worst = worst.max(max_rel_err(&analytic, &numeric));

    let x = &xs[..input];
    let y = labels[0];
    let analytic = grad_input_log_prob(&clf, x, y).unwrap();
    let numeric = central_diff(x, |v| softmax(&clf.forward(v).unwrap()).log_probs()[y]);
    worst.max(max_rel_err(&analytic, &numeric))
}

fn mean_loss<L: OutputLoss>(model: &MlpModel, xs: &[f64], targets: &[L::Target], loss: &L) -> f64 {
    let input = model.input_dim();
    let mut scratch = vec![0.0; model.output_dim()];
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let out = model.forward(&xs[i * input..(i + 1) * input]).unwrap();
            loss.loss_and_grad(&out, t, &mut scratch).unwrap()
        })
        .sum::<f64>()
        / targets.len() as f64
}
