mod common;

use common::{central_diff, gradient_check_case, max_rel_err};
use eds_core::guidance::guided_gradient;
use eds_core::neural::{conditioned_input, softmax, Activation, MlpModel};
use eds_core::numerics::RngStream;
use eds_core::GuidanceScheme;

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in 0..25 {
        let err = gradient_check_case(seed);
        assert!(err <= 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn guided_gradient_matches_scaled_log_prob_gradient() {
    let clf = MlpModel::random(&[5, 9, 4], Activation::Silu, &mut RngStream::new(4, 0)).unwrap();
    let x = [0.4, -1.1];
    let (g, record) = guided_gradient(&clf, &x, 30, 100, 2, &GuidanceScheme::Fixed { scale: 2.5 }).unwrap();
    let numeric = central_diff(&x, |v| softmax(&clf.forward(&conditioned_input(v, 30, 100)).unwrap()).log_probs()[2]);
    let scaled: Vec<f64> = numeric.iter().map(|n| 2.5 * n).collect();
    assert!(max_rel_err(&g, &scaled) < 1e-6);
    let norm = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((record.grad_norm.unwrap() - norm).abs() < 1e-8);
}
