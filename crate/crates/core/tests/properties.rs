use eds_core::guidance::{eds_scale, entropy, scale_factor};
use eds_core::metrics::{crossing_timestep, frechet_distance, precision_recall, vanishing_analysis, CrossingMode, EntropyTrace};
use eds_core::neural::{softmax, Activation, MlpModel};
use eds_core::numerics::RngStream;
use eds_core::samplers::{ddim_timesteps, ddpm_step_with_noise};
use eds_core::schedule::{NoiseSchedule, SigmaVariant};
use eds_core::GuidanceScheme;
use proptest::prelude::*;

fn cloud(seed: u64, n: usize, shift: f64) -> Vec<Vec<f64>> {
    let mut rng = RngStream::new(seed, 0);
    (0..n)
        .map(|_| vec![shift + rng.standard_normal(), 0.5 * rng.standard_normal() - shift])
        .collect()
}

proptest! {
    #[test]
    fn entropy_within_bounds(logits in prop::collection::vec(-30.0f64..30.0, 1..40)) {
        let d = softmax(&logits);
        let h = entropy(&d);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (logits.len() as f64).ln() + 1e-9);
    }

    #[test]
    fn eds_scale_at_least_gamma(logits in prop::collection::vec(-10.0f64..10.0, 2..20), gamma in 0.01f64..10.0) {
        let s = eds_scale(&softmax(&logits), gamma, 1e-8, 1e4 * gamma);
        prop_assert!(s >= gamma * (1.0 - 1e-12));
        prop_assert!(s <= 1e4 * gamma);
    }

    #[test]
    fn schedule_invariants(t_max in 21usize..400, start in 1e-5f64..1e-3, width in 0.0f64..0.04) {
        let s = NoiseSchedule::build_linear(t_max, start, start + width).unwrap();
        for t in 2..=t_max {
            prop_assert!(s.beta(t) >= s.beta(t - 1));
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            prop_assert!(s.sigma_sq(t, SigmaVariant::BetaTilde).unwrap() <= s.beta(t));
        }
    }

    #[test]
    fn ddim_subsequence_shape(t_max in 2usize..2000, steps in 1usize..200) {
        let ts = ddim_timesteps(t_max, steps);
        prop_assert_eq!(ts[0], t_max);
        prop_assert_eq!(*ts.last().unwrap(), 1);
        prop_assert!(ts.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn mean_shift_linearity(seed in any::<u64>(), t in 1usize..100, g0 in -5.0f64..5.0, g1 in -5.0f64..5.0) {
        let s = NoiseSchedule::linear_default(100).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let m = MlpModel::random(&[5, 6, 2], Activation::Silu, &mut rng).unwrap();
        let x = [rng.standard_normal(), rng.standard_normal()];
        let z = [rng.standard_normal(), rng.standard_normal()];
        let g = [g0, g1];
        for variant in [SigmaVariant::Beta, SigmaVariant::BetaTilde] {
            let guided = ddpm_step_with_noise(&m, &s, &x, t, &g, variant, &z).unwrap();
            let plain = ddpm_step_with_noise(&m, &s, &x, t, &[0.0, 0.0], variant, &z).unwrap();
            let var = s.sigma_sq(t, variant).unwrap();
            for i in 0..2 {
                let diff = guided[i] - plain[i];
                prop_assert!((diff - var * g[i]).abs() <= 1e-12 * (1.0 + guided[i].abs()));
            }
        }
    }

    #[test]
    fn frechet_symmetric_and_translation_invariant(a in 0u64..1000, b in 0u64..1000, dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
        let p = cloud(a, 60, 0.0);
        let q = cloud(b + 5000, 60, 1.0);
        let f = frechet_distance(&p, &q).unwrap();
        prop_assert!(f >= 0.0);
        prop_assert!((f - frechet_distance(&q, &p).unwrap()).abs() < 1e-9);
        let shift = |v: &Vec<Vec<f64>>| v.iter().map(|x| vec![x[0] + dx, x[1] + dy]).collect::<Vec<_>>();
        prop_assert!((f - frechet_distance(&shift(&p), &shift(&q)).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn precision_recall_of_identical_sets(seed in any::<u64>(), n in 5usize..60, k in 1usize..4) {
        let p = cloud(seed, n, 0.0);
        prop_assert_eq!(precision_recall(&p, &p, k).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn vanishing_is_base_free(seed in any::<u64>(), frac in 0.01f64..0.5, base in 1.5f64..20.0) {
        let mut rng = RngStream::new(seed, 0);
        let k = 8.0f64;
        let traces: Vec<EntropyTrace> = (0..20)
            .map(|i| EntropyTrace {
                sample_id: i,
                points: (1..=50).rev().map(|t| (t, k.ln() * rng.uniform() * t as f64 / 50.0)).collect(),
            })
            .collect();
        let rebased: Vec<EntropyTrace> = traces
            .iter()
            .map(|tr| EntropyTrace { sample_id: tr.sample_id, points: tr.points.iter().map(|(t, h)| (*t, h / base.ln())).collect() })
            .collect();
        for mode in [CrossingMode::Sustained, CrossingMode::FirstTouch] {
            let a = vanishing_analysis(&traces, frac, k.ln(), mode, 10, 50).unwrap();
            let b = vanishing_analysis(&rebased, frac, k.ln() / base.ln(), mode, 10, 50).unwrap();
            prop_assert_eq!(&a.crossings, &b.crossings);
            let total: usize = a.histogram.iter().map(|h| h.count).sum();
            prop_assert_eq!(total, a.summary.num_crossed);
        }
    }

    #[test]
    fn sustained_never_exceeds_first_touch(hs in prop::collection::vec(0.0f64..2.0, 1..80)) {
        let points: Vec<(usize, f64)> = hs.iter().enumerate().map(|(i, h)| (hs.len() - i, *h)).collect();
        let s = crossing_timestep(&points, 0.5, CrossingMode::Sustained);
        let f = crossing_timestep(&points, 0.5, CrossingMode::FirstTouch);
        if let Some(s) = s {
            prop_assert!(f.unwrap() >= s);
        }
    }

    #[test]
    fn time_aware_vanishes_at_t_max(c in 0.001f64..10.0, t_max in 2usize..2000, h in 0.0f64..2.0) {
        prop_assert_eq!(scale_factor(&GuidanceScheme::TimeAware { c }, t_max, t_max, h, 1.0, 8), 0.0);
    }
}
