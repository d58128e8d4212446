use eds_core::data_io::MixtureSpec;
use eds_core::metrics::{conditional_accuracy, frechet_distance, precision_recall, trace_sqrt_product};
use eds_core::numerics::{DenseMatrix, RngStream};
use nalgebra::Matrix2;

fn random_spd(rng: &mut RngStream) -> Matrix2<f64> {
    let a = Matrix2::from_fn(|_, _| rng.standard_normal());
    a * a.transpose() + Matrix2::identity() * 0.05
}

fn dense(m: &Matrix2<f64>) -> DenseMatrix {
    DenseMatrix::from_row_major(2, 2, vec![m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]).unwrap()
}

/// `Tr((AB)^{1/2})` via nalgebra's symmetric eigensolver on `√A B √A`.
fn eigen_oracle(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    let ea = a.symmetric_eigen();
    let root = ea.eigenvectors * Matrix2::from_diagonal(&ea.eigenvalues.map(f64::sqrt)) * ea.eigenvectors.transpose();
    let inner = root * b * root;
    let inner = (inner + inner.transpose()) * 0.5;
    inner.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum()
}

#[test]
fn closed_form_square_root_matches_eigen_oracle() {
    let mut rng = RngStream::new(77, 0);
    for _ in 0..200 {
        let a = random_spd(&mut rng);
        let b = random_spd(&mut rng);
        let got = trace_sqrt_product(&dense(&a), &dense(&b)).unwrap();
        assert!((got - eigen_oracle(&a, &b)).abs() < 1e-8);
    }
}

#[test]
fn mean_shift_frechet_approaches_25() {
    let mut rng = RngStream::new(5, 0);
    let n = 100_000;
    let a: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.standard_normal(), rng.standard_normal()]).collect();
    let b: Vec<Vec<f64>> = (0..n).map(|_| vec![3.0 + rng.standard_normal(), 4.0 + rng.standard_normal()]).collect();
    let f = frechet_distance(&a, &b).unwrap();
    assert!((f - 25.0).abs() <= 0.05 * 25.0, "{f}");
}

/// Exhaustive evaluation of k = 1 ball memberships in one dimension.
fn brute_force(real: &[f64], gen: &[f64]) -> (f64, f64) {
    let radius = |set: &[f64], i: usize| {
        set.iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, v)| (v - set[i]).abs())
            .fold(f64::INFINITY, f64::min)
    };
    let covered = |support: &[f64], q: f64| (0..support.len()).any(|i| (q - support[i]).abs() <= radius(support, i));
    let p = gen.iter().filter(|&&g| covered(real, g)).count() as f64 / gen.len() as f64;
    let r = real.iter().filter(|&&x| covered(gen, x)).count() as f64 / real.len() as f64;
    (p, r)
}

#[test]
fn precision_recall_matches_brute_force_on_five_points() {
    let real = [0.0, 1.0, 1.5, 4.0, 10.0];
    let gen = [0.4, 2.2, 3.1, 7.5, 20.0];
    let wrap = |v: &[f64]| v.iter().map(|x| vec![*x]).collect::<Vec<_>>();
    let got = precision_recall(&wrap(&real), &wrap(&gen), 1).unwrap();
    // Real radii 1, 0.5, 0.5, 2.5, 6 cover every generated point except 20.
    assert_eq!(got, brute_force(&real, &gen));
    assert_eq!(got.0, 0.8);

    let mut rng = RngStream::new(3, 0);
    for _ in 0..100 {
        let r: Vec<f64> = (0..5).map(|_| 4.0 * rng.standard_normal()).collect();
        let g: Vec<f64> = (0..5).map(|_| 4.0 * rng.standard_normal()).collect();
        assert_eq!(precision_recall(&wrap(&r), &wrap(&g), 1).unwrap(), brute_force(&r, &g));
    }
}

#[test]
fn permuted_labels_fall_to_chance() {
    let spec = MixtureSpec::circle(8, 6.0, 0.3, 500, 11);
    let data = spec.generate(0).unwrap();
    let samples: Vec<Vec<f64>> = data.rows().map(<[f64]>::to_vec).collect();
    let labels = data.labels().to_vec();
    assert!(conditional_accuracy(&samples, &labels, &spec).unwrap() > 0.99);
    let mut rng = RngStream::new(2, 0);
    let mut permuted = labels.clone();
    for i in (1..permuted.len()).rev() {
        permuted.swap(i, rng.index(i + 1));
    }
    assert!(conditional_accuracy(&samples, &permuted, &spec).unwrap() <= 1.0 / 8.0 + 0.03);
    let adversarial: Vec<usize> = labels.iter().map(|l| (l + 4) % 8).collect();
    assert_eq!(conditional_accuracy(&samples, &adversarial, &spec).unwrap(), 0.0);
}
