//! Sample-quality metrics and gradient-vanishing diagnostics.
//!
//! All metrics operate on raw data coordinates. The Fréchet distance here is
//! computed between Gaussians fitted to 2-D point sets, so its values are
//! not comparable to image-feature FID numbers.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::table::{opt_cell, write_table};
use crate::data_io::{Dataset, MixtureSpec};
use crate::error::{Error, Result};
use crate::numerics::{squared_distance, DenseMatrix, DenseVector};
use crate::samplers::Trajectory;

/// Ridge added to fitted covariances before taking square roots.
pub const COVARIANCE_RIDGE: f64 = 1e-10;
pub const DEFAULT_K: usize = 3;

/// Sample mean and unbiased covariance of a point set.
pub fn fit_gaussian(points: &[DenseVector]) -> Result<(DenseVector, DenseMatrix)> {
    let d = points.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
    if d == 0 {
        return Err(Error::InvalidArgument("points must have at least one coordinate".into()));
    }
    if points.len() < d + 1 {
        return Err(Error::TooFewPoints {
            needed: d + 1,
            found: points.len(),
        });
    }
    if let Some(bad) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: bad.len() });
    }
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DenseMatrix::zeros(d, d);
    for p in points {
        for i in 0..d {
            let di = p[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (p[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / (n - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    if cov.as_slice().iter().any(|v| !v.is_finite()) || mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCovariance("non-finite moments".into()));
    }
    Ok((mean, cov))
}

fn regularized(cov: &DenseMatrix) -> DenseMatrix {
    cov.symmetrized().add(&DenseMatrix::identity(cov.rows()).scale(COVARIANCE_RIDGE))
}

/// `Tr((Σ₁Σ₂)^{1/2})` for symmetric PSD inputs.
///
/// Uses `√(tr(Σ₁Σ₂) + 2√(det Σ₁ det Σ₂))` in 2-D and the eigenvalues of
/// `Σ₁^{1/2} Σ₂ Σ₁^{1/2}` otherwise.
pub fn trace_sqrt_product(s1: &DenseMatrix, s2: &DenseMatrix) -> Result<f64> {
    if s1.rows() != s2.rows() || s1.cols() != s2.cols() || s1.rows() != s1.cols() {
        return Err(Error::DimensionMismatch {
            expected: s1.rows(),
            found: s2.rows(),
        });
    }
    if s1.rows() == 2 {
        let det = |m: &DenseMatrix| m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let tr = s1.matmul(s2)?.trace();
        let det_prod = det(s1).max(0.0) * det(s2).max(0.0);
        return Ok((tr + 2.0 * det_prod.sqrt()).max(0.0).sqrt());
    }
    let root = s1.sqrt_psd()?;
    let inner = root.matmul(s2)?.matmul(&root)?;
    let (values, _) = inner.symmetric_eigen()?;
    Ok(values.iter().map(|v| v.max(0.0).sqrt()).sum())
}

/// Fréchet distance between Gaussians with the given moments.
pub fn frechet_from_moments(mu1: &[f64], s1: &DenseMatrix, mu2: &[f64], s2: &DenseMatrix) -> Result<f64> {
    if mu1.len() != mu2.len() {
        return Err(Error::DimensionMismatch {
            expected: mu1.len(),
            found: mu2.len(),
        });
    }
    let s1 = regularized(s1);
    let s2 = regularized(s2);
    let mean_term = squared_distance(mu1, mu2);
    let cross = trace_sqrt_product(&s1, &s2)?;
    let value = mean_term + s1.trace() + s2.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(Error::DegenerateCovariance("non-finite Fréchet distance".into()));
    }
    Ok(value.max(0.0))
}

/// `‖μ₁−μ₂‖² + Tr(Σ₁+Σ₂−2(Σ₁Σ₂)^{1/2})` between Gaussians fitted to each set.
pub fn frechet_distance(real: &[DenseVector], gen: &[DenseVector]) -> Result<f64> {
    let (mu1, s1) = fit_gaussian(real)?;
    let (mu2, s2) = fit_gaussian(gen)?;
    frechet_from_moments(&mu1, &s1, &mu2, &s2)
}

/// Squared distance from each point to its k-th nearest neighbour within
/// the same set, excluding itself.
fn knn_radii_sq(points: &[DenseVector], k: usize) -> Vec<f64> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| squared_distance(p, q))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Fraction of `queries` inside the union of balls around `support` with
/// radii `radii_sq` (squared).
fn coverage(support: &[DenseVector], radii_sq: &[f64], queries: &[DenseVector]) -> f64 {
    let inside = queries
        .par_iter()
        .filter(|q| support.iter().zip(radii_sq).any(|(s, &r)| squared_distance(q, s) <= r))
        .count();
    inside as f64 / queries.len() as f64
}

/// k-NN manifold precision and recall.
///
/// Precision is the fraction of generated points inside the real manifold;
/// recall is the fraction of real points inside the generated manifold.
pub fn precision_recall(real: &[DenseVector], gen: &[DenseVector], k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    for set in [real, gen] {
        if set.len() < k + 1 {
            return Err(Error::TooFewPoints {
                needed: k + 1,
                found: set.len(),
            });
        }
    }
    let d = real[0].len();
    if let Some(bad) = real.iter().chain(gen).find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: bad.len() });
    }
    let real_r = knn_radii_sq(real, k);
    let gen_r = knn_radii_sq(gen, k);
    Ok((coverage(real, &real_r, gen), coverage(gen, &gen_r, real)))
}

/// Fraction of samples whose nearest component mean is their label.
pub fn conditional_accuracy(samples: &[DenseVector], labels: &[usize], spec: &MixtureSpec) -> Result<f64> {
    if samples.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: samples.len(),
            found: labels.len(),
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let hits = samples
        .iter()
        .zip(labels)
        .filter(|(x, &y)| spec.nearest_component(x) == y)
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Fréchet distance per class between real points of class `c` and samples
/// conditioned on `c`. Classes with too few points on either side are `None`.
pub fn per_class_frechet(real: &Dataset, gen: &[DenseVector], labels: &[usize]) -> Result<Vec<Option<f64>>> {
    if gen.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: gen.len(),
            found: labels.len(),
        });
    }
    (0..real.num_classes())
        .map(|c| {
            let r: Vec<DenseVector> = real.rows().zip(real.labels()).filter(|(_, &l)| l == c).map(|(p, _)| p.to_vec()).collect();
            let g: Vec<DenseVector> = gen.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p.clone()).collect();
            match frechet_distance(&r, &g) {
                Ok(v) => Ok(Some(v)),
                Err(Error::TooFewPoints { .. } | Error::EmptyDataset) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Mean of the defined entries.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frechet: f64,
    pub per_class_frechet: Vec<Option<f64>>,
    pub mean_per_class_frechet: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    /// Present when the samples carry conditioning labels.
    pub conditional_accuracy: Option<f64>,
    pub num_real: usize,
    pub num_generated: usize,
    pub k: usize,
}

impl MetricsReport {
    /// CSV header: fixed columns followed by `frechet_class_0..K-1`.
    pub fn csv_header(num_classes: usize) -> Vec<String> {
        let mut cols: Vec<String> = [
            "frechet",
            "mean_per_class_frechet",
            "precision",
            "recall",
            "conditional_accuracy",
            "num_real",
            "num_generated",
            "k",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        cols.extend((0..num_classes).map(|c| format!("frechet_class_{c}")));
        cols
    }

    /// One CSV row matching [`MetricsReport::csv_header`]; undefined values are empty.
    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut row = vec![
            self.frechet.to_string(),
            opt(self.mean_per_class_frechet),
            self.precision.to_string(),
            self.recall.to_string(),
            opt(self.conditional_accuracy),
            self.num_real.to_string(),
            self.num_generated.to_string(),
            self.k.to_string(),
        ];
        row.extend(self.per_class_frechet.iter().map(|v| opt(*v)));
        row
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_table(path, &Self::csv_header(self.per_class_frechet.len()), [self.csv_row()])
    }
}

/// Full report for generated samples against a real draw.
pub fn evaluate(real: &Dataset, gen: &[DenseVector], labels: Option<&[usize]>, spec: &MixtureSpec, k: usize) -> Result<MetricsReport> {
    let real_points: Vec<DenseVector> = real.rows().map(<[f64]>::to_vec).collect();
    let frechet = frechet_distance(&real_points, gen)?;
    let (precision, recall) = precision_recall(&real_points, gen, k)?;
    let (per_class, accuracy) = match labels {
        Some(labels) => (per_class_frechet(real, gen, labels)?, Some(conditional_accuracy(gen, labels, spec)?)),
        None => (Vec::new(), None),
    };
    Ok(MetricsReport {
        frechet,
        mean_per_class_frechet: mean_defined(&per_class),
        per_class_frechet: per_class,
        precision,
        recall,
        conditional_accuracy: accuracy,
        num_real: real_points.len(),
        num_generated: gen.len(),
        k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CrossingMode {
    /// Largest t after which entropy stays below the threshold.
    #[default]
    Sustained,
    /// Largest t at which entropy is below the threshold at all.
    FirstTouch,
}

impl CrossingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CrossingMode::Sustained => "sustained",
            CrossingMode::FirstTouch => "first_touch",
        }
    }
}

/// Entropy telemetry of one trajectory, ordered by decreasing `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTrace {
    pub sample_id: usize,
    pub points: Vec<(usize, f64)>,
}

impl From<&Trajectory> for EntropyTrace {
    fn from(tr: &Trajectory) -> Self {
        Self {
            sample_id: tr.sample_id,
            points: tr.records.iter().filter_map(|r| r.entropy.map(|h| (r.t, h))).collect(),
        }
    }
}

/// Crossing timestep of one trace, or `None` if it never crosses.
pub fn crossing_timestep(points: &[(usize, f64)], threshold: f64, mode: CrossingMode) -> Option<usize> {
    match mode {
        CrossingMode::FirstTouch => points.iter().find(|(_, h)| *h < threshold).map(|(t, _)| *t),
        CrossingMode::Sustained => {
            let run = points.iter().rev().take_while(|(_, h)| *h < threshold).count();
            (run > 0).then(|| points[points.len() - run].0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive lower edge.
    pub lo: f64,
    /// Exclusive upper edge.
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingSummary {
    pub num_trajectories: usize,
    pub num_crossed: usize,
    pub mean: Option<f64>,
    /// Population standard deviation of the crossing timesteps.
    pub std: Option<f64>,
    pub min: Option<usize>,
    pub max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanishingAnalysis {
    pub threshold_fraction: f64,
    pub threshold: f64,
    pub mode: CrossingMode,
    pub total_steps: usize,
    /// `(sample_id, crossing t)` per trajectory.
    pub crossings: Vec<(usize, Option<usize>)>,
    pub histogram: Vec<HistogramBin>,
    pub summary: CrossingSummary,
}

/// Extracts vanishing points against `threshold_fraction · max_entropy`
/// and histograms them over `bins` equal-width bins covering `[1, T]`.
///
/// `max_entropy` is `ln K` in whatever log base the entropies were
/// recorded in, so the result does not depend on that base.
pub fn vanishing_analysis(
    traces: &[EntropyTrace],
    threshold_fraction: f64,
    max_entropy: f64,
    mode: CrossingMode,
    bins: usize,
    total_steps: usize,
) -> Result<VanishingAnalysis> {
    if !(threshold_fraction > 0.0 && threshold_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold fraction must lie in (0, 1], got {threshold_fraction}"
        )));
    }
    if bins == 0 || total_steps == 0 {
        return Err(Error::InvalidArgument("bins and total steps must be positive".into()));
    }
    let threshold = threshold_fraction * max_entropy;
    let crossings: Vec<(usize, Option<usize>)> = traces
        .iter()
        .map(|tr| (tr.sample_id, crossing_timestep(&tr.points, threshold, mode)))
        .collect();
    let width = total_steps as f64 / bins as f64;
    let mut histogram: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: 1.0 + i as f64 * width,
            hi: 1.0 + (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    let crossed: Vec<usize> = crossings.iter().filter_map(|c| c.1).collect();
    for &t in &crossed {
        if t == 0 || t > total_steps {
            return Err(Error::TimestepOutOfRange { t, max: total_steps });
        }
        let idx = (((t - 1) as f64 / width) as usize).min(bins - 1);
        histogram[idx].count += 1;
    }
    let n = crossed.len() as f64;
    let mean = (!crossed.is_empty()).then(|| crossed.iter().sum::<usize>() as f64 / n);
    let std = mean.map(|m| (crossed.iter().map(|&t| (t as f64 - m).powi(2)).sum::<f64>() / n).sqrt());
    Ok(VanishingAnalysis {
        threshold_fraction,
        threshold,
        mode,
        total_steps,
        summary: CrossingSummary {
            num_trajectories: traces.len(),
            num_crossed: crossed.len(),
            mean,
            std,
            min: crossed.iter().min().copied(),
            max: crossed.iter().max().copied(),
        },
        crossings,
        histogram,
    })
}

impl VanishingAnalysis {
    /// Histogram CSV: `bin_lo,bin_hi,count`.
    pub fn write_histogram_csv(&self, path: &Path) -> Result<()> {
        let header = ["bin_lo", "bin_hi", "count"].map(String::from);
        let rows = self
            .histogram
            .iter()
            .map(|b| vec![b.lo.to_string(), b.hi.to_string(), b.count.to_string()]);
        write_table(path, &header, rows)
    }

    /// Per-trajectory CSV: `sample_id,crossing_t` (empty when never crossed).
    pub fn write_crossings_csv(&self, path: &Path) -> Result<()> {
        let header = ["sample_id", "crossing_t"].map(String::from);
        let rows = self.crossings.iter().map(|(id, t)| vec![id.to_string(), opt_cell(*t)]);
        write_table(path, &header, rows)
    }
}

/// Mean recorded entropy at timestep `t` across traces that recorded it.
pub fn mean_trace_entropy_at(traces: &[EntropyTrace], t: usize) -> Option<f64> {
    let values: Vec<f64> = traces
        .iter()
        .filter_map(|tr| tr.points.iter().find(|(s, _)| *s == t).map(|(_, h)| *h))
        .collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
