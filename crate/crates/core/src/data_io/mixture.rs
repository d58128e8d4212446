//! Synthetic class-conditional Gaussian mixtures.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_io::table::{read_table, write_table};
use crate::error::{Error, Result};
use crate::numerics::{squared_distance, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    /// Shared isotropic standard deviation.
    pub std: f64,
    pub per_class: usize,
    pub seed: u64,
}

impl Default for MixtureSpec {
    /// Eight classes on a circle of radius 6, std 0.3, 1000 points each.
    fn default() -> Self {
        Self::circle(8, 6.0, 0.3, 1000, 0)
    }
}

impl MixtureSpec {
    /// `k` means equally spaced on a circle in the plane.
    pub fn circle(k: usize, radius: f64, std: f64, per_class: usize, seed: u64) -> Self {
        let means = (0..k)
            .map(|i| {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                vec![radius * angle.cos(), radius * angle.sin()]
            })
            .collect();
        Self {
            means,
            std,
            per_class,
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes() < 2 {
            return Err(Error::InvalidArgument("mixture needs at least two components".into()));
        }
        let d = self.dim();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidArgument("mixture means must share a nonzero dimension".into()));
        }
        if !(self.std > 0.0) {
            return Err(Error::InvalidArgument(format!("mixture std must be positive, got {}", self.std)));
        }
        for i in 0..self.means.len() {
            for j in 0..i {
                if squared_distance(&self.means[i], &self.means[j]) == 0.0 {
                    return Err(Error::InvalidArgument(format!("mixture means {j} and {i} coincide")));
                }
            }
        }
        Ok(())
    }

    /// Index of the mean nearest to `x` (lower index wins ties).
    pub fn nearest_component(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, m) in self.means.iter().enumerate() {
            let d = squared_distance(m, x);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Draws the dataset from this spec's own seed on the given stream.
    pub fn generate(&self, stream_index: u64) -> Result<Dataset> {
        make_mixture(self, &mut RngStream::new(self.seed, stream_index))
    }
}

/// Labeled point set stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    num_classes: usize,
    points: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, num_classes: usize, points: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || points.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * labels.len(),
                found: points.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        Ok(Self {
            dim,
            num_classes,
            points,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut points = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            points.extend_from_slice(self.point(i));
            labels.push(self.labels[i]);
        }
        Self {
            dim: self.dim,
            num_classes: self.num_classes,
            points,
            labels,
        }
    }

    /// Points carrying `label`, row-major.
    pub fn class_points(&self, label: usize) -> Vec<f64> {
        self.rows()
            .zip(&self.labels)
            .filter(|(_, &l)| l == label)
            .flat_map(|(p, _)| p.iter().copied())
            .collect()
    }
}

/// `per_class` points from N(mean_k, std²·I) for each class, class-major.
pub fn make_mixture(spec: &MixtureSpec, rng: &mut RngStream) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.dim();
    let k = spec.num_classes();
    let mut points = Vec::with_capacity(k * spec.per_class * d);
    let mut labels = Vec::with_capacity(k * spec.per_class);
    for (label, mean) in spec.means.iter().enumerate() {
        for _ in 0..spec.per_class {
            for &m in mean {
                points.push(m + spec.std * rng.standard_normal());
            }
            labels.push(label);
        }
    }
    Dataset::new(d, k, points, labels)
}

/// Dataset CSV: `label,x0,x1,…`.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut header = vec!["label".to_string()];
    header.extend((0..data.dim()).map(|i| format!("x{i}")));
    let rows = data.rows().zip(data.labels()).map(|(p, l)| {
        let mut row = vec![l.to_string()];
        row.extend(p.iter().map(f64::to_string));
        row
    });
    write_table(path, &header, rows)
}

/// Reads a dataset CSV with labels in `0..num_classes`.
pub fn read_dataset_csv(path: &Path, num_classes: usize) -> Result<Dataset> {
    let table = read_table(path, &["label"])?;
    let d = table.header.len() - 1;
    if d == 0 {
        return Err(table.error(1, "no coordinate columns"));
    }
    let mut points = Vec::with_capacity(table.rows.len() * d);
    let mut labels = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let label: usize = table.parse(row, 0)?;
        if label >= num_classes {
            return Err(table.error(row.line, format!("label {label} out of range for {num_classes} classes")));
        }
        labels.push(label);
        for c in 0..d {
            points.push(table.parse(row, c + 1)?);
        }
    }
    Dataset::new(d, num_classes, points, labels)
}
