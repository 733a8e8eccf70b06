//! Datasets and the seeded generators used by the experiments.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::math;
use crate::rng::{self, Rng};

/// Points (one per row), labels, and where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Matrix,
    pub labels: Vec<f64>,
    pub generator: String,
    pub seed: u64,
}

impl Dataset {
    pub fn new(
        points: Matrix,
        labels: Vec<f64>,
        generator: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        if labels.len() != points.rows() {
            return Err(Error::DimensionMismatch {
                expected: points.rows(),
                found: labels.len(),
            });
        }
        if let Some(i) = points.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: i / points.cols().max(1),
                col: i % points.cols().max(1),
            });
        }
        Ok(Dataset {
            points,
            labels,
            generator: generator.into(),
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: labels.len(),
            });
        }
        self.labels = labels;
        Ok(self)
    }
}

/// Draws `n` points uniformly on `S^{d-1}` (normalised Gaussians) with zero labels.
pub fn sample_sphere(d: usize, n: usize, seed: u64) -> Result<Dataset> {
    if d < 2 {
        return Err(Error::invalid("d", "sphere dimension must be at least 2"));
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    let mut rng = rng::seeded(seed);
    let points = sphere_points(&mut rng, d, n);
    Dataset::new(points, alloc::vec![0.0; n], "sphere", seed)
}

pub(crate) fn sphere_points(rng: &mut Rng, d: usize, n: usize) -> Matrix {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let mut row = rng::normal_vec(rng, d);
        let mut r = norm(&row);
        while r == 0.0 {
            row = rng::normal_vec(rng, d);
            r = norm(&row);
        }
        data.extend(row.iter().map(|v| v / r));
    }
    Matrix::from_vec(n, d, data).expect("n*d entries")
}

/// `n` equispaced points on the unit circle starting at angle 0.
pub fn circle_grid(n: usize) -> Matrix {
    Matrix::from_fn(n, 2, |i, j| {
        let theta = 2.0 * math::PI * i as f64 / n as f64;
        if j == 0 {
            math::cos(theta)
        } else {
            math::sin(theta)
        }
    })
}

/// Angle of every row of a 2-column point matrix.
pub fn angles(points: &Matrix) -> Result<Vec<f64>> {
    if points.cols() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: points.cols(),
        });
    }
    Ok((0..points.rows())
        .map(|i| math::atan2(points[(i, 1)], points[(i, 0)]))
        .collect())
}

/// `yᵢ = sin(k·θᵢ)` for circle points `(cos θ, sin θ)`.
pub fn fourier_labels(points: &Matrix, frequency: u32) -> Result<Vec<f64>> {
    Ok(angles(points)?
        .into_iter()
        .map(|t| math::sin(frequency as f64 * t))
        .collect())
}

/// i.i.d. standard normal labels.
pub fn gaussian_labels(n: usize, seed: u64) -> Vec<f64> {
    rng::normal_vec(&mut rng::seeded(seed), n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    #[test]
    fn sphere_rows_have_unit_norm() {
        let ds = sample_sphere(3, 200, 1).unwrap();
        for i in 0..ds.len() {
            assert!((norm(ds.points.row(i)) - 1.0).abs() <= 1e-12);
        }
        assert_eq!(ds, sample_sphere(3, 200, 1).unwrap());
        assert_ne!(ds, sample_sphere(3, 200, 2).unwrap());
    }

    #[test]
    fn sphere_rejects_bad_sizes() {
        assert!(sample_sphere(1, 4, 0).is_err());
        assert!(sample_sphere(3, 0, 0).is_err());
    }

    #[test]
    fn sphere_sum_concentrates() {
        let n = 10_000;
        let ds = sample_sphere(3, n, 11).unwrap();
        let mut s = [0.0; 3];
        for i in 0..n {
            for (acc, v) in s.iter_mut().zip(ds.points.row(i)) {
                *acc += v;
            }
        }
        // E‖mean‖² = 1/n for zero-mean unit vectors
        let mean = norm(&s) / n as f64;
        assert!(mean <= 3.0 / (n as f64).sqrt(), "mean norm {mean}");
    }

    #[test]
    fn fourier_label_values() {
        let pts = Matrix::from_rows(&[alloc::vec![0.0, 1.0], alloc::vec![1.0, 0.0]]).unwrap();
        assert_eq!(fourier_labels(&pts, 0).unwrap(), alloc::vec![0.0, 0.0]);
        let y = fourier_labels(&pts, 1).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-15);
        assert!(fourier_labels(&Matrix::zeros(2, 3), 1).is_err());
    }

    #[test]
    fn fourier_labels_nearly_orthogonal() {
        let ds = sample_sphere(2, 512, 3).unwrap();
        let n = ds.len() as f64;
        for k in 1..6u32 {
            let yk = fourier_labels(&ds.points, k).unwrap();
            for j in 1..6u32 {
                if j != k {
                    let yj = fourier_labels(&ds.points, j).unwrap();
                    assert!(dot(&yk, &yj).abs() / n <= 0.1);
                }
            }
        }
    }
}
