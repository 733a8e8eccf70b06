//! Base kernels and kernel-matrix assembly.
//!
//! `NtkRelu` is the infinite-width limit of `(1/m)·J Jᵀ` for the network in
//! [`crate::net`]: a ReLU MLP in standard parametrization with first-layer
//! weight variance `2/d`, hidden weight variance `2/m`, output weight variance
//! `ν/m` and hidden biases `β·N(0,1)`. With the arc-cosine closed forms
//!
//! ```text
//! Σ⁰(x,z) = (2/d)·xᵀz + β²
//! Σˡ      = (1/π)·√(ab)·(sin φ + (π−φ)·cos φ) + β²,   φ = arccos(c/√(ab))
//! Σ̇ˡ      = (π−φ)/π
//! ```
//!
//! (with `a, b, c` the entries of `Σˡ⁻¹` at `(x,x)`, `(z,z)`, `(x,z)`), the
//! limit is
//!
//! ```text
//! Θ = (Σᴸ − β²)/2 + (ν/4)·Σ_{l=2..L} (Σˡ⁻¹ − β²)·Π_{l'=l..L} Σ̇ˡ'
//! ```
//!
//! The first term comes from the output weights, the sum from the hidden
//! weight matrices. Gradients of the first layer and of all biases contribute
//! `O(1/m)` and vanish in the limit.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::angles;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix, SymMatrix};
use crate::math;

const SPHERE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum KernelSpec {
    /// `exp(−‖x−z‖/bandwidth)`
    Laplace { bandwidth: f64 },
    /// `exp(−‖x−z‖²/(2·bandwidth²))`
    Gaussian { bandwidth: f64 },
    /// Limit NTK of the ReLU network, see the module docs.
    NtkRelu {
        depth: usize,
        bias_scale: f64,
        last_layer_scale: f64,
    },
    /// Truncated Mercer series on the circle with basis
    /// `{1, √2·cos θ, √2·sin θ, …, √2·cos Rθ, √2·sin Rθ}`; `eigenvalues[0]`
    /// belongs to the constant, `eigenvalues[2k−1]`/`eigenvalues[2k]` to
    /// frequency `k`.
    MercerCircle { eigenvalues: Vec<f64> },
}

impl KernelSpec {
    /// Paired spectrum `λ₀ = 1`, `λ_cos k = λ_sin k = k^(−decay)` up to frequency `truncation`.
    pub fn mercer_circle_power(truncation: usize, decay: f64) -> Self {
        let mut eigenvalues = vec![1.0];
        for k in 1..=truncation {
            let lambda = math::powf(k as f64, -decay);
            eigenvalues.push(lambda);
            eigenvalues.push(lambda);
        }
        KernelSpec::MercerCircle { eigenvalues }
    }

    /// `k⁻⁴` pairs truncated at frequency 32.
    pub fn mercer_circle_default() -> Self {
        Self::mercer_circle_power(32, 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Laplace { bandwidth } | KernelSpec::Gaussian { bandwidth } => {
                if !(*bandwidth > 0.0 && bandwidth.is_finite()) {
                    return Err(Error::invalid("bandwidth", "must be positive and finite"));
                }
            }
            KernelSpec::NtkRelu {
                depth,
                bias_scale,
                last_layer_scale,
            } => {
                if *depth == 0 {
                    return Err(Error::invalid("depth", "must be at least 1"));
                }
                if !(*bias_scale >= 0.0 && bias_scale.is_finite()) {
                    return Err(Error::invalid("bias_scale", "must be nonnegative"));
                }
                if !(*last_layer_scale > 0.0 && last_layer_scale.is_finite()) {
                    return Err(Error::invalid("last_layer_scale", "must be positive"));
                }
            }
            KernelSpec::MercerCircle { eigenvalues } => {
                if eigenvalues.len() % 2 == 0 {
                    return Err(Error::invalid("eigenvalues", "length must be 2R+1"));
                }
                if eigenvalues.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
                    return Err(Error::invalid("eigenvalues", "must all be positive"));
                }
            }
        }
        Ok(())
    }

    /// Truncation frequency `R` of a Mercer circle kernel.
    pub fn truncation(&self) -> Option<usize> {
        match self {
            KernelSpec::MercerCircle { eigenvalues } => Some(eigenvalues.len() / 2),
            _ => None,
        }
    }

    fn sphere_only(&self) -> bool {
        matches!(
            self,
            KernelSpec::NtkRelu { .. } | KernelSpec::MercerCircle { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Normalization {
    None,
    /// Divide every entry by the number of points.
    ByN,
}

fn check_on_sphere(x: &[f64], index: usize) -> Result<()> {
    let r = norm(x);
    if (r - 1.0).abs() > SPHERE_TOLERANCE {
        return Err(Error::OffSphere { index, norm: r });
    }
    Ok(())
}

/// `k(x, z)`. Sphere-only kernels report the offending argument (0 for `x`,
/// 1 for `z`) when an input is off the unit sphere.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], z: &[f64]) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: z.len(),
        });
    }
    if spec.sphere_only() {
        check_on_sphere(x, 0)?;
        check_on_sphere(z, 1)?;
    }
    Ok(eval_unchecked(spec, x, z))
}

fn eval_unchecked(spec: &KernelSpec, x: &[f64], z: &[f64]) -> f64 {
    match spec {
        KernelSpec::Laplace { bandwidth } => math::exp(-distance(x, z) / bandwidth),
        KernelSpec::Gaussian { bandwidth } => {
            let d = distance(x, z);
            math::exp(-d * d / (2.0 * bandwidth * bandwidth))
        }
        KernelSpec::NtkRelu {
            depth,
            bias_scale,
            last_layer_scale,
        } => ntk_relu(x, z, *depth, *bias_scale, *last_layer_scale),
        KernelSpec::MercerCircle { eigenvalues } => {
            let tx = math::atan2(x[1], x[0]);
            let tz = math::atan2(z[1], z[0]);
            mercer_circle(eigenvalues, tx, tz)
        }
    }
}

fn distance(x: &[f64], z: &[f64]) -> f64 {
    // symmetric in (x, z) bit for bit: (a-b)² == (b-a)²
    math::sqrt(x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum())
}

fn mercer_circle(eigenvalues: &[f64], tx: f64, tz: f64) -> f64 {
    let mut acc = eigenvalues[0];
    for k in 1..=eigenvalues.len() / 2 {
        let kf = k as f64;
        let (cx, sx) = (math::cos(kf * tx), math::sin(kf * tx));
        let (cz, sz) = (math::cos(kf * tz), math::sin(kf * tz));
        acc += 2.0 * (eigenvalues[2 * k - 1] * cx * cz + eigenvalues[2 * k] * sx * sz);
    }
    acc
}

/// Arc-cosine layer map. Returns `(Σ without bias, Σ̇)`.
fn relu_layer(a: f64, b: f64, c: f64) -> (f64, f64) {
    let s = math::sqrt(a * b);
    if s == 0.0 {
        return (0.0, 0.5);
    }
    let cos_phi = (c / s).clamp(-1.0, 1.0);
    let phi = math::acos(cos_phi);
    let sin_phi = math::sqrt((1.0 - cos_phi * cos_phi).max(0.0));
    let sigma = s * (sin_phi + (math::PI - phi) * cos_phi) / math::PI;
    (sigma, (math::PI - phi) / math::PI)
}

fn ntk_relu(x: &[f64], z: &[f64], depth: usize, beta: f64, nu: f64) -> f64 {
    let b2 = beta * beta;
    let scale = 2.0 / x.len() as f64;
    let mut a = scale * dot(x, x) + b2;
    let mut b = scale * dot(z, z) + b2;
    // symmetrise the cross term so Θ(x,z) == Θ(z,x) exactly
    let mut c = scale * 0.5 * (dot(x, z) + dot(z, x)) + b2;

    // cov[l] = Σˡ (cross entries), deriv[l] = Σ̇ˡ
    let mut cov = Vec::with_capacity(depth + 1);
    let mut deriv = Vec::with_capacity(depth + 1);
    cov.push(c);
    deriv.push(0.0);
    for _ in 1..=depth {
        let (sigma, sigma_dot) = relu_layer(a, b, c);
        // on the diagonal the arc-cosine map returns its input
        a += b2;
        b += b2;
        c = sigma + b2;
        cov.push(c);
        deriv.push(sigma_dot);
    }

    let mut theta = 0.5 * (cov[depth] - b2);
    let mut tail = 1.0;
    for l in (2..=depth).rev() {
        tail *= deriv[l];
        theta += 0.25 * nu * (cov[l - 1] - b2) * tail;
    }
    theta
}

/// `K_ij = k(xᵢ, xⱼ)`, optionally divided by `n`.
pub fn kernel_matrix(
    spec: &KernelSpec,
    points: &Matrix,
    normalization: Normalization,
) -> Result<SymMatrix> {
    spec.validate()?;
    let n = points.rows();
    if n == 0 {
        return Err(Error::invalid("points", "need at least one point"));
    }
    if spec.sphere_only() {
        for i in 0..n {
            check_on_sphere(points.row(i), i).map_err(|e| Error::KernelPair {
                row: i,
                col: i,
                source: alloc::boxed::Box::new(e),
            })?;
        }
    }
    let factor = match normalization {
        Normalization::None => 1.0,
        Normalization::ByN => 1.0 / n as f64,
    };
    Ok(SymMatrix::from_fn(n, |i, j| {
        factor * eval_unchecked(spec, points.row(i), points.row(j))
    }))
}

/// Rectangular block `K(A, B)` with the same normalization convention
/// (`factor` is applied verbatim).
pub fn cross_kernel(spec: &KernelSpec, a: &Matrix, b: &Matrix, factor: f64) -> Result<Matrix> {
    spec.validate()?;
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            expected: a.cols(),
            found: b.cols(),
        });
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            out[(i, j)] = factor
                * kernel_eval(spec, a.row(i), b.row(j)).map_err(|e| Error::KernelPair {
                    row: i,
                    col: j,
                    source: alloc::boxed::Box::new(e),
                })?;
        }
    }
    Ok(out)
}

/// Evaluations of the circle basis functions at angle `theta`.
pub fn mercer_basis(truncation: usize, theta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * truncation + 1);
    out.push(1.0);
    for k in 1..=truncation {
        let kf = k as f64;
        out.push(math::sqrt(2.0) * math::cos(kf * theta));
        out.push(math::sqrt(2.0) * math::sin(kf * theta));
    }
    out
}

/// `n × (2R+1)` matrix whose column `k` is `Φ_k` at every point, scaled by `1/√n`.
pub fn mercer_feature_matrix(truncation: usize, points: &Matrix) -> Result<Matrix> {
    for i in 0..points.rows() {
        if points.cols() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: points.cols(),
            });
        }
        check_on_sphere(points.row(i), i)?;
    }
    let n = points.rows();
    let scale = 1.0 / math::sqrt(n as f64);
    let thetas = angles(points)?;
    let width = 2 * truncation + 1;
    let mut out = Matrix::zeros(n, width);
    for (i, &t) in thetas.iter().enumerate() {
        for (dst, v) in out.row_mut(i).iter_mut().zip(mercer_basis(truncation, t)) {
            *dst = scale * v;
        }
    }
    Ok(out)
}

/// `Φ·diag(weights)·Φᵀ` for a feature matrix from [`mercer_feature_matrix`];
/// with `weights = g(λ)` this is the exact `1/n`-normalised MSK matrix.
pub fn feature_kernel(features: &Matrix, weights: &[f64]) -> Result<SymMatrix> {
    if weights.len() != features.cols() {
        return Err(Error::DimensionMismatch {
            expected: features.cols(),
            found: weights.len(),
        });
    }
    Ok(SymMatrix::from_fn(features.rows(), |i, j| {
        features
            .row(i)
            .iter()
            .zip(features.row(j))
            .zip(weights)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }))
}
