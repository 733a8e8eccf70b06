//! Dense real linear algebra for the moderate sizes used throughout the crate
//! (a few thousand rows at most).
//!
//! The symmetric eigensolver is the Householder tridiagonalisation followed by
//! implicit QL iterations (the EISPACK `tred2`/`tql2` pair). Results are sorted
//! in descending order and every eigenvector is sign-normalised so that its
//! entry of largest magnitude is nonnegative, which makes decompositions
//! reproducible bit for bit for a fixed input.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::math;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cols, x.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ · x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.rows, x.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, self.row(i), &mut out);
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_len(self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    /// `self · selfᵀ`, exactly symmetric.
    pub fn gram(&self) -> SymMatrix {
        SymMatrix::from_fn(self.rows, |i, j| dot(self.row(i), self.row(j)))
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Square matrix whose stored entries are exactly symmetric and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Builds the matrix from its lower triangle; `f` is only called for `j <= i`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    /// Symmetrises `(A + Aᵀ)/2` and rejects non-finite entries.
    pub fn from_matrix(a: Matrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::DimensionMismatch {
                expected: a.rows,
                found: a.cols,
            });
        }
        let n = a.rows;
        for i in 0..n {
            for j in 0..n {
                if !a[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(SymMatrix::from_fn(n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)])))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n))
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        SymMatrix::from_fn(n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    pub fn n(&self) -> usize {
        self.0.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.matvec(x)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.frobenius_norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    pub fn add_diagonal(&self, shift: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..self.n() {
            m[(i, i)] += shift;
        }
        SymMatrix(m)
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        let mut m = self.0.clone();
        m.scale(s);
        SymMatrix(m)
    }

    /// Principal submatrix on `indices`.
    pub fn submatrix(&self, indices: &[usize]) -> SymMatrix {
        SymMatrix::from_fn(indices.len(), |i, j| self.get(indices[i], indices[j]))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four independent accumulators let the compiler vectorise; the
    // summation order is fixed, so results stay deterministic
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(x: &[f64]) -> f64 {
    math::sqrt(dot(x, x))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// Eigenvalues in descending order with matching orthonormal eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    values: Vec<f64>,
    /// Row `i` holds the eigenvector paired with `values[i]`.
    basis: Matrix,
}

impl SpectralDecomposition {
    /// Assembles a decomposition from eigenpairs that are already sorted and
    /// orthonormal. No checks beyond dimensions are performed.
    pub fn from_parts(values: Vec<f64>, basis_rows: Matrix) -> Result<Self> {
        check_len(values.len(), basis_rows.rows())?;
        check_len(values.len(), basis_rows.cols())?;
        Ok(SpectralDecomposition {
            values,
            basis: basis_rows,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.basis.row(i)
    }

    /// Eigenvectors as rows (`Vᵀ`).
    pub fn basis_rows(&self) -> &Matrix {
        &self.basis
    }

    /// The column-orthonormal eigenvector matrix `V`.
    pub fn vectors(&self) -> Matrix {
        self.basis.transpose()
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// Default floor `1e-12 · λ_max` used by consumers that divide by eigenvalues.
    pub fn default_floor(&self) -> f64 {
        DEFAULT_RELATIVE_FLOOR * self.max_value().abs()
    }

    /// Eigenvalues raised to at least `floor`.
    pub fn clamp_floor(&self, floor: f64) -> Vec<f64> {
        self.values.iter().map(|&v| v.max(floor)).collect()
    }

    /// Projections `vᵢᵀ x` onto every eigenvector.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.basis.matvec(x)
    }

    /// `V · diag(values) · Vᵀ`.
    pub fn compose(&self, values: &[f64]) -> Result<SymMatrix> {
        check_len(self.len(), values.len())?;
        let n = self.len();
        let mut m = Matrix::zeros(n, n);
        for (k, &lambda) in values.iter().enumerate() {
            if lambda == 0.0 {
                continue;
            }
            let v = self.basis.row(k);
            for i in 0..n {
                let s = lambda * v[i];
                if s != 0.0 {
                    axpy(s, v, m.row_mut(i));
                }
            }
        }
        SymMatrix::from_matrix(m)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.compose(&self.values)
            .expect("decomposition holds matching dimensions")
    }
}

pub const DEFAULT_RELATIVE_FLOOR: f64 = 1e-12;

const QL_MAX_SWEEPS: usize = 60;

/// Full eigendecomposition of a symmetric matrix.
pub fn eigh(a: &SymMatrix) -> Result<SpectralDecomposition> {
    let n = a.n();
    for i in 0..n {
        for j in 0..n {
            if !a.get(i, j).is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    if n == 0 {
        return Ok(SpectralDecomposition {
            values: Vec::new(),
            basis: Matrix::zeros(0, 0),
        });
    }
    let mut v = a.as_matrix().clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut v, &mut d, &mut e);
    // QL rotations act on pairs of eigenvectors; keep them as rows
    let mut z = v.transpose();
    tridiagonal_ql(&mut z, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]).then(i.cmp(&j)));
    let mut basis = Matrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(d[src]);
        let row = basis.row_mut(dst);
        row.copy_from_slice(z.row(src));
        normalize_sign(row);
    }
    Ok(SpectralDecomposition { values, basis })
}

fn normalize_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Householder reduction to tridiagonal form. On return `v` holds the
/// accumulated orthogonal transform (columns), `d` the diagonal and `e` the
/// subdiagonal in `e[1..]`.
fn tridiagonalize(v: &mut Matrix, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = math::sqrt(h);
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in j + 1..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n.saturating_sub(1) {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    v[(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal `(d, e)`. `z` holds eigenvectors as rows.
fn tridiagonal_ql(z: &mut Matrix, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > QL_MAX_SWEEPS {
                    return Err(Error::NoConvergence { n });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = math::hypot(p, 1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = math::hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    rotate_rows(z, i, c, s);
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[inline]
fn rotate_rows(z: &mut Matrix, i: usize, c: f64, s: f64) {
    let cols = z.cols;
    let (head, tail) = z.data.split_at_mut((i + 1) * cols);
    let zi = &mut head[i * cols..];
    let zi1 = &mut tail[..cols];
    for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
        let h = *b;
        *b = s * *a + c * h;
        *a = c * *a - s * h;
    }
}

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Factors `a + shift·I`; returns `None` when a pivot is not positive.
    pub fn factor(a: &SymMatrix, shift: f64) -> Option<Self> {
        let n = a.n();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let lj = l.row(j);
            let mut diag = a.get(j, j) + shift - dot(&lj[..j], &lj[..j]);
            if !(diag > 0.0) || !diag.is_finite() {
                return None;
            }
            diag = math::sqrt(diag);
            l[(j, j)] = diag;
            for i in j + 1..n {
                let s = a.get(i, j) - dot(&l.row(i)[..j], &l.row(j)[..j]);
                l[(i, j)] = s / diag;
            }
        }
        Some(Cholesky { l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        let mut y = b.to_vec();
        for i in 0..n {
            let row = self.l.row(i);
            y[i] = (y[i] - dot(&row[..i], &y[..i])) / row[i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }
}

/// Solves `(A + ridge·I) x = b` for symmetric positive definite `A + ridge·I`.
pub fn solve_spd(a: &SymMatrix, b: &[f64], ridge: f64) -> Result<Vec<f64>> {
    check_len(a.n(), b.len())?;
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge", "must be nonnegative"));
    }
    let Some(chol) = Cholesky::factor(a, ridge) else {
        return Err(ill_conditioned(a, ridge));
    };
    let mut x = chol.solve(b);
    // one step of iterative refinement
    let residual = spd_residual(a, ridge, &x, b);
    let correction = chol.solve(&residual);
    axpy(1.0, &correction, &mut x);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ill_conditioned(a, ridge));
    }
    Ok(x)
}

fn spd_residual(a: &SymMatrix, ridge: f64, x: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.n())
        .map(|i| b[i] - dot(a.row(i), x) - ridge * x[i])
        .collect()
}

fn ill_conditioned(a: &SymMatrix, ridge: f64) -> Error {
    let min_eigenvalue = eigh(a)
        .ok()
        .and_then(|d| d.values().last().copied())
        .map_or(f64::NAN, |v| v + ridge);
    Error::IllConditioned { min_eigenvalue }
}

/// Least-squares solve through the eigendecomposition, discarding directions
/// whose eigenvalue is at or below `relative_floor · λ_max`. Returns the
/// solution and the number of discarded directions.
pub fn pseudo_solve(a: &SymMatrix, b: &[f64], relative_floor: f64) -> Result<(Vec<f64>, usize)> {
    check_len(a.n(), b.len())?;
    let decomp = eigh(a)?;
    let floor = relative_floor * decomp.max_value().abs();
    let mut x = vec![0.0; a.n()];
    let mut dropped = 0;
    for (k, &lambda) in decomp.values().iter().enumerate() {
        if lambda <= floor {
            dropped += 1;
            continue;
        }
        let v = decomp.vector(k);
        axpy(dot(v, b) / lambda, v, &mut x);
    }
    Ok((x, dropped))
}

/// `‖A − B‖_F`.
pub fn frobenius_distance(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    check_len(a.n(), b.n())?;
    let sum: f64 = a
        .as_matrix()
        .as_slice()
        .iter()
        .zip(b.as_matrix().as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(math::sqrt(sum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, seeded};

    fn random_symmetric(n: usize, seed: u64) -> SymMatrix {
        let mut rng = seeded(seed);
        let raw = normal_vec(&mut rng, n * n);
        SymMatrix::from_matrix(Matrix::from_vec(n, n, raw).unwrap()).unwrap()
    }

    fn random_orthogonal(n: usize, seed: u64) -> Matrix {
        eigh(&random_symmetric(n, seed)).unwrap().vectors()
    }

    fn orthogonality_error(d: &SpectralDecomposition) -> f64 {
        let b = d.basis_rows();
        let g = b.gram();
        frobenius_distance(&g, &SymMatrix::identity(d.len())).unwrap()
    }

    #[test]
    fn identity_2x2() {
        let d = eigh(&SymMatrix::identity(2)).unwrap();
        assert_eq!(d.values(), &[1.0, 1.0]);
        assert!(orthogonality_error(&d) < 1e-15);
        for k in 0..2 {
            let v = d.vector(k);
            let big = v
                .iter()
                .copied()
                .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(big >= 0.0);
        }
    }

    #[test]
    fn two_by_two_analytic() {
        let a = SymMatrix::from_fn(2, |i, j| if i == j { 2.0 } else { 1.0 });
        let d = eigh(&a).unwrap();
        assert!((d.values()[0] - 3.0).abs() < 1e-14);
        assert!((d.values()[1] - 1.0).abs() < 1e-14);
        let r = core::f64::consts::FRAC_1_SQRT_2;
        let v0 = d.vector(0);
        assert!((v0[0] - r).abs() < 1e-14 && (v0[1] - r).abs() < 1e-14);
        let v1 = d.vector(1);
        // [1,-1]/√2 up to the sign rule (ties resolve to the first entry)
        assert!((v1[0] - r).abs() < 1e-14 && (v1[1] + r).abs() < 1e-14);
    }

    #[test]
    fn random_64_reconstructs() {
        let a = random_symmetric(64, 0);
        let d = eigh(&a).unwrap();
        let err = frobenius_distance(&d.reconstruct(), &a).unwrap();
        assert!(
            err <= 1e-10 * a.frobenius_norm(),
            "reconstruction error {err}"
        );
        assert!(orthogonality_error(&d) <= 1e-8 * 64.0);
        assert!(d.values().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = Matrix::identity(3);
        m[(1, 2)] = f64::NAN;
        let a = SymMatrix(m);
        assert_eq!(eigh(&a), Err(Error::NonFinite { row: 1, col: 2 }));
    }

    #[test]
    fn empty_and_scalar() {
        assert!(eigh(&SymMatrix::identity(0)).unwrap().is_empty());
        let d = eigh(&SymMatrix::diagonal(&[-4.0])).unwrap();
        assert_eq!(d.values(), &[-4.0]);
        assert_eq!(d.vector(0), &[1.0]);
    }

    #[test]
    fn recovers_planted_spectrum() {
        let n = 40;
        let q = random_orthogonal(n, 3);
        let planted: Vec<f64> = (0..n).map(|i| 10.0 / (1.0 + i as f64)).collect();
        let qt = SpectralDecomposition::from_parts(planted.clone(), q.transpose()).unwrap();
        let a = qt.reconstruct();
        let d = eigh(&a).unwrap();
        for k in 0..n {
            assert!((d.values()[k] - planted[k]).abs() <= 1e-9 * planted[k]);
            let overlap = dot(d.vector(k), qt.vector(k)).abs();
            assert!(overlap >= 1.0 - 1e-8, "eigenvector {k} overlap {overlap}");
        }
    }

    #[test]
    fn deterministic() {
        let a = random_symmetric(30, 9);
        assert_eq!(eigh(&a).unwrap(), eigh(&a).unwrap());
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let x = solve_spd(&SymMatrix::identity(2), &[3.0, 4.0], 0.0).unwrap();
        assert_eq!(x, vec![3.0, 4.0]);
        let x = solve_spd(&SymMatrix::diagonal(&[2.0, 4.0]), &[3.0, 5.0], 1.0).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn solve_random_spd() {
        let n = 32;
        let mut rng = seeded(5);
        let b_mat = Matrix::from_vec(n, n, normal_vec(&mut rng, n * n)).unwrap();
        let a = b_mat.gram().scaled(1.0 / n as f64);
        let b = normal_vec(&mut rng, n);
        let x = solve_spd(&a, &b, 1e-3).unwrap();
        let r = spd_residual(&a, 1e-3, &x, &b);
        assert!(norm(&r) <= 1e-8 * norm(&b));
    }

    #[test]
    fn singular_reports_smallest_eigenvalue() {
        let a = SymMatrix::from_fn(2, |_, _| 1.0);
        match solve_spd(&a, &[1.0, 0.0], 0.0) {
            Err(Error::IllConditioned { min_eigenvalue }) => assert!(min_eigenvalue.abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        assert!(solve_spd(&a, &[1.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn pseudo_solve_drops_null_space() {
        let a = SymMatrix::from_fn(2, |_, _| 1.0);
        let (x, dropped) = pseudo_solve(&a, &[2.0, 2.0], 1e-12).unwrap();
        assert_eq!(dropped, 1);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frobenius_cases() {
        let i2 = SymMatrix::identity(2);
        assert_eq!(frobenius_distance(&i2, &i2).unwrap(), 0.0);
        let z = SymMatrix::diagonal(&[0.0, 0.0]);
        assert!((frobenius_distance(&i2, &z).unwrap() - core::f64::consts::SQRT_2).abs() < 1e-15);
        assert!(matches!(
            frobenius_distance(&i2, &SymMatrix::identity(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn frobenius_matches_double_loop() {
        let a = random_symmetric(16, 1);
        let b = random_symmetric(16, 2);
        let mut sum = 0.0;
        for i in 0..16 {
            for j in 0..16 {
                let d = a.get(i, j) - b.get(i, j);
                sum += d * d;
            }
        }
        assert!((frobenius_distance(&a, &b).unwrap() - sum.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn builder_symmetrizes() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![4.0, 3.0]]).unwrap();
        let s = SymMatrix::from_matrix(m).unwrap();
        assert_eq!(s.get(0, 1), 3.0);
        assert_eq!(s.get(1, 0), 3.0);
    }
}
