//! Symmetric arrowhead eigensolver.
//!
//! Decomposes `[[diag(d), z], [zᵀ, ρ]]` in `O(n²)` by deflation, a secular
//! equation solve per root and the Gu–Eisenstat recomputation of `z`, which
//! keeps the eigenvectors orthogonal even when roots cluster. Used to update
//! a known decomposition by one bordering row and column.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SpectralDecomposition};
use crate::math;

const MAX_ITERATIONS: usize = 200;

/// One root of the secular equation stored as `origin + offset` so that
/// distances to nearby poles keep full relative accuracy.
#[derive(Debug, Clone, Copy)]
struct Root {
    origin: f64,
    offset: f64,
}

impl Root {
    fn value(&self) -> f64 {
        self.origin + self.offset
    }

    /// `pole − θ`
    fn gap(&self, pole: f64) -> f64 {
        (pole - self.origin) - self.offset
    }
}

struct Secular<'a> {
    d: &'a [f64],
    z: &'a [f64],
    rho: f64,
}

impl Secular<'_> {
    /// `F(θ) = θ − ρ − Σ zᵢ²/(θ − dᵢ)` at `θ = origin + τ`, its derivative,
    /// and a magnitude for the stopping test.
    fn eval(&self, origin: f64, tau: f64) -> (f64, f64, f64) {
        let mut f = (origin - self.rho) + tau;
        let mut fp = 1.0;
        let mut size = origin.abs() + tau.abs() + self.rho.abs();
        for (&di, &zi) in self.d.iter().zip(self.z) {
            let t = zi / (tau - (di - origin));
            f -= zi * t;
            fp += t * t;
            size += (zi * t).abs();
        }
        (f, fp, size)
    }

    fn solve(&self, origin: f64, mut lo: f64, mut hi: f64) -> Result<Root> {
        let n = self.d.len() as f64;
        let mut tau = 0.5 * (lo + hi);
        for _ in 0..MAX_ITERATIONS {
            let (f, fp, size) = self.eval(origin, tau);
            if !f.is_finite() {
                return Err(Error::NoConvergence {
                    n: self.d.len() + 1,
                });
            }
            if f.abs() <= 4.0 * f64::EPSILON * n * size {
                return Ok(Root {
                    origin,
                    offset: tau,
                });
            }
            if f > 0.0 {
                hi = tau;
            } else {
                lo = tau;
            }
            let mut next = tau - f / fp;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if next == tau || hi - lo <= 2.0 * f64::EPSILON * (origin.abs() + tau.abs()) {
                return Ok(Root {
                    origin,
                    offset: next,
                });
            }
            tau = next;
        }
        Err(Error::NoConvergence {
            n: self.d.len() + 1,
        })
    }
}

/// Eigendecomposition of the `(n+1)×(n+1)` arrowhead matrix with diagonal
/// `d`, border `z` and corner `ρ`. The last coordinate of every returned
/// eigenvector belongs to the border row.
pub fn arrowhead_eigh(d: &[f64], z: &[f64], rho: f64) -> Result<SpectralDecomposition> {
    let n = d.len();
    if z.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: z.len(),
        });
    }
    for (i, (&a, &b)) in d.iter().zip(z).enumerate() {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::NonFinite { row: i, col: n });
        }
    }
    if !rho.is_finite() {
        return Err(Error::NonFinite { row: n, col: n });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    let ds: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut zs: Vec<f64> = order.iter().map(|&i| z[i]).collect();

    let znorm = math::sqrt(zs.iter().map(|v| v * v).sum());
    let scale = ds.iter().fold(rho.abs().max(znorm), |m, v| m.max(v.abs()));
    let tol = 8.0 * f64::EPSILON * scale;

    // (sorted index, eigenvalue) pairs split off before the secular solve
    let mut deflated: Vec<usize> = Vec::new();
    let mut rotations: Vec<(usize, usize, f64, f64)> = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    for i in 0..n {
        if zs[i].abs() <= tol {
            zs[i] = 0.0;
            deflated.push(i);
            continue;
        }
        if let Some(&prev) = active.last() {
            if ds[prev] - ds[i] <= tol {
                let h = math::hypot(zs[prev], zs[i]);
                let c = zs[i] / h;
                let s = zs[prev] / h;
                zs[prev] = 0.0;
                zs[i] = h;
                rotations.push((prev, i, c, s));
                active.pop();
                deflated.push(prev);
            }
        }
        active.push(i);
    }

    let size = n + 1;
    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::with_capacity(size);
    for &i in &deflated {
        let mut v = vec![0.0; size];
        v[i] = 1.0;
        pairs.push((ds[i], v));
    }

    let da: Vec<f64> = active.iter().map(|&i| ds[i]).collect();
    let za: Vec<f64> = active.iter().map(|&i| zs[i]).collect();
    let r = da.len();
    if r == 0 {
        let mut v = vec![0.0; size];
        v[n] = 1.0;
        pairs.push((rho, v));
    } else {
        let secular = Secular {
            d: &da,
            z: &za,
            rho,
        };
        let za_norm = math::sqrt(za.iter().map(|v| v * v).sum());
        let mut roots = Vec::with_capacity(r + 1);
        let top = da[0].max(rho) + za_norm;
        roots.push(secular.solve(da[0], 0.0, (top - da[0]) * (1.0 + 4.0 * f64::EPSILON) + tol)?);
        for k in 1..r {
            let (upper, lower) = (da[k - 1], da[k]);
            let width = upper - lower;
            let (f_mid, _, _) = secular.eval(lower, 0.5 * width);
            let root = if f_mid >= 0.0 {
                secular.solve(lower, 0.0, 0.5 * width)?
            } else {
                secular.solve(upper, -0.5 * width, 0.0)?
            };
            roots.push(root);
        }
        let last = da[r - 1];
        let bottom = last.min(rho) - za_norm;
        roots.push(secular.solve(
            last,
            (bottom - last) * (1.0 + 4.0 * f64::EPSILON) - tol,
            0.0,
        )?);

        // recompute the border so the computed roots are exact eigenvalues
        let mut zhat = vec![0.0; r];
        for i in 0..r {
            let mut prod = -roots[i].gap(da[i]) * roots[i + 1].gap(da[i]);
            for j in 0..i {
                prod *= roots[j].gap(da[i]) / (da[i] - da[j]);
            }
            for j in i + 1..r {
                prod *= roots[j + 1].gap(da[i]) / (da[i] - da[j]);
            }
            zhat[i] = math::sqrt(prod.max(0.0)).copysign(za[i]);
        }

        for root in &roots {
            let mut v = vec![0.0; size];
            let mut sq = 1.0;
            for (i, &pos) in active.iter().enumerate() {
                let w = -zhat[i] / root.gap(da[i]);
                v[pos] = w;
                sq += w * w;
            }
            v[n] = 1.0;
            let inv = 1.0 / math::sqrt(sq);
            v.iter_mut().for_each(|x| *x *= inv);
            pairs.push((root.value(), v));
        }
    }

    for &(i, j, c, s) in rotations.iter().rev() {
        for (_, v) in pairs.iter_mut() {
            let (yi, yj) = (v[i], v[j]);
            v[i] = c * yi + s * yj;
            v[j] = -s * yi + c * yj;
        }
    }

    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut values = Vec::with_capacity(size);
    let mut basis = Matrix::zeros(size, size);
    for (k, (value, v)) in pairs.into_iter().enumerate() {
        values.push(value);
        let row = basis.row_mut(k);
        for (sorted, &orig) in order.iter().enumerate() {
            row[orig] = v[sorted];
        }
        row[n] = v[n];
        normalize_sign(row);
    }
    SpectralDecomposition::from_parts(values, basis)
}

fn normalize_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
