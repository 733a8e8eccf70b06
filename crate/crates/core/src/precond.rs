//! Spectral preconditioners and preconditioned gradient descent.
//!
//! `S = I − Σᵢ cᵢ vᵢvᵢᵀ` with `cᵢ = 1 − g(λᵢ)/λᵢ` over the top `k`
//! eigenpairs of a kernel matrix, so `K·S` has eigenvalues
//! `g(λ₁), …, g(λ_k), λ_{k+1}, …, λ_n` on the same eigenvectors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, eigh, norm, Matrix, SpectralDecomposition, SymMatrix};
use crate::math;
use crate::msk::SpectrumMap;
use crate::net::{ForwardCache, MlpState};
use crate::rng::{seeded, uniform};

#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    n: usize,
    /// Row `i` is `vᵢ`.
    vectors: Matrix,
    coefficients: Vec<f64>,
    source_spectrum: Vec<f64>,
}

impl Preconditioner {
    pub fn identity(n: usize) -> Self {
        Preconditioner {
            n,
            vectors: Matrix::zeros(0, n),
            coefficients: Vec::new(),
            source_spectrum: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// `g(λᵢ)/λᵢ` for the modified directions.
    pub fn ratios(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| 1.0 - c).collect()
    }

    pub fn source_spectrum(&self) -> &[f64] {
        &self.source_spectrum
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    fn with_ratios(&self, ratios: impl Fn(f64) -> f64) -> Preconditioner {
        Preconditioner {
            coefficients: self.ratios().into_iter().map(|r| 1.0 - ratios(r)).collect(),
            ..self.clone()
        }
    }

    /// `S^{1/2}`, sharing the eigenvectors.
    pub fn sqrt(&self) -> Preconditioner {
        self.with_ratios(math::sqrt)
    }

    /// `S⁻¹`, inverting the ratios on the modified directions.
    pub fn inverse(&self) -> Preconditioner {
        self.with_ratios(|r| 1.0 / r)
    }

    /// `S·r` in `O(nk)`.
    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: r.len(),
            });
        }
        let mut out = r.to_vec();
        for (i, &c) in self.coefficients.iter().enumerate() {
            let v = self.vectors.row(i);
            axpy(-c * dot(v, r), v, &mut out);
        }
        Ok(out)
    }

    pub fn dense(&self) -> SymMatrix {
        let n = self.n;
        let mut m = Matrix::identity(n);
        for (i, &c) in self.coefficients.iter().enumerate() {
            let v = self.vectors.row(i);
            for a in 0..n {
                axpy(-c * v[a], v, m.row_mut(a));
            }
        }
        SymMatrix::from_matrix(m).expect("finite by construction")
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.ratios().into_iter().fold(
            if self.k() < self.n {
                1.0
            } else {
                f64::INFINITY
            },
            f64::min,
        )
    }
}

/// Preconditioner over the top `k < n` eigenpairs.
pub fn build_preconditioner(
    decomp: &SpectralDecomposition,
    g: &SpectrumMap,
    k: usize,
) -> Result<Preconditioner> {
    if k >= decomp.len() {
        return Err(Error::invalid(
            "k",
            "must be smaller than the number of points",
        ));
    }
    build(decomp, g, k, true)
}

/// Variant that modifies every direction, `k = n`.
pub fn build_full_preconditioner(
    decomp: &SpectralDecomposition,
    g: &SpectrumMap,
) -> Result<Preconditioner> {
    build(decomp, g, decomp.len(), false)
}

fn build(
    decomp: &SpectralDecomposition,
    g: &SpectrumMap,
    k: usize,
    needs_tail: bool,
) -> Result<Preconditioner> {
    let n = decomp.len();
    let values = decomp.values();
    let floor = decomp.default_floor();
    let needed = if needs_tail { k + 1 } else { k };
    if let Some(&bad) = values[..needed].iter().find(|&&l| l <= floor) {
        return Err(Error::IllConditioned {
            min_eigenvalue: bad,
        });
    }
    let mapped = g.apply(values, floor)?;
    let mut vectors = Matrix::zeros(k, n);
    let mut coefficients = Vec::with_capacity(k);
    for i in 0..k {
        if !(mapped[i] > 0.0) {
            return Err(Error::InvalidSpectrumMap {
                eigenvalue: values[i],
                value: mapped[i],
            });
        }
        coefficients.push(1.0 - mapped[i] / values[i]);
        vectors.row_mut(i).copy_from_slice(decomp.vector(i));
    }
    Ok(Preconditioner {
        n,
        vectors,
        coefficients,
        source_spectrum: values[..needed.min(n)].to_vec(),
    })
}

/// Eigenvalues of `K·S` in eigenvector order: `g(λ₁), …, g(λ_k), λ_{k+1}, …`.
pub fn ks_spectrum(decomp: &SpectralDecomposition, g: &SpectrumMap, k: usize) -> Result<Vec<f64>> {
    let s = if k == decomp.len() {
        build_full_preconditioner(decomp, g)?
    } else {
        build_preconditioner(decomp, g, k)?
    };
    let mut out = decomp.values().to_vec();
    for (v, r) in out.iter_mut().zip(s.ratios()) {
        *v *= r;
    }
    Ok(out)
}

/// `2 / (λ_min + λ_max)`.
pub fn max_stable_lr(spectrum: &[f64]) -> Result<f64> {
    if spectrum.is_empty() {
        return Err(Error::invalid("spectrum", "must not be empty"));
    }
    if let Some(&bad) = spectrum.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::IllConditioned {
            min_eigenvalue: bad,
        });
    }
    let max = spectrum.iter().copied().fold(f64::MIN, f64::max);
    let min = spectrum.iter().copied().fold(f64::MAX, f64::min);
    Ok(2.0 / (min + max))
}

/// Predicted `‖r_t‖` for `t = 0..=steps` under `r_t = (I − η₀KS)ᵗ r₀`.
pub fn linear_dynamics(
    spectrum: &[f64],
    projections: &[f64],
    eta0: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    if spectrum.len() != projections.len() {
        return Err(Error::DimensionMismatch {
            expected: spectrum.len(),
            found: projections.len(),
        });
    }
    let factors: Vec<f64> = spectrum.iter().map(|l| 1.0 - eta0 * l).collect();
    let mut current = projections.to_vec();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(norm(&current));
    for _ in 0..steps {
        for (c, f) in current.iter_mut().zip(&factors) {
            *c *= f;
        }
        out.push(norm(&current));
    }
    Ok(out)
}

/// How `S` is refreshed during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Recompute {
    /// Rebuild from the empirical NTK every `period` iterations.
    pub period: usize,
    pub g: SpectrumMap,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainOptions {
    /// Directions (rows) whose residual projections are recorded.
    pub track: Option<Matrix>,
    pub recompute: Option<Recompute>,
    /// Mini-batch size for the stochastic variant; `None` is full batch.
    pub batch_size: Option<usize>,
    pub batch_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub residual_norms: Vec<f64>,
    /// `projections[t][j]` is `v̂ⱼᵀ r_t` for tracked direction `j`.
    pub projections: Vec<Vec<f64>>,
    pub tracked: usize,
    pub iterations_to_threshold: Option<usize>,
    pub eta0: f64,
    pub epsilon: f64,
}

impl TrainTrace {
    pub fn iterations(&self) -> usize {
        self.residual_norms.len().saturating_sub(1)
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_norms.last().copied().unwrap_or(f64::NAN)
    }
}

pub const DIVERGENCE_FACTOR: f64 = 1e3;

/// Preconditioned gradient descent `w ← w − (η₀/m)·Jᵀ S r` until
/// `‖r‖ ≤ ε` or `max_iter` steps.
pub fn pgd_train(
    net: &MlpState,
    x: &Matrix,
    y: &[f64],
    s: &Preconditioner,
    eta0: f64,
    epsilon: f64,
    max_iter: usize,
    options: &TrainOptions,
) -> Result<(MlpState, TrainTrace)> {
    if y.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            found: y.len(),
        });
    }
    if s.n() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            found: s.n(),
        });
    }
    if !(eta0 > 0.0 && eta0.is_finite()) {
        return Err(Error::invalid("eta0", "must be positive"));
    }
    if let Some(t) = &options.track {
        if t.cols() != x.rows() {
            return Err(Error::DimensionMismatch {
                expected: x.rows(),
                found: t.cols(),
            });
        }
    }
    let n = x.rows();
    let lr = eta0 / net.config().width as f64;
    let mut state = net.clone();
    let mut s = s.clone();
    let mut trace = TrainTrace {
        residual_norms: Vec::new(),
        projections: Vec::new(),
        tracked: options.track.as_ref().map_or(0, |t| t.rows()),
        iterations_to_threshold: None,
        eta0,
        epsilon,
    };
    let mut batches = options
        .batch_size
        .map(|b| BatchSchedule::new(n, b, options.batch_seed));
    let mut r0 = None;
    for t in 0..=max_iter {
        let cache = state.forward_cached(x)?;
        let r = residual(&cache, y);
        let rn = norm(&r);
        trace.residual_norms.push(rn);
        if let Some(track) = &options.track {
            trace.projections.push(track.matvec(&r)?);
        }
        let start = *r0.get_or_insert(rn);
        if !rn.is_finite() || rn > DIVERGENCE_FACTOR * start.max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged {
                iteration: t,
                residual: rn,
            });
        }
        if rn <= epsilon {
            trace.iterations_to_threshold = Some(t);
            break;
        }
        if t == max_iter {
            break;
        }
        let back = state.backward(&cache);
        if let Some(rc) = &options.recompute {
            if t > 0 && rc.period > 0 && t % rc.period == 0 {
                let k_t = state.ntk_from_cache(&cache, &back);
                s = build_preconditioner(&eigh(&k_t)?, &rc.g, rc.k)?;
            }
        }
        let mut coefs = s.apply(&r)?;
        if let Some(schedule) = batches.as_mut() {
            schedule.mask(&mut coefs);
        }
        state.descend(&cache, &back, &coefs, lr)?;
    }
    Ok((state, trace))
}

fn residual(cache: &ForwardCache, y: &[f64]) -> Vec<f64> {
    cache.output().iter().zip(y).map(|(f, t)| f - t).collect()
}

/// Fixed reshuffled epochs: each epoch visits every sample once.
struct BatchSchedule {
    order: Vec<usize>,
    batch: usize,
    cursor: usize,
    rng: crate::rng::Rng,
}

impl BatchSchedule {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = BatchSchedule {
            order: (0..n).collect(),
            batch: batch.clamp(1, n.max(1)),
            cursor: n,
            rng: seeded(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        for i in (1..self.order.len()).rev() {
            let j = ((uniform(&mut self.rng) * (i + 1) as f64) as usize).min(i);
            self.order.swap(i, j);
        }
        self.cursor = 0;
    }

    fn mask(&mut self, coefs: &mut [f64]) {
        let n = coefs.len();
        if self.cursor + self.batch > n {
            self.reshuffle();
        }
        let mut keep = vec![false; n];
        for &i in &self.order[self.cursor..self.cursor + self.batch] {
            keep[i] = true;
        }
        self.cursor += self.batch;
        let scale = n as f64 / self.batch as f64;
        for (c, k) in coefs.iter_mut().zip(keep) {
            *c = if k { *c * scale } else { 0.0 };
        }
    }
}

/// `½‖S^{1/2}(f(X) − y)‖²`.
pub fn preconditioned_loss(
    net: &MlpState,
    x: &Matrix,
    y: &[f64],
    s: &Preconditioner,
) -> Result<f64> {
    let r = residual(&net.forward_cached(x)?, y);
    let half = s.sqrt().apply(&r)?;
    Ok(0.5 * dot(&half, &half))
}

/// `∇_w L_S = Jᵀ S r`.
pub fn preconditioned_loss_grad(
    net: &MlpState,
    x: &Matrix,
    y: &[f64],
    s: &Preconditioner,
) -> Result<Vec<f64>> {
    let cache = net.forward_cached(x)?;
    let r = residual(&cache, y);
    let coefs = s.apply(&r)?;
    let back = net.backward(&cache);
    net.weighted_gradient(&cache, &back, &coefs)
}

/// First `t` with `|v̂ᵀ r_t| ≤ δ·|v̂ᵀ r₀|` for tracked direction `direction`.
pub fn iterations_to_learn(
    trace: &TrainTrace,
    direction: usize,
    delta: f64,
) -> Result<Option<usize>> {
    if direction >= trace.tracked {
        return Err(Error::UntrackedDirection(direction));
    }
    let start = trace.projections[0][direction].abs();
    Ok(trace
        .projections
        .iter()
        .position(|p| p[direction].abs() <= delta * start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_sphere;
    use crate::linalg::frobenius_distance;
    use crate::net::MlpConfig;
    use crate::rng::normal_vec;

    fn random_pd(n: usize, seed: u64) -> SymMatrix {
        let mut rng = seeded(seed);
        let a = Matrix::from_vec(n, n, normal_vec(&mut rng, n * n)).unwrap();
        a.gram().scaled(1.0 / n as f64).add_diagonal(1e-3)
    }

    fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    #[test]
    fn trivial_preconditioners() {
        let d = eigh(&random_pd(10, 1)).unwrap();
        let s = build_preconditioner(&d, &SpectrumMap::Power { exponent: 0.5 }, 0).unwrap();
        assert_eq!(s.dense(), SymMatrix::identity(10));
        let s = build_preconditioner(&d, &SpectrumMap::Identity, 5).unwrap();
        assert!(s.coefficients().iter().all(|&c| c == 0.0));
        assert!(build_preconditioner(&d, &SpectrumMap::Identity, 10).is_err());
        let r: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(Preconditioner::identity(10).apply(&r).unwrap(), r);
        assert!(s.apply(&[1.0]).is_err());
    }

    #[test]
    fn dense_spectrum_and_action() {
        let d = eigh(&random_pd(32, 2)).unwrap();
        let g = SpectrumMap::Power { exponent: 0.5 };
        let s = build_preconditioner(&d, &g, 4).unwrap();
        let dense = s.dense();
        let mut expected: Vec<f64> = vec![1.0; 28];
        expected.extend(s.ratios());
        let got = eigh(&dense).unwrap();
        for (a, b) in got.values().iter().zip(sorted_desc(expected)) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!((got.values().last().unwrap() - s.min_eigenvalue()).abs() <= 1e-12);

        let r = normal_vec(&mut seeded(3), 32);
        let fast = s.apply(&r).unwrap();
        let slow = dense.matvec(&r).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12);
        }
        let v1 = d.vector(1).to_vec();
        let sv = s.apply(&v1).unwrap();
        for (a, b) in sv.iter().zip(&v1) {
            assert!((a - s.ratios()[1] * b).abs() <= 1e-12);
        }
    }

    #[test]
    fn shift_over_all_directions() {
        let k = random_pd(12, 4);
        let d = eigh(&k).unwrap();
        let s = build_full_preconditioner(&d, &SpectrumMap::Shift { shift: 0.3 }).unwrap();
        let ks = k.as_matrix().matmul(s.dense().as_matrix()).unwrap();
        let target = k.add_diagonal(0.3);
        assert!(frobenius_distance(&SymMatrix::from_matrix(ks).unwrap(), &target).unwrap() <= 1e-8);
    }

    #[test]
    fn ks_spectrum_matches_dense_product() {
        let maps = [
            SpectrumMap::Identity,
            SpectrumMap::FlattenTopK { k: 5 },
            SpectrumMap::Shift { shift: 0.1 },
            SpectrumMap::Power { exponent: 0.5 },
        ];
        let k = random_pd(16, 5);
        let d = eigh(&k).unwrap();
        for g in &maps {
            for kk in [1, 5, 10] {
                let list = ks_spectrum(&d, g, kk).unwrap();
                let s = build_preconditioner(&d, g, kk).unwrap();
                let half = s.sqrt().dense();
                // S^{1/2} K S^{1/2} is similar to K·S and symmetric
                let sym = half
                    .as_matrix()
                    .matmul(&k.as_matrix().matmul(half.as_matrix()).unwrap())
                    .unwrap();
                let dense = eigh(&SymMatrix::from_matrix(sym).unwrap()).unwrap();
                for (a, b) in dense.values().iter().zip(sorted_desc(list.clone())) {
                    assert!((a - b).abs() <= 1e-9 * b.abs(), "{g:?} k={kk}: {a} vs {b}");
                }
            }
        }
        let flat = ks_spectrum(&d, &SpectrumMap::FlattenTopK { k: 5 }, 5).unwrap();
        assert!(flat[..6]
            .iter()
            .all(|&v| (v - d.values()[5]).abs() <= 1e-15));
        assert_eq!(
            ks_spectrum(&d, &SpectrumMap::Identity, 3).unwrap(),
            d.values().to_vec()
        );
    }

    #[test]
    fn sqrt_and_inverse() {
        let d = eigh(&random_pd(10, 6)).unwrap();
        let s = build_preconditioner(&d, &SpectrumMap::Power { exponent: 0.5 }, 4).unwrap();
        let sq = s.sqrt().dense();
        let prod = sq.as_matrix().matmul(sq.as_matrix()).unwrap();
        assert!(
            frobenius_distance(&SymMatrix::from_matrix(prod).unwrap(), &s.dense()).unwrap()
                <= 1e-12
        );
        let inv = s.inverse().dense();
        let prod = inv.as_matrix().matmul(s.dense().as_matrix()).unwrap();
        assert!(
            frobenius_distance(
                &SymMatrix::from_matrix(prod).unwrap(),
                &SymMatrix::identity(10)
            )
            .unwrap()
                <= 1e-12
        );
    }

    #[test]
    fn stable_learning_rate() {
        assert_eq!(max_stable_lr(&[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(max_stable_lr(&[3.0, 1.0]).unwrap(), 0.5);
        assert!(max_stable_lr(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn linear_dynamics_cases() {
        assert_eq!(
            linear_dynamics(&[2.0, 1.0], &[3.0, 4.0], 0.0, 3).unwrap(),
            vec![5.0; 4]
        );
        let out = linear_dynamics(&[0.5, 0.1], &[1.0, 0.0], 0.4, 4).unwrap();
        for (t, v) in out.iter().enumerate() {
            assert!((v - 0.8f64.powi(t as i32)).abs() <= 1e-15);
        }
        // dense matrix power oracle
        let k = random_pd(16, 7);
        let d = eigh(&k).unwrap();
        let g = SpectrumMap::FlattenTopK { k: 4 };
        let s = build_preconditioner(&d, &g, 4).unwrap();
        let spectrum = ks_spectrum(&d, &g, 4).unwrap();
        let eta = 0.9 * max_stable_lr(&spectrum).unwrap();
        let y = normal_vec(&mut seeded(8), 16);
        let predicted = linear_dynamics(&spectrum, &d.project(&y).unwrap(), eta, 30).unwrap();
        let mut r = y.clone();
        for (t, p) in predicted.iter().enumerate() {
            assert!((norm(&r) - p).abs() <= 1e-10, "t={t}");
            let ksr = k.matvec(&s.apply(&r).unwrap()).unwrap();
            axpy(-eta, &ksr, &mut r);
        }
    }

    fn desk(width: usize) -> (MlpState, Matrix, Vec<f64>) {
        let cfg = MlpConfig::relu(2, 2, width, 3);
        let net = MlpState::init(cfg).unwrap();
        let x = sample_sphere(2, 8, 4).unwrap().points;
        let y: Vec<f64> = (0..8).map(|i| 0.3 * (i as f64).sin()).collect();
        (net, x, y)
    }

    #[test]
    fn identity_preconditioner_is_plain_gradient_descent() {
        let (net, x, y) = desk(64);
        let (trained, _) = pgd_train(
            &net,
            &x,
            &y,
            &Preconditioner::identity(8),
            0.5,
            0.0,
            10,
            &TrainOptions::default(),
        )
        .unwrap();
        let lr = 0.5 / 64.0;
        let mut w = net.flatten();
        for _ in 0..10 {
            let state = MlpState::unflatten(net.config().clone(), &w).unwrap();
            let f = state.forward(&x).unwrap();
            let r: Vec<f64> = f.iter().zip(&y).map(|(a, b)| a - b).collect();
            let jac = state.jacobian(&x, usize::MAX).unwrap();
            let grad = jac.tr_matvec(&r).unwrap();
            axpy(-lr, &grad, &mut w);
        }
        let diff = crate::linalg::sub(&trained.flatten(), &w);
        assert!(norm(&diff) <= 1e-12 * norm(&w));
    }

    #[test]
    fn zero_residual_exits_immediately() {
        let (net, x, _) = desk(32);
        let y = net.forward(&x).unwrap();
        let (_, trace) = pgd_train(
            &net,
            &x,
            &y,
            &Preconditioner::identity(8),
            0.5,
            1e-12,
            100,
            &TrainOptions::default(),
        )
        .unwrap();
        assert_eq!(trace.iterations_to_threshold, Some(0));
        assert_eq!(trace.iterations(), 0);
    }

    #[test]
    fn excessive_step_diverges() {
        let (net, x, y) = desk(512);
        let d = eigh(&net.empirical_ntk(&x).unwrap()).unwrap();
        let g = SpectrumMap::FlattenTopK { k: 2 };
        let s = build_preconditioner(&d, &g, 2).unwrap();
        let bound = max_stable_lr(&ks_spectrum(&d, &g, 2).unwrap()).unwrap();
        let (_, ok) = pgd_train(
            &net,
            &x,
            &y,
            &s,
            0.9 * bound,
            0.0,
            500,
            &TrainOptions::default(),
        )
        .unwrap();
        assert!(ok.final_residual() < 0.5 * ok.residual_norms[0]);
        let bad = pgd_train(
            &net,
            &x,
            &y,
            &s,
            2.5 * bound,
            0.0,
            500,
            &TrainOptions::default(),
        );
        assert!(matches!(bad, Err(Error::Diverged { .. })));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let (net, x, y) = desk(64);
        let d = eigh(&net.empirical_ntk(&x).unwrap()).unwrap();
        let s = build_preconditioner(&d, &SpectrumMap::Power { exponent: 0.5 }, 3).unwrap();
        let grad = preconditioned_loss_grad(&net, &x, &y, &s).unwrap();
        let p = net.flatten();
        let h = 1e-5;
        let mut rng = seeded(1);
        for _ in 0..20 {
            let i = (uniform(&mut rng) * p.len() as f64) as usize;
            let mut a = p.clone();
            a[i] += h;
            let mut b = p.clone();
            b[i] -= h;
            let la = preconditioned_loss(
                &MlpState::unflatten(net.config().clone(), &a).unwrap(),
                &x,
                &y,
                &s,
            )
            .unwrap();
            let lb = preconditioned_loss(
                &MlpState::unflatten(net.config().clone(), &b).unwrap(),
                &x,
                &y,
                &s,
            )
            .unwrap();
            let fd = (la - lb) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-4 * fd.abs().max(grad[i].abs()).max(1e-6),
                "{i}: {fd} vs {}",
                grad[i]
            );
        }
        let zero = preconditioned_loss_grad(&net, &x, &net.forward(&x).unwrap(), &s).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    fn synthetic_trace(spectrum: &[f64], eta: f64, steps: usize) -> TrainTrace {
        let projections: Vec<Vec<f64>> = (0..=steps)
            .map(|t| {
                spectrum
                    .iter()
                    .map(|l| (1.0 - eta * l).powi(t as i32))
                    .collect()
            })
            .collect();
        TrainTrace {
            residual_norms: projections.iter().map(|p| norm(p)).collect(),
            projections,
            tracked: spectrum.len(),
            iterations_to_threshold: None,
            eta0: eta,
            epsilon: 0.0,
        }
    }

    #[test]
    fn learning_times() {
        let spectrum = [1.0, 0.2, 0.05];
        let eta = 0.5;
        let trace = synthetic_trace(&spectrum, eta, 2000);
        assert_eq!(iterations_to_learn(&trace, 0, 1.0).unwrap(), Some(0));
        for (i, &l) in spectrum.iter().enumerate() {
            let delta: f64 = 1e-2;
            let expected = (-delta.ln() / (eta * l)).ceil() as i64;
            let got = iterations_to_learn(&trace, i, delta).unwrap().unwrap() as i64;
            assert!(
                (got - expected).abs() <= 1 + expected / 5,
                "{i}: {got} vs {expected}"
            );
        }
        assert!(matches!(
            iterations_to_learn(&trace, 3, 0.5),
            Err(Error::UntrackedDirection(3))
        ));

        // flattened: the first k+1 directions share one rate
        let flat = [0.05, 0.05, 0.05, 0.01];
        let trace = synthetic_trace(&flat, 1.0, 2000);
        let counts: Vec<usize> = (0..3)
            .map(|i| iterations_to_learn(&trace, i, 1e-2).unwrap().unwrap())
            .collect();
        let max = *counts.iter().max().unwrap() as f64;
        let min = *counts.iter().min().unwrap() as f64;
        assert!(max / min <= 2.0);
    }

    #[test]
    fn mini_batches_cover_every_sample() {
        let mut s = BatchSchedule::new(10, 3, 0);
        let mut seen = vec![0; 10];
        for _ in 0..3 {
            let mut c = vec![1.0; 10];
            s.mask(&mut c);
            for (i, v) in c.iter().enumerate() {
                if *v != 0.0 {
                    seen[i] += 1;
                }
            }
        }
        assert_eq!(seen.iter().sum::<usize>(), 9);
        assert!(seen.iter().all(|&v| v <= 1));
    }
}
