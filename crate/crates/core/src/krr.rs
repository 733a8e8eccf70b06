//! Kernel ridge regression, its preconditioned variant and the linearised
//! network it describes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{cross_kernel, kernel_matrix, KernelSpec, Normalization};
use crate::linalg::{
    axpy, dot, norm, pseudo_solve, solve_spd, Matrix, SymMatrix, DEFAULT_RELATIVE_FLOOR,
};
use crate::net::{MlpConfig, MlpState};
use crate::precond::{pgd_train, Preconditioner, TrainOptions, DIVERGENCE_FACTOR};

#[derive(Debug, Clone, PartialEq)]
pub struct KrrModel {
    pub alpha: Vec<f64>,
    pub train: Matrix,
    pub spec: KernelSpec,
    pub gamma: f64,
    /// Directions discarded by the eigenvalue floor (only for `γ = 0`).
    pub dropped: usize,
}

impl KrrModel {
    /// `k_xᵀα` with `[k_x]ᵢ = k(x, xᵢ)/n`.
    pub fn predict(&self, points: &Matrix) -> Result<Vec<f64>> {
        let factor = 1.0 / self.train.rows() as f64;
        cross_kernel(&self.spec, points, &self.train, factor)?.matvec(&self.alpha)
    }
}

/// `α = (K + γI)⁻¹y` for the `1/n`-normalised kernel matrix. `γ = 0` goes
/// through a floored eigendecomposition solve.
pub fn krr_fit(spec: &KernelSpec, train: &Matrix, labels: &[f64], gamma: f64) -> Result<KrrModel> {
    if labels.len() != train.rows() {
        return Err(Error::DimensionMismatch {
            expected: train.rows(),
            found: labels.len(),
        });
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma", "must be nonnegative"));
    }
    let k = kernel_matrix(spec, train, Normalization::ByN)?;
    let (alpha, dropped) = if gamma > 0.0 {
        (solve_spd(&k, labels, gamma)?, 0)
    } else {
        pseudo_solve(&k, labels, DEFAULT_RELATIVE_FLOOR)?
    };
    Ok(KrrModel {
        alpha,
        train: train.clone(),
        spec: spec.clone(),
        gamma,
        dropped,
    })
}

/// `α* = (K + γS⁻¹)⁻¹y`, the minimiser of `½‖S^{1/2}(Kα − y)‖² + (γ/2)·αᵀKα`
/// written in dual form.
pub fn pkrr_closed_form(
    k: &SymMatrix,
    s: &Preconditioner,
    gamma: f64,
    y: &[f64],
) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma", "must be positive"));
    }
    if k.n() != s.n() || y.len() != k.n() {
        return Err(Error::DimensionMismatch {
            expected: k.n(),
            found: if k.n() != s.n() { s.n() } else { y.len() },
        });
    }
    let inv = s.inverse().dense();
    let system = SymMatrix::from_fn(k.n(), |i, j| k.get(i, j) + gamma * inv.get(i, j));
    solve_spd(&system, y, 0.0)
}

/// Gradient of `L_S + (γ/2)‖w‖²` in the dual variables, `S(Kα − y) + γα`,
/// evaluated for `w = Φᵀα`; zero exactly at [`pkrr_closed_form`].
pub fn pkrr_stationarity(
    k: &SymMatrix,
    s: &Preconditioner,
    gamma: f64,
    y: &[f64],
    alpha: &[f64],
) -> Result<Vec<f64>> {
    let ka = k.matvec(alpha)?;
    let r: Vec<f64> = ka.iter().zip(y).map(|(a, b)| a - b).collect();
    let mut out = s.apply(&r)?;
    axpy(gamma, alpha, &mut out);
    Ok(out)
}

/// `T` steps of `w ← w − η(Φᵀ S(Φw − y) + γw)` from `w = 0` on the linear
/// model `h(x, w) = ⟨w, φ(x)⟩`.
pub fn linear_model_pgd(
    features: &Matrix,
    y: &[f64],
    s: &Preconditioner,
    gamma: f64,
    eta: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    if y.len() != features.rows() || s.n() != features.rows() {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            found: y.len(),
        });
    }
    let limit = DIVERGENCE_FACTOR * norm(y).max(f64::MIN_POSITIVE);
    let mut w = vec![0.0; features.cols()];
    for t in 0..steps {
        let pred = features.matvec(&w)?;
        let r: Vec<f64> = pred.iter().zip(y).map(|(a, b)| a - b).collect();
        let rn = norm(&r);
        if !rn.is_finite() || rn > limit {
            return Err(Error::Diverged {
                iteration: t,
                residual: rn,
            });
        }
        let grad = features.tr_matvec(&s.apply(&r)?)?;
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= eta * (gi + gamma * *wi);
        }
    }
    Ok(w)
}

/// The same iteration carried out on `α` with `w = Φᵀα`, where
/// `gram = ΦΦᵀ`. Returns `α_T`; predictions are `⟨φ(x), Φᵀα⟩`.
pub fn linear_model_pgd_dual(
    gram: &SymMatrix,
    y: &[f64],
    s: &Preconditioner,
    gamma: f64,
    eta: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    if y.len() != gram.n() || s.n() != gram.n() {
        return Err(Error::DimensionMismatch {
            expected: gram.n(),
            found: y.len(),
        });
    }
    let limit = DIVERGENCE_FACTOR * norm(y).max(f64::MIN_POSITIVE);
    let mut a = vec![0.0; gram.n()];
    for t in 0..steps {
        let pred = gram.matvec(&a)?;
        let r: Vec<f64> = pred.iter().zip(y).map(|(p, b)| p - b).collect();
        let rn = norm(&r);
        if !rn.is_finite() || rn > limit {
            return Err(Error::Diverged {
                iteration: t,
                residual: rn,
            });
        }
        let sr = s.apply(&r)?;
        for (ai, si) in a.iter_mut().zip(&sr) {
            *ai = (1.0 - eta * gamma) * *ai - eta * si;
        }
    }
    Ok(a)
}

/// Network and linearised-model predictions at held-out points.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub network: Vec<f64>,
    pub linear: Vec<f64>,
    pub gaps: Vec<f64>,
}

impl ConsistencyReport {
    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(0.0, f64::max)
    }
}

pub const MAX_FEATURE_WIDTH: usize = 4096;
pub const MAX_FEATURE_POINTS: usize = 32;

/// Trains the network for `T` PGD steps from `w₀` and the linear model on
/// `φ(x) = ∇f(x, w₀)` with the same `S`, `γ = 0` and `η = η₀/m`, then
/// compares both at `test`.
pub fn consistency_check(
    config: &MlpConfig,
    train: &Matrix,
    y: &[f64],
    test: &Matrix,
    s: &Preconditioner,
    eta0: f64,
    steps: usize,
) -> Result<ConsistencyReport> {
    if config.width > MAX_FEATURE_WIDTH {
        return Err(Error::invalid(
            "width",
            "feature maps are limited to width 4096",
        ));
    }
    if train.rows() > MAX_FEATURE_POINTS {
        return Err(Error::invalid(
            "train",
            "feature maps are limited to 32 points",
        ));
    }
    if test.cols() != train.cols() {
        return Err(Error::DimensionMismatch {
            expected: train.cols(),
            found: test.cols(),
        });
    }
    let net = MlpState::init(config.clone())?;
    let n = train.rows();
    let mut joint = Matrix::zeros(n + test.rows(), train.cols());
    for i in 0..n {
        joint.row_mut(i).copy_from_slice(train.row(i));
    }
    for i in 0..test.rows() {
        joint.row_mut(n + i).copy_from_slice(test.row(i));
    }
    // (1/m)·⟨φ(a), φ(b)⟩ for every pair of train and test points
    let k = net.empirical_ntk(&joint)?;
    let train_idx: Vec<usize> = (0..n).collect();
    let k_train = k.submatrix(&train_idx);
    // with c = m·α the dual iteration reads c ← c − η₀S(K₀c − y)
    let c = linear_model_pgd_dual(&k_train, y, s, 0.0, eta0, steps)?;
    let linear: Vec<f64> = (0..test.rows())
        .map(|t| dot(&k.row(n + t)[..n], &c))
        .collect();

    let (trained, _) = pgd_train(
        &net,
        train,
        y,
        s,
        eta0,
        0.0,
        steps,
        &TrainOptions::default(),
    )?;
    let network = trained.forward(test)?;
    let gaps = network
        .iter()
        .zip(&linear)
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(ConsistencyReport {
        network,
        linear,
        gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_sphere;
    use crate::linalg::eigh;
    use crate::msk::SpectrumMap;
    use crate::precond::build_preconditioner;
    use crate::rng::{normal_vec, seeded};

    fn features(n: usize, p: usize, seed: u64) -> Matrix {
        let mut rng = seeded(seed);
        Matrix::from_vec(n, p, normal_vec(&mut rng, n * p))
            .unwrap()
            .tap_scale(1.0 / (p as f64).sqrt())
    }

    trait TapScale {
        fn tap_scale(self, s: f64) -> Self;
    }

    impl TapScale for Matrix {
        fn tap_scale(mut self, s: f64) -> Self {
            self.scale(s);
            self
        }
    }

    #[test]
    fn interpolates_single_point() {
        let spec = KernelSpec::Laplace { bandwidth: 1.0 };
        let x = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let model = krr_fit(&spec, &x, &[0.7], 0.0).unwrap();
        assert!((model.predict(&x).unwrap()[0] - 0.7).abs() <= 1e-15);
    }

    #[test]
    fn huge_ridge_shrinks_to_zero() {
        let spec = KernelSpec::Laplace { bandwidth: 1.0 };
        let data = sample_sphere(2, 10, 1).unwrap();
        let y = normal_vec(&mut seeded(2), 10);
        let model = krr_fit(&spec, &data.points, &y, 1e12).unwrap();
        assert!(model
            .predict(&data.points)
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn matches_direct_solve() {
        let spec = KernelSpec::Laplace { bandwidth: 1.0 };
        let data = sample_sphere(2, 20, 3).unwrap();
        let y = normal_vec(&mut seeded(4), 20);
        let model = krr_fit(&spec, &data.points, &y, 1e-3).unwrap();
        // oracle: Gaussian elimination on the dense system
        let n = 20;
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n)
                    .map(|j| {
                        crate::kernels::kernel_eval(&spec, data.points.row(i), data.points.row(j))
                            .unwrap()
                            / n as f64
                    })
                    .collect();
                row[i] += 1e-3;
                row.push(y[i]);
                row
            })
            .collect();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
                .unwrap();
            a.swap(c, p);
            for r in 0..n {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=n {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        let alpha: Vec<f64> = (0..n).map(|i| a[i][n] / a[i][i]).collect();
        for (x, z) in model.alpha.iter().zip(&alpha) {
            assert!((x - z).abs() <= 1e-8 * z.abs().max(1.0));
        }
        let k = kernel_matrix(&spec, &data.points, Normalization::ByN).unwrap();
        let resid: Vec<f64> = k
            .add_diagonal(1e-3)
            .matvec(&model.alpha)
            .unwrap()
            .iter()
            .zip(&y)
            .map(|(a, b)| a - b)
            .collect();
        assert!(norm(&resid) <= 1e-8 * norm(&y));
    }

    fn instance() -> (Matrix, SymMatrix, Vec<f64>, Preconditioner, Preconditioner) {
        let phi = features(12, 40, 5);
        let k = phi.gram();
        let y = normal_vec(&mut seeded(6), 12);
        let d = eigh(&k).unwrap();
        let s1 = build_preconditioner(&d, &SpectrumMap::FlattenTopK { k: 4 }, 4).unwrap();
        let s2 = build_preconditioner(&d, &SpectrumMap::Power { exponent: 0.5 }, 6).unwrap();
        (phi, k, y, s1, s2)
    }

    #[test]
    fn identity_preconditioner_is_ridge_regression() {
        let (_, k, y, _, _) = instance();
        let alpha = pkrr_closed_form(&k, &Preconditioner::identity(12), 0.1, &y).unwrap();
        let direct = solve_spd(&k, &y, 0.1).unwrap();
        for (a, b) in alpha.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-10);
        }
        assert!(pkrr_closed_form(&k, &Preconditioner::identity(12), 0.0, &y).is_err());
    }

    #[test]
    fn closed_form_is_stationary() {
        let (_, k, y, s1, _) = instance();
        let alpha = pkrr_closed_form(&k, &s1, 0.1, &y).unwrap();
        assert!(norm(&pkrr_stationarity(&k, &s1, 0.1, &y, &alpha).unwrap()) <= 1e-8);
    }

    #[test]
    fn vanishing_ridge_forgets_the_preconditioner() {
        let (_, k, y, s1, s2) = instance();
        let a = k
            .matvec(&pkrr_closed_form(&k, &s1, 1e-10, &y).unwrap())
            .unwrap();
        let b = k
            .matvec(&pkrr_closed_form(&k, &s2, 1e-10, &y).unwrap())
            .unwrap();
        for (x, z) in a.iter().zip(&b) {
            assert!((x - z).abs() <= 1e-6 * z.abs().max(1.0));
        }
    }

    #[test]
    fn iterations_reach_the_closed_form() {
        let (phi, k, y, s1, _) = instance();
        let gamma = 0.1;
        let alpha = pkrr_closed_form(&k, &s1, gamma, &y).unwrap();
        let target = k.matvec(&alpha).unwrap();
        let lambda_max = eigh(&k).unwrap().max_value();
        let eta = 1.0 / (lambda_max + gamma);
        let w = linear_model_pgd(&phi, &y, &s1, gamma, eta, 100_000).unwrap();
        let pred = phi.matvec(&w).unwrap();
        for (a, b) in pred.iter().zip(&target) {
            assert!((a - b).abs() <= 1e-6);
        }
        let dual = linear_model_pgd_dual(&k, &y, &s1, gamma, eta, 500).unwrap();
        let primal = linear_model_pgd(&phi, &y, &s1, gamma, eta, 500).unwrap();
        let from_dual = phi.tr_matvec(&dual).unwrap();
        for (a, b) in from_dual.iter().zip(&primal) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn linear_model_edge_cases() {
        let (phi, _, _, s1, _) = instance();
        let zero = linear_model_pgd(&phi, &[0.0; 12], &s1, 0.1, 0.1, 50).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let y = vec![1.0; 12];
        assert!(linear_model_pgd(&phi, &y, &s1, 0.0, 0.1, 0)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(matches!(
            linear_model_pgd(&phi, &y, &s1, 0.0, 1e3, 100),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn untrained_gap_is_initial_output() {
        let config = MlpConfig {
            last_layer_scale: 1e-4,
            ..MlpConfig::relu(2, 2, 256, 1)
        };
        let train = sample_sphere(2, 8, 2).unwrap().points;
        let test = sample_sphere(2, 5, 3).unwrap().points;
        let y = vec![0.5; 8];
        let report = consistency_check(
            &config,
            &train,
            &y,
            &test,
            &Preconditioner::identity(8),
            0.1,
            0,
        )
        .unwrap();
        assert!(report.linear.iter().all(|&v| v == 0.0));
        assert!(report.max_gap() <= 0.1);
        let big = MlpConfig::relu(2, 2, 8192, 0);
        assert!(consistency_check(
            &big,
            &train,
            &y,
            &test,
            &Preconditioner::identity(8),
            0.1,
            1
        )
        .is_err());
    }
}
