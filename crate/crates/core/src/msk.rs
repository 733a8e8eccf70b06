//! Modified spectrum kernels: eigenvalue surgery on kernel matrices.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::arrowhead::arrowhead_eigh;
use crate::data::sample_sphere;
use crate::error::{Error, Result};
use crate::kernels::{
    cross_kernel, feature_kernel, kernel_eval, kernel_matrix, mercer_feature_matrix, KernelSpec,
    Normalization,
};
use crate::linalg::{
    dot, eigh, frobenius_distance, solve_spd, Matrix, SpectralDecomposition, SymMatrix,
    DEFAULT_RELATIVE_FLOOR,
};
use crate::math;
use crate::rng::derive_seed;

/// Spectrum map `g`. Maps act on a whole sorted spectrum because
/// `FlattenTopK` depends on `λ_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "String", into = "String"))]
pub enum SpectrumMap {
    Identity,
    /// `λᵢ ↦ λ_{k+1}` for `i ≤ k`, unchanged otherwise.
    FlattenTopK {
        k: usize,
    },
    Shift {
        shift: f64,
    },
    Power {
        exponent: f64,
    },
    /// Piecewise-linear interpolation through `(λ, g(λ))` knots, constant
    /// beyond the outermost knots.
    Custom {
        knots: Vec<(f64, f64)>,
    },
}

impl SpectrumMap {
    pub fn validate(&self) -> Result<()> {
        match self {
            SpectrumMap::Identity => Ok(()),
            SpectrumMap::FlattenTopK { k } if *k == 0 => {
                Err(Error::invalid("k", "must be positive"))
            }
            SpectrumMap::FlattenTopK { .. } => Ok(()),
            SpectrumMap::Shift { shift } if !(*shift > 0.0 && shift.is_finite()) => {
                Err(Error::invalid("shift", "must be positive"))
            }
            SpectrumMap::Shift { .. } => Ok(()),
            SpectrumMap::Power { exponent } if !(*exponent > 0.0 && *exponent <= 1.0) => {
                Err(Error::invalid("exponent", "must lie in (0, 1]"))
            }
            SpectrumMap::Power { .. } => Ok(()),
            SpectrumMap::Custom { knots } => {
                if knots.is_empty() {
                    return Err(Error::invalid("knots", "need at least one knot"));
                }
                for w in knots.windows(2) {
                    if !(w[1].0 > w[0].0) || w[1].1 < w[0].1 {
                        return Err(Error::invalid("knots", "must be increasing and monotone"));
                    }
                }
                if knots
                    .iter()
                    .any(|&(x, y)| !(x.is_finite() && y > 0.0 && y.is_finite()))
                {
                    return Err(Error::invalid(
                        "knots",
                        "values must be positive and finite",
                    ));
                }
                Ok(())
            }
        }
    }

    /// Lipschitz constant of `g` on `[lower, ∞)`.
    pub fn lipschitz_hint(&self, lower: f64) -> f64 {
        match self {
            SpectrumMap::Identity | SpectrumMap::FlattenTopK { .. } | SpectrumMap::Shift { .. } => {
                1.0
            }
            SpectrumMap::Power { exponent } => {
                exponent * math::powf(lower.max(f64::MIN_POSITIVE), exponent - 1.0)
            }
            SpectrumMap::Custom { knots } => knots
                .windows(2)
                .filter(|w| w[1].0 >= lower)
                .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
                .fold(0.0, f64::max),
        }
    }

    /// Label used in result tables; parses back through [`FromStr`].
    pub fn name(&self) -> String {
        match self {
            SpectrumMap::Identity => "identity".into(),
            SpectrumMap::FlattenTopK { k } => format!("flatten:{k}"),
            SpectrumMap::Shift { shift } => format!("shift:{shift}"),
            SpectrumMap::Power { exponent } => format!("power:{exponent}"),
            SpectrumMap::Custom { knots } if knots.len() == 1 => format!("const:{}", knots[0].1),
            SpectrumMap::Custom { knots } => {
                let parts: Vec<String> = knots.iter().map(|(x, y)| format!("{x}/{y}")).collect();
                format!("custom:{}", parts.join(","))
            }
        }
    }

    fn scalar(&self, lambda: f64, flat: f64) -> f64 {
        match self {
            SpectrumMap::Identity => lambda,
            SpectrumMap::FlattenTopK { .. } => lambda.min(flat),
            SpectrumMap::Shift { shift } => lambda + shift,
            SpectrumMap::Power { exponent } => math::powf(lambda, *exponent),
            SpectrumMap::Custom { knots } => interpolate(knots, lambda),
        }
    }

    /// Applies `g` to a spectrum sorted in descending order. Eigenvalues at
    /// or below `floor` pass through unchanged.
    pub fn apply(&self, spectrum: &[f64], floor: f64) -> Result<Vec<f64>> {
        self.validate()?;
        let flat = match self {
            SpectrumMap::FlattenTopK { k } if !spectrum.is_empty() => {
                spectrum[(*k).min(spectrum.len() - 1)].max(floor)
            }
            _ => f64::INFINITY,
        };
        spectrum
            .iter()
            .map(|&lambda| {
                if lambda <= floor {
                    return Ok(lambda);
                }
                let value = self.scalar(lambda, flat);
                if value > 0.0 && value.is_finite() {
                    Ok(value)
                } else {
                    Err(Error::InvalidSpectrumMap {
                        eigenvalue: lambda,
                        value,
                    })
                }
            })
            .collect()
    }
}

fn interpolate(knots: &[(f64, f64)], x: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = knots.partition_point(|&(k, _)| k <= x);
    let (x0, y0) = knots[i - 1];
    let (x1, y1) = knots[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

impl FromStr for SpectrumMap {
    type Err = Error;

    /// `identity`, `flatten:K`, `shift:S`, `power:A`, `const:C` or
    /// `custom:x1/y1,x2/y2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let number = || -> Result<f64> {
            arg.and_then(|a| a.parse().ok())
                .ok_or_else(|| Error::invalid("g", format!("`{s}` needs a numeric argument")))
        };
        let map = match head {
            "identity" => SpectrumMap::Identity,
            "flatten" => SpectrumMap::FlattenTopK {
                k: arg
                    .and_then(|a| a.parse().ok())
                    .ok_or_else(|| Error::invalid("g", format!("`{s}` needs an integer k")))?,
            },
            "shift" => SpectrumMap::Shift { shift: number()? },
            "power" => SpectrumMap::Power {
                exponent: number()?,
            },
            "const" => SpectrumMap::Custom {
                knots: vec![(0.0, number()?)],
            },
            "custom" => {
                let bad = || Error::invalid("g", format!("`{s}` needs knots written as x/y pairs"));
                let knots = arg
                    .ok_or_else(bad)?
                    .split(',')
                    .map(|pair| {
                        let (x, y) = pair.split_once('/').ok_or_else(bad)?;
                        Ok((
                            x.trim().parse().map_err(|_| bad())?,
                            y.trim().parse().map_err(|_| bad())?,
                        ))
                    })
                    .collect::<Result<Vec<(f64, f64)>>>()?;
                SpectrumMap::Custom { knots }
            }
            _ => return Err(Error::invalid("g", format!("unknown spectrum map `{s}`"))),
        };
        map.validate()?;
        Ok(map)
    }
}

impl core::fmt::Display for SpectrumMap {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.name())
    }
}

impl TryFrom<String> for SpectrumMap {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SpectrumMap> for String {
    fn from(g: SpectrumMap) -> String {
        g.name()
    }
}

/// `V·diag(g(λ̂))·Vᵀ` with the default floor.
pub fn build_msk_matrix(k: &SymMatrix, g: &SpectrumMap) -> Result<SymMatrix> {
    let decomp = eigh(k)?;
    msk_from_decomposition(&decomp, g)
}

pub fn msk_from_decomposition(
    decomp: &SpectralDecomposition,
    g: &SpectrumMap,
) -> Result<SymMatrix> {
    let mapped = g.apply(decomp.values(), decomp.default_floor())?;
    decomp.compose(&mapped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PredictMode {
    /// Decompose the joint `(n+1)` matrix densely for every test point.
    Joint,
    /// Same predictor, obtained by a bordered update of the train-block
    /// decomposition. Falls back to `Joint` when the update is singular.
    #[default]
    Bordered,
    /// Approximation: `g` applied through the train decomposition and
    /// extended to test points by Nyström.
    Nystrom,
}

/// Predictions of the modified-spectrum kernel regressor at each row of
/// `test_points`. All kernel values are divided by the training size.
pub fn msk_predict(
    spec: &KernelSpec,
    train: &Matrix,
    labels: &[f64],
    test_points: &Matrix,
    g: &SpectrumMap,
    gamma: f64,
    mode: PredictMode,
) -> Result<Vec<f64>> {
    let predictor = MskPredictor::new(spec, train, labels, gamma, mode)?;
    predictor.predict(test_points, g)
}

/// Reusable state for predicting with several maps on one training set.
pub struct MskPredictor<'a> {
    spec: &'a KernelSpec,
    train: &'a Matrix,
    labels: &'a [f64],
    gamma: f64,
    mode: PredictMode,
    decomp: SpectralDecomposition,
    projected_labels: Vec<f64>,
}

impl<'a> MskPredictor<'a> {
    pub fn new(
        spec: &'a KernelSpec,
        train: &'a Matrix,
        labels: &'a [f64],
        gamma: f64,
        mode: PredictMode,
    ) -> Result<Self> {
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
        let decomp = eigh(&k)?;
        let projected_labels = decomp.project(labels)?;
        Ok(MskPredictor {
            spec,
            train,
            labels,
            gamma,
            mode,
            decomp,
            projected_labels,
        })
    }

    pub fn train_decomposition(&self) -> &SpectralDecomposition {
        &self.decomp
    }

    pub fn predict(&self, test_points: &Matrix, g: &SpectrumMap) -> Result<Vec<f64>> {
        g.validate()?;
        let n = self.train.rows();
        let factor = 1.0 / n as f64;
        let cross = cross_kernel(self.spec, test_points, self.train, factor)?;
        let mut out = Vec::with_capacity(test_points.rows());
        for t in 0..test_points.rows() {
            let x = test_points.row(t);
            let border = cross.row(t);
            let value = match self.mode {
                PredictMode::Joint => self.joint(x, border, g)?,
                PredictMode::Bordered => match self.bordered(x, border, g)? {
                    Some(v) => v,
                    None => self.joint(x, border, g)?,
                },
                PredictMode::Nystrom => self.nystrom(border, g)?,
            };
            out.push(value);
        }
        Ok(out)
    }

    fn corner(&self, x: &[f64]) -> Result<f64> {
        Ok(kernel_eval(self.spec, x, x)? / self.train.rows() as f64)
    }

    fn joint(&self, x: &[f64], border: &[f64], g: &SpectrumMap) -> Result<f64> {
        let n = self.train.rows();
        let corner = self.corner(x)?;
        let k = self.decomp.reconstruct();
        let joint = SymMatrix::from_fn(n + 1, |i, j| match (i == n, j == n) {
            (true, true) => corner,
            (true, false) => border[j],
            (false, true) => border[i],
            _ => k.get(i, j),
        });
        let mapped = build_msk_matrix(&joint, g)?;
        let indices: Vec<usize> = (0..n).collect();
        let block = mapped.submatrix(&indices);
        let c = &mapped.row(n)[..n];
        let alpha = solve_spd(&block, self.labels, self.gamma)?;
        Ok(dot(c, &alpha))
    }

    fn bordered(&self, x: &[f64], border: &[f64], g: &SpectrumMap) -> Result<Option<f64>> {
        let n = self.train.rows();
        let z = self.decomp.project(border)?;
        let q = arrowhead_eigh(self.decomp.values(), &z, self.corner(x)?)?;
        let mapped = g.apply(q.values(), q.default_floor())?;
        let floor = DEFAULT_RELATIVE_FLOOR * q.max_value().abs();
        // with M = U·G·Uᵀ, the predictor cᵀ(A+γI)⁻¹y equals
        // −[(M+γI)⁻¹]_{n+1,1:n}·y / [(M+γI)⁻¹]_{n+1,n+1}
        let mut num = 0.0;
        let mut den = 0.0;
        for (k, &value) in mapped.iter().enumerate() {
            let shifted = value + self.gamma;
            if !(shifted > floor) {
                return Ok(None);
            }
            let u = q.vector(k);
            let last = u[n];
            num += last * dot(&u[..n], &self.projected_labels) / shifted;
            den += last * last / shifted;
        }
        if !(den > 0.0) {
            return Ok(None);
        }
        Ok(Some(-num / den))
    }

    fn nystrom(&self, border: &[f64], g: &SpectrumMap) -> Result<f64> {
        let values = self.decomp.values();
        let floor = self.decomp.default_floor();
        let mapped = g.apply(values, floor)?;
        let z = self.decomp.project(border)?;
        let mut acc = 0.0;
        for k in 0..values.len() {
            if values[k] <= floor {
                continue;
            }
            let denom = mapped[k] + self.gamma;
            if !(denom > floor) {
                return Err(Error::IllConditioned {
                    min_eigenvalue: denom,
                });
            }
            acc += z[k] * mapped[k] / values[k] * self.projected_labels[k] / denom;
        }
        Ok(acc)
    }
}

/// One row of a consistency sweep.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConsistencyRow {
    pub n: usize,
    pub mean_frobenius: f64,
    pub std: f64,
}

/// `‖K̃_g − K_g‖_F` for one sample of `n` circle points.
pub fn msk_consistency_distance(
    spec: &KernelSpec,
    g: &SpectrumMap,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let KernelSpec::MercerCircle { eigenvalues } = spec else {
        return Err(Error::invalid(
            "spec",
            "consistency needs a Mercer circle kernel",
        ));
    };
    spec.validate()?;
    let data = sample_sphere(2, n, seed)?;
    let k = kernel_matrix(spec, &data.points, Normalization::ByN)?;
    let estimate = build_msk_matrix(&k, g)?;

    // g on the population spectrum, paired with its eigenfunctions
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
    let sorted: Vec<f64> = order.iter().map(|&i| eigenvalues[i]).collect();
    let mapped_sorted = g.apply(&sorted, 0.0)?;
    let mut weights = vec![0.0; eigenvalues.len()];
    for (rank, &i) in order.iter().enumerate() {
        weights[i] = mapped_sorted[rank];
    }
    let truncation = eigenvalues.len() / 2;
    let features = mercer_feature_matrix(truncation, &data.points)?;
    let exact = feature_kernel(&features, &weights)?;
    frobenius_distance(&estimate, &exact)
}

/// Mean and sample standard deviation of the distance over `seeds`, per size.
/// Each `(n, seed)` cell draws from its own derived stream.
pub fn msk_consistency_sweep(
    spec: &KernelSpec,
    g: &SpectrumMap,
    sizes: &[usize],
    seeds: &[u64],
) -> Result<Vec<ConsistencyRow>> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    sizes
        .iter()
        .map(|&n| {
            let distances = seeds
                .iter()
                .map(|&s| msk_consistency_distance(spec, g, n, derive_seed(s, &[n as u64])))
                .collect::<Result<Vec<_>>>()?;
            let (mean, std) = mean_std(&distances);
            Ok(ConsistencyRow {
                n,
                mean_frobenius: mean,
                std,
            })
        })
        .collect()
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, math::sqrt(var))
}
