//! The sweeps behind the command-line driver. Every cell draws from a stream
//! derived from `(base seed, cell key)`, so rows are a pure function of the
//! configuration.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::{fourier_labels, gaussian_labels, sample_sphere};
use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix, KernelSpec, Normalization};
use crate::linalg::{eigh, frobenius_distance, Matrix, SymMatrix};
use crate::msk::{
    mean_std, msk_consistency_sweep, ConsistencyRow, MskPredictor, PredictMode, SpectrumMap,
};
use crate::net::{Activation, MlpConfig, MlpState};
use crate::precond::{
    build_preconditioner, max_stable_lr, pgd_train, Preconditioner, Recompute, TrainOptions,
};
use crate::rng::derive_seed;

/// Source of the preconditioner in a frequency sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Arm {
    /// Plain gradient descent, `S = I`.
    Identity,
    /// `S` built once from the empirical NTK at initialisation.
    Ntk,
    /// `S` rebuilt from the empirical NTK every `recompute_period` steps.
    NtkT,
    /// `S` built from the infinite-width NTK.
    NtkAnalytic,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Identity => "identity",
            Arm::Ntk => "ntk",
            Arm::NtkT => "ntk_t",
            Arm::NtkAnalytic => "ntk_analytic",
        }
    }

    fn key(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "identity" => Ok(Arm::Identity),
            "ntk" => Ok(Arm::Ntk),
            "ntk_t" => Ok(Arm::NtkT),
            "ntk_analytic" => Ok(Arm::NtkAnalytic),
            other => Err(Error::invalid(
                "arms",
                alloc::format!("unknown arm `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FreqSweepConfig {
    pub seed: u64,
    pub n: usize,
    pub width: usize,
    pub depth: usize,
    pub bias_scale: f64,
    pub last_layer_scale: f64,
    /// Targets are `amplitude·sin(kθ)`.
    pub amplitude: f64,
    /// Stop once `‖r‖ ≤ epsilon`.
    pub epsilon: f64,
    pub max_iter: usize,
    pub flatten_k: usize,
    /// `η₀` as a fraction of `2/(λ_min + λ_max)` of the preconditioned kernel.
    pub lr_fraction: f64,
    pub recompute_period: usize,
    pub batch_size: Option<usize>,
    pub freqs: Vec<u32>,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
}

impl Default for FreqSweepConfig {
    fn default() -> Self {
        FreqSweepConfig {
            seed: 0,
            n: 64,
            width: 256,
            depth: 2,
            bias_scale: 0.0,
            last_layer_scale: 1e-8,
            amplitude: 1e-3,
            epsilon: 1e-4,
            max_iter: 8000,
            flatten_k: 32,
            lr_fraction: 0.9,
            recompute_period: 100,
            batch_size: None,
            freqs: (1..=12).collect(),
            arms: vec![Arm::Identity, Arm::Ntk],
            seeds: vec![0, 1, 2],
        }
    }
}

impl FreqSweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("n", "need at least 2 points"));
        }
        self.net_config(0).validate()?;
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::invalid("amplitude", "must be positive"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", "must be nonnegative"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter", "must be positive"));
        }
        if self.flatten_k == 0 || self.flatten_k >= self.n {
            return Err(Error::invalid("flatten_k", "must lie in 1..n"));
        }
        if !(self.lr_fraction > 0.0 && self.lr_fraction <= 1.0) {
            return Err(Error::invalid("lr_fraction", "must lie in (0, 1]"));
        }
        if self.recompute_period == 0 {
            return Err(Error::invalid("recompute_period", "must be positive"));
        }
        if matches!(self.batch_size, Some(b) if b == 0 || b > self.n) {
            return Err(Error::invalid("batch_size", "must lie in 1..=n"));
        }
        if self.freqs.is_empty() {
            return Err(Error::invalid("freqs", "must not be empty"));
        }
        if self.arms.is_empty() {
            return Err(Error::invalid("arms", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds", "must not be empty"));
        }
        Ok(())
    }

    pub fn net_config(&self, seed: u64) -> MlpConfig {
        MlpConfig {
            input_dim: 2,
            depth: self.depth,
            width: self.width,
            activation: Activation::Relu,
            bias_scale: self.bias_scale,
            last_layer_scale: self.last_layer_scale,
            seed,
        }
    }

    pub fn flatten_map(&self) -> SpectrumMap {
        SpectrumMap::FlattenTopK { k: self.flatten_k }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FreqRow {
    pub frequency: u32,
    pub arm: Arm,
    pub seed: u64,
    /// Steps taken: to the threshold, to the cap, or to the divergence point.
    pub iterations: usize,
    pub reached: bool,
    pub diverged: bool,
    /// `½‖r‖²` at the last recorded step.
    pub final_loss: f64,
    pub eta0: f64,
}

/// Eigenvalues of `S^{1/2} K S^{1/2}`, the spectrum that governs the step.
pub fn preconditioned_spectrum(k: &SymMatrix, s: &Preconditioner) -> Result<Vec<f64>> {
    let half = s.sqrt().dense();
    let left = half.as_matrix().matmul(k.as_matrix())?;
    let both = left.matmul(half.as_matrix())?;
    Ok(eigh(&SymMatrix::from_matrix(both)?)?.values().to_vec())
}

/// One training run per `(seed, arm, frequency)`. The points and the
/// initial network depend only on the seed, so arms see identical problems.
pub fn freq_sweep(config: &FreqSweepConfig) -> Result<Vec<FreqRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let points = sample_sphere(2, config.n, derive_seed(config.seed, &[0, seed]))?.points;
        let net = MlpState::init(config.net_config(derive_seed(config.seed, &[1, seed])))?;
        let k0 = net.empirical_ntk(&points)?;
        let d0 = eigh(&k0)?;
        let g = config.flatten_map();
        for &arm in &config.arms {
            let s = match arm {
                Arm::Identity => Preconditioner::identity(config.n),
                Arm::Ntk | Arm::NtkT => build_preconditioner(&d0, &g, config.flatten_k)?,
                Arm::NtkAnalytic => {
                    let spec = KernelSpec::NtkRelu {
                        depth: config.depth,
                        bias_scale: config.bias_scale,
                        last_layer_scale: config.last_layer_scale,
                    };
                    let k = kernel_matrix(&spec, &points, Normalization::None)?;
                    build_preconditioner(&eigh(&k)?, &g, config.flatten_k)?
                }
            };
            let eta0 = config.lr_fraction * max_stable_lr(&preconditioned_spectrum(&k0, &s)?)?;
            for &frequency in &config.freqs {
                let y: Vec<f64> = fourier_labels(&points, frequency)?
                    .into_iter()
                    .map(|v| config.amplitude * v)
                    .collect();
                let options = TrainOptions {
                    track: None,
                    recompute: (arm == Arm::NtkT).then(|| Recompute {
                        period: config.recompute_period,
                        g: g.clone(),
                        k: config.flatten_k,
                    }),
                    batch_size: config.batch_size,
                    batch_seed: derive_seed(
                        config.seed,
                        &[2, seed, arm.key(), u64::from(frequency)],
                    ),
                };
                let row = match pgd_train(
                    &net,
                    &points,
                    &y,
                    &s,
                    eta0,
                    config.epsilon,
                    config.max_iter,
                    &options,
                ) {
                    Ok((_, trace)) => FreqRow {
                        frequency,
                        arm,
                        seed,
                        iterations: trace.iterations(),
                        reached: trace.iterations_to_threshold.is_some(),
                        diverged: false,
                        final_loss: 0.5 * trace.final_residual() * trace.final_residual(),
                        eta0,
                    },
                    Err(Error::Diverged {
                        iteration,
                        residual,
                    }) => FreqRow {
                        frequency,
                        arm,
                        seed,
                        iterations: iteration,
                        reached: false,
                        diverged: true,
                        final_loss: 0.5 * residual * residual,
                        eta0,
                    },
                    Err(e) => return Err(e),
                };
                rows.push(row);
            }
        }
    }
    rows.sort_by(|a, b| (a.arm, a.frequency, a.seed).cmp(&(b.arm, b.frequency, b.seed)));
    Ok(rows)
}

/// Median over seeds of the iteration count per frequency, in the order of
/// `freqs`. Diverged runs count as `cap`.
pub fn median_iterations(rows: &[FreqRow], arm: Arm, freqs: &[u32], cap: usize) -> Vec<f64> {
    freqs
        .iter()
        .map(|&f| {
            let mut v: Vec<f64> = rows
                .iter()
                .filter(|r| r.arm == arm && r.frequency == f)
                .map(|r| {
                    if r.diverged {
                        cap as f64
                    } else {
                        r.iterations as f64
                    }
                })
                .collect();
            median(&mut v)
        })
        .collect()
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct VarianceSweepConfig {
    pub seed: u64,
    /// Ambient dimension; points live on `S^{dim-1}`.
    pub dim: usize,
    pub bandwidth: f64,
    pub gamma: f64,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub test_points: usize,
    pub maps: Vec<SpectrumMap>,
    pub mode: PredictMode,
}

impl Default for VarianceSweepConfig {
    fn default() -> Self {
        VarianceSweepConfig {
            seed: 0,
            dim: 3,
            bandwidth: 1.0,
            gamma: 0.0,
            sizes: vec![64, 128, 256],
            trials: 25,
            test_points: 1000,
            maps: vec![
                SpectrumMap::Identity,
                SpectrumMap::Power { exponent: 0.75 },
                SpectrumMap::Power { exponent: 0.5 },
                SpectrumMap::Power { exponent: 0.25 },
            ],
            mode: PredictMode::Bordered,
        }
    }
}

impl VarianceSweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::invalid("dim", "must be at least 2"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::invalid("bandwidth", "must be positive"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", "must be nonnegative"));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::invalid(
                "sizes",
                "must be a nonempty list of positive sizes",
            ));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be positive"));
        }
        if self.test_points == 0 {
            return Err(Error::invalid("test_points", "must be positive"));
        }
        if self.maps.is_empty() {
            return Err(Error::invalid("maps", "must not be empty"));
        }
        for g in &self.maps {
            g.validate()
                .map_err(|_| Error::invalid("maps", alloc::format!("invalid map `{g}`")))?;
        }
        Ok(())
    }

    pub fn kernel(&self) -> KernelSpec {
        KernelSpec::Laplace {
            bandwidth: self.bandwidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VarianceRow {
    pub n: usize,
    pub g: String,
    pub test_mse: f64,
    pub std: f64,
    pub trials: usize,
    /// Largest number of train-kernel eigenvalues at or below the floor in any trial.
    pub floored: usize,
}

/// Training points, noise labels and test points of one `(n, trial)` cell.
pub fn variance_cell(
    config: &VarianceSweepConfig,
    n: usize,
    trial: usize,
) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let key = [n as u64, trial as u64];
    let train = sample_sphere(
        config.dim,
        n,
        derive_seed(config.seed, &[0, key[0], key[1]]),
    )?
    .points;
    let labels = gaussian_labels(n, derive_seed(config.seed, &[1, key[0], key[1]]));
    let test = sample_sphere(
        config.dim,
        config.test_points,
        derive_seed(config.seed, &[2, key[0], key[1]]),
    )?
    .points;
    Ok((train, labels, test))
}

/// Test MSE against the zero target of the MSK predictor fitted to pure noise.
pub fn variance_cell_mse(
    config: &VarianceSweepConfig,
    n: usize,
    trial: usize,
    g: &SpectrumMap,
) -> Result<f64> {
    let (train, labels, test) = variance_cell(config, n, trial)?;
    let spec = config.kernel();
    let predictor = MskPredictor::new(&spec, &train, &labels, config.gamma, config.mode)?;
    mse(&predictor.predict(&test, g)?)
}

fn mse(pred: &[f64]) -> Result<f64> {
    Ok(pred.iter().map(|p| p * p).sum::<f64>() / pred.len() as f64)
}

/// Rows ordered by `n`, then by the order of `maps`.
pub fn variance_sweep(config: &VarianceSweepConfig) -> Result<Vec<VarianceRow>> {
    config.validate()?;
    let spec = config.kernel();
    let mut rows = Vec::new();
    for &n in &config.sizes {
        let mut per_map = vec![Vec::with_capacity(config.trials); config.maps.len()];
        let mut floored = 0;
        for trial in 0..config.trials {
            let (train, labels, test) = variance_cell(config, n, trial)?;
            let predictor = MskPredictor::new(&spec, &train, &labels, config.gamma, config.mode)?;
            let d = predictor.train_decomposition();
            floored = floored.max(
                d.values()
                    .iter()
                    .filter(|&&l| l <= d.default_floor())
                    .count(),
            );
            for (g, out) in config.maps.iter().zip(per_map.iter_mut()) {
                out.push(mse(&predictor.predict(&test, g)?)?);
            }
        }
        for (g, values) in config.maps.iter().zip(per_map) {
            let (mean, std) = mean_std(&values);
            rows.push(VarianceRow {
                n,
                g: g.name(),
                test_mse: mean,
                std,
                trials: config.trials,
                floored,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct MskVerifyConfig {
    pub truncation: usize,
    pub decay: f64,
    pub g: SpectrumMap,
    pub sizes: Vec<usize>,
    /// Number of seeds, `0..seeds`.
    pub seeds: u64,
    pub seed: u64,
}

impl Default for MskVerifyConfig {
    fn default() -> Self {
        MskVerifyConfig {
            truncation: 8,
            decay: 4.0,
            g: SpectrumMap::Power { exponent: 0.5 },
            sizes: vec![64, 128, 256, 512],
            seeds: 10,
            seed: 0,
        }
    }
}

impl MskVerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.truncation == 0 {
            return Err(Error::invalid("truncation", "must be positive"));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(Error::invalid("decay", "must be positive"));
        }
        self.g.validate()?;
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::invalid(
                "sizes",
                "must be a nonempty list of positive sizes",
            ));
        }
        if self.seeds == 0 {
            return Err(Error::invalid("seeds", "must be positive"));
        }
        Ok(())
    }
}

pub fn msk_verify(config: &MskVerifyConfig) -> Result<Vec<ConsistencyRow>> {
    config.validate()?;
    let spec = KernelSpec::mercer_circle_power(config.truncation, config.decay);
    let seeds: Vec<u64> = (0..config.seeds)
        .map(|s| derive_seed(config.seed, &[s]))
        .collect();
    msk_consistency_sweep(&spec, &config.g, &config.sizes, &seeds)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct NtkCheckConfig {
    pub seed: u64,
    pub n: usize,
    pub dim: usize,
    pub depth: usize,
    pub bias_scale: f64,
    pub last_layer_scale: f64,
    pub widths: Vec<usize>,
    /// Number of initialisations per width, `0..seeds`.
    pub seeds: u64,
}

impl Default for NtkCheckConfig {
    fn default() -> Self {
        NtkCheckConfig {
            seed: 0,
            n: 16,
            dim: 2,
            depth: 2,
            bias_scale: 0.0,
            last_layer_scale: 1.0,
            widths: vec![256, 1024, 4096],
            seeds: 5,
        }
    }
}

impl NtkCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n", "must be positive"));
        }
        if self.dim < 2 {
            return Err(Error::invalid("dim", "must be at least 2"));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::invalid(
                "widths",
                "must be a nonempty list of positive widths",
            ));
        }
        if self.seeds == 0 {
            return Err(Error::invalid("seeds", "must be positive"));
        }
        self.net_config(1, 0).validate()
    }

    fn net_config(&self, width: usize, seed: u64) -> MlpConfig {
        MlpConfig {
            input_dim: self.dim,
            depth: self.depth,
            width,
            activation: Activation::Relu,
            bias_scale: self.bias_scale,
            last_layer_scale: self.last_layer_scale,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NtkGapRow {
    pub width: usize,
    /// Mean over initialisations of `‖K₀ − K‖_F / ‖K‖_F`.
    pub mean_gap: f64,
    pub std: f64,
}

/// Relative Frobenius gap between the empirical NTK at initialisation and
/// its infinite-width limit, on one fixed point set.
pub fn ntk_check(config: &NtkCheckConfig) -> Result<Vec<NtkGapRow>> {
    config.validate()?;
    let points = sample_sphere(config.dim, config.n, derive_seed(config.seed, &[0]))?.points;
    let spec = KernelSpec::NtkRelu {
        depth: config.depth,
        bias_scale: config.bias_scale,
        last_layer_scale: config.last_layer_scale,
    };
    let limit = kernel_matrix(&spec, &points, Normalization::None)?;
    let scale = limit.frobenius_norm();
    config
        .widths
        .iter()
        .map(|&width| {
            let gaps = (0..config.seeds)
                .map(|s| {
                    let net = MlpState::init(
                        config.net_config(width, derive_seed(config.seed, &[1, width as u64, s])),
                    )?;
                    Ok(frobenius_distance(&net.empirical_ntk(&points)?, &limit)? / scale)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean_gap, std) = mean_std(&gaps);
            Ok(NtkGapRow {
                width,
                mean_gap,
                std,
            })
        })
        .collect()
}

/// Target of a single training run.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PgdTrainConfig {
    pub seed: u64,
    pub n: usize,
    pub width: usize,
    pub depth: usize,
    pub bias_scale: f64,
    pub last_layer_scale: f64,
    pub frequency: u32,
    pub amplitude: f64,
    pub arm: Arm,
    pub flatten_k: usize,
    pub lr_fraction: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    /// Number of leading `K₀` eigendirections whose residual projections are recorded.
    pub track: usize,
    pub recompute_period: usize,
}

impl Default for PgdTrainConfig {
    fn default() -> Self {
        PgdTrainConfig {
            seed: 0,
            n: 16,
            width: 1024,
            depth: 2,
            bias_scale: 0.0,
            last_layer_scale: 1e-8,
            frequency: 5,
            amplitude: 1e-3,
            arm: Arm::Ntk,
            flatten_k: 8,
            lr_fraction: 0.9,
            epsilon: 0.0,
            max_iter: 200,
            track: 16,
            recompute_period: 100,
        }
    }
}

impl PgdTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let sweep = self.as_sweep();
        sweep.validate()?;
        if self.track > self.n {
            return Err(Error::invalid("track", "cannot exceed n"));
        }
        Ok(())
    }

    fn as_sweep(&self) -> FreqSweepConfig {
        FreqSweepConfig {
            seed: self.seed,
            n: self.n,
            width: self.width,
            depth: self.depth,
            bias_scale: self.bias_scale,
            last_layer_scale: self.last_layer_scale,
            amplitude: self.amplitude,
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            flatten_k: self.flatten_k,
            lr_fraction: self.lr_fraction,
            recompute_period: self.recompute_period,
            batch_size: None,
            freqs: vec![self.frequency],
            arms: vec![self.arm],
            seeds: vec![0],
        }
    }
}

/// Everything a single run produces.
#[derive(Debug, Clone)]
pub struct PgdRun {
    pub points: Matrix,
    pub labels: Vec<f64>,
    pub initial: MlpState,
    pub trained: MlpState,
    pub trace: crate::precond::TrainTrace,
    /// Eigenvalues of `K₀` (descending) and the matching eigenvalues of
    /// `K₀S`, the latter exact only for `S` built from `K₀`.
    pub k0_spectrum: Vec<f64>,
    pub ks_spectrum: Vec<f64>,
}

/// One PGD run on `amplitude·sin(kθ)` tracking projections of the residual
/// onto the leading eigenvectors of `K₀`.
pub fn pgd_run(config: &PgdTrainConfig) -> Result<PgdRun> {
    config.validate()?;
    let sweep = config.as_sweep();
    let points = sample_sphere(2, config.n, derive_seed(config.seed, &[0, 0]))?.points;
    let net = MlpState::init(sweep.net_config(derive_seed(config.seed, &[1, 0])))?;
    let labels: Vec<f64> = fourier_labels(&points, config.frequency)?
        .into_iter()
        .map(|v| config.amplitude * v)
        .collect();
    let k0 = net.empirical_ntk(&points)?;
    let d0 = eigh(&k0)?;
    let g = sweep.flatten_map();
    let s = match config.arm {
        Arm::Identity => Preconditioner::identity(config.n),
        Arm::Ntk | Arm::NtkT => build_preconditioner(&d0, &g, config.flatten_k)?,
        Arm::NtkAnalytic => {
            let spec = KernelSpec::NtkRelu {
                depth: config.depth,
                bias_scale: config.bias_scale,
                last_layer_scale: config.last_layer_scale,
            };
            build_preconditioner(
                &eigh(&kernel_matrix(&spec, &points, Normalization::None)?)?,
                &g,
                config.flatten_k,
            )?
        }
    };
    let eta0 = config.lr_fraction * max_stable_lr(&preconditioned_spectrum(&k0, &s)?)?;
    let ks_spectrum = match config.arm {
        Arm::Ntk | Arm::NtkT => crate::precond::ks_spectrum(&d0, &g, config.flatten_k)?,
        _ => {
            let m = s.dense();
            (0..config.n)
                .map(|i| {
                    let v = d0.vector(i);
                    Ok(d0.values()[i] * crate::linalg::dot(v, &m.matvec(v)?))
                })
                .collect::<Result<Vec<f64>>>()?
        }
    };
    let mut track = Matrix::zeros(config.track, config.n);
    for j in 0..config.track {
        track.row_mut(j).copy_from_slice(d0.vector(j));
    }
    let options = TrainOptions {
        track: Some(track),
        recompute: (config.arm == Arm::NtkT).then(|| Recompute {
            period: config.recompute_period,
            g: g.clone(),
            k: config.flatten_k,
        }),
        batch_size: None,
        batch_seed: 0,
    };
    let (trained, trace) = pgd_train(
        &net,
        &points,
        &labels,
        &s,
        eta0,
        config.epsilon,
        config.max_iter,
        &options,
    )?;
    Ok(PgdRun {
        points,
        labels,
        initial: net,
        trained,
        trace,
        k0_spectrum: d0.values().to_vec(),
        ks_spectrum,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct KrrConsistencyConfig {
    pub seed: u64,
    pub n: usize,
    pub test_points: usize,
    pub depth: usize,
    pub bias_scale: f64,
    pub last_layer_scale: f64,
    pub frequency: u32,
    pub amplitude: f64,
    /// `0` trains with `S = I`.
    pub flatten_k: usize,
    pub lr_fraction: f64,
    pub steps: usize,
    pub widths: Vec<usize>,
}

impl Default for KrrConsistencyConfig {
    fn default() -> Self {
        KrrConsistencyConfig {
            seed: 0,
            n: 16,
            test_points: 16,
            depth: 2,
            bias_scale: 0.0,
            last_layer_scale: 1e-4,
            frequency: 2,
            amplitude: 1.0,
            flatten_k: 4,
            lr_fraction: 0.5,
            steps: 500,
            widths: vec![256, 1024, 4096],
        }
    }
}

impl KrrConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n > crate::krr::MAX_FEATURE_POINTS {
            return Err(Error::invalid("n", "must lie in 2..=32"));
        }
        if self.test_points == 0 {
            return Err(Error::invalid("test_points", "must be positive"));
        }
        if self.flatten_k >= self.n {
            return Err(Error::invalid("flatten_k", "must be smaller than n"));
        }
        if !(self.lr_fraction > 0.0 && self.lr_fraction <= 1.0) {
            return Err(Error::invalid("lr_fraction", "must lie in (0, 1]"));
        }
        if !(self.amplitude.is_finite()) {
            return Err(Error::invalid("amplitude", "must be finite"));
        }
        if self.widths.is_empty()
            || self
                .widths
                .iter()
                .any(|&w| w == 0 || w > crate::krr::MAX_FEATURE_WIDTH)
        {
            return Err(Error::invalid(
                "widths",
                "must be a nonempty list of widths in 1..=4096",
            ));
        }
        self.net_config(1).validate()
    }

    fn net_config(&self, width: usize) -> MlpConfig {
        MlpConfig {
            input_dim: 2,
            depth: self.depth,
            width,
            activation: Activation::Relu,
            bias_scale: self.bias_scale,
            last_layer_scale: self.last_layer_scale,
            seed: derive_seed(self.seed, &[1, width as u64]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KrrGapRow {
    pub width: usize,
    pub max_gap: f64,
    pub mean_gap: f64,
    pub eta0: f64,
}

/// Gap between the trained network and the linear model on its initial
/// gradient features, per width.
pub fn krr_consistency(config: &KrrConsistencyConfig) -> Result<Vec<KrrGapRow>> {
    config.validate()?;
    let train = sample_sphere(2, config.n, derive_seed(config.seed, &[0, 0]))?.points;
    let test = sample_sphere(2, config.test_points, derive_seed(config.seed, &[0, 1]))?.points;
    let y: Vec<f64> = fourier_labels(&train, config.frequency)?
        .into_iter()
        .map(|v| config.amplitude * v)
        .collect();
    config
        .widths
        .iter()
        .map(|&width| {
            let net_config = config.net_config(width);
            let k0 = MlpState::init(net_config.clone())?.empirical_ntk(&train)?;
            let s = if config.flatten_k == 0 {
                Preconditioner::identity(config.n)
            } else {
                let g = SpectrumMap::FlattenTopK {
                    k: config.flatten_k,
                };
                build_preconditioner(&eigh(&k0)?, &g, config.flatten_k)?
            };
            let eta0 = config.lr_fraction * max_stable_lr(&preconditioned_spectrum(&k0, &s)?)?;
            let report = crate::krr::consistency_check(
                &net_config,
                &train,
                &y,
                &test,
                &s,
                eta0,
                config.steps,
            )?;
            Ok(KrrGapRow {
                width,
                max_gap: report.max_gap(),
                mean_gap: report.gaps.iter().sum::<f64>() / report.gaps.len() as f64,
                eta0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_sweep() -> FreqSweepConfig {
        FreqSweepConfig {
            n: 16,
            width: 64,
            flatten_k: 4,
            max_iter: 400,
            amplitude: 1e-2,
            epsilon: 1e-3,
            freqs: vec![1, 2, 3],
            arms: vec![Arm::Identity, Arm::Ntk, Arm::NtkT, Arm::NtkAnalytic],
            seeds: vec![0, 1],
            recompute_period: 20,
            ..FreqSweepConfig::default()
        }
    }

    #[test]
    fn freq_sweep_shape_and_determinism() {
        let config = small_sweep();
        let a = freq_sweep(&config).unwrap();
        assert_eq!(a.len(), 3 * 4 * 2);
        assert_eq!(a, freq_sweep(&config).unwrap());
        for w in a.windows(2) {
            assert!((w[0].arm, w[0].frequency, w[0].seed) < (w[1].arm, w[1].frequency, w[1].seed));
        }
        let first = a.iter().filter(|r| r.frequency == 1 && !r.diverged);
        assert!(first.clone().count() > 0);
        for r in first {
            assert!(r.reached, "{r:?}");
        }
    }

    #[test]
    fn arms_share_the_problem() {
        let mut config = small_sweep();
        config.arms = vec![Arm::Ntk];
        let ntk = freq_sweep(&config).unwrap();
        config.arms = vec![Arm::Identity, Arm::Ntk];
        let both: Vec<FreqRow> = freq_sweep(&config)
            .unwrap()
            .into_iter()
            .filter(|r| r.arm == Arm::Ntk)
            .collect();
        assert_eq!(ntk, both);
    }

    #[test]
    fn median_counts_divergence_as_cap() {
        let row = |seed: u64, iterations: usize, diverged: bool| FreqRow {
            frequency: 1,
            arm: Arm::Ntk,
            seed,
            iterations,
            reached: !diverged,
            diverged,
            final_loss: 0.0,
            eta0: 1.0,
        };
        let rows = [row(0, 10, false), row(1, 3, true), row(2, 30, false)];
        assert_eq!(median_iterations(&rows, Arm::Ntk, &[1], 100), vec![30.0]);
        assert!(median_iterations(&rows, Arm::Identity, &[1], 100)[0].is_nan());
    }

    #[test]
    fn config_errors_name_the_field() {
        let bad = FreqSweepConfig {
            flatten_k: 64,
            ..FreqSweepConfig::default()
        };
        match bad.validate() {
            Err(Error::InvalidParameter { name, .. }) => assert_eq!(name, "flatten_k"),
            other => panic!("{other:?}"),
        }
        let bad = VarianceSweepConfig {
            trials: 0,
            ..VarianceSweepConfig::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(Error::InvalidParameter { name: "trials", .. })
        ));
    }

    #[test]
    fn arm_names_round_trip() {
        for arm in [Arm::Identity, Arm::Ntk, Arm::NtkT, Arm::NtkAnalytic] {
            assert_eq!(arm.name().parse::<Arm>().unwrap(), arm);
        }
        assert!("sgd".parse::<Arm>().is_err());
    }

    #[test]
    fn variance_sweep_matches_joint_oracle() {
        let config = VarianceSweepConfig {
            sizes: vec![24],
            trials: 3,
            test_points: 20,
            ..VarianceSweepConfig::default()
        };
        let rows = variance_sweep(&config).unwrap();
        assert_eq!(rows.len(), 4);
        let joint = VarianceSweepConfig {
            mode: PredictMode::Joint,
            ..config.clone()
        };
        for (row, g) in rows.iter().zip(&config.maps) {
            let values: Vec<f64> = (0..3)
                .map(|t| variance_cell_mse(&joint, 24, t, g).unwrap())
                .collect();
            let mean = values.iter().sum::<f64>() / 3.0;
            assert!(
                (row.test_mse - mean).abs() <= 1e-10 * mean.max(1.0),
                "{row:?} vs {mean}"
            );
        }
    }

    #[test]
    fn zero_noise_gives_zero_mse() {
        let config = VarianceSweepConfig {
            sizes: vec![16],
            trials: 1,
            test_points: 5,
            ..VarianceSweepConfig::default()
        };
        let (train, _, test) = variance_cell(&config, 16, 0).unwrap();
        let spec = config.kernel();
        let zeros = vec![0.0f64; 16];
        let p = MskPredictor::new(&spec, &train, &zeros, 0.0, PredictMode::Bordered).unwrap();
        for g in &config.maps {
            assert_eq!(mse(&p.predict(&test, g).unwrap()).unwrap(), 0.0f64);
        }
    }

    #[test]
    fn msk_verify_rows() {
        let config = MskVerifyConfig {
            sizes: vec![32, 64],
            seeds: 2,
            ..MskVerifyConfig::default()
        };
        let rows = msk_verify(&config).unwrap();
        assert_eq!(rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![32, 64]);
    }

    #[test]
    fn pgd_run_tracks_projections() {
        let config = PgdTrainConfig {
            width: 128,
            n: 8,
            flatten_k: 3,
            track: 8,
            max_iter: 20,
            ..PgdTrainConfig::default()
        };
        let run = pgd_run(&config).unwrap();
        assert_eq!(run.trace.projections.len(), 21);
        assert_eq!(run.ks_spectrum.len(), 8);
        let p0 = &run.trace.projections[0];
        let total = p0.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((total - run.trace.residual_norms[0]).abs() <= 1e-10 * total);
        let mut s = config;
        s.track = 9;
        assert!(matches!(
            pgd_run(&s),
            Err(Error::InvalidParameter { name: "track", .. })
        ));
    }

    #[test]
    fn krr_consistency_small() {
        let config = KrrConsistencyConfig {
            n: 6,
            test_points: 3,
            flatten_k: 2,
            steps: 20,
            widths: vec![64, 256],
            ..KrrConsistencyConfig::default()
        };
        let rows = krr_consistency(&config).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows
            .iter()
            .all(|r| r.max_gap.is_finite() && r.max_gap >= r.mean_gap));
    }

    #[test]
    fn ntk_gap_is_small_and_finite() {
        let config = NtkCheckConfig {
            n: 6,
            widths: vec![64, 1024],
            seeds: 2,
            ..NtkCheckConfig::default()
        };
        let rows = ntk_check(&config).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[1].mean_gap < rows[0].mean_gap, "{rows:?}");
        assert!(rows[1].mean_gap < 0.2);
    }
}
