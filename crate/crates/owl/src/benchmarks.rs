//! Benchmark systems with exact parameters and ground-truth oracles.
//!
//! Three families:
//!
//! * `linear2d-case1/2` — a 2-D linear map with diagonal Gaussian input,
//!   observation noise `σ_V² = 0.05`, candidates on `S¹`, initialized
//!   with 4 random input draws.
//! * `linear20d-lownoise/highnoise` — a 20-D linear map with coefficients
//!   `â_m = (1 + 40 (m/10)³) · 10⁻³` and input variances from
//!   `(1/4 + (1/128)(m-10)³) · 10⁻¹`, initialized with one sample per
//!   axis. The variance formula goes negative for small `m`; building
//!   the system requires an explicit [`VarianceReading`] resolving the
//!   sign (see [`linear20d_variances_literal`] for the raw values).
//! * `nonlinear2d-case1/2` — a cubic 2-D map modeled with the five odd
//!   monomials of order ≤ 3, candidates in the disk `‖z‖ ≤ 2`,
//!   `σ_V² = 10⁻⁴`, initialized with 2 random input draws.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{OwlError, Result};
use crate::optimizer::FeasibleSet;
use crate::regression::BasisSpec;
use crate::rng::{derive_seed, rng_from_seed};
use crate::stochastics::{kde_density, Density1D, InputDistribution};

/// How the first observations are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum InitProtocol {
    /// Draw `count` inputs from the input law; optionally normalize them
    /// onto the unit sphere (off by default, matching the adaptive
    /// strategies' initialization; the switch exists for sensitivity
    /// checks).
    RandomFromInput { count: usize, normalize: bool },
    /// One unit sample per input axis, guaranteeing invertible `S_xx`.
    OnePerAxis,
}

/// Deterministic part of the input-output map.
#[derive(Clone)]
pub enum TrueMap {
    Linear(DVector<f64>),
    /// `a1 z1 + a2 z2 + a3 z1³ + a4 z2³`.
    OddCubic2([f64; 4]),
    /// Registration hook for user-defined scalar maps.
    Custom(Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>),
}

impl TrueMap {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match self {
            TrueMap::Linear(a) => a.dot(x),
            TrueMap::OddCubic2([a1, a2, a3, a4]) => {
                a1 * x[0] + a2 * x[1] + a3 * x[0].powi(3) + a4 * x[1].powi(3)
            }
            TrueMap::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for TrueMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrueMap::Linear(a) => f.debug_tuple("Linear").field(a).finish(),
            TrueMap::OddCubic2(a) => f.debug_tuple("OddCubic2").field(a).finish(),
            TrueMap::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// A fully specified test system.
#[derive(Debug, Clone)]
pub struct BenchmarkSystem {
    pub name: String,
    pub map: TrueMap,
    pub input_dist: InputDistribution,
    pub noise_sd: f64,
    /// The model's basis; possibly mismatched with the true map.
    pub basis: BasisSpec,
    pub feasible: FeasibleSet,
    pub init: InitProtocol,
}

/// Reference statistics the campaigns converge towards.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Variance of the deterministic output over the input law.
    pub exact_output_variance: f64,
    /// Standard error of the variance estimate (zero for closed forms).
    pub variance_std_error: f64,
    /// Reference output pdf and the `(budget, seed)` that produced it.
    pub reference_pdf: Option<(Density1D, usize, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearCase {
    I,
    II,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseCase {
    /// `σ_ε² = 0.05`.
    LowNoise,
    /// `σ_ε² = 0.5`.
    HighNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonlinearCase {
    I,
    II,
}

/// Resolution of the sign defect in the 20-D variance formula.
///
/// The literal formula `(1/4 + (1/128)(m-10)³) · 10⁻¹` is negative for
/// `m ≤ 6`, which cannot be a variance. Both readings below restore
/// positivity; neither is declared in the source material, so the choice
/// must be made explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceReading {
    /// `(1/4 + |m-10|³/128) · 10⁻¹`: symmetric in `m` around 10, largest
    /// at the ends — matches the narrative that directions 1 and 20 are
    /// the most energetic.
    AbsoluteCubed,
    /// `|1/4 + (m-10)³/128| · 10⁻¹`: absolute value of the whole bracket.
    AbsoluteWhole,
}

/// 2-D linear system of the convergence study.
pub fn make_linear_2d(case: LinearCase) -> BenchmarkSystem {
    let (coeffs, variances, name) = match case {
        LinearCase::I => ([0.8, 1.3], [1.4, 0.6], "linear2d-case1"),
        LinearCase::II => ([0.01, 2.0], [2.0, 0.2], "linear2d-case2"),
    };
    BenchmarkSystem {
        name: name.to_string(),
        map: TrueMap::Linear(DVector::from_column_slice(&coeffs)),
        input_dist: InputDistribution::diagonal(&variances).expect("diagonal SPD"),
        noise_sd: 0.05_f64.sqrt(),
        basis: BasisSpec::linear(2),
        feasible: FeasibleSet::UnitSphere { dim: 2 },
        init: InitProtocol::RandomFromInput { count: 4, normalize: false },
    }
}

/// Coefficients `â_m = (1 + 40 (m/10)³) · 10⁻³`, `m = 1..20`.
pub fn linear20d_coefficients() -> DVector<f64> {
    DVector::from_fn(20, |k, _| {
        let m = (k + 1) as f64;
        (1.0 + 40.0 * (m / 10.0).powi(3)) * 1e-3
    })
}

/// The variance formula exactly as stated; negative for `m ≤ 6`.
pub fn linear20d_variances_literal() -> Vec<f64> {
    (1..=20)
        .map(|m| (0.25 + (m as f64 - 10.0).powi(3) / 128.0) * 0.1)
        .collect()
}

/// Input variances under an explicit sign resolution; all positive.
pub fn linear20d_variances(reading: VarianceReading) -> Vec<f64> {
    match reading {
        VarianceReading::AbsoluteCubed => (1..=20)
            .map(|m| (0.25 + (m as f64 - 10.0).abs().powi(3) / 128.0) * 0.1)
            .collect(),
        VarianceReading::AbsoluteWhole => linear20d_variances_literal()
            .into_iter()
            .map(f64::abs)
            .collect(),
    }
}

/// 20-D linear system. The variance sign defect must be resolved by the
/// caller; there is no default reading.
pub fn make_linear_20d(noise: NoiseCase, reading: VarianceReading) -> BenchmarkSystem {
    let variances = linear20d_variances(reading);
    let (noise_var, name): (f64, _) = match noise {
        NoiseCase::LowNoise => (0.05, "linear20d-lownoise"),
        NoiseCase::HighNoise => (0.5, "linear20d-highnoise"),
    };
    BenchmarkSystem {
        name: name.to_string(),
        map: TrueMap::Linear(linear20d_coefficients()),
        input_dist: InputDistribution::diagonal(&variances).expect("positive variances"),
        noise_sd: noise_var.sqrt(),
        basis: BasisSpec::linear(20),
        feasible: FeasibleSet::UnitSphere { dim: 20 },
        init: InitProtocol::OnePerAxis,
    }
}

/// 2-D nonlinear system with the five-monomial model basis.
pub fn make_nonlinear_2d(case: NonlinearCase) -> BenchmarkSystem {
    let (coeffs, variances, name) = match case {
        NonlinearCase::I => ([1e-2, 5.0, 0.0, 1e2], [2e-1, 5e-3], "nonlinear2d-case1"),
        NonlinearCase::II => ([10.0, 5.0, 0.0, 1e2], [2e-3, 5e-3], "nonlinear2d-case2"),
    };
    BenchmarkSystem {
        name: name.to_string(),
        map: TrueMap::OddCubic2(coeffs),
        input_dist: InputDistribution::diagonal(&variances).expect("diagonal SPD"),
        noise_sd: 1e-2, // σ_V² = 10⁻⁴
        basis: BasisSpec::odd_cubic_2d(),
        feasible: FeasibleSet::Disk { radius: 2.0 },
        init: InitProtocol::RandomFromInput { count: 2, normalize: false },
    }
}

/// All nameable systems. 20-D names require a variance reading.
pub fn system_by_name(name: &str, reading: Option<VarianceReading>) -> Result<BenchmarkSystem> {
    let names = "linear2d-case1, linear2d-case2, linear20d-lownoise, linear20d-highnoise, \
                 nonlinear2d-case1, nonlinear2d-case2";
    match name {
        "linear2d-case1" => Ok(make_linear_2d(LinearCase::I)),
        "linear2d-case2" => Ok(make_linear_2d(LinearCase::II)),
        "nonlinear2d-case1" => Ok(make_nonlinear_2d(NonlinearCase::I)),
        "nonlinear2d-case2" => Ok(make_nonlinear_2d(NonlinearCase::II)),
        "linear20d-lownoise" | "linear20d-highnoise" => {
            let reading = reading.ok_or_else(|| {
                OwlError::InvalidArgument(
                    "linear20d systems need an explicit variance_reading \
                     (abs-cubed or abs-whole): the stated variance formula is \
                     negative for m <= 6"
                        .into(),
                )
            })?;
            let case = if name == "linear20d-lownoise" {
                NoiseCase::LowNoise
            } else {
                NoiseCase::HighNoise
            };
            Ok(make_linear_20d(case, reading))
        }
        other => Err(OwlError::UnknownName(other.into(), names.into())),
    }
}

pub const SYSTEM_NAMES: [&str; 6] = [
    "linear2d-case1",
    "linear2d-case2",
    "linear20d-lownoise",
    "linear20d-highnoise",
    "nonlinear2d-case1",
    "nonlinear2d-case2",
];

/// Closed-form output variance for linear maps over Gaussian input:
/// `aᵀ C a` (+ `(aᵀμ)²`-free since the metric uses the centered law).
fn linear_output_variance(a: &DVector<f64>, dist: &InputDistribution) -> f64 {
    a.dot(&(dist.covariance() * a))
}

/// Ground truth for a system: exact variance when the map is linear,
/// otherwise a seeded Monte-Carlo estimate of the deterministic output
/// variance (sharded, order-independent), with its standard error.
/// `with_pdf` also tabulates a reference output pdf with the same budget.
pub fn ground_truth(
    system: &BenchmarkSystem,
    n_mc: usize,
    seed: u64,
    with_pdf: bool,
) -> Result<GroundTruth> {
    if n_mc < 10_000 {
        return Err(OwlError::InsufficientData { needed: 10_000, got: n_mc });
    }
    let (variance, std_error, samples) = match (&system.map, with_pdf) {
        (TrueMap::Linear(a), false) => {
            (linear_output_variance(a, &system.input_dist), 0.0, None)
        }
        _ => {
            // One pass for the samples (needed for the pdf and the SE).
            const SHARD: usize = 8192;
            let n_shards = n_mc.div_ceil(SHARD);
            let mut ys = Vec::with_capacity(n_mc);
            for shard in 0..n_shards {
                let count = SHARD.min(n_mc - shard * SHARD);
                let mut rng = rng_from_seed(derive_seed(seed, shard as u64));
                for _ in 0..count {
                    let z = system.input_dist.sample_with(&mut rng);
                    ys.push(system.map.eval(&z));
                }
            }
            let nf = n_mc as f64;
            let mean = ys.iter().sum::<f64>() / nf;
            let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / nf;
            let m4 = ys.iter().map(|y| (y - mean).powi(4)).sum::<f64>() / nf;
            let se = ((m4 - var * var).max(0.0) / nf).sqrt();
            match &system.map {
                TrueMap::Linear(a) => (
                    linear_output_variance(a, &system.input_dist),
                    0.0,
                    Some(ys),
                ),
                _ => (var, se, Some(ys)),
            }
        }
    };
    let reference_pdf = if with_pdf {
        let ys = samples.expect("samples collected when pdf requested");
        Some((kde_density(&ys, 6.0)?, n_mc, seed))
    } else {
        None
    };
    Ok(GroundTruth {
        exact_output_variance: variance,
        variance_std_error: std_error,
        reference_pdf,
    })
}

/// Initial design matrix under the system's protocol. Rows are inputs.
pub fn initial_inputs(system: &BenchmarkSystem, seed: u64) -> DMatrix<f64> {
    match &system.init {
        InitProtocol::OnePerAxis => DMatrix::identity(
            system.input_dist.dim(),
            system.input_dist.dim(),
        ),
        InitProtocol::RandomFromInput { count, normalize } => {
            let mut rng = rng_from_seed(seed);
            let m = system.input_dist.dim();
            let mut x = DMatrix::zeros(*count, m);
            for i in 0..*count {
                let mut row = system.input_dist.sample_with(&mut rng);
                if *normalize {
                    row = row.normalize();
                }
                x.row_mut(i).copy_from(&row.transpose());
            }
            x
        }
    }
}
