//! Bayesian linear and basis regression with conjugate priors.
//!
//! The model is `y = A φ(x) + e`, `e ~ N(0, V)`, with a matrix-normal prior
//! on `A` that has column precision `K = α I` and mean zero. The posterior
//! is carried through the sufficient statistics
//!
//! ```text
//! S_xx = Φ Φᵀ + α I          (feature data correlation)
//! S_yx = Y Φᵀ                (cross statistic)
//! A_mean = S_yx S_xx⁻¹
//! ```
//!
//! and the predictive for a new input is `N(A_mean φ(x), V (1 + c))` with
//! the model-error factor `c = φ(x)ᵀ S_xx⁻¹ φ(x)`. With an inverse-gamma
//! prior on an unknown noise variance the predictive becomes Student-t and
//! `(α, ν)` can be chosen by an empirical-Bayes fixed point.
//!
//! `S_xx⁻¹` is always applied through a Cholesky factorization cached on
//! the posterior; hypothetical rank-one updates re-factorize, which is
//! cheap at the feature dimensions used here (s ≤ 64).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::function::gamma::digamma;

use crate::error::{OwlError, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stochastics::InputDistribution;

/// Feature map choice.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisKind {
    /// Identity features, `φ(x) = x`.
    Linear,
    /// Two-dimensional monomials `φ_j(z) = z_1^{i_j} z_2^{k_j}`.
    Monomials(Vec<(u32, u32)>),
}

/// A deterministic feature map together with its dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub input_dim: usize,
    pub feature_dim: usize,
}

impl BasisSpec {
    pub fn linear(input_dim: usize) -> Self {
        Self {
            kind: BasisKind::Linear,
            input_dim,
            feature_dim: input_dim,
        }
    }

    /// Monomial basis over a two-dimensional input.
    pub fn monomials(pairs: Vec<(u32, u32)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(OwlError::InvalidArgument("monomial list must be nonempty".into()));
        }
        let feature_dim = pairs.len();
        Ok(Self {
            kind: BasisKind::Monomials(pairs),
            input_dim: 2,
            feature_dim,
        })
    }

    /// The five odd monomials of order at most three:
    /// `{z_2, z_1, z_1 z_2, z_2^3, z_1^3}`.
    pub fn odd_cubic_2d() -> Self {
        Self::monomials(vec![(0, 1), (1, 0), (1, 1), (0, 3), (3, 0)]).expect("static basis")
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, BasisKind::Linear)
    }

    /// `φ(z)`.
    pub fn map(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            BasisKind::Linear => z.clone(),
            BasisKind::Monomials(pairs) => DVector::from_iterator(
                pairs.len(),
                pairs.iter().map(|&(i, j)| z[0].powi(i as i32) * z[1].powi(j as i32)),
            ),
        }
    }

    /// Jacobian `∂φ/∂z`, an `s x m` matrix.
    pub fn jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        match &self.kind {
            BasisKind::Linear => DMatrix::identity(self.feature_dim, self.input_dim),
            BasisKind::Monomials(pairs) => {
                let mut jac = DMatrix::zeros(pairs.len(), 2);
                for (row, &(i, j)) in pairs.iter().enumerate() {
                    if i > 0 {
                        jac[(row, 0)] =
                            i as f64 * z[0].powi(i as i32 - 1) * z[1].powi(j as i32);
                    }
                    if j > 0 {
                        jac[(row, 1)] =
                            j as f64 * z[0].powi(i as i32) * z[1].powi(j as i32 - 1);
                    }
                }
                jac
            }
        }
    }
}

/// Observation-noise treatment.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// Known noise variance `σ_V²`.
    KnownVariance(f64),
    /// Inverse-gamma prior on the noise variance with prior scale
    /// `σ_0²`, shape `ν`, and the coefficient prior scale `α` used
    /// alongside it.
    InferredVariance { sigma0_sq: f64, nu: f64, alpha: f64 },
}

impl NoiseModel {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            NoiseModel::KnownVariance(v) => *v > 0.0 && v.is_finite(),
            NoiseModel::InferredVariance { sigma0_sq, nu, alpha } => {
                *sigma0_sq > 0.0 && *nu > 0.0 && *alpha > 0.0
                    && sigma0_sq.is_finite() && nu.is_finite() && alpha.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(OwlError::InvalidArgument(
                "noise model scalars must be strictly positive and finite".into(),
            ))
        }
    }
}

/// Predictive family tag.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictiveFamily {
    Gaussian,
    /// Student-t with exponent parameter `dof = N + ν + 1`: the density is
    /// proportional to `[1 + (y-m)²/scale²]^{-dof/2}`, i.e. a standard
    /// location-scale t with `dof - 1` degrees of freedom.
    StudentT { dof: f64 },
}

/// Predictive distribution at one input point.
#[derive(Debug, Clone)]
pub struct PredictiveDistribution {
    pub mean: DVector<f64>,
    /// Gaussian: the full predictive covariance `V (1 + c)`.
    /// Student-t: the 1x1 squared scale `(σ²_{Y|X} + σ_0²)(1 + c)`.
    pub scale: DMatrix<f64>,
    /// Model-error factor `c = φ(x)ᵀ S_xx⁻¹ φ(x)`.
    pub c: f64,
    pub family: PredictiveFamily,
}

impl PredictiveDistribution {
    /// Predictive variance (scalar output). `None` when the Student-t
    /// moment does not exist.
    pub fn variance(&self) -> Option<f64> {
        match self.family {
            PredictiveFamily::Gaussian => Some(self.scale[(0, 0)]),
            PredictiveFamily::StudentT { dof } => {
                if dof > 3.0 {
                    Some(self.scale[(0, 0)] / (dof - 3.0))
                } else {
                    None
                }
            }
        }
    }

    /// Density at `y` for scalar output.
    pub fn density1(&self, y: f64) -> f64 {
        let m = self.mean[0];
        match self.family {
            PredictiveFamily::Gaussian => {
                let var = self.scale[(0, 0)];
                (-(y - m).powi(2) / (2.0 * var)).exp()
                    / (2.0 * std::f64::consts::PI * var).sqrt()
            }
            PredictiveFamily::StudentT { dof } => {
                let s_sq = self.scale[(0, 0)];
                let log_norm = statrs::function::gamma::ln_gamma(0.5 * dof)
                    - statrs::function::gamma::ln_gamma(0.5 * (dof - 1.0))
                    - 0.5 * (std::f64::consts::PI * s_sq).ln();
                (log_norm - 0.5 * dof * (1.0 + (y - m).powi(2) / s_sq).ln()).exp()
            }
        }
    }
}

/// Posterior sufficient statistics for the regression model.
#[derive(Debug, Clone)]
pub struct RegressionPosterior {
    basis: BasisSpec,
    s_xx: DMatrix<f64>,
    s_yx: DMatrix<f64>,
    sum_yy: DMatrix<f64>,
    mean_coeffs: DMatrix<f64>,
    alpha: f64,
    noise: NoiseModel,
    n_obs: usize,
    chol: Cholesky<f64, Dyn>,
}

impl RegressionPosterior {
    /// Fit from `N x m` inputs (rows are samples) and `N x d` outputs.
    /// `N = 0` is legal because `α > 0` keeps `S_xx` invertible.
    pub fn fit(
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        basis: BasisSpec,
        alpha: f64,
        noise: NoiseModel,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(OwlError::InvalidArgument("alpha must be strictly positive".into()));
        }
        noise.validate()?;
        let n = x.nrows();
        if y.nrows() != n {
            return Err(OwlError::DimensionMismatch(format!(
                "{} input rows but {} output rows",
                n,
                y.nrows()
            )));
        }
        if n > 0 && x.ncols() != basis.input_dim {
            return Err(OwlError::DimensionMismatch(format!(
                "inputs have {} columns but basis expects {}",
                x.ncols(),
                basis.input_dim
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(OwlError::NonFinite("regression data"));
        }
        let d = if n > 0 { y.ncols() } else { 1.max(y.ncols()) };
        if matches!(noise, NoiseModel::InferredVariance { .. }) && d != 1 {
            return Err(OwlError::ScalarOutputOnly { got: d });
        }

        let s = basis.feature_dim;
        let mut features = DMatrix::zeros(n, s);
        for i in 0..n {
            let phi = basis.map(&x.row(i).transpose());
            features.row_mut(i).copy_from(&phi.transpose());
        }
        let s_xx = features.transpose() * &features + alpha * DMatrix::identity(s, s);
        let s_yx = y.transpose() * &features;
        let sum_yy = y.transpose() * y;
        Self::from_stats(basis, s_xx, s_yx, sum_yy, alpha, noise, n)
    }

    fn from_stats(
        basis: BasisSpec,
        s_xx: DMatrix<f64>,
        s_yx: DMatrix<f64>,
        sum_yy: DMatrix<f64>,
        alpha: f64,
        noise: NoiseModel,
        n_obs: usize,
    ) -> Result<Self> {
        let chol = Cholesky::new(s_xx.clone()).ok_or(OwlError::NotPositiveDefinite)?;
        let mean_coeffs = chol.solve(&s_yx.transpose()).transpose();
        Ok(Self {
            basis,
            s_xx,
            s_yx,
            sum_yy,
            mean_coeffs,
            alpha,
            noise,
            n_obs,
            chol,
        })
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn s_xx(&self) -> &DMatrix<f64> {
        &self.s_xx
    }

    pub fn s_yx(&self) -> &DMatrix<f64> {
        &self.s_yx
    }

    pub fn sum_yy(&self) -> &DMatrix<f64> {
        &self.sum_yy
    }

    /// Mean-model coefficients `S_yx S_xx⁻¹`, a `d x s` matrix.
    pub fn mean_coeffs(&self) -> &DMatrix<f64> {
        &self.mean_coeffs
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn output_dim(&self) -> usize {
        self.s_yx.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.basis.feature_dim
    }

    /// Solve `S_xx v = b` through the cached factorization.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Dense `S_xx⁻¹` (used once per selection step by the criteria).
    pub fn s_xx_inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Lower Cholesky factor of `S_xx`.
    pub fn chol_lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Mean-model output at an input point.
    pub fn mean_output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.mean_coeffs * self.basis.map(x)
    }

    /// Model-error factor `c(x) = φ(x)ᵀ S_xx⁻¹ φ(x)`.
    pub fn model_error_c(&self, x: &DVector<f64>) -> f64 {
        self.feature_error_c(&self.basis.map(x))
    }

    /// `c` evaluated directly on a feature vector.
    pub fn feature_error_c(&self, phi: &DVector<f64>) -> f64 {
        phi.dot(&self.chol.solve(phi))
    }

    /// Residual of the defining relation `mean_coeffs S_xx - S_yx`,
    /// relative to `‖S_yx‖`.
    pub fn consistency_residual(&self) -> f64 {
        let lhs = &self.mean_coeffs * &self.s_xx;
        let num = (&lhs - &self.s_yx).norm();
        num / self.s_yx.norm().max(1e-300)
    }

    /// Predictive distribution at an input point.
    pub fn predict(&self, x: &DVector<f64>) -> Result<PredictiveDistribution> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(OwlError::NonFinite("prediction input"));
        }
        let phi = self.basis.map(x);
        let c = self.feature_error_c(&phi);
        let mean = &self.mean_coeffs * &phi;
        match &self.noise {
            NoiseModel::KnownVariance(v) => {
                let d = self.output_dim();
                Ok(PredictiveDistribution {
                    mean,
                    scale: DMatrix::identity(d, d) * (v * (1.0 + c)),
                    c,
                    family: PredictiveFamily::Gaussian,
                })
            }
            NoiseModel::InferredVariance { sigma0_sq, nu, .. } => {
                let resid = self.sigma_sq_y_given_x()?;
                let s_sq = (resid + sigma0_sq) * (1.0 + c);
                Ok(PredictiveDistribution {
                    mean,
                    scale: DMatrix::from_element(1, 1, s_sq),
                    c,
                    family: PredictiveFamily::StudentT {
                        dof: self.n_obs as f64 + nu + 1.0,
                    },
                })
            }
        }
    }

    /// Rank-one hypothetical update: `S'_xx = S_xx + φ(h) φ(h)ᵀ` with the
    /// mean-model pseudo-output, so `mean_coeffs` is unchanged exactly.
    /// The original posterior is untouched.
    pub fn hypothetical_update(&self, h: &DVector<f64>) -> Self {
        let phi = self.basis.map(h);
        let y0 = &self.mean_coeffs * &phi;
        let s_xx = &self.s_xx + &phi * phi.transpose();
        let s_yx = &self.s_yx + &y0 * phi.transpose();
        let sum_yy = &self.sum_yy + &y0 * y0.transpose();
        let chol = Cholesky::new(s_xx.clone())
            .expect("rank-one update preserves positive definiteness");
        Self {
            basis: self.basis.clone(),
            s_xx,
            s_yx,
            sum_yy,
            mean_coeffs: self.mean_coeffs.clone(),
            alpha: self.alpha,
            noise: self.noise.clone(),
            n_obs: self.n_obs + 1,
            chol,
        }
    }

    /// Residual statistic `σ²_{Y|X} = Y Yᵀ - (α + 1)⁻¹ S_yx S_xx⁻¹ S_yxᵀ`
    /// for scalar output; nonnegative.
    pub fn sigma_sq_y_given_x(&self) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(OwlError::ScalarOutputOnly { got: self.output_dim() });
        }
        let syx = self.s_yx.row(0).transpose();
        let explained = syx.dot(&self.chol.solve(&syx)) / (self.alpha + 1.0);
        Ok((self.sum_yy[(0, 0)] - explained).max(0.0))
    }

    /// Inverse-gamma posterior parameters `(shape, scale)` for the noise
    /// variance, in the convention where the density is proportional to
    /// `(σ²)^{-1 - shape/2} exp(-scale / (2σ²))`. The posterior mean is
    /// `scale / (shape - 2)` for `shape > 2`.
    pub fn noise_variance_posterior(&self) -> Result<(f64, f64)> {
        match &self.noise {
            NoiseModel::KnownVariance(_) => Err(OwlError::NoiseModeMismatch {
                required: "inferred-variance",
            }),
            NoiseModel::InferredVariance { sigma0_sq, nu, .. } => {
                let resid = self.sigma_sq_y_given_x()?;
                Ok((self.n_obs as f64 + nu, resid + sigma0_sq))
            }
        }
    }
}

/// Result of the evidence-maximization fixed point of the
/// unknown-variance model.
#[derive(Debug, Clone)]
pub struct EmpiricalBayesFit {
    pub alpha: f64,
    pub nu: f64,
    pub posterior: RegressionPosterior,
    pub iterations: usize,
    pub converged: bool,
    /// `(alpha, nu)` after each damped iteration.
    pub history: Vec<(f64, f64)>,
}

/// Jointly select `(α, ν)` by iterating the evidence fixed point
///
/// ```text
/// σ̂²    = (σ²_{Y|X} + ν) / (N + ν)
/// α     = s / (σ̂⁻² S_yx S_xx S_yxᵀ - s)
/// ν_new = ν [Ψ((N+ν)/2) - Ψ(ν/2)] / [ln(σ²_{Y|X}/ν + 1) + σ̂⁻² - 1]
/// ```
///
/// Each iterate is mixed 50/50 with the previous one to stabilize the
/// digamma equation. Stops when the maximum relative change falls below
/// `1e-8` or after 200 iterations; a nonpositive or non-finite iterate is
/// reported as divergence together with the iterate history.
pub fn empirical_bayes_fit(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    basis: BasisSpec,
    sigma0_sq: f64,
    init: (f64, f64),
) -> Result<EmpiricalBayesFit> {
    let n = x.nrows();
    if n < 2 {
        return Err(OwlError::InsufficientData { needed: 2, got: n });
    }
    if y.ncols() != 1 {
        return Err(OwlError::ScalarOutputOnly { got: y.ncols() });
    }
    if !(sigma0_sq > 0.0) {
        return Err(OwlError::InvalidArgument("sigma0_sq must be positive".into()));
    }
    let (mut alpha, mut nu) = init;
    if !(alpha > 0.0 && nu > 0.0) {
        return Err(OwlError::InvalidArgument("initial (alpha, nu) must be positive".into()));
    }

    let s = basis.feature_dim;
    let mut features = DMatrix::zeros(n, s);
    for i in 0..n {
        features
            .row_mut(i)
            .copy_from(&basis.map(&x.row(i).transpose()).transpose());
    }
    let gram = features.transpose() * &features;
    let syx = (y.transpose() * &features).row(0).transpose();
    let yy = (y.transpose() * y)[(0, 0)];
    let nf = n as f64;
    let sf = s as f64;

    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..200 {
        iterations = iter + 1;
        let s_xx = &gram + alpha * DMatrix::identity(s, s);
        let chol = Cholesky::new(s_xx.clone()).ok_or(OwlError::NotPositiveDefinite)?;
        let resid = (yy - syx.dot(&chol.solve(&syx)) / (alpha + 1.0)).max(0.0);

        let sigma_hat_sq = (resid + nu) / (nf + nu);
        let quad = syx.dot(&(&s_xx * &syx));
        let alpha_raw = sf / (quad / sigma_hat_sq - sf);
        let nu_raw = nu * (digamma(0.5 * (nf + nu)) - digamma(0.5 * nu))
            / ((resid / nu + 1.0).ln() + 1.0 / sigma_hat_sq - 1.0);

        let alpha_next = 0.5 * (alpha + alpha_raw);
        let nu_next = 0.5 * (nu + nu_raw);
        history.push((alpha_next, nu_next));
        if !(alpha_next > 0.0 && nu_next > 0.0)
            || !alpha_next.is_finite()
            || !nu_next.is_finite()
        {
            return Err(OwlError::Divergence {
                iterations,
                history,
            });
        }
        let delta = ((alpha_next - alpha).abs() / alpha_next.abs().max(1e-300))
            .max((nu_next - nu).abs() / nu_next.abs().max(1e-300));
        alpha = alpha_next;
        nu = nu_next;
        if delta < 1e-8 {
            converged = true;
            break;
        }
    }

    let noise = NoiseModel::InferredVariance {
        sigma0_sq,
        nu,
        alpha,
    };
    let posterior = RegressionPosterior::fit(x, y, basis, alpha, noise)?;
    Ok(EmpiricalBayesFit {
        alpha,
        nu,
        posterior,
        iterations,
        converged,
        history,
    })
}

/// Monte-Carlo feature moments `(μ_φ, C_φφ)` under the input law.
#[derive(Debug, Clone)]
pub struct BasisMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl BasisMoments {
    /// `R_φφ = C_φφ + μ_φ μ_φᵀ`.
    pub fn correlation(&self) -> DMatrix<f64> {
        &self.covariance + &self.mean * self.mean.transpose()
    }

    /// Exact moments for the identity feature map.
    pub fn from_distribution(dist: &InputDistribution) -> Self {
        Self {
            mean: dist.mean().clone(),
            covariance: dist.covariance().clone(),
        }
    }
}

/// Estimate feature moments with `n_mc` seeded draws. Draws are generated
/// in fixed-size shards with per-shard derived seeds, so the result does
/// not depend on evaluation order.
pub fn basis_moments(
    basis: &BasisSpec,
    dist: &InputDistribution,
    n_mc: usize,
    seed: u64,
) -> Result<BasisMoments> {
    if n_mc < 10_000 {
        return Err(OwlError::InsufficientData {
            needed: 10_000,
            got: n_mc,
        });
    }
    if dist.dim() != basis.input_dim {
        return Err(OwlError::DimensionMismatch(format!(
            "distribution dimension {} but basis expects {}",
            dist.dim(),
            basis.input_dim
        )));
    }
    let s = basis.feature_dim;
    const SHARD: usize = 8192;
    let n_shards = n_mc.div_ceil(SHARD);
    let mut sum = DVector::zeros(s);
    let mut sum_outer = DMatrix::zeros(s, s);
    for shard in 0..n_shards {
        let count = SHARD.min(n_mc - shard * SHARD);
        let mut rng = rng_from_seed(derive_seed(seed, shard as u64));
        for _ in 0..count {
            let z = dist.sample_with(&mut rng);
            let phi = basis.map(&z);
            sum += &phi;
            sum_outer += &phi * phi.transpose();
        }
    }
    let nf = n_mc as f64;
    let mean = sum / nf;
    let raw = sum_outer / nf - &mean * mean.transpose();
    let covariance = 0.5 * (&raw + raw.transpose());
    Ok(BasisMoments { mean, covariance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn case_i_data(n: usize, noise_sd: f64, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let dist = InputDistribution::diagonal(&[1.4, 0.6]).unwrap();
        let x = dist.sample(n, seed);
        let mut rng = rng_from_seed(derive_seed(seed, 1));
        let y = DMatrix::from_fn(n, 1, |i, _| {
            0.8 * x[(i, 0)] + 1.3 * x[(i, 1)]
                + noise_sd * rng.sample::<f64, _>(StandardNormal)
        });
        (x, y)
    }

    #[test]
    fn prior_only_fit() {
        let post = RegressionPosterior::fit(
            &DMatrix::zeros(0, 2),
            &DMatrix::zeros(0, 1),
            BasisSpec::linear(2),
            0.1,
            NoiseModel::KnownVariance(0.05),
        )
        .unwrap();
        assert_relative_eq!(post.s_xx()[(0, 0)], 0.1);
        assert_relative_eq!(post.s_xx()[(1, 1)], 0.1);
        assert_eq!(post.mean_coeffs().iter().filter(|v| **v != 0.0).count(), 0);
    }

    #[test]
    fn noiseless_fit_recovers_coefficients() {
        let (x, y) = case_i_data(200, 0.0, 3);
        let post = RegressionPosterior::fit(
            &x,
            &y,
            BasisSpec::linear(2),
            1e-9,
            NoiseModel::KnownVariance(0.05),
        )
        .unwrap();
        assert_relative_eq!(post.mean_coeffs()[(0, 0)], 0.8, epsilon = 1e-6);
        assert_relative_eq!(post.mean_coeffs()[(0, 1)], 1.3, epsilon = 1e-6);
        let pred = post.predict(&DVector::from_column_slice(&[1.0, 0.0])).unwrap();
        assert_relative_eq!(pred.mean[0], 0.8, epsilon = 1e-5);
    }

    #[test]
    fn cubic_basis_feature_map() {
        let basis = BasisSpec::odd_cubic_2d();
        assert_eq!(basis.feature_dim, 5);
        let phi = basis.map(&DVector::from_column_slice(&[1.0, 1.0]));
        assert_eq!(phi.as_slice(), &[1.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn monomial_jacobian_matches_finite_differences() {
        let basis = BasisSpec::odd_cubic_2d();
        let z = DVector::from_column_slice(&[0.7, -0.4]);
        let jac = basis.jacobian(&z);
        let eps = 1e-6;
        for k in 0..2 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += eps;
            zm[k] -= eps;
            let fd = (basis.map(&zp) - basis.map(&zm)) / (2.0 * eps);
            for row in 0..5 {
                assert_relative_eq!(jac[(row, k)], fd[row], epsilon = 1e-6, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn prior_only_model_error_is_norm_over_alpha() {
        let post = RegressionPosterior::fit(
            &DMatrix::zeros(0, 2),
            &DMatrix::zeros(0, 1),
            BasisSpec::linear(2),
            1.0,
            NoiseModel::KnownVariance(0.05),
        )
        .unwrap();
        let x = DVector::from_column_slice(&[2f64.sqrt() / 2.0, 2f64.sqrt() / 2.0]);
        assert_relative_eq!(post.model_error_c(&x), 1.0, epsilon = 1e-12);
        let pred = post.predict(&x).unwrap();
        assert_relative_eq!(pred.c, 1.0, epsilon = 1e-12);
        assert_relative_eq!(pred.variance().unwrap(), 0.05 * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn model_error_after_unit_update() {
        // S_xx = I, then add e1: c(e1) halves, c(e2) unchanged.
        let post = RegressionPosterior::fit(
            &DMatrix::zeros(0, 2),
            &DMatrix::zeros(0, 1),
            BasisSpec::linear(2),
            1.0,
            NoiseModel::KnownVariance(1.0),
        )
        .unwrap();
        let e1 = DVector::from_column_slice(&[1.0, 0.0]);
        let e2 = DVector::from_column_slice(&[0.0, 1.0]);
        let updated = post.hypothetical_update(&e1);
        assert_relative_eq!(updated.model_error_c(&e1), 0.5, epsilon = 1e-12);
        assert_relative_eq!(updated.model_error_c(&e2), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn model_error_matches_eigendecomposition() {
        let (x, y) = case_i_data(40, 0.2, 17);
        let post = RegressionPosterior::fit(
            &x,
            &y,
            BasisSpec::linear(2),
            0.1,
            NoiseModel::KnownVariance(0.05),
        )
        .unwrap();
        let eig = nalgebra::SymmetricEigen::new(post.s_xx().clone());
        let probe = DVector::from_column_slice(&[0.3, -0.9]);
        let coords = eig.eigenvectors.transpose() * &probe;
        let via_eig: f64 = coords
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(chi, lambda)| chi * chi / lambda)
            .sum();
        assert_relative_eq!(post.model_error_c(&probe), via_eig, max_relative = 1e-10);
    }

    #[test]
    fn hypothetical_update_keeps_mean_and_adds_rank_one() {
        let (x, y) = case_i_data(25, 0.2, 5);
        let post = RegressionPosterior::fit(
            &x,
            &y,
            BasisSpec::linear(2),
            0.1,
            NoiseModel::KnownVariance(0.05),
        )
        .unwrap();
        let h = DVector::from_column_slice(&[0.6, -0.8]);
        let updated = post.hypothetical_update(&h);
        assert_eq!(updated.mean_coeffs(), post.mean_coeffs());
        assert!(updated.consistency_residual() < 1e-9);
        let expected = post.s_xx() + &h * h.transpose();
        assert_relative_eq!((updated.s_xx() - expected).norm(), 0.0, epsilon = 1e-12);

        let zero = post.hypothetical_update(&DVector::zeros(2));
        assert_eq!(zero.s_xx(), post.s_xx());
    }

    #[test]
    fn repeated_sampling_shrinks_model_error() {
        let mut post = RegressionPosterior::fit(
            &DMatrix::zeros(0, 2),
            &DMatrix::zeros(0, 1),
            BasisSpec::linear(2),
            0.5,
            NoiseModel::KnownVariance(1.0),
        )
        .unwrap();
        let h = DVector::from_column_slice(&[0.8, 0.6]);
        let mut last = post.model_error_c(&h);
        for _ in 0..5 {
            post = post.hypothetical_update(&h);
            let c = post.model_error_c(&h);
            assert!(c < last);
            last = c;
        }
    }

    #[test]
    fn noise_posterior_prior_passthrough_and_mode_error() {
        let prior_only = RegressionPosterior::fit(
            &DMatrix::zeros(0, 2),
            &DMatrix::zeros(0, 1),
            BasisSpec::linear(2),
            0.1,
            NoiseModel::InferredVariance {
                sigma0_sq: 0.02,
                nu: 3.0,
                alpha: 0.1,
            },
        )
        .unwrap();
        let (shape, scale) = prior_only.noise_variance_posterior().unwrap();
        assert_relative_eq!(shape, 3.0);
        assert_relative_eq!(scale, 0.02);

        let known = RegressionPosterior::fit(
            &DMatrix::zeros(0, 2),
            &DMatrix::zeros(0, 1),
            BasisSpec::linear(2),
            0.1,
            NoiseModel::KnownVariance(0.05),
        )
        .unwrap();
        assert!(matches!(
            known.noise_variance_posterior(),
            Err(OwlError::NoiseModeMismatch { .. })
        ));
    }

    #[test]
    fn noise_posterior_mean_recovers_simulated_variance() {
        // y = x + e, e ~ N(0, 0.05); posterior mean of the noise variance
        // should land within 20% of the truth.
        let n = 500;
        let dist = InputDistribution::standard(1);
        let x = dist.sample(n, 41);
        let mut rng = rng_from_seed(derive_seed(41, 9));
        let y = DMatrix::from_fn(n, 1, |i, _| {
            x[(i, 0)] + 0.05_f64.sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        let post = RegressionPosterior::fit(
            &x,
            &y,
            BasisSpec::linear(1),
            1e-6,
            NoiseModel::InferredVariance {
                sigma0_sq: 0.01,
                nu: 1.0,
                alpha: 1e-6,
            },
        )
        .unwrap();
        let (shape, scale) = post.noise_variance_posterior().unwrap();
        let mean = scale / (shape - 2.0);
        assert!((mean - 0.05).abs() / 0.05 < 0.2, "posterior mean {mean}");
    }

    #[test]
    fn hypothetical_residual_update_identity() {
        // σ²_{Y'|X'} = σ²_{Y|X} + α/(1+α) (mean·φ(h))².
        let (x, y) = case_i_data(30, 0.2, 23);
        let alpha = 0.3;
        let post = RegressionPosterior::fit(
            &x,
            &y,
            BasisSpec::linear(2),
            alpha,
            NoiseModel::InferredVariance {
                sigma0_sq: 0.01,
                nu: 2.0,
                alpha,
            },
        )
        .unwrap();
        let h = DVector::from_column_slice(&[0.5, 0.5]);
        let y0 = post.mean_output(&h)[0];
        let expected = post.sigma_sq_y_given_x().unwrap() + alpha / (1.0 + alpha) * y0 * y0;
        let updated = post.hypothetical_update(&h);
        assert_relative_eq!(
            updated.sigma_sq_y_given_x().unwrap(),
            expected,
            max_relative = 1e-9
        );
    }

    #[test]
    fn student_t_predictive_integrates_to_one() {
        let (x, y) = case_i_data(20, 0.2, 29);
        let post = RegressionPosterior::fit(
            &x,
            &y,
            BasisSpec::linear(2),
            0.1,
            NoiseModel::InferredVariance {
                sigma0_sq: 0.01,
                nu: 2.0,
                alpha: 0.1,
            },
        )
        .unwrap();
        let pred = post.predict(&DVector::from_column_slice(&[0.4, -0.2])).unwrap();
        assert!(matches!(pred.family, PredictiveFamily::StudentT { .. }));
        // Trapezoid quadrature across ±60 scales.
        let s = pred.scale[(0, 0)].sqrt();
        let (lo, hi) = (pred.mean[0] - 60.0 * s, pred.mean[0] + 60.0 * s);
        let n = 200_001;
        let step = (hi - lo) / (n as f64 - 1.0);
        let mut mass = 0.0;
        let mut prev = pred.density1(lo);
        for i in 1..n {
            let cur = pred.density1(lo + i as f64 * step);
            mass += 0.5 * step * (prev + cur);
            prev = cur;
        }
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }

    #[test]
    fn empirical_bayes_converges_and_satisfies_fixed_point() {
        let (x, y) = case_i_data(30, 0.05_f64.sqrt(), 71);
        let fit = empirical_bayes_fit(&x, &y, BasisSpec::linear(2), 0.01, (0.1, 1.0)).unwrap();
        assert!(fit.converged, "not converged in {} iterations", fit.iterations);

        // The converged pair satisfies all three equations simultaneously.
        let post = &fit.posterior;
        let resid = post.sigma_sq_y_given_x().unwrap();
        let nf = 30.0;
        let sigma_hat_sq = (resid + fit.nu) / (nf + fit.nu);
        let syx = post.s_yx().row(0).transpose();
        let quad = syx.dot(&(post.s_xx() * &syx));
        let alpha_fp = 2.0 / (quad / sigma_hat_sq - 2.0);
        let nu_fp = fit.nu * (digamma(0.5 * (nf + fit.nu)) - digamma(0.5 * fit.nu))
            / ((resid / fit.nu + 1.0).ln() + 1.0 / sigma_hat_sq - 1.0);
        assert_relative_eq!(alpha_fp, fit.alpha, max_relative = 1e-6);
        assert_relative_eq!(nu_fp, fit.nu, max_relative = 1e-6);

        // Determinism.
        let again = empirical_bayes_fit(&x, &y, BasisSpec::linear(2), 0.01, (0.1, 1.0)).unwrap();
        assert_eq!(again.alpha.to_bits(), fit.alpha.to_bits());
        assert_eq!(again.nu.to_bits(), fit.nu.to_bits());
    }

    #[test]
    fn empirical_bayes_shrinkage_weakens_with_cleaner_data() {
        // Data on a line through the origin: as the noise shrinks the
        // evidence favors weaker shrinkage, i.e. smaller alpha in
        // S_xx = X Xᵀ + α I.
        let mut alphas = Vec::new();
        for noise_sd in [0.5, 0.1, 0.02] {
            let dist = InputDistribution::standard(1);
            let x = dist.sample(60, 13);
            let mut rng = rng_from_seed(derive_seed(13, 2));
            let y = DMatrix::from_fn(60, 1, |i, _| {
                2.0 * x[(i, 0)] + noise_sd * rng.sample::<f64, _>(StandardNormal)
            });
            let fit = empirical_bayes_fit(&x, &y, BasisSpec::linear(1), 0.01, (0.1, 1.0)).unwrap();
            alphas.push(fit.alpha);
        }
        assert!(
            alphas[0] > alphas[1] && alphas[1] > alphas[2],
            "alphas not monotone: {alphas:?}"
        );
    }

    #[test]
    fn basis_moments_linear_matches_distribution() {
        let dist = InputDistribution::diagonal(&[1.4, 0.6]).unwrap();
        let basis = BasisSpec::linear(2);
        let moments = basis_moments(&basis, &dist, 200_000, 7).unwrap();
        assert!(moments.mean.norm() < 0.01);
        assert_relative_eq!(moments.covariance[(0, 0)], 1.4, max_relative = 0.02);
        assert_relative_eq!(moments.covariance[(1, 1)], 0.6, max_relative = 0.02);
    }

    #[test]
    fn basis_moments_cubic_monomial() {
        // Var[z³] = E[z⁶] = 15 σ⁶ for zero-mean Gaussian z.
        let sigma_sq: f64 = 0.5;
        let dist = InputDistribution::diagonal(&[sigma_sq, 1.0]).unwrap();
        let basis = BasisSpec::monomials(vec![(3, 0)]).unwrap();
        let n = 400_000;
        let moments = basis_moments(&basis, &dist, n, 19).unwrap();
        let target = 15.0 * sigma_sq.powi(3);
        // 3 standard errors of the MC variance estimate (kurtosis-heavy
        // summand, SE estimated from the exact eighth moment).
        let se = ((10395.0 - 225.0) * sigma_sq.powi(6) / n as f64).sqrt();
        assert!(moments.mean[0].abs() < 3.0 * (target / n as f64).sqrt() * 3.0);
        assert!(
            (moments.covariance[(0, 0)] - target).abs() < 3.0 * se,
            "var {} vs {target}",
            moments.covariance[(0, 0)]
        );
    }

    #[test]
    fn basis_moments_cov_is_positive_semidefinite() {
        let dist = InputDistribution::diagonal(&[0.2, 0.005]).unwrap();
        let basis = BasisSpec::odd_cubic_2d();
        let moments = basis_moments(&basis, &dist, 50_000, 3).unwrap();
        let eig = nalgebra::SymmetricEigen::new(moments.covariance.clone());
        assert!(eig.eigenvalues.iter().all(|l| *l > -1e-10), "{:?}", eig.eigenvalues);
    }
}
