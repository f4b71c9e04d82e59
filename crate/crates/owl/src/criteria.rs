//! Acquisition criteria and their analytic gradients.
//!
//! Every criterion scores a hypothetical next input `h` through the
//! rank-one update `S' = S_xx + φ(h) φ(h)ᵀ`, which leaves the mean model
//! invariant. With `u = S⁻¹ φ(h)` and `γ = 1 + φ(h)ᵀ u`, Sherman-Morrison
//! gives `S'⁻¹ = S⁻¹ - u uᵀ / γ`, so after one `O(s³)` precomputation per
//! selection step each candidate costs `O(s²)`:
//!
//! * mean model error `μ_c(h) = tr[S'⁻¹ R]`, `R = C + μ μᵀ`;
//! * its variance `σ_c² = 2 tr[S'⁻¹ C S'⁻¹ C] + 4 μᵀ S'⁻¹ C S'⁻¹ μ`;
//! * the output-weighted criterion, assembled from the Gaussian
//!   quadratic-form identities with weight `p1 + p2 (y - μ_y)²`
//!   approximating the inverse output density:
//!
//!   ```text
//!   Q(h)/σ_V² = (p1 + p2 c0) (1 + tr[S'⁻¹C] + μᵀS'⁻¹μ)
//!             + 2 p2 wᵀ C S'⁻¹ C w,          w = S⁻¹ S_yxᵀ,
//!   c0 = wᵀ C w
//!   ```
//!
//! * mutual information, either through a Gaussian second-order
//!   approximation (`I_G`) or directly by estimating the output entropy
//!   with a kernel density (`I`), plus the unknown-noise-variance
//!   variants `Î` and `Î_G`.
//!
//! Monte-Carlo terms use common random numbers: within one selection step
//! every candidate `h` sees the same input, coefficient, noise and
//! variance draws, so criterion comparisons are not corrupted by sampling
//! noise and the argmax is stable.
//!
//! Criteria that drop `h`-independent constants (`I`, `I_G`, `Î`, `Î_G`
//! drop nothing here except the `R` terms noted per function; `Q` is
//! reported without its `σ_V²` prefactor) are comparable only within one
//! criterion, never across criteria.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{OwlError, Result};
use crate::regression::{BasisMoments, NoiseModel, RegressionPosterior};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stochastics::{entropy_1d, kde_density, InputDistribution};

/// Minimum Monte-Carlo budget accepted by the sampling-based criteria.
pub const MIN_MC_BUDGET: usize = 1_000;

/// Whether a criterion is minimized or maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriterionSense {
    Minimize,
    Maximize,
}

/// Weight mode for the output-weighted criterion.
#[derive(Debug, Clone, PartialEq)]
pub enum QWeightMode {
    /// `(p1, p2) = (0, 1)`: the weight is fit over the whole real axis.
    Infinity,
    /// Least-squares fit of the inverse Gaussian output density over
    /// `[μ_y, μ_y + β σ_y]`.
    Beta(f64),
    Explicit { p1: f64, p2: f64 },
}

/// Resolved weights of the quadratic expansion of `1 / p_y`.
///
/// `p_lin` weights an optional linear term for skewed output densities;
/// it defaults to zero and vanishes for zero-mean input either way.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QWeights {
    pub p1: f64,
    pub p2: f64,
    pub p_lin: f64,
}

/// Tagged criterion choice with its Monte-Carlo parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum CriterionSpec {
    MuC,
    SigmaC,
    MutualInfoDirect { n_mc: usize, seed: u64 },
    MutualInfoGaussian { n_mc: usize, seed: u64 },
    Q { weights: QWeightMode },
    MutualInfoUnknownVar { n_mc: usize, seed: u64 },
    MutualInfoUnknownVarGaussian { n_mc: usize, seed: u64 },
}

impl CriterionSpec {
    pub fn sense(&self) -> CriterionSense {
        match self {
            CriterionSpec::MuC | CriterionSpec::SigmaC | CriterionSpec::Q { .. } => {
                CriterionSense::Minimize
            }
            _ => CriterionSense::Maximize,
        }
    }

    /// Analytic gradients exist for `MuC` and `Q` only.
    pub fn has_gradient(&self) -> bool {
        matches!(self, CriterionSpec::MuC | CriterionSpec::Q { .. })
    }

    pub fn needs_shared_samples(&self) -> bool {
        !matches!(self, CriterionSpec::MuC | CriterionSpec::SigmaC | CriterionSpec::Q { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            CriterionSpec::MuC => "mu_c",
            CriterionSpec::SigmaC => "sigma_c",
            CriterionSpec::MutualInfoDirect { .. } => "mi",
            CriterionSpec::MutualInfoGaussian { .. } => "mi_gauss",
            CriterionSpec::Q { .. } => "q",
            CriterionSpec::MutualInfoUnknownVar { .. } => "mi_unknown_var",
            CriterionSpec::MutualInfoUnknownVarGaussian { .. } => "mi_unknown_var_gauss",
        }
    }
}

/// A criterion evaluation: the value and, for `MuC` and `Q`, the gradient
/// with respect to the candidate in input space.
#[derive(Debug, Clone)]
pub struct CriterionValue {
    pub value: f64,
    pub gradient: Option<DVector<f64>>,
}

/// Resolve `(p1, p2)` from the weight mode.
///
/// For `Beta(β)` the Gaussian closed form is
///
/// ```text
/// p1 = sqrt(2π) σ_y
/// p2 = 5 sqrt(2π) / (β⁵ σ_y) · (∫₀^β z² e^{z²/2} dz - β³/3)
/// ```
///
/// The bracket is computed by a power series for `β ≤ 1` (the direct
/// difference cancels catastrophically as `β → 0`) and by adaptive
/// Simpson quadrature otherwise. As `β → 0` the weights approach
/// `(sqrt(2π) σ_y, sqrt(2π) / (2 σ_y))`.
pub fn q_weights(sigma_y0: f64, mode: &QWeightMode) -> Result<QWeights> {
    if !(sigma_y0 > 0.0 && sigma_y0.is_finite()) {
        return Err(OwlError::InvalidArgument("sigma_y0 must be positive".into()));
    }
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    match mode {
        QWeightMode::Infinity => Ok(QWeights { p1: 0.0, p2: 1.0, p_lin: 0.0 }),
        QWeightMode::Explicit { p1, p2 } => {
            if !(p1.is_finite() && p2.is_finite() && *p2 >= 0.0) {
                return Err(OwlError::InvalidArgument(
                    "explicit weights must be finite with p2 >= 0".into(),
                ));
            }
            Ok(QWeights { p1: *p1, p2: *p2, p_lin: 0.0 })
        }
        QWeightMode::Beta(beta) => {
            let beta = *beta;
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(OwlError::InvalidArgument("beta must be positive".into()));
            }
            let bracket = if beta <= 1.0 {
                // ∫₀^β z² e^{z²/2} dz - β³/3 = Σ_{k≥1} β^{2k+3} / (2^k k! (2k+3))
                let beta_sq = beta * beta;
                let mut term = beta * beta_sq; // β^{2k+1} running power, k = 0
                let mut factor = 1.0; // 2^k k!
                let mut acc = 0.0;
                for k in 1..60 {
                    term *= beta_sq;
                    factor *= 2.0 * k as f64;
                    let contrib = term / (factor * (2 * k + 3) as f64);
                    acc += contrib;
                    if contrib < acc.abs() * 1e-16 {
                        break;
                    }
                }
                acc
            } else {
                let integral =
                    adaptive_simpson(&|z: f64| z * z * (0.5 * z * z).exp(), 0.0, beta, 1e-12);
                integral - beta.powi(3) / 3.0
            };
            Ok(QWeights {
                p1: sqrt_2pi * sigma_y0,
                p2: 5.0 * sqrt_2pi / (beta.powi(5) * sigma_y0) * bracket,
                p_lin: 0.0,
            })
        }
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 40)
}

/// Common random numbers for the Monte-Carlo criteria, shared by every
/// candidate within one selection step.
#[derive(Debug, Clone)]
pub struct SharedSamples {
    /// `n x s` feature rows `φ(x_i)` of the input draws.
    features: DMatrix<f64>,
    /// Baseline model error `c_i = φ_iᵀ S⁻¹ φ_i`.
    c_base: DVector<f64>,
    /// Mean-model outputs `Φ w` (scalar output only).
    base_mean: Option<DVector<f64>>,
    /// Standard normals for coefficient draws, `n x s`.
    coeff_normals: DMatrix<f64>,
    /// Standard normals for observation noise, length `n`.
    noise_normals: DVector<f64>,
    /// Chi-square draws for the inverse-gamma variance chain.
    chi_sq: Option<DVector<f64>>,
}

impl SharedSamples {
    /// Draw the per-step sample set. Streams for inputs, coefficients,
    /// noise and variance draws derive independently from `seed`.
    pub fn generate(
        post: &RegressionPosterior,
        dist: &InputDistribution,
        n_mc: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_mc < MIN_MC_BUDGET {
            return Err(OwlError::InsufficientData { needed: MIN_MC_BUDGET, got: n_mc });
        }
        let s = post.feature_dim();
        let basis = post.basis();
        if dist.dim() != basis.input_dim {
            return Err(OwlError::DimensionMismatch(format!(
                "distribution dimension {} but basis expects {}",
                dist.dim(),
                basis.input_dim
            )));
        }

        let mut input_rng = rng_from_seed(derive_seed(seed, 0));
        let mut features = DMatrix::zeros(n_mc, s);
        for i in 0..n_mc {
            let z = dist.sample_with(&mut input_rng);
            features.row_mut(i).copy_from(&basis.map(&z).transpose());
        }

        let solved = post.s_xx_inverse() * features.transpose(); // s x n
        let c_base =
            DVector::from_fn(n_mc, |i, _| features.row(i).dot(&solved.column(i).transpose()));

        let base_mean = (post.output_dim() == 1)
            .then(|| &features * post.mean_coeffs().row(0).transpose());

        let mut coeff_rng = rng_from_seed(derive_seed(seed, 1));
        let coeff_normals =
            DMatrix::from_fn(n_mc, s, |_, _| coeff_rng.sample::<f64, _>(StandardNormal));
        let mut noise_rng = rng_from_seed(derive_seed(seed, 2));
        let noise_normals =
            DVector::from_fn(n_mc, |_, _| noise_rng.sample::<f64, _>(StandardNormal));

        let chi_sq = match post.noise() {
            NoiseModel::InferredVariance { nu, .. } => {
                // Posterior dof after the hypothetical point joins: N + 1 + ν.
                let dof = post.n_obs() as f64 + 1.0 + nu;
                let gamma = rand_distr::Gamma::new(0.5 * dof, 2.0).map_err(|e| {
                    OwlError::InvalidArgument(format!("invalid chi-square dof: {e}"))
                })?;
                let mut rng = rng_from_seed(derive_seed(seed, 3));
                Some(DVector::from_fn(n_mc, |_, _| rng.sample(gamma)))
            }
            NoiseModel::KnownVariance(_) => None,
        };

        Ok(Self {
            features,
            c_base,
            base_mean,
            coeff_normals,
            noise_normals,
            chi_sq,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

/// Per-step precomputation for criterion evaluation.
///
/// Holds `S⁻¹` and the feature-moment contractions so that a candidate
/// evaluation is `O(s²)` plus (for the information criteria)
/// `O(n_mc · s)`.
pub struct CriterionContext<'a> {
    post: &'a RegressionPosterior,
    feat_mean: DVector<f64>,
    feat_cov: DMatrix<f64>,
    s_inv: DMatrix<f64>,
    s_inv_mean: DVector<f64>,
    mu_s_inv_mu: f64,
    tr_s_inv_cov: f64,
    /// `C S⁻¹ C`, for `σ_c`.
    cov_s_inv_cov: DMatrix<f64>,
    tr_s_inv_cov_s_inv_cov: f64,
    /// Scalar-output quantities for `Q`: `w = S⁻¹ S_yxᵀ`, `Cw`, `S⁻¹Cw`,
    /// `c0 = wᵀCw`, `wᵀCS⁻¹Cw`, `wᵀCS⁻¹μ`.
    w: Option<QPrecomp>,
    /// `A_mean C A_meanᵀ`, the output-covariance term of `I_G`.
    m_yy: DMatrix<f64>,
    /// `σ²_{Y|X}` for the unknown-variance criteria.
    resid: Option<f64>,
}

#[derive(Debug, Clone)]
struct QPrecomp {
    w: DVector<f64>,
    cw: DVector<f64>,
    s_inv_cw: DVector<f64>,
    c0: f64,
    t3_base: f64,
    lin_base: f64,
}

impl<'a> CriterionContext<'a> {
    /// Context for a linear-basis posterior: feature moments are the
    /// input moments.
    pub fn new(post: &'a RegressionPosterior, dist: &InputDistribution) -> Result<Self> {
        if !post.basis().is_linear() {
            return Err(OwlError::InvalidArgument(
                "nonlinear basis requires with_moments(post, basis_moments)".into(),
            ));
        }
        if dist.dim() != post.basis().input_dim {
            return Err(OwlError::DimensionMismatch(format!(
                "distribution dimension {} but basis expects {}",
                dist.dim(),
                post.basis().input_dim
            )));
        }
        Self::build(post, dist.mean().clone(), dist.covariance().clone())
    }

    /// Context from explicit feature moments `(μ_φ, C_φφ)`; required for
    /// nonlinear bases.
    pub fn with_moments(post: &'a RegressionPosterior, moments: &BasisMoments) -> Result<Self> {
        Self::build(post, moments.mean.clone(), moments.covariance.clone())
    }

    fn build(
        post: &'a RegressionPosterior,
        feat_mean: DVector<f64>,
        feat_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let s = post.feature_dim();
        if feat_mean.len() != s || feat_cov.nrows() != s || feat_cov.ncols() != s {
            return Err(OwlError::DimensionMismatch(format!(
                "feature moments of dimension {} but posterior has {}",
                feat_mean.len(),
                s
            )));
        }
        let s_inv = post.s_xx_inverse();
        let s_inv_mean = &s_inv * &feat_mean;
        let mu_s_inv_mu = feat_mean.dot(&s_inv_mean);
        let s_inv_cov = &s_inv * &feat_cov;
        let tr_s_inv_cov = s_inv_cov.trace();
        let cov_s_inv_cov = &feat_cov * &s_inv_cov;
        let tr_s_inv_cov_s_inv_cov = (&s_inv * &cov_s_inv_cov).trace();

        let w = (post.output_dim() == 1).then(|| {
            let w = post.mean_coeffs().row(0).transpose();
            let cw = &feat_cov * &w;
            let s_inv_cw = &s_inv * &cw;
            QPrecomp {
                c0: w.dot(&cw),
                t3_base: cw.dot(&s_inv_cw),
                lin_base: cw.dot(&s_inv_mean),
                w,
                cw,
                s_inv_cw,
            }
        });

        let m_yy = post.mean_coeffs() * &feat_cov * post.mean_coeffs().transpose();
        let resid = (post.output_dim() == 1
            && matches!(post.noise(), NoiseModel::InferredVariance { .. }))
        .then(|| post.sigma_sq_y_given_x())
        .transpose()?;

        Ok(Self {
            post,
            feat_mean,
            feat_cov,
            s_inv,
            s_inv_mean,
            mu_s_inv_mu,
            tr_s_inv_cov,
            cov_s_inv_cov,
            tr_s_inv_cov_s_inv_cov,
            w,
            m_yy,
            resid,
        })
    }

    pub fn posterior(&self) -> &RegressionPosterior {
        self.post
    }

    fn probe(&self, h: &DVector<f64>) -> Probe {
        let phi = self.post.basis().map(h);
        let u = &self.s_inv * &phi;
        let gamma = 1.0 + phi.dot(&u);
        Probe { phi, u, gamma }
    }

    /// Map a feature-space gradient into input space via the basis chain
    /// rule `∂λ/∂z_k = Σ_j g_j ∂φ_j/∂z_k`.
    fn chain(&self, h: &DVector<f64>, grad_feat: DVector<f64>) -> DVector<f64> {
        if self.post.basis().is_linear() {
            grad_feat
        } else {
            self.post.basis().jacobian(h).transpose() * grad_feat
        }
    }

    /// Mean model error `μ_c(h) = tr[S'⁻¹ R]` with its gradient.
    pub fn mu_c(&self, h: &DVector<f64>) -> CriterionValue {
        let Probe { u, gamma, .. } = self.probe(h);
        let ru = &self.feat_cov * &u + &self.feat_mean * self.feat_mean.dot(&u);
        let u_ru = u.dot(&ru);
        let value = self.tr_s_inv_cov + self.mu_s_inv_mu - u_ru / gamma;
        let s_inv_ru = &self.s_inv * &ru;
        let grad_feat = (s_inv_ru - &u * (u_ru / gamma)) * (-2.0 / gamma);
        CriterionValue {
            value,
            gradient: Some(self.chain(h, grad_feat)),
        }
    }

    /// `σ_c²(h) = 2 tr[S'⁻¹CS'⁻¹C] + 4 μᵀS'⁻¹CS'⁻¹μ` (diagnostic; no
    /// gradient).
    pub fn sigma_c(&self, h: &DVector<f64>) -> f64 {
        let Probe { u, gamma, .. } = self.probe(h);
        let cu = &self.feat_cov * &u;
        let u_cu = u.dot(&cu);
        let tr_term = self.tr_s_inv_cov_s_inv_cov - 2.0 * u.dot(&(&self.cov_s_inv_cov * &u)) / gamma
            + (u_cu / gamma).powi(2);
        let v = &self.s_inv_mean - &u * (u.dot(&self.feat_mean) / gamma);
        2.0 * tr_term + 4.0 * v.dot(&(&self.feat_cov * &v))
    }

    /// Output-weighted criterion `Q(h)/σ_V²` with its gradient. The
    /// `σ_V²` prefactor is deliberately not applied: it does not move the
    /// argmin, and for the unknown-variance model it need not be known.
    pub fn q(&self, h: &DVector<f64>, weights: &QWeights) -> Result<CriterionValue> {
        let pre = self.w.as_ref().ok_or(OwlError::ScalarOutputOnly {
            got: self.post.output_dim(),
        })?;
        let Probe { u, gamma, .. } = self.probe(h);
        let cu = &self.feat_cov * &u;
        let u_cu = u.dot(&cu);
        let u_mu = u.dot(&self.feat_mean);
        let u_cw = u.dot(&pre.cw);

        let t1 = self.tr_s_inv_cov - u_cu / gamma;
        let t2 = self.mu_s_inv_mu - u_mu * u_mu / gamma;
        let t3 = pre.t3_base - u_cw * u_cw / gamma;
        let t_lin = pre.lin_base - u_cw * u_mu / gamma;

        let front = weights.p1 + weights.p2 * pre.c0;
        let value = front * (1.0 + t1 + t2) + 2.0 * weights.p2 * t3
            + 2.0 * weights.p_lin * t_lin;

        let g_t1 = (&self.s_inv * &cu - &u * (u_cu / gamma)) * (-2.0 / gamma);
        let sp_mu = &self.s_inv_mean - &u * (u_mu / gamma);
        let g_t2 = &sp_mu * (-2.0 * u_mu / gamma);
        let sp_cw = &pre.s_inv_cw - &u * (u_cw / gamma);
        let g_t3 = &sp_cw * (-2.0 * u_cw / gamma);

        let mut grad_feat = (g_t1 + g_t2) * front + g_t3 * (2.0 * weights.p2);
        if weights.p_lin != 0.0 {
            let g_lin = (&sp_mu * u_cw + &sp_cw * u_mu) * (-1.0 / gamma);
            grad_feat += g_lin * (2.0 * weights.p_lin);
        }
        Ok(CriterionValue {
            value,
            gradient: Some(self.chain(h, grad_feat)),
        })
    }

    /// Mean of `log(1 + c(x; h))` over the shared input draws.
    fn log_one_plus_c(&self, samples: &SharedSamples, u: &DVector<f64>, gamma: f64) -> f64 {
        let t = &samples.features * u;
        let n = samples.len();
        let mut acc = 0.0;
        for i in 0..n {
            let c = samples.c_base[i] - t[i] * t[i] / gamma;
            acc += (1.0 + c.max(0.0)).ln();
        }
        acc / n as f64
    }

    /// Gaussian second-order approximation of the mutual information,
    ///
    /// ```text
    /// I_G = ½ log|V(1+μ_c(h)) + A_mean C A_meanᵀ| - ½ log|V|
    ///     - (d/2) Ê[log(1 + c(x;h))]
    /// ```
    ///
    /// with the expectation over the shared input draws. Requires the
    /// known-variance model.
    pub fn mutual_info_gaussian(&self, h: &DVector<f64>, samples: &SharedSamples) -> Result<f64> {
        let NoiseModel::KnownVariance(v) = self.post.noise() else {
            return Err(OwlError::NoiseModeMismatch { required: "known-variance" });
        };
        let d = self.post.output_dim();
        let Probe { u, gamma, .. } = self.probe(h);
        let ru = &self.feat_cov * &u + &self.feat_mean * self.feat_mean.dot(&u);
        let mu_c = self.tr_s_inv_cov + self.mu_s_inv_mu - u.dot(&ru) / gamma;

        let a = DMatrix::identity(d, d) * (v * (1.0 + mu_c)) + &self.m_yy;
        let log_det_a = Cholesky::new(a)
            .map(|c| 2.0 * c.l().diagonal().iter().map(|x| x.ln()).sum::<f64>())
            .ok_or(OwlError::NotPositiveDefinite)?;
        let log_det_v = d as f64 * v.ln();
        let e_term = self.log_one_plus_c(samples, &u, gamma);
        Ok(0.5 * (log_det_a - log_det_v) - 0.5 * d as f64 * e_term)
    }

    /// Coefficient half of the predictive draws: `ξᵀ L'⁻¹ φ(x_i)` per
    /// sample, where `L'` is the Cholesky factor of `S'`.
    fn coefficient_fluctuations(
        &self,
        phi: &DVector<f64>,
        samples: &SharedSamples,
    ) -> DVector<f64> {
        let s_prime = self.post.s_xx() + phi * phi.transpose();
        let chol = Cholesky::new(s_prime).expect("rank-one update keeps S_xx SPD");
        // B = L'⁻¹ Φᵀ, then the fluctuation of sample i is ξ_i · B_{·,i}.
        let mut b = samples.features.transpose();
        let solved = chol.l_dirty().solve_lower_triangular_mut(&mut b);
        debug_assert!(solved, "Cholesky factor has positive diagonal");
        DVector::from_fn(samples.len(), |i, _| {
            samples.coeff_normals.row(i).dot(&b.column(i).transpose())
        })
    }

    /// Directly computed mutual information for scalar output:
    /// the output entropy is estimated by a kernel density over draws
    /// `y = aᵀφ(x) + e` with `a` drawn from the updated coefficient
    /// posterior, minus `½ Ê[log(1+c)]` and the conditional entropy
    /// constant `½ log(2πe σ_V²)`.
    pub fn mutual_info_direct(&self, h: &DVector<f64>, samples: &SharedSamples) -> Result<f64> {
        let NoiseModel::KnownVariance(v) = self.post.noise() else {
            return Err(OwlError::NoiseModeMismatch { required: "known-variance" });
        };
        let base_mean = samples
            .base_mean
            .as_ref()
            .ok_or(OwlError::ScalarOutputOnly { got: self.post.output_dim() })?;
        let Probe { phi, u, gamma } = self.probe(h);
        let sigma_v = v.sqrt();
        let fluct = self.coefficient_fluctuations(&phi, samples);
        let ys: Vec<f64> = (0..samples.len())
            .map(|i| base_mean[i] + sigma_v * (fluct[i] + samples.noise_normals[i]))
            .collect();
        let entropy = entropy_1d(&kde_density(&ys, 6.0)?);
        let e_term = self.log_one_plus_c(samples, &u, gamma);
        Ok(entropy
            - 0.5 * e_term
            - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * v).ln())
    }

    /// Mutual information with inferred noise variance,
    ///
    /// ```text
    /// Î = E_y(h) - ½ Ê[log(1+c(x;h))] + ½ log(σ²_{Y'|X'}(h) + σ_0²)
    /// ```
    ///
    /// up to `h`-independent terms. `σ²_{Y'|X'}(h) = σ²_{Y|X} +
    /// α/(1+α) (w·φ(h))²`. With `gaussian_approx` the output entropy is
    /// `½ log(2πe σ̂_y²)` from the Monte-Carlo output variance; otherwise
    /// it is a kernel-density entropy over draws from the hierarchical
    /// predictive chain (inverse-gamma variance, then coefficients, then
    /// noise).
    pub fn mutual_info_unknown_var(
        &self,
        h: &DVector<f64>,
        samples: &SharedSamples,
        gaussian_approx: bool,
    ) -> Result<f64> {
        let NoiseModel::InferredVariance { sigma0_sq, alpha, .. } = *self.post.noise() else {
            return Err(OwlError::NoiseModeMismatch { required: "inferred-variance" });
        };
        let base_mean = samples
            .base_mean
            .as_ref()
            .ok_or(OwlError::ScalarOutputOnly { got: self.post.output_dim() })?;
        let chi_sq = samples
            .chi_sq
            .as_ref()
            .expect("inferred-variance posterior implies chi-square draws");
        let resid = self.resid.expect("resid cached for inferred-variance");
        let Probe { phi, u, gamma } = self.probe(h);

        let pre = self.w.as_ref().expect("scalar output checked above");
        let mean_at_h = pre.w.dot(&phi);
        let resid_updated = resid + alpha / (1.0 + alpha) * mean_at_h * mean_at_h;
        let scale_sum = resid_updated + sigma0_sq;

        let fluct = self.coefficient_fluctuations(&phi, samples);
        let ys: Vec<f64> = (0..samples.len())
            .map(|i| {
                let sigma = (scale_sum / chi_sq[i]).sqrt();
                base_mean[i] + sigma * (fluct[i] + samples.noise_normals[i])
            })
            .collect();
        let e_y = if gaussian_approx {
            let n = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / n;
            let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
            0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var).ln()
        } else {
            entropy_1d(&kde_density(&ys, 6.0)?)
        };
        let e_term = self.log_one_plus_c(samples, &u, gamma);
        Ok(e_y - 0.5 * e_term + 0.5 * scale_sum.ln())
    }

    /// Dispatch on a criterion tag. `samples` must be provided for the
    /// Monte-Carlo criteria.
    pub fn evaluate(
        &self,
        spec: &CriterionSpec,
        h: &DVector<f64>,
        weights: Option<&QWeights>,
        samples: Option<&SharedSamples>,
    ) -> Result<CriterionValue> {
        fn need(s: Option<&SharedSamples>) -> Result<&SharedSamples> {
            s.ok_or_else(|| {
                OwlError::InvalidArgument(
                    "this criterion requires shared Monte-Carlo samples".into(),
                )
            })
        }
        match spec {
            CriterionSpec::MuC => Ok(self.mu_c(h)),
            CriterionSpec::SigmaC => Ok(CriterionValue { value: self.sigma_c(h), gradient: None }),
            CriterionSpec::Q { weights: mode } => {
                let resolved = match (weights, mode) {
                    (Some(w), _) => *w,
                    (None, QWeightMode::Beta(_)) => {
                        return Err(OwlError::InvalidArgument(
                            "Beta weights need a resolved sigma_y0; pass them explicitly".into(),
                        ))
                    }
                    (None, mode) => q_weights(1.0, mode)?,
                };
                self.q(h, &resolved)
            }
            CriterionSpec::MutualInfoGaussian { .. } => Ok(CriterionValue {
                value: self.mutual_info_gaussian(h, need(samples)?)?,
                gradient: None,
            }),
            CriterionSpec::MutualInfoDirect { .. } => Ok(CriterionValue {
                value: self.mutual_info_direct(h, need(samples)?)?,
                gradient: None,
            }),
            CriterionSpec::MutualInfoUnknownVar { .. } => Ok(CriterionValue {
                value: self.mutual_info_unknown_var(h, need(samples)?, false)?,
                gradient: None,
            }),
            CriterionSpec::MutualInfoUnknownVarGaussian { .. } => Ok(CriterionValue {
                value: self.mutual_info_unknown_var(h, need(samples)?, true)?,
                gradient: None,
            }),
        }
    }
}

struct Probe {
    phi: DVector<f64>,
    u: DVector<f64>,
    gamma: f64,
}

/// Convenience wrapper: `μ_c` for a posterior under an input law.
/// Nonlinear bases require precomputed feature moments.
pub fn mu_c(
    post: &RegressionPosterior,
    dist: &InputDistribution,
    h: &DVector<f64>,
    moments: Option<&BasisMoments>,
) -> Result<CriterionValue> {
    Ok(context_for(post, dist, moments)?.mu_c(h))
}

/// Convenience wrapper for `σ_c²`.
pub fn sigma_c(
    post: &RegressionPosterior,
    dist: &InputDistribution,
    h: &DVector<f64>,
    moments: Option<&BasisMoments>,
) -> Result<f64> {
    Ok(context_for(post, dist, moments)?.sigma_c(h))
}

/// Convenience wrapper for the output-weighted criterion.
pub fn q_criterion(
    post: &RegressionPosterior,
    dist: &InputDistribution,
    h: &DVector<f64>,
    weights: &QWeights,
    moments: Option<&BasisMoments>,
) -> Result<CriterionValue> {
    context_for(post, dist, moments)?.q(h, weights)
}

/// Convenience wrapper for `I_G`; draws `n_mc` seeded input samples.
pub fn mutual_info_gaussian(
    post: &RegressionPosterior,
    dist: &InputDistribution,
    h: &DVector<f64>,
    n_mc: usize,
    seed: u64,
    moments: Option<&BasisMoments>,
) -> Result<f64> {
    let ctx = context_for(post, dist, moments)?;
    let samples = SharedSamples::generate(post, dist, n_mc, seed)?;
    ctx.mutual_info_gaussian(h, &samples)
}

/// Convenience wrapper for the direct mutual information.
pub fn mutual_info_direct(
    post: &RegressionPosterior,
    dist: &InputDistribution,
    h: &DVector<f64>,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    let ctx = context_for(post, dist, None)?;
    let samples = SharedSamples::generate(post, dist, n_mc, seed)?;
    ctx.mutual_info_direct(h, &samples)
}

/// Convenience wrapper for `Î` / `Î_G`.
pub fn mutual_info_unknown_var(
    post: &RegressionPosterior,
    dist: &InputDistribution,
    h: &DVector<f64>,
    n_mc: usize,
    seed: u64,
    gaussian_approx: bool,
) -> Result<f64> {
    let ctx = context_for(post, dist, None)?;
    let samples = SharedSamples::generate(post, dist, n_mc, seed)?;
    ctx.mutual_info_unknown_var(h, &samples, gaussian_approx)
}

fn context_for<'a>(
    post: &'a RegressionPosterior,
    dist: &InputDistribution,
    moments: Option<&BasisMoments>,
) -> Result<CriterionContext<'a>> {
    match moments {
        Some(m) => CriterionContext::with_moments(post, m),
        None => CriterionContext::new(post, dist),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::BasisSpec;
    use approx::assert_relative_eq;

    fn prior_posterior(alpha: f64, noise: NoiseModel) -> RegressionPosterior {
        RegressionPosterior::fit(
            &DMatrix::zeros(0, 2),
            &DMatrix::zeros(0, 1),
            BasisSpec::linear(2),
            alpha,
            noise,
        )
        .unwrap()
    }

    fn fitted_posterior(seed: u64, n: usize, noise: NoiseModel) -> (RegressionPosterior, InputDistribution) {
        let dist = InputDistribution::diagonal(&[2.0, 0.2]).unwrap();
        let x = dist.sample(n, seed);
        let mut rng = rng_from_seed(derive_seed(seed, 100));
        let y = DMatrix::from_fn(n, 1, |i, _| {
            0.01 * x[(i, 0)] + 2.0 * x[(i, 1)] + 0.05_f64.sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        let post =
            RegressionPosterior::fit(&x, &y, BasisSpec::linear(2), 0.1, noise).unwrap();
        (post, dist)
    }

    #[test]
    fn mu_c_identity_prior_case_ii() {
        let post = prior_posterior(1.0, NoiseModel::KnownVariance(0.05));
        let dist = InputDistribution::diagonal(&[2.0, 0.2]).unwrap();
        let e1 = DVector::from_column_slice(&[1.0, 0.0]);
        let e2 = DVector::from_column_slice(&[0.0, 1.0]);
        let v1 = mu_c(&post, &dist, &e1, None).unwrap().value;
        let v2 = mu_c(&post, &dist, &e2, None).unwrap().value;
        assert_relative_eq!(v1, 1.2, epsilon = 1e-12);
        assert_relative_eq!(v2, 2.1, epsilon = 1e-12);
        assert!(v1 < v2, "minimization must pick the high-variance direction");
    }

    fn finite_difference(
        f: &dyn Fn(&DVector<f64>) -> f64,
        h: &DVector<f64>,
        step: f64,
    ) -> DVector<f64> {
        DVector::from_fn(h.len(), |k, _| {
            let mut hp = h.clone();
            let mut hm = h.clone();
            hp[k] += step;
            hm[k] -= step;
            (f(&hp) - f(&hm)) / (2.0 * step)
        })
    }

    #[test]
    fn mu_c_gradient_matches_finite_differences() {
        let (post, dist) = fitted_posterior(3, 12, NoiseModel::KnownVariance(0.05));
        let ctx = CriterionContext::new(&post, &dist).unwrap();
        let mut rng = rng_from_seed(51);
        for _ in 0..20 {
            let h = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let got = ctx.mu_c(&h);
            let fd = finite_difference(&|p| ctx.mu_c(p).value, &h, 1e-5);
            let grad = got.gradient.unwrap();
            assert!(
                (grad.clone() - &fd).norm() / fd.norm().max(1e-12) < 1e-5,
                "grad {grad:?} vs fd {fd:?}"
            );
        }
    }

    #[test]
    fn q_gradient_matches_finite_differences_cubic_basis() {
        let dist = InputDistribution::diagonal(&[0.2, 0.05]).unwrap();
        let basis = BasisSpec::odd_cubic_2d();
        let x = dist.sample(15, 8);
        let mut rng = rng_from_seed(9);
        let y = DMatrix::from_fn(15, 1, |i, _| {
            let z = x.row(i).transpose();
            0.01 * z[0] + 5.0 * z[1] + 100.0 * z[1].powi(3)
                + 0.01 * rng.sample::<f64, _>(StandardNormal)
        });
        let post = RegressionPosterior::fit(&x, &y, basis.clone(), 0.1, NoiseModel::KnownVariance(1e-4))
            .unwrap();
        let moments = crate::regression::basis_moments(&basis, &dist, 20_000, 4).unwrap();
        let ctx = CriterionContext::with_moments(&post, &moments).unwrap();
        let weights = QWeights { p1: 0.01, p2: 1.0, p_lin: 0.0 };
        for _ in 0..20 {
            let h = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let got = ctx.q(&h, &weights).unwrap();
            let fd = finite_difference(&|p| ctx.q(p, &weights).unwrap().value, &h, 1e-5);
            let grad = got.gradient.unwrap();
            assert!(
                (grad.clone() - &fd).norm() / fd.norm().max(1e-12) < 1e-5,
                "grad {grad:?} vs fd {fd:?}"
            );
        }
    }

    #[test]
    fn q_with_unit_p1_degenerates_to_mu_c() {
        let (post, dist) = fitted_posterior(11, 20, NoiseModel::KnownVariance(0.05));
        let ctx = CriterionContext::new(&post, &dist).unwrap();
        let weights = QWeights { p1: 1.0, p2: 0.0, p_lin: 0.0 };
        let mut rng = rng_from_seed(4);
        for _ in 0..10 {
            let h = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let q = ctx.q(&h, &weights).unwrap().value;
            let mc = ctx.mu_c(&h).value;
            assert_relative_eq!(q - 1.0, mc, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn q_infinity_argmin_tracks_output_gradient() {
        // Case II with exact coefficients: the grid argmin must lie
        // nearer the output gradient (0.01, 2.0) than the dominant input
        // eigendirection e1.
        let dist = InputDistribution::diagonal(&[2.0, 0.2]).unwrap();
        let x = dist.sample(12, 5);
        let y = DMatrix::from_fn(12, 1, |i, _| 0.01 * x[(i, 0)] + 2.0 * x[(i, 1)]);
        let post = RegressionPosterior::fit(
            &x,
            &y,
            BasisSpec::linear(2),
            0.1,
            NoiseModel::KnownVariance(0.05),
        )
        .unwrap();
        let ctx = CriterionContext::new(&post, &dist).unwrap();
        let weights = q_weights(1.0, &QWeightMode::Infinity).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..1000 {
            let theta = -std::f64::consts::FRAC_PI_2
                + std::f64::consts::PI * k as f64 / 999.0;
            let h = DVector::from_column_slice(&[theta.cos(), theta.sin()]);
            let v = ctx.q(&h, &weights).unwrap().value;
            if v < best.0 {
                best = (v, theta);
            }
        }
        let h_star = DVector::from_column_slice(&[best.1.cos(), best.1.sin()]);
        let grad_dir = DVector::from_column_slice(&[0.01, 2.0]).normalize();
        let angle_grad = h_star.dot(&grad_dir).abs().min(1.0).acos();
        let angle_e1 = h_star[0].abs().min(1.0).acos();
        assert!(
            angle_grad < angle_e1,
            "argmin θ={} is nearer e1 ({angle_e1}) than the gradient ({angle_grad})",
            best.1
        );
    }

    #[test]
    fn q_weights_modes() {
        assert_eq!(
            q_weights(1.0, &QWeightMode::Infinity).unwrap(),
            QWeights { p1: 0.0, p2: 1.0, p_lin: 0.0 }
        );
        let explicit = q_weights(1.0, &QWeightMode::Explicit { p1: 0.01, p2: 1.0 }).unwrap();
        assert_eq!(explicit.p1, 0.01);
        assert!(q_weights(1.0, &QWeightMode::Beta(-1.0)).is_err());

        // β → 0 limit: p2 → sqrt(2π)/2.
        let small = q_weights(1.0, &QWeightMode::Beta(0.01)).unwrap();
        let limit = (2.0 * std::f64::consts::PI).sqrt() / 2.0;
        assert_relative_eq!(small.p2, limit, max_relative = 1e-3);

        // Series and quadrature branches agree at the seam.
        let lo = q_weights(1.0, &QWeightMode::Beta(1.0)).unwrap();
        let hi = q_weights(1.0, &QWeightMode::Beta(1.0 + 1e-9)).unwrap();
        assert_relative_eq!(lo.p2, hi.p2, max_relative = 1e-6);
    }

    #[test]
    fn q_weights_match_dense_grid_least_squares() {
        // Fit p2 on a dense grid against 1/N(y; 0, σ²) over [μ, μ+βσ]
        // with p1 pinned to the inverse density at the mean.
        let sigma: f64 = 1.0;
        let beta = 2.0;
        let got = q_weights(sigma, &QWeightMode::Beta(beta)).unwrap();
        let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
        let p1 = sqrt_2pi * sigma;
        let n = 200_001;
        let step = beta * sigma / (n as f64 - 1.0);
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let t = i as f64 * step;
            let inv_p = sqrt_2pi * sigma * (0.5 * (t / sigma).powi(2)).exp();
            let weight = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            num += weight * t * t * (inv_p - p1);
            den += weight * t.powi(4);
        }
        let p2_ls = num / den;
        assert_relative_eq!(got.p1, p1, max_relative = 1e-12);
        assert_relative_eq!(got.p2, p2_ls, max_relative = 1e-3);
    }

    #[test]
    fn information_criteria_are_sign_symmetric_bitwise() {
        let (post, dist) = fitted_posterior(19, 15, NoiseModel::KnownVariance(0.05));
        let ctx = CriterionContext::new(&post, &dist).unwrap();
        let samples = SharedSamples::generate(&post, &dist, 4_000, 7).unwrap();
        let mut rng = rng_from_seed(2);
        for _ in 0..5 {
            let h = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let neg = -h.clone();
            assert_eq!(
                ctx.mutual_info_gaussian(&h, &samples).unwrap().to_bits(),
                ctx.mutual_info_gaussian(&neg, &samples).unwrap().to_bits()
            );
            assert_eq!(
                ctx.mutual_info_direct(&h, &samples).unwrap().to_bits(),
                ctx.mutual_info_direct(&neg, &samples).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn gaussian_mi_prior_only_is_nonnegative() {
        // S_yx = 0, V = 1: I_G = ½log(1+μ_c) - ½Ê[log(1+c)] ≥ 0 by Jensen.
        let dist = InputDistribution::diagonal(&[1.4, 0.6]).unwrap();
        let post = prior_posterior(1.0, NoiseModel::KnownVariance(1.0));
        let ctx = CriterionContext::new(&post, &dist).unwrap();
        let samples = SharedSamples::generate(&post, &dist, 20_000, 13).unwrap();
        let mut rng = rng_from_seed(6);
        for _ in 0..10 {
            let h = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            let v = ctx.mutual_info_gaussian(&h, &samples).unwrap();
            assert!(v >= -1e-12, "I_G = {v}");
        }
    }

    #[test]
    fn direct_mi_entropy_term_bounded_below_by_noise_entropy() {
        // With S_yx = 0 the output draws are a scale mixture around zero
        // with variance at least σ_V², so E_y ≥ ½ log(2πe σ_V²), i.e.
        // I ≥ -½ Ê[log(1+c)] ... rearranged: I + ½Ê[log(1+c)] ≥ 0.
        let dist = InputDistribution::standard(2);
        let post = prior_posterior(1.0, NoiseModel::KnownVariance(0.3));
        let ctx = CriterionContext::new(&post, &dist).unwrap();
        let samples = SharedSamples::generate(&post, &dist, 30_000, 23).unwrap();
        let h = DVector::from_column_slice(&[1.0, 0.0]);
        let value = ctx.mutual_info_direct(&h, &samples).unwrap();
        let Probe { u, gamma, .. } = ctx.probe(&h);
        let e_term = ctx.log_one_plus_c(&samples, &u, gamma);
        assert!(value + 0.5 * e_term > -0.02, "entropy fell below the noise floor");
    }

    #[test]
    fn unknown_var_output_term_vanishes_as_alpha_to_zero() {
        let (post_a, _) = fitted_posterior(31, 25, NoiseModel::InferredVariance {
            sigma0_sq: 0.01,
            nu: 2.0,
            alpha: 1e-14,
        });
        // The h-dependent part of σ²_{Y'|X'} is α/(1+α)(w·φ)²; at α → 0
        // it is 1e-14-small relative to σ²_{Y|X}.
        let resid = post_a.sigma_sq_y_given_x().unwrap();
        let w = post_a.mean_coeffs().row(0).transpose();
        let h = DVector::from_column_slice(&[0.3, 0.9]);
        let bump = 1e-14 / (1.0 + 1e-14) * w.dot(&h).powi(2);
        assert!(bump <= 1e-12 * resid.max(1.0), "bump {bump} vs resid {resid}");
    }

    #[test]
    fn unknown_var_mi_sign_symmetric() {
        let (post, dist) = fitted_posterior(37, 25, NoiseModel::InferredVariance {
            sigma0_sq: 0.01,
            nu: 2.0,
            alpha: 0.1,
        });
        let ctx = CriterionContext::new(&post, &dist).unwrap();
        let samples = SharedSamples::generate(&post, &dist, 4_000, 3).unwrap();
        let h = DVector::from_column_slice(&[0.6, -0.8]);
        let neg = -h.clone();
        for approx_flag in [false, true] {
            let a = ctx.mutual_info_unknown_var(&h, &samples, approx_flag).unwrap();
            let b = ctx.mutual_info_unknown_var(&neg, &samples, approx_flag).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mode_mismatch_errors() {
        let (post_known, dist) = fitted_posterior(41, 10, NoiseModel::KnownVariance(0.05));
        let ctx = CriterionContext::new(&post_known, &dist).unwrap();
        let samples = SharedSamples::generate(&post_known, &dist, 2_000, 1).unwrap();
        let h = DVector::from_column_slice(&[1.0, 0.0]);
        assert!(matches!(
            ctx.mutual_info_unknown_var(&h, &samples, false),
            Err(OwlError::NoiseModeMismatch { .. })
        ));

        let (post_inf, dist) = fitted_posterior(43, 10, NoiseModel::InferredVariance {
            sigma0_sq: 0.01,
            nu: 2.0,
            alpha: 0.1,
        });
        let ctx = CriterionContext::new(&post_inf, &dist).unwrap();
        let samples_inf = SharedSamples::generate(&post_inf, &dist, 2_000, 1).unwrap();
        assert!(matches!(
            ctx.mutual_info_gaussian(&h, &samples_inf),
            Err(OwlError::NoiseModeMismatch { .. })
        ));

        assert!(SharedSamples::generate(&post_inf, &dist, 100, 1).is_err());
    }
}
