//! Sequential-design campaigns and ensemble replication.
//!
//! One repeat runs the loop: fit the posterior on all data so far, score
//! candidates through the rank-one hypothetical update, optimize the
//! criterion over the feasible set, query the system, append, and record
//! the error metric. Ensembles replay the loop `n_repeats` times with
//! derived seeds and aggregate the error trajectories.
//!
//! Determinism: `(config, base_seed)` fixes every number produced.
//! Repeat `l` draws from streams derived as
//! `derive_seed(derive_seed(base_seed, l), purpose)`, so repeats are
//! independent of execution order and the ensemble is bit-identical
//! whether run sequentially or on a thread pool.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::benchmarks::{ground_truth, initial_inputs, BenchmarkSystem, GroundTruth};
use crate::criteria::{
    q_weights, CriterionContext, CriterionSpec, QWeightMode, QWeights, SharedSamples,
};
use crate::error::{OwlError, Result};
use crate::optimizer::{optimize_disk, optimize_grid, optimize_sphere, FeasibleSet, OptimizeOptions};
use crate::regression::{
    basis_moments, empirical_bayes_fit, BasisMoments, NoiseModel, RegressionPosterior,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stochastics::{kde_density, trapezoid, InputDistribution};

// Purpose tags for per-repeat stream derivation.
const P_INIT: u64 = 1;
const P_OBS_NOISE: u64 = 2;
const P_SHARED: u64 = 3;
const P_OPTIMIZER: u64 = 4;
const P_SIGMA_Y0: u64 = 5;
const P_MC_STRATEGY: u64 = 6;
const P_PDF_MODEL: u64 = 7;

// Ensemble-level streams, offset far above any repeat index.
const S_TRUTH: u64 = 0xFFFF_FF01;
const S_MOMENTS: u64 = 0xFFFF_FF02;
const S_VARIANCE_DRAWS: u64 = 0xFFFF_FF03;

/// Noise treatment of the campaign's regression model.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseHandling {
    /// The model is given the system's true noise variance.
    Known,
    /// Inverse-gamma prior `(σ_0², ν_0)`; with `empirical_bayes` the
    /// `(α, ν)` fixed point is re-run every step, warm-started from the
    /// previous step and kept on non-convergence.
    Inferred {
        sigma0_sq: f64,
        nu0: f64,
        empirical_bayes: bool,
    },
}

/// Convergence metric recorded after each step.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorMetric {
    /// `|V̂ - V*|` of the mean-model-propagated output variance.
    VarianceError,
    /// L1 distance of log densities over `[lo, hi]`.
    LogPdfL1 { lo: f64, hi: f64 },
}

/// Next-sample selection rule.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionStrategy {
    /// Baseline: draw from the input law and project onto the feasible
    /// set (normalized to the sphere, clipped into the disk).
    MonteCarlo,
    Criterion(CriterionSpec),
}

impl SelectionStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionStrategy::MonteCarlo => "monte_carlo",
            SelectionStrategy::Criterion(spec) => spec.name(),
        }
    }
}

/// Monte-Carlo and optimizer budgets. Defaults reproduce the full-scale
/// protocol; desk-scale presets shrink them.
#[derive(Debug, Clone, PartialEq)]
pub struct McBudgets {
    /// Shared-sample count for the information criteria.
    pub criterion_mc: usize,
    /// Draws for the mean-model output deviation behind the Beta weights.
    pub sigma_y0_draws: usize,
    /// Draws for the mean-model output variance (nonlinear basis).
    pub variance_mc: usize,
    /// Draws for the ground-truth variance (nonlinear systems).
    pub truth_mc: usize,
    /// Draws for feature moments (nonlinear basis).
    pub moments_mc: usize,
    /// Draws for the model pdf in the log-pdf metric.
    pub pdf_model_mc: usize,
    /// Angle-grid resolution for gradient-free criteria (2-D only).
    pub grid_count: usize,
    pub n_starts: usize,
    pub max_iters: usize,
}

impl Default for McBudgets {
    fn default() -> Self {
        Self {
            criterion_mc: 100_000,
            sigma_y0_draws: 10_000,
            variance_mc: 10_000,
            truth_mc: 100_000,
            moments_mc: 100_000,
            pdf_model_mc: 50_000,
            grid_count: 181,
            n_starts: 8,
            max_iters: 500,
        }
    }
}

/// Full campaign description; `(config, base_seed)` fixes every number.
#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub system: BenchmarkSystem,
    pub strategy: SelectionStrategy,
    pub n_steps: usize,
    pub n_repeats: usize,
    pub base_seed: u64,
    pub alpha: f64,
    pub noise: NoiseHandling,
    pub metric: ErrorMetric,
    pub budgets: McBudgets,
}

/// Trajectory of one repeat.
#[derive(Debug, Clone)]
pub struct RepeatResult {
    pub chosen: Vec<DVector<f64>>,
    pub outputs: Vec<f64>,
    pub errors_abs: Vec<f64>,
    pub errors_rel: Vec<f64>,
    /// Steps where no optimizer start converged and the grid fallback
    /// was used.
    pub optimizer_fallback_steps: Vec<usize>,
    /// Steps where the empirical-Bayes fixed point did not converge and
    /// the previous `(α, ν)` was reused.
    pub eb_nonconverged_steps: Vec<usize>,
}

/// Ensemble summary over all repeats.
#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub repeats: Vec<RepeatResult>,
    pub mean_error: Vec<f64>,
    pub std_error: Vec<f64>,
    /// `0.2 σ` band half-width per step.
    pub band: Vec<f64>,
    pub truth: GroundTruth,
}

/// Execution mode for [`run_ensemble_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    #[cfg(feature = "parallel")]
    Rayon,
}

impl Default for Parallelism {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Parallelism::Rayon
        }
        #[cfg(not(feature = "parallel"))]
        {
            Parallelism::Sequential
        }
    }
}

/// Ensemble-level precomputation shared by all repeats.
#[derive(Debug, Clone)]
pub struct CampaignContext {
    truth: GroundTruth,
    feat_moments: Option<BasisMoments>,
    variance_draws: Option<DMatrix<f64>>,
}

impl CampaignContext {
    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }
}

/// Validate a configuration without running it.
pub fn validate_config(config: &CampaignConfig) -> Result<()> {
    if config.n_steps == 0 || config.n_repeats == 0 {
        return Err(OwlError::InvalidArgument(
            "n_steps and n_repeats must be at least 1".into(),
        ));
    }
    if !(config.alpha > 0.0 && config.alpha.is_finite()) {
        return Err(OwlError::InvalidArgument("alpha must be strictly positive".into()));
    }
    config.system.feasible.validate()?;
    if let NoiseHandling::Inferred { sigma0_sq, nu0, .. } = &config.noise {
        if !(*sigma0_sq > 0.0 && *nu0 > 0.0) {
            return Err(OwlError::InvalidArgument(
                "inferred-variance priors must be positive".into(),
            ));
        }
    }
    if let SelectionStrategy::Criterion(spec) = &config.strategy {
        if !spec.has_gradient()
            && !matches!(spec, CriterionSpec::SigmaC)
            && config.system.feasible.dim() != 2
        {
            return Err(OwlError::InvalidArgument(format!(
                "criterion `{}` has no gradient and is optimized on an angle \
                 grid, which needs a 2-D input space",
                spec.name()
            )));
        }
        if matches!(spec, CriterionSpec::SigmaC) && config.system.feasible.dim() != 2 {
            return Err(OwlError::InvalidArgument(
                "sigma_c is gradient-free and needs a 2-D input space".into(),
            ));
        }
        let wants_known = matches!(
            spec,
            CriterionSpec::MutualInfoDirect { .. } | CriterionSpec::MutualInfoGaussian { .. }
        );
        let wants_inferred = matches!(
            spec,
            CriterionSpec::MutualInfoUnknownVar { .. }
                | CriterionSpec::MutualInfoUnknownVarGaussian { .. }
        );
        match (&config.noise, wants_known, wants_inferred) {
            (NoiseHandling::Inferred { .. }, true, _) => {
                return Err(OwlError::NoiseModeMismatch { required: "known-variance" })
            }
            (NoiseHandling::Known, _, true) => {
                return Err(OwlError::NoiseModeMismatch { required: "inferred-variance" })
            }
            _ => {}
        }
    }
    Ok(())
}

/// Build the shared context: ground truth, feature moments and the
/// variance draws, all seeded from `base_seed` alone.
pub fn prepare(config: &CampaignConfig) -> Result<CampaignContext> {
    validate_config(config)?;
    let with_pdf = matches!(config.metric, ErrorMetric::LogPdfL1 { .. });
    let truth = ground_truth(
        &config.system,
        config.budgets.truth_mc,
        derive_seed(config.base_seed, S_TRUTH),
        with_pdf,
    )?;
    let (feat_moments, variance_draws) = if config.system.basis.is_linear() {
        (None, None)
    } else {
        let moments = basis_moments(
            &config.system.basis,
            &config.system.input_dist,
            config.budgets.moments_mc,
            derive_seed(config.base_seed, S_MOMENTS),
        )?;
        let draws = config
            .system
            .input_dist
            .sample(config.budgets.variance_mc, derive_seed(config.base_seed, S_VARIANCE_DRAWS));
        (Some(moments), Some(draws))
    };
    Ok(CampaignContext {
        truth,
        feat_moments,
        variance_draws,
    })
}

/// Output variance of the mean model over the input law: closed form
/// `a C aᵀ` for the linear basis, Monte-Carlo over shared draws for a
/// nonlinear basis.
pub fn model_output_variance(
    post: &RegressionPosterior,
    dist: &InputDistribution,
    draws: Option<&DMatrix<f64>>,
) -> Result<f64> {
    if post.output_dim() != 1 {
        return Err(OwlError::ScalarOutputOnly { got: post.output_dim() });
    }
    if post.basis().is_linear() {
        let a = post.mean_coeffs().row(0).transpose();
        Ok(a.dot(&(dist.covariance() * &a)))
    } else {
        let draws = draws.ok_or_else(|| {
            OwlError::InvalidArgument("nonlinear basis needs shared variance draws".into())
        })?;
        let n = draws.nrows();
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            ys.push(post.mean_output(&draws.row(i).transpose())[0]);
        }
        let nf = n as f64;
        let mean = ys.iter().sum::<f64>() / nf;
        Ok(ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / nf)
    }
}

/// Absolute and relative error of the propagated output variance.
pub fn variance_error(
    post: &RegressionPosterior,
    dist: &InputDistribution,
    truth: &GroundTruth,
    draws: Option<&DMatrix<f64>>,
) -> Result<(f64, f64)> {
    let v_hat = model_output_variance(post, dist, draws)?;
    let abs = (v_hat - truth.exact_output_variance).abs();
    Ok((abs, abs / truth.exact_output_variance))
}

/// L1 distance of log densities over `region`, between the reference pdf
/// and a model pdf generated from the mean model plus predictive noise.
/// Integrates only where both densities exceed `1e-12`.
pub fn pdf_error(
    post: &RegressionPosterior,
    dist: &InputDistribution,
    truth: &GroundTruth,
    region: (f64, f64),
    n_model: usize,
    seed: u64,
) -> Result<f64> {
    let (reference, _, _) = truth
        .reference_pdf
        .as_ref()
        .ok_or_else(|| OwlError::InvalidArgument("ground truth carries no reference pdf".into()))?;
    let mut rng = rng_from_seed(seed);
    let mut ys = Vec::with_capacity(n_model);
    for _ in 0..n_model {
        let z = dist.sample_with(&mut rng);
        let pred = post.predict(&z)?;
        let var = pred.variance().unwrap_or(pred.scale[(0, 0)]);
        ys.push(pred.mean[0] + var.sqrt() * rng.sample::<f64, _>(StandardNormal));
    }
    let model = kde_density(&ys, 6.0)?;

    let (lo, hi) = region;
    if !(hi > lo) {
        return Err(OwlError::InvalidArgument("empty pdf region".into()));
    }
    let mut grid = Vec::new();
    let mut integrand = Vec::new();
    for (g, r) in reference.grid().iter().zip(reference.values()) {
        if *g < lo || *g > hi {
            continue;
        }
        let m = model.interpolate(*g);
        grid.push(*g);
        integrand.push(if *r > 1e-12 && m > 1e-12 {
            (m.ln() - r.ln()).abs()
        } else {
            0.0
        });
    }
    if grid.len() < 2 {
        return Err(OwlError::InvalidArgument(
            "pdf region does not overlap the reference grid".into(),
        ));
    }
    Ok(trapezoid(&grid, &integrand))
}

/// Per-coordinate variance of the chosen input at `step` across repeats,
/// `σ²(h_m) = (1/L) Σ_l (h_{m,l} - h̄_m)²`.
pub fn direction_stats(repeats: &[RepeatResult], step: usize) -> Result<DVector<f64>> {
    if repeats.len() < 2 {
        return Err(OwlError::InsufficientData { needed: 2, got: repeats.len() });
    }
    let l = repeats.len() as f64;
    let m = repeats[0].chosen[step].len();
    let mut mean = DVector::zeros(m);
    for rep in repeats {
        mean += &rep.chosen[step];
    }
    mean /= l;
    let mut var = DVector::zeros(m);
    for rep in repeats {
        let d = &rep.chosen[step] - &mean;
        var += d.component_mul(&d);
    }
    Ok(var / l)
}

fn known_noise_model(system: &BenchmarkSystem) -> NoiseModel {
    NoiseModel::KnownVariance(system.noise_sd * system.noise_sd)
}

/// Fit under the configured noise handling. Returns the posterior and
/// whether the empirical-Bayes step fell back to the previous state.
fn fit_posterior(
    config: &CampaignConfig,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    eb_state: &mut (f64, f64),
) -> Result<(RegressionPosterior, bool)> {
    let basis = config.system.basis.clone();
    match &config.noise {
        NoiseHandling::Known => Ok((
            RegressionPosterior::fit(x, y, basis, config.alpha, known_noise_model(&config.system))?,
            false,
        )),
        NoiseHandling::Inferred {
            sigma0_sq,
            empirical_bayes: false,
            ..
        } => {
            let noise = NoiseModel::InferredVariance {
                sigma0_sq: *sigma0_sq,
                nu: eb_state.1,
                alpha: config.alpha,
            };
            Ok((RegressionPosterior::fit(x, y, basis, config.alpha, noise)?, false))
        }
        NoiseHandling::Inferred {
            sigma0_sq,
            empirical_bayes: true,
            ..
        } => {
            match empirical_bayes_fit(x, y, basis.clone(), *sigma0_sq, *eb_state) {
                Ok(fit) if fit.converged => {
                    *eb_state = (fit.alpha, fit.nu);
                    Ok((fit.posterior, false))
                }
                Ok(_) | Err(OwlError::Divergence { .. }) => {
                    // Keep the previous (α, ν) and flag the step.
                    let (alpha, nu) = *eb_state;
                    let noise = NoiseModel::InferredVariance {
                        sigma0_sq: *sigma0_sq,
                        nu,
                        alpha,
                    };
                    Ok((RegressionPosterior::fit(x, y, basis, alpha, noise)?, true))
                }
                Err(e) => Err(e),
            }
        }
    }
}

struct Selection {
    point: DVector<f64>,
    fallback: bool,
}

fn select_candidate(
    config: &CampaignConfig,
    ctx: &CampaignContext,
    post: &RegressionPosterior,
    step: usize,
    repeat_seed: u64,
    warm: Option<&DVector<f64>>,
) -> Result<Selection> {
    let system = &config.system;
    let dist = &system.input_dist;
    match &config.strategy {
        SelectionStrategy::MonteCarlo => {
            let seed = derive_seed(derive_seed(repeat_seed, P_MC_STRATEGY), step as u64);
            let mut rng = rng_from_seed(seed);
            let draw = dist.sample_with(&mut rng);
            let point = match system.feasible {
                FeasibleSet::Disk { radius } => {
                    let norm = draw.norm();
                    if norm > radius {
                        draw * (radius / norm)
                    } else {
                        draw
                    }
                }
                _ => draw.normalize(),
            };
            Ok(Selection { point, fallback: false })
        }
        SelectionStrategy::Criterion(spec) => {
            let crit_ctx = match &ctx.feat_moments {
                Some(m) => CriterionContext::with_moments(post, m)?,
                None => CriterionContext::new(post, dist)?,
            };
            let weights = resolve_weights(config, post, spec, step, repeat_seed)?;
            let samples = if spec.needs_shared_samples() {
                let n_mc = match spec {
                    CriterionSpec::MutualInfoDirect { n_mc, .. }
                    | CriterionSpec::MutualInfoGaussian { n_mc, .. }
                    | CriterionSpec::MutualInfoUnknownVar { n_mc, .. }
                    | CriterionSpec::MutualInfoUnknownVarGaussian { n_mc, .. } => *n_mc,
                    _ => unreachable!(),
                };
                let seed = derive_seed(derive_seed(repeat_seed, P_SHARED), step as u64);
                Some(SharedSamples::generate(post, dist, n_mc, seed)?)
            } else {
                None
            };

            let sense = spec.sense();
            if spec.has_gradient() && !matches!(system.feasible, FeasibleSet::AngleGrid { .. }) {
                let objective = |h: &DVector<f64>| {
                    let cv = crit_ctx
                        .evaluate(spec, h, weights.as_ref(), samples.as_ref())
                        .expect("gradient criteria cannot fail after validation");
                    (cv.value, cv.gradient.expect("gradient criteria carry gradients"))
                };
                let opts = OptimizeOptions {
                    n_starts: config.budgets.n_starts,
                    max_iters: config.budgets.max_iters,
                    seed: derive_seed(derive_seed(repeat_seed, P_OPTIMIZER), step as u64),
                    sense,
                    warm_start: warm.cloned(),
                };
                let report = match system.feasible {
                    FeasibleSet::UnitSphere { dim } => optimize_sphere(&objective, dim, &opts)?,
                    FeasibleSet::Disk { radius } => optimize_disk(&objective, radius, &opts)?,
                    FeasibleSet::AngleGrid { .. } => unreachable!(),
                };
                if report.any_converged() {
                    return Ok(Selection { point: report.best_point, fallback: false });
                }
                // Fall back to the best grid candidate (2-D) or keep the
                // best start otherwise, flagging the step either way.
                if system.feasible.dim() == 2 {
                    let mut objective_value = |h: &DVector<f64>| {
                        crit_ctx
                            .evaluate(spec, h, weights.as_ref(), samples.as_ref())
                            .expect("validated criterion")
                            .value
                    };
                    let grid =
                        optimize_grid(&mut objective_value, config.budgets.grid_count, sense)?;
                    let point = match system.feasible {
                        FeasibleSet::Disk { radius } => grid.best_point * radius,
                        _ => grid.best_point,
                    };
                    return Ok(Selection { point, fallback: true });
                }
                return Ok(Selection { point: report.best_point, fallback: true });
            }

            // Gradient-free criteria: exhaustive angle grid (2-D).
            let count = match system.feasible {
                FeasibleSet::AngleGrid { count } => count,
                _ => config.budgets.grid_count,
            };
            let mut objective_value = |h: &DVector<f64>| {
                crit_ctx
                    .evaluate(spec, h, weights.as_ref(), samples.as_ref())
                    .expect("validated criterion")
                    .value
            };
            let report = optimize_grid(&mut objective_value, count, sense)?;
            let point = match system.feasible {
                FeasibleSet::Disk { radius } => report.best_point * radius,
                _ => report.best_point,
            };
            Ok(Selection { point, fallback: false })
        }
    }
}

/// Q weights are refreshed every step: `σ_y0` is the deviation of the
/// current mean-model output over seeded input draws.
fn resolve_weights(
    config: &CampaignConfig,
    post: &RegressionPosterior,
    spec: &CriterionSpec,
    step: usize,
    repeat_seed: u64,
) -> Result<Option<QWeights>> {
    let CriterionSpec::Q { weights: mode } = spec else {
        return Ok(None);
    };
    match mode {
        QWeightMode::Beta(_) => {
            let seed = derive_seed(derive_seed(repeat_seed, P_SIGMA_Y0), step as u64);
            let mut rng = rng_from_seed(seed);
            let n = config.budgets.sigma_y0_draws;
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let z = config.system.input_dist.sample_with(&mut rng);
                ys.push(post.mean_output(&z)[0]);
            }
            let nf = n as f64;
            let mean = ys.iter().sum::<f64>() / nf;
            let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / nf;
            // Floor keeps the weights finite on a degenerate early model.
            let sigma_y0 = var.sqrt().max(1e-8);
            Ok(Some(q_weights(sigma_y0, mode)?))
        }
        _ => Ok(Some(q_weights(1.0, mode)?)),
    }
}

fn record_error(
    config: &CampaignConfig,
    ctx: &CampaignContext,
    post: &RegressionPosterior,
    step: usize,
    repeat_seed: u64,
) -> Result<(f64, f64)> {
    match &config.metric {
        ErrorMetric::VarianceError => variance_error(
            post,
            &config.system.input_dist,
            &ctx.truth,
            ctx.variance_draws.as_ref(),
        ),
        ErrorMetric::LogPdfL1 { lo, hi } => {
            let seed = derive_seed(derive_seed(repeat_seed, P_PDF_MODEL), step as u64);
            let abs = pdf_error(
                post,
                &config.system.input_dist,
                &ctx.truth,
                (*lo, *hi),
                config.budgets.pdf_model_mc,
                seed,
            )?;
            Ok((abs, abs))
        }
    }
}

/// Run a single repeat. Deterministic in `(config.base_seed,
/// repeat_index)`; builds its own context, so prefer [`run_ensemble`]
/// for multiple repeats.
pub fn run_campaign(config: &CampaignConfig, repeat_index: u64) -> Result<RepeatResult> {
    let ctx = prepare(config)?;
    run_repeat(config, &ctx, repeat_index)
}

fn run_repeat(
    config: &CampaignConfig,
    ctx: &CampaignContext,
    repeat_index: u64,
) -> Result<RepeatResult> {
    let system = &config.system;
    let repeat_seed = derive_seed(config.base_seed, repeat_index);

    let init = initial_inputs(system, derive_seed(repeat_seed, P_INIT));
    let mut rows: Vec<DVector<f64>> = (0..init.nrows()).map(|i| init.row(i).transpose()).collect();
    let mut noise_rng = rng_from_seed(derive_seed(repeat_seed, P_OBS_NOISE));
    let mut outputs: Vec<f64> = rows
        .iter()
        .map(|x| system.map.eval(x) + system.noise_sd * noise_rng.sample::<f64, _>(StandardNormal))
        .collect();

    let nu0 = match &config.noise {
        NoiseHandling::Inferred { nu0, .. } => *nu0,
        NoiseHandling::Known => 1.0,
    };
    let mut eb_state = (config.alpha, nu0);

    let to_matrices = |rows: &[DVector<f64>], outputs: &[f64]| {
        let m = system.input_dist.dim();
        let x = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
        let y = DMatrix::from_fn(outputs.len(), 1, |i, _| outputs[i]);
        (x, y)
    };

    let (x0, y0) = to_matrices(&rows, &outputs);
    let (mut posterior, mut eb_flag) = fit_posterior(config, &x0, &y0, &mut eb_state)?;

    let mut result = RepeatResult {
        chosen: Vec::with_capacity(config.n_steps),
        outputs: Vec::with_capacity(config.n_steps),
        errors_abs: Vec::with_capacity(config.n_steps),
        errors_rel: Vec::with_capacity(config.n_steps),
        optimizer_fallback_steps: Vec::new(),
        eb_nonconverged_steps: Vec::new(),
    };

    let mut warm: Option<DVector<f64>> = None;
    for step in 0..config.n_steps {
        if eb_flag {
            result.eb_nonconverged_steps.push(step);
        }
        let selection = select_candidate(config, ctx, &posterior, step, repeat_seed, warm.as_ref())?;
        if selection.fallback {
            result.optimizer_fallback_steps.push(step);
        }
        let h = selection.point;
        let y_new =
            system.map.eval(&h) + system.noise_sd * noise_rng.sample::<f64, _>(StandardNormal);
        rows.push(h.clone());
        outputs.push(y_new);
        warm = Some(h.clone());
        result.chosen.push(h);
        result.outputs.push(y_new);

        let (x, y) = to_matrices(&rows, &outputs);
        let fitted = fit_posterior(config, &x, &y, &mut eb_state)?;
        posterior = fitted.0;
        eb_flag = fitted.1;

        let (abs, rel) = record_error(config, ctx, &posterior, step, repeat_seed)?;
        result.errors_abs.push(abs);
        result.errors_rel.push(rel);
    }
    Ok(result)
}

/// Run the full ensemble with the default execution mode (parallel when
/// the `parallel` feature is enabled).
pub fn run_ensemble(config: &CampaignConfig) -> Result<CampaignResult> {
    run_ensemble_with(config, Parallelism::default())
}

/// Run the full ensemble under an explicit execution mode. Results are
/// bit-identical across modes and thread counts.
pub fn run_ensemble_with(config: &CampaignConfig, mode: Parallelism) -> Result<CampaignResult> {
    let ctx = prepare(config)?;
    let indices: Vec<u64> = (0..config.n_repeats as u64).collect();
    let repeats: Vec<RepeatResult> = match mode {
        Parallelism::Sequential => indices
            .iter()
            .map(|&l| run_repeat(config, &ctx, l))
            .collect::<Result<_>>()?,
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => indices
            .par_iter()
            .map(|&l| run_repeat(config, &ctx, l))
            .collect::<Result<_>>()?,
    };

    let steps = config.n_steps;
    let l = repeats.len() as f64;
    let mut mean_error = vec![0.0; steps];
    let mut std_error = vec![0.0; steps];
    for rep in &repeats {
        for (k, e) in rep.errors_abs.iter().enumerate() {
            mean_error[k] += e;
        }
    }
    for m in mean_error.iter_mut() {
        *m /= l;
    }
    for rep in &repeats {
        for (k, e) in rep.errors_abs.iter().enumerate() {
            std_error[k] += (e - mean_error[k]).powi(2);
        }
    }
    for s in std_error.iter_mut() {
        *s = (*s / l).sqrt();
    }
    let band = std_error.iter().map(|s| 0.2 * s).collect();
    Ok(CampaignResult {
        repeats,
        mean_error,
        std_error,
        band,
        truth: ctx.truth,
    })
}
