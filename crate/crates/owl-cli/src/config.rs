//! Run configuration: a TOML file with documented defaults, plus
//! `--override key=value` patches applied to the raw value tree before
//! deserialization. Unknown keys are hard errors.

use serde::{Deserialize, Serialize};

use owl::benchmarks::{system_by_name, BenchmarkSystem, InitProtocol, VarianceReading};
use owl::campaign::{CampaignConfig, ErrorMetric, McBudgets, NoiseHandling, SelectionStrategy};
use owl::criteria::{CriterionSpec, QWeightMode};

use crate::CliError;

pub const CRITERION_NAMES: [&str; 10] = [
    "mu_c",
    "sigma_c",
    "mi",
    "mi_gauss",
    "q_inf",
    "q_beta",
    "q",
    "mi_unknown_var",
    "mi_unknown_var_gauss",
    "monte_carlo",
];

fn d_steps() -> usize {
    30
}
fn d_repeats() -> usize {
    100
}
fn d_alpha() -> f64 {
    0.1
}
fn d_metric() -> String {
    "variance".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Benchmark system name (see `owl list`).
    pub system: String,
    /// Criterion tag (see `owl list`).
    pub criterion: String,
    /// Sequential-design steps per repeat. Default 30.
    #[serde(default = "d_steps")]
    pub n_steps: usize,
    /// Ensemble size. Default 100.
    #[serde(default = "d_repeats")]
    pub n_repeats: usize,
    /// Base seed; fixes every number of the run. Default 0.
    #[serde(default)]
    pub seed: u64,
    /// Prior scale in `S_xx = ΦΦᵀ + αI`. Default 0.1.
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    /// `variance` (absolute output-variance error) or `log_pdf_l1`
    /// (needs `[pdf_region]`). Default `variance`.
    #[serde(default = "d_metric")]
    pub error_metric: String,
    #[serde(default)]
    pub criterion_params: CriterionParams,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub budgets: BudgetConfig,
    #[serde(default)]
    pub pdf_region: Option<PdfRegion>,
    #[serde(default)]
    pub system_options: SystemOptions,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionParams {
    /// Width parameter for `q_beta`.
    pub beta: Option<f64>,
    /// Explicit weights for `q`. Defaults (0, 1) when omitted.
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    /// Monte-Carlo budget of the information criteria; defaults to
    /// `budgets.criterion_mc`.
    pub mc_samples: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// `known` (model sees the true noise variance) or `inferred`
    /// (inverse-gamma prior). Default `known`.
    pub mode: String,
    /// Prior scale σ₀² for `inferred`. Default 0.01.
    pub sigma0_sq: f64,
    /// Prior shape ν₀ for `inferred`. Default 1.0.
    pub nu0: f64,
    /// Re-run the evidence fixed point each step. Default true.
    pub empirical_bayes: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mode: "known".into(),
            sigma0_sq: 0.01,
            nu0: 1.0,
            empirical_bayes: true,
        }
    }
}

/// Mirrors [`McBudgets`]; every field has the library default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub criterion_mc: usize,
    pub sigma_y0_draws: usize,
    pub variance_mc: usize,
    pub truth_mc: usize,
    pub moments_mc: usize,
    pub pdf_model_mc: usize,
    pub grid_count: usize,
    pub n_starts: usize,
    pub max_iters: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        let d = McBudgets::default();
        Self {
            criterion_mc: d.criterion_mc,
            sigma_y0_draws: d.sigma_y0_draws,
            variance_mc: d.variance_mc,
            truth_mc: d.truth_mc,
            moments_mc: d.moments_mc,
            pdf_model_mc: d.pdf_model_mc,
            grid_count: d.grid_count,
            n_starts: d.n_starts,
            max_iters: d.max_iters,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdfRegion {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemOptions {
    /// Required for `linear20d-*`: `abs-cubed` or `abs-whole` (the
    /// stated input-variance formula is negative for m ≤ 6 and needs an
    /// explicit sign resolution).
    pub variance_reading: Option<String>,
    /// Normalize the random initial inputs onto the unit sphere.
    /// Default false.
    pub init_normalize: bool,
}

impl Default for SystemOptions {
    fn default() -> Self {
        Self {
            variance_reading: None,
            init_normalize: false,
        }
    }
}

impl RunConfig {
    /// Parse a TOML document and apply `key=value` overrides (dotted
    /// paths address nested tables) onto the raw value tree.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut root: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("config does not parse: {e}")))?;
        for patch in overrides {
            apply_override(&mut root, patch)?;
        }
        toml::Value::Table(root)
            .try_into()
            .map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn variance_reading(&self) -> Result<Option<VarianceReading>, CliError> {
        match self.system_options.variance_reading.as_deref() {
            None => Ok(None),
            Some("abs-cubed") => Ok(Some(VarianceReading::AbsoluteCubed)),
            Some("abs-whole") => Ok(Some(VarianceReading::AbsoluteWhole)),
            Some(other) => Err(CliError::Usage(format!(
                "unknown variance_reading `{other}`; valid options: abs-cubed, abs-whole"
            ))),
        }
    }

    pub fn resolve_system(&self) -> Result<BenchmarkSystem, CliError> {
        let mut system = system_by_name(&self.system, self.variance_reading()?)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if self.system_options.init_normalize {
            if let InitProtocol::RandomFromInput { count, .. } = system.init {
                system.init = InitProtocol::RandomFromInput { count, normalize: true };
            }
        }
        Ok(system)
    }

    pub fn resolve_strategy(&self) -> Result<SelectionStrategy, CliError> {
        let mc = self
            .criterion_params
            .mc_samples
            .unwrap_or(self.budgets.criterion_mc);
        let seed = self.seed;
        let spec = match self.criterion.as_str() {
            "mu_c" => CriterionSpec::MuC,
            "sigma_c" => CriterionSpec::SigmaC,
            "mi" => CriterionSpec::MutualInfoDirect { n_mc: mc, seed },
            "mi_gauss" => CriterionSpec::MutualInfoGaussian { n_mc: mc, seed },
            "q_inf" => CriterionSpec::Q { weights: QWeightMode::Infinity },
            "q_beta" => {
                let beta = self.criterion_params.beta.ok_or_else(|| {
                    CliError::Usage("criterion q_beta needs criterion_params.beta".into())
                })?;
                CriterionSpec::Q { weights: QWeightMode::Beta(beta) }
            }
            "q" => CriterionSpec::Q {
                weights: QWeightMode::Explicit {
                    p1: self.criterion_params.p1.unwrap_or(0.0),
                    p2: self.criterion_params.p2.unwrap_or(1.0),
                },
            },
            "mi_unknown_var" => CriterionSpec::MutualInfoUnknownVar { n_mc: mc, seed },
            "mi_unknown_var_gauss" => {
                CriterionSpec::MutualInfoUnknownVarGaussian { n_mc: mc, seed }
            }
            "monte_carlo" => return Ok(SelectionStrategy::MonteCarlo),
            other => {
                return Err(CliError::Usage(format!(
                    "unknown criterion `{other}`; valid options: {}",
                    CRITERION_NAMES.join(", ")
                )))
            }
        };
        Ok(SelectionStrategy::Criterion(spec))
    }

    /// Lower the parsed file into a library campaign configuration.
    pub fn to_campaign(&self) -> Result<CampaignConfig, CliError> {
        let system = self.resolve_system()?;
        let strategy = self.resolve_strategy()?;
        let noise = match self.noise.mode.as_str() {
            "known" => NoiseHandling::Known,
            "inferred" => NoiseHandling::Inferred {
                sigma0_sq: self.noise.sigma0_sq,
                nu0: self.noise.nu0,
                empirical_bayes: self.noise.empirical_bayes,
            },
            other => {
                return Err(CliError::Usage(format!(
                    "unknown noise mode `{other}`; valid options: known, inferred"
                )))
            }
        };
        let metric = match self.error_metric.as_str() {
            "variance" => ErrorMetric::VarianceError,
            "log_pdf_l1" => {
                let region = self.pdf_region.as_ref().ok_or_else(|| {
                    CliError::Usage("error_metric log_pdf_l1 needs [pdf_region]".into())
                })?;
                ErrorMetric::LogPdfL1 { lo: region.lo, hi: region.hi }
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown error_metric `{other}`; valid options: variance, log_pdf_l1"
                )))
            }
        };
        let b = &self.budgets;
        let config = CampaignConfig {
            system,
            strategy,
            n_steps: self.n_steps,
            n_repeats: self.n_repeats,
            base_seed: self.seed,
            alpha: self.alpha,
            noise,
            metric,
            budgets: McBudgets {
                criterion_mc: b.criterion_mc,
                sigma_y0_draws: b.sigma_y0_draws,
                variance_mc: b.variance_mc,
                truth_mc: b.truth_mc,
                moments_mc: b.moments_mc,
                pdf_model_mc: b.pdf_model_mc,
                grid_count: b.grid_count,
                n_starts: b.n_starts,
                max_iters: b.max_iters,
            },
        };
        owl::campaign::validate_config(&config).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }
}

/// Apply one `key=value` patch. Values parse as bool, integer, float,
/// then fall back to string.
fn apply_override(root: &mut toml::Table, patch: &str) -> Result<(), CliError> {
    let Some((path, raw)) = patch.split_once('=') else {
        return Err(CliError::Usage(format!("override `{patch}` is not key=value")));
    };
    let value = if let Ok(b) = raw.parse::<bool>() {
        toml::Value::Boolean(b)
    } else if let Ok(i) = raw.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = raw.parse::<f64>() {
        toml::Value::Float(f)
    } else {
        toml::Value::String(raw.to_string())
    };

    let mut parts = path.split('.').peekable();
    let mut table = root;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                CliError::Usage(format!("override path `{path}` crosses a non-table value"))
            })?;
    }
    unreachable!("split always yields at least one part")
}
