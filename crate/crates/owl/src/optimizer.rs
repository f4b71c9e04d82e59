//! Constrained optimization of criterion objectives.
//!
//! Three feasible sets cover the benchmark protocols: the unit sphere
//! `S^{m-1}` (linear problems), a one-dimensional angle grid for
//! two-dimensional inputs (gradient-free criteria), and a disk of given
//! radius (nonlinear input space).
//!
//! The gradient method is plain projected gradient with Armijo
//! backtracking: step from 1.0, shrink by half, at most 30 backtracks,
//! stop when the projected-gradient norm falls below `1e-8` or after
//! `max_iters` iterations. Multi-start with seeded random starts plus an
//! optional warm start; the report keeps per-start convergence flags and
//! iteration counts.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::criteria::CriterionSense;
use crate::error::{OwlError, Result};
use crate::rng::rng_from_seed;

/// Projected-gradient convergence tolerance.
const GRAD_TOL: f64 = 1e-8;
/// Armijo sufficient-decrease constant.
const ARMIJO_C: f64 = 1e-4;
/// Maximum number of step halvings per iteration.
const MAX_BACKTRACKS: usize = 30;

/// Admissible set for the next sample.
#[derive(Debug, Clone, PartialEq)]
pub enum FeasibleSet {
    UnitSphere { dim: usize },
    /// `count` equispaced angles in `[-π/2, π/2]`, for 2-D inputs.
    AngleGrid { count: usize },
    /// `‖z‖ ≤ radius` in the plane.
    Disk { radius: f64 },
}

impl FeasibleSet {
    pub fn validate(&self) -> Result<()> {
        match self {
            FeasibleSet::UnitSphere { dim } if *dim >= 1 => Ok(()),
            FeasibleSet::UnitSphere { .. } => {
                Err(OwlError::InvalidArgument("sphere dimension must be >= 1".into()))
            }
            FeasibleSet::AngleGrid { count } if *count >= 8 => Ok(()),
            FeasibleSet::AngleGrid { .. } => {
                Err(OwlError::InvalidArgument("angle grid needs at least 8 points".into()))
            }
            FeasibleSet::Disk { radius } if *radius > 0.0 => Ok(()),
            FeasibleSet::Disk { .. } => {
                Err(OwlError::InvalidArgument("disk radius must be positive".into()))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::UnitSphere { dim } => *dim,
            FeasibleSet::AngleGrid { .. } | FeasibleSet::Disk { .. } => 2,
        }
    }

    pub fn contains(&self, point: &DVector<f64>, tol: f64) -> bool {
        match self {
            FeasibleSet::UnitSphere { dim } => {
                point.len() == *dim && (point.norm() - 1.0).abs() <= tol
            }
            FeasibleSet::AngleGrid { .. } => point.len() == 2 && (point.norm() - 1.0).abs() <= tol,
            FeasibleSet::Disk { radius } => point.len() == 2 && point.norm() <= radius + tol,
        }
    }
}

/// Multi-start settings for the gradient optimizers.
#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    pub n_starts: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub sense: CriterionSense,
    /// Usually the previous step's chosen point.
    pub warm_start: Option<DVector<f64>>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            n_starts: 8,
            max_iters: 500,
            seed: 0,
            sense: CriterionSense::Minimize,
            warm_start: None,
        }
    }
}

/// Outcome of one optimization call.
#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub best_point: DVector<f64>,
    pub best_value: f64,
    pub starts_used: usize,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
}

impl OptimizeReport {
    pub fn any_converged(&self) -> bool {
        self.converged.iter().any(|c| *c)
    }
}

/// Force the first component larger than `1e-14` in magnitude to be
/// positive; `h` and `-h` parametrize the same rank-one update.
pub fn canonicalize_sign(point: &mut DVector<f64>) {
    if let Some(first) = point.iter().find(|v| v.abs() > 1e-14) {
        if *first < 0.0 {
            *point = -&*point;
        }
    }
}

/// Exhaustive search over `count` equispaced angles in `[-π/2, π/2]`,
/// evaluating `h = (cos θ, sin θ)`. Ties resolve to the smallest angle.
pub fn optimize_grid(
    objective: &mut dyn FnMut(&DVector<f64>) -> f64,
    count: usize,
    sense: CriterionSense,
) -> Result<OptimizeReport> {
    FeasibleSet::AngleGrid { count }.validate()?;
    let mut best_value = f64::INFINITY;
    let mut best_point = DVector::zeros(2);
    for k in 0..count {
        let theta = -std::f64::consts::FRAC_PI_2
            + std::f64::consts::PI * k as f64 / (count as f64 - 1.0);
        let h = DVector::from_column_slice(&[theta.cos(), theta.sin()]);
        let raw = objective(&h);
        let value = match sense {
            CriterionSense::Minimize => raw,
            CriterionSense::Maximize => -raw,
        };
        if value < best_value {
            best_value = value;
            best_point = h;
        }
    }
    let best_value = match sense {
        CriterionSense::Minimize => best_value,
        CriterionSense::Maximize => -best_value,
    };
    Ok(OptimizeReport {
        best_point,
        best_value,
        starts_used: 1,
        converged: vec![true],
        iterations: vec![count],
    })
}

/// Angle of the `k`-th grid point, matching [`optimize_grid`].
pub fn grid_angle(k: usize, count: usize) -> f64 {
    -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * k as f64 / (count as f64 - 1.0)
}

struct StartOutcome {
    point: DVector<f64>,
    value: f64,
    converged: bool,
    iterations: usize,
}

fn run_starts(
    objective: &dyn Fn(&DVector<f64>) -> (f64, DVector<f64>),
    starts: Vec<DVector<f64>>,
    opts: &OptimizeOptions,
    project: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    descent_residual: &dyn Fn(&DVector<f64>, &DVector<f64>) -> f64,
) -> OptimizeReport {
    let negate = opts.sense == CriterionSense::Maximize;
    let eval = |x: &DVector<f64>| -> (f64, DVector<f64>) {
        let (f, g) = objective(x);
        if negate {
            (-f, -g)
        } else {
            (f, g)
        }
    };

    let mut outcomes: Vec<StartOutcome> = Vec::with_capacity(starts.len());
    for start in starts {
        let mut x = project(&start);
        let (mut f, mut g) = eval(&x);
        let mut converged = false;
        let mut iterations = 0;
        for _ in 0..opts.max_iters {
            if descent_residual(&x, &g) < GRAD_TOL {
                converged = true;
                break;
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACKS {
                let trial = project(&(&x - t * &g));
                let displacement = (&x - &trial).norm_squared();
                if displacement == 0.0 {
                    t *= 0.5;
                    continue;
                }
                let (ft, gt) = eval(&trial);
                if ft <= f - ARMIJO_C / t * displacement {
                    x = trial;
                    f = ft;
                    g = gt;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // No acceptable step at the smallest scale: treat the
                // point as stationary at line-search resolution.
                converged = descent_residual(&x, &g) < 1e-6;
                break;
            }
            iterations += 1;
        }
        if iterations == opts.max_iters {
            converged = descent_residual(&x, &g) < GRAD_TOL;
        }
        outcomes.push(StartOutcome {
            point: x,
            value: f,
            converged,
            iterations,
        });
    }

    let best_idx = outcomes
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.value.partial_cmp(&b.value).unwrap())
        .map(|(i, _)| i)
        .expect("at least one start");
    let best_value = if negate {
        -outcomes[best_idx].value
    } else {
        outcomes[best_idx].value
    };
    OptimizeReport {
        best_point: outcomes[best_idx].point.clone(),
        best_value,
        starts_used: outcomes.len(),
        converged: outcomes.iter().map(|o| o.converged).collect(),
        iterations: outcomes.iter().map(|o| o.iterations).collect(),
    }
}

/// Projected gradient on the unit sphere. The iterate steps along the
/// tangential gradient and renormalizes; the report's sign is
/// canonicalized (first nonzero component positive).
pub fn optimize_sphere(
    objective: &dyn Fn(&DVector<f64>) -> (f64, DVector<f64>),
    dim: usize,
    opts: &OptimizeOptions,
) -> Result<OptimizeReport> {
    FeasibleSet::UnitSphere { dim }.validate()?;
    if opts.n_starts == 0 {
        return Err(OwlError::InvalidArgument("need at least one start".into()));
    }
    let mut rng = rng_from_seed(opts.seed);
    let mut starts = Vec::with_capacity(opts.n_starts);
    if let Some(w) = &opts.warm_start {
        starts.push(w.clone());
    }
    while starts.len() < opts.n_starts {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        starts.push(v.normalize());
    }

    let project = |x: &DVector<f64>| x.normalize();
    // Tangential gradient: g - (g·x) x on the unit sphere.
    let residual = |x: &DVector<f64>, g: &DVector<f64>| (g - x * g.dot(x)).norm();
    let mut report = run_starts(objective, starts, opts, &project, &residual);
    canonicalize_sign(&mut report.best_point);
    Ok(report)
}

/// Projected gradient on the disk `‖z‖ ≤ radius` with radial clipping.
/// No sign canonicalization: for a general basis `z` and `-z` are not
/// equivalent.
pub fn optimize_disk(
    objective: &dyn Fn(&DVector<f64>) -> (f64, DVector<f64>),
    radius: f64,
    opts: &OptimizeOptions,
) -> Result<OptimizeReport> {
    FeasibleSet::Disk { radius }.validate()?;
    if opts.n_starts == 0 {
        return Err(OwlError::InvalidArgument("need at least one start".into()));
    }
    let mut rng = rng_from_seed(opts.seed);
    let mut starts = Vec::with_capacity(opts.n_starts);
    if let Some(w) = &opts.warm_start {
        starts.push(w.clone());
    }
    while starts.len() < opts.n_starts {
        let r = radius * rng.random::<f64>().sqrt();
        let angle = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        starts.push(DVector::from_column_slice(&[r * angle.cos(), r * angle.sin()]));
    }

    let clip = move |x: &DVector<f64>| {
        let norm = x.norm();
        if norm > radius {
            x * (radius / norm)
        } else {
            x.clone()
        }
    };
    // Gradient mapping residual ‖x - P(x - g)‖.
    let residual = move |x: &DVector<f64>, g: &DVector<f64>| {
        let stepped = clip(&(x - g));
        (x - stepped).norm()
    };
    Ok(run_starts(objective, starts, opts, &clip, &residual))
}
