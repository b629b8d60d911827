//! Solving assembled systems, reading back gains and Lyapunov matrices, and
//! bisection on the decay rate.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{assemble_lmis_with, AssemblyOptions, GammaSpec, LmiSystem, SynthesisError, Theorem};
use crate::clock::Stopwatch;
use crate::model::LiftedModel;
use crate::sdp::{BarrierBackend, FeasibilityBackend, FeasibilityStatus, SolveOptions, DEFAULT_EPSILON};

/// Condition number above which `X_1` (or `X`) is considered singular.
const MAX_CONDITION: f64 = 1e12;

/// Bisection iteration cap.
const MAX_BISECTIONS: usize = 60;

/// Feedback gains; the applied input is always `u = −K̂ ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Gains {
    Static {
        #[serde(with = "crate::rows::matrix")]
        kx: DMatrix<f64>,
    },
    Switched {
        #[serde(with = "crate::rows::matrices")]
        kx: Vec<DMatrix<f64>>,
    },
    Extended {
        #[serde(with = "crate::rows::matrix")]
        kx: DMatrix<f64>,
        #[serde(with = "crate::rows::matrix")]
        ku: DMatrix<f64>,
    },
}

impl Gains {
    /// `K̂_i` (`m × (n + δ̄m)`) for 1-based mode `i`.
    pub fn k_hat(&self, mode: usize, delta_bar: usize) -> DMatrix<f64> {
        let embed = |kx: &DMatrix<f64>| {
            let m = kx.nrows();
            let mut k = DMatrix::zeros(m, kx.ncols() + delta_bar * m);
            k.view_mut((0, 0), (m, kx.ncols())).copy_from(kx);
            k
        };
        match self {
            Gains::Static { kx } => embed(kx),
            Gains::Switched { kx } => embed(&kx[mode - 1]),
            Gains::Extended { kx, ku } => {
                let m = kx.nrows();
                let mut k = DMatrix::zeros(m, kx.ncols() + ku.ncols());
                k.view_mut((0, 0), (m, kx.ncols())).copy_from(kx);
                k.view_mut((0, kx.ncols()), (m, ku.ncols())).copy_from(ku);
                k
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Gains::Static { kx } => kx.iter().all(|v| v.is_finite()),
            Gains::Switched { kx } => kx.iter().flat_map(|k| k.iter()).all(|v| v.is_finite()),
            Gains::Extended { kx, ku } => kx.iter().chain(ku.iter()).all(|v| v.is_finite()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub status: FeasibilityStatus,
    pub backend: String,
    pub epsilon: f64,
    /// Smallest eigenvalue over the normalised constraints.
    pub margin: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    /// Condition number of the inverted `X_1` block(s), worst case.
    pub condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub theorem: Theorem,
    pub gains: Gains,
    /// `P_i = Y_i⁻¹`, one per mode.
    #[serde(with = "crate::rows::matrices")]
    pub lyapunov: Vec<DMatrix<f64>>,
    pub gamma: GammaSpec,
    pub diagnostics: Diagnostics,
}

impl SynthesisResult {
    pub fn delta_bar(&self) -> usize {
        self.lyapunov.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisOutcome {
    Feasible(Box<SynthesisResult>),
    Infeasible { margin: f64, iterations: usize },
    Unknown { margin: f64, iterations: usize },
}

impl SynthesisOutcome {
    pub fn feasible(self) -> Option<SynthesisResult> {
        match self {
            SynthesisOutcome::Feasible(r) => Some(*r),
            _ => None,
        }
    }

    pub fn status(&self) -> FeasibilityStatus {
        match self {
            SynthesisOutcome::Feasible(_) => FeasibilityStatus::Feasible,
            SynthesisOutcome::Infeasible { .. } => FeasibilityStatus::Infeasible,
            SynthesisOutcome::Unknown { .. } => FeasibilityStatus::Unknown,
        }
    }
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn symmetric_inverse(y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut p = y.clone().cholesky()?.inverse();
    for r in 0..p.nrows() {
        for c in 0..r {
            let v = 0.5 * (p[(r, c)] + p[(c, r)]);
            p[(r, c)] = v;
            p[(c, r)] = v;
        }
    }
    Some(p)
}

fn extract(system: &LmiSystem, x: &[f64]) -> Result<(Gains, Vec<DMatrix<f64>>, f64), SynthesisError> {
    let vars = &system.variables;
    let db = system.delta_bar;
    let mut worst = 1.0f64;
    let mut gain_for = |inverted: DMatrix<f64>, z: DMatrix<f64>| -> Result<DMatrix<f64>, SynthesisError> {
        let cond = condition_number(&inverted);
        worst = worst.max(cond);
        if !(cond <= MAX_CONDITION) {
            return Err(SynthesisError::Extraction { condition: cond });
        }
        let inv = inverted
            .try_inverse()
            .ok_or(SynthesisError::Extraction { condition: f64::INFINITY })?;
        Ok(z * inv)
    };
    let gains = match system.theorem {
        Theorem::Static => Gains::Static {
            kx: gain_for(vars.x1_value(1, x), vars.z[0].value(x))?,
        },
        Theorem::Switched => Gains::Switched {
            kx: (1..=db)
                .map(|i| gain_for(vars.x1_value(i, x), vars.z[i - 1].value(x)))
                .collect::<Result<_, _>>()?,
        },
        Theorem::Extended => {
            let k = gain_for(vars.x_value(1, x), vars.z_hat_value(1, x))?;
            let n = system.n;
            Gains::Extended {
                kx: k.columns(0, n).into_owned(),
                ku: k.columns(n, k.ncols() - n).into_owned(),
            }
        }
    };
    let lyapunov = vars
        .y
        .iter()
        .map(|y| symmetric_inverse(&y.value(x)))
        .collect::<Option<Vec<_>>>()
        .ok_or(SynthesisError::Extraction { condition: f64::INFINITY })?;
    Ok((gains, lyapunov, worst))
}

/// Solves with the default backend and strictness margin.
pub fn solve_feasibility(system: &LmiSystem) -> Result<SynthesisOutcome, SynthesisError> {
    solve_feasibility_with(system, &BarrierBackend::default(), &SolveOptions::default())
}

/// Solves, validates and extracts. A badly conditioned `X_1` triggers one
/// re-solve with a ten times larger margin before failing.
pub fn solve_feasibility_with(
    system: &LmiSystem,
    backend: &dyn FeasibilityBackend,
    opts: &SolveOptions,
) -> Result<SynthesisOutcome, SynthesisError> {
    let clock = Stopwatch::start();
    let mut opts = *opts;
    let mut retried = false;
    loop {
        let outcome = backend.solve(&system.constraints, &opts)?;
        let assignment = match outcome.status {
            FeasibilityStatus::Feasible => outcome.assignment.expect("feasible outcomes carry a point"),
            FeasibilityStatus::Infeasible => {
                return Ok(SynthesisOutcome::Infeasible {
                    margin: outcome.margin,
                    iterations: outcome.iterations,
                })
            }
            FeasibilityStatus::Unknown => {
                return Ok(SynthesisOutcome::Unknown {
                    margin: outcome.margin,
                    iterations: outcome.iterations,
                })
            }
        };
        match extract(system, &assignment) {
            Ok((gains, lyapunov, condition)) if gains.is_finite() => {
                return Ok(SynthesisOutcome::Feasible(Box::new(SynthesisResult {
                    theorem: system.theorem,
                    gains,
                    lyapunov,
                    gamma: system.gamma.clone(),
                    diagnostics: Diagnostics {
                        status: FeasibilityStatus::Feasible,
                        backend: backend.name().to_string(),
                        epsilon: opts.epsilon,
                        margin: outcome.margin,
                        iterations: outcome.iterations,
                        wall_time_s: clock.elapsed().as_secs_f64(),
                        condition,
                    },
                })));
            }
            Ok(_) => return Err(SynthesisError::Extraction { condition: f64::INFINITY }),
            Err(e) if retried => return Err(e),
            Err(_) => {
                retried = true;
                opts.epsilon *= 10.0;
            }
        }
    }
}

/// Which decay parameters the bisection moves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaFree {
    /// One scalar `γ` shared by every mode.
    Single,
    /// Per-mode `γ_i`; the listed 1-based modes move together, the rest stay 0.
    PerMode(BTreeSet<usize>),
}

impl GammaFree {
    fn spec(&self, value: f64, delta_bar: usize) -> GammaSpec {
        match self {
            GammaFree::Single => GammaSpec::Single(value),
            GammaFree::PerMode(free) => GammaSpec::PerMode(
                (1..=delta_bar)
                    .map(|i| if free.contains(&i) { value } else { 0.0 })
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaSearch {
    /// Largest value found feasible.
    pub value: f64,
    pub gamma: GammaSpec,
    pub result: SynthesisResult,
    /// `(γ, status)` for every evaluation, in order.
    pub evaluations: Vec<(f64, FeasibilityStatus)>,
    /// An evaluation came back unknown and was treated as infeasible.
    pub saw_unknown: bool,
}

/// Bisection on `[0, 1)` with the default backend.
pub fn maximize_gamma(
    lifted: &LiftedModel,
    theorem: Theorem,
    free: &GammaFree,
    tol: f64,
) -> Result<GammaSearch, SynthesisError> {
    maximize_gamma_with(
        lifted,
        theorem,
        free,
        tol,
        &AssemblyOptions::default(),
        &BarrierBackend::default(),
        &SolveOptions {
            epsilon: DEFAULT_EPSILON,
            budget: None,
        },
    )
}

pub fn maximize_gamma_with(
    lifted: &LiftedModel,
    theorem: Theorem,
    free: &GammaFree,
    tol: f64,
    assembly: &AssemblyOptions,
    backend: &dyn FeasibilityBackend,
    opts: &SolveOptions,
) -> Result<GammaSearch, SynthesisError> {
    if !(tol > 0.0) {
        return Err(SynthesisError::Gamma(format!("tolerance must be positive, got {tol}")));
    }
    if let GammaFree::PerMode(set) = free {
        if set.is_empty() || set.iter().any(|&i| i == 0 || i > lifted.delta_bar()) {
            return Err(SynthesisError::Gamma(format!(
                "free modes {set:?} must be a nonempty subset of 1..={}",
                lifted.delta_bar()
            )));
        }
    }
    let db = lifted.delta_bar();
    let mut evaluations = Vec::new();
    let mut saw_unknown = false;
    let mut evaluate = |value: f64| -> Result<Option<SynthesisResult>, SynthesisError> {
        let system = assemble_lmis_with(lifted, theorem, &free.spec(value, db), assembly)?;
        let outcome = match solve_feasibility_with(&system, backend, opts) {
            Ok(o) => o,
            Err(SynthesisError::Extraction { .. }) => SynthesisOutcome::Unknown {
                margin: f64::NAN,
                iterations: 0,
            },
            Err(e) => return Err(e),
        };
        evaluations.push((value, outcome.status()));
        if outcome.status() == FeasibilityStatus::Unknown {
            saw_unknown = true;
        }
        Ok(outcome.feasible())
    };

    let mut best = evaluate(0.0)?.ok_or(SynthesisError::NoStabilizingSolution)?;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..MAX_BISECTIONS {
        if hi - lo < tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match evaluate(mid)? {
            Some(r) => {
                lo = mid;
                best = r;
            }
            None => hi = mid,
        }
    }
    Ok(GammaSearch {
        value: lo,
        gamma: free.spec(lo, db),
        result: best,
        evaluations,
        saw_unknown,
    })
}
