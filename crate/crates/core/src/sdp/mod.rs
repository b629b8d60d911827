//! Strict feasibility of symmetric affine matrix inequalities
//! `C_b + Σ_a x_a F_{b,a} ≻ 0`.
//!
//! Two backends implement [`FeasibilityBackend`]:
//!
//! * [`BarrierBackend`] (default): a log-barrier interior-point method that
//!   maximises the smallest eigenvalue over a normalised variable set and
//!   certifies infeasibility from the duality-gap bound.
//! * [`ProjectionBackend`]: alternating projections with Dykstra correction
//!   between the affine image of the constraint map and the shifted PSD cone.
//!   It can only report infeasibility heuristically (stalled set distance).
//!
//! Every constraint is divided by its largest coefficient magnitude before
//! solving, and a backend's claimed solution is re-checked here with an
//! independent symmetric eigenvalue routine before it is reported feasible.
//!
//! Homogeneous systems (all constants zero) are scale free: their assignment
//! is reported with unit Euclidean norm, so the returned margin is the
//! normalised smallest eigenvalue.

mod barrier;
pub mod dump;
mod projection;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use barrier::BarrierBackend;
pub use projection::ProjectionBackend;

/// Default strictness margin.
pub const DEFAULT_EPSILON: f64 = 1e-7;

/// Largest tolerated `|M_rc − M_cr|` in an input matrix.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Index of a scalar decision variable in a shared registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("constraint list is empty")]
    Empty,
    #[error("epsilon must be positive and finite, got {0}")]
    Epsilon(f64),
    #[error("constraint {index}: {reason}")]
    Malformed { index: usize, reason: String },
    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// `constant + Σ coefficient_a · x_a ⪰ 0`, all matrices symmetric of one size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMatrixConstraint {
    size: usize,
    constant: DMatrix<f64>,
    coefficients: BTreeMap<VarId, DMatrix<f64>>,
}

impl AffineMatrixConstraint {
    /// An all-zero constraint of the given block size.
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            constant: DMatrix::zeros(size, size),
            coefficients: BTreeMap::new(),
        }
    }

    pub fn with_constant(constant: DMatrix<f64>) -> Self {
        let size = constant.nrows();
        Self {
            size,
            constant,
            coefficients: BTreeMap::new(),
        }
    }

    /// Adds `coefficient · x_var`, accumulating onto an existing term.
    pub fn add_term(&mut self, var: VarId, coefficient: DMatrix<f64>) {
        match self.coefficients.get_mut(&var) {
            Some(existing) => *existing += coefficient,
            None => {
                self.coefficients.insert(var, coefficient);
            }
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn constant(&self) -> &DMatrix<f64> {
        &self.constant
    }

    pub fn coefficients(&self) -> &BTreeMap<VarId, DMatrix<f64>> {
        &self.coefficients
    }

    pub fn constant_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.constant
    }

    /// Drops terms whose coefficient matrix is exactly zero.
    pub fn prune(&mut self) {
        self.coefficients.retain(|_, m| m.iter().any(|v| *v != 0.0));
    }

    /// Largest absolute entry over the constant and all coefficients.
    pub fn max_magnitude(&self) -> f64 {
        self.coefficients
            .values()
            .chain(std::iter::once(&self.constant))
            .flat_map(|m| m.iter())
            .fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            size: self.size,
            constant: &self.constant * factor,
            coefficients: self
                .coefficients
                .iter()
                .map(|(k, m)| (*k, m * factor))
                .collect(),
        }
    }

    /// Evaluates the affine map at `x` (missing variables read as zero).
    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (var, coef) in &self.coefficients {
            let value = x.get(var.0).copied().unwrap_or(0.0);
            if value != 0.0 {
                out += coef * value;
            }
        }
        out
    }

    fn validate(&self, index: usize) -> Result<(), SdpError> {
        let malformed = |reason: String| SdpError::Malformed { index, reason };
        let check = |m: &DMatrix<f64>, what: &str| -> Result<(), SdpError> {
            if m.nrows() != self.size || m.ncols() != self.size {
                return Err(malformed(format!(
                    "{what} is {}x{}, expected {}x{}",
                    m.nrows(),
                    m.ncols(),
                    self.size,
                    self.size
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(malformed(format!("{what} has non-finite entries")));
            }
            for r in 0..self.size {
                for c in 0..r {
                    if (m[(r, c)] - m[(c, r)]).abs() > SYMMETRY_TOLERANCE {
                        return Err(malformed(format!("{what} is not symmetric at ({r}, {c})")));
                    }
                }
            }
            Ok(())
        };
        if self.size == 0 {
            return Err(malformed("zero-sized block".into()));
        }
        check(&self.constant, "constant")?;
        for (var, coef) in &self.coefficients {
            check(coef, &format!("coefficient of variable {}", var.0))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityStatus {
    Feasible,
    Infeasible,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityOutcome {
    pub status: FeasibilityStatus,
    /// Present iff `status == Feasible`.
    pub assignment: Option<Vec<f64>>,
    /// Smallest eigenvalue over the scaled constraints at the backend's final
    /// point (validated independently for feasible outcomes).
    pub margin: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub epsilon: f64,
    /// Iteration cap; `None` uses the backend default.
    pub budget: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            budget: None,
        }
    }
}

/// What a backend hands back before validation.
#[derive(Debug, Clone)]
pub struct RawOutcome {
    pub status: FeasibilityStatus,
    pub point: Option<Vec<f64>>,
    pub margin: f64,
    pub iterations: usize,
}

/// A feasibility solver for prepared (validated, scaled) constraint sets.
pub trait FeasibilityBackend: Send + Sync {
    fn name(&self) -> &'static str;

    fn solve_prepared(&self, problem: &PreparedProblem, opts: &SolveOptions) -> RawOutcome;

    /// Validates, scales, solves and re-checks.
    fn solve(
        &self,
        constraints: &[AffineMatrixConstraint],
        opts: &SolveOptions,
    ) -> Result<FeasibilityOutcome, SdpError> {
        let problem = PreparedProblem::new(constraints)?;
        if !(opts.epsilon > 0.0) || !opts.epsilon.is_finite() {
            return Err(SdpError::Epsilon(opts.epsilon));
        }
        let raw = self.solve_prepared(&problem, opts);
        Ok(problem.finalize(raw, opts.epsilon))
    }
}

/// Constraints after validation and per-constraint scaling.
#[derive(Debug, Clone)]
pub struct PreparedProblem {
    pub constraints: Vec<AffineMatrixConstraint>,
    pub num_vars: usize,
    pub homogeneous: bool,
}

impl PreparedProblem {
    pub fn new(constraints: &[AffineMatrixConstraint]) -> Result<Self, SdpError> {
        if constraints.is_empty() {
            return Err(SdpError::Empty);
        }
        let mut scaled = Vec::with_capacity(constraints.len());
        let mut num_vars = 0;
        for (index, c) in constraints.iter().enumerate() {
            c.validate(index)?;
            let mag = c.max_magnitude();
            let mut s = if mag > 0.0 { c.scaled(1.0 / mag) } else { c.clone() };
            // mirror the lower triangle so every block is exactly symmetric
            symmetrize(&mut s.constant);
            for m in s.coefficients.values_mut() {
                symmetrize(m);
            }
            s.prune();
            if let Some(last) = s.coefficients.keys().next_back() {
                num_vars = num_vars.max(last.0 + 1);
            }
            scaled.push(s);
        }
        let homogeneous = scaled
            .iter()
            .all(|c| c.constant.iter().all(|v| *v == 0.0));
        Ok(Self {
            constraints: scaled,
            num_vars,
            homogeneous,
        })
    }

    /// Smallest eigenvalue over all scaled constraints at `x`.
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| min_eigenvalue(&c.evaluate(x)))
            .fold(f64::INFINITY, f64::min)
    }

    fn finalize(&self, raw: RawOutcome, epsilon: f64) -> FeasibilityOutcome {
        let point = match (raw.status, raw.point) {
            (FeasibilityStatus::Feasible, Some(p)) => p,
            (status, _) => {
                return FeasibilityOutcome {
                    status: if status == FeasibilityStatus::Feasible {
                        FeasibilityStatus::Unknown
                    } else {
                        status
                    },
                    assignment: None,
                    margin: raw.margin,
                    iterations: raw.iterations,
                }
            }
        };
        let mut point = point;
        point.resize(self.num_vars, 0.0);
        if self.homogeneous {
            let norm = point.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                point.iter_mut().for_each(|v| *v /= norm);
            }
        }
        let margin = self.margin(&point);
        if margin >= epsilon * (1.0 - 1e-3) && point.iter().all(|v| v.is_finite()) {
            FeasibilityOutcome {
                status: FeasibilityStatus::Feasible,
                assignment: Some(point),
                margin,
                iterations: raw.iterations,
            }
        } else {
            FeasibilityOutcome {
                status: FeasibilityStatus::Unknown,
                assignment: None,
                margin,
                iterations: raw.iterations,
            }
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in 0..r {
            m[(c, r)] = m[(r, c)];
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Solves with the default [`BarrierBackend`].
pub fn solve(
    constraints: &[AffineMatrixConstraint],
    epsilon: f64,
    budget: Option<usize>,
) -> Result<FeasibilityOutcome, SdpError> {
    BarrierBackend::default().solve(constraints, &SolveOptions { epsilon, budget })
}
