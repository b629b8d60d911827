//! State-feedback synthesis for the lifted switched model.
//!
//! For every pair of modes `(i, j)` the assembled inequality is
//!
//! ```text
//! ⎡ X_i + X_iᵀ − Y_i        (Â_i X_i − B̂ Ẑ_i)ᵀ ⎤
//! ⎣ Â_i X_i − B̂ Ẑ_i          (1 − γ_i) Y_j     ⎦ ≻ 0
//! ```
//!
//! with `X_i = [[X_1, 0], [X_{2,i}, X_{3,i}]]`. The variants differ in which
//! blocks are shared across modes:
//!
//! | variant    | `X_1`    | `X_2, X_3` | `Ẑ`                 |
//! |------------|----------|------------|---------------------|
//! | `Static`   | shared   | per mode   | `[Z, 0]`, shared    |
//! | `Switched` | per mode | per mode   | `[Z_i, 0]` per mode |
//! | `Extended` | shared   | shared     | `[Z_x, Z_u]` full   |
//!
//! For the extended law `X` needs no block structure because `Ẑ` is full;
//! [`ExtendedX::Full`] is the default and [`ExtendedX::BlockTriangular`]
//! keeps the zero upper-right block of the other variants.
//!
//! A per-mode decay vector (`GammaSpec::PerMode`) can be combined with any
//! variant; with a single `γ` every `γ_i` equals it.

mod counts;
mod expr;
mod solve;
mod verify;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::LiftedModel;
use crate::sdp::{AffineMatrixConstraint, SdpError};

pub use counts::{baseline_counts, variable_count, BaselineCount};
pub use expr::{MatExpr, MatrixVariable, VariableRegistry};
pub use solve::{
    maximize_gamma, maximize_gamma_with, solve_feasibility, solve_feasibility_with, Diagnostics,
    GammaFree, GammaSearch, Gains, SynthesisOutcome, SynthesisResult,
};
pub use verify::{q_matrix, spectral_radius, switching_decay_check, verify_solution, DecayReport, VerificationReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("invalid decay specification: {0}")]
    Gamma(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error("gain extraction failed: X_1 condition number {condition:e} exceeds 1e12")]
    Extraction { condition: f64 },
    #[error("no stabilizing solution found even at γ = 0")]
    NoStabilizingSolution,
}

/// Which state-feedback law is synthesised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// `u_k = −K_x x_k`.
    Static,
    /// `u_k = −K_{x,i} x_k`, the buffer picks `i` from the measured delay.
    Switched,
    /// `u_k = −[K_x K_u] ξ_k`, feedback on the input history as well.
    Extended,
}

impl Theorem {
    /// 1-based numbering used on the command line.
    pub fn number(self) -> u8 {
        match self {
            Theorem::Static => 1,
            Theorem::Switched => 2,
            Theorem::Extended => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Theorem::Static),
            2 => Some(Theorem::Switched),
            3 => Some(Theorem::Extended),
            _ => None,
        }
    }
}

/// Shape of the shared `X` in the extended variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtendedX {
    /// Unstructured `(n+δ̄m) × (n+δ̄m)` matrix.
    #[default]
    Full,
    /// `[[X_1, 0], [X_2, X_3]]`.
    BlockTriangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssemblyOptions {
    #[serde(default)]
    pub extended_x: ExtendedX,
}

/// Decay-rate parameters, each in `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSpec {
    Single(f64),
    PerMode(Vec<f64>),
}

impl GammaSpec {
    pub fn validate(&self, delta_bar: usize) -> Result<(), SynthesisError> {
        let values = match self {
            GammaSpec::Single(g) => std::slice::from_ref(g),
            GammaSpec::PerMode(v) => {
                if v.len() != delta_bar {
                    return Err(SynthesisError::Gamma(format!(
                        "per-mode vector has {} entries, expected {delta_bar}",
                        v.len()
                    )));
                }
                v.as_slice()
            }
        };
        match values.iter().find(|g| !(0.0..1.0).contains(*g)) {
            Some(g) => Err(SynthesisError::Gamma(format!("{g} is outside [0, 1)"))),
            None => Ok(()),
        }
    }

    /// `γ_i` for 1-based mode `i`.
    pub fn for_mode(&self, i: usize) -> f64 {
        match self {
            GammaSpec::Single(g) => *g,
            GammaSpec::PerMode(v) => v[i - 1],
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            GammaSpec::Single(g) => *g,
            GammaSpec::PerMode(v) => v.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn values(&self, delta_bar: usize) -> Vec<f64> {
        (1..=delta_bar).map(|i| self.for_mode(i)).collect()
    }
}

/// Variable blocks of an assembled system. Vectors hold one entry when
/// shared and `δ̄` entries when they vary per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiVariables {
    pub y: Vec<MatrixVariable>,
    pub x1: Vec<MatrixVariable>,
    pub x2: Vec<MatrixVariable>,
    pub x3: Vec<MatrixVariable>,
    pub z: Vec<MatrixVariable>,
    /// Unstructured `X` (extended law with [`ExtendedX::Full`]); the block
    /// vectors are then empty.
    pub x_full: Option<MatrixVariable>,
    /// Input-history part of `Ẑ` (extended law only).
    pub zu: Option<MatrixVariable>,
}

fn pick(v: &[MatrixVariable], mode: usize) -> &MatrixVariable {
    if v.len() == 1 {
        &v[0]
    } else {
        &v[mode - 1]
    }
}

impl LmiVariables {
    /// `X_i` as an expression.
    pub fn x_expr(&self, mode: usize) -> MatExpr {
        if let Some(x) = &self.x_full {
            return x.expr();
        }
        let x1 = pick(&self.x1, mode);
        let x2 = pick(&self.x2, mode);
        let x3 = pick(&self.x3, mode);
        MatExpr::blocks(
            &x1.expr(),
            &MatExpr::zeros(x1.rows, x3.cols),
            &x2.expr(),
            &x3.expr(),
        )
    }

    /// `Ẑ_i` as an expression.
    pub fn z_hat_expr(&self, mode: usize) -> MatExpr {
        let z = pick(&self.z, mode);
        let hist = self.zu.as_ref().map_or_else(|| pick(&self.x3, mode).cols, |zu| zu.cols);
        let mut zh = MatExpr::zeros(z.rows, z.cols + hist);
        zh.place(0, 0, &z.expr());
        if let Some(zu) = &self.zu {
            zh.place(0, z.cols, &zu.expr());
        }
        zh
    }

    pub fn x_value(&self, mode: usize, x: &[f64]) -> DMatrix<f64> {
        self.x_expr(mode).evaluate(x)
    }

    pub fn z_hat_value(&self, mode: usize, x: &[f64]) -> DMatrix<f64> {
        self.z_hat_expr(mode).evaluate(x)
    }

    pub fn x1_value(&self, mode: usize, x: &[f64]) -> DMatrix<f64> {
        match &self.x_full {
            Some(full) => {
                let n = self.z[0].cols;
                full.value(x).view((0, 0), (n, n)).into_owned()
            }
            None => pick(&self.x1, mode).value(x),
        }
    }
}

/// The `δ̄²` inequalities plus the variable layout needed to read back a
/// solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiSystem {
    pub theorem: Theorem,
    pub options: AssemblyOptions,
    pub gamma: GammaSpec,
    pub n: usize,
    pub m: usize,
    pub delta_bar: usize,
    pub registry: VariableRegistry,
    pub variables: LmiVariables,
    pub constraints: Vec<AffineMatrixConstraint>,
    /// Mode pair `(i, j)` of each constraint, 1-based.
    pub pairs: Vec<(usize, usize)>,
}

impl LmiSystem {
    /// `(scalar variables, inequalities)`.
    pub fn counts(&self) -> (usize, usize) {
        (self.registry.len(), self.constraints.len())
    }
}

/// Builds all `δ̄²` inequalities for the chosen variant with default options.
pub fn assemble_lmis(
    lifted: &LiftedModel,
    theorem: Theorem,
    gamma: &GammaSpec,
) -> Result<LmiSystem, SynthesisError> {
    assemble_lmis_with(lifted, theorem, gamma, &AssemblyOptions::default())
}

pub fn assemble_lmis_with(
    lifted: &LiftedModel,
    theorem: Theorem,
    gamma: &GammaSpec,
    options: &AssemblyOptions,
) -> Result<LmiSystem, SynthesisError> {
    let (n, m, db) = (lifted.n(), lifted.m(), lifted.delta_bar());
    gamma.validate(db)?;
    let dim = lifted.dim();
    let hist = db * m;
    if lifted.modes().len() != db || lifted.b_hat().shape() != (dim, m) {
        return Err(SynthesisError::Dimension("lifted model is inconsistent".into()));
    }

    let mut reg = VariableRegistry::default();
    let y: Vec<_> = (1..=db).map(|i| reg.symmetric(&format!("Y{i}"), dim)).collect();
    let per_mode = |reg: &mut VariableRegistry, name: &str, rows, cols, shared: bool| {
        if shared {
            vec![reg.full(name, rows, cols)]
        } else {
            (1..=db)
                .map(|i| reg.full(&format!("{name}_{i}"), rows, cols))
                .collect::<Vec<_>>()
        }
    };
    let (x1_shared, x23_shared, z_shared) = match theorem {
        Theorem::Static => (true, false, true),
        Theorem::Switched => (false, false, false),
        Theorem::Extended => (true, true, true),
    };
    let full_x = theorem == Theorem::Extended && options.extended_x == ExtendedX::Full;
    let (x1, x2, x3, x_full) = if full_x {
        (Vec::new(), Vec::new(), Vec::new(), Some(reg.full("X", dim, dim)))
    } else {
        (
            per_mode(&mut reg, "X1", n, n, x1_shared),
            per_mode(&mut reg, "X2", hist, n, x23_shared),
            per_mode(&mut reg, "X3", hist, hist, x23_shared),
            None,
        )
    };
    let (z, zu) = if theorem == Theorem::Extended {
        (vec![reg.full("Zx", m, n)], Some(reg.full("Zu", m, hist)))
    } else {
        (per_mode(&mut reg, "Z", m, n, z_shared), None)
    };
    let vars = LmiVariables {
        y,
        x1,
        x2,
        x3,
        z,
        x_full,
        zu,
    };

    let mut constraints = Vec::with_capacity(db * db);
    let mut pairs = Vec::with_capacity(db * db);
    for i in 1..=db {
        let xi = vars.x_expr(i);
        let yi = vars.y[i - 1].expr();
        let top_left = xi.add(&xi.transpose()).sub(&yi);
        let lower = xi
            .left_mul(lifted.mode(i))
            .sub(&vars.z_hat_expr(i).left_mul(lifted.b_hat()));
        let upper = lower.transpose();
        let decay = 1.0 - gamma.for_mode(i);
        for j in 1..=db {
            let bottom_right = vars.y[j - 1].expr().scale(decay);
            let full = MatExpr::blocks(&top_left, &upper, &lower, &bottom_right);
            constraints.push(full.into_constraint());
            pairs.push((i, j));
        }
    }

    Ok(LmiSystem {
        theorem,
        options: *options,
        gamma: gamma.clone(),
        n,
        m,
        delta_bar: db,
        registry: reg,
        variables: vars,
        constraints,
        pairs,
    })
}
