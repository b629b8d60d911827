//! Report records and their text renderings.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use ncs_core::netsim::{ControllerSpec, ProtocolReport, SimMode, TraceSummary};
use ncs_core::sdp::FeasibilityStatus;
use ncs_core::synthesis::{
    baseline_counts, variable_count, DecayReport, ExtendedX, GammaSearch, GammaSpec, Gains, LmiSystem,
    SynthesisOutcome, Theorem, VerificationReport,
};
use serde::Serialize;
use serde_value::Value;

use crate::config::ToolkitConfig;
use crate::error::CliError;
use crate::pipeline::{status_name, Prepared, SynthesisRequest};

#[derive(Debug, Clone, Serialize)]
pub struct Environment {
    pub toolkit_version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    pub seeds: Vec<u64>,
}

impl Environment {
    pub fn new(config: &ToolkitConfig, backend: Option<String>) -> Self {
        Self {
            toolkit_version: env!("CARGO_PKG_VERSION"),
            backend,
            seeds: config.simulation.seeds.seeds(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscretizationSection {
    pub td: f64,
    #[serde(with = "ncs_core::rows::matrix")]
    pub a_c: DMatrix<f64>,
    #[serde(with = "ncs_core::rows::matrix")]
    pub b_c: DMatrix<f64>,
    #[serde(with = "ncs_core::rows::matrix")]
    pub a_d: DMatrix<f64>,
    #[serde(with = "ncs_core::rows::matrix")]
    pub b_d: DMatrix<f64>,
    pub d_bar: usize,
    pub p_bar: usize,
    pub delta_bar: usize,
    pub lifted_dim: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub gamma: f64,
    pub status: FeasibilityStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchSection {
    pub tolerance: f64,
    pub gamma_star: f64,
    pub evaluations: Vec<Evaluation>,
    /// Some evaluation came back unknown and was counted as infeasible.
    pub saw_unknown: bool,
}

/// Size of the polytopic over-approximation alternative.
#[derive(Debug, Clone, Serialize)]
pub struct BaselineSection {
    pub delta_bar: u32,
    pub nu: u32,
    /// `None` when it does not fit in 64 bits.
    pub count: Option<u64>,
    pub switched_count: u64,
    pub summary: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisSection {
    pub theorem: Theorem,
    pub theorem_number: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extended_x: Option<ExtendedX>,
    pub status: FeasibilityStatus,
    /// Final decay rates; the fixed request when infeasible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<Gains>,
    /// `[λ_min, λ_max]` of each `P_i`.
    pub lyapunov_eigenvalue_ranges: Vec<[f64; 2]>,
    pub variables: usize,
    pub lmis: usize,
    pub baseline: BaselineSection,
    pub backend: String,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition: Option<f64>,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSection>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl SynthesisSection {
    pub(crate) fn new(
        prep: &Prepared,
        req: &SynthesisRequest,
        system: &LmiSystem,
        outcome: &SynthesisOutcome,
        search: Option<&GammaSearch>,
        tolerance: f64,
        wall_time_s: f64,
    ) -> Self {
        let (variables, lmis) = system.counts();
        debug_assert_eq!(
            variables,
            variable_count(req.theorem, req.extended_x, system.n, system.m, system.delta_bar)
        );
        let b = baseline_counts(prep.bound.delta_bar as u32, prep.plant.n() as u32);
        let baseline = BaselineSection {
            delta_bar: prep.bound.delta_bar as u32,
            nu: prep.plant.n() as u32,
            count: u64::try_from(b.count).ok().filter(|_| !b.saturated),
            switched_count: b.switched_count,
            summary: b.summary,
        };
        let mut section = Self {
            theorem: req.theorem,
            theorem_number: req.theorem.number(),
            extended_x: (req.theorem == Theorem::Extended).then_some(req.extended_x),
            status: outcome.status(),
            gamma: req.gamma.fixed(),
            gains: None,
            lyapunov_eigenvalue_ranges: Vec::new(),
            variables,
            lmis,
            baseline,
            backend: String::new(),
            epsilon: prep.config.synthesis.epsilon,
            margin: None,
            iterations: 0,
            condition: None,
            wall_time_s,
            search: search.map(|s| SearchSection {
                tolerance,
                gamma_star: s.value,
                evaluations: s
                    .evaluations
                    .iter()
                    .map(|(gamma, status)| Evaluation {
                        gamma: *gamma,
                        status: *status,
                    })
                    .collect(),
                saw_unknown: s.saw_unknown,
            }),
        };
        match outcome {
            SynthesisOutcome::Feasible(r) => {
                section.gamma = Some(r.gamma.clone());
                section.gains = Some(r.gains.clone());
                section.lyapunov_eigenvalue_ranges = r
                    .lyapunov
                    .iter()
                    .map(|p| {
                        let ev = p.clone().symmetric_eigenvalues();
                        [ev.min(), ev.max()]
                    })
                    .collect();
                section.epsilon = r.diagnostics.epsilon;
                section.margin = finite(r.diagnostics.margin);
                section.iterations = r.diagnostics.iterations;
                section.condition = finite(r.diagnostics.condition);
            }
            SynthesisOutcome::Infeasible { margin, iterations } | SynthesisOutcome::Unknown { margin, iterations } => {
                section.margin = finite(*margin);
                section.iterations = *iterations;
            }
        }
        section
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationSection {
    pub certificate: VerificationReport,
    pub switching: DecayReport,
    pub passed: bool,
}

impl VerificationSection {
    pub fn new(certificate: VerificationReport, switching: DecayReport) -> Self {
        let passed = certificate.passed && switching.violations == 0;
        Self {
            certificate,
            switching,
            passed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisRecord {
    pub synthesis: SynthesisSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationSection>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedSection {
    pub seed: u64,
    /// Trace file, relative to the output directory.
    pub csv: String,
    pub summary: TraceSummary,
    pub protocol: ProtocolReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub environment: Environment,
    pub discretization: DiscretizationSection,
    pub synthesis: SynthesisSection,
    pub verification: VerificationSection,
    pub simulation: Vec<SeedSection>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareEntryReport {
    pub name: String,
    pub mode: SimMode,
    pub controller: ControllerSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisSection>,
    pub seeds: Vec<SeedSection>,
}

/// Seeds on which one controller settled strictly before the other.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComparePair {
    pub a: String,
    pub b: String,
    pub a_faster: usize,
    pub b_faster: usize,
    pub ties: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub environment: Environment,
    pub entries: Vec<CompareEntryReport>,
    pub pairs: Vec<ComparePair>,
    /// File stems of the plot data, each with `.csv` and `.svg`.
    pub plots: Vec<String>,
}

fn non_finite(v: &Value, path: &mut String, out: &mut Vec<String>) {
    match v {
        Value::F32(x) if !x.is_finite() => out.push(path.clone()),
        Value::F64(x) if !x.is_finite() => out.push(path.clone()),
        Value::Option(Some(inner)) | Value::Newtype(inner) => non_finite(inner, path, out),
        Value::Seq(items) => {
            for (i, item) in items.iter().enumerate() {
                let len = path.len();
                let _ = write!(path, "[{i}]");
                non_finite(item, path, out);
                path.truncate(len);
            }
        }
        Value::Map(map) => {
            for (k, item) in map {
                let len = path.len();
                match k {
                    Value::String(s) => {
                        let _ = write!(path, ".{s}");
                    }
                    other => {
                        let _ = write!(path, ".{other:?}");
                    }
                }
                non_finite(item, path, out);
                path.truncate(len);
            }
        }
        _ => {}
    }
}

/// Rejects any record holding a NaN or infinity, naming the fields.
pub fn ensure_finite<T: Serialize>(value: &T) -> Result<(), CliError> {
    let tree = serde_value::to_value(value).map_err(|e| CliError::Stage {
        stage: "report",
        message: e.to_string(),
    })?;
    let mut bad = Vec::new();
    non_finite(&tree, &mut String::new(), &mut bad);
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Stage {
            stage: "report",
            message: format!("non-finite values at {}", bad.join(", ")),
        })
    }
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| r.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[{}]", rows.join("; "))
}

fn fmt_gamma(g: &GammaSpec) -> String {
    match g {
        GammaSpec::Single(v) => format!("{v:.4}"),
        GammaSpec::PerMode(v) => format!("[{}]", v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")),
    }
}

pub fn synthesis_text(s: &SynthesisSection, v: Option<&VerificationSection>) -> String {
    let mut out = String::new();
    let name = match s.theorem {
        Theorem::Static => "static",
        Theorem::Switched => "switched",
        Theorem::Extended => "extended",
    };
    let _ = writeln!(out, "theorem       {} ({name})", s.theorem_number);
    if let Some(x) = s.extended_x {
        let _ = writeln!(out, "X structure   {x:?}");
    }
    let _ = writeln!(out, "status        {}", status_name(s.status));
    if let Some(g) = &s.gamma {
        let _ = writeln!(out, "gamma         {}", fmt_gamma(g));
    }
    match &s.gains {
        Some(Gains::Static { kx }) => {
            let _ = writeln!(out, "K_x           {}", fmt_matrix(kx));
        }
        Some(Gains::Switched { kx }) => {
            for (i, k) in kx.iter().enumerate() {
                let _ = writeln!(out, "K_x,{:<9} {}", i + 1, fmt_matrix(k));
            }
        }
        Some(Gains::Extended { kx, ku }) => {
            let _ = writeln!(out, "K_x           {}", fmt_matrix(kx));
            let _ = writeln!(out, "K_u           {}", fmt_matrix(ku));
        }
        None => {}
    }
    for (i, [lo, hi]) in s.lyapunov_eigenvalue_ranges.iter().enumerate() {
        let _ = writeln!(out, "eig P_{:<7} [{lo:.4e}, {hi:.4e}]", i + 1);
    }
    let _ = writeln!(out, "variables     {}", s.variables);
    let _ = writeln!(out, "LMIs          {}", s.lmis);
    let _ = writeln!(out, "baseline      {}", s.baseline.summary);
    let _ = writeln!(out, "backend       {} (ε = {:e})", s.backend, s.epsilon);
    if let Some(m) = s.margin {
        let _ = writeln!(out, "margin        {m:.3e}");
    }
    if let Some(search) = &s.search {
        let _ = writeln!(
            out,
            "bisection     {} evaluations, tol {}, unknown seen: {}",
            search.evaluations.len(),
            search.tolerance,
            search.saw_unknown
        );
    }
    let _ = writeln!(out, "wall time     {:.3} s", s.wall_time_s);
    if let Some(v) = v {
        let _ = writeln!(
            out,
            "certificate   min λ(Q) {:.3e}, max ρ {:.4}, decay violations {}/{} steps: {}",
            v.certificate.min_q_eigenvalue,
            v.certificate.spectral_radii.iter().copied().fold(0.0, f64::max),
            v.switching.violations,
            v.switching.seeds as usize * v.switching.steps,
            if v.passed { "ok" } else { "FAILED" }
        );
    }
    out
}

pub fn run_text(r: &RunReport) -> String {
    let mut out = synthesis_text(&r.synthesis, Some(&r.verification));
    let settled = r.simulation.iter().filter(|s| s.summary.settling_step.is_some()).count();
    let _ = writeln!(out, "seeds         {} run, {settled} settled", r.simulation.len());
    for s in &r.simulation {
        let t = s
            .summary
            .settling_time
            .map_or_else(|| "not settled".to_string(), |t| format!("{t:.3} s"));
        let _ = writeln!(
            out,
            "  seed {:<6} settling {t}, max q {}, drops {}",
            s.seed, s.summary.max_q, s.summary.drops_total
        );
    }
    out
}
