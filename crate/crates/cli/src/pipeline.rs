//! Stages: discretize → lift → synthesize → verify → simulate → report.
//!
//! Each stage takes the parsed config plus, where needed, the artifact
//! written by the stage before it.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ncs_core::clock::Stopwatch;
use ncs_core::netsim::{
    check_protocol, simulate_buffered, simulate_unbuffered, ControllerSpec, ProtocolReport, SimMode, SimTrace,
    TraceSummary,
};
use ncs_core::sdp::dump::write_system;
use ncs_core::sdp::{BarrierBackend, FeasibilityBackend, FeasibilityStatus, ProjectionBackend, SolveOptions};
use ncs_core::synthesis::{
    assemble_lmis_with, maximize_gamma_with, solve_feasibility_with, switching_decay_check, verify_solution,
    AssemblyOptions, ExtendedX, GammaSpec, LmiSystem, SynthesisOutcome, SynthesisResult, Theorem,
};
use ncs_core::{build_lifted, discretize, ContinuousPlant, DiscretePlant, LiftedModel, NetworkBound};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BackendChoice, ControllerSource, GammaConfig, ToolkitConfig};
use crate::error::CliError;
use crate::report::{
    self, ComparePair, CompareReport, DiscretizationSection, Environment, RunReport, SeedSection, SynthesisSection,
    VerificationSection,
};
use crate::svg;

/// Seeds and steps of the random-switching decay check.
const DECAY_SEEDS: u64 = 100;
const DECAY_STEPS: usize = 1000;

/// Config plus everything derived from it without solving anything.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ToolkitConfig,
    pub plant: ContinuousPlant,
    pub discrete: DiscretePlant,
    pub bound: NetworkBound,
    pub lifted: LiftedModel,
    pub discretize_time_s: f64,
}

pub fn prepare(config: &ToolkitConfig) -> Result<Prepared, CliError> {
    config.validate()?;
    let plant = config.continuous_plant()?;
    let bound = config.bound()?;
    let clock = Stopwatch::start();
    let discrete = discretize(&plant, config.plant.td).map_err(|e| CliError::model("discretize", e))?;
    let discretize_time_s = clock.elapsed().as_secs_f64();
    let lifted = build_lifted(&discrete, &bound).map_err(|e| CliError::model("lift", e))?;
    Ok(Prepared {
        config: config.clone(),
        plant,
        discrete,
        bound,
        lifted,
        discretize_time_s,
    })
}

/// Writes files below one output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn for_config(config: &ToolkitConfig) -> Self {
        Self::new(config.resolved_output_dir())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        report::ensure_finite(value)?;
        let text = serde_json::to_string_pretty(value).expect("finite reports serialise");
        self.write(name, &(text + "\n"))
    }
}

pub fn discretization_section(prep: &Prepared) -> DiscretizationSection {
    DiscretizationSection {
        td: prep.discrete.td,
        a_c: prep.plant.a().clone(),
        b_c: prep.plant.b().clone(),
        a_d: prep.discrete.a.clone(),
        b_d: prep.discrete.b.clone(),
        d_bar: prep.bound.d_bar,
        p_bar: prep.bound.p_bar,
        delta_bar: prep.bound.delta_bar,
        lifted_dim: prep.lifted.dim(),
        wall_time_s: prep.discretize_time_s,
    }
}

/// What to synthesise; defaults come from `[synthesis]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRequest {
    pub theorem: Theorem,
    pub gamma: GammaConfig,
    pub extended_x: ExtendedX,
}

impl SynthesisRequest {
    pub fn from_config(config: &ToolkitConfig) -> Result<Self, CliError> {
        Ok(Self {
            theorem: config.theorem()?,
            gamma: config.synthesis.gamma.clone(),
            extended_x: config.synthesis.extended_x,
        })
    }

    fn assembly(&self) -> AssemblyOptions {
        AssemblyOptions {
            extended_x: self.extended_x,
        }
    }
}

fn backend(choice: BackendChoice) -> Box<dyn FeasibilityBackend> {
    match choice {
        BackendChoice::Barrier => Box::new(BarrierBackend::default()),
        BackendChoice::Projection => Box::new(ProjectionBackend::default()),
    }
}

/// Result of the synthesize stage. `result` is `None` when infeasible.
#[derive(Debug, Clone)]
pub struct SynthesisRun {
    pub section: SynthesisSection,
    pub result: Option<SynthesisResult>,
    pub verification: Option<VerificationSection>,
}

impl SynthesisRun {
    pub fn into_result(self) -> Result<(SynthesisSection, SynthesisResult, VerificationSection), CliError> {
        match (self.result, self.verification) {
            (Some(r), Some(v)) => Ok((self.section, r, v)),
            _ => Err(CliError::Infeasible(format!(
                "theorem {} returned {:?}",
                self.section.theorem_number, self.section.status
            ))),
        }
    }
}

pub fn assemble(prep: &Prepared, req: &SynthesisRequest, gamma: &GammaSpec) -> Result<LmiSystem, CliError> {
    assemble_lmis_with(&prep.lifted, req.theorem, gamma, &req.assembly()).map_err(CliError::synthesis)
}

pub fn synthesize(prep: &Prepared, req: &SynthesisRequest) -> Result<SynthesisRun, CliError> {
    let s = &prep.config.synthesis;
    let backend = backend(s.backend);
    let opts = SolveOptions {
        epsilon: s.epsilon,
        budget: None,
    };
    let clock = Stopwatch::start();
    let (outcome, search) = match (req.gamma.fixed(), req.gamma.free()) {
        (Some(gamma), _) => {
            let system = assemble(prep, req, &gamma)?;
            let outcome = solve_feasibility_with(&system, backend.as_ref(), &opts).map_err(CliError::synthesis)?;
            (outcome, None)
        }
        (None, Some(free)) => {
            let search = maximize_gamma_with(
                &prep.lifted,
                req.theorem,
                &free,
                s.tolerance,
                &req.assembly(),
                backend.as_ref(),
                &opts,
            )
            .map_err(CliError::synthesis)?;
            (SynthesisOutcome::Feasible(Box::new(search.result.clone())), Some(search))
        }
        (None, None) => unreachable!("gamma is fixed or maximised"),
    };
    let wall_time_s = clock.elapsed().as_secs_f64();
    let gamma = match (&outcome, req.gamma.fixed()) {
        (SynthesisOutcome::Feasible(r), _) => r.gamma.clone(),
        (_, Some(g)) => g,
        _ => GammaSpec::Single(0.0),
    };
    let system = assemble(prep, req, &gamma)?;
    let mut section = SynthesisSection::new(prep, req, &system, &outcome, search.as_ref(), s.tolerance, wall_time_s);
    section.backend = backend.name().to_string();
    let (result, verification) = match outcome {
        SynthesisOutcome::Feasible(r) => {
            let verify = verify_solution(&prep.lifted, &r);
            let decay = switching_decay_check(&prep.lifted, &r, DECAY_SEEDS, DECAY_STEPS);
            (Some(*r), Some(VerificationSection::new(verify, decay)))
        }
        _ => (None, None),
    };
    Ok(SynthesisRun {
        section,
        result,
        verification,
    })
}

/// The file `synthesize` writes and `simulate --controller` reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerArtifact {
    pub name: String,
    pub controller: ControllerSpec,
    pub delta_bar: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem: Option<Theorem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaSpec>,
    /// `P_i`, one per mode; empty for baseline gains.
    #[serde(default, with = "ncs_core::rows::matrices", skip_serializing_if = "Vec::is_empty")]
    pub lyapunov: Vec<DMatrix<f64>>,
}

impl ControllerArtifact {
    pub fn from_result(name: &str, r: &SynthesisResult) -> Self {
        Self {
            name: name.to_string(),
            controller: ControllerSpec::from(&r.gains),
            delta_bar: r.delta_bar(),
            theorem: Some(r.theorem),
            gamma: Some(r.gamma.clone()),
            lyapunov: r.lyapunov.clone(),
        }
    }

    pub fn baseline(name: &str, kx: DMatrix<f64>, delta_bar: usize) -> Self {
        Self {
            name: name.to_string(),
            controller: ControllerSpec::BaselineStatic { kx },
            delta_bar,
            theorem: None,
            gamma: None,
            lyapunov: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read controller file {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("bad controller file {}: {e}", path.display())))
    }

    fn lyapunov_for_trace(&self) -> Option<&[DMatrix<f64>]> {
        let usable = !self.lyapunov.is_empty() && !matches!(self.controller, ControllerSpec::Switched { .. });
        usable.then_some(self.lyapunov.as_slice())
    }
}

/// One simulated seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub trace: SimTrace,
    pub summary: TraceSummary,
    pub protocol: ProtocolReport,
}

pub fn simulate_one(prep: &Prepared, ctrl: &ControllerArtifact, mode: SimMode, seed: u64) -> Result<SeedRun, CliError> {
    if ctrl.delta_bar != prep.bound.delta_bar {
        return Err(CliError::Config(format!(
            "controller {} was designed for δ̄ = {}, the config has δ̄ = {}",
            ctrl.name, ctrl.delta_bar, prep.bound.delta_bar
        )));
    }
    let cfg = &prep.config;
    let net = cfg.network_spec(seed);
    let x0 = cfg.x0(prep.plant.n());
    let steps = cfg.simulation.steps;
    let trace = match mode {
        SimMode::Buffered => simulate_buffered(&prep.discrete, &prep.lifted, &ctrl.controller, &net, &x0, steps),
        SimMode::Unbuffered => simulate_unbuffered(
            &prep.plant,
            &prep.discrete,
            &ctrl.controller,
            &net,
            &x0,
            steps,
            prep.bound.delta_bar,
        ),
    }
    .map_err(CliError::simulation)?;
    let trace = match (mode, ctrl.lyapunov_for_trace()) {
        (SimMode::Buffered, Some(p)) => trace.with_lyapunov(p).map_err(CliError::simulation)?,
        _ => trace,
    };
    let protocol = check_protocol(&trace);
    if !protocol.passed() {
        return Err(CliError::Assumption(format!(
            "seed {seed}: {}",
            protocol.violations.join("; ")
        )));
    }
    Ok(SeedRun {
        seed,
        summary: trace.summary(),
        trace,
        protocol,
    })
}

/// One run per seed, in parallel; results keep the seed order.
pub fn simulate_seeds(
    prep: &Prepared,
    ctrl: &ControllerArtifact,
    mode: SimMode,
    seeds: &[u64],
) -> Result<Vec<SeedRun>, CliError> {
    seeds.par_iter().map(|s| simulate_one(prep, ctrl, mode, *s)).collect()
}

pub fn trace_file(name: &str, seed: u64) -> String {
    format!("traces/{name}_seed{seed}.csv")
}

fn write_traces(art: &Artifacts, name: &str, runs: &[SeedRun]) -> Result<Vec<SeedSection>, CliError> {
    runs.iter()
        .map(|r| {
            let file = trace_file(name, r.seed);
            art.write(&file, &r.trace.to_csv())?;
            Ok(SeedSection {
                seed: r.seed,
                csv: file,
                summary: r.summary.clone(),
                protocol: r.protocol.clone(),
            })
        })
        .collect()
}

// ---- subcommands -------------------------------------------------------

pub fn run_discretize(config: &ToolkitConfig) -> Result<DiscretizationSection, CliError> {
    let prep = prepare(config)?;
    let section = discretization_section(&prep);
    Artifacts::for_config(config).write_json("discretization.json", &section)?;
    Ok(section)
}

/// Writes `synthesis.json`, `synthesis.txt` and, when feasible,
/// `controller.json`. Infeasibility is reported after the files are written.
pub fn run_synthesize(config: &ToolkitConfig, req: &SynthesisRequest) -> Result<SynthesisRun, CliError> {
    let prep = prepare(config)?;
    let art = Artifacts::for_config(config);
    let run = synthesize(&prep, req)?;
    let record = report::SynthesisRecord {
        synthesis: run.section.clone(),
        verification: run.verification.clone(),
    };
    art.write_json("synthesis.json", &record)?;
    art.write("synthesis.txt", &report::synthesis_text(&run.section, run.verification.as_ref()))?;
    if config.synthesis.dump_lmi {
        let gamma = run.section.gamma.clone().unwrap_or(GammaSpec::Single(0.0));
        art.write("lmi.txt", &dump_text(&assemble(&prep, req, &gamma)?))?;
    }
    match &run.result {
        Some(r) => {
            let name = format!("t{}", req.theorem.number());
            art.write_json("controller.json", &ControllerArtifact::from_result(&name, r))?;
            Ok(run)
        }
        None => Err(CliError::Infeasible(format!(
            "theorem {} at γ = {:?}: {:?}",
            req.theorem.number(),
            run.section.gamma,
            run.section.status
        ))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationRecord {
    pub controller: String,
    pub mode: SimMode,
    pub seeds: Vec<SeedSection>,
}

pub fn run_simulate(config: &ToolkitConfig, controller: &Path) -> Result<SimulationRecord, CliError> {
    let prep = prepare(config)?;
    let ctrl = ControllerArtifact::load(controller)?;
    let art = Artifacts::for_config(config);
    let mode = config.simulation.mode;
    let runs = simulate_seeds(&prep, &ctrl, mode, &config.simulation.seeds.seeds())?;
    let record = SimulationRecord {
        controller: ctrl.name.clone(),
        mode,
        seeds: write_traces(&art, &ctrl.name, &runs)?,
    };
    art.write_json("simulation.json", &record)?;
    Ok(record)
}

pub fn dump_text(system: &LmiSystem) -> String {
    write_system(&system.constraints, system.registry.names())
}

pub fn run_dump_lmi(config: &ToolkitConfig, req: &SynthesisRequest) -> Result<PathBuf, CliError> {
    let prep = prepare(config)?;
    let gamma = req.gamma.fixed().unwrap_or(GammaSpec::Single(0.0));
    let system = assemble(&prep, req, &gamma)?;
    Artifacts::for_config(config).write("lmi.txt", &dump_text(&system))
}

/// A compared controller with its runs.
#[derive(Debug, Clone)]
pub struct CompareRun {
    pub name: String,
    pub mode: SimMode,
    pub controller: ControllerArtifact,
    pub synthesis: Option<SynthesisSection>,
    pub runs: Vec<SeedRun>,
}

fn compare_controller(
    prep: &Prepared,
    name: &str,
    source: &ControllerSource,
) -> Result<(ControllerArtifact, Option<SynthesisSection>), CliError> {
    match source {
        ControllerSource::Synthesize {
            theorem,
            gamma,
            extended_x,
        } => {
            let req = SynthesisRequest {
                theorem: crate::config::theorem(*theorem)?,
                gamma: gamma.clone().unwrap_or_else(|| prep.config.synthesis.gamma.clone()),
                extended_x: extended_x.unwrap_or(prep.config.synthesis.extended_x),
            };
            let (section, result, _) = synthesize(prep, &req)?.into_result()?;
            Ok((ControllerArtifact::from_result(name, &result), Some(section)))
        }
        ControllerSource::Baseline { kx } => {
            let kx = ncs_core::rows::from_rows(kx).map_err(CliError::Config)?;
            Ok((ControllerArtifact::baseline(name, kx, prep.bound.delta_bar), None))
        }
        ControllerSource::File { path } => {
            let mut c = ControllerArtifact::load(path)?;
            c.name = name.to_string();
            Ok((c, None))
        }
    }
}

/// Runs every `[[compare]]` entry over the same seeds. Each seed fixes one
/// network realization, so all controllers see identical delays and losses.
pub fn compare(prep: &Prepared) -> Result<Vec<CompareRun>, CliError> {
    let cfg = &prep.config;
    if cfg.compare.is_empty() {
        return Err(CliError::Config("compare needs at least one [[compare]] entry".into()));
    }
    let seeds = cfg.simulation.seeds.seeds();
    cfg.compare
        .par_iter()
        .map(|entry| {
            let (controller, synthesis) = compare_controller(prep, &entry.name, &entry.source)?;
            let runs = simulate_seeds(prep, &controller, entry.mode, &seeds)?;
            Ok(CompareRun {
                name: entry.name.clone(),
                mode: entry.mode,
                controller,
                synthesis,
                runs,
            })
        })
        .collect()
}

/// Settling-step comparison over common seeds: `a` wins a seed when it
/// settles strictly earlier (never settling counts as the horizon).
pub fn compare_pairs(runs: &[CompareRun]) -> Vec<ComparePair> {
    let settle = |r: &SeedRun| r.summary.settling_step.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            let (mut a_faster, mut b_faster, mut ties) = (0, 0, 0);
            for (ra, rb) in a.runs.iter().zip(&b.runs) {
                match settle(ra).cmp(&settle(rb)) {
                    std::cmp::Ordering::Less => a_faster += 1,
                    std::cmp::Ordering::Greater => b_faster += 1,
                    std::cmp::Ordering::Equal => ties += 1,
                }
            }
            out.push(ComparePair {
                a: a.name.clone(),
                b: b.name.clone(),
                a_faster,
                b_faster,
                ties,
            });
        }
    }
    out
}

/// Shared-time-axis CSV: `t` then one column per controller, first seed.
pub fn plot_data(runs: &[CompareRun], state: usize) -> String {
    let mut out = String::from("t");
    for r in runs {
        out.push_str(&format!(",{}", r.name));
    }
    out.push('\n');
    let Some(first) = runs.first().and_then(|r| r.runs.first()) else {
        return out;
    };
    for (k, row) in first.trace.rows.iter().enumerate() {
        out.push_str(&format!("{}", row.t));
        for r in runs {
            out.push_str(&format!(",{}", r.runs[0].trace.rows[k].x[state]));
        }
        out.push('\n');
    }
    out
}

pub fn run_compare(config: &ToolkitConfig) -> Result<CompareReport, CliError> {
    let prep = prepare(config)?;
    let art = Artifacts::for_config(config);
    let runs = compare(&prep)?;
    let mut entries = Vec::new();
    for r in &runs {
        entries.push(report::CompareEntryReport {
            name: r.name.clone(),
            mode: r.mode,
            controller: r.controller.controller.clone(),
            synthesis: r.synthesis.clone(),
            seeds: write_traces(&art, &r.name, &r.runs)?,
        });
        art.write_json(&format!("controllers/{}.json", r.name), &r.controller)?;
    }
    let mut plots = Vec::new();
    for state in 0..prep.plant.n() {
        let csv = plot_data(&runs, state);
        let label = format!("x_{}", state + 1);
        let stem = format!("compare_x{}", state + 1);
        art.write(&format!("{stem}.csv"), &csv)?;
        let series: Vec<svg::Series> = runs
            .iter()
            .map(|r| svg::Series {
                name: r.name.clone(),
                points: r.runs[0].trace.rows.iter().map(|row| (row.t, row.x[state])).collect(),
            })
            .collect();
        let title = format!("{label}, seed {}", runs[0].runs[0].seed);
        art.write(&format!("{stem}.svg"), &svg::line_chart(&title, "t [s]", &label, &series))?;
        plots.push(stem);
    }
    let out = CompareReport {
        environment: Environment::new(config, None),
        entries,
        pairs: compare_pairs(&runs),
        plots,
    };
    art.write_json("compare.json", &out)?;
    Ok(out)
}

/// The whole flow for the `[synthesis]` controller.
pub fn run_pipeline(config: &ToolkitConfig) -> Result<RunReport, CliError> {
    let prep = prepare(config)?;
    let art = Artifacts::for_config(config);
    let discretization = discretization_section(&prep);
    art.write_json("discretization.json", &discretization)?;
    let req = SynthesisRequest::from_config(config)?;
    let run = synthesize(&prep, &req)?;
    if config.synthesis.dump_lmi {
        let gamma = run.section.gamma.clone().unwrap_or(GammaSpec::Single(0.0));
        art.write("lmi.txt", &dump_text(&assemble(&prep, &req, &gamma)?))?;
    }
    if run.result.is_none() {
        let record = report::SynthesisRecord {
            synthesis: run.section.clone(),
            verification: None,
        };
        art.write_json("synthesis.json", &record)?;
    }
    let (section, result, verification) = run.into_result()?;
    let name = format!("t{}", req.theorem.number());
    let ctrl = ControllerArtifact::from_result(&name, &result);
    art.write_json("controller.json", &ctrl)?;
    let runs = simulate_seeds(&prep, &ctrl, config.simulation.mode, &config.simulation.seeds.seeds())?;
    let simulation = write_traces(&art, &name, &runs)?;
    let out = RunReport {
        environment: Environment::new(config, Some(section.backend.clone())),
        discretization,
        synthesis: section,
        verification,
        simulation,
    };
    art.write_json("report.json", &out)?;
    art.write("report.txt", &report::run_text(&out))?;
    Ok(out)
}

pub(crate) fn status_name(s: FeasibilityStatus) -> &'static str {
    match s {
        FeasibilityStatus::Feasible => "feasible",
        FeasibilityStatus::Infeasible => "infeasible",
        FeasibilityStatus::Unknown => "unknown",
    }
}
