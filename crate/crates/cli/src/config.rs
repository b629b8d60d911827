//! The TOML configuration file.
//!
//! ```toml
//! output_dir = "out"
//!
//! [plant]
//! preset = "rotary_servo"
//! td = 0.02
//!
//! [network]
//! d_bar = 4
//! tau_sc = { kind = "uniform", lo = 0.0, hi = 0.08 }
//!
//! [synthesis]
//! theorem = 1
//! gamma = { mode = "maximize" }
//!
//! [simulation]
//! steps = 125
//! x0 = [1.0, 0.0]
//! seeds = { first = 0, count = 100 }
//! ```
//!
//! Matrices are row-major nested arrays. Every field except `plant` and
//! `network.d_bar` has a default.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ncs_core::netsim::{DelayDistribution, NetworkSpec, SimMode};
use ncs_core::presets::build_preset_plant;
use ncs_core::rows::from_rows;
use ncs_core::synthesis::{ExtendedX, GammaFree, GammaSpec, Theorem};
use ncs_core::{delta_bound, ContinuousPlant, NetworkBound};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolkitConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub plant: PlantConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    /// Controllers run side by side by `compare`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<CompareEntry>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("ncs-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    /// Sampling period in seconds.
    pub td: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Delay bound in sampling periods.
    pub d_bar: i64,
    /// Consecutive losses bound.
    #[serde(default)]
    pub p_bar: i64,
    #[serde(default)]
    pub tau_sc: DelayDistribution,
    #[serde(default)]
    pub tau_c: DelayDistribution,
    #[serde(default)]
    pub tau_ca: DelayDistribution,
    #[serde(default)]
    pub drop_sc: f64,
    #[serde(default)]
    pub drop_ca: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaConfig {
    Fixed {
        value: f64,
    },
    PerMode {
        values: Vec<f64>,
    },
    /// Bisection; an empty `free` list moves one shared `γ`.
    Maximize {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        free: Vec<usize>,
    },
}

impl Default for GammaConfig {
    fn default() -> Self {
        GammaConfig::Maximize { free: Vec::new() }
    }
}

impl GammaConfig {
    pub fn free(&self) -> Option<GammaFree> {
        match self {
            GammaConfig::Maximize { free } if free.is_empty() => Some(GammaFree::Single),
            GammaConfig::Maximize { free } => Some(GammaFree::PerMode(free.iter().copied().collect::<BTreeSet<_>>())),
            _ => None,
        }
    }

    pub fn fixed(&self) -> Option<GammaSpec> {
        match self {
            GammaConfig::Fixed { value } => Some(GammaSpec::Single(*value)),
            GammaConfig::PerMode { values } => Some(GammaSpec::PerMode(values.clone())),
            GammaConfig::Maximize { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Barrier,
    Projection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    /// 1 static, 2 switched, 3 extended.
    #[serde(default = "default_theorem")]
    pub theorem: u8,
    #[serde(default)]
    pub gamma: GammaConfig,
    #[serde(default)]
    pub extended_x: ExtendedX,
    #[serde(default)]
    pub backend: BackendChoice,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Bisection tolerance.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Also write the assembled system as text.
    #[serde(default)]
    pub dump_lmi: bool,
}

fn default_theorem() -> u8 {
    1
}

fn default_epsilon() -> f64 {
    ncs_core::sdp::DEFAULT_EPSILON
}

fn default_tolerance() -> f64 {
    1e-3
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            theorem: default_theorem(),
            gamma: GammaConfig::default(),
            extended_x: ExtendedX::default(),
            backend: BackendChoice::default(),
            epsilon: default_epsilon(),
            tolerance: default_tolerance(),
            dump_lmi: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSet {
    List(Vec<u64>),
    Range { first: u64, count: u64 },
}

impl SeedSet {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSet::List(v) => v.clone(),
            SeedSet::Range { first, count } => (*first..first + count).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Defaults to the first unit vector.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x0: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: SeedSet,
    #[serde(default = "default_mode")]
    pub mode: SimMode,
}

fn default_steps() -> usize {
    125
}

fn default_seeds() -> SeedSet {
    SeedSet::List(vec![0])
}

fn default_mode() -> SimMode {
    SimMode::Buffered
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            x0: Vec::new(),
            seeds: default_seeds(),
            mode: default_mode(),
        }
    }
}

/// Where a compared controller comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ControllerSource {
    /// Synthesised with the `[synthesis]` settings, optionally overridden.
    Synthesize {
        theorem: u8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<GammaConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        extended_x: Option<ExtendedX>,
    },
    /// A fixed reference gain.
    Baseline { kx: Vec<Vec<f64>> },
    /// A controller file written by `synthesize`.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub name: String,
    #[serde(flatten)]
    pub source: ControllerSource,
    #[serde(default = "default_mode")]
    pub mode: SimMode,
}

impl ToolkitConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ToolkitConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialise")
    }

    /// Output directory, with `NCS_OUTPUT_DIR` taking precedence.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(crate::OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn continuous_plant(&self) -> Result<ContinuousPlant, CliError> {
        let p = &self.plant;
        match (&p.preset, &p.a, &p.b) {
            (Some(name), None, None) => build_preset_plant(name).map_err(|e| CliError::Config(e.to_string())),
            (None, Some(a), Some(b)) => {
                let a = matrix(a, "plant.a")?;
                let b = matrix(b, "plant.b")?;
                ContinuousPlant::new(a, b).map_err(|e| CliError::Config(e.to_string()))
            }
            _ => Err(CliError::Config(
                "plant needs either `preset` or both `a` and `b`".into(),
            )),
        }
    }

    pub fn bound(&self) -> Result<NetworkBound, CliError> {
        delta_bound(self.network.d_bar, self.network.p_bar).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn network_spec(&self, seed: u64) -> NetworkSpec {
        let n = &self.network;
        NetworkSpec {
            tau_sc: n.tau_sc.clone(),
            tau_ca: n.tau_ca.clone(),
            tau_c: n.tau_c.clone(),
            drop_sc: n.drop_sc,
            drop_ca: n.drop_ca,
            p_bar: n.p_bar.max(0) as usize,
            seed,
        }
    }

    pub fn theorem(&self) -> Result<Theorem, CliError> {
        theorem(self.synthesis.theorem)
    }

    pub fn x0(&self, n: usize) -> Vec<f64> {
        if self.simulation.x0.is_empty() {
            let mut x = vec![0.0; n];
            x[0] = 1.0;
            x
        } else {
            self.simulation.x0.clone()
        }
    }

    /// Schema checks that need no computation beyond building the plant.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.plant.td.is_finite() && self.plant.td > 0.0) {
            return bad(format!("plant.td must be positive, got {}", self.plant.td));
        }
        let plant = self.continuous_plant()?;
        let bound = self.bound()?;
        self.network_spec(0)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.theorem()?;
        validate_gamma(&self.synthesis.gamma, bound.delta_bar, "synthesis.gamma")?;
        let s = &self.synthesis;
        if !(s.epsilon.is_finite() && s.epsilon > 0.0) {
            return bad(format!("synthesis.epsilon must be positive, got {}", s.epsilon));
        }
        if !(s.tolerance.is_finite() && s.tolerance > 0.0) {
            return bad(format!("synthesis.tolerance must be positive, got {}", s.tolerance));
        }
        let sim = &self.simulation;
        if sim.steps == 0 {
            return bad("simulation.steps must be at least 1".into());
        }
        if !sim.x0.is_empty() && sim.x0.len() != plant.n() {
            return bad(format!("simulation.x0 has {} entries, the plant has {} states", sim.x0.len(), plant.n()));
        }
        if sim.x0.iter().any(|v| !v.is_finite()) {
            return bad("simulation.x0 must be finite".into());
        }
        if sim.seeds.seeds().is_empty() {
            return bad("simulation.seeds is empty".into());
        }
        let mut names = BTreeSet::new();
        for entry in &self.compare {
            if entry.name.is_empty() || !entry.name.chars().all(|c| c.is_ascii_alphanumeric() || "_-".contains(c)) {
                return bad(format!("compare name {:?} must be nonempty [A-Za-z0-9_-]", entry.name));
            }
            if !names.insert(entry.name.as_str()) {
                return bad(format!("compare name {:?} appears twice", entry.name));
            }
            match &entry.source {
                ControllerSource::Synthesize { theorem: t, gamma, .. } => {
                    theorem(*t)?;
                    if let Some(g) = gamma {
                        validate_gamma(g, bound.delta_bar, &format!("compare.{}.gamma", entry.name))?;
                    }
                }
                ControllerSource::Baseline { kx } => {
                    let k = matrix(kx, &format!("compare.{}.kx", entry.name))?;
                    if k.shape() != (plant.m(), plant.n()) {
                        return bad(format!(
                            "compare.{}.kx is {}×{}, expected {}×{}",
                            entry.name,
                            k.nrows(),
                            k.ncols(),
                            plant.m(),
                            plant.n()
                        ));
                    }
                }
                ControllerSource::File { .. } => {}
            }
        }
        Ok(())
    }
}

pub fn theorem(number: u8) -> Result<Theorem, CliError> {
    Theorem::from_number(number).ok_or_else(|| CliError::Config(format!("theorem must be 1, 2 or 3, got {number}")))
}

fn validate_gamma(g: &GammaConfig, delta_bar: usize, what: &str) -> Result<(), CliError> {
    let err = |m: String| Err(CliError::Config(format!("{what}: {m}")));
    match g {
        GammaConfig::Maximize { free } => {
            if let Some(i) = free.iter().find(|i| **i == 0 || **i > delta_bar) {
                return err(format!("free mode {i} is outside 1..={delta_bar}"));
            }
            Ok(())
        }
        _ => g
            .fixed()
            .expect("fixed variants")
            .validate(delta_bar)
            .or_else(|e| err(e.to_string())),
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(CliError::Config(format!("{what} is empty")));
    }
    from_rows(rows).map_err(|e| CliError::Config(format!("{what}: {e}")))
}
