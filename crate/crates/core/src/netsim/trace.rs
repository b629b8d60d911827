//! Simulation records, export and after-the-fact checks.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ControllerSpec, SimError};
use crate::model::DiscretePlant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Control values held to the next grid instant.
    Buffered,
    /// Control values applied on arrival.
    Unbuffered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    Sensor,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketFate {
    Lost,
    /// Sensor packet that reached the controller.
    Delivered,
    Applied,
    /// A newer control value was applied first.
    Superseded,
    /// Still buffered or in flight when the horizon ended.
    Pending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub kind: PacketKind,
    pub stamp: usize,
    pub payload: Vec<f64>,
    pub send_time: f64,
    /// `None` when lost.
    pub arrive_time: Option<f64>,
    pub dropped: bool,
    /// The loss draw said drop but the dropout bound forced delivery.
    pub forced: bool,
    pub fate: PacketFate,
    /// Control packets: `q·T_d − τ`.
    pub buffer_delay: Option<f64>,
    /// Control packets: quantized delay `q`.
    pub q: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub t: f64,
    pub x: Vec<f64>,
    /// Input active at `t` (buffered: over the whole period).
    pub u_applied: Vec<f64>,
    /// Age in periods of the applied input.
    pub q: usize,
    /// Stamp of the applied input; `-1` before the first delivery.
    pub applied_stamp: i64,
    /// Active mode of the switched model (buffered runs only).
    pub alpha_index: Option<usize>,
    pub v: Option<f64>,
    pub packets_dropped_so_far: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub mode: SimMode,
    pub td: f64,
    pub n: usize,
    pub m: usize,
    pub delta_bar: usize,
    pub p_bar: usize,
    pub seed: u64,
    pub controller: ControllerSpec,
    pub rows: Vec<TraceRow>,
    /// `x` after the last row.
    pub final_state: Vec<f64>,
    /// Controller output by stamp; `None` where the sample never arrived.
    pub payloads: Vec<Option<Vec<f64>>>,
    pub packets: Vec<PacketRecord>,
    /// Times at which the applied input changed.
    pub input_changes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub mode: SimMode,
    pub controller: String,
    pub seed: u64,
    pub steps: usize,
    /// First `k` from which `‖x‖∞ < 10⁻³‖x_0‖∞` to the end of the horizon.
    pub settling_step: Option<usize>,
    pub settling_time: Option<f64>,
    pub max_q: usize,
    pub drops_sc: usize,
    pub drops_ca: usize,
    pub drops_total: usize,
    pub forced_deliveries: usize,
    pub superseded: usize,
    pub final_norm_inf: f64,
}

fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |a, v| a.max(v.abs()))
}

impl SimTrace {
    pub fn steps(&self) -> usize {
        self.rows.len()
    }

    /// `x_0 … x_N`.
    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.rows
            .iter()
            .map(|r| r.x.as_slice())
            .chain(std::iter::once(self.final_state.as_slice()))
    }

    /// First step after which `‖x‖∞ < rel·‖x_0‖∞` holds for the rest of
    /// the horizon.
    pub fn settling_step(&self, rel: f64) -> Option<usize> {
        let x0 = norm_inf(&self.rows.first()?.x);
        if x0 == 0.0 {
            return Some(0);
        }
        let bound = rel * x0;
        let norms: Vec<f64> = self.states().map(norm_inf).collect();
        let last_bad = norms.iter().rposition(|v| !(*v < bound));
        match last_bad {
            None => Some(0),
            Some(i) if i + 1 < norms.len() => Some(i + 1),
            Some(_) => None,
        }
    }

    fn losses(&self, kind: PacketKind) -> usize {
        self.packets.iter().filter(|p| p.kind == kind && p.dropped).count()
    }

    pub fn summary(&self) -> TraceSummary {
        let settling_step = self.settling_step(1e-3);
        let (sc, ca) = (self.losses(PacketKind::Sensor), self.losses(PacketKind::Control));
        TraceSummary {
            mode: self.mode,
            controller: self.controller.label().to_string(),
            seed: self.seed,
            steps: self.steps(),
            settling_step,
            settling_time: settling_step.map(|k| k as f64 * self.td),
            max_q: self.rows.iter().map(|r| r.q).max().unwrap_or(0),
            drops_sc: sc,
            drops_ca: ca,
            drops_total: sc + ca,
            forced_deliveries: self.packets.iter().filter(|p| p.forced).count(),
            superseded: self
                .packets
                .iter()
                .filter(|p| p.fate == PacketFate::Superseded)
                .count(),
            final_norm_inf: norm_inf(&self.final_state),
        }
    }

    /// Header plus one line per row; `V_k` and `alpha_index` are empty when
    /// not available.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,t");
        for i in 1..=self.n {
            write!(out, ",x_{i}").unwrap();
        }
        for i in 1..=self.m {
            write!(out, ",u_applied_{i}").unwrap();
        }
        out.push_str(",q_k,alpha_index,V_k,packets_dropped_so_far\n");
        for r in &self.rows {
            write!(out, "{},{}", r.k, r.t).unwrap();
            for v in r.x.iter().chain(&r.u_applied) {
                write!(out, ",{v}").unwrap();
            }
            write!(out, ",{},", r.q).unwrap();
            if let Some(a) = r.alpha_index {
                write!(out, "{a}").unwrap();
            }
            out.push(',');
            if let Some(v) = r.v {
                write!(out, "{v}").unwrap();
            }
            writeln!(out, ",{}", r.packets_dropped_so_far).unwrap();
        }
        out
    }

    /// Fills `V_k`. Rows whose history holds an output that was never
    /// computed (lost sample, or computed after the horizon) stay empty.
    pub fn with_lyapunov(mut self, p: &[DMatrix<f64>]) -> Result<Self, SimError> {
        check_lyapunov(&self, p)?;
        let v: Vec<Option<f64>> = (0..self.rows.len()).map(|k| lyapunov_at(&self, p, k).ok()).collect();
        for (row, v) in self.rows.iter_mut().zip(v) {
            row.v = v;
        }
        Ok(self)
    }

    /// The lifted state `ξ_k` rebuilt from logged controller outputs.
    pub fn lifted_state(&self, k: usize) -> Result<Vec<f64>, SimError> {
        let mut xi = self.rows[k].x.clone();
        for j in 1..=self.delta_bar {
            if j > k {
                xi.extend(std::iter::repeat(0.0).take(self.m));
                continue;
            }
            match &self.payloads[k - j] {
                Some(u) => xi.extend_from_slice(u),
                None => {
                    return Err(SimError::Lyapunov(format!(
                        "controller output {} was never computed",
                        k - j
                    )))
                }
            }
        }
        Ok(xi)
    }

    /// Largest `|x_{k+1} − (A_d x_k + B_d u_{k−q_k})|` where `u_{k−q_k}` is
    /// taken from the logged payloads rather than the logged input.
    pub fn replay_error(&self, dp: &DiscretePlant) -> Result<f64, SimError> {
        let mut worst: f64 = 0.0;
        for (k, row) in self.rows.iter().enumerate() {
            let u = if row.applied_stamp < 0 {
                vec![0.0; self.m]
            } else {
                let payload = self.payloads[row.applied_stamp as usize]
                    .as_ref()
                    .ok_or_else(|| SimError::Lyapunov(format!("no payload for stamp {}", row.applied_stamp)))?;
                self.controller.select(payload, row.q, self.m)
            };
            let next = dp.step(&row.x, &u);
            let logged = self.rows.get(k + 1).map_or(&self.final_state, |r| &r.x);
            for (a, b) in next.iter().zip(logged) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }
}

fn check_lyapunov(trace: &SimTrace, p: &[DMatrix<f64>]) -> Result<(), SimError> {
    if matches!(trace.controller, ControllerSpec::Switched { .. }) {
        return Err(SimError::Lyapunov(
            "the switched law's lifted history is not the transmitted candidates".into(),
        ));
    }
    if p.len() != trace.delta_bar {
        return Err(SimError::Lyapunov(format!(
            "{} Lyapunov matrices for δ̄ = {}",
            p.len(),
            trace.delta_bar
        )));
    }
    let dim = trace.n + trace.delta_bar * trace.m;
    if p.iter().any(|pi| pi.shape() != (dim, dim)) {
        return Err(SimError::Lyapunov(format!("Lyapunov matrices must be {dim}×{dim}")));
    }
    Ok(())
}

fn lyapunov_at(trace: &SimTrace, p: &[DMatrix<f64>], k: usize) -> Result<f64, SimError> {
    let mode = trace.rows[k]
        .alpha_index
        .ok_or_else(|| SimError::Lyapunov(format!("no mode recorded at step {k}")))?;
    let xi = DVector::from_vec(trace.lifted_state(k)?);
    Ok(xi.dot(&(&p[mode - 1] * &xi)))
}

/// `V_k = ξ_kᵀ P_{α_k} ξ_k`; fails if any row lacks its history.
pub fn lyapunov_trace(trace: &SimTrace, p: &[DMatrix<f64>]) -> Result<Vec<f64>, SimError> {
    check_lyapunov(trace, p)?;
    (0..trace.rows.len()).map(|k| lyapunov_at(trace, p, k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub inputs_on_grid: bool,
    pub buffer_delay_below_td: bool,
    pub stamps_nondecreasing: bool,
    pub max_consecutive_losses: usize,
    pub losses_within_bound: bool,
    pub q_within_bound: bool,
    pub violations: Vec<String>,
}

impl ProtocolReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the buffer protocol on a finished trace. Grid and buffer-delay
/// checks apply to buffered runs only.
pub fn check_protocol(trace: &SimTrace) -> ProtocolReport {
    let mut violations = Vec::new();
    let buffered = trace.mode == SimMode::Buffered;

    let mut inputs_on_grid = true;
    if buffered {
        for &t in &trace.input_changes {
            let periods = t / trace.td;
            if (periods - periods.round()).abs() > 1e-9 {
                inputs_on_grid = false;
                violations.push(format!("input changed at t = {t}, off the grid"));
            }
        }
    }

    let mut buffer_delay_below_td = true;
    if buffered {
        for p in &trace.packets {
            if let Some(tb) = p.buffer_delay {
                // a zero-latency packet waits one full period because q ≥ 1
                let clamped = p.q == Some(1) && tb <= trace.td;
                if !(tb < trace.td || clamped) || tb < 0.0 {
                    buffer_delay_below_td = false;
                    violations.push(format!("packet {} waited {tb} s in the buffer", p.stamp));
                }
            }
        }
    }

    let stamps_nondecreasing = trace.rows.windows(2).all(|w| w[0].applied_stamp <= w[1].applied_stamp);
    if !stamps_nondecreasing {
        violations.push("applied control stamps decrease".into());
    }

    // a sample is lost when either of its two packets is
    let mut lost = vec![false; trace.payloads.len()];
    for p in trace.packets.iter().filter(|p| p.dropped) {
        lost[p.stamp] = true;
    }
    let (mut run, mut max_run) = (0usize, 0usize);
    for l in lost {
        run = if l { run + 1 } else { 0 };
        max_run = max_run.max(run);
    }
    let losses_within_bound = max_run <= trace.p_bar;
    if !losses_within_bound {
        violations.push(format!("{max_run} consecutive losses, p̄ = {}", trace.p_bar));
    }

    let q_within_bound = trace.rows.iter().all(|r| r.q <= trace.delta_bar);
    if !q_within_bound {
        violations.push("applied input older than δ̄".into());
    }

    ProtocolReport {
        inputs_on_grid,
        buffer_delay_below_td,
        stamps_nondecreasing,
        max_consecutive_losses: max_run,
        losses_within_bound,
        q_within_bound,
        violations,
    }
}
