//! wasm-bindgen entry points for `www/index.html`. Every call takes plain
//! numbers and returns a JSON string.

use std::collections::BTreeSet;

use ncs_core::netsim::{simulate_buffered, ControllerSpec, DelayDistribution, NetworkSpec};
use ncs_core::presets::rotary_servo;
use ncs_core::synthesis::{
    assemble_lmis, maximize_gamma, solve_feasibility, GammaFree, GammaSpec, Gains, SynthesisOutcome, Theorem,
};
use ncs_core::{build_lifted, delta_bound, discretize, DiscretePlant, LiftedModel};

use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Discretized {
    a_d: Vec<Vec<f64>>,
    b_d: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct Synthesized {
    status: &'static str,
    gamma: Option<Vec<f64>>,
    gains: Option<Gains>,
    controller: Option<ControllerSpec>,
    variables: usize,
    lmis: usize,
}

#[derive(Serialize)]
struct Simulated {
    t: Vec<f64>,
    x: Vec<Vec<f64>>,
    u: Vec<f64>,
    q: Vec<usize>,
    settling_time: Option<f64>,
    drops: usize,
}

fn servo(td: f64, d_bar: u32, p_bar: u32) -> Result<(DiscretePlant, LiftedModel), String> {
    let dp = discretize(&rotary_servo(), td).map_err(|e| e.to_string())?;
    let bound = delta_bound(d_bar as i64, p_bar as i64).map_err(|e| e.to_string())?;
    let lm = build_lifted(&dp, &bound).map_err(|e| e.to_string())?;
    Ok((dp, lm))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("demo records serialise")
}

pub fn discretize_json(td: f64) -> Result<String, String> {
    let dp = discretize(&rotary_servo(), td).map_err(|e| e.to_string())?;
    Ok(json(&Discretized {
        a_d: ncs_core::rows::to_rows(&dp.a),
        b_d: ncs_core::rows::to_rows(&dp.b),
    }))
}

/// `gamma < 0` bisects; theorem 4 is the static law with only `γ_1` raised.
pub fn synthesize_json(theorem: u8, td: f64, d_bar: u32, p_bar: u32, gamma: f64) -> Result<String, String> {
    let (_, lm) = servo(td, d_bar, p_bar)?;
    let (th, free) = match theorem {
        1 => (Theorem::Static, GammaFree::Single),
        2 => (Theorem::Switched, GammaFree::Single),
        3 => (Theorem::Extended, GammaFree::Single),
        4 => (Theorem::Static, GammaFree::PerMode(BTreeSet::from([1]))),
        _ => return Err(format!("theorem must be 1 to 4, got {theorem}")),
    };
    let outcome = if gamma < 0.0 {
        match maximize_gamma(&lm, th, &free, 1e-3) {
            Ok(s) => SynthesisOutcome::Feasible(Box::new(s.result)),
            Err(e) => return Err(e.to_string()),
        }
    } else {
        let spec = match &free {
            GammaFree::Single => GammaSpec::Single(gamma),
            GammaFree::PerMode(_) => GammaSpec::PerMode(
                (1..=lm.delta_bar())
                    .map(|i| if i == 1 { gamma } else { 0.0 })
                    .collect(),
            ),
        };
        let sys = assemble_lmis(&lm, th, &spec).map_err(|e| e.to_string())?;
        solve_feasibility(&sys).map_err(|e| e.to_string())?
    };
    let sys = assemble_lmis(&lm, th, &GammaSpec::Single(0.0)).map_err(|e| e.to_string())?;
    let (variables, lmis) = sys.counts();
    let out = match outcome {
        SynthesisOutcome::Feasible(r) => Synthesized {
            status: "feasible",
            gamma: Some(r.gamma.values(lm.delta_bar())),
            controller: Some(ControllerSpec::from(&r.gains)),
            gains: Some(r.gains),
            variables,
            lmis,
        },
        other => Synthesized {
            status: if matches!(other, SynthesisOutcome::Infeasible { .. }) { "infeasible" } else { "unknown" },
            gamma: None,
            gains: None,
            controller: None,
            variables,
            lmis,
        },
    };
    Ok(json(&out))
}

/// Buffered run from `x0 = [1, 0]` with sensor delays uniform on
/// `[0, delay_max]` and controller-to-actuator losses with probability `drop`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_json(
    controller: &str,
    td: f64,
    d_bar: u32,
    p_bar: u32,
    delay_max: f64,
    drop: f64,
    steps: usize,
    seed: u32,
) -> Result<String, String> {
    let ctrl: ControllerSpec = serde_json::from_str(controller).map_err(|e| format!("bad controller: {e}"))?;
    let (dp, lm) = servo(td, d_bar, p_bar)?;
    let net = NetworkSpec {
        tau_sc: DelayDistribution::Uniform { lo: 0.0, hi: delay_max },
        drop_ca: drop,
        p_bar: p_bar as usize,
        seed: seed as u64,
        ..Default::default()
    };
    let trace = simulate_buffered(&dp, &lm, &ctrl, &net, &[1.0, 0.0], steps).map_err(|e| e.to_string())?;
    let summary = trace.summary();
    Ok(json(&Simulated {
        t: trace.rows.iter().map(|r| r.t).collect(),
        x: trace.rows.iter().map(|r| r.x.clone()).collect(),
        u: trace.rows.iter().map(|r| r.u_applied[0]).collect(),
        q: trace.rows.iter().map(|r| r.q).collect(),
        settling_time: summary.settling_time,
        drops: summary.drops_total,
    }))
}

#[wasm_bindgen]
pub fn discretize_servo(td: f64) -> Result<String, JsValue> {
    discretize_json(td).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn synthesize(theorem: u8, td: f64, d_bar: u32, p_bar: u32, gamma: f64) -> Result<String, JsValue> {
    synthesize_json(theorem, td, d_bar, p_bar, gamma).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    controller: &str,
    td: f64,
    d_bar: u32,
    p_bar: u32,
    delay_max: f64,
    drop: f64,
    steps: usize,
    seed: u32,
) -> Result<String, JsValue> {
    simulate_json(controller, td, d_bar, p_bar, delay_max, drop, steps, seed).map_err(|e| JsValue::from_str(&e))
}
