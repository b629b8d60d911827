//! Seeded discrete-event simulation of the closed loop: sensor, two lossy
//! channels, controller node, actuator buffer, zero-order hold and plant.
//!
//! Every random draw for sample `k` happens when `x_k` is sampled and in a
//! fixed order, so a given [`NetworkSpec`] realizes the same delays and
//! losses whatever controller is plugged in.

mod sim;
mod trace;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthesis::Gains;

pub use sim::{realize_network, simulate_buffered, simulate_unbuffered, SampleDraw};
pub use trace::{
    check_protocol, lyapunov_trace, PacketFate, PacketKind, PacketRecord, ProtocolReport, SimMode,
    SimTrace, TraceRow, TraceSummary,
};

/// Relative slack on the ceiling so `τ = q·T_d` up to rounding maps to `q`.
const CEIL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Config(String),
    #[error("packet {stamp} has total delay {tau:.6} s, q = {q} exceeds δ̄ = {delta_bar}")]
    DelayBound {
        stamp: i64,
        tau: f64,
        q: usize,
        delta_bar: usize,
    },
    #[error("at step {k} the applied input is {q} periods old, δ̄ = {delta_bar}")]
    StaleInput { k: usize, q: usize, delta_bar: usize },
    #[error("Lyapunov trace unavailable: {0}")]
    Lyapunov(String),
}

impl SimError {
    /// The run broke a delay or dropout assumption rather than being misconfigured.
    pub fn is_assumption_violation(&self) -> bool {
        matches!(self, SimError::DelayBound { .. } | SimError::StaleInput { .. })
    }
}

/// Bounded-support delay law, seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayDistribution {
    Constant { value: f64 },
    /// Uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// Uniform pick from a finite list.
    Discrete { values: Vec<f64> },
}

impl Default for DelayDistribution {
    fn default() -> Self {
        DelayDistribution::Constant { value: 0.0 }
    }
}

impl DelayDistribution {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        let fine = match self {
            DelayDistribution::Constant { value } => ok(*value),
            DelayDistribution::Uniform { lo, hi } => ok(*lo) && ok(*hi) && lo <= hi,
            DelayDistribution::Discrete { values } => !values.is_empty() && values.iter().all(|v| ok(*v)),
        };
        if fine {
            Ok(())
        } else {
            Err(SimError::Config(format!("bad delay distribution {self:?}")))
        }
    }

    pub fn upper_bound(&self) -> f64 {
        match self {
            DelayDistribution::Constant { value } => *value,
            DelayDistribution::Uniform { hi, .. } => *hi,
            DelayDistribution::Discrete { values } => values.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            DelayDistribution::Constant { value } => *value,
            DelayDistribution::Uniform { lo, hi } => {
                if lo == hi {
                    *lo
                } else {
                    rng.random_range(*lo..=*hi)
                }
            }
            DelayDistribution::Discrete { values } => values[rng.random_range(0..values.len())],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(default)]
    pub tau_sc: DelayDistribution,
    #[serde(default)]
    pub tau_ca: DelayDistribution,
    #[serde(default)]
    pub tau_c: DelayDistribution,
    #[serde(default)]
    pub drop_sc: f64,
    #[serde(default)]
    pub drop_ca: f64,
    /// Consecutive lost samples tolerated before delivery is forced.
    #[serde(default)]
    pub p_bar: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            tau_sc: DelayDistribution::default(),
            tau_ca: DelayDistribution::default(),
            tau_c: DelayDistribution::default(),
            drop_sc: 0.0,
            drop_ca: 0.0,
            p_bar: 0,
            seed: 0,
        }
    }
}

impl NetworkSpec {
    /// Distributions well formed and loss probabilities in `[0, 1)`.
    ///
    /// The delay bound is not checked here: a violation surfaces during the
    /// run as [`SimError::DelayBound`].
    pub fn validate(&self) -> Result<(), SimError> {
        for d in [&self.tau_sc, &self.tau_ca, &self.tau_c] {
            d.validate()?;
        }
        for (name, p) in [("drop_sc", self.drop_sc), ("drop_ca", self.drop_ca)] {
            if !(0.0..1.0).contains(&p) {
                return Err(SimError::Config(format!("{name} = {p} is outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// `τ̄_sc + τ̄_c + τ̄_ca`.
    pub fn max_total_delay(&self) -> f64 {
        self.tau_sc.upper_bound() + self.tau_c.upper_bound() + self.tau_ca.upper_bound()
    }

    /// Whether every packet fits within `d̄·T_d`.
    pub fn respects_delay_bound(&self, td: f64, d_bar: usize) -> bool {
        self.max_total_delay() <= d_bar as f64 * td * (1.0 + CEIL_TOLERANCE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    SensorToController,
    ControllerToActuator,
}

/// Draws a delay and a loss flag for one packet. Delivery is forced once
/// `consecutive_drops` reaches `p̄`.
pub fn sample_channel(
    net: &NetworkSpec,
    channel: Channel,
    consecutive_drops: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, bool) {
    let (delay, lost, _) = channel_draw(net, channel, consecutive_drops, rng);
    (delay, lost)
}

/// As [`sample_channel`], also reporting whether delivery was forced.
pub(crate) fn channel_draw(
    net: &NetworkSpec,
    channel: Channel,
    consecutive_drops: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, bool, bool) {
    let (dist, p) = match channel {
        Channel::SensorToController => (&net.tau_sc, net.drop_sc),
        Channel::ControllerToActuator => (&net.tau_ca, net.drop_ca),
    };
    let delay = dist.sample(rng);
    let raw = rng.random::<f64>() < p;
    let forced = raw && consecutive_drops >= net.p_bar;
    (delay, raw && !forced, forced)
}

/// `q = max(1, ⌈τ/T_d⌉)` and the added buffer delay `τ_b = q·T_d − τ`.
pub fn buffer_quantize(tau_total: f64, td: f64, delta_bar: usize) -> Result<(usize, f64), SimError> {
    if !(tau_total >= 0.0) || !tau_total.is_finite() || !(td > 0.0) {
        return Err(SimError::Config(format!("cannot quantize τ = {tau_total} with T_d = {td}")));
    }
    let ratio = tau_total / td;
    let q = ((ratio - CEIL_TOLERANCE).ceil().max(1.0)) as usize;
    if q > delta_bar {
        return Err(SimError::DelayBound {
            stamp: -1,
            tau: tau_total,
            q,
            delta_bar,
        });
    }
    let tau_b = (q as f64 * td - tau_total).max(0.0);
    Ok((q, tau_b))
}

/// Controller run at the controller node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerSpec {
    /// `u_k = −K_x x_k`.
    Static {
        #[serde(with = "crate::rows::matrix")]
        kx: DMatrix<f64>,
    },
    /// Sends `−K_{x,i} x_k` for every `i`; the buffer picks by delay.
    Switched {
        #[serde(with = "crate::rows::matrices")]
        kx: Vec<DMatrix<f64>>,
    },
    /// `u_k = −K_x x_k − K_u [u_{k−1}; …; u_{k−δ̄}]`.
    Extended {
        #[serde(with = "crate::rows::matrix")]
        kx: DMatrix<f64>,
        #[serde(with = "crate::rows::matrix")]
        ku: DMatrix<f64>,
    },
    /// A fixed reference gain, run exactly like `Static`.
    BaselineStatic {
        #[serde(with = "crate::rows::matrix")]
        kx: DMatrix<f64>,
    },
}

impl From<&Gains> for ControllerSpec {
    fn from(g: &Gains) -> Self {
        match g {
            Gains::Static { kx } => ControllerSpec::Static { kx: kx.clone() },
            Gains::Switched { kx } => ControllerSpec::Switched { kx: kx.clone() },
            Gains::Extended { kx, ku } => ControllerSpec::Extended {
                kx: kx.clone(),
                ku: ku.clone(),
            },
        }
    }
}

impl ControllerSpec {
    /// The extended law needs every sample to reach the controller.
    pub fn requires_lossless_uplink(&self) -> bool {
        matches!(self, ControllerSpec::Extended { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            ControllerSpec::Static { .. } => "static",
            ControllerSpec::Switched { .. } => "switched",
            ControllerSpec::Extended { .. } => "extended",
            ControllerSpec::BaselineStatic { .. } => "baseline_static",
        }
    }

    pub fn validate(&self, n: usize, m: usize, delta_bar: usize) -> Result<(), SimError> {
        let shape = |k: &DMatrix<f64>, cols: usize, what: &str| {
            if k.shape() != (m, cols) {
                Err(SimError::Config(format!(
                    "{what} is {}×{}, expected {m}×{cols}",
                    k.nrows(),
                    k.ncols()
                )))
            } else if k.iter().any(|v| !v.is_finite()) {
                Err(SimError::Config(format!("{what} has non-finite entries")))
            } else {
                Ok(())
            }
        };
        match self {
            ControllerSpec::Static { kx } | ControllerSpec::BaselineStatic { kx } => shape(kx, n, "K_x"),
            ControllerSpec::Switched { kx } => {
                if kx.len() != delta_bar {
                    return Err(SimError::Config(format!(
                        "switched controller has {} gains, expected {delta_bar}",
                        kx.len()
                    )));
                }
                kx.iter().try_for_each(|k| shape(k, n, "K_x,i"))
            }
            ControllerSpec::Extended { kx, ku } => {
                shape(kx, n, "K_x")?;
                shape(ku, delta_bar * m, "K_u")
            }
        }
    }

    /// Packet payload for sample `x`. `history(j)` returns the controller's
    /// own output `j` periods back (zero before the start).
    pub(crate) fn payload(&self, x: &[f64], history: impl Fn(usize) -> Vec<f64>) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        let neg = |k: &DMatrix<f64>, v: &DVector<f64>| (-(k * v)).iter().copied().collect::<Vec<_>>();
        match self {
            ControllerSpec::Static { kx } | ControllerSpec::BaselineStatic { kx } => neg(kx, &xv),
            ControllerSpec::Switched { kx } => kx.iter().flat_map(|k| neg(k, &xv)).collect(),
            ControllerSpec::Extended { kx, ku } => {
                let m = kx.nrows();
                let db = ku.ncols() / m;
                let hist: Vec<f64> = (1..=db).flat_map(history).collect();
                let u = -(kx * xv) - ku * DVector::from_vec(hist);
                u.iter().copied().collect()
            }
        }
    }

    /// The input applied from `payload` when it is `q` periods old.
    pub(crate) fn select(&self, payload: &[f64], q: usize, m: usize) -> Vec<f64> {
        match self {
            ControllerSpec::Switched { kx } => {
                let i = q.clamp(1, kx.len());
                payload[(i - 1) * m..i * m].to_vec()
            }
            _ => payload.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn quantize_examples() {
        let (q, tb) = buffer_quantize(0.035, 0.02, 4).unwrap();
        assert_eq!(q, 2);
        assert_abs_diff_eq!(tb, 0.005, epsilon = 1e-12);
        let (q, tb) = buffer_quantize(0.040, 0.02, 4).unwrap();
        assert_eq!(q, 2);
        assert_abs_diff_eq!(tb, 0.0, epsilon = 1e-12);
        let (q, tb) = buffer_quantize(0.0, 0.02, 4).unwrap();
        assert_eq!(q, 1);
        assert_abs_diff_eq!(tb, 0.02, epsilon = 1e-15);
        assert!(matches!(
            buffer_quantize(0.081, 0.02, 4),
            Err(SimError::DelayBound { q: 5, .. })
        ));
        assert!(buffer_quantize(0.08, 0.02, 4).is_ok());
        assert!(buffer_quantize(-1e-3, 0.02, 4).is_err());
    }

    #[test]
    fn lossless_channel_never_drops() {
        let net = NetworkSpec {
            drop_sc: 0.9,
            p_bar: 0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| !sample_channel(&net, Channel::SensorToController, 0, &mut rng).1));
    }

    #[test]
    fn forced_delivery_cadence() {
        let net = NetworkSpec {
            drop_ca: 1.0,
            p_bar: 2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut consecutive = 0;
        let mut pattern = Vec::new();
        for _ in 0..9 {
            let (_, lost) = sample_channel(&net, Channel::ControllerToActuator, consecutive, &mut rng);
            consecutive = if lost { consecutive + 1 } else { 0 };
            pattern.push(lost);
        }
        let cycle = [true, true, false];
        assert!(pattern.chunks(3).all(|c| c == cycle));
    }

    #[test]
    fn controller_shapes_are_checked() {
        let k = DMatrix::from_row_slice(1, 2, &[1.0, 0.1]);
        assert!(ControllerSpec::Static { kx: k.clone() }.validate(2, 1, 4).is_ok());
        assert!(ControllerSpec::Switched { kx: vec![k.clone(); 3] }.validate(2, 1, 4).is_err());
        let ext = ControllerSpec::Extended {
            kx: k.clone(),
            ku: DMatrix::zeros(1, 3),
        };
        assert!(ext.validate(2, 1, 4).is_err());
        assert!(ext.requires_lossless_uplink());
        let bad = ControllerSpec::Static {
            kx: DMatrix::from_row_slice(1, 2, &[f64::NAN, 0.0]),
        };
        assert!(bad.validate(2, 1, 4).is_err());
    }

    #[test]
    fn switched_payload_selects_by_delay() {
        let kx: Vec<_> = (1..=3).map(|i| DMatrix::from_element(1, 1, i as f64)).collect();
        let c = ControllerSpec::Switched { kx };
        let p = c.payload(&[2.0], |_| unreachable!());
        assert_eq!(p, vec![-2.0, -4.0, -6.0]);
        assert_eq!(c.select(&p, 2, 1), vec![-4.0]);
    }

    #[test]
    fn extended_payload_uses_history() {
        let c = ControllerSpec::Extended {
            kx: DMatrix::from_element(1, 1, 1.0),
            ku: DMatrix::from_row_slice(1, 2, &[0.5, 0.25]),
        };
        let p = c.payload(&[1.0], |j| vec![j as f64]);
        assert_abs_diff_eq!(p[0], -1.0 - 0.5 - 0.5, epsilon = 1e-15);
    }
}
