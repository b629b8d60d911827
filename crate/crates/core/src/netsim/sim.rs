//! The event loop.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trace::{PacketFate, PacketKind, PacketRecord, SimMode, SimTrace, TraceRow};
use super::{buffer_quantize, channel_draw, Channel, ControllerSpec, NetworkSpec, SimError};
use crate::model::{input_interval_matrix, ContinuousPlant, DiscretePlant, LiftedModel};

/// Offsets this close (relative to `T_d`) to a grid instant snap onto it.
const SNAP: f64 = 1e-9;

/// Everything the network does to sample `k`, drawn up front.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleDraw {
    pub tau_sc: f64,
    pub tau_c: f64,
    pub tau_ca: f64,
    pub lost_sc: bool,
    pub lost_ca: bool,
    pub forced: bool,
}

impl SampleDraw {
    pub fn lost(&self) -> bool {
        self.lost_sc || self.lost_ca
    }
}

/// Draws the network's behaviour for `steps` samples from `net.seed`.
/// Per sample the order is sensor channel, computation delay, actuator
/// channel, so the realization depends on the spec alone.
pub fn realize_network(net: &NetworkSpec, steps: usize) -> Vec<SampleDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(net.seed);
    let mut consecutive = 0;
    (0..steps)
        .map(|_| {
            let (tau_sc, lost_sc, forced_sc) =
                channel_draw(net, Channel::SensorToController, consecutive, &mut rng);
            let tau_c = net.tau_c.sample(&mut rng);
            let (tau_ca, ca, forced_ca) = channel_draw(net, Channel::ControllerToActuator, consecutive, &mut rng);
            let lost_ca = ca && !lost_sc;
            let draw = SampleDraw {
                tau_sc,
                tau_c,
                tau_ca,
                lost_sc,
                lost_ca,
                forced: forced_sc || (forced_ca && !lost_sc),
            };
            consecutive = if draw.lost() { consecutive + 1 } else { 0 };
            draw
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum What {
    Sample,
    SensorArrival,
    ControlArrival,
    Actuation,
}

impl What {
    /// Tie-break class: sensor < control < actuation.
    fn class(self) -> u8 {
        match self {
            What::Sample | What::SensorArrival => 0,
            What::ControlArrival => 1,
            What::Actuation => 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    what: What,
    stamp: usize,
}

impl Event {
    fn key(&self) -> (u8, usize, What) {
        (self.what.class(), self.stamp, self.what)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| self.key().cmp(&other.key()))
    }
}

struct Engine<'a> {
    mode: SimMode,
    dp: &'a DiscretePlant,
    plant: Option<&'a ContinuousPlant>,
    ctrl: &'a ControllerSpec,
    draws: Vec<SampleDraw>,
    td: f64,
    m: usize,
    db: usize,
    steps: usize,
    p_bar: usize,
    queue: BinaryHeap<Reverse<Event>>,
    x: Vec<f64>,
    rows: Vec<TraceRow>,
    samples: Vec<Vec<f64>>,
    payloads: Vec<Option<Vec<f64>>>,
    packets: Vec<PacketRecord>,
    control_index: Vec<Option<usize>>,
    /// Buffered control stamps waiting for their release instant.
    buffer: Vec<usize>,
    current_stamp: i64,
    current_payload: Vec<f64>,
    last_input: Vec<f64>,
    input_changes: Vec<f64>,
    losses: usize,
    waiting: BTreeSet<usize>,
    next_in_order: usize,
    /// Unbuffered: `(offset, input, stamp)` switches within the open period.
    segments: Vec<(f64, Vec<f64>, i64)>,
    done: bool,
}

impl<'a> Engine<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        mode: SimMode,
        dp: &'a DiscretePlant,
        plant: Option<&'a ContinuousPlant>,
        ctrl: &'a ControllerSpec,
        net: &NetworkSpec,
        db: usize,
        x0: &[f64],
        steps: usize,
    ) -> Result<Self, SimError> {
        let (n, m) = (dp.n(), dp.m());
        if steps == 0 {
            return Err(SimError::Config("horizon must be at least one step".into()));
        }
        if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Config(format!("x0 must hold {n} finite values")));
        }
        net.validate()?;
        ctrl.validate(n, m, db)?;
        if net.p_bar >= db {
            return Err(SimError::Config(format!(
                "p̄ = {} leaves no room for a delay within δ̄ = {db}",
                net.p_bar
            )));
        }
        if ctrl.requires_lossless_uplink() && net.drop_sc > 0.0 {
            return Err(SimError::Config(
                "the extended controller needs a lossless sensor channel (drop_sc = 0)".into(),
            ));
        }
        let payload_len = match ctrl {
            ControllerSpec::Switched { .. } => db * m,
            _ => m,
        };
        Ok(Self {
            mode,
            dp,
            plant,
            ctrl,
            draws: super::realize_network(net, steps),
            td: dp.td,
            m,
            db,
            steps,
            p_bar: net.p_bar,
            queue: BinaryHeap::new(),
            x: x0.to_vec(),
            rows: Vec::with_capacity(steps),
            samples: Vec::with_capacity(steps),
            payloads: vec![None; steps],
            packets: Vec::new(),
            control_index: vec![None; steps],
            buffer: Vec::new(),
            current_stamp: -1,
            current_payload: vec![0.0; payload_len],
            last_input: vec![0.0; m],
            input_changes: Vec::new(),
            losses: 0,
            waiting: BTreeSet::new(),
            next_in_order: 0,
            segments: Vec::new(),
            done: false,
        })
    }

    fn grid(&self, k: usize) -> f64 {
        k as f64 * self.td
    }

    /// Queues an event, moving times within rounding of a grid instant onto it.
    fn push(&mut self, time: f64, what: What, stamp: usize) {
        let periods = time / self.td;
        let time = if (periods - periods.round()).abs() < SNAP {
            periods.round() * self.td
        } else {
            time
        };
        self.queue.push(Reverse(Event { time, what, stamp }));
    }

    fn run(mut self, seed: u64) -> Result<SimTrace, SimError> {
        self.push(0.0, What::Sample, 0);
        if self.mode == SimMode::Buffered {
            self.push(0.0, What::Actuation, 0);
        }
        while let Some(Reverse(ev)) = self.queue.pop() {
            match ev.what {
                What::Sample => self.on_sample(ev.stamp)?,
                What::SensorArrival => self.on_sensor_arrival(ev.stamp, ev.time)?,
                What::ControlArrival => self.on_control_arrival(ev.stamp, ev.time),
                What::Actuation => self.on_actuation(ev.stamp)?,
            }
            if self.done {
                break;
            }
        }
        Ok(SimTrace {
            mode: self.mode,
            td: self.td,
            n: self.dp.n(),
            m: self.m,
            delta_bar: self.db,
            p_bar: self.p_bar,
            seed,
            controller: self.ctrl.clone(),
            rows: self.rows,
            final_state: self.x,
            payloads: self.payloads,
            packets: self.packets,
            input_changes: self.input_changes,
        })
    }

    /// Controller output for stamp `k` computed from the sampled `x_k`.
    fn compute_payload(&mut self, k: usize, x: &[f64]) {
        if self.payloads[k].is_some() {
            return;
        }
        let payloads = &self.payloads;
        let m = self.m;
        let p = self.ctrl.payload(x, |j| {
            if j > k {
                vec![0.0; m]
            } else {
                payloads[k - j].clone().expect("in-order processing keeps the history complete")
            }
        });
        self.payloads[k] = Some(p);
    }

    fn on_sample(&mut self, k: usize) -> Result<(), SimError> {
        if self.mode == SimMode::Unbuffered {
            if k > 0 {
                self.close_interval(k - 1)?;
            }
            if k == self.steps {
                self.done = true;
                return Ok(());
            }
            self.segments = vec![(0.0, self.last_input.clone(), self.current_stamp)];
            self.push(self.grid(k + 1), What::Sample, k + 1);
        }
        let x = self.x.clone();
        self.samples.push(x.clone());
        if !matches!(self.ctrl, ControllerSpec::Extended { .. }) {
            self.compute_payload(k, &x);
        }
        let draw = self.draws[k];
        let send = self.grid(k);
        let arrive = (!draw.lost_sc).then(|| send + draw.tau_sc);
        if draw.lost_sc {
            self.losses += 1;
        }
        self.packets.push(PacketRecord {
            kind: PacketKind::Sensor,
            stamp: k,
            payload: x,
            send_time: send,
            arrive_time: arrive,
            dropped: draw.lost_sc,
            forced: draw.forced && !draw.lost_ca,
            fate: if draw.lost_sc { PacketFate::Lost } else { PacketFate::Delivered },
            buffer_delay: None,
            q: None,
        });
        if let Some(t) = arrive {
            self.push(t, What::SensorArrival, k);
        }
        Ok(())
    }

    fn on_sensor_arrival(&mut self, k: usize, t: f64) -> Result<(), SimError> {
        if matches!(self.ctrl, ControllerSpec::Extended { .. }) {
            self.waiting.insert(k);
            while self.waiting.remove(&self.next_in_order) {
                let j = self.next_in_order;
                self.next_in_order += 1;
                let x = self.samples[j].clone();
                self.compute_payload(j, &x);
                self.send_control(j, t)?;
            }
            Ok(())
        } else {
            self.send_control(k, t)
        }
    }

    fn send_control(&mut self, k: usize, t: f64) -> Result<(), SimError> {
        let draw = self.draws[k];
        let send = t + draw.tau_c;
        let payload = self.payloads[k].clone().expect("payload computed before sending");
        let mut record = PacketRecord {
            kind: PacketKind::Control,
            stamp: k,
            payload,
            send_time: send,
            arrive_time: None,
            dropped: draw.lost_ca,
            forced: draw.forced && !draw.lost_sc,
            fate: PacketFate::Lost,
            buffer_delay: None,
            q: None,
        };
        if draw.lost_ca {
            self.losses += 1;
            self.packets.push(record);
            return Ok(());
        }
        let arrive = send + draw.tau_ca;
        let tau = arrive - self.grid(k);
        let (q, tau_b) = buffer_quantize(tau, self.td, self.db).map_err(|e| match e {
            SimError::DelayBound { tau, q, delta_bar, .. } => SimError::DelayBound {
                stamp: k as i64,
                tau,
                q,
                delta_bar,
            },
            other => other,
        })?;
        let event_time = match self.mode {
            SimMode::Buffered => {
                record.buffer_delay = Some(tau_b);
                arrive.min(self.grid(k + q))
            }
            SimMode::Unbuffered => arrive,
        };
        record.arrive_time = Some(arrive);
        record.q = Some(q);
        record.fate = PacketFate::Pending;
        self.control_index[k] = Some(self.packets.len());
        self.packets.push(record);
        self.push(event_time, What::ControlArrival, k);
        Ok(())
    }

    fn set_fate(&mut self, stamp: usize, fate: PacketFate) {
        if let Some(i) = self.control_index[stamp] {
            self.packets[i].fate = fate;
        }
    }

    fn on_control_arrival(&mut self, k: usize, t: f64) {
        match self.mode {
            SimMode::Buffered => self.buffer.push(k),
            SimMode::Unbuffered => {
                if (k as i64) <= self.current_stamp {
                    self.set_fate(k, PacketFate::Superseded);
                    return;
                }
                let open = self.rows.len();
                let offset = ((t - self.grid(open)) / self.td).clamp(0.0, 1.0);
                let offset = if offset < SNAP {
                    0.0
                } else if offset > 1.0 - SNAP {
                    1.0
                } else {
                    offset
                };
                let payload = self.payloads[k].clone().expect("sent packets carry a payload");
                let u = self.ctrl.select(&payload, 1, self.m);
                self.set_fate(k, PacketFate::Applied);
                if u != self.last_input {
                    self.input_changes.push(self.grid(open) + offset * self.td);
                }
                self.last_input = u.clone();
                self.current_stamp = k as i64;
                self.current_payload = payload;
                self.segments.push((offset, u, k as i64));
            }
        }
    }

    fn on_actuation(&mut self, k: usize) -> Result<(), SimError> {
        let mut newest: Option<usize> = None;
        let mut keep = Vec::with_capacity(self.buffer.len());
        let mut released = Vec::new();
        for &s in &self.buffer {
            let q = self.control_index[s].and_then(|i| self.packets[i].q).unwrap_or(0);
            if s + q <= k {
                released.push(s);
                newest = newest.max(Some(s));
            } else {
                keep.push(s);
            }
        }
        self.buffer = keep;
        for s in released {
            if Some(s) == newest && s as i64 > self.current_stamp {
                self.set_fate(s, PacketFate::Applied);
            } else {
                self.set_fate(s, PacketFate::Superseded);
            }
        }
        if let Some(s) = newest.filter(|&s| s as i64 > self.current_stamp) {
            self.current_stamp = s as i64;
            self.current_payload = self.payloads[s].clone().expect("sent packets carry a payload");
        }
        let q = (k as i64 - self.current_stamp) as usize;
        if q > self.db {
            return Err(SimError::StaleInput { k, q, delta_bar: self.db });
        }
        let u = self.ctrl.select(&self.current_payload, q, self.m);
        if u != self.last_input {
            self.input_changes.push(self.grid(k));
        }
        self.last_input = u.clone();
        let next = self.dp.step(&self.x, &u);
        self.rows.push(TraceRow {
            k,
            t: self.grid(k),
            x: std::mem::replace(&mut self.x, next),
            u_applied: u,
            q,
            applied_stamp: self.current_stamp,
            alpha_index: Some(q),
            v: None,
            packets_dropped_so_far: self.losses,
        });
        if k + 1 < self.steps {
            self.push(self.grid(k + 1), What::Sample, k + 1);
            self.push(self.grid(k + 1), What::Actuation, k + 1);
        } else {
            self.done = true;
        }
        Ok(())
    }

    /// Integrates period `k` over the recorded input switches.
    fn close_interval(&mut self, k: usize) -> Result<(), SimError> {
        let segments = std::mem::take(&mut self.segments);
        // the input in force at the start is the last switch at offset 0
        let start = segments.iter().rposition(|s| s.0 == 0.0).unwrap_or(0);
        let pieces = &segments[start..];
        let (_, u0, stamp0) = &pieces[0];
        let q = (k as i64 - stamp0) as usize;
        if q > self.db {
            return Err(SimError::StaleInput { k, q, delta_bar: self.db });
        }
        let next = if pieces.iter().skip(1).all(|p| p.0 == 1.0) {
            self.dp.step(&self.x, u0)
        } else {
            let plant = self.plant.expect("unbuffered runs carry the continuous plant");
            let mut acc = &self.dp.a * DVector::from_column_slice(&self.x);
            for (i, (a, u, _)) in pieces.iter().enumerate() {
                let b = pieces.get(i + 1).map_or(1.0, |p| p.0);
                if b > *a {
                    let bij = input_interval_matrix(plant, self.td, a * self.td, b * self.td)
                        .map_err(|e| SimError::Config(e.to_string()))?;
                    acc += bij * DVector::from_column_slice(u);
                }
            }
            acc.iter().copied().collect()
        };
        self.rows.push(TraceRow {
            k,
            t: self.grid(k),
            x: std::mem::replace(&mut self.x, next),
            u_applied: u0.clone(),
            q,
            applied_stamp: *stamp0,
            alpha_index: None,
            v: None,
            packets_dropped_so_far: self.losses,
        });
        Ok(())
    }
}

/// Runs the loop with the actuator buffer: control values take effect at
/// the grid instant `(k + q)T_d` after quantization.
pub fn simulate_buffered(
    dp: &DiscretePlant,
    lifted: &LiftedModel,
    ctrl: &ControllerSpec,
    net: &NetworkSpec,
    x0: &[f64],
    steps: usize,
) -> Result<SimTrace, SimError> {
    if lifted.n() != dp.n() || lifted.m() != dp.m() {
        return Err(SimError::Config("lifted model does not match the plant".into()));
    }
    let engine = Engine::new(SimMode::Buffered, dp, None, ctrl, net, lifted.delta_bar(), x0, steps)?;
    engine.run(net.seed)
}

/// Runs the loop without the buffer: each control value acts from its raw
/// arrival instant. `delta_bar` bounds the admissible latency.
pub fn simulate_unbuffered(
    plant: &ContinuousPlant,
    dp: &DiscretePlant,
    ctrl: &ControllerSpec,
    net: &NetworkSpec,
    x0: &[f64],
    steps: usize,
    delta_bar: usize,
) -> Result<SimTrace, SimError> {
    if plant.n() != dp.n() || plant.m() != dp.m() {
        return Err(SimError::Config("continuous and discrete plants differ in size".into()));
    }
    if matches!(ctrl, ControllerSpec::Switched { .. }) {
        return Err(SimError::Config(
            "a switched controller needs the buffer to pick its candidate".into(),
        ));
    }
    let engine = Engine::new(SimMode::Unbuffered, dp, Some(plant), ctrl, net, delta_bar, x0, steps)?;
    engine.run(net.seed)
}
