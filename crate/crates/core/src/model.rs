//! Plant descriptions: continuous-time LTI plant, its zero-order-hold
//! discretization and the lifted switched model of the buffered loop.
//!
//! The lifted state is `ξ_k = [x_k; u_{k-1}; u_{k-2}; …; u_{k-δ̄}]` with the
//! input history stacked time-major (each `u` block holds all `m` channels).
//! Mode `i` (1-based, `1 ≤ i ≤ δ̄`) is active when `u_{k-i}` drives the plant
//! during `[kT_d, (k+1)T_d)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expm::expm;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("sampling period must be positive, got {0}")]
    SamplingPeriod(f64),
    #[error("maximum delay d_bar must be at least 1 sampling period, got {0}")]
    DelayBound(i64),
    #[error("maximum consecutive dropouts p_bar must be nonnegative, got {0}")]
    DropoutBound(i64),
    #[error("interval [{t1}, {t2}] is not inside [0, {td}]")]
    Interval { t1: f64, t2: f64, td: f64 },
    #[error("mode weights are not on the simplex: {0}")]
    Simplex(String),
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<(), ModelError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(what))
    }
}

/// `ẋ = A_c x + B_c u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl ContinuousPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, ModelError> {
        if a.nrows() == 0 || !a.is_square() {
            return Err(ModelError::Dimension(format!(
                "A_c must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(ModelError::Dimension(format!(
                "B_c must be {}xm with m >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        check_finite(&a, "A_c")?;
        check_finite(&b, "B_c")?;
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `exp([[A_c, B_c], [0, 0]]·h)`; the top blocks are `e^{A_c h}` and
    /// `∫₀^h e^{A_c s} B_c ds`.
    fn augmented_exp(&self, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, m) = (self.n(), self.m());
        let mut aug = DMatrix::zeros(n + m, n + m);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&self.a * h));
        aug.view_mut((0, n), (n, m)).copy_from(&(&self.b * h));
        let e = expm(&aug);
        (
            e.view((0, 0), (n, n)).into_owned(),
            e.view((0, n), (n, m)).into_owned(),
        )
    }
}

/// `x_{k+1} = A_d x_k + B_d u` with sampling period `td`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePlant {
    #[serde(with = "crate::rows::matrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::rows::matrix")]
    pub b: DMatrix<f64>,
    pub td: f64,
}

impl DiscretePlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, td: f64) -> Result<Self, ModelError> {
        if !(td > 0.0) || !td.is_finite() {
            return Err(ModelError::SamplingPeriod(td));
        }
        if !a.is_square() || a.nrows() == 0 || b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(ModelError::Dimension(format!(
                "A_d {}x{}, B_d {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        check_finite(&a, "A_d")?;
        check_finite(&b, "B_d")?;
        Ok(Self { a, b, td })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// One step of the buffered recursion `A_d x + B_d u`.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut next = vec![0.0; n];
        for (r, out) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, xc) in x.iter().enumerate() {
                acc += self.a[(r, c)] * xc;
            }
            for (c, uc) in u.iter().enumerate() {
                acc += self.b[(r, c)] * uc;
            }
            *out = acc;
        }
        next
    }
}

/// Worst-case latency in sampling periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkBound {
    pub d_bar: usize,
    pub p_bar: usize,
    pub delta_bar: usize,
}

/// `δ̄ = d̄ + p̄`.
///
/// `d_bar` must be at least one: the buffer never applies a control value in
/// the same period it was sampled, so even an ideal network has `q_k ≥ 1`.
pub fn delta_bound(d_bar: i64, p_bar: i64) -> Result<NetworkBound, ModelError> {
    if d_bar < 1 {
        return Err(ModelError::DelayBound(d_bar));
    }
    if p_bar < 0 {
        return Err(ModelError::DropoutBound(p_bar));
    }
    Ok(NetworkBound {
        d_bar: d_bar as usize,
        p_bar: p_bar as usize,
        delta_bar: (d_bar + p_bar) as usize,
    })
}

/// Zero-order-hold discretization, `A_d = e^{A_c T_d}` and
/// `B_d = ∫₀^{T_d} e^{A_c(T_d−s)} B_c ds`, taken from one augmented
/// exponential so a singular `A_c` needs no special case.
pub fn discretize(plant: &ContinuousPlant, td: f64) -> Result<DiscretePlant, ModelError> {
    if !(td > 0.0) || !td.is_finite() {
        return Err(ModelError::SamplingPeriod(td));
    }
    let (a, b) = plant.augmented_exp(td);
    DiscretePlant::new(a, b, td)
}

/// `∫_{t1}^{t2} e^{A_c(T_d−s)} B_c ds`, the contribution of an input held
/// constant on `[t1, t2)` within one sampling period.
pub fn input_interval_matrix(
    plant: &ContinuousPlant,
    td: f64,
    t1: f64,
    t2: f64,
) -> Result<DMatrix<f64>, ModelError> {
    if !(td > 0.0) || !td.is_finite() {
        return Err(ModelError::SamplingPeriod(td));
    }
    if !(0.0 <= t1 && t1 <= t2 && t2 <= td) {
        return Err(ModelError::Interval { t1, t2, td });
    }
    if t1 == t2 {
        return Ok(DMatrix::zeros(plant.n(), plant.m()));
    }
    // substitute r = t2 - s: e^{A_c(T_d - t2)} ∫₀^{t2-t1} e^{A_c r} B_c dr
    let (_, gamma) = plant.augmented_exp(t2 - t1);
    if t2 == td {
        return Ok(gamma);
    }
    let (phi, _) = plant.augmented_exp(td - t2);
    Ok(phi * gamma)
}

/// The buffered loop written as a switched system
/// `ξ_{k+1} = Â_{i} ξ_k + B̂ u_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedModel {
    modes: Vec<DMatrix<f64>>,
    b_hat: DMatrix<f64>,
    n: usize,
    m: usize,
    delta_bar: usize,
}

impl LiftedModel {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn delta_bar(&self) -> usize {
        self.delta_bar
    }

    /// Lifted dimension `n + δ̄·m`.
    pub fn dim(&self) -> usize {
        self.n + self.delta_bar * self.m
    }

    /// Mode matrices; `modes()[i]` is mode `i + 1`.
    pub fn modes(&self) -> &[DMatrix<f64>] {
        &self.modes
    }

    /// Mode `i`, 1-based.
    pub fn mode(&self, i: usize) -> &DMatrix<f64> {
        &self.modes[i - 1]
    }

    pub fn b_hat(&self) -> &DMatrix<f64> {
        &self.b_hat
    }

    /// `Â(α) = Σ α_i Â_i` for `α` on the unit simplex.
    pub fn mode_matrix(&self, alpha: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        if alpha.len() != self.delta_bar {
            return Err(ModelError::Simplex(format!(
                "expected {} weights, got {}",
                self.delta_bar,
                alpha.len()
            )));
        }
        if alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(ModelError::Simplex(format!("weights outside [0, 1]: {alpha:?}")));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(ModelError::Simplex(format!("weights sum to {sum}")));
        }
        let dim = self.dim();
        let mut out = DMatrix::zeros(dim, dim);
        for (w, mode) in alpha.iter().zip(&self.modes) {
            out += mode * *w;
        }
        Ok(out)
    }

    /// Stacks `x_k` and the input history `[u_{k-1}, …, u_{k-δ̄}]` into `ξ_k`.
    pub fn lift_state(&self, x: &[f64], history: &[Vec<f64>]) -> Vec<f64> {
        let mut xi = Vec::with_capacity(self.dim());
        xi.extend_from_slice(x);
        for slot in 0..self.delta_bar {
            match history.get(slot) {
                Some(u) => xi.extend_from_slice(u),
                None => xi.extend(std::iter::repeat(0.0).take(self.m)),
            }
        }
        xi
    }
}

/// Builds the `δ̄` mode matrices and `B̂`.
pub fn build_lifted(dp: &DiscretePlant, nb: &NetworkBound) -> Result<LiftedModel, ModelError> {
    let (n, m, db) = (dp.n(), dp.m(), nb.delta_bar);
    if db == 0 || nb.delta_bar != nb.d_bar + nb.p_bar {
        return Err(ModelError::Dimension(format!("inconsistent network bound {nb:?}")));
    }
    let dim = n + db * m;
    let mut base = DMatrix::zeros(dim, dim);
    base.view_mut((0, 0), (n, n)).copy_from(&dp.a);
    // history shift: slot r (r >= 2) receives the previous content of slot r-1
    for slot in 1..db {
        for c in 0..m {
            base[(n + slot * m + c, n + (slot - 1) * m + c)] = 1.0;
        }
    }
    let modes = (0..db)
        .map(|i| {
            let mut mode = base.clone();
            mode.view_mut((0, n + i * m), (n, m)).copy_from(&dp.b);
            mode
        })
        .collect();
    let mut b_hat = DMatrix::zeros(dim, m);
    for c in 0..m {
        b_hat[(n + c, c)] = 1.0;
    }
    Ok(LiftedModel {
        modes,
        b_hat,
        n,
        m,
        delta_bar: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::rotary_servo;

    #[test]
    fn delta_bound_examples() {
        assert_eq!(delta_bound(4, 0).unwrap().delta_bar, 4);
        assert_eq!(delta_bound(1, 0).unwrap().delta_bar, 1);
        assert_eq!(delta_bound(3, 2).unwrap().delta_bar, 5);
        assert_eq!(delta_bound(0, 2), Err(ModelError::DelayBound(0)));
        assert_eq!(delta_bound(2, -1), Err(ModelError::DropoutBound(-1)));
    }

    #[test]
    fn plant_rejects_bad_inputs() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, f64::NAN]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert_eq!(ContinuousPlant::new(a, b.clone()), Err(ModelError::NonFinite("A_c")));
        let a = DMatrix::zeros(2, 3);
        assert!(matches!(ContinuousPlant::new(a, b), Err(ModelError::Dimension(_))));
    }

    #[test]
    fn discretize_rejects_nonpositive_period() {
        let plant = rotary_servo();
        assert_eq!(discretize(&plant, 0.0), Err(ModelError::SamplingPeriod(0.0)));
        assert!(discretize(&plant, -1.0).is_err());
        assert!(discretize(&plant, f64::NAN).is_err());
    }

    #[test]
    fn servo_discretization_matches_published_matrices() {
        let dp = discretize(&rotary_servo(), 0.02).unwrap();
        let want_a = [[1.0, 0.0106], [0.0, 0.2347]];
        let want_b = [0.0098, 0.7953];
        for r in 0..2 {
            for c in 0..2 {
                assert!((dp.a[(r, c)] - want_a[r][c]).abs() < 5e-4, "A_d[{r}{c}] = {}", dp.a[(r, c)]);
            }
            assert!((dp.b[(r, 0)] - want_b[r]).abs() < 5e-4, "b_d[{r}] = {}", dp.b[(r, 0)]);
        }
    }

    #[test]
    fn zero_dynamics_discretization() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 3.0, 0.0, 1.5]);
        let plant = ContinuousPlant::new(DMatrix::zeros(3, 3), b.clone()).unwrap();
        let dp = discretize(&plant, 0.3).unwrap();
        assert!((dp.a.clone() - DMatrix::identity(3, 3)).abs().max() < 1e-15);
        assert!((dp.b.clone() - b * 0.3).abs().max() < 1e-15);
    }

    #[test]
    fn interval_matrix_edge_cases() {
        let plant = rotary_servo();
        let dp = discretize(&plant, 0.02).unwrap();
        let full = input_interval_matrix(&plant, 0.02, 0.0, 0.02).unwrap();
        assert!((full - &dp.b).abs().max() < 1e-9);
        let empty = input_interval_matrix(&plant, 0.02, 0.013, 0.013).unwrap();
        assert_eq!(empty, DMatrix::zeros(2, 1));
        assert!(matches!(
            input_interval_matrix(&plant, 0.02, 0.01, 0.03),
            Err(ModelError::Interval { .. })
        ));
        assert!(input_interval_matrix(&plant, 0.02, 0.015, 0.01).is_err());
    }

    #[test]
    fn lifted_smallest_case() {
        let dp = DiscretePlant::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            0.1,
        )
        .unwrap();
        let lm = build_lifted(&dp, &delta_bound(1, 0).unwrap()).unwrap();
        assert_eq!(lm.modes().len(), 1);
        assert_eq!(lm.mode(1), &DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.0]));
        assert_eq!(lm.b_hat(), &DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
    }

    #[test]
    fn servo_lifted_top_rows() {
        let dp = discretize(&rotary_servo(), 0.02).unwrap();
        let lm = build_lifted(&dp, &delta_bound(4, 0).unwrap()).unwrap();
        assert_eq!(lm.dim(), 6);
        for i in 1..=4 {
            let mode = lm.mode(i);
            assert_eq!(mode.view((0, 0), (2, 2)).into_owned(), dp.a);
            for slot in 0..4 {
                let block = mode.view((0, 2 + slot), (2, 1)).into_owned();
                if slot + 1 == i {
                    assert_eq!(block, dp.b);
                } else {
                    assert_eq!(block, DMatrix::zeros(2, 1));
                }
            }
        }
    }

    #[test]
    fn mode_matrix_vertex_and_centroid() {
        let dp = discretize(&rotary_servo(), 0.02).unwrap();
        let lm = build_lifted(&dp, &delta_bound(4, 0).unwrap()).unwrap();
        assert_eq!(&lm.mode_matrix(&[0.0, 1.0, 0.0, 0.0]).unwrap(), lm.mode(2));
        let centroid = lm.mode_matrix(&[0.25; 4]).unwrap();
        let mut avg = DMatrix::zeros(6, 6);
        for m in lm.modes() {
            avg += m;
        }
        assert!((centroid - avg / 4.0).abs().max() < 1e-15);
        assert!(lm.mode_matrix(&[0.5, 0.5, 0.5, -0.5]).is_err());
        assert!(lm.mode_matrix(&[0.5, 0.4, 0.0, 0.0]).is_err());
        assert!(lm.mode_matrix(&[1.0]).is_err());
    }

    #[test]
    fn lift_state_layout() {
        let dp = discretize(&rotary_servo(), 0.02).unwrap();
        let lm = build_lifted(&dp, &delta_bound(3, 0).unwrap()).unwrap();
        let xi = lm.lift_state(&[1.0, 2.0], &[vec![3.0], vec![4.0]]);
        assert_eq!(xi, vec![1.0, 2.0, 3.0, 4.0, 0.0]);
    }
}
