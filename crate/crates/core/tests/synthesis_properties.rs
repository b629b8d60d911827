use std::sync::OnceLock;

use nalgebra::DMatrix;
use ncs_core::presets::rotary_servo;
use ncs_core::sdp::FeasibilityStatus;
use ncs_core::synthesis::{
    assemble_lmis, maximize_gamma, solve_feasibility, spectral_radius, switching_decay_check, verify_solution,
    GammaFree, GammaSpec, Gains, SynthesisOutcome, SynthesisResult, Theorem,
};
use ncs_core::{build_lifted, delta_bound, discretize, DiscretePlant, LiftedModel};

fn servo() -> &'static LiftedModel {
    static LM: OnceLock<LiftedModel> = OnceLock::new();
    LM.get_or_init(|| {
        let dp = discretize(&rotary_servo(), 0.02).unwrap();
        build_lifted(&dp, &delta_bound(4, 0).unwrap()).unwrap()
    })
}

fn t1_at(gamma: f64) -> SynthesisOutcome {
    let sys = assemble_lmis(servo(), Theorem::Static, &GammaSpec::Single(gamma)).unwrap();
    solve_feasibility(&sys).unwrap()
}

fn t1_result() -> &'static SynthesisResult {
    static R: OnceLock<SynthesisResult> = OnceLock::new();
    R.get_or_init(|| t1_at(0.085).feasible().expect("feasible near the published decay rate"))
}

#[test]
fn published_decay_rate_is_feasible_with_similar_gain() {
    let r = t1_at(0.089).feasible().expect("γ = 0.089 feasible");
    let Gains::Static { kx } = &r.gains else { panic!("static gain expected") };
    for (got, want) in kx.iter().zip([2.73, 0.034]) {
        assert!((got - want).abs() <= 0.25 * want, "K_x = {kx}");
    }
    let report = verify_solution(servo(), &r);
    assert!(report.passed, "{report:?}");
}

#[test]
fn large_decay_rates_are_infeasible() {
    assert_eq!(t1_at(0.30).status(), FeasibilityStatus::Infeasible);
    assert_eq!(t1_at(0.35).status(), FeasibilityStatus::Infeasible);
}

#[test]
fn feasibility_is_monotone_on_a_grid() {
    let grid = [0.0, 0.03, 0.06, 0.08, 0.095, 0.12, 0.2];
    let feasible: Vec<bool> = grid
        .iter()
        .map(|g| t1_at(*g).status() == FeasibilityStatus::Feasible)
        .collect();
    assert!(feasible[0]);
    for w in feasible.windows(2) {
        assert!(w[0] || !w[1], "feasible above an infeasible γ: {feasible:?}");
    }
}

#[test]
fn scalar_stable_plant_is_trivially_feasible() {
    let dp = DiscretePlant::new(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0), 0.1).unwrap();
    let lm = build_lifted(&dp, &delta_bound(1, 0).unwrap()).unwrap();
    let sys = assemble_lmis(&lm, Theorem::Static, &GammaSpec::Single(0.0)).unwrap();
    let r = solve_feasibility(&sys).unwrap().feasible().expect("feasible");
    let closed = lm.mode(1) - lm.b_hat() * r.gains.k_hat(1, 1);
    assert!(spectral_radius(&closed) < 1.0);
}

#[test]
fn certificate_holds_along_random_switching() {
    let r = t1_result();
    let report = verify_solution(servo(), r);
    assert!(report.passed);
    assert!(report.q_min_eigenvalues.iter().all(|v| *v > 0.0));
    let decay = switching_decay_check(servo(), r, 100, 1000);
    assert_eq!(decay.violations, 0, "{decay:?}");
    assert!(decay.worst_ratio <= 1.0 - 0.085 + 1e-9);
}

#[test]
fn scaling_lyapunov_matrices_keeps_the_verdict() {
    let r = t1_result();
    for c in [1e-3, 7.0, 1e4] {
        let mut scaled = r.clone();
        for p in &mut scaled.lyapunov {
            *p *= c;
        }
        assert!(verify_solution(servo(), &scaled).passed);
    }
}

#[test]
fn destabilizing_gain_fails_verification() {
    let mut bad = t1_result().clone();
    bad.gains = Gains::Static {
        kx: DMatrix::from_row_slice(1, 2, &[100.0, 100.0]),
    };
    let report = verify_solution(servo(), &bad);
    assert!(report.spectral_radii.iter().any(|r| *r >= 1.0));
    assert!(!report.passed);
}

#[test]
fn static_gain_leaves_history_columns_zero() {
    let k = t1_result().gains.k_hat(3, 4);
    assert!(k.columns(2, 4).iter().all(|v| *v == 0.0));
}

#[test]
fn bisection_brackets_the_static_maximum() {
    let search = maximize_gamma(servo(), Theorem::Static, &GammaFree::Single, 1e-3).unwrap();
    assert!((0.08..=0.10).contains(&search.value), "γ* = {}", search.value);
    assert!(!search.saw_unknown);
    assert!(verify_solution(servo(), &search.result).passed);
}
