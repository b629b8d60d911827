use approx::assert_relative_eq;
use nalgebra::DMatrix;
use ncs_core::presets::rotary_servo;
use ncs_core::synthesis::{assemble_lmis_with, variable_count, AssemblyOptions, ExtendedX, GammaSpec, Theorem};
use ncs_core::{build_lifted, delta_bound, discretize, input_interval_matrix, ContinuousPlant, DiscretePlant};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn plant(n: usize, m: usize) -> impl Strategy<Value = ContinuousPlant> {
    (matrix(n, n, 3.0), matrix(n, m, 2.0)).prop_map(|(a, b)| ContinuousPlant::new(a, b).unwrap())
}

/// Lifted mode matrix written out independently of `build_lifted`.
fn direct_lift(dp: &DiscretePlant, db: usize, alpha: &[f64]) -> DMatrix<f64> {
    let (n, m) = (dp.n(), dp.m());
    let dim = n + db * m;
    let mut out = DMatrix::zeros(dim, dim);
    out.view_mut((0, 0), (n, n)).copy_from(&dp.a);
    for (i, w) in alpha.iter().enumerate() {
        out.view_mut((0, n + i * m), (n, m)).copy_from(&(&dp.b * *w));
    }
    for r in 1..db {
        for c in 0..m {
            out[(n + r * m + c, n + (r - 1) * m + c)] = 1.0;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn convex_combination_reconstructs_mode_matrix(
        p in plant(2, 1),
        raw in prop::collection::vec(0.01f64..1.0, 4),
    ) {
        let dp = discretize(&p, 0.02).unwrap();
        let lm = build_lifted(&dp, &delta_bound(4, 0).unwrap()).unwrap();
        let sum: f64 = raw.iter().sum();
        let mut alpha: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        let head: f64 = alpha[..3].iter().sum();
        alpha[3] = 1.0 - head;
        let got = lm.mode_matrix(&alpha).unwrap();
        let want = direct_lift(&dp, 4, &alpha);
        prop_assert!((got - want).abs().max() < 1e-12);
    }

    #[test]
    fn interval_matrices_add_up(p in plant(3, 2), t in 0.0f64..0.02) {
        let dp = discretize(&p, 0.02).unwrap();
        let split = input_interval_matrix(&p, 0.02, 0.0, t).unwrap()
            + input_interval_matrix(&p, 0.02, t, 0.02).unwrap();
        prop_assert!((split - &dp.b).abs().max() < 1e-9 * (1.0 + dp.b.abs().max()));
    }

    #[test]
    fn doubling_the_period_squares_the_transition(p in plant(3, 1), td in 0.001f64..0.1) {
        let one = discretize(&p, td).unwrap();
        let two = discretize(&p, 2.0 * td).unwrap();
        let sq = &one.a * &one.a;
        prop_assert!((two.a - &sq).abs().max() < 1e-8 * (1.0 + sq.abs().max()));
    }

    #[test]
    fn b_hat_writes_only_the_newest_history_slot(
        p in plant(2, 2),
        db in 1usize..5,
        u in prop::collection::vec(-5.0f64..5.0, 2),
    ) {
        let dp = discretize(&p, 0.05).unwrap();
        let lm = build_lifted(&dp, &delta_bound(db as i64, 0).unwrap()).unwrap();
        let out = lm.b_hat() * nalgebra::DVector::from_column_slice(&u);
        for (r, v) in out.iter().enumerate() {
            let expect = if (2..4).contains(&r) { u[r - 2] } else { 0.0 };
            prop_assert_eq!(*v, expect);
        }
    }

    #[test]
    fn history_shift_copies_previous_slot(p in plant(2, 2), db in 2usize..5) {
        let dp = discretize(&p, 0.05).unwrap();
        let lm = build_lifted(&dp, &delta_bound(db as i64, 0).unwrap()).unwrap();
        let (n, m) = (2, 2);
        for mode in lm.modes() {
            for r in n + m..lm.dim() {
                for c in 0..lm.dim() {
                    let expect = if c + m == r { 1.0 } else { 0.0 };
                    prop_assert_eq!(mode[(r, c)], expect);
                }
            }
            // the newest slot is written by B̂, not by Â
            prop_assert!(mode.rows(n, m).iter().all(|v| *v == 0.0));
        }
    }
}

#[test]
fn small_norm_discretization_matches_series() {
    let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.5, 0.0, -0.2, -2.0, 0.3, 0.1, 0.0, -0.5]);
    let b = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.5]);
    let td = 0.1;
    let dp = discretize(&ContinuousPlant::new(a.clone(), b.clone()).unwrap(), td).unwrap();
    let mut ad = DMatrix::identity(3, 3);
    let mut bd = DMatrix::zeros(3, 1);
    let mut power = DMatrix::identity(3, 3);
    let mut fact = 1.0;
    for k in 0..=30 {
        if k > 0 {
            power = &power * &a;
            fact *= k as f64;
            ad += &power * (td.powi(k) / fact);
        }
        bd += &power * &b * (td.powi(k + 1) / (fact * (k + 1) as f64));
    }
    assert!((dp.a - ad).abs().max() < 1e-9);
    assert!((dp.b - bd).abs().max() < 1e-9);
}

/// Counts by walking the variable list of the statement, not the formula.
fn counted_by_hand(theorem: Theorem, x: ExtendedX, n: usize, m: usize, db: usize) -> usize {
    let dim = n + db * m;
    let mut total = db * dim * (dim + 1) / 2;
    let x_blocks = n * n + db * m * n + (db * m) * (db * m);
    total += match (theorem, x) {
        (Theorem::Static, _) => n * n + db * (db * m * n + (db * m) * (db * m)) + m * n,
        (Theorem::Switched, _) => db * x_blocks + db * m * n,
        (Theorem::Extended, ExtendedX::BlockTriangular) => x_blocks + m * n + m * db * m,
        (Theorem::Extended, ExtendedX::Full) => dim * dim + m * n + m * db * m,
    };
    total
}

#[test]
fn variable_counts_agree_for_random_dimensions() {
    let mut rng_state = 12345u64;
    let mut next = |lo: usize, hi: usize| {
        rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        lo + (rng_state >> 33) as usize % (hi - lo + 1)
    };
    for _ in 0..3 {
        let (n, m, db) = (next(1, 3), next(1, 2), next(1, 4));
        let a = DMatrix::from_fn(n, n, |r, c| if r == c { -1.0 } else { 0.1 });
        let b = DMatrix::from_element(n, m, 1.0);
        let dp = discretize(&ContinuousPlant::new(a, b).unwrap(), 0.1).unwrap();
        let lm = build_lifted(&dp, &delta_bound(db as i64, 0).unwrap()).unwrap();
        for th in [Theorem::Static, Theorem::Switched, Theorem::Extended] {
            for x in [ExtendedX::Full, ExtendedX::BlockTriangular] {
                let sys = assemble_lmis_with(&lm, th, &GammaSpec::Single(0.0), &AssemblyOptions { extended_x: x })
                    .unwrap();
                let (vars, lmis) = sys.counts();
                assert_eq!(lmis, db * db);
                assert_eq!(vars, variable_count(th, x, n, m, db), "{th:?} {x:?} ({n}, {m}, {db})");
                assert_eq!(vars, counted_by_hand(th, x, n, m, db), "{th:?} {x:?} ({n}, {m}, {db})");
            }
        }
    }
}

#[test]
fn servo_interval_matrix_full_period_is_b_d() {
    let p = rotary_servo();
    let dp = discretize(&p, 0.02).unwrap();
    let full = input_interval_matrix(&p, 0.02, 0.0, 0.02).unwrap();
    assert_relative_eq!(full, dp.b, epsilon = 1e-12);
}
