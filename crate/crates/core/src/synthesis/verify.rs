//! Post-hoc checks of a synthesised controller that use only the recovered
//! `P_i`, the gains and the plant, never the solver's internal variables.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SynthesisResult;
use crate::model::LiftedModel;
use crate::sdp::min_eigenvalue;

/// Vertex pairs sampled for the Schur-complement check.
const SCHUR_SAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// `λ_min(Q_ij)` for every mode pair, row-major in `(i, j)`.
    pub q_min_eigenvalues: Vec<f64>,
    pub min_q_eigenvalue: f64,
    /// Spectral radius of `Â_i − B̂ K̂_i` per mode.
    pub spectral_radii: Vec<f64>,
    /// Smallest `λ_min((1 − γ_i) P_i − M_iᵀ P_j M_i)` over sampled pairs,
    /// relative to `λ_max(P_i)`.
    pub schur_min_margin: f64,
    pub schur_samples: usize,
    pub passed: bool,
}

fn closed_loop(lifted: &LiftedModel, result: &SynthesisResult, mode: usize) -> DMatrix<f64> {
    lifted.mode(mode) - lifted.b_hat() * result.gains.k_hat(mode, lifted.delta_bar())
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    -min_eigenvalue(&(-m))
}

/// `Q_ij = [[P_i, M_iᵀ P_j], [P_j M_i, (1 − γ_i) P_j]]`.
pub fn q_matrix(lifted: &LiftedModel, result: &SynthesisResult, i: usize, j: usize) -> DMatrix<f64> {
    let dim = lifted.dim();
    let m = closed_loop(lifted, result, i);
    let (pi, pj) = (&result.lyapunov[i - 1], &result.lyapunov[j - 1]);
    let pm = pj * &m;
    let mut q = DMatrix::zeros(2 * dim, 2 * dim);
    q.view_mut((0, 0), (dim, dim)).copy_from(pi);
    q.view_mut((dim, 0), (dim, dim)).copy_from(&pm);
    q.view_mut((0, dim), (dim, dim)).copy_from(&pm.transpose());
    q.view_mut((dim, dim), (dim, dim))
        .copy_from(&(pj * (1.0 - result.gamma.for_mode(i))));
    q
}

pub fn verify_solution(lifted: &LiftedModel, result: &SynthesisResult) -> VerificationReport {
    let db = lifted.delta_bar();
    let mut q_min = Vec::with_capacity(db * db);
    for i in 1..=db {
        for j in 1..=db {
            q_min.push(min_eigenvalue(&q_matrix(lifted, result, i, j)));
        }
    }
    let min_q = q_min.iter().copied().fold(f64::INFINITY, f64::min);
    let radii: Vec<f64> = (1..=db)
        .map(|i| spectral_radius(&closed_loop(lifted, result, i)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut schur = f64::INFINITY;
    for _ in 0..SCHUR_SAMPLES {
        let i = rng.random_range(1..=db);
        let j = rng.random_range(1..=db);
        let m = closed_loop(lifted, result, i);
        let (pi, pj) = (&result.lyapunov[i - 1], &result.lyapunov[j - 1]);
        let lhs = pi * (1.0 - result.gamma.for_mode(i)) - m.transpose() * pj * &m;
        schur = schur.min(min_eigenvalue(&lhs) / max_eigenvalue(pi));
    }
    let passed = min_q > 0.0 && radii.iter().all(|r| *r < 1.0) && schur > 0.0;
    VerificationReport {
        q_min_eigenvalues: q_min,
        min_q_eigenvalue: min_q,
        spectral_radii: radii,
        schur_min_margin: schur,
        schur_samples: SCHUR_SAMPLES,
        passed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub seeds: u64,
    pub steps: usize,
    /// Steps where `V_{k+1} > (1 − γ_min) V_k + 1e-12`.
    pub violations: usize,
    /// Largest observed `V_{k+1} / V_k`.
    pub worst_ratio: f64,
}

/// Runs the closed lifted loop under uniformly random mode switching from
/// random unit-`V` initial states and checks the decay bound at every step.
pub fn switching_decay_check(
    lifted: &LiftedModel,
    result: &SynthesisResult,
    seeds: u64,
    steps: usize,
) -> DecayReport {
    let db = lifted.delta_bar();
    let dim = lifted.dim();
    let closed: Vec<DMatrix<f64>> = (1..=db).map(|i| closed_loop(lifted, result, i)).collect();
    let rate = 1.0 - result.gamma.min();
    let v = |xi: &nalgebra::DVector<f64>, mode: usize| (xi.transpose() * &result.lyapunov[mode - 1] * xi)[(0, 0)];
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mode = rng.random_range(1..=db);
        let mut xi = nalgebra::DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let v0 = v(&xi, mode);
        xi /= v0.sqrt();
        let mut vk = 1.0;
        for _ in 0..steps {
            let next_xi = &closed[mode - 1] * &xi;
            let next_mode = rng.random_range(1..=db);
            let vn = v(&next_xi, next_mode);
            if vn > rate * vk + 1e-12 {
                violations += 1;
            }
            if vk > 1e-200 {
                worst = worst.max(vn / vk);
            }
            xi = next_xi;
            mode = next_mode;
            vk = vn;
        }
    }
    DecayReport {
        seeds,
        steps,
        violations,
        worst_ratio: worst,
    }
}
