//! Log-barrier path following for
//!
//! ```text
//! maximise t  s.t.  s·C_b + Σ_a x_a F_{b,a} − t·I ⪰ 0   (every block b)
//!                   s − t ≥ 0,  ‖(x, s)‖₂ ≤ 1
//! ```
//!
//! The homogenising scalar `s` is only introduced when some constant is
//! nonzero; the original system is strictly feasible iff the optimum `t*` is
//! positive, in which case `x / s` (or `x` itself when homogeneous) is a
//! strictly feasible point. At a centred iterate the optimum is at most
//! `t + ν/σ`, with `ν` the barrier parameter, which gives the infeasibility
//! certificate.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{FeasibilityBackend, FeasibilityStatus, PreparedProblem, RawOutcome, SolveOptions};

/// Symmetric sparse coefficient, every stored entry listed explicitly in
/// both triangles.
#[derive(Debug, Clone)]
struct Term {
    var: usize,
    entries: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone)]
struct Block {
    size: usize,
    terms: Vec<Term>,
}

impl Block {
    fn evaluate(&self, z: &[f64]) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.size, self.size);
        for term in &self.terms {
            let v = z[term.var];
            if v != 0.0 {
                for &(r, c, w) in &term.entries {
                    g[(r, c)] += w * v;
                }
            }
        }
        g
    }
}

fn sparse(m: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let v = m[(r, c)];
            if v != 0.0 {
                out.push((r, c, v));
            }
        }
    }
    out
}

/// Problem in barrier form: variables `[x.., s?, t]`.
struct BarrierProblem {
    blocks: Vec<Block>,
    num_z: usize,
    /// Indices covered by the norm ball.
    ball: Vec<usize>,
    s_index: Option<usize>,
    t_index: usize,
    nu: f64,
}

impl BarrierProblem {
    fn new(problem: &PreparedProblem) -> Self {
        let p = problem.num_vars;
        let s_index = (!problem.homogeneous).then_some(p);
        let t_index = p + usize::from(s_index.is_some());
        let mut blocks = Vec::with_capacity(problem.constraints.len() + 1);
        for c in &problem.constraints {
            let n = c.size();
            let mut terms: Vec<Term> = c
                .coefficients()
                .iter()
                .map(|(var, m)| Term {
                    var: var.0,
                    entries: sparse(m),
                })
                .collect();
            if let Some(s) = s_index {
                let entries = sparse(c.constant());
                if !entries.is_empty() {
                    terms.push(Term { var: s, entries });
                }
            }
            terms.push(Term {
                var: t_index,
                entries: (0..n).map(|i| (i, i, -1.0)).collect(),
            });
            blocks.push(Block { size: n, terms });
        }
        if let Some(s) = s_index {
            blocks.push(Block {
                size: 1,
                terms: vec![
                    Term {
                        var: s,
                        entries: vec![(0, 0, 1.0)],
                    },
                    Term {
                        var: t_index,
                        entries: vec![(0, 0, -1.0)],
                    },
                ],
            });
        }
        let ball: Vec<usize> = (0..t_index).collect();
        let nu = blocks.iter().map(|b| b.size as f64).sum::<f64>()
            + if ball.is_empty() { 0.0 } else { 1.0 };
        Self {
            blocks,
            num_z: t_index + 1,
            ball,
            s_index,
            t_index,
            nu,
        }
    }

    fn ball_slack(&self, z: &[f64]) -> f64 {
        1.0 - self.ball.iter().map(|&i| z[i] * z[i]).sum::<f64>()
    }

    /// Barrier value, or `None` outside the interior.
    fn barrier(&self, z: &[f64]) -> Option<f64> {
        let mut f = 0.0;
        for b in &self.blocks {
            let chol = Cholesky::new(b.evaluate(z))?;
            let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
            if !logdet.is_finite() {
                return None;
            }
            f -= logdet;
        }
        if !self.ball.is_empty() {
            let slack = self.ball_slack(z);
            if !(slack > 0.0) {
                return None;
            }
            f -= slack.ln();
        }
        Some(f)
    }

    /// Gradient and Hessian of the barrier at an interior point.
    fn derivatives(&self, z: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let nz = self.num_z;
        let mut grad = DVector::zeros(nz);
        let mut hess = DMatrix::zeros(nz, nz);
        for b in &self.blocks {
            let w = Cholesky::new(b.evaluate(z))?.inverse();
            let n = b.size;
            // T_a = W F_a W for every active term
            let mut products: Vec<DMatrix<f64>> = Vec::with_capacity(b.terms.len());
            for term in &b.terms {
                let mut g = 0.0;
                let mut t = DMatrix::zeros(n, n);
                for &(p, q, v) in &term.entries {
                    g += v * w[(q, p)];
                    // (W e_p e_qᵀ W) = W[:, p] W[q, :]
                    for c in 0..n {
                        let wqc = w[(q, c)] * v;
                        if wqc != 0.0 {
                            for r in 0..n {
                                t[(r, c)] += w[(r, p)] * wqc;
                            }
                        }
                    }
                }
                grad[term.var] -= g;
                products.push(t);
            }
            for (ta, term_a) in products.iter().zip(&b.terms) {
                for term_c in &b.terms {
                    let mut h = 0.0;
                    for &(r, s, v) in &term_c.entries {
                        h += v * ta[(s, r)];
                    }
                    hess[(term_a.var, term_c.var)] += h;
                }
            }
        }
        if !self.ball.is_empty() {
            let slack = self.ball_slack(z);
            for &i in &self.ball {
                grad[i] += 2.0 * z[i] / slack;
                hess[(i, i)] += 2.0 / slack;
                for &j in &self.ball {
                    hess[(i, j)] += 4.0 * z[i] * z[j] / (slack * slack);
                }
            }
        }
        Some((grad, hess))
    }

    fn start(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.num_z];
        if let Some(s) = self.s_index {
            z[s] = 0.5;
        }
        let lowest = self
            .blocks
            .iter()
            .map(|b| super::min_eigenvalue(&b.evaluate(&z)))
            .fold(f64::INFINITY, f64::min);
        z[self.t_index] = lowest.min(0.0) - 1.0;
        z
    }

    /// The candidate point in the original variables.
    fn point(&self, z: &[f64], num_vars: usize) -> Vec<f64> {
        let x = &z[..num_vars];
        match self.s_index {
            Some(s) if z[s] > 0.0 => x.iter().map(|v| v / z[s]).collect(),
            _ => x.to_vec(),
        }
    }
}

/// Interior-point backend.
#[derive(Debug, Clone, Copy)]
pub struct BarrierBackend {
    /// Barrier weight multiplier between centring stages.
    pub growth: f64,
    /// Absolute duality-gap target.
    pub gap_tolerance: f64,
    /// Relative gap target once a positive margin is established.
    pub relative_gap: f64,
    /// Default cap on Newton steps.
    pub default_budget: usize,
}

impl Default for BarrierBackend {
    fn default() -> Self {
        Self {
            growth: 8.0,
            gap_tolerance: 1e-11,
            relative_gap: 1e-4,
            default_budget: 2_000,
        }
    }
}

impl FeasibilityBackend for BarrierBackend {
    fn name(&self) -> &'static str {
        "log-barrier interior point"
    }

    fn solve_prepared(&self, problem: &PreparedProblem, opts: &SolveOptions) -> RawOutcome {
        let bp = BarrierProblem::new(problem);
        let budget = opts.budget.unwrap_or(self.default_budget);
        let eps = opts.epsilon;
        let ti = bp.t_index;
        let mut z = bp.start();
        let mut sigma = 1.0;
        let mut iterations = 0;
        let unknown = |z: &[f64], iterations| RawOutcome {
            status: FeasibilityStatus::Unknown,
            point: None,
            margin: z[ti],
            iterations,
        };

        loop {
            // centring by damped Newton on σ·(−t) + barrier
            let mut centred = false;
            for _ in 0..200 {
                if iterations >= budget {
                    return unknown(&z, iterations);
                }
                iterations += 1;
                let Some((mut grad, hess)) = bp.derivatives(&z) else {
                    return unknown(&z, iterations);
                };
                grad[ti] -= sigma;
                let Some(step) = newton_step(hess, &grad) else {
                    return unknown(&z, iterations);
                };
                let decrement = -grad.dot(&step);
                if decrement < 1e-10 {
                    centred = true;
                    break;
                }
                let objective = |z: &[f64]| bp.barrier(z).map(|f| f - sigma * z[ti]);
                let Some(f0) = objective(&z) else {
                    return unknown(&z, iterations);
                };
                let mut alpha = 1.0;
                let mut accepted = false;
                for _ in 0..60 {
                    let trial: Vec<f64> = z
                        .iter()
                        .zip(step.iter())
                        .map(|(a, d)| a + alpha * d)
                        .collect();
                    if let Some(f) = objective(&trial) {
                        if f <= f0 - 0.25 * alpha * decrement {
                            z = trial;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if !accepted {
                    // numerically stuck: treat the current point as centred
                    centred = true;
                    break;
                }
            }
            let gap = bp.nu / sigma;
            let t = z[ti];
            if t + gap < eps {
                return RawOutcome {
                    status: FeasibilityStatus::Infeasible,
                    point: None,
                    margin: t,
                    iterations,
                };
            }
            let converged = gap <= self.gap_tolerance || (t >= eps && gap <= self.relative_gap * t);
            if converged || !centred {
                let status = if t >= eps {
                    FeasibilityStatus::Feasible
                } else if converged {
                    FeasibilityStatus::Infeasible
                } else {
                    FeasibilityStatus::Unknown
                };
                return RawOutcome {
                    status,
                    point: (status == FeasibilityStatus::Feasible)
                        .then(|| bp.point(&z, problem.num_vars)),
                    margin: t,
                    iterations,
                };
            }
            sigma *= self.growth;
        }
    }
}

fn newton_step(hess: DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = hess.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let mut reg = 0.0;
    for _ in 0..8 {
        let mut h = hess.clone();
        if reg > 0.0 {
            for i in 0..h.nrows() {
                h[(i, i)] += reg;
            }
        }
        if let Some(chol) = Cholesky::new(h) {
            let step = chol.solve(&(-grad));
            if step.iter().all(|v| v.is_finite()) {
                return Some(step);
            }
        }
        reg = if reg == 0.0 { scale * 1e-14 } else { reg * 100.0 };
    }
    None
}
