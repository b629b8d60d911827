//! Dykstra alternating projections between the affine image
//! `{(C_b + F_b(x))_b}` and the shifted cone `{(S_b)_b : S_b ⪰ κI}`.
//!
//! Homogeneous systems use `κ = 1` (any strictly feasible point can be
//! scaled into that set); otherwise `κ = 2ε`. Blocks are vectorised over
//! their upper triangle with `√2` weights on off-diagonal entries so the
//! Euclidean norm used for the least-squares step is the Frobenius norm.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::{FeasibilityBackend, FeasibilityStatus, PreparedProblem, RawOutcome, SolveOptions};

#[derive(Debug, Clone, Copy)]
pub struct ProjectionBackend {
    pub default_budget: usize,
    /// Window over which a stalled set distance is taken as a verdict.
    pub stall_window: usize,
}

impl Default for ProjectionBackend {
    fn default() -> Self {
        Self {
            default_budget: 50_000,
            stall_window: 500,
        }
    }
}

struct Layout {
    offsets: Vec<usize>,
    sizes: Vec<usize>,
    len: usize,
}

impl Layout {
    fn new(problem: &PreparedProblem) -> Self {
        let mut offsets = Vec::new();
        let mut sizes = Vec::new();
        let mut len = 0;
        for c in &problem.constraints {
            offsets.push(len);
            sizes.push(c.size());
            len += c.size() * (c.size() + 1) / 2;
        }
        Self { offsets, sizes, len }
    }

    fn pack(&self, b: usize, m: &DMatrix<f64>, out: &mut DVector<f64>) {
        let mut k = self.offsets[b];
        let n = self.sizes[b];
        for r in 0..n {
            for c in r..n {
                out[k] = if r == c { m[(r, c)] } else { m[(r, c)] * std::f64::consts::SQRT_2 };
                k += 1;
            }
        }
    }

    fn unpack(&self, b: usize, v: &DVector<f64>) -> DMatrix<f64> {
        let n = self.sizes[b];
        let mut m = DMatrix::zeros(n, n);
        let mut k = self.offsets[b];
        for r in 0..n {
            for c in r..n {
                let val = if r == c { v[k] } else { v[k] / std::f64::consts::SQRT_2 };
                m[(r, c)] = val;
                m[(c, r)] = val;
                k += 1;
            }
        }
        m
    }
}

impl FeasibilityBackend for ProjectionBackend {
    fn name(&self) -> &'static str {
        "Dykstra alternating projections"
    }

    fn solve_prepared(&self, problem: &PreparedProblem, opts: &SolveOptions) -> RawOutcome {
        let budget = opts.budget.unwrap_or(self.default_budget);
        let layout = Layout::new(problem);
        let p = problem.num_vars;
        let kappa = if problem.homogeneous { 1.0 } else { 2.0 * opts.epsilon };

        // affine map: vec(S) = c + A x
        let mut a = DMatrix::zeros(layout.len, p);
        let mut c = DVector::zeros(layout.len);
        let mut col = DVector::zeros(layout.len);
        for (b, con) in problem.constraints.iter().enumerate() {
            layout.pack(b, con.constant(), &mut c);
            for (var, coef) in con.coefficients() {
                col.fill(0.0);
                layout.pack(b, coef, &mut col);
                let range = layout.offsets[b]..layout.offsets[b] + layout.sizes[b] * (layout.sizes[b] + 1) / 2;
                for k in range {
                    a[(k, var.0)] += col[k];
                }
            }
        }
        let mut normal = a.transpose() * &a;
        let ridge = 1e-12 * normal.diagonal().iter().fold(1.0f64, |m, v| m.max(*v));
        for i in 0..p {
            normal[(i, i)] += ridge;
        }
        let Some(normal) = Cholesky::new(normal) else {
            return RawOutcome {
                status: FeasibilityStatus::Unknown,
                point: None,
                margin: f64::NEG_INFINITY,
                iterations: 0,
            };
        };
        let at = a.transpose();

        let project_affine = |v: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
            let x = normal.solve(&(&at * (v - &c)));
            let image = &c + &a * &x;
            (x, image)
        };
        let project_cone = |v: &DVector<f64>| -> DVector<f64> {
            let mut out = DVector::zeros(layout.len);
            for b in 0..layout.sizes.len() {
                let m = layout.unpack(b, v);
                let n = m.nrows();
                let eig = SymmetricEigen::new(m - DMatrix::identity(n, n) * kappa);
                let clamped = eig.eigenvalues.map(|l| l.max(0.0));
                let proj = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()
                    + DMatrix::identity(n, n) * kappa;
                layout.pack(b, &proj, &mut out);
            }
            out
        };

        let mut cone_point = DVector::zeros(layout.len);
        for (b, &n) in layout.sizes.iter().enumerate() {
            layout.pack(b, &(DMatrix::identity(n, n) * kappa), &mut cone_point);
        }
        let mut p_corr = DVector::zeros(layout.len);
        let mut q_corr = DVector::zeros(layout.len);
        let mut history: Vec<f64> = Vec::new();
        let mut last_margin = f64::NEG_INFINITY;

        for it in 1..=budget {
            let (x, image) = project_affine(&(&cone_point + &p_corr));
            p_corr = &cone_point + &p_corr - &image;

            let margin = problem.margin(x.as_slice());
            last_margin = margin;
            let accept = if problem.homogeneous { margin > 0.0 } else { margin >= opts.epsilon };
            if accept {
                return RawOutcome {
                    status: FeasibilityStatus::Feasible,
                    point: Some(x.as_slice().to_vec()),
                    margin,
                    iterations: it,
                };
            }

            let next_cone = project_cone(&(&image + &q_corr));
            q_corr = &image + &q_corr - &next_cone;
            cone_point = next_cone;
            let distance = (&image - &cone_point).norm();
            history.push(distance);
            if history.len() > self.stall_window {
                let old = history[history.len() - 1 - self.stall_window];
                let stalled = (old - distance).abs() <= 1e-9 * old.max(1e-300);
                if stalled && distance > 1e-6 {
                    return RawOutcome {
                        status: FeasibilityStatus::Infeasible,
                        point: None,
                        margin,
                        iterations: it,
                    };
                }
            }
        }
        RawOutcome {
            status: FeasibilityStatus::Unknown,
            point: None,
            margin: last_margin,
            iterations: budget,
        }
    }
}
