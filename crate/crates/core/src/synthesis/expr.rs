//! Matrix-valued affine expressions over scalar decision variables.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::sdp::{AffineMatrixConstraint, VarId};

/// A structured matrix of decision variables; absent entries are fixed at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixVariable {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
    /// Row-major map of entries to variables.
    entries: Vec<Option<VarId>>,
}

impl MatrixVariable {
    pub fn get(&self, r: usize, c: usize) -> Option<VarId> {
        self.entries[r * self.cols + c]
    }

    pub fn ids(&self) -> impl Iterator<Item = VarId> + '_ {
        let mut seen: Vec<VarId> = self.entries.iter().flatten().copied().collect();
        seen.sort();
        seen.dedup();
        seen.into_iter()
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| {
            self.get(r, c).map_or(0.0, |id| x[id.0])
        })
    }

    pub fn expr(&self) -> MatExpr {
        let mut e = MatExpr::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if let Some(id) = self.get(r, c) {
                    e.term_mut(id)[(r, c)] += 1.0;
                }
            }
        }
        e
    }
}

/// Allocates scalar variables and remembers their names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VariableRegistry {
    names: Vec<String>,
}

impl VariableRegistry {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn alloc(&mut self, name: String) -> VarId {
        self.names.push(name);
        VarId(self.names.len() - 1)
    }

    /// Full `rows × cols` matrix.
    pub fn full(&mut self, name: &str, rows: usize, cols: usize) -> MatrixVariable {
        let entries = (0..rows * cols)
            .map(|k| Some(self.alloc(format!("{name}[{},{}]", k / cols, k % cols))))
            .collect();
        MatrixVariable {
            name: name.to_string(),
            rows,
            cols,
            symmetric: false,
            entries,
        }
    }

    /// Symmetric `n × n` matrix with `n(n+1)/2` free entries.
    pub fn symmetric(&mut self, name: &str, n: usize) -> MatrixVariable {
        let mut entries = vec![None; n * n];
        for r in 0..n {
            for c in r..n {
                let id = self.alloc(format!("{name}[{r},{c}]"));
                entries[r * n + c] = Some(id);
                entries[c * n + r] = Some(id);
            }
        }
        MatrixVariable {
            name: name.to_string(),
            rows: n,
            cols: n,
            symmetric: true,
            entries,
        }
    }
}

/// `constant + Σ_v coefficient_v · x_v` with matrix-valued coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MatExpr {
    rows: usize,
    cols: usize,
    constant: DMatrix<f64>,
    terms: BTreeMap<VarId, DMatrix<f64>>,
}

impl MatExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            constant: DMatrix::zeros(rows, cols),
            terms: BTreeMap::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn term_mut(&mut self, id: VarId) -> &mut DMatrix<f64> {
        let (r, c) = (self.rows, self.cols);
        self.terms.entry(id).or_insert_with(|| DMatrix::zeros(r, c))
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(|(k, m)| (*k, m.transpose())).collect(),
        }
    }

    /// `a · self`.
    pub fn left_mul(&self, a: &DMatrix<f64>) -> Self {
        assert_eq!(a.ncols(), self.rows);
        Self {
            rows: a.nrows(),
            cols: self.cols,
            constant: a * &self.constant,
            terms: self.terms.iter().map(|(k, m)| (*k, a * m)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            constant: &self.constant * s,
            terms: self.terms.iter().map(|(k, m)| (*k, m * s)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        out.constant += &other.constant;
        for (k, m) in &other.terms {
            *out.term_mut(*k) += m;
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Writes `block` into `self` at `(r0, c0)`, overwriting that window.
    pub fn place(&mut self, r0: usize, c0: usize, block: &Self) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        self.constant
            .view_mut((r0, c0), (block.rows, block.cols))
            .copy_from(&block.constant);
        for (k, m) in &block.terms {
            self.term_mut(*k)
                .view_mut((r0, c0), (block.rows, block.cols))
                .copy_from(m);
        }
    }

    /// `[[a, b], [c, d]]`.
    pub fn blocks(a: &Self, b: &Self, c: &Self, d: &Self) -> Self {
        let mut out = Self::zeros(a.rows + c.rows, a.cols + b.cols);
        out.place(0, 0, a);
        out.place(0, a.cols, b);
        out.place(a.rows, 0, c);
        out.place(a.rows, a.cols, d);
        out
    }

    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (k, m) in &self.terms {
            out += m * x[k.0];
        }
        out
    }

    /// Converts a square expression into a constraint `self ⪰ 0`.
    pub fn into_constraint(self) -> AffineMatrixConstraint {
        assert_eq!(self.rows, self.cols);
        let mut c = AffineMatrixConstraint::with_constant(self.constant);
        for (k, m) in self.terms {
            c.add_term(k, m);
        }
        c.prune();
        c
    }
}
