//! Portable text dump of a constraint system.
//!
//! ```text
//! lmi-system 1
//! variables <count>
//! var <id> <name>
//! constraints <count>
//! constraint <index> size <n> terms <k>
//! constant <n(n+1)/2 numbers>
//! coef <var id> <n(n+1)/2 numbers>
//! end
//! ```
//!
//! Matrices are written as their lower triangle in row-major order
//! (`m00 m10 m11 m20 m21 m22 …`). Numbers use the shortest representation
//! that round-trips exactly.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::{AffineMatrixConstraint, SdpError, VarId};

const MAGIC: &str = "lmi-system 1";

fn write_lower(out: &mut String, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..=r {
            let _ = write!(out, " {}", m[(r, c)]);
        }
    }
}

/// Serialises constraints with optional variable names (defaults to `x<id>`).
pub fn write_system(constraints: &[AffineMatrixConstraint], names: &[String]) -> String {
    let num_vars = constraints
        .iter()
        .filter_map(|c| c.coefficients().keys().next_back())
        .map(|v| v.0 + 1)
        .max()
        .unwrap_or(0)
        .max(names.len());
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "variables {num_vars}");
    for id in 0..num_vars {
        let name = names.get(id).cloned().unwrap_or_else(|| format!("x{id}"));
        let _ = writeln!(out, "var {id} {name}");
    }
    let _ = writeln!(out, "constraints {}", constraints.len());
    for (index, c) in constraints.iter().enumerate() {
        let _ = writeln!(
            out,
            "constraint {index} size {} terms {}",
            c.size(),
            c.coefficients().len()
        );
        out.push_str("constant");
        write_lower(&mut out, c.constant());
        out.push('\n');
        for (var, coef) in c.coefficients() {
            let _ = write!(out, "coef {}", var.0);
            write_lower(&mut out, coef);
            out.push('\n');
        }
        out.push_str("end\n");
    }
    out
}

/// A parsed dump.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSystem {
    pub names: Vec<String>,
    pub constraints: Vec<AffineMatrixConstraint>,
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, SdpError> {
        loop {
            match self.inner.next() {
                Some((i, l)) => {
                    self.line = i + 1;
                    let l = l.trim();
                    if !l.is_empty() && !l.starts_with('#') {
                        return Ok(l);
                    }
                }
                None => return Err(self.err("unexpected end of input")),
            }
        }
    }

    fn err(&self, reason: impl Into<String>) -> SdpError {
        SdpError::Parse {
            line: self.line,
            reason: reason.into(),
        }
    }
}

fn read_lower(lines: &Lines<'_>, fields: &[&str], n: usize) -> Result<DMatrix<f64>, SdpError> {
    let expected = n * (n + 1) / 2;
    if fields.len() != expected {
        return Err(lines.err(format!("expected {expected} entries, found {}", fields.len())));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for r in 0..n {
        for c in 0..=r {
            let v: f64 = fields[k]
                .parse()
                .map_err(|_| lines.err(format!("bad number {:?}", fields[k])))?;
            m[(r, c)] = v;
            m[(c, r)] = v;
            k += 1;
        }
    }
    Ok(m)
}

fn keyed<'a>(lines: &Lines<'_>, line: &'a str, key: &str) -> Result<Vec<&'a str>, SdpError> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(lines.err(format!("expected `{key}`")));
    }
    Ok(parts.collect())
}

fn count(lines: &Lines<'_>, s: &str) -> Result<usize, SdpError> {
    s.parse().map_err(|_| lines.err(format!("bad integer {s:?}")))
}

pub fn parse_system(text: &str) -> Result<ParsedSystem, SdpError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.err(format!("expected header `{MAGIC}`")));
    }
    let l = lines.next()?;
    let f = keyed(&lines, l, "variables")?;
    let num_vars = count(&lines, f.first().copied().unwrap_or(""))?;
    let mut names = Vec::with_capacity(num_vars);
    for id in 0..num_vars {
        let l = lines.next()?;
        let f = keyed(&lines, l, "var")?;
        if f.len() != 2 || count(&lines, f[0])? != id {
            return Err(lines.err(format!("expected `var {id} <name>`")));
        }
        names.push(f[1].to_string());
    }
    let l = lines.next()?;
    let f = keyed(&lines, l, "constraints")?;
    let num_constraints = count(&lines, f.first().copied().unwrap_or(""))?;
    let mut constraints = Vec::with_capacity(num_constraints);
    for index in 0..num_constraints {
        let l = lines.next()?;
        let f = keyed(&lines, l, "constraint")?;
        if f.len() != 5 || f[1] != "size" || f[3] != "terms" || count(&lines, f[0])? != index {
            return Err(lines.err("expected `constraint <index> size <n> terms <k>`"));
        }
        let size = count(&lines, f[2])?;
        let terms = count(&lines, f[4])?;
        let l = lines.next()?;
        let f = keyed(&lines, l, "constant")?;
        let mut con = AffineMatrixConstraint::with_constant(read_lower(&lines, &f, size)?);
        for _ in 0..terms {
            let l = lines.next()?;
            let f = keyed(&lines, l, "coef")?;
            let Some((id, rest)) = f.split_first() else {
                return Err(lines.err("missing variable id"));
            };
            let id = count(&lines, id)?;
            if id >= num_vars {
                return Err(lines.err(format!("variable {id} not declared")));
            }
            con.add_term(VarId(id), read_lower(&lines, rest, size)?);
        }
        if lines.next()? != "end" {
            return Err(lines.err("expected `end`"));
        }
        constraints.push(con);
    }
    Ok(ParsedSystem { names, constraints })
}
