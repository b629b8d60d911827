//! Closed-form problem sizes.

use serde::{Deserialize, Serialize};

use super::{ExtendedX, Theorem};

/// Scalar decision variables of the assembled system, by formula.
pub fn variable_count(theorem: Theorem, extended_x: ExtendedX, n: usize, m: usize, delta_bar: usize) -> usize {
    let hist = delta_bar * m;
    let dim = n + hist;
    let lyapunov = delta_bar * dim * (dim + 1) / 2;
    let x_lower = hist * n + hist * hist;
    lyapunov
        + match theorem {
            Theorem::Static => n * n + delta_bar * x_lower + m * n,
            Theorem::Switched => delta_bar * (n * n + x_lower + m * n),
            Theorem::Extended => match extended_x {
                ExtendedX::Full => dim * dim + m * dim,
                ExtendedX::BlockTriangular => n * n + x_lower + m * dim,
            },
        }
}

/// Inequality count of the polytopic over-approximation approach,
/// `2^(2·δ̄·ν)`, next to the `δ̄²` of the switched formulation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineCount {
    /// Saturates at `u128::MAX` when the power does not fit.
    pub count: u128,
    pub saturated: bool,
    pub switched_count: u64,
    pub summary: String,
}

pub fn baseline_counts(delta_bar: u32, nu: u32) -> BaselineCount {
    let exponent = 2u64 * delta_bar as u64 * nu as u64;
    let (count, saturated) = if exponent < 128 {
        (1u128 << exponent, false)
    } else {
        (u128::MAX, true)
    };
    let switched_count = delta_bar as u64 * delta_bar as u64;
    let shown = if saturated {
        format!("2^{exponent} (exceeds u128)")
    } else {
        count.to_string()
    };
    let summary = format!(
        "δ̄ = {delta_bar}, ν = {nu}: over-approximation needs {shown} LMIs, switched formulation needs {switched_count}"
    );
    BaselineCount {
        count,
        saturated,
        switched_count,
        summary,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_examples() {
        assert_eq!(baseline_counts(4, 2).count, 65536);
        assert_eq!(baseline_counts(1, 1).count, 4);
        assert_eq!(baseline_counts(5, 2).count, 1_048_576);
        assert_eq!(baseline_counts(4, 2).switched_count, 16);
        assert!(baseline_counts(4, 2).summary.contains("65536"));
    }

    #[test]
    fn baseline_saturates() {
        let big = baseline_counts(64, 1);
        assert!(big.saturated);
        assert_eq!(big.count, u128::MAX);
        assert!(!baseline_counts(31, 2).saturated);
        assert_eq!(baseline_counts(31, 2).count, 1u128 << 124);
    }

    #[test]
    fn published_variable_counts() {
        let f = ExtendedX::Full;
        assert_eq!(variable_count(Theorem::Static, f, 2, 1, 4), 186);
        assert_eq!(variable_count(Theorem::Extended, ExtendedX::BlockTriangular, 2, 1, 4), 118);
        assert_eq!(variable_count(Theorem::Extended, f, 2, 1, 4), 126);
        assert_eq!(variable_count(Theorem::Switched, f, 2, 1, 4), 204);
        assert_eq!(variable_count(Theorem::Static, f, 2, 1, 5), 321);
    }
}
