//! Matrix exponential by scaling and squaring with a diagonal Padé
//! approximant.

use nalgebra::DMatrix;

/// Diagonal Padé order.
const PADE_ORDER: usize = 8;

/// Scaled matrices satisfy `‖A‖∞ ≤ SQUARING_THRESHOLD` before the
/// approximant is evaluated.
const SQUARING_THRESHOLD: f64 = 0.5;

/// Infinity norm (maximum absolute row sum).
pub fn norm_inf(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn pade_coefficients(order: usize) -> Vec<f64> {
    // c_k = (2q-k)! q! / ((2q)! k! (q-k)!), built by the ratio recurrence
    let mut c = vec![1.0; order + 1];
    for k in 1..=order {
        c[k] = c[k - 1] * (order + 1 - k) as f64 / (k as f64 * (2 * order + 1 - k) as f64);
    }
    c
}

/// Computes `exp(a)` for a square matrix.
///
/// Panics if `a` is not square. Returns a matrix of NaN if the input has
/// non-finite entries; callers validate inputs first.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm requires a square matrix");
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = norm_inf(a);
    if !norm.is_finite() {
        return DMatrix::from_element(n, n, f64::NAN);
    }
    let squarings = if norm > SQUARING_THRESHOLD {
        (norm / SQUARING_THRESHOLD).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let scaled = a * 0.5f64.powi(squarings as i32);

    let c = pade_coefficients(PADE_ORDER);
    let identity = DMatrix::<f64>::identity(n, n);
    // even and odd parts: N = E + O, D = E - O
    let mut even = &identity * c[0];
    let mut odd = DMatrix::<f64>::zeros(n, n);
    let mut power = identity.clone();
    for (k, ck) in c.iter().enumerate().skip(1) {
        power = &power * &scaled;
        if k % 2 == 0 {
            even += &power * *ck;
        } else {
            odd += &power * *ck;
        }
    }
    let numer = &even + &odd;
    let denom = &even - &odd;
    let mut result = denom
        .lu()
        .solve(&numer)
        .expect("Padé denominator is nonsingular for ‖A‖∞ ≤ 0.5");
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taylor(a: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = a.nrows();
        let mut sum = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..=terms {
            term = &term * a / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn zero_matrix_gives_identity() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(expm(&z), DMatrix::identity(3, 3));
    }

    #[test]
    fn diagonal_matches_scalar_exp() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-72.48 * 0.02, 0.3, 4.0]));
        let e = expm(&a);
        for i in 0..3 {
            let want = a[(i, i)].exp();
            assert!((e[(i, i)] - want).abs() <= 1e-13 * want.abs().max(1.0));
        }
    }

    #[test]
    fn small_norm_matches_taylor() {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, -0.2, 0.05, 0.0, -0.3, 0.1, 0.2, 0.0, -0.15]);
        let diff = (expm(&a) - taylor(&a, 30)).abs().max();
        assert!(diff < 1e-14, "diff {diff}");
    }

    #[test]
    fn rotation_generator() {
        let theta = 2.5;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -theta, theta, 0.0]);
        let e = expm(&a);
        let want = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        assert!((e - want).abs().max() < 1e-13);
    }

    #[test]
    fn padé_coefficients_order_six_reference() {
        // q = 6 diagonal approximant: 1, 1/2, 5/44, 1/66, 1/792, 1/15840, 1/665280
        let c = pade_coefficients(6);
        let want = [1.0, 0.5, 5.0 / 44.0, 1.0 / 66.0, 1.0 / 792.0, 1.0 / 15840.0, 1.0 / 665280.0];
        for (a, b) in c.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
