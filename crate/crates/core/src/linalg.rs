//! Small dense helpers shared by the propagator and the Monte Carlo code.

use nalgebra::{DMatrix, DVector};

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The series is summed until the next term drops below machine epsilon
/// relative to the partial sum, so for the step sizes used by the integrators
/// (`||A|| ~ 1e-2`) this costs about six products.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let norm = norm_one(a);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = if squarings > 0 {
        a / 2f64.powi(squarings as i32)
    } else {
        a.clone()
    };

    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        result += &term;
        if norm_one(&term) <= f64::EPSILON * norm_one(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Maximum absolute column sum.
pub fn norm_one(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}

/// Row sums of a square matrix.
pub fn row_sums(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.nrows(), a.row_iter().map(|r| r.sum()))
}

/// `log(sum(exp(x)))` without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Two-point Gauss–Legendre nodes on [0, 1].
pub const GAUSS2: [f64; 2] = [
    0.5 - 0.288_675_134_594_812_9,
    0.5 + 0.288_675_134_594_812_9,
];

/// Five-point Gauss–Legendre nodes and weights on [-1, 1].
pub const GAUSS5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
pub const GAUSS5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_matches_two_state_closed_form() {
        // exp(tQ) for Q = [[-a, a], [b, -b]].
        let (a, b, t) = (1.0, 2.0, 0.7);
        let q = DMatrix::from_row_slice(2, 2, &[-a, a, b, -b]) * t;
        let e = expm(&q);
        let s = a + b;
        let d = (-s * t).exp();
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[
                (b + a * d) / s,
                a * (1.0 - d) / s,
                b * (1.0 - d) / s,
                (a + b * d) / s,
            ],
        );
        assert!(max_abs_diff(&e, &expected) < 1e-14);
    }

    #[test]
    fn expm_agrees_with_nalgebra_on_large_norm() {
        let m = DMatrix::from_row_slice(3, 3, &[-7.0, 4.0, 3.0, 0.5, -2.0, 1.5, 6.0, 2.0, -8.0]);
        let ours = expm(&m);
        let theirs = m.clone().exp();
        assert!(max_abs_diff(&ours, &theirs) / norm_one(&theirs) < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_large_values() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
