//! Small numeric helpers shared across modules.
//!
//! Monte Carlo statistics reduce over a slice whose order is fixed by draw
//! index, using pairwise summation. That keeps results identical between
//! serial and parallel runs and independent of accumulation chunking.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Pairwise (cascade) summation. Error grows like O(log n) rather than O(n),
/// and the reduction tree depends only on the slice length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Mean and sample standard deviation (n - 1 denominator; 0 when n < 2).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, var.max(0.0).sqrt())
}

/// Squared Euclidean norm of a vector.
pub fn norm_sq(x: ArrayView1<'_, f64>) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Squared Frobenius norm of a matrix.
pub fn frobenius_sq(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Largest absolute entry difference between two equally shaped matrices.
pub fn max_abs_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest absolute entry of a matrix.
pub fn max_abs(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Mixed relative/absolute closeness test.
pub fn close(a: f64, b: f64, rtol: f64, atol: f64) -> bool {
    (a - b).abs() <= atol + rtol * a.abs().max(b.abs())
}

/// True when every entry of two vectors is close under `close`.
pub fn vectors_close(a: &Array1<f64>, b: &Array1<f64>, rtol: f64, atol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| close(*x, *y, rtol, atol))
}

/// True when every entry of two matrices is close under `close`.
pub fn matrices_close(a: &Array2<f64>, b: &Array2<f64>, rtol: f64, atol: f64) -> bool {
    a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(x, y)| close(*x, *y, rtol, atol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pairwise_matches_naive_on_small_inputs() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(pairwise_sum(&xs), 15.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[7.5]), 7.5);
    }

    #[test]
    fn pairwise_is_accurate_on_adversarial_magnitudes() {
        // 1e16 + many tiny values: a naive forward sum drops every one of
        // them; pairwise loses only the few sharing a leaf block with the
        // large entries.
        let mut xs = vec![1e16];
        xs.extend(std::iter::repeat(1.0).take(4096));
        xs.push(-1e16);
        let naive: f64 = xs.iter().sum();
        assert_eq!(naive, 0.0);
        let s = pairwise_sum(&xs);
        assert!((s - 4096.0).abs() <= 64.0, "s = {s}");
    }

    #[test]
    fn mean_std_basics() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert!((m - 5.0).abs() < 1e-15);
        // Sample variance of this classic set is 32/7.
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        let (m1, s1) = mean_std(&[3.25]);
        assert_eq!((m1, s1), (3.25, 0.0));
        assert_eq!(mean_std(&[]), (0.0, 0.0));
    }

    #[test]
    fn norms_and_diffs() {
        let v = array![3.0, 4.0];
        assert_eq!(norm_sq(v.view()), 25.0);
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(frobenius_sq(m.view()), 30.0);
        let m2 = array![[1.0, 2.5], [3.0, 4.0]];
        assert_eq!(max_abs_diff(m.view(), m2.view()), 0.5);
        assert_eq!(max_abs(m.view()), 4.0);
    }

    #[test]
    fn closeness_combines_scales() {
        assert!(close(1.0, 1.0 + 5e-13, 1e-12, 0.0));
        assert!(!close(1.0, 1.01, 1e-12, 1e-9));
        assert!(close(0.0, 1e-10, 0.0, 1e-9));
    }
}
