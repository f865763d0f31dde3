//! Central finite-difference gradient oracle.
//!
//! Used by the test suites to validate every analytic gradient against an
//! implementation-independent numerical one. It only ever calls a black-box
//! scalar function of a flat parameter vector, so it cannot share a bug with
//! the reverse pass it checks.

/// Central-difference gradient of `f` at `params`.
///
/// `f` must be a pure function of the parameter vector.
pub fn central_diff<F>(params: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut scratch = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = scratch[i];
        scratch[i] = orig + h;
        let fp = f(&scratch);
        scratch[i] = orig - h;
        let fm = f(&scratch);
        scratch[i] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Largest per-component relative error between two gradients.
///
/// The denominator is floored so that agreeing near-zero components (where
/// finite differences bottom out at cancellation noise) do not register as
/// spurious errors.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_quadratic_gradient() {
        let p = vec![0.3, -1.2, 2.0];
        let g = central_diff(&p, 1e-5, |q| 0.5 * q.iter().map(|v| v * v).sum::<f64>());
        assert!(max_rel_error(&g, &p) < 1e-9);
    }

    #[test]
    fn rel_error_tolerates_agreeing_zeros() {
        assert!(max_rel_error(&[0.0], &[1e-12]) < 1e-4);
        assert!(max_rel_error(&[1.0], &[1.1]) > 0.05);
    }
}
