//! Central-difference gradient oracle.

use crate::error::{Error, Result};

/// `(f(p + eps·e_i) − f(p − eps·e_i)) / (2·eps)` for every coordinate `i`.
pub fn finite_difference_gradient<F>(mut f: F, params: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = f(&p);
        if !up.is_finite() {
            return Err(Error::NonFinite { coordinate: i, value: up });
        }
        p[i] = orig - eps;
        let down = f(&p);
        if !down.is_finite() {
            return Err(Error::NonFinite { coordinate: i, value: down });
        }
        p[i] = orig;
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(grad)
}

/// Floor on the denominator of [`relative_error`]; below it the comparison is
/// effectively absolute.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| relative_error(x, y)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_difference_gradient(|p| p[0] * p[0], &[3.0], 1e-4).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = finite_difference_gradient(|_| 4.2, &[1.0, -2.0, 0.5], 1e-4).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_names_the_coordinate() {
        let err = finite_difference_gradient(
            |p| if p[1] > 1.0 { f64::NAN } else { p[0] },
            &[0.0, 1.0],
            1e-3,
        )
        .unwrap_err();
        match err {
            Error::NonFinite { coordinate, .. } => assert_eq!(coordinate, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_positive_eps() {
        assert!(finite_difference_gradient(|p| p[0], &[0.0], 0.0).is_err());
    }
}
