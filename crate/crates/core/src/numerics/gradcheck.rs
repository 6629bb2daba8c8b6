use super::Scalar;
use crate::error::{domain, Result, SctError};

/// Central finite-difference gradient `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn finite_diff_grad<T, F>(mut f: F, x: &[T], h: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<T>,
{
    if !(h > T::zero()) {
        return Err(domain(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe)?;
        probe[i] = orig - h;
        let down = f(&probe)?;
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(SctError::Numeric {
                stage: format!("finite difference along coordinate {i}"),
            });
        }
        grad.push((up - down) / (h + h));
    }
    Ok(grad)
}

/// Largest coordinate-wise relative error `|a − b| / max(|a|, |b|, floor)`.
pub fn max_relative_error<T: Scalar>(analytic: &[T], numeric: &[T], floor: T) -> T {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(T::zero(), T::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::softmax;

    #[test]
    fn quadratic() {
        let g = finite_diff_grad(|x: &[f64]| Ok(x.iter().map(|v| v * v).sum()), &[1.0, 2.0], 1e-5)
            .unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn constant_gives_zero() {
        let g = finite_diff_grad(|_: &[f64]| Ok(3.0), &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn softmax_cross_entropy_matches_p_minus_onehot() {
        let z = [0.3, -1.2, 2.0, 0.7];
        let y = 1;
        let ce = |x: &[f64]| Ok(-softmax(x, 1.0)?.get(y).ln());
        let g = finite_diff_grad(ce, &z, 1e-5).unwrap();
        let p = softmax(&z, 1.0).unwrap();
        for (m, gm) in g.iter().enumerate() {
            let expected = p.get(m) - if m == y { 1.0 } else { 0.0 };
            assert!((gm - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_is_reported() {
        let r = finite_diff_grad(
            |x: &[f64]| Ok(if x[0] < 1.0 { f64::INFINITY } else { x[0] }),
            &[1.0],
            1e-5,
        );
        assert!(matches!(r, Err(SctError::Numeric { .. })));
        assert!(finite_diff_grad(|_: &[f64]| Ok(0.0), &[1.0], 0.0).is_err());
    }
}
