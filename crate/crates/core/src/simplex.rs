//! Centered stick-breaking map between `R^(K-1)` and the open `K`-simplex.
//!
//! Break `i` (0-based) uses `z_i = logistic(y_i - ln(K - 1 - i))`, so `y = 0`
//! lands on the uniform point. All quantities are carried in log space so the
//! map stays finite for saturated inputs.

use crate::error::{Error, Result};

/// `ln(1 + e^t)` without overflow.
#[inline]
pub(crate) fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn offset(k: usize, i: usize) -> f64 {
    -((k - 1 - i) as f64).ln()
}

/// One evaluated point of the transform, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    /// Log of each simplex coordinate, length `K`.
    pub log_x: Vec<f64>,
    /// Break fractions, length `K - 1`.
    z: Vec<f64>,
    /// `ln |det J|` of the map `y -> x[..K-1]`.
    pub log_jac: f64,
}

impl SimplexPoint {
    pub fn forward(y: &[f64]) -> Self {
        let k = y.len() + 1;
        let mut log_x = Vec::with_capacity(k);
        let mut z = Vec::with_capacity(k - 1);
        let mut log_stick = 0.0;
        let mut log_jac = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            let t = yi + offset(k, i);
            let log_z = -softplus(-t);
            let log_1mz = -softplus(t);
            log_x.push(log_stick + log_z);
            log_jac += log_z + log_1mz + log_stick;
            log_stick += log_1mz;
            z.push(logistic(t));
        }
        log_x.push(log_stick);
        Self { log_x, z, log_jac }
    }

    pub fn len(&self) -> usize {
        self.log_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_x.is_empty()
    }

    pub fn simplex(&self) -> Vec<f64> {
        self.log_x.iter().map(|l| l.exp()).collect()
    }

    /// Accumulates into `grad_y` the gradient with respect to `y` of
    /// `f(log x) + [log_jac]`, given `g_log_x = df/d(log x)`.
    pub fn pullback(&self, g_log_x: &[f64], with_jacobian: bool, grad_y: &mut [f64]) {
        let k = self.log_x.len();
        debug_assert_eq!(g_log_x.len(), k);
        debug_assert_eq!(grad_y.len(), k - 1);
        // suffix sum of upstream gradients beyond break i
        let mut tail = g_log_x[k - 1];
        for i in (0..k - 1).rev() {
            let z = self.z[i];
            let mut g = g_log_x[i] * (1.0 - z) - z * tail;
            if with_jacobian {
                g += 1.0 - 2.0 * z - z * (k - 2 - i) as f64;
            }
            grad_y[i] += g;
            tail += g_log_x[i];
        }
    }
}

/// Maps `y` to a simplex of length `y.len() + 1` and returns the log-Jacobian.
pub fn simplex_from_unconstrained(y: &[f64]) -> Result<(Vec<f64>, f64)> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("unconstrained simplex coordinates"));
    }
    let p = SimplexPoint::forward(y);
    Ok((p.simplex(), p.log_jac))
}

/// Inverse of [`simplex_from_unconstrained`]. Coordinates must be strictly positive.
pub fn unconstrained_from_simplex(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::DomainError("empty simplex".into()));
    }
    if x.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::DomainError(
            "simplex coordinates must be positive and finite".into(),
        ));
    }
    let k = x.len();
    // suffix[i] = sum of x[i..]
    let mut suffix = vec![0.0; k + 1];
    for i in (0..k).rev() {
        suffix[i] = suffix[i + 1] + x[i];
    }
    Ok((0..k - 1)
        .map(|i| x[i].ln() - suffix[i + 1].ln() - offset(k, i))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_is_uniform() {
        let (x, _) = simplex_from_unconstrained(&[0.0, 0.0]).unwrap();
        for v in x {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn saturation() {
        let (x, lj) = simplex_from_unconstrained(&[20.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-8);
        assert!(lj.is_finite());
        let (x, lj) = simplex_from_unconstrained(&[800.0, -800.0]).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
        assert!(lj.is_finite());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            simplex_from_unconstrained(&[f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(simplex_from_unconstrained(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn degenerate_single_coordinate() {
        let (x, lj) = simplex_from_unconstrained(&[]).unwrap();
        assert_eq!(x, vec![1.0]);
        assert_eq!(lj, 0.0);
    }

    // Log-Jacobian against a finite-difference determinant of y -> x[..K-1].
    #[test]
    fn log_jacobian_matches_numeric_determinant() {
        let y = [0.3, -0.7, 1.1];
        let k = y.len();
        let h = 1e-6;
        let mut jac = vec![vec![0.0; k]; k];
        for c in 0..k {
            let mut yp = y;
            let mut ym = y;
            yp[c] += h;
            ym[c] -= h;
            let (xp, _) = simplex_from_unconstrained(&yp).unwrap();
            let (xm, _) = simplex_from_unconstrained(&ym).unwrap();
            for r in 0..k {
                jac[r][c] = (xp[r] - xm[r]) / (2.0 * h);
            }
        }
        // 3x3 determinant
        let d = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
            - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
            + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
        let (_, lj) = simplex_from_unconstrained(&y).unwrap();
        assert!(
            (d.abs().ln() - lj).abs() < 1e-6,
            "{} vs {}",
            d.abs().ln(),
            lj
        );
    }

    #[test]
    fn pullback_matches_finite_differences() {
        let y = [0.4, -1.2, 0.9, 0.1];
        let g = [0.7, -0.3, 1.9, 0.2, -1.1];
        let f = |y: &[f64]| {
            let p = SimplexPoint::forward(y);
            p.log_x.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() + p.log_jac
        };
        let p = SimplexPoint::forward(&y);
        let mut grad = vec![0.0; y.len()];
        p.pullback(&g, true, &mut grad);
        let h = 1e-5;
        for i in 0..y.len() {
            let mut yp = y;
            let mut ym = y;
            yp[i] += h;
            ym[i] -= h;
            let fd = (f(&yp) - f(&ym)) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-8,
                "coord {i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    proptest! {
        #[test]
        fn round_trip_from_unconstrained(y in prop::collection::vec(-5.0f64..5.0, 1..8)) {
            let (x, _) = simplex_from_unconstrained(&y).unwrap();
            let back = unconstrained_from_simplex(&x).unwrap();
            for (a, b) in y.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
            }
        }

        #[test]
        fn round_trip_from_simplex(raw in prop::collection::vec(1e-6f64..1.0, 2..8)) {
            let total: f64 = raw.iter().sum();
            let x: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let y = unconstrained_from_simplex(&x).unwrap();
            let (back, _) = simplex_from_unconstrained(&y).unwrap();
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn output_is_simplex(y in prop::collection::vec(-30.0f64..30.0, 1..10)) {
            let (x, lj) = simplex_from_unconstrained(&y).unwrap();
            prop_assert!(x.iter().all(|v| *v >= 0.0));
            prop_assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(lj.is_finite());
        }
    }
}
