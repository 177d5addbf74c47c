//! Lyapunov functions, their bound constants, and the one-interval decay
//! multiplier.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ball_points;

type ValueFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type HessianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Relative widening applied to grid estimates of the constants.
pub const SAFETY_MARGIN: f64 = 0.1;

/// `V`, its gradient and Hessian.
#[derive(Clone)]
pub struct LyapunovFn {
    value: ValueFn,
    gradient: GradientFn,
    hessian: HessianFn,
}

impl LyapunovFn {
    pub fn new<V, G, H>(value: V, gradient: G, hessian: H) -> Self
    where
        V: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        H: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.hessian)(x)
    }
}

impl std::fmt::Debug for LyapunovFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("LyapunovFn")
    }
}

/// Constants with
/// `beta1 |x|^2 <= V <= beta2 |x|^2`,
/// `alpha1 V <= |grad V|^2 <= alpha2 V` and
/// `|Hess V| <= mu` on the ball of `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConstants {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub mu: f64,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct LyapunovSpec {
    pub func: LyapunovFn,
    pub consts: LyapunovConstants,
}

impl LyapunovSpec {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.func.value(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.func.gradient(x)
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.func.hessian(x)
    }
}

/// `V(x) = 1/2 sum_i w_i x_i^2` with its exact constants (valid on all of
/// `R^n`).
pub fn quadratic_lyapunov(weights: &[f64]) -> Result<LyapunovSpec> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("no weights given".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!("weight {w} is not positive")));
    }
    let w = DVector::from_column_slice(weights);
    let (w1, w2, w3) = (w.clone(), w.clone(), w.clone());
    let func = LyapunovFn::new(
        move |x| 0.5 * x.component_mul(x).dot(&w1),
        move |x| x.component_mul(&w2),
        move |_| DMatrix::from_diagonal(&w3),
    );
    let wmin = w.min();
    let wmax = w.max();
    // |grad V|^2 / V = 2 sum w_i^2 x_i^2 / sum w_i x_i^2 lies in [2 wmin, 2 wmax]
    let consts = LyapunovConstants {
        alpha1: 2.0 * wmin,
        alpha2: 2.0 * wmax,
        beta1: 0.5 * wmin,
        beta2: 0.5 * wmax,
        mu: wmax,
        radius: f64::INFINITY,
    };
    Ok(LyapunovSpec { func, consts })
}

/// `V = 1/2 |x|^2`.
pub fn default_lyapunov(n: usize) -> LyapunovSpec {
    quadratic_lyapunov(&vec![1.0; n]).expect("unit weights are valid")
}

/// Grid estimate of the constants over the ball of `radius`, each bound
/// widened by [`SAFETY_MARGIN`].
pub fn estimate_constants(
    func: &LyapunovFn,
    n: usize,
    radius: f64,
    points: usize,
) -> Result<LyapunovConstants> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    if points == 0 {
        return Err(Error::EmptyGrid);
    }
    let mut ratio_v = (f64::INFINITY, 0.0f64);
    let mut ratio_g = (f64::INFINITY, 0.0f64);
    let mut mu = 0.0f64;
    let mut used = 0usize;
    for x in ball_points(&DVector::zeros(n), radius, points) {
        let r2 = x.norm_squared();
        let hess = func.hessian(&x);
        mu = mu.max(hess.symmetric_eigenvalues().amax());
        if r2 == 0.0 {
            continue;
        }
        let v = func.value(&x);
        if !(v > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let g2 = func.gradient(&x).norm_squared();
        ratio_v = (ratio_v.0.min(v / r2), ratio_v.1.max(v / r2));
        ratio_g = (ratio_g.0.min(g2 / v), ratio_g.1.max(g2 / v));
        used += 1;
    }
    if used == 0 {
        return Err(Error::EmptyGrid);
    }
    let lo = 1.0 - SAFETY_MARGIN;
    let hi = 1.0 + SAFETY_MARGIN;
    Ok(LyapunovConstants {
        alpha1: lo * ratio_g.0,
        alpha2: hi * ratio_g.1,
        beta1: lo * ratio_v.0,
        beta2: hi * ratio_v.1,
        mu: hi * mu,
        radius,
    })
}

/// Upper bound on `V(x(eps)) / V(x(0))` for a step
/// `x(eps) = x(0) - eps grad V(x(0)) + r`, clamped below at zero.
pub fn decay_rhs(c: &LyapunovConstants, eps: f64, r_norm: f64, x0_norm: f64) -> Result<f64> {
    if !(x0_norm > 0.0) {
        return Err(Error::InvalidArgument("initial state must be nonzero".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let raw = 1.0 - c.alpha1 * eps
        + c.alpha2 * eps * eps * c.mu / 2.0
        + c.mu * r_norm * r_norm / (2.0 * c.beta1 * x0_norm * x0_norm)
        + c.alpha2.sqrt() * (1.0 + eps * c.mu) * r_norm / (c.beta1.sqrt() * x0_norm);
    Ok(raw.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn unit_quadratic_constants() {
        let spec = quadratic_lyapunov(&[1.0, 1.0, 1.0]).unwrap();
        let c = spec.consts;
        assert_eq!((c.alpha1, c.alpha2, c.beta1, c.beta2, c.mu), (2.0, 2.0, 0.5, 0.5, 1.0));
        assert_eq!(spec.value(&DVector::zeros(3)), 0.0);
        let x = DVector::from_vec(vec![1.0, -2.0, 2.0]);
        assert_eq!(spec.value(&x), 4.5);
        assert_eq!(spec.gradient(&x), x);
    }

    #[test]
    fn scaled_quadratic_constants() {
        let c = quadratic_lyapunov(&[2.0, 2.0, 2.0]).unwrap().consts;
        assert_eq!((c.alpha1, c.alpha2), (4.0, 4.0));
    }

    #[test]
    fn nonpositive_weight_rejected() {
        assert!(quadratic_lyapunov(&[1.0, 0.0]).is_err());
        assert!(quadratic_lyapunov(&[1.0, -3.0]).is_err());
    }

    #[test]
    fn estimates_within_margin_of_analytic() {
        let spec = default_lyapunov(3);
        for radius in [0.1, 1.0, 7.0] {
            let c = estimate_constants(&spec.func, 3, radius, 400).unwrap();
            for (est, exact, lower) in [
                (c.alpha1, 2.0, true),
                (c.alpha2, 2.0, false),
                (c.beta1, 0.5, true),
                (c.beta2, 0.5, false),
                (c.mu, 1.0, false),
            ] {
                assert!((est - exact).abs() <= SAFETY_MARGIN * exact + 1e-12);
                if lower {
                    assert!(est <= exact);
                } else {
                    assert!(est >= exact);
                }
            }
        }
    }

    #[test]
    fn anisotropic_estimates() {
        let spec = quadratic_lyapunov(&[1.0, 4.0]).unwrap();
        let c = estimate_constants(&spec.func, 2, 1.0, 2000).unwrap();
        assert!(c.beta1 <= 0.5 && c.beta1 >= 0.45 - 1e-9);
        assert!(c.beta2 >= 2.0 && c.beta2 <= 2.2 + 1e-9);
        assert!(c.mu >= 4.0 && c.mu <= 4.4 + 1e-9);
    }

    #[test]
    fn estimates_hold_on_finer_grid() {
        let spec = quadratic_lyapunov(&[1.0, 3.0, 0.5]).unwrap();
        let c = estimate_constants(&spec.func, 3, 2.0, 300).unwrap();
        for x in ball_points(&DVector::zeros(3), 2.0, 600) {
            let v = spec.value(&x);
            let r2 = x.norm_squared();
            let g2 = spec.gradient(&x).norm_squared();
            assert!(c.beta1 * r2 <= v && v <= c.beta2 * r2);
            assert!(c.alpha1 * v <= g2 && g2 <= c.alpha2 * v);
        }
    }

    #[test]
    fn empty_grid_and_indefinite_function() {
        let spec = default_lyapunov(2);
        assert!(matches!(estimate_constants(&spec.func, 2, 1.0, 0), Err(Error::EmptyGrid)));
        let degenerate = LyapunovFn::new(
            |x| 0.5 * x[0] * x[0] - 0.5 * x[1] * x[1],
            |x| DVector::from_vec(vec![x[0], -x[1]]),
            |_| DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])),
        );
        assert!(matches!(
            estimate_constants(&degenerate, 2, 1.0, 10),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn decay_rhs_examples() {
        let c = default_lyapunov(3).consts;
        assert_abs_diff_eq!(decay_rhs(&c, 0.1, 0.0, 1.0).unwrap(), 0.81, epsilon = 1e-15);
        assert_abs_diff_eq!(decay_rhs(&c, 1e-12, 0.0, 1.0).unwrap(), 1.0, epsilon = 1e-11);
        assert!(decay_rhs(&c, 0.1, 1e3, 1.0).unwrap() > 1.0);
        assert!(decay_rhs(&c, 0.1, 0.0, 0.0).is_err());
        // clamped: 1 - 2 + 2 * 1 / 2 = 0 at eps = 1, and negative raw values clamp
        let strong = LyapunovConstants { alpha1: 10.0, ..c };
        assert_eq!(decay_rhs(&strong, 0.5, 0.0, 1.0).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn decay_rhs_is_monotone(r in 0.0..10.0f64, dr in 0.0..1.0f64, mu in 0.1..5.0f64,
                                 dmu in 0.0..1.0f64, eps in 0.001..1.0f64) {
            let c = LyapunovConstants { alpha1: 1.0, alpha2: 3.0, beta1: 0.4, beta2: 2.0, mu, radius: 1.0 };
            let c2 = LyapunovConstants { mu: mu + dmu, ..c };
            let base = decay_rhs(&c, eps, r, 1.0).unwrap();
            prop_assert!(decay_rhs(&c, eps, r + dr, 1.0).unwrap() >= base);
            prop_assert!(decay_rhs(&c2, eps, r, 1.0).unwrap() >= base);
        }
    }
}
