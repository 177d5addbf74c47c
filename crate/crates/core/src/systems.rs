//! Driftless control-affine systems `x' = sum_i u_i f_i(x)`.
//!
//! A [`DriftlessSystem`] carries its vector fields together with their
//! Jacobians (analytic where available) and the ordered set of index pairs
//! whose Lie brackets complete the fields to a basis of the tangent space.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type FieldFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Returns one Hessian per component of the field.
pub type HessianFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// Default relative rank threshold for [`DriftlessSystem::check_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const JACOBIAN_FD_STEP: f64 = 1e-6;
const HESSIAN_FD_STEP: f64 = 1e-5;

/// A single vector field with optional analytic derivatives.
#[derive(Clone)]
pub struct VectorField {
    eval: FieldFn,
    jacobian: Option<JacobianFn>,
    hessians: Option<HessianFn>,
}

impl VectorField {
    pub fn new<F>(eval: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(eval),
            jacobian: None,
            hessians: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn with_hessians<H>(mut self, hessians: H) -> Self
    where
        H: Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.hessians = Some(Arc::new(hessians));
        self
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.eval)(x)
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }
}

impl std::fmt::Debug for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorField")
            .field("jacobian", &self.jacobian.is_some())
            .field("hessians", &self.hessians.is_some())
            .finish()
    }
}

/// Result of a rank test on the bracket matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankCheck {
    pub full_rank: bool,
    pub condition: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Driftless control-affine system with `m` inputs on `R^n`.
///
/// Field indices and bracket pairs are zero-based. Each pair `(j, l)` in the
/// bracket set satisfies `j < l`.
#[derive(Clone, Debug)]
pub struct DriftlessSystem {
    name: String,
    n: usize,
    fields: Vec<VectorField>,
    brackets: Vec<(usize, usize)>,
    domain_radius: f64,
    finite_differences: bool,
}

impl DriftlessSystem {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        fields: Vec<VectorField>,
        brackets: Vec<(usize, usize)>,
        domain_radius: f64,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "state dimension must exceed 1, got {n}"
            )));
        }
        if fields.is_empty() || fields.len() >= n {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= m < n, got m = {} and n = {n}",
                fields.len()
            )));
        }
        if !(domain_radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "domain radius must be positive, got {domain_radius}"
            )));
        }
        let m = fields.len();
        for &(j, l) in &brackets {
            if j >= l {
                return Err(Error::InvalidBracketSet(format!(
                    "pair ({j}, {l}) is not strictly ordered"
                )));
            }
            if l >= m {
                return Err(Error::IndexOutOfRange { index: l, len: m });
            }
        }
        for (p, a) in brackets.iter().enumerate() {
            if brackets[..p].contains(a) {
                return Err(Error::InvalidBracketSet(format!(
                    "pair {a:?} listed twice"
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            n,
            fields,
            brackets,
            domain_radius,
            finite_differences: true,
        })
    }

    /// Enables or disables the finite-difference fallback for missing
    /// Jacobians.
    pub fn with_finite_differences(mut self, enabled: bool) -> Self {
        self.finite_differences = enabled;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.fields.len()
    }

    pub fn brackets(&self) -> &[(usize, usize)] {
        &self.brackets
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn vector_field(&self, i: usize) -> Result<&VectorField> {
        self.fields.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: self.fields.len(),
        })
    }

    pub fn field(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        Ok(self.vector_field(i)?.eval(x))
    }

    pub fn jacobian(&self, i: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        let vf = self.vector_field(i)?;
        match &vf.jacobian {
            Some(j) => Ok(j(x)),
            None if self.finite_differences => {
                let h = JACOBIAN_FD_STEP * (1.0 + x.norm());
                finite_diff_jacobian(|y| vf.eval(y), x, h)
            }
            None => Err(Error::MissingJacobian(i)),
        }
    }

    /// Hessians of each component of `f_i`, analytic if supplied and
    /// otherwise central differences of the Jacobian.
    pub fn component_hessians(&self, i: usize, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_state(x)?;
        let vf = self.vector_field(i)?;
        if let Some(h) = &vf.hessians {
            return Ok(h(x));
        }
        let n = self.n;
        let h = HESSIAN_FD_STEP * (1.0 + x.norm());
        let mut out = vec![DMatrix::zeros(n, n); n];
        for q in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[q] += h;
            xm[q] -= h;
            let dj = (self.jacobian(i, &xp)? - self.jacobian(i, &xm)?) / (2.0 * h);
            // dj[(k, p)] = d^2 f_k / dx_p dx_q
            for (k, hess) in out.iter_mut().enumerate() {
                for p in 0..n {
                    hess[(p, q)] = dj[(k, p)];
                }
            }
        }
        for hess in &mut out {
            let sym = (&*hess + hess.transpose()) * 0.5;
            *hess = sym;
        }
        Ok(out)
    }

    /// `[f_j, f_l](x) = (df_l/dx) f_j - (df_j/dx) f_l`.
    pub fn lie_bracket(&self, j: usize, l: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let fj = self.field(j, x)?;
        let fl = self.field(l, x)?;
        if j == l {
            return Ok(DVector::zeros(self.n));
        }
        Ok(self.jacobian(l, x)? * fj - self.jacobian(j, x)? * fl)
    }

    /// Columns `f_1..f_m` followed by the brackets over the bracket set, in
    /// order.
    pub fn bracket_matrix(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        let m = self.m();
        if self.brackets.len() != self.n - m {
            return Err(Error::InvalidBracketSet(format!(
                "expected n - m = {} pairs, got {}",
                self.n - m,
                self.brackets.len()
            )));
        }
        let mut a = DMatrix::zeros(self.n, self.n);
        for i in 0..m {
            a.set_column(i, &self.field(i, x)?);
        }
        for (p, &(j, l)) in self.brackets.iter().enumerate() {
            a.set_column(m + p, &self.lie_bracket(j, l, x)?);
        }
        Ok(a)
    }

    pub fn check_rank(&self, x: &DVector<f64>, tol: f64) -> Result<RankCheck> {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rank tolerance must be positive, got {tol}"
            )));
        }
        let a = self.bracket_matrix(x)?;
        let sv = a.singular_values();
        let sigma_max = sv.max();
        let sigma_min = sv.min();
        let condition = if sigma_min > 0.0 {
            sigma_max / sigma_min
        } else {
            f64::INFINITY
        };
        Ok(RankCheck {
            full_rank: sigma_max > 0.0 && sigma_min > tol * sigma_max,
            condition,
            sigma_min,
            sigma_max,
        })
    }
}

/// Central-difference Jacobian of `f` at `x` with step `h`.
pub fn finite_diff_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let n = x.len();
    let mut jac: Option<DMatrix<f64>> = None;
    for q in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[q] += h;
        xm[q] -= h;
        let fp = f(&xp);
        let fm = f(&xm);
        if fp.iter().chain(fm.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time: f64::NAN });
        }
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(fp.len(), n));
        jac.set_column(q, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

/// Wheeled-robot kinematics `f1 = (cos x3, sin x3, 0)`, `f2 = (0, 0, 1)`.
pub fn unicycle() -> DriftlessSystem {
    let f1 = VectorField::new(|x| DVector::from_vec(vec![x[2].cos(), x[2].sin(), 0.0]))
        .with_jacobian(|x| {
            let mut j = DMatrix::zeros(3, 3);
            j[(0, 2)] = -x[2].sin();
            j[(1, 2)] = x[2].cos();
            j
        })
        .with_hessians(|x| {
            let mut h0 = DMatrix::zeros(3, 3);
            let mut h1 = DMatrix::zeros(3, 3);
            h0[(2, 2)] = -x[2].cos();
            h1[(2, 2)] = -x[2].sin();
            vec![h0, h1, DMatrix::zeros(3, 3)]
        });
    let f2 = VectorField::new(|_| DVector::from_vec(vec![0.0, 0.0, 1.0]))
        .with_jacobian(|_| DMatrix::zeros(3, 3))
        .with_hessians(|_| vec![DMatrix::zeros(3, 3); 3]);
    DriftlessSystem::new("unicycle", 3, vec![f1, f2], vec![(0, 1)], 1.0)
        .expect("unicycle definition is valid")
}

/// Coefficient of the cubic terms in [`perturbed_brockett`].
pub const PERTURBATION: f64 = 0.2;

/// Brockett fields with cubic terms added to the third components:
/// `f1 = (1, 0, x2 + d x3^3)`, `f2 = (0, 1, -x1 + d x1^3)`.
///
/// The perturbation breaks nilpotency, so the second-order expansion has a
/// nonzero remainder.
pub fn perturbed_brockett() -> DriftlessSystem {
    let d = PERTURBATION;
    let f1 = VectorField::new(move |x| DVector::from_vec(vec![1.0, 0.0, x[1] + d * x[2].powi(3)]))
        .with_jacobian(move |x| {
            let mut j = DMatrix::zeros(3, 3);
            j[(2, 1)] = 1.0;
            j[(2, 2)] = 3.0 * d * x[2] * x[2];
            j
        });
    let f2 = VectorField::new(move |x| DVector::from_vec(vec![0.0, 1.0, -x[0] + d * x[0].powi(3)]))
        .with_jacobian(move |x| {
            let mut j = DMatrix::zeros(3, 3);
            j[(2, 0)] = -1.0 + 3.0 * d * x[0] * x[0];
            j
        });
    DriftlessSystem::new("perturbed-brockett", 3, vec![f1, f2], vec![(0, 1)], 1.0)
        .expect("perturbed Brockett definition is valid")
}

/// Names accepted by [`by_name`].
pub const REGISTRY: [&str; 3] = ["brockett", "unicycle", "perturbed-brockett"];

pub fn by_name(name: &str) -> Option<DriftlessSystem> {
    match name {
        "brockett" => Some(crate::brockett::brockett_system()),
        "unicycle" => Some(unicycle()),
        "perturbed-brockett" => Some(perturbed_brockett()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brockett::brockett_system;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn brockett_bracket_is_constant() {
        let sys = brockett_system();
        for x in [v(&[0.0, 0.0, 0.0]), v(&[1.0, -2.0, 3.0])] {
            let b = sys.lie_bracket(0, 1, &x).unwrap();
            assert_abs_diff_eq!(b, v(&[0.0, 0.0, -2.0]), epsilon = 1e-15);
        }
    }

    #[test]
    fn bracket_of_field_with_itself_vanishes() {
        let sys = unicycle();
        let x = v(&[0.3, -0.1, 0.7]);
        assert_eq!(sys.lie_bracket(1, 1, &x).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn unicycle_bracket_matches_hand_and_fd() {
        let sys = unicycle();
        let x = v(&[0.0, 0.0, 0.0]);
        let b = sys.lie_bracket(0, 1, &x).unwrap();
        assert_abs_diff_eq!(b, v(&[0.0, -1.0, 0.0]), epsilon = 1e-15);

        let fd = unicycle().with_finite_differences(true);
        let fields_only = DriftlessSystem::new(
            "unicycle-fd",
            3,
            vec![
                VectorField::new(|x| DVector::from_vec(vec![x[2].cos(), x[2].sin(), 0.0])),
                VectorField::new(|_| DVector::from_vec(vec![0.0, 0.0, 1.0])),
            ],
            vec![(0, 1)],
            1.0,
        )
        .unwrap();
        let b_fd = fields_only.lie_bracket(0, 1, &x).unwrap();
        assert_abs_diff_eq!(b_fd, fd.lie_bracket(0, 1, &x).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn bracket_index_out_of_range() {
        let sys = brockett_system();
        let x = DVector::zeros(3);
        assert!(matches!(
            sys.lie_bracket(0, 2, &x),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn missing_jacobian_without_fallback() {
        let sys = DriftlessSystem::new(
            "bare",
            3,
            vec![
                VectorField::new(|x| DVector::from_vec(vec![1.0, 0.0, x[1]])),
                VectorField::new(|x| DVector::from_vec(vec![0.0, 1.0, -x[0]])),
            ],
            vec![(0, 1)],
            1.0,
        )
        .unwrap()
        .with_finite_differences(false);
        assert!(matches!(
            sys.lie_bracket(0, 1, &DVector::zeros(3)),
            Err(Error::MissingJacobian(_))
        ));
    }

    #[test]
    fn brockett_bracket_matrix_columns() {
        let sys = brockett_system();
        let a = sys.bracket_matrix(&v(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(a, DMatrix::from_column_slice(3, 3, &[1., 0., 0., 0., 1., 0., 0., 0., -2.]));
        let a = sys.bracket_matrix(&v(&[1.0, 1.0, 0.0])).unwrap();
        assert_eq!(a, DMatrix::from_column_slice(3, 3, &[1., 0., 1., 0., 1., -1., 0., 0., -2.]));
    }

    #[test]
    fn mis_sized_bracket_set_is_rejected() {
        let b = brockett_system();
        let sys = DriftlessSystem::new("short", 3, b.fields.clone(), vec![], 1.0).unwrap();
        assert!(matches!(
            sys.bracket_matrix(&DVector::zeros(3)),
            Err(Error::InvalidBracketSet(_))
        ));
    }

    #[test]
    fn unordered_pair_is_rejected() {
        let b = brockett_system();
        assert!(matches!(
            DriftlessSystem::new("bad", 3, b.fields.clone(), vec![(1, 0)], 1.0),
            Err(Error::InvalidBracketSet(_))
        ));
    }

    #[test]
    fn duplicated_field_is_rank_deficient() {
        let b = brockett_system();
        let f1 = b.fields[0].clone();
        let sys = DriftlessSystem::new("dup", 3, vec![f1.clone(), f1], vec![(0, 1)], 1.0).unwrap();
        let rc = sys.check_rank(&v(&[0.2, 0.1, 0.0]), 1e-12).unwrap();
        assert!(!rc.full_rank);
        assert!(rc.condition.is_infinite() || rc.condition > 1e12);
    }

    #[test]
    fn rank_condition_holds_for_examples() {
        let b = brockett_system();
        assert!(b.check_rank(&v(&[5.0, -3.0, 2.0]), 1e-12).unwrap().full_rank);
        let u = unicycle();
        for th in [0.0, std::f64::consts::FRAC_PI_4, 1.0] {
            let x = v(&[0.0, 0.0, th]);
            let rc = u.check_rank(&x, 1e-12).unwrap();
            assert!(rc.full_rank);
            assert_abs_diff_eq!(u.bracket_matrix(&x).unwrap().determinant().abs(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn nonpositive_rank_tolerance() {
        assert!(brockett_system().check_rank(&DVector::zeros(3), 0.0).is_err());
    }

    #[test]
    fn fd_jacobian_of_identity_and_constant() {
        let x = v(&[0.4, -1.3, 2.2]);
        let j = finite_diff_jacobian(|y| y.clone(), &x, 1e-5).unwrap();
        assert_abs_diff_eq!(j, DMatrix::identity(3, 3), epsilon = 1e-9);
        let j = finite_diff_jacobian(|_| v(&[1.0, 2.0, 3.0]), &x, 1e-5).unwrap();
        assert_eq!(j, DMatrix::zeros(3, 3));
        assert!(finite_diff_jacobian(|y| y.clone(), &x, 0.0).is_err());
    }

    #[test]
    fn fd_jacobian_matches_brockett_analytic() {
        let sys = brockett_system();
        let x = v(&[0.0, 2.0, 0.0]);
        let fd = finite_diff_jacobian(|y| sys.field(0, y).unwrap(), &x, 1e-5).unwrap();
        let mut expected = DMatrix::zeros(3, 3);
        expected[(2, 1)] = 1.0;
        assert_abs_diff_eq!(fd, expected, epsilon = 1e-8);
        assert_abs_diff_eq!(sys.jacobian(0, &x).unwrap(), expected, epsilon = 0.0);
    }

    #[test]
    fn fd_hessians_match_unicycle_analytic() {
        let u = unicycle();
        let x = v(&[0.1, 0.2, 0.6]);
        let analytic = u.component_hessians(0, &x).unwrap();
        let bare = DriftlessSystem::new("u", 3, vec![
            VectorField::new(|x| DVector::from_vec(vec![x[2].cos(), x[2].sin(), 0.0])),
            u.fields[1].clone(),
        ], vec![(0, 1)], 1.0).unwrap();
        let fd = bare.component_hessians(0, &x).unwrap();
        for (a, b) in analytic.iter().zip(&fd) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-4);
        }
    }

    #[test]
    fn perturbed_brockett_is_not_nilpotent() {
        let sys = perturbed_brockett();
        let x = v(&[0.5, 0.0, 0.8]);
        let b = sys.lie_bracket(0, 1, &x).unwrap();
        // [f1,f2]_3 = (-1 + 3 d x1^2) - (1 + 3 d x3^2 (-x1 + d x1^3)) at x2 = 0
        let exact = (-1.0 + 3.0 * PERTURBATION * x[0] * x[0])
            - (1.0 + 3.0 * PERTURBATION * x[2] * x[2] * (-x[0] + PERTURBATION * x[0].powi(3)));
        assert_abs_diff_eq!(b[2], exact, epsilon = 1e-14);
        assert!((b[2] - (-2.0)).abs() > 1e-3);
    }

    #[test]
    fn registry_lookup() {
        for name in REGISTRY {
            assert_eq!(by_name(name).unwrap().name(), name);
        }
        assert!(by_name("nope").is_none());
    }
}
