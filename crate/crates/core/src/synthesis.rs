//! Feedback parameters from the second-order algebraic system.
//!
//! At a fixed state `x` the parameters `(v, a, k)` of the trigonometric
//! control are chosen so that one sampling interval of length `eps` moves the
//! state, to second order, by `-eps grad V(x)`. Substituting
//! `a~ = a^2 / (4 pi k)` and `xi = (v, eps a~)` turns the system into
//! `xi + G(xi) = Phi(x)` with `Phi(x) = -A(x)^{-1} grad V(x)`, where `A(x)` is
//! the bracket matrix. `G` contains `sqrt|a~|` terms and is not
//! differentiable at `a~ = 0`, so the equation is first attacked by damped
//! fixed-point iteration from `xi = Phi(x)`. Where that stalls (near a
//! vanishing bracket coefficient the map has unbounded slope), Newton's
//! method is run on each sign branch of `a~`, where the system is a smooth
//! quadratic in `(v, sqrt|a~|)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lyapunov::LyapunovSpec;
use crate::systems::DriftlessSystem;

/// Parameters of one interval of the trigonometric control
/// `u_i(t) = v_i + sum_{(j,l)} a_jl (delta_ij cos(2 pi k_jl t / eps) + delta_il sin(2 pi k_jl t / eps))`.
///
/// `a` and `k` are indexed like the system's bracket set.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlParams {
    pub v: DVector<f64>,
    pub a: DVector<f64>,
    pub k: Vec<i32>,
    pub eps: f64,
}

impl ControlParams {
    /// Zero control with base frequencies `1..=pairs`.
    pub fn zero(m: usize, pairs: usize, eps: f64) -> Self {
        Self {
            v: DVector::zeros(m),
            a: DVector::zeros(pairs),
            k: (1..=pairs as i32).collect(),
            eps,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.v.iter().chain(self.a.iter()).all(|c| *c == 0.0)
    }

    /// Largest `|k|`, or 0 without oscillating terms.
    pub fn max_frequency(&self) -> u32 {
        self.k.iter().map(|k| k.unsigned_abs()).max().unwrap_or(0)
    }

    /// Every `k` is nonzero and the `|k|` are pairwise distinct.
    pub fn check_nonresonant(&self) -> Result<()> {
        for (p, k) in self.k.iter().enumerate() {
            if *k == 0 || self.k[..p].iter().any(|q| q.abs() == k.abs()) {
                return Err(Error::Resonant);
            }
        }
        Ok(())
    }

    /// Control value at time `t` measured from the interval start. Integer
    /// frequencies make this equal to the value at `t + j eps` for any `j`.
    pub fn u_eval(&self, pairs: &[(usize, usize)], t: f64) -> DVector<f64> {
        let mut u = self.v.clone();
        for (p, &(j, l)) in pairs.iter().enumerate() {
            let phase = 2.0 * PI * f64::from(self.k[p]) * t / self.eps;
            u[j] += self.a[p] * phase.cos();
            u[l] += self.a[p] * phase.sin();
        }
        u
    }

    /// Analytic bound `sum |v_i| + 2 sum |a_jl|` on `sum_i |u_i(t)|`.
    pub fn control_bound(&self) -> f64 {
        self.v.iter().map(|c| c.abs()).sum::<f64>() + 2.0 * self.a.iter().map(|c| c.abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisConfig {
    /// Absolute tolerance on the residual norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial damping factor in `(0, 1]`.
    pub gamma: f64,
    /// Below this `|Phi(x)|` the exact zero solution is returned.
    pub zero_threshold: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            gamma: 1.0,
            zero_threshold: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisReport {
    pub params: ControlParams,
    pub residual_norm: f64,
    pub iterations: usize,
    pub xi_norm: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReportSummary {
    pub residual_norm: f64,
    pub iterations: usize,
    pub xi_norm: f64,
    pub v_norm: f64,
    pub a_norm: f64,
}

impl SynthesisReport {
    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            residual_norm: self.residual_norm,
            iterations: self.iterations,
            xi_norm: self.xi_norm,
            v_norm: self.params.v.norm(),
            a_norm: self.params.a.norm(),
        }
    }
}

/// Base frequencies: the p-th pair (one-based) gets `p`.
pub fn assign_frequencies(pairs: &[(usize, usize)]) -> Result<Vec<i32>> {
    if pairs.is_empty() {
        return Err(Error::InvalidBracketSet(
            "no bracket pairs: the system is fully actuated".into(),
        ));
    }
    Ok((1..=pairs.len() as i32).collect())
}

/// Fields, Jacobians and all pairwise brackets at one state.
struct Local {
    fields: Vec<DVector<f64>>,
    jacobians: Vec<DMatrix<f64>>,
    /// `brackets[i][j]` for `i < j`.
    brackets: Vec<Vec<DVector<f64>>>,
    a: DMatrix<f64>,
}

impl Local {
    fn new(sys: &DriftlessSystem, x: &DVector<f64>) -> Result<Self> {
        let m = sys.m();
        let fields = (0..m).map(|i| sys.field(i, x)).collect::<Result<Vec<_>>>()?;
        let jacobians = (0..m).map(|i| sys.jacobian(i, x)).collect::<Result<Vec<_>>>()?;
        let mut brackets = vec![Vec::new(); m];
        for i in 0..m {
            for j in 0..m {
                let b = if i < j {
                    &jacobians[j] * &fields[i] - &jacobians[i] * &fields[j]
                } else {
                    DVector::zeros(sys.n())
                };
                brackets[i].push(b);
            }
        }
        let a = sys.bracket_matrix(x)?;
        Ok(Self {
            fields,
            jacobians,
            brackets,
            a,
        })
    }

    /// The terms of the algebraic system beyond `A xi`.
    fn nonlinear(&self, pairs: &[(usize, usize)], p: &ControlParams) -> DVector<f64> {
        let m = self.fields.len();
        let eps = p.eps;
        let mut out = DVector::zeros(self.a.nrows());
        for i in 0..m {
            for j in 0..m {
                let c = p.v[i] * p.v[j];
                if c != 0.0 {
                    out += &self.jacobians[j] * &self.fields[i] * (0.5 * eps * c);
                }
            }
        }
        let s = second_index_sums(m, pairs, p);
        for i in 0..m {
            for j in (i + 1)..m {
                let c = p.v[j] * s[i] - p.v[i] * s[j];
                if c != 0.0 {
                    out += &self.brackets[i][j] * (eps / (2.0 * PI) * c);
                }
            }
        }
        out
    }

    fn residual(&self, pairs: &[(usize, usize)], p: &ControlParams, grad: &DVector<f64>) -> DVector<f64> {
        let m = self.fields.len();
        let mut r = grad.clone();
        for i in 0..m {
            r += &self.fields[i] * p.v[i];
        }
        for (q, &(i, j)) in pairs.iter().enumerate() {
            r += &self.brackets[i][j] * (p.eps / (4.0 * PI) * p.a[q] * p.a[q] / f64::from(p.k[q]));
        }
        r + self.nonlinear(pairs, p)
    }
}

/// `s_p = sum over pairs (q, p) of a_qp / k_qp`.
fn second_index_sums(m: usize, pairs: &[(usize, usize)], p: &ControlParams) -> Vec<f64> {
    let mut s = vec![0.0; m];
    for (q, &(_, l)) in pairs.iter().enumerate() {
        s[l] += p.a[q] / f64::from(p.k[q]);
    }
    s
}

fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let singular = || {
        let sv = a.singular_values();
        let min = sv.min();
        Error::SingularBracketMatrix {
            condition: if min > 0.0 { sv.max() / min } else { f64::INFINITY },
        }
    };
    let sol = a.clone().lu().solve(b).ok_or_else(singular)?;
    if sol.iter().all(|c| c.is_finite()) {
        Ok(sol)
    } else {
        Err(singular())
    }
}

/// `Phi(x) = -A(x)^{-1} grad V(x)`.
pub fn phi(sys: &DriftlessSystem, lyap: &LyapunovSpec, x: &DVector<f64>) -> Result<DVector<f64>> {
    let a = sys.bracket_matrix(x)?;
    Ok(-solve_linear(&a, &lyap.gradient(x))?)
}

/// Left-hand side minus right-hand side of the algebraic system at `x`.
pub fn residual(
    sys: &DriftlessSystem,
    lyap: &LyapunovSpec,
    x: &DVector<f64>,
    params: &ControlParams,
) -> Result<DVector<f64>> {
    params.check_nonresonant()?;
    check_shapes(sys, params)?;
    let local = Local::new(sys, x)?;
    Ok(local.residual(sys.brackets(), params, &lyap.gradient(x)))
}

fn check_shapes(sys: &DriftlessSystem, p: &ControlParams) -> Result<()> {
    if p.v.len() != sys.m() {
        return Err(Error::DimensionMismatch {
            what: "v",
            expected: sys.m(),
            got: p.v.len(),
        });
    }
    if p.a.len() != sys.brackets().len() || p.k.len() != sys.brackets().len() {
        return Err(Error::DimensionMismatch {
            what: "a/k",
            expected: sys.brackets().len(),
            got: p.a.len(),
        });
    }
    Ok(())
}

/// Control parameters encoded by `xi = (v, eps a~)` for base frequencies
/// `kbar`.
pub fn recover_params(xi: &DVector<f64>, m: usize, kbar: &[i32], eps: f64) -> ControlParams {
    let v = xi.rows(0, m).into_owned();
    let mut a = DVector::zeros(kbar.len());
    let mut k = Vec::with_capacity(kbar.len());
    for (q, &kb) in kbar.iter().enumerate() {
        let at = xi[m + q] / eps;
        if at > 0.0 {
            a[q] = 2.0 * (PI * f64::from(kb) * at).sqrt();
            k.push(kb);
        } else if at < 0.0 {
            a[q] = -2.0 * (PI * f64::from(kb) * -at).sqrt();
            k.push(-kb);
        } else {
            k.push(kb);
        }
    }
    ControlParams { v, a, k, eps }
}

/// Inverse of [`recover_params`]: `xi = (v, eps a^2 / (4 pi k))`.
pub fn encode_params(p: &ControlParams) -> DVector<f64> {
    let m = p.v.len();
    let mut xi = DVector::zeros(m + p.a.len());
    xi.rows_mut(0, m).copy_from(&p.v);
    for q in 0..p.a.len() {
        xi[m + q] = p.eps * p.a[q] * p.a[q] / (4.0 * PI * f64::from(p.k[q]));
    }
    xi
}

/// Largest number of bracket pairs for which every sign branch is tried.
const MAX_BRANCH_PAIRS: usize = 8;

/// Parameters on sign branch `signs`: `a = 2 sqrt(pi kbar) sign w`,
/// `k = sign kbar`, so that `a~ = sign w^2` and `a / k` is linear in `w`.
fn branch_params(z: &DVector<f64>, m: usize, kbar: &[i32], signs: &[f64], eps: f64) -> ControlParams {
    let v = z.rows(0, m).into_owned();
    let a = DVector::from_fn(kbar.len(), |q, _| 2.0 * (PI * f64::from(kbar[q])).sqrt() * signs[q] * z[m + q]);
    let k = kbar.iter().zip(signs).map(|(&kb, &s)| if s < 0.0 { -kb } else { kb }).collect();
    ControlParams { v, a, k, eps }
}

/// Damped Newton on one sign branch. Returns a solution only if every `w`
/// ends nonnegative, so that the parameters follow the recovery rule.
#[allow(clippy::too_many_arguments)]
fn newton_branch(
    local: &Local,
    pairs: &[(usize, usize)],
    grad: &DVector<f64>,
    kbar: &[i32],
    signs: &[f64],
    mut z: DVector<f64>,
    eps: f64,
    config: &SynthesisConfig,
) -> Option<(ControlParams, f64, usize)> {
    let m = z.len() - kbar.len();
    let eval = |z: &DVector<f64>| local.residual(pairs, &branch_params(z, m, kbar, signs, eps), grad);
    let mut r = eval(&z);
    let mut rn = r.norm();
    for iter in 0..config.max_iter {
        if rn < config.tol {
            if z.rows(m, kbar.len()).iter().any(|w| *w < 0.0) {
                return None;
            }
            return Some((branch_params(&z, m, kbar, signs, eps), rn, iter));
        }
        // the residual is quadratic in z, so central differences are exact
        // up to roundoff
        let mut jac = DMatrix::zeros(r.len(), z.len());
        for c in 0..z.len() {
            let h = 1e-5 * (1.0 + z[c].abs());
            let mut zp = z.clone();
            zp[c] += h;
            let mut zm = z.clone();
            zm[c] -= h;
            jac.set_column(c, &((eval(&zp) - eval(&zm)) / (2.0 * h)));
        }
        let step = solve_linear(&jac, &r).ok()?;
        let mut t = 1.0;
        loop {
            let cand = &z - &step * t;
            let rc = eval(&cand);
            if rc.norm() < rn {
                z = cand;
                rn = rc.norm();
                r = rc;
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                return None;
            }
        }
    }
    None
}

/// Solves the algebraic system at `x` for the feedback parameters.
pub fn solve_params(
    sys: &DriftlessSystem,
    lyap: &LyapunovSpec,
    x: &DVector<f64>,
    eps: f64,
    config: &SynthesisConfig,
) -> Result<SynthesisReport> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if !(config.gamma > 0.0 && config.gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "damping must lie in (0, 1], got {}",
            config.gamma
        )));
    }
    let pairs = sys.brackets();
    let m = sys.m();
    let kbar = assign_frequencies(pairs)?;
    let local = Local::new(sys, x)?;
    let grad = lyap.gradient(x);
    let target = -solve_linear(&local.a, &grad)?;

    let eval = |xi: &DVector<f64>| {
        let p = recover_params(xi, m, &kbar, eps);
        let r = local.residual(pairs, &p, &grad);
        (p, r)
    };

    if target.norm() < config.zero_threshold {
        let p = ControlParams::zero(m, pairs.len(), eps);
        let r = local.residual(pairs, &p, &grad);
        return Ok(SynthesisReport {
            params: p,
            residual_norm: r.norm(),
            iterations: 0,
            xi_norm: 0.0,
        });
    }

    let mut xi = target.clone();
    let (mut params, res) = eval(&xi);
    let mut res_norm = res.norm();
    let mut gamma = config.gamma;
    for iter in 0..config.max_iter {
        if res_norm < config.tol {
            return Ok(SynthesisReport {
                params,
                residual_norm: res_norm,
                iterations: iter,
                xi_norm: xi.norm(),
            });
        }
        // T(xi) = Phi - A^{-1} g(xi)
        let mapped = &target - solve_linear(&local.a, &local.nonlinear(pairs, &params))?;
        loop {
            let cand = &xi * (1.0 - gamma) + &mapped * gamma;
            let (p, r) = eval(&cand);
            let rn = r.norm();
            if rn < res_norm || gamma < 1e-12 {
                xi = cand;
                params = p;
                res_norm = rn;
                gamma = (gamma * 2.0).min(config.gamma);
                break;
            }
            gamma *= 0.5;
        }
        if !res_norm.is_finite() {
            break;
        }
    }
    if res_norm < config.tol {
        return Ok(SynthesisReport {
            params,
            residual_norm: res_norm,
            iterations: config.max_iter,
            xi_norm: xi.norm(),
        });
    }
    // Near a vanishing bracket coefficient the fixed-point map has unbounded
    // slope, since the cross terms grow like sqrt|a~|. On a fixed sign
    // pattern of a~ the system is a quadratic polynomial in (v, w) with
    // a~ = sign * w^2, so Newton is run branch by branch, starting with the
    // signs of the last iterate.
    let start_signs: Vec<f64> = (m..xi.len()).map(|q| if xi[q] < 0.0 { -1.0 } else { 1.0 }).collect();
    let patterns = if start_signs.len() <= MAX_BRANCH_PAIRS { 1usize << start_signs.len() } else { 1 };
    for pattern in 0..patterns {
        let signs: Vec<f64> = start_signs
            .iter()
            .enumerate()
            .map(|(q, s)| if pattern >> q & 1 == 1 { -s } else { *s })
            .collect();
        // Newton may settle on a root with some w < 0; starting further out
        // along w favours the largest root of each branch.
        for scale in [1.0, 4.0, 16.0] {
            let mut z = xi.clone();
            for q in m..z.len() {
                let w0 = (xi[q] / eps).abs().sqrt();
                z[q] = if scale == 1.0 { w0 } else { scale * w0.max((target.norm() / eps).sqrt()) };
            }
            if let Some((params, res_norm, iterations)) =
                newton_branch(&local, pairs, &grad, &kbar, &signs, z, eps, config)
            {
                let xi_norm = encode_params(&params).norm();
                return Ok(SynthesisReport {
                    params,
                    residual_norm: res_norm,
                    iterations: config.max_iter + iterations,
                    xi_norm,
                });
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: config.max_iter,
        residual: res_norm,
    })
}
