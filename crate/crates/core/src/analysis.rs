//! Second-order flow expansion, its remainder and a-priori bounds, and decay
//! diagnostics for simulated trajectories.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::ball_points;
use crate::lyapunov::{decay_rhs, LyapunovSpec};
use crate::simulator::Trajectory;
use crate::synthesis::ControlParams;
use crate::systems::DriftlessSystem;

/// Target accuracy of [`volterra_second_order`] with [`default_panels`].
pub const QUADRATURE_TOL: f64 = 1e-10;
/// Relative widening of grid-measured `L` and `H`.
pub const REGULARITY_MARGIN: f64 = 0.05;
/// Relative roundoff allowance for the Lyapunov decay inequality.
pub const ROUNDOFF_TOL: f64 = 1e-12;
/// Below this `L U tau` the bounds are evaluated by their power series.
const SERIES_SWITCH: f64 = 0.5;

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Constants entering the remainder and a-priori bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularityBounds {
    /// Bound on the Jacobian norms of the fields.
    pub l: f64,
    /// Bound on the Hessian norms of the field components.
    pub h: f64,
    /// `max_i |f_i(x0)|`.
    pub m: f64,
    /// `sup_t sum_i |u_i(t)|`, densely sampled.
    pub u: f64,
    /// `sum |v_i| + 2 sum |a_jl|`.
    pub u_analytic: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    /// `1 - max_j V(x_{j+1}) / V(x_j)`.
    pub sigma: f64,
    /// Fitted exponential rate of `|x(t_j)|`; `+inf` when the state reaches
    /// zero exactly.
    pub lambda: f64,
    pub per_interval_ratios: Vec<f64>,
    pub decaying: bool,
}

/// One bound comparison: `value <= bound` with `slack = bound - value`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub quantity: String,
    pub value: f64,
    pub bound: f64,
    pub slack: f64,
    pub pass: bool,
}

impl BoundCheck {
    pub fn new(quantity: impl Into<String>, value: f64, bound: f64) -> Self {
        let slack = bound - value;
        Self {
            quantity: quantity.into(),
            value,
            bound,
            slack,
            pass: slack >= 0.0,
        }
    }

    /// As [`BoundCheck::new`], accepting `value` up to `rel` times the larger
    /// magnitude above `bound`. For inequalities that hold with equality on
    /// exact solutions, where the sign of the slack is decided by roundoff.
    pub fn with_rel_tol(quantity: impl Into<String>, value: f64, bound: f64, rel: f64) -> Self {
        let mut c = Self::new(quantity, value, bound);
        c.pass = c.slack >= -rel * value.abs().max(bound.abs());
        c
    }
}

/// Composite 5-point Gauss-Legendre rule over `[a, b]` with `panels`
/// panels.
fn gauss_panels(a: f64, b: f64, panels: usize) -> impl Iterator<Item = (f64, f64)> {
    let h = (b - a) / panels as f64;
    (0..panels).flat_map(move |p| {
        let mid = a + (p as f64 + 0.5) * h;
        GL_NODES
            .iter()
            .zip(GL_WEIGHTS)
            .map(move |(x, w)| (mid + 0.5 * h * x, 0.5 * h * w))
    })
}

/// Panels giving 32 per period of the fastest oscillation.
pub fn default_panels(params: &ControlParams) -> usize {
    32 * (params.max_frequency().max(1) as usize)
}

/// Second-order expansion of the endpoint of `x' = sum_i u_i(t) f_i(x)` on
/// `[0, tau]`, with every integral computed by composite Gauss-Legendre
/// quadrature. The inner integrals come from a running table at panel
/// boundaries plus a local rule inside each panel.
pub fn volterra_second_order<U>(
    sys: &DriftlessSystem,
    x0: &DVector<f64>,
    control: U,
    tau: f64,
    panels: usize,
) -> Result<DVector<f64>>
where
    U: Fn(f64) -> DVector<f64>,
{
    if panels == 0 || !(tau >= 0.0) {
        return Err(Error::InvalidArgument("need panels > 0 and tau >= 0".into()));
    }
    let m = sys.m();
    let h = tau / panels as f64;
    let mut first = DVector::<f64>::zeros(m);
    let mut iterated = DMatrix::<f64>::zeros(m, m);
    let mut cumulative = DVector::<f64>::zeros(m);
    for p in 0..panels {
        let start = p as f64 * h;
        for (t, w) in gauss_panels(start, start + h, 1) {
            let ut = control(t);
            let mut inner = cumulative.clone();
            for (s, ws) in gauss_panels(start, t, 1) {
                inner += control(s) * ws;
            }
            first += &ut * w;
            for i in 0..m {
                for j in (i + 1)..m {
                    iterated[(i, j)] += w * (ut[j] * inner[i] - ut[i] * inner[j]);
                }
            }
        }
        for (s, ws) in gauss_panels(start, start + h, 1) {
            cumulative += control(s) * ws;
        }
    }

    let fields = (0..m).map(|i| sys.field(i, x0)).collect::<Result<Vec<_>>>()?;
    let mut x = x0.clone();
    for i in 0..m {
        x += &fields[i] * first[i];
    }
    for j in 0..m {
        let jac = sys.jacobian(j, x0)?;
        for i in 0..m {
            let c = 0.5 * first[i] * first[j];
            if c != 0.0 {
                x += &jac * &fields[i] * c;
            }
        }
    }
    for i in 0..m {
        for j in (i + 1)..m {
            if iterated[(i, j)] != 0.0 {
                x += sys.lie_bracket(i, j, x0)? * (0.5 * iterated[(i, j)]);
            }
        }
    }
    Ok(x)
}

/// The same expansion evaluated in closed form for the trigonometric
/// controls over one interval `[0, eps]`.
pub fn volterra_eps_closed(
    sys: &DriftlessSystem,
    x0: &DVector<f64>,
    params: &ControlParams,
) -> Result<DVector<f64>> {
    params.check_nonresonant()?;
    let m = sys.m();
    let eps = params.eps;
    let pairs = sys.brackets();
    let fields = (0..m).map(|i| sys.field(i, x0)).collect::<Result<Vec<_>>>()?;
    let mut x = x0.clone();
    for i in 0..m {
        x += &fields[i] * (eps * params.v[i]);
    }
    for j in 0..m {
        let jac = sys.jacobian(j, x0)?;
        for i in 0..m {
            let c = 0.5 * eps * eps * params.v[i] * params.v[j];
            if c != 0.0 {
                x += &jac * &fields[i] * c;
            }
        }
    }
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    for i in 0..m {
        for j in (i + 1)..m {
            let mut c = 0.0;
            for (p, &(q, l)) in pairs.iter().enumerate() {
                let a = params.a[p];
                c += a / f64::from(params.k[p])
                    * (delta(j, l) * (a * delta(i, q) - 2.0 * params.v[i])
                        - delta(i, l) * (a * delta(j, q) - 2.0 * params.v[j]));
            }
            if c != 0.0 {
                x += sys.lie_bracket(i, j, x0)? * (eps * eps / (4.0 * PI) * c);
            }
        }
    }
    Ok(x)
}

/// Bound on the norm of the remainder of the second-order expansion over
/// `[0, tau]`.
pub fn remainder_bound(b: &RegularityBounds, tau: f64) -> f64 {
    let s = b.u * tau;
    let z = b.l * s;
    let hess = b.h * b.m * b.m * (b.n as f64).sqrt() / 4.0;
    let value = if z < SERIES_SWITCH {
        // M sum_{k>=3} L^{k-1} s^k / k!  +  hess sum_{k>=3} (2^k - 4) L^{k-3} s^k / k!
        let mut term = s * s * s / 6.0;
        let mut pow2 = 8.0;
        let (mut first, mut second) = (0.0, 0.0);
        for k in 3..80 {
            first += term;
            second += (pow2 - 4.0) * term;
            term *= z / f64::from(k + 1);
            pow2 *= 2.0;
            if term < 1e-18 * first.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        b.m * b.l * b.l * first + hess * second
    } else {
        let e = z.exp();
        b.m / b.l * (e - 0.5 * ((z + 1.0).powi(2) + 1.0))
            + hess / b.l.powi(3) * ((e - 2.0).powi(2) + 2.0 * z - 1.0)
    };
    value.max(0.0)
}

/// `(M / L)(e^{L U t} - 1)`, with the limit `M U t` as `L -> 0`.
pub fn apriori_bound(m: f64, l: f64, u: f64, t: f64) -> f64 {
    let s = u * t;
    let z = l * s;
    if z == 0.0 {
        m * s
    } else {
        m * s * (z.exp_m1() / z)
    }
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.singular_values().max()
}

/// Measures `M`, `U`, `L` and `H` for one interval of `params` from `x0`.
///
/// `L` and `H` are suprema over a ball around `x0` whose radius comes from
/// the a-priori bound; the ball is enlarged until it is consistent with the
/// measured `L`. When no consistent ball exists, `L` and `H` are infinite.
pub fn measure_regularity(
    sys: &DriftlessSystem,
    x0: &DVector<f64>,
    params: &ControlParams,
    tau: f64,
) -> Result<RegularityBounds> {
    let m_const = (0..sys.m())
        .map(|i| sys.field(i, x0).map(|f| f.norm()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    if !m_const.is_finite() {
        return Err(Error::NonFinite { time: 0.0 });
    }
    let pairs = sys.brackets();
    let samples = 1024 * params.max_frequency().max(1) as usize;
    let u_sup = (0..=samples)
        .map(|s| params.u_eval(pairs, tau * s as f64 / samples as f64).iter().map(|c| c.abs()).sum::<f64>())
        .fold(0.0, f64::max);

    let jac_sup = |pts: &[DVector<f64>]| -> Result<f64> {
        let mut l = 0.0f64;
        for x in pts {
            for i in 0..sys.m() {
                let jac = sys.jacobian(i, x)?;
                if jac.iter().any(|c| !c.is_finite()) {
                    return Ok(f64::INFINITY);
                }
                l = l.max(spectral_norm(&jac));
            }
        }
        Ok(l)
    };
    let unbounded = RegularityBounds {
        l: f64::INFINITY,
        h: f64::INFINITY,
        m: m_const,
        u: u_sup,
        u_analytic: params.control_bound(),
        n: sys.n(),
    };
    let grow = 1.0 + REGULARITY_MARGIN;
    let mut l = jac_sup(std::slice::from_ref(x0))? * grow;
    let mut pts;
    let mut rounds = 0;
    loop {
        let radius = apriori_bound(m_const, l, u_sup, tau);
        if !radius.is_finite() || radius > 1e6 {
            return Ok(unbounded);
        }
        pts = ball_points(x0, radius, 128);
        pts.push(x0.clone());
        let measured = jac_sup(&pts)? * grow;
        rounds += 1;
        if measured <= l {
            break;
        }
        if rounds >= 30 || !measured.is_finite() {
            return Ok(unbounded);
        }
        l = measured;
    }
    let mut h = 0.0f64;
    for x in &pts {
        for i in 0..sys.m() {
            for hess in sys.component_hessians(i, x)? {
                if hess.iter().any(|c| !c.is_finite()) {
                    return Ok(unbounded);
                }
                h = h.max(hess.symmetric_eigenvalues().amax());
            }
        }
    }
    Ok(RegularityBounds {
        l,
        h: h * grow,
        m: m_const,
        u: u_sup,
        u_analytic: params.control_bound(),
        n: sys.n(),
    })
}

/// Per-interval Lyapunov ratios and a fitted exponential rate.
pub fn decay_check(traj: &Trajectory, lyap: &LyapunovSpec) -> Result<DecayReport> {
    let samples = &traj.sample_states;
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 sample states, got {}",
            samples.len()
        )));
    }
    let values: Vec<f64> = samples.iter().map(|x| lyap.value(x)).collect();
    let ratios: Vec<f64> = values
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect();
    let sigma = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sigma = if ratios.is_empty() { 1.0 } else { 1.0 - sigma };

    let pts: Vec<(f64, f64)> = samples
        .iter()
        .enumerate()
        .filter(|(_, x)| x.norm() > 1e-12)
        .map(|(j, x)| (j as f64 * traj.eps, x.norm().ln()))
        .collect();
    let lambda = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        -sxy / sxx
    } else if samples.last().is_some_and(|x| x.norm() <= 1e-12) {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(DecayReport {
        sigma,
        lambda,
        per_interval_ratios: ratios,
        decaying: sigma > 0.0,
    })
}

/// Compares the RK4 endpoint of one interval with the second-order expansion
/// and the remainder bound (plus ten times the quadrature tolerance).
pub fn check_remainder(
    sys: &DriftlessSystem,
    x0: &DVector<f64>,
    params: &ControlParams,
    x_end: &DVector<f64>,
) -> Result<BoundCheck> {
    let pairs = sys.brackets();
    let predicted = volterra_second_order(sys, x0, |t| params.u_eval(pairs, t), params.eps, default_panels(params))?;
    let bounds = measure_regularity(sys, x0, params, params.eps)?;
    let err = (x_end - predicted).norm();
    Ok(BoundCheck::new(
        "volterra remainder",
        err,
        remainder_bound(&bounds, params.eps) + 10.0 * QUADRATURE_TOL,
    ))
}

/// Worst-case a-priori check over the recorded states of interval `j` of a
/// sampled trajectory.
pub fn check_apriori(sys: &DriftlessSystem, traj: &Trajectory, j: usize) -> Result<BoundCheck> {
    let params = traj.params.get(j).ok_or_else(|| {
        Error::InvalidArgument(format!("trajectory has no parameters for interval {j}"))
    })?;
    let rows = traj.interval_rows(j);
    let start = *rows.start();
    let x0 = &traj.states[start];
    let b = measure_regularity(sys, x0, params, traj.eps)?;
    let mut worst = BoundCheck::new("a-priori growth", 0.0, 0.0);
    let mut first = true;
    for r in rows {
        let dt = traj.times[r] - traj.times[start];
        let check = BoundCheck::new("a-priori growth", (&traj.states[r] - x0).norm(), apriori_bound(b.m, b.l, b.u, dt));
        if first || check.slack < worst.slack {
            worst = check;
            first = false;
        }
    }
    Ok(worst)
}

/// One-interval Lyapunov decay inequality with the measured deviation
/// `r = x(eps) - x(0) + eps grad V(x(0))`.
pub fn check_lyapunov_step(
    lyap: &LyapunovSpec,
    x0: &DVector<f64>,
    x_end: &DVector<f64>,
    eps: f64,
) -> Result<BoundCheck> {
    let r = x_end - x0 + lyap.gradient(x0) * eps;
    let rhs = decay_rhs(&lyap.consts, eps, r.norm(), x0.norm())?;
    Ok(BoundCheck::with_rel_tol("lyapunov decay", lyap.value(x_end), rhs * lyap.value(x0), ROUNDOFF_TOL))
}
