//! Closed-form tools for the Brockett integrator
//! `x1' = u1, x2' = u2, x3' = u1 x2 - u2 x1`.
//!
//! The system is nilpotent, so the second-order expansion of the flow under
//! the trigonometric controls is exact. That gives an exact one-interval map
//! ([`exact_step`]), exact two-point steering ([`steer`]), and an explicit
//! stabilizing feedback ([`brockett_feedback_params`]) for which one sampling
//! interval maps `x` to `(1 - eps) x`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthesis::ControlParams;
use crate::systems::{DriftlessSystem, VectorField};

/// Domain radius used for the registry entry.
pub const BROCKETT_RADIUS: f64 = 2.5;

/// Sign choice for the square root in the amplitude formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Branch {
    #[default]
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "+" | "plus" => Ok(Branch::Plus),
            "-" | "minus" => Ok(Branch::Minus),
            other => Err(Error::InvalidArgument(format!("unknown branch {other:?}"))),
        }
    }
}

/// Parameters of `u1 = v1 + a12 cos(2 pi k12 t / eps)`,
/// `u2 = v2 + a12 sin(2 pi k12 t / eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrockettParams {
    pub v1: f64,
    pub v2: f64,
    pub a12: f64,
    pub k12: i32,
    pub eps: f64,
}

impl BrockettParams {
    pub fn zero(eps: f64) -> Self {
        Self {
            v1: 0.0,
            v2: 0.0,
            a12: 0.0,
            k12: 1,
            eps,
        }
    }

    pub fn to_control_params(self) -> ControlParams {
        ControlParams {
            v: DVector::from_vec(vec![self.v1, self.v2]),
            a: DVector::from_vec(vec![self.a12]),
            k: vec![self.k12],
            eps: self.eps,
        }
    }
}

pub fn brockett_system() -> DriftlessSystem {
    let zero_hessians = |_: &DVector<f64>| vec![DMatrix::zeros(3, 3); 3];
    let f1 = VectorField::new(|x| DVector::from_vec(vec![1.0, 0.0, x[1]]))
        .with_jacobian(|_| {
            let mut j = DMatrix::zeros(3, 3);
            j[(2, 1)] = 1.0;
            j
        })
        .with_hessians(zero_hessians);
    let f2 = VectorField::new(|x| DVector::from_vec(vec![0.0, 1.0, -x[0]]))
        .with_jacobian(|_| {
            let mut j = DMatrix::zeros(3, 3);
            j[(2, 0)] = -1.0;
            j
        })
        .with_hessians(zero_hessians);
    DriftlessSystem::new("brockett", 3, vec![f1, f2], vec![(0, 1)], BROCKETT_RADIUS)
        .expect("Brockett definition is valid")
}

/// State after one interval of length `p.eps` starting from `x0`.
pub fn exact_step(x0: &Vector3<f64>, p: &BrockettParams) -> Vector3<f64> {
    let eps = p.eps;
    let quad = if p.a12 == 0.0 {
        0.0
    } else {
        eps * eps / (2.0 * PI * f64::from(p.k12)) * p.a12 * (p.a12 - 2.0 * p.v1)
    };
    Vector3::new(
        x0[0] + eps * p.v1,
        x0[1] + eps * p.v2,
        x0[2] + eps * (p.v1 * x0[1] - p.v2 * x0[0]) - quad,
    )
}

/// Discriminant of the steering formula; steering with this `k12` is
/// possible iff it is nonnegative.
pub fn steer_discriminant(x0: &Vector3<f64>, x1: &Vector3<f64>, k12: i32) -> f64 {
    let d1 = x1[0] - x0[0];
    d1 * d1 + 2.0 * PI * f64::from(k12) * (x0[2] - x1[2] + x1[0] * x0[1] - x0[0] * x1[1])
}

/// Parameters driving `x0` to `x1` in exactly one interval of length `eps`.
pub fn steer(
    x0: &Vector3<f64>,
    x1: &Vector3<f64>,
    eps: f64,
    k12: i32,
    branch: Branch,
) -> Result<BrockettParams> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if k12 == 0 {
        return Err(Error::InvalidArgument("k12 must be nonzero".into()));
    }
    let disc = steer_discriminant(x0, x1, k12);
    if disc < 0.0 {
        return Err(Error::InfeasibleSteer {
            k12,
            discriminant: disc,
        });
    }
    let d1 = x1[0] - x0[0];
    Ok(BrockettParams {
        v1: d1 / eps,
        v2: (x1[1] - x0[1]) / eps,
        a12: (d1 + branch.sign() * disc.sqrt()) / eps,
        k12,
        eps,
    })
}

/// Like [`steer`], retrying with `-k12` when the requested sign is
/// infeasible. One of the two signs always works.
pub fn steer_any_sign(
    x0: &Vector3<f64>,
    x1: &Vector3<f64>,
    eps: f64,
    k12: i32,
    branch: Branch,
) -> Result<BrockettParams> {
    match steer(x0, x1, eps, k12, branch) {
        Err(Error::InfeasibleSteer { .. }) => steer(x0, x1, eps, -k12, branch),
        other => other,
    }
}

/// Explicit stabilizing feedback: `v = -(x1, x2)`, `k = sign x3`,
/// `a = -x1 +/- sqrt(x1^2 + 2 pi |x3| / eps)`.
pub fn brockett_feedback_params(x: &Vector3<f64>, eps: f64, branch: Branch) -> BrockettParams {
    let (k12, a12) = if x[2] == 0.0 {
        (1, 0.0)
    } else {
        let k = if x[2] > 0.0 { 1 } else { -1 };
        let root = (x[0] * x[0] + 2.0 * PI * x[2].abs() / eps).sqrt();
        (k, -x[0] + branch.sign() * root)
    };
    BrockettParams {
        v1: -x[0],
        v2: -x[1],
        a12,
        k12,
        eps,
    }
}
