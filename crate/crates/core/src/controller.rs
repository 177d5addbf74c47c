//! Sample-and-hold evaluation of the trigonometric feedback.
//!
//! Parameters are frozen at the sampling instants `t_j = j eps`. Within an
//! interval the oscillation phase is measured from the interval start; with
//! integer frequencies this coincides with using absolute time, since
//! `cos(2 pi k (t_j + s) / eps) = cos(2 pi k s / eps)`.

use nalgebra::{DVector, Vector3};

use crate::brockett::{brockett_feedback_params, Branch};
use crate::error::{Error, Result};
use crate::lyapunov::LyapunovSpec;
use crate::synthesis::{solve_params, ControlParams, SynthesisConfig};
use crate::systems::DriftlessSystem;

/// Uniform partition of `[0, inf)` into intervals `[j eps, (j + 1) eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingSchedule {
    eps: f64,
}

impl SamplingSchedule {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        Ok(Self { eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `t_j = j eps`, computed by multiplication so no error accumulates.
    pub fn sample_time(&self, j: usize) -> f64 {
        j as f64 * self.eps
    }

    /// Index of the interval containing `t >= 0`.
    pub fn interval_of(&self, t: f64) -> usize {
        let j = (t / self.eps).floor().max(0.0) as usize;
        // guard against rounding putting t just below a boundary into j + 1
        if self.sample_time(j) > t && j > 0 {
            j - 1
        } else if self.sample_time(j + 1) <= t {
            j + 1
        } else {
            j
        }
    }
}

/// Maps a state to the control parameters held on the next interval.
pub trait Feedback: Send + Sync {
    fn params_at(&self, x: &DVector<f64>) -> Result<ControlParams>;

    fn eps(&self) -> f64;
}

/// Parameters from the generic algebraic-system solver.
#[derive(Debug, Clone)]
pub struct SynthesizedFeedback {
    pub system: DriftlessSystem,
    pub lyapunov: LyapunovSpec,
    pub eps: f64,
    pub config: SynthesisConfig,
}

impl SynthesizedFeedback {
    pub fn new(system: DriftlessSystem, lyapunov: LyapunovSpec, eps: f64) -> Self {
        Self {
            system,
            lyapunov,
            eps,
            config: SynthesisConfig::default(),
        }
    }
}

impl Feedback for SynthesizedFeedback {
    fn params_at(&self, x: &DVector<f64>) -> Result<ControlParams> {
        Ok(solve_params(&self.system, &self.lyapunov, x, self.eps, &self.config)?.params)
    }

    fn eps(&self) -> f64 {
        self.eps
    }
}

/// Closed-form feedback for the Brockett integrator.
#[derive(Debug, Clone, Copy)]
pub struct BrockettFeedback {
    pub eps: f64,
    pub branch: Branch,
}

impl Feedback for BrockettFeedback {
    fn params_at(&self, x: &DVector<f64>) -> Result<ControlParams> {
        if x.len() != 3 {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: 3,
                got: x.len(),
            });
        }
        let x = Vector3::new(x[0], x[1], x[2]);
        Ok(brockett_feedback_params(&x, self.eps, self.branch).to_control_params())
    }

    fn eps(&self) -> f64 {
        self.eps
    }
}

/// Parameters held on interval `interval`, computed from the state sampled
/// at its start. Zero state gives the zero control.
pub fn sampled_feedback(
    feedback: &dyn Feedback,
    interval: usize,
    state: &DVector<f64>,
) -> Result<ControlParams> {
    feedback.params_at(state).map_err(|e| Error::Synthesis {
        interval,
        source: Box::new(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brockett::brockett_system;
    use crate::lyapunov::default_lyapunov;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn schedule_times_do_not_drift() {
        let s = SamplingSchedule::new(0.1).unwrap();
        assert_eq!(s.sample_time(1000), 1000.0 * 0.1);
        assert_eq!(s.interval_of(0.0), 0);
        assert_eq!(s.interval_of(s.sample_time(7)), 7);
        assert_eq!(s.interval_of(0.35), 3);
        assert!(SamplingSchedule::new(0.0).is_err());
    }

    #[test]
    fn zero_state_gives_zero_control() {
        let fb = SynthesizedFeedback::new(brockett_system(), default_lyapunov(3), 0.5);
        assert!(sampled_feedback(&fb, 0, &DVector::zeros(3)).unwrap().is_zero());
        let fb = BrockettFeedback { eps: 0.5, branch: Branch::Plus };
        assert!(sampled_feedback(&fb, 0, &DVector::zeros(3)).unwrap().is_zero());
    }

    #[test]
    fn brockett_feedback_at_bracket_direction() {
        let fb = BrockettFeedback { eps: 1.0, branch: Branch::Plus };
        let p = sampled_feedback(&fb, 3, &DVector::from_vec(vec![0.0, 0.0, 1.0])).unwrap();
        assert_eq!(p.v, DVector::zeros(2));
        assert_eq!(p.k, vec![1]);
        assert_abs_diff_eq!(p.a[0], (2.0 * PI).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn failure_carries_interval_index() {
        let mut fb = SynthesizedFeedback::new(brockett_system(), default_lyapunov(3), 0.5);
        fb.config.max_iter = 0;
        let err = sampled_feedback(&fb, 4, &DVector::from_vec(vec![0.3, 0.2, 0.1])).unwrap_err();
        assert!(matches!(err, Error::Synthesis { interval: 4, .. }));
    }

    /// Composite Gauss-Legendre on many panels; the oscillating terms
    /// integrate to zero over a period.
    #[test]
    fn interval_mean_is_v() {
        let pairs = [(0, 1)];
        let p = ControlParams {
            v: DVector::from_vec(vec![0.4, -1.1]),
            a: DVector::from_vec(vec![2.3]),
            k: vec![-3],
            eps: 0.7,
        };
        let nodes = [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
        let weights = [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189];
        let panels = 200;
        let h = p.eps / panels as f64;
        let mut mean = DVector::zeros(2);
        for i in 0..panels {
            let mid = (i as f64 + 0.5) * h;
            for (x, w) in nodes.iter().zip(weights) {
                mean += p.u_eval(&pairs, mid + 0.5 * h * x) * (0.5 * h * w);
            }
        }
        mean /= p.eps;
        assert_abs_diff_eq!(mean, p.v, epsilon = 1e-12);
    }

    #[test]
    fn absolute_and_local_phase_agree() {
        let pairs = [(0, 1)];
        let p = ControlParams {
            v: DVector::from_vec(vec![0.1, 0.2]),
            a: DVector::from_vec(vec![1.0]),
            k: vec![2],
            eps: 0.5,
        };
        let s = SamplingSchedule::new(0.5).unwrap();
        for j in [1, 5, 40] {
            let local = p.u_eval(&pairs, 0.13);
            let absolute = p.u_eval(&pairs, s.sample_time(j) + 0.13);
            assert_abs_diff_eq!(local, absolute, epsilon = 1e-12);
        }
    }
}
