//! Seeded numerical checks of the expansion remainder, the a-priori growth
//! bound, the one-interval Lyapunov inequality and the synthesis residual.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{check_apriori, check_lyapunov_step, check_remainder, measure_regularity, BoundCheck};
use crate::brockett::{brockett_system, Branch, BROCKETT_RADIUS};
use crate::controller::{BrockettFeedback, SynthesizedFeedback};
use crate::error::{Error, Result};
use crate::lyapunov::default_lyapunov;
use crate::simulator::{integrate_open_loop, run_sampled, Trajectory};
use crate::synthesis::{residual, solve_params, ControlParams, SynthesisConfig};
use crate::systems::{perturbed_brockett, unicycle, DriftlessSystem};

/// Cases drawn by each randomized suite.
pub const CASES: usize = 50;
/// Largest `L U tau` used in the remainder suite.
pub const MAX_LUT: f64 = 0.5;
/// RK4 steps per period of the fastest oscillation in reference solutions.
const REFERENCE_STEPS: usize = 256;

/// Check suites. The command-line names are `lemma2` (remainder),
/// `lemma3` (Lyapunov decay), `lemma4` (a-priori growth), `synthesis` and
/// `all`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Suite {
    #[serde(rename = "lemma2")]
    Remainder,
    #[serde(rename = "lemma3")]
    LyapunovDecay,
    #[serde(rename = "lemma4")]
    Apriori,
    #[serde(rename = "synthesis")]
    Synthesis,
    #[serde(rename = "all")]
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemma2" => Ok(Suite::Remainder),
            "lemma3" => Ok(Suite::LyapunovDecay),
            "lemma4" => Ok(Suite::Apriori),
            "synthesis" => Ok(Suite::Synthesis),
            "all" => Ok(Suite::All),
            other => Err(Error::InvalidArgument(format!("unknown suite {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub checks: Vec<BoundCheck>,
    pub violations: usize,
    /// Smallest slack over all checks.
    pub min_slack: f64,
}

impl VerifyReport {
    fn new(suite: Suite, seed: u64, checks: Vec<BoundCheck>) -> Self {
        let violations = checks.iter().filter(|c| !c.pass).count();
        let min_slack = checks.iter().map(|c| c.slack).fold(f64::INFINITY, f64::min);
        Self { suite, seed, checks, violations, min_slack }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Uniform point in the closed ball of `radius` about the origin.
pub fn random_in_ball<R: Rng>(rng: &mut R, n: usize, radius: f64) -> DVector<f64> {
    loop {
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        if x.norm() <= 1.0 {
            return x * radius;
        }
    }
}

/// Random control parameters with `|v_i| <= 0.5`, `|a| <= 1` and
/// `|k| <= 2`.
pub fn random_params<R: Rng>(rng: &mut R, sys: &DriftlessSystem, eps: f64) -> ControlParams {
    let pairs = sys.brackets().len();
    let v = DVector::from_fn(sys.m(), |_, _| rng.random_range(-0.5..=0.5));
    let a = DVector::from_fn(pairs, |_, _| rng.random_range(-1.0..=1.0));
    let k = (0..pairs)
        .map(|_| {
            let k = rng.random_range(1..=2);
            if rng.random_bool(0.5) { k } else { -k }
        })
        .collect();
    ControlParams { v, a, k, eps }
}

/// Remainder checks on random intervals with `L U tau < MAX_LUT`.
pub fn remainder_checks(seed: u64, cases: usize) -> Result<Vec<BoundCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let systems = [unicycle(), perturbed_brockett()];
    let mut out = Vec::with_capacity(cases);
    for c in 0..cases {
        let sys = &systems[c % systems.len()];
        let x0 = random_in_ball(&mut rng, sys.n(), 0.5 * sys.domain_radius());
        let eps = rng.random_range(0.05..=0.4);
        let mut params = random_params(&mut rng, sys, eps);
        loop {
            let b = measure_regularity(sys, &x0, &params, params.eps)?;
            if b.l * b.u * params.eps < MAX_LUT {
                break;
            }
            params.eps *= 0.5;
        }
        let steps = REFERENCE_STEPS * params.max_frequency().max(1) as usize;
        let path = integrate_open_loop(sys, &params, &x0, steps)?;
        let mut check = check_remainder(sys, &x0, &params, path.last().expect("nonempty path"))?;
        check.quantity = format!("{} remainder", sys.name());
        out.push(check);
    }
    Ok(out)
}

/// Sampled runs used by the a-priori and Lyapunov suites.
fn sampled_runs(seed: u64) -> Result<Vec<(DriftlessSystem, Trajectory)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lyap = default_lyapunov(3);
    let mut runs = Vec::new();
    for eps in [0.25, 0.5] {
        let x0 = random_in_ball(&mut rng, 3, 0.5 * BROCKETT_RADIUS);
        let fb = BrockettFeedback { eps, branch: Branch::Plus };
        let traj = run_sampled(&brockett_system(), &fb, &lyap, &x0, 5, 256)?;
        runs.push((brockett_system(), traj));
    }
    for sys in [brockett_system(), unicycle()] {
        let x0 = random_in_ball(&mut rng, 3, 0.5 * sys.domain_radius());
        let fb = SynthesizedFeedback::new(sys.clone(), lyap.clone(), 0.1);
        let traj = run_sampled(&sys, &fb, &lyap, &x0, 20, 128)?;
        runs.push((sys, traj));
    }
    Ok(runs)
}

/// A-priori growth checks on every interval of the sampled runs.
pub fn apriori_checks(seed: u64) -> Result<Vec<BoundCheck>> {
    let mut out = Vec::new();
    for (sys, traj) in sampled_runs(seed)? {
        for j in 0..traj.intervals() {
            let mut c = check_apriori(&sys, &traj, j)?;
            c.quantity = format!("{} a-priori interval {j}", sys.name());
            out.push(c);
        }
    }
    Ok(out)
}

/// One-interval Lyapunov inequality on the nonzero intervals of the sampled
/// runs.
pub fn lyapunov_checks(seed: u64) -> Result<Vec<BoundCheck>> {
    let lyap = default_lyapunov(3);
    let mut out = Vec::new();
    for (sys, traj) in sampled_runs(seed)? {
        for (j, w) in traj.sample_states.windows(2).enumerate() {
            if w[0].norm() < 1e-12 {
                continue;
            }
            let mut c = check_lyapunov_step(&lyap, &w[0], &w[1], traj.eps)?;
            c.quantity = format!("{} lyapunov interval {j}", sys.name());
            out.push(c);
        }
    }
    Ok(out)
}

/// Synthesis residuals at random points of each system's domain ball.
pub fn synthesis_checks(seed: u64, cases: usize) -> Result<Vec<BoundCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lyap = default_lyapunov(3);
    let config = SynthesisConfig::default();
    let mut out = Vec::new();
    for sys in [brockett_system(), unicycle()] {
        for _ in 0..cases {
            let x = random_in_ball(&mut rng, sys.n(), sys.domain_radius());
            let eps = 0.1;
            let rep = solve_params(&sys, &lyap, &x, eps, &config)?;
            let r = residual(&sys, &lyap, &x, &rep.params)?.norm();
            out.push(BoundCheck::new(format!("{} synthesis residual", sys.name()), r, config.tol));
        }
    }
    Ok(out)
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<VerifyReport> {
    let checks = match suite {
        Suite::Remainder => remainder_checks(seed, CASES)?,
        Suite::LyapunovDecay => lyapunov_checks(seed)?,
        Suite::Apriori => apriori_checks(seed)?,
        Suite::Synthesis => synthesis_checks(seed, CASES)?,
        Suite::All => {
            let mut all = remainder_checks(seed, CASES)?;
            all.extend(lyapunov_checks(seed)?);
            all.extend(apriori_checks(seed)?);
            all.extend(synthesis_checks(seed, CASES)?);
            all
        }
    };
    Ok(VerifyReport::new(suite, seed, checks))
}
