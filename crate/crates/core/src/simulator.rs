//! Fixed-step RK4 integration of sampled (sample-and-hold) and classical
//! closed loops.

use std::io::{Read, Write};

use nalgebra::DVector;

use crate::controller::{sampled_feedback, Feedback, SamplingSchedule};
use crate::error::{Error, Result};
use crate::lyapunov::LyapunovSpec;
use crate::synthesis::ControlParams;
use crate::systems::DriftlessSystem;

/// Integration steps per period of the fastest oscillation.
pub const STEPS_PER_PERIOD: usize = 64;
/// Minimum steps per period accepted by [`run_sampled`].
pub const MIN_STEPS_PER_PERIOD: usize = 16;
/// Runs abort once `|x|` exceeds this multiple of the domain radius.
pub const ESCAPE_FACTOR: f64 = 10.0;

/// One classical RK4 step for `x' = f(t, x)`.
pub fn rk4_step<F>(mut f: F, x: &DVector<f64>, t: f64, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    try_rk4_step(|t, x| Ok(f(t, x)), x, t, h)
}

/// [`rk4_step`] for a fallible right-hand side.
pub fn try_rk4_step<F>(mut f: F, x: &DVector<f64>, t: f64, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(x + &k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(x + &k3 * h))?;
    let next = x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    if next.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite { time: t + h });
    }
    Ok(next)
}

/// `sum_i u_i f_i(x)`.
pub fn system_velocity(sys: &DriftlessSystem, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    let mut dx = DVector::zeros(sys.n());
    for i in 0..sys.m() {
        if u[i] != 0.0 {
            dx += sys.field(i, x)? * u[i];
        }
    }
    Ok(dx)
}

/// Integrates one interval of open-loop control `params` from `x0`,
/// returning the `steps + 1` states including both endpoints.
pub fn integrate_open_loop(
    sys: &DriftlessSystem,
    params: &ControlParams,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    let h = params.eps / steps as f64;
    let pairs = sys.brackets();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.clone());
    let mut x = x0.clone();
    for i in 0..steps {
        let t = i as f64 * h;
        x = try_rk4_step(|s, y| system_velocity(sys, y, &params.u_eval(pairs, s)), &x, t, h)?;
        out.push(x.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sampled,
    Classical,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(Mode::Sampled),
            "classical" => Ok(Mode::Classical),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

/// A simulated run. Row `r` holds the state at `times[r]` and the control
/// applied from that instant on. Rows `j * steps_per_interval` are the
/// sampling instants `t_j = j eps`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub lyapunov: Vec<f64>,
    pub eps: f64,
    pub mode: Mode,
    pub steps_per_interval: usize,
    /// States at `t_j`; the first entry is the initial state.
    pub sample_states: Vec<DVector<f64>>,
    /// Parameters held on each interval (sampled mode only).
    pub params: Vec<ControlParams>,
}

impl Trajectory {
    pub fn intervals(&self) -> usize {
        self.sample_states.len().saturating_sub(1)
    }

    /// Row range `[t_j, t_{j+1}]` of interval `j`, both ends included.
    pub fn interval_rows(&self, j: usize) -> std::ops::RangeInclusive<usize> {
        let s = self.steps_per_interval;
        j * s..=((j + 1) * s).min(self.states.len() - 1)
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one state")
    }

    /// CSV with header `t,x1..xn,u1..um,V`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.controls.first().map_or(0, |u| u.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.push("V".into());
        w.write_record(&header)?;
        for r in 0..self.times.len() {
            let row = std::iter::once(self.times[r])
                .chain(self.states[r].iter().copied())
                .chain(self.controls[r].iter().copied())
                .chain(std::iter::once(self.lyapunov[r]))
                .map(format_float);
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Columns of a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub lyapunov: Vec<f64>,
}

pub fn read_csv<R: Read>(input: R) -> Result<CsvTrajectory> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let n = header.iter().filter(|h| h.starts_with('x')).count();
    let m = header.iter().filter(|h| h.starts_with('u')).count();
    if header.len() != n + m + 2 {
        return Err(Error::InvalidArgument("unexpected trajectory CSV header".into()));
    }
    let mut out = CsvTrajectory {
        times: Vec::new(),
        states: Vec::new(),
        controls: Vec::new(),
        lyapunov: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad number {s:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        out.times.push(vals[0]);
        out.states.push(DVector::from_column_slice(&vals[1..1 + n]));
        out.controls.push(DVector::from_column_slice(&vals[1 + n..1 + n + m]));
        out.lyapunov.push(vals[1 + n + m]);
    }
    Ok(out)
}

fn guard(sys: &DriftlessSystem, x: &DVector<f64>, t: f64) -> Result<()> {
    if x.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite { time: t });
    }
    let limit = ESCAPE_FACTOR * sys.domain_radius();
    let norm = x.norm();
    if norm > limit {
        return Err(Error::DomainEscape { time: t, norm, limit });
    }
    Ok(())
}

/// Sample-and-hold run: parameters are recomputed from `x(t_j)` and held on
/// `[t_j, t_{j+1})`.
pub fn run_sampled(
    sys: &DriftlessSystem,
    feedback: &dyn Feedback,
    lyap: &LyapunovSpec,
    x0: &DVector<f64>,
    num_intervals: usize,
    steps_per_interval: usize,
) -> Result<Trajectory> {
    if x0.len() != sys.n() {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: sys.n(),
            got: x0.len(),
        });
    }
    if steps_per_interval == 0 {
        return Err(Error::InvalidArgument("need at least one step per interval".into()));
    }
    let schedule = SamplingSchedule::new(feedback.eps())?;
    let eps = schedule.eps();
    let h = eps / steps_per_interval as f64;
    let pairs = sys.brackets();
    guard(sys, x0, 0.0)?;

    let mut traj = Trajectory {
        times: vec![],
        states: vec![],
        controls: vec![],
        lyapunov: vec![],
        eps,
        mode: Mode::Sampled,
        steps_per_interval,
        sample_states: vec![x0.clone()],
        params: vec![],
    };
    let mut x = x0.clone();
    for j in 0..num_intervals {
        let t0 = schedule.sample_time(j);
        let params = sampled_feedback(feedback, j, &x)?;
        let needed = MIN_STEPS_PER_PERIOD * params.max_frequency() as usize;
        if steps_per_interval < needed {
            return Err(Error::InvalidArgument(format!(
                "{steps_per_interval} steps per interval cannot resolve |k| = {} (need {needed})",
                params.max_frequency()
            )));
        }
        for i in 0..steps_per_interval {
            let local = i as f64 * h;
            traj.times.push(t0 + local);
            traj.controls.push(params.u_eval(pairs, local));
            traj.lyapunov.push(lyap.value(&x));
            traj.states.push(x.clone());
            x = try_rk4_step(
                |s, y| system_velocity(sys, y, &params.u_eval(pairs, s)),
                &x,
                local,
                h,
            )?;
            guard(sys, &x, t0 + local + h)?;
        }
        traj.sample_states.push(x.clone());
        traj.params.push(params);
    }
    let t_end = schedule.sample_time(num_intervals);
    let last = sampled_feedback(feedback, num_intervals, &x)?;
    traj.times.push(t_end);
    traj.controls.push(last.u_eval(pairs, 0.0));
    traj.lyapunov.push(lyap.value(&x));
    traj.states.push(x);
    Ok(traj)
}

/// Classical closed loop `x' = f(x, u(t, x(t)))`: parameters are recomputed
/// from the current state at every RK4 stage and the oscillation phase uses
/// absolute time. `step` is rounded so that an integer number of steps fits
/// in one `eps`.
pub fn run_classical(
    sys: &DriftlessSystem,
    feedback: &dyn Feedback,
    lyap: &LyapunovSpec,
    x0: &DVector<f64>,
    t_final: f64,
    step: f64,
) -> Result<Trajectory> {
    if x0.len() != sys.n() {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: sys.n(),
            got: x0.len(),
        });
    }
    if !(step > 0.0) || !(t_final >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need step > 0 and t_final >= 0, got {step} and {t_final}"
        )));
    }
    let schedule = SamplingSchedule::new(feedback.eps())?;
    let eps = schedule.eps();
    let per_eps = ((eps / step).round() as usize).max(1);
    let h = eps / per_eps as f64;
    let total = (t_final / h).round() as usize;
    let pairs = sys.brackets();
    guard(sys, x0, 0.0)?;

    let time_of = |i: usize| schedule.sample_time(i / per_eps) + (i % per_eps) as f64 * h;
    let control = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let p = sampled_feedback(feedback, schedule.interval_of(t), y)?;
        Ok(p.u_eval(pairs, t))
    };

    let mut traj = Trajectory {
        times: vec![],
        states: vec![],
        controls: vec![],
        lyapunov: vec![],
        eps,
        mode: Mode::Classical,
        steps_per_interval: per_eps,
        sample_states: vec![x0.clone()],
        params: vec![],
    };
    let mut x = x0.clone();
    for i in 0..total {
        let t = time_of(i);
        traj.times.push(t);
        traj.controls.push(control(t, &x)?);
        traj.lyapunov.push(lyap.value(&x));
        traj.states.push(x.clone());
        x = try_rk4_step(|s, y| system_velocity(sys, y, &control(s, y)?), &x, t, h)?;
        guard(sys, &x, t + h)?;
        if (i + 1) % per_eps == 0 {
            traj.sample_states.push(x.clone());
        }
    }
    let t_end = time_of(total);
    traj.times.push(t_end);
    traj.controls.push(control(t_end, &x)?);
    traj.lyapunov.push(lyap.value(&x));
    traj.states.push(x);
    Ok(traj)
}
