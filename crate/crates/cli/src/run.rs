use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use nalgebra::{DVector, Vector3};
use nonholo::analysis::decay_check;
use nonholo::brockett::{exact_step, steer as steer_params, steer_any_sign, steer_discriminant, BrockettParams};
use nonholo::controller::{BrockettFeedback, Feedback, SynthesizedFeedback};
use nonholo::lyapunov::{default_lyapunov, quadratic_lyapunov, LyapunovSpec};
use nonholo::simulator::{format_float, integrate_open_loop, run_classical, run_sampled, Mode, Trajectory};
use nonholo::systems::{by_name, REGISTRY};
use nonholo::verify::{run_suite, Suite};
use nonholo::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::{FeedbackKind, RunOptions, SimulateArgs, SteerArgs, SweepArgs, VerifyArgs};

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_SYNTHESIS: u8 = 2;
pub const EXIT_ESCAPE: u8 = 3;
pub const EXIT_VIOLATION: u8 = 4;

const DEFAULT_INTERVALS: usize = 10;
const DEFAULT_T_FINAL: f64 = 20.0;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }
}

fn code_for(e: &Error) -> u8 {
    match e {
        Error::Synthesis { source, .. } => match **source {
            Error::DomainEscape { .. } | Error::NonFinite { .. } => EXIT_ESCAPE,
            _ => EXIT_SYNTHESIS,
        },
        Error::NoConvergence { .. }
        | Error::SingularBracketMatrix { .. }
        | Error::InfeasibleSteer { .. }
        | Error::Resonant => EXIT_SYNTHESIS,
        Error::DomainEscape { .. } | Error::NonFinite { .. } => EXIT_ESCAPE,
        _ => EXIT_CONFIG,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self { code: code_for(&e), message: e.to_string() }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::config(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn open_output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            CliError::config(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> CliResult<()> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::config(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// JSON has no infinity; an exactly vanishing state reports `null`.
fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub system: String,
    pub mode: &'static str,
    pub eps: f64,
    pub intervals: usize,
    pub initial_norm: f64,
    pub final_norm: f64,
    pub lambda_fit: Option<f64>,
    pub sigma: f64,
    pub decaying: bool,
    pub sample_states: Vec<Vec<f64>>,
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Sampled => "sampled",
        Mode::Classical => "classical",
    }
}

fn lyapunov_for(opts: &RunOptions, n: usize) -> CliResult<LyapunovSpec> {
    match &opts.weights {
        None => Ok(default_lyapunov(n)),
        Some(w) if w.len() != n => Err(CliError::config(format!("expected {n} Lyapunov weights, got {}", w.len()))),
        Some(w) => Ok(quadratic_lyapunov(w)?),
    }
}

fn feedback_for(opts: &RunOptions, eps: f64, lyap: &LyapunovSpec) -> CliResult<Box<dyn Feedback>> {
    let system = by_name(&opts.system).ok_or_else(|| {
        CliError::config(format!("unknown system {:?}; available: {}", opts.system, REGISTRY.join(", ")))
    })?;
    let closed = match opts.feedback {
        FeedbackKind::Auto => opts.system == "brockett",
        FeedbackKind::ClosedForm if opts.system != "brockett" => {
            return Err(CliError::config("closed-form feedback exists only for brockett"));
        }
        FeedbackKind::ClosedForm => true,
        FeedbackKind::Synthesized => false,
    };
    Ok(if closed {
        Box::new(BrockettFeedback { eps, branch: opts.branch })
    } else {
        Box::new(SynthesizedFeedback::new(system, lyap.clone(), eps))
    })
}

/// Runs one simulation and returns the trajectory with its summary.
pub fn simulate_one(opts: &RunOptions, eps: f64, x0: &[f64]) -> CliResult<(Trajectory, Summary)> {
    let system = by_name(&opts.system).ok_or_else(|| {
        CliError::config(format!("unknown system {:?}; available: {}", opts.system, REGISTRY.join(", ")))
    })?;
    if x0.len() != system.n() {
        return Err(CliError::config(format!(
            "{} has dimension {}, x0 has {} entries",
            system.name(),
            system.n(),
            x0.len()
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CliError::config(format!("eps must be positive, got {eps}")));
    }
    if opts.steps_per_interval == 0 {
        return Err(CliError::config("steps per interval must be positive"));
    }
    let lyap = lyapunov_for(opts, system.n())?;
    let feedback = feedback_for(opts, eps, &lyap)?;
    let x0 = DVector::from_column_slice(x0);
    let traj = match opts.mode {
        Mode::Sampled => {
            let intervals = match (opts.num_intervals, opts.t_final) {
                (Some(n), _) => n,
                (None, Some(t)) => (t / eps).round() as usize,
                (None, None) => DEFAULT_INTERVALS,
            };
            if intervals == 0 {
                return Err(CliError::config("need at least one interval"));
            }
            run_sampled(&system, feedback.as_ref(), &lyap, &x0, intervals, opts.steps_per_interval)?
        }
        Mode::Classical => {
            let t_final = match (opts.t_final, opts.num_intervals) {
                (Some(t), _) => t,
                (None, Some(n)) => n as f64 * eps,
                (None, None) => DEFAULT_T_FINAL,
            };
            if !(t_final >= eps) {
                return Err(CliError::config(format!("t_final must cover at least one interval, got {t_final}")));
            }
            run_classical(&system, feedback.as_ref(), &lyap, &x0, t_final, eps / opts.steps_per_interval as f64)?
        }
    };
    let decay = decay_check(&traj, &lyap)?;
    let summary = Summary {
        system: system.name().to_string(),
        mode: mode_name(opts.mode),
        eps,
        intervals: traj.intervals(),
        initial_norm: x0.norm(),
        final_norm: traj.final_state().norm(),
        lambda_fit: finite(decay.lambda),
        sigma: decay.sigma,
        decaying: decay.decaying,
        sample_states: traj.sample_states.iter().map(|x| x.as_slice().to_vec()).collect(),
    };
    Ok((traj, summary))
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let (traj, summary) = simulate_one(&args.run, args.run.eps, &args.x0)?;
    if let Some(path) = &args.out {
        let out = open_output(Some(path))?;
        traj.write_csv(out)?;
    }
    write_json(&summary, args.report.as_deref())
}

#[derive(Debug, Serialize)]
struct SteerReport {
    params: BrockettParams,
    discriminant: f64,
    x0: [f64; 3],
    x1: [f64; 3],
    endpoint_exact: [f64; 3],
    endpoint_rk4: [f64; 3],
    exact_error: f64,
    rk4_error: f64,
}

fn vec3(v: &[f64], what: &str) -> CliResult<Vector3<f64>> {
    if v.len() != 3 {
        return Err(CliError::config(format!("{what} needs 3 entries, got {}", v.len())));
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

pub fn steer(args: &SteerArgs) -> CliResult<()> {
    if args.system != "brockett" {
        return Err(CliError::config("steering is available for brockett only"));
    }
    if args.rk4_steps == 0 {
        return Err(CliError::config("rk4 steps must be positive"));
    }
    let x0 = vec3(&args.x0, "x0")?;
    let x1 = vec3(&args.x1, "x1")?;
    let params = if args.any_sign {
        steer_any_sign(&x0, &x1, args.eps, args.k12, args.branch)?
    } else {
        steer_params(&x0, &x1, args.eps, args.k12, args.branch)?
    };
    let exact = exact_step(&x0, &params);
    let start = DVector::from_column_slice(x0.as_slice());
    let path = integrate_open_loop(&nonholo::brockett::brockett_system(), &params.to_control_params(), &start, args.rk4_steps)?;
    let end = path.last().expect("at least one step");
    let rk4 = Vector3::new(end[0], end[1], end[2]);
    let report = SteerReport {
        params,
        discriminant: steer_discriminant(&x0, &x1, params.k12),
        x0: x0.into(),
        x1: x1.into(),
        endpoint_exact: exact.into(),
        endpoint_rk4: rk4.into(),
        exact_error: (exact - x1).norm(),
        rk4_error: (rk4 - x1).norm(),
    };
    write_json(&report, args.report.as_deref())
}

pub fn verify(args: &VerifyArgs) -> CliResult<()> {
    let report = run_suite(args.suite, args.seed)?;
    write_json(&report, args.report.as_deref())?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_VIOLATION,
            message: format!("{} bound violation(s) in suite {:?}", report.violations, args.suite as Suite),
        })
    }
}

#[derive(Debug)]
struct SweepRow {
    eps: f64,
    x0: Vec<f64>,
    outcome: CliResult<Summary>,
}

fn parse_state(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|c| c.trim().parse::<f64>().map_err(|e| CliError::config(format!("bad x0 entry {c:?} in {s:?}: {e}"))))
        .collect()
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("NONHOLO_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::config(format!("NONHOLO_THREADS must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::config(e.to_string()))
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format_float(v)
    }
}

pub fn sweep(args: &SweepArgs) -> CliResult<()> {
    if args.eps_list.is_empty() {
        return Err(CliError::config("empty eps list"));
    }
    if args.x0.is_empty() {
        return Err(CliError::config("empty x0 grid"));
    }
    let states = args.x0.iter().map(|s| parse_state(s)).collect::<CliResult<Vec<_>>>()?;
    let n = states[0].len();
    if states.iter().any(|s| s.len() != n) {
        return Err(CliError::config("x0 grid entries have different dimensions"));
    }
    let jobs: Vec<(f64, Vec<f64>)> = args
        .eps_list
        .iter()
        .flat_map(|&e| states.iter().map(move |x| (e, x.clone())))
        .collect();
    let pool = thread_pool()?;
    let rows: Vec<SweepRow> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(eps, x0)| {
                let outcome = simulate_one(&args.run, eps, &x0).map(|(_, s)| s);
                SweepRow { eps, x0, outcome }
            })
            .collect()
    });

    let out = open_output(args.out.as_deref())?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["eps".to_string()];
    header.extend((1..=n).map(|i| format!("x0_{i}")));
    header.extend(["status", "lambda", "sigma", "initial_norm", "final_norm", "message"].map(String::from));
    w.write_record(&header).map_err(|e| CliError::config(e.to_string()))?;
    for row in rows {
        let mut rec = vec![cell(row.eps)];
        rec.extend(row.x0.iter().map(|v| cell(*v)));
        match row.outcome {
            Ok(s) => rec.extend([
                "ok".to_string(),
                cell(s.lambda_fit.unwrap_or(f64::INFINITY)),
                cell(s.sigma),
                cell(s.initial_norm),
                cell(s.final_norm),
                String::new(),
            ]),
            Err(e) => rec.extend([
                format!("error{}", e.code),
                String::new(),
                String::new(),
                cell(row.x0.iter().map(|v| v * v).sum::<f64>().sqrt()),
                String::new(),
                e.message,
            ]),
        }
        w.write_record(&rec).map_err(|e| CliError::config(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
