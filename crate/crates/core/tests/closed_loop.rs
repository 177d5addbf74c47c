use nalgebra::{DVector, Vector3};
use nonholo::analysis::{decay_check, volterra_eps_closed};
use nonholo::brockett::{brockett_feedback_params, brockett_system, exact_step, Branch};
use nonholo::controller::{BrockettFeedback, SynthesizedFeedback};
use nonholo::lyapunov::{default_lyapunov, quadratic_lyapunov};
use nonholo::simulator::{read_csv, run_classical, run_sampled, Mode};
use nonholo::synthesis::{phi, solve_params, SynthesisConfig};
use nonholo::systems::{by_name, unicycle, REGISTRY};
use nonholo::verify::{run_suite, Suite};
use nonholo::Error;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

#[test]
fn registry_systems_satisfy_the_rank_condition() {
    for name in REGISTRY {
        let sys = by_name(name).unwrap();
        for x in [v(&[0.0, 0.0, 0.0]), v(&[0.3, -0.4, 0.5]), v(&[-0.9, 0.1, 0.2])] {
            let rank = sys.check_rank(&x, 1e-10).unwrap();
            assert!(rank.full_rank, "{name} at {x:?}");
        }
    }
    assert!(by_name("pendulum").is_none());
}

#[test]
fn synthesized_unicycle_run_decays() {
    let sys = unicycle();
    let lyap = default_lyapunov(3);
    let fb = SynthesizedFeedback::new(sys.clone(), lyap.clone(), 0.1);
    let traj = run_sampled(&sys, &fb, &lyap, &v(&[0.4, -0.3, 0.5]), 60, 128).unwrap();
    let report = decay_check(&traj, &lyap).unwrap();
    assert!(report.decaying, "{report:?}");
    assert!(report.lambda > 0.0);
    assert!(traj.final_state().norm() < 0.5 * 0.5f64.sqrt());
}

#[test]
fn synthesized_brockett_matches_gradient_step_to_second_order() {
    let sys = brockett_system();
    let lyap = default_lyapunov(3);
    let x = v(&[0.2, -0.1, 0.15]);
    for eps in [0.05, 0.1] {
        let rep = solve_params(&sys, &lyap, &x, eps, &SynthesisConfig::default()).unwrap();
        // the expansion is exact for this system, so one interval is an exact
        // gradient step up to the solver tolerance
        let next = volterra_eps_closed(&sys, &x, &rep.params).unwrap();
        assert!((next - (&x - &x * eps)).norm() < 1e-9 * eps);
    }
}

#[test]
fn closed_form_and_generic_brockett_feedback_agree_on_the_step() {
    let x = Vector3::new(0.3, 0.2, -0.4);
    let eps = 0.5;
    let closed = brockett_feedback_params(&x, eps, Branch::Plus);
    let next = exact_step(&x, &closed);
    assert!((next - x * (1.0 - eps)).norm() < 1e-14);
    let generic = solve_params(
        &brockett_system(),
        &default_lyapunov(3),
        &v(x.as_slice()),
        eps,
        &SynthesisConfig::default(),
    )
    .unwrap();
    let step = exact_step(
        &x,
        &nonholo::brockett::BrockettParams {
            v1: generic.params.v[0],
            v2: generic.params.v[1],
            a12: generic.params.a[0],
            k12: generic.params.k[0],
            eps,
        },
    );
    assert!((step - next).norm() < 1e-9);
}

#[test]
fn weighted_lyapunov_changes_the_target_direction() {
    let sys = unicycle();
    let x = v(&[0.2, 0.3, -0.1]);
    let a = phi(&sys, &default_lyapunov(3), &x).unwrap();
    let b = phi(&sys, &quadratic_lyapunov(&[1.0, 4.0, 1.0]).unwrap(), &x).unwrap();
    assert!((a - b).norm() > 1e-3);
}

#[test]
fn classical_and_sampled_modes_share_the_csv_format() {
    let sys = brockett_system();
    let lyap = default_lyapunov(3);
    let fb = BrockettFeedback { eps: 0.5, branch: Branch::Minus };
    let x0 = v(&[0.5, -0.5, 0.25]);
    for traj in [
        run_sampled(&sys, &fb, &lyap, &x0, 4, 64).unwrap(),
        run_classical(&sys, &fb, &lyap, &x0, 2.0, 0.5 / 64.0).unwrap(),
    ] {
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.times, traj.times);
        assert_eq!(back.states, traj.states);
        assert_eq!(back.lyapunov, traj.lyapunov);
        assert_eq!(traj.intervals(), 4);
        if traj.mode == Mode::Classical {
            assert!(traj.params.is_empty());
        }
    }
}

#[test]
fn escape_is_reported_with_time_and_norm() {
    let sys = brockett_system();
    let lyap = default_lyapunov(3);
    let fb = BrockettFeedback { eps: 3.0, branch: Branch::Plus };
    match run_sampled(&sys, &fb, &lyap, &v(&[1.0, 1.0, 1.0]), 20, 256) {
        Err(Error::DomainEscape { time, norm, limit }) => {
            assert!(time > 0.0 && norm > limit);
        }
        other => panic!("expected escape, got {other:?}"),
    }
}

#[test]
fn verify_suites_pass_for_another_seed() {
    for suite in [Suite::Remainder, Suite::LyapunovDecay, Suite::Apriori, Suite::Synthesis] {
        let report = run_suite(suite, 99).unwrap();
        assert!(report.passed(), "{suite:?}: {:?}", report.checks.iter().find(|c| !c.pass));
    }
}
