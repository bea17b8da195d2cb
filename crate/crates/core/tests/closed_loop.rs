use std::path::PathBuf;

use bodylink::arm::{ArmDescription, ServoConfig, WorkspaceBox};
use bodylink::link::{ControlMode, ModeConfig};
use bodylink::log::TrialLog;
use bodylink::metrics::{completion_times, median_contributions, reaches, CURVE_POINTS};
use bodylink::operator::{run_trial, OperatorPolicy, PolicyKind, RunError};
use bodylink::se3::{FrameRegistry, Rotation, Transform};
use bodylink::session::SessionSetup;
use bodylink::trial::{EventKind, TrialSpec};
use nalgebra::Vector3;

fn arm_description() -> ArmDescription {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/gen3_like.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn setup(mode: ControlMode, n_pairs: usize) -> SessionSetup {
    let registry = FrameRegistry {
        world_from_optical: Transform::new(Rotation::rx(std::f64::consts::FRAC_PI_2), Vector3::new(2.0, 0.0, 0.0)),
        world_from_headset: Transform::from_translation(Vector3::new(1.5, 0.0, 1.6)),
        world_from_robot_base: Transform::from_translation(Vector3::new(0.0, 0.0, 0.75)),
    };
    let desc = arm_description();
    let arm = desc.build::<f64>().unwrap().with_base_frame(registry.world_from_robot_base);
    let workspace = WorkspaceBox {
        min: Vector3::new(0.1, -0.6, 0.5),
        max: Vector3::new(0.9, 0.6, 1.5),
    };
    SessionSetup {
        registry,
        arm,
        home: desc.home_state(),
        servo: ServoConfig::new(0.5, 1e-3, 0.01, workspace).unwrap(),
        mode: ModeConfig::new(mode, 0.2, 0.2).unwrap(),
        trial: TrialSpec { n_pairs, seed: Some(3), ..TrialSpec::new(mode) },
        initial_body: Transform::new(Rotation::rz(std::f64::consts::PI), Vector3::new(1.45, 0.0, 1.25)),
        tick_rate_control: 100,
        tick_rate_telemetry: 30,
        session_id: "test".into(),
        config_hash: "0".into(),
        participant_id: "sim".into(),
    }
}

fn validations(log: &TrialLog) -> usize {
    log.events.iter().filter(|e| e.event.kind == EventKind::TargetValidated).count()
}

#[test]
fn every_policy_finishes_a_short_trial() {
    for kind in PolicyKind::ALL {
        let log = run_trial(&OperatorPolicy::new(kind), &setup(kind.mode(), 3), 0)
            .unwrap_or_else(|e| panic!("{kind}: {e}"));
        assert_eq!(validations(&log), 6, "{kind}");
        let last = log.events.last().unwrap();
        assert_eq!(last.event.kind, EventKind::TrialCompleted);
    }
}

#[test]
fn policy_mode_mismatch_is_rejected() {
    let err = run_trial(&OperatorPolicy::new(PolicyKind::BodyOnly), &setup(ControlMode::Joystick, 1), 0).unwrap_err();
    assert!(err.to_string().contains("body-only"));
}

#[test]
fn sequential_dual_is_mostly_body_and_body_leads() {
    let log = run_trial(&OperatorPolicy::new(PolicyKind::SequentialDual), &setup(ControlMode::Dual, 15), 0).unwrap();
    let series: Vec<_> = reaches(&log).unwrap().iter().map(|r| r.contributions()).collect();
    assert_eq!(series.len(), 30);
    let medians = median_contributions(&series, CURVE_POINTS);
    // Body frame: x is depth, y and z are lateral.
    for m in medians.iter().filter(|m| m.axis > 0) {
        let b = *m.b.last().unwrap();
        assert!(b > 0.5 && b < 1.0, "axis {}: b(t_f) = {b}", m.axis);
    }
    for m in &medians {
        assert!(m.b_half_rise.unwrap() < m.j_half_rise.unwrap(), "axis {}", m.axis);
    }
}

fn body_poses(log: &TrialLog) -> Vec<Transform<f64>> {
    log.telemetry.iter().map(|s| s.body).collect()
}

#[test]
fn policy_purity_and_rate_limits() {
    for kind in PolicyKind::ALL {
        let policy = OperatorPolicy::new(kind);
        let mut s = setup(kind.mode(), 2);
        // Telemetry at the control rate so consecutive rows are consecutive ticks.
        s.tick_rate_telemetry = s.tick_rate_control;
        let log = run_trial(&policy, &s, 0).unwrap();
        let poses = body_poses(&log);
        let dt = 1.0 / f64::from(s.tick_rate_control);
        for (w, pair) in log.telemetry.windows(2).zip(poses.windows(2)) {
            if w[1].tick != w[0].tick + 1 {
                continue;
            }
            let rel = pair[0].inverse() * pair[1];
            assert!(rel.translation.norm() / dt <= policy.body_trans_speed_max + 1e-9, "{kind}");
            assert!(rel.rotation.angle_axis().norm() / dt <= policy.body_rot_speed_max + 1e-9, "{kind}");
        }
        let joystick_moving = log.telemetry.iter().any(|r| r.joystick_velocity != [0.0; 3]);
        match kind {
            PolicyKind::BodyOnly => assert!(!joystick_moving),
            PolicyKind::JoystickOnly => assert!(poses.iter().all(|p| *p == poses[0])),
            PolicyKind::SequentialDual => {
                let first_body = poses.windows(2).position(|w| w[0] != w[1]).unwrap();
                let first_joy = log.telemetry.iter().position(|r| r.joystick_velocity != [0.0; 3]).unwrap();
                assert!(first_body < first_joy);
            }
        }
    }
}

#[test]
fn same_inputs_same_logs() {
    let s = setup(ControlMode::Dual, 2);
    let policy = OperatorPolicy { noise_seed: 9, ..OperatorPolicy::new(PolicyKind::SequentialDual) };
    let a = run_trial(&policy, &s, 3).unwrap();
    let b = run_trial(&policy, &s, 3).unwrap();
    assert_eq!(a.events_jsonl(), b.events_jsonl());
    assert_eq!(a.telemetry_jsonl(), b.telemetry_jsonl());
    assert_eq!(a.header.trial_id, 3);
    let other = run_trial(&OperatorPolicy { noise_seed: 10, ..policy }, &s, 3).unwrap();
    assert_ne!(a.telemetry_jsonl(), other.telemetry_jsonl());
}

#[test]
fn logs_survive_a_text_round_trip() {
    let log = run_trial(&OperatorPolicy::new(PolicyKind::JoystickOnly), &setup(ControlMode::Joystick, 1), 0).unwrap();
    let parsed = TrialLog::parse(&log.events_jsonl(), &log.telemetry_jsonl()).unwrap();
    assert_eq!(parsed, log);
    assert_eq!(completion_times(&parsed).unwrap().len(), 2);
}

#[test]
fn watchdog_aborts_unreachable_targets() {
    let mut s = setup(ControlMode::Joystick, 1);
    s.trial.target_timeout = 3.0;
    // Far too slow to get anywhere in time.
    let policy = OperatorPolicy { joystick_speed_max: 1e-4, ..OperatorPolicy::new(PolicyKind::JoystickOnly) };
    match run_trial(&policy, &s, 0) {
        Err(RunError::Aborted { reason, log, .. }) => {
            assert!(reason.contains("target 0"), "{reason}");
            assert_eq!(log.events.last().unwrap().event.kind, EventKind::TrialAborted);
            assert!(log.events.last().unwrap().event.t <= 3.0 + 0.011);
        }
        other => panic!("{other:?}"),
    }
}
