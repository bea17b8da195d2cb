//! Scripted operators that close the loop for desk-scale experiments.
//!
//! Each policy is a saturated proportional controller on the error between the virtual
//! effector and the current target, acting through the body, the joystick, or both.

use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link::{ControlMode, JoystickSample, VirtualLink};
use crate::log::TrialLog;
use crate::se3::{Rotation, Transform};
use crate::session::{body_pose_message, InboundMessage, Session, SessionSetup, TrialOutcome, TrialRecorder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    BodyOnly,
    JoystickOnly,
    SequentialDual,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [Self::BodyOnly, Self::JoystickOnly, Self::SequentialDual];

    /// The control mode this policy is meant to drive.
    pub fn mode(self) -> ControlMode {
        match self {
            Self::BodyOnly => ControlMode::Body,
            Self::JoystickOnly => ControlMode::Joystick,
            Self::SequentialDual => ControlMode::Dual,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::BodyOnly => "body-only",
            Self::JoystickOnly => "joystick-only",
            Self::SequentialDual => "sequential-dual",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "body-only" | "bodyonly" => Ok(Self::BodyOnly),
            "joystick-only" | "joystickonly" => Ok(Self::JoystickOnly),
            "sequential-dual" | "sequentialdual" => Ok(Self::SequentialDual),
            _ => Err(format!(
                "unknown policy '{s}' (expected body-only, joystick-only or sequential-dual)"
            )),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("handoff_fraction must lie in (0, 1)")]
    Handoff,
    #[error("tremor_amplitude must be non-negative")]
    Tremor,
}

fn d_rot() -> f64 {
    0.8
}
fn d_trans() -> f64 {
    0.15
}
fn d_joy() -> f64 {
    0.15
}
fn d_handoff() -> f64 {
    0.2
}
fn d_gain() -> f64 {
    2.0
}
fn d_tremor() -> f64 {
    0.0005
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorPolicy {
    pub kind: PolicyKind,
    /// rad/s
    #[serde(default = "d_rot")]
    pub body_rot_speed_max: f64,
    /// m/s
    #[serde(default = "d_trans")]
    pub body_trans_speed_max: f64,
    /// m/s
    #[serde(default = "d_joy")]
    pub joystick_speed_max: f64,
    /// SequentialDual engages the joystick once the error falls to this fraction of the
    /// error at target appearance.
    #[serde(default = "d_handoff")]
    pub handoff_fraction: f64,
    /// Proportional gain on the observed error, 1/s.
    #[serde(default = "d_gain")]
    pub gain: f64,
    #[serde(default)]
    pub noise_seed: u64,
    /// Peak per-axis body translation jitter, m. Not applied to JoystickOnly.
    #[serde(default = "d_tremor")]
    pub tremor_amplitude: f64,
}

impl OperatorPolicy {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            body_rot_speed_max: d_rot(),
            body_trans_speed_max: d_trans(),
            joystick_speed_max: d_joy(),
            handoff_fraction: d_handoff(),
            gain: d_gain(),
            noise_seed: 0,
            tremor_amplitude: d_tremor(),
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        for (name, v) in [
            ("body_rot_speed_max", self.body_rot_speed_max),
            ("body_trans_speed_max", self.body_trans_speed_max),
            ("joystick_speed_max", self.joystick_speed_max),
            ("gain", self.gain),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PolicyError::NonPositive(name));
            }
        }
        if !(self.handoff_fraction > 0.0 && self.handoff_fraction < 1.0) {
            return Err(PolicyError::Handoff);
        }
        if !(self.tremor_amplitude >= 0.0 && self.tremor_amplitude.is_finite()) {
            return Err(PolicyError::Tremor);
        }
        Ok(())
    }
}

/// One tick of operator action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatorOutput {
    /// Increment in the body frame: the new body pose is `body * body_delta`.
    pub body_delta: Transform<f64>,
    pub joystick: JoystickSample<f64>,
}

/// Body increment that moves the link tip by `velocity_world * dt`: rotation for the part
/// perpendicular to the link, translation along it. Both parts share one scale factor so the
/// tip moves in a straight line even when a rate limit binds.
pub fn body_increment(
    policy: &OperatorPolicy,
    velocity_world: &Vector3<f64>,
    link: &VirtualLink<f64>,
    body: &Transform<f64>,
    dt: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let l = link.link_body;
    let ll = l.norm_squared();
    let u = body.rotation.transpose().apply(velocity_world);
    let (along, omega) = if ll > 1e-12 {
        let along = l * (u.dot(&l) / ll);
        let perp = u - along;
        (along, l.cross(&perp) / ll)
    } else {
        // No lever: translation only.
        (u, Vector3::zeros())
    };
    let mut scale: f64 = 1.0;
    let w = omega.norm();
    if w > policy.body_rot_speed_max {
        scale = scale.min(policy.body_rot_speed_max / w);
    }
    let v = along.norm();
    if v > policy.body_trans_speed_max {
        scale = scale.min(policy.body_trans_speed_max / v);
    }
    (omega * (scale * dt), along * (scale * dt))
}

/// Proportional velocity toward the target, capped at `max_speed`.
pub fn approach_velocity(observed_error: &Vector3<f64>, gain: f64, max_speed: f64) -> Vector3<f64> {
    let n = observed_error.norm();
    if n == 0.0 {
        return Vector3::zeros();
    }
    -observed_error * (gain * n).min(max_speed) / n
}

/// Smooth seeded jitter: two sinusoids per axis with amplitudes summing to the bound.
#[derive(Clone, Debug)]
struct Tremor {
    amplitude: f64,
    freq: [[f64; 2]; 3],
    phase: [[f64; 2]; 3],
}

impl Tremor {
    fn new(amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut freq = [[0.0; 2]; 3];
        let mut phase = [[0.0; 2]; 3];
        for axis in 0..3 {
            for k in 0..2 {
                freq[axis][k] = rng.random_range(0.3..1.5);
                phase[axis][k] = rng.random_range(0.0..std::f64::consts::TAU);
            }
        }
        Self {
            amplitude,
            freq,
            phase,
        }
    }

    fn at(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|axis, _| {
            let s: f64 = (0..2)
                .map(|k| (std::f64::consts::TAU * self.freq[axis][k] * t + self.phase[axis][k]).sin())
                .sum();
            // Zero at t = 0 so the body starts where it was placed.
            let s0: f64 = (0..2).map(|k| self.phase[axis][k].sin()).sum();
            0.25 * self.amplitude * (s - s0)
        })
    }
}

/// Stateful operator: a policy plus the per-target bookkeeping it needs.
#[derive(Clone, Debug)]
pub struct Operator {
    policy: OperatorPolicy,
    tremor: Option<Tremor>,
    t: f64,
    target_index: Option<usize>,
    initial_error: f64,
    joystick_phase: bool,
}

impl Operator {
    pub fn new(policy: OperatorPolicy) -> Self {
        let tremor = (policy.tremor_amplitude > 0.0 && policy.kind != PolicyKind::JoystickOnly)
            .then(|| Tremor::new(policy.tremor_amplitude, policy.noise_seed));
        Self {
            policy,
            tremor,
            t: 0.0,
            target_index: None,
            initial_error: 0.0,
            joystick_phase: false,
        }
    }

    pub fn policy(&self) -> &OperatorPolicy {
        &self.policy
    }

    /// True once SequentialDual has handed the current target over to the joystick.
    pub fn in_joystick_phase(&self) -> bool {
        self.joystick_phase
    }

    /// Registers the target currently shown; a new index resets the handoff latch.
    pub fn observe_target(&mut self, index: usize, observed_error: &Vector3<f64>) {
        if self.target_index != Some(index) {
            self.target_index = Some(index);
            self.initial_error = observed_error.norm();
            self.joystick_phase = false;
        }
    }

    /// One tick. `observed_error` is the virtual effector position minus the target.
    pub fn step(
        &mut self,
        observed_error: &Vector3<f64>,
        link: &VirtualLink<f64>,
        body: &Transform<f64>,
        dt: f64,
    ) -> OperatorOutput {
        let p = &self.policy;
        let now = self.t + dt;
        let wanted = approach_velocity(observed_error, p.gain, f64::INFINITY);
        let (mut omega, mut trans) = (Vector3::zeros(), Vector3::zeros());
        let mut joystick = Vector3::zeros();
        match p.kind {
            PolicyKind::BodyOnly => (omega, trans) = body_increment(p, &wanted, link, body, dt),
            PolicyKind::JoystickOnly => {
                joystick = approach_velocity(observed_error, p.gain, p.joystick_speed_max);
            }
            PolicyKind::SequentialDual => {
                if !self.joystick_phase
                    && observed_error.norm() <= p.handoff_fraction * self.initial_error
                {
                    self.joystick_phase = true;
                }
                if self.joystick_phase {
                    joystick = approach_velocity(observed_error, p.gain, p.joystick_speed_max);
                } else {
                    (omega, trans) = body_increment(p, &wanted, link, body, dt);
                }
            }
        }
        if let Some(tremor) = &self.tremor {
            trans += tremor.at(now) - tremor.at(self.t);
            let cap = p.body_trans_speed_max * dt;
            let n = trans.norm();
            if n > cap {
                trans *= cap / n;
            }
        }
        self.t = now;
        OperatorOutput {
            body_delta: Transform::new(Rotation::from_angle_axis(&omega), trans),
            joystick: JoystickSample {
                velocity_world: joystick,
                timestamp: now,
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("policy {policy} drives {expected} mode but the session is configured for {found}")]
    ModeMismatch {
        policy: PolicyKind,
        expected: ControlMode,
        found: ControlMode,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("could not start trial: {0}")]
    Start(String),
    #[error("trial {trial_id} aborted: {reason}")]
    Aborted {
        trial_id: u32,
        reason: String,
        /// Everything logged up to the abort.
        log: Box<TrialLog>,
    },
}

/// Runs one closed-loop trial from the home configuration and returns its logs.
///
/// The operator talks to the session through the same messages a live console sends, so the
/// output is schema-identical to a live session.
pub fn run_trial(policy: &OperatorPolicy, setup: &SessionSetup, trial_id: u32) -> Result<TrialLog, RunError> {
    policy.validate()?;
    let mode = setup.mode.mode;
    if policy.kind.mode() != mode {
        return Err(RunError::ModeMismatch {
            policy: policy.kind,
            expected: policy.kind.mode(),
            found: mode,
        });
    }
    let mut session = Session::new(setup.clone());
    session.set_next_trial_id(trial_id);
    let registry = setup.registry.clone();
    let mut body = setup.initial_body;
    let send = |session: &mut Session, msg: InboundMessage| {
        session
            .handle(&msg)
            .map_err(|e| RunError::Start(format!("scripted input rejected: {e}")))
    };
    send(&mut session, body_pose_message(&registry, &body, 0.0))?;
    let events = send(&mut session, InboundMessage::StartTrial {})?.unwrap_or_default();
    let header = session.trial_header().expect("trial just started");
    let mut recorder = TrialRecorder::new(header);
    recorder.log.events.extend(events);
    recorder.log.telemetry.push(session.current_snapshot());

    let mut operator = Operator::new(policy.clone());
    let dt = session.dt();
    loop {
        let (index, target) = session.current_target().expect("trial running");
        let desired = session.desired().translation;
        let error = desired - target;
        operator.observe_target(index, &error);
        let link = *session.link().expect("trial running");
        let out = operator.step(&error, &link, &body, dt);
        let now = session.now();
        if policy.kind != PolicyKind::JoystickOnly {
            body = body * out.body_delta;
            send(&mut session, body_pose_message(&registry, &body, now))?;
        } else if session.tick_index() % 10 == 0 {
            // Static body, still streamed like a live tracker would.
            send(&mut session, body_pose_message(&registry, &body, now))?;
        }
        if policy.kind != PolicyKind::BodyOnly {
            let d = setup
                .mode
                .deflection_for(&out.joystick.velocity_world)
                .map(|v| v.clamp(-1.0, 1.0));
            send(
                &mut session,
                InboundMessage::Joystick {
                    t: now,
                    deflection: [d.x, d.y, d.z],
                },
            )?;
        }
        let tick = session.tick();
        recorder.push(&tick);
        match tick.finished {
            Some((_, TrialOutcome::Completed)) => return Ok(recorder.log),
            Some((trial_id, TrialOutcome::Aborted { reason })) => {
                return Err(RunError::Aborted {
                    trial_id,
                    reason,
                    log: Box::new(recorder.log),
                })
            }
            None => {}
        }
    }
}
