//! Fixed-tick session loop: latest inputs -> control law -> resolved-rate servo -> trial
//! state machine -> events and telemetry.
//!
//! Time is virtual: tick `n` happens at `n / tick_rate_control` seconds regardless of wall
//! clock, so identical inputs give identical logs. Inputs are held latest-wins between ticks.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{JointState, SerialArm, ServoConfig};
use crate::link::{BodyState, ControlMode, JoystickSample, LinkController, ModeConfig, VirtualLink};
use crate::log::{
    EventRecord, Flags, LogHeader, LogKind, Snapshot, TargetInfo, TrialLog, TrialStatus,
    SCHEMA_VERSION,
};
use crate::se3::{Frame, FrameRegistry, Rotation, Transform};
use crate::trial::{self, EventKind, TargetSequence, TrialError, TrialEvent, TrialSpec, TrialState};

/// Messages a console (or a scripted operator) sends to a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InboundMessage {
    /// Body pose in the optical frame; rotation as quaternion `[w, x, y, z]`.
    BodyPose {
        t: f64,
        translation: [f64; 3],
        rotation: [f64; 4],
    },
    /// Joystick deflection, each axis in `[-1, 1]`.
    Joystick { t: f64, deflection: [f64; 3] },
    SetMode { mode: ControlMode },
    StartTrial {},
    Heartbeat {},
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InputRejected {
    #[error("{stream} timestamp {t} is older than {last}")]
    NonMonotone { stream: &'static str, t: f64, last: f64 },
    #[error("joystick deflection {0:?} outside [-1, 1]")]
    Deflection([f64; 3]),
    #[error("bad body pose: {0}")]
    BodyPose(String),
    #[error("mode changes are only accepted between trials")]
    ModeLocked,
    #[error("a trial is already running")]
    TrialRunning,
    #[error("cannot start trial: {0}")]
    Trial(#[from] TrialError),
}

/// Everything a session needs, already validated and resolved.
#[derive(Clone, Debug)]
pub struct SessionSetup {
    pub registry: FrameRegistry<f64>,
    /// Arm whose base frame is the registered robot base.
    pub arm: SerialArm<f64>,
    pub home: JointState<f64>,
    pub servo: ServoConfig<f64>,
    pub mode: ModeConfig<f64>,
    /// Trial template; a `None` center resolves to the effector position at trial start.
    pub trial: TrialSpec,
    /// Body pose in `W` assumed until the first body message arrives.
    pub initial_body: Transform<f64>,
    pub tick_rate_control: u32,
    pub tick_rate_telemetry: u32,
    pub session_id: String,
    pub config_hash: String,
    pub participant_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrialOutcome {
    Completed,
    Aborted { reason: String },
}

/// What one tick produced.
#[derive(Clone, Debug, Default)]
pub struct TickOutput {
    pub events: Vec<EventRecord>,
    pub snapshot: Option<Snapshot>,
    /// Set on the tick where the running trial ended.
    pub finished: Option<(u32, TrialOutcome)>,
}

struct ActiveTrial {
    id: u32,
    spec: TrialSpec,
    seq: TargetSequence,
    state: TrialState,
    controller: LinkController<f64>,
    status: TrialStatus,
}

pub struct Session {
    setup: SessionSetup,
    q: JointState<f64>,
    tick: u64,
    body: BodyState<f64>,
    body_client_t: Option<f64>,
    deflection: Vector3<f64>,
    joystick_client_t: Option<f64>,
    mode: ControlMode,
    hold: Transform<f64>,
    trial: Option<ActiveTrial>,
    next_trial_id: u32,
    last_velocity: Vector3<f64>,
    rejected_inputs: u64,
}

impl Session {
    pub fn new(setup: SessionSetup) -> Self {
        let q = setup.home.clone();
        let hold = setup.arm.forward_kinematics(&q);
        let body = BodyState {
            world_from_body: setup.initial_body,
            timestamp: 0.0,
        };
        let mode = setup.mode.mode;
        Self {
            setup,
            q,
            tick: 0,
            body,
            body_client_t: None,
            deflection: Vector3::zeros(),
            joystick_client_t: None,
            mode,
            hold,
            trial: None,
            next_trial_id: 0,
            last_velocity: Vector3::zeros(),
            rejected_inputs: 0,
        }
    }

    pub fn setup(&self) -> &SessionSetup {
        &self.setup
    }

    pub fn now(&self) -> f64 {
        self.tick as f64 / f64::from(self.setup.tick_rate_control)
    }

    pub fn dt(&self) -> f64 {
        1.0 / f64::from(self.setup.tick_rate_control)
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    pub fn joints(&self) -> &JointState<f64> {
        &self.q
    }

    pub fn effector(&self) -> Transform<f64> {
        self.setup.arm.forward_kinematics(&self.q)
    }

    pub fn body(&self) -> &BodyState<f64> {
        &self.body
    }

    pub fn rejected_inputs(&self) -> u64 {
        self.rejected_inputs
    }

    pub fn trial_running(&self) -> bool {
        self.trial
            .as_ref()
            .is_some_and(|t| t.status == TrialStatus::Running)
    }

    /// Virtual effector pose currently commanded.
    pub fn desired(&self) -> Transform<f64> {
        match &self.trial {
            Some(t) => *t.controller.last_desired(),
            None => self.hold,
        }
    }

    /// Virtual link of the current (or last) trial.
    pub fn link(&self) -> Option<&VirtualLink<f64>> {
        self.trial.as_ref().map(|t| t.controller.link())
    }

    /// Id given to the next trial started; ids otherwise count up from zero.
    pub fn set_next_trial_id(&mut self, id: u32) {
        self.next_trial_id = id;
    }

    /// Position of the target currently shown, if a trial is running.
    pub fn current_target(&self) -> Option<(usize, Vector3<f64>)> {
        let t = self.trial.as_ref().filter(|t| t.status == TrialStatus::Running)?;
        let i = t.state.current_target_index;
        Some((i, t.seq.targets[i]))
    }

    pub fn mode_config(&self) -> &ModeConfig<f64> {
        &self.setup.mode
    }

    /// Applies one inbound message; it takes effect at the next tick. Body poses are stamped
    /// with the session clock on arrival.
    pub fn handle(&mut self, msg: &InboundMessage) -> Result<Option<Vec<EventRecord>>, InputRejected> {
        let result = self.handle_inner(msg);
        if result.is_err() {
            self.rejected_inputs += 1;
        }
        result
    }

    fn handle_inner(&mut self, msg: &InboundMessage) -> Result<Option<Vec<EventRecord>>, InputRejected> {
        match msg {
            InboundMessage::BodyPose {
                t,
                translation,
                rotation,
            } => {
                check_monotone("body_pose", *t, self.body_client_t)?;
                let [w, x, y, z] = *rotation;
                let r = Rotation::from_quaternion_checked(w, x, y, z)
                    .map_err(|e| InputRejected::BodyPose(e.to_string()))?;
                if translation.iter().any(|v| !v.is_finite()) {
                    return Err(InputRejected::BodyPose("non-finite translation".into()));
                }
                let optical = Transform::new(r, Vector3::from(*translation));
                self.body = BodyState {
                    world_from_body: self.setup.registry.to_world(Frame::Optical, &optical),
                    timestamp: self.now(),
                };
                self.body_client_t = Some(*t);
                Ok(None)
            }
            InboundMessage::Joystick { t, deflection } => {
                check_monotone("joystick", *t, self.joystick_client_t)?;
                if deflection.iter().any(|d| !d.is_finite() || d.abs() > 1.0 + 1e-9) {
                    return Err(InputRejected::Deflection(*deflection));
                }
                self.deflection = Vector3::from(*deflection);
                self.joystick_client_t = Some(*t);
                Ok(None)
            }
            InboundMessage::SetMode { mode } => {
                if self.trial_running() {
                    return Err(InputRejected::ModeLocked);
                }
                self.mode = *mode;
                Ok(None)
            }
            InboundMessage::StartTrial {} => self.start_trial().map(Some),
            InboundMessage::Heartbeat {} => Ok(None),
        }
    }

    /// Starts a trial at the current time: shapes the link from the current body and real
    /// effector poses and shows the first target.
    pub fn start_trial(&mut self) -> Result<Vec<EventRecord>, InputRejected> {
        if self.trial_running() {
            return Err(InputRejected::TrialRunning);
        }
        let effector = self.effector();
        let mut spec = self.setup.trial.clone();
        spec.mode = self.mode;
        if spec.center.is_none() {
            spec = spec.centered_at(&effector.translation);
        }
        let seq = trial::build_sequence(&spec)?;
        let now = self.now();
        let controller = LinkController::start(self.mode, &self.body, &effector);
        let (state, events) = trial::start(&seq, &spec, &effector.translation, now);
        let id = self.next_trial_id;
        self.next_trial_id += 1;
        self.trial = Some(ActiveTrial {
            id,
            spec,
            seq,
            state,
            controller,
            status: TrialStatus::Running,
        });
        Ok(self.wrap_events(id, events))
    }

    /// Header for the running (or last) trial's logs.
    pub fn trial_header(&self) -> Option<LogHeader> {
        self.trial.as_ref().map(|t| LogHeader {
            schema_version: SCHEMA_VERSION,
            kind: LogKind::Events,
            session_id: self.setup.session_id.clone(),
            config_hash: self.setup.config_hash.clone(),
            trial_id: t.id,
            participant_id: self.setup.participant_id.clone(),
            mode: t.controller.mode(),
            spec: t.spec.clone(),
        })
    }

    fn wrap_events(&self, trial_id: u32, events: Vec<TrialEvent>) -> Vec<EventRecord> {
        events
            .into_iter()
            .map(|event| EventRecord {
                session_id: self.setup.session_id.clone(),
                config_hash: self.setup.config_hash.clone(),
                trial_id,
                event,
            })
            .collect()
    }

    fn telemetry_due(&self, tick: u64) -> bool {
        let (ctl, tel) = (
            u64::from(self.setup.tick_rate_control),
            u64::from(self.setup.tick_rate_telemetry),
        );
        tick == 0 || (tick * tel) / ctl != ((tick - 1) * tel) / ctl
    }

    /// Advances the loop by one control tick.
    pub fn tick(&mut self) -> TickOutput {
        let dt = self.dt();
        self.tick += 1;
        let now = self.now();
        let mut flags = Flags::default();
        let sample: JoystickSample<f64> = self.setup.mode.joystick_sample(&self.deflection, now);

        let desired = match self.trial.as_mut().filter(|t| t.status == TrialStatus::Running) {
            Some(active) => {
                let out = active.controller.step(&self.body, &sample, dt, now);
                flags.body_stale = out.body_stale;
                out.desired
            }
            None => self.desired(),
        };
        self.last_velocity = if self.trial_running() && self.mode == ControlMode::Body {
            Vector3::zeros()
        } else if self.trial_running() {
            sample.velocity_world
        } else {
            Vector3::zeros()
        };

        let step = self.setup.arm.resolved_rate_step(&self.q, &desired, &self.setup.servo);
        flags.velocity_saturated = step.velocity_saturated;
        flags.joint_limit_clamped = step.joint_limit_clamped;
        flags.workspace_clamped = step.workspace_clamped;
        self.q = step.state;
        if step.workspace_clamped {
            if let Some(active) = self.trial.as_mut() {
                active
                    .controller
                    .absorb_clamp(&step.effective_desired.translation, &self.body);
            }
        }

        let effector = self.effector();
        let mut output = TickOutput::default();
        let mut trial_events = Vec::new();
        if let Some(active) = self.trial.as_mut().filter(|t| t.status == TrialStatus::Running) {
            match trial::update(&active.state, &active.seq, &active.spec, &effector.translation, now) {
                Ok((state, events)) => {
                    active.state = state;
                    trial_events = events;
                    if active.state.finished {
                        active.status = TrialStatus::Completed;
                        output.finished = Some((active.id, TrialOutcome::Completed));
                    } else if now - active.state.shown_at > active.spec.target_timeout {
                        let index = active.state.current_target_index;
                        let p = effector.translation;
                        trial_events.push(TrialEvent {
                            t: now,
                            kind: EventKind::TrialAborted,
                            target_index: index,
                            effector_position: [p.x, p.y, p.z],
                        });
                        active.status = TrialStatus::Aborted;
                        let distance = (p - active.seq.targets[index]).norm();
                        output.finished = Some((
                            active.id,
                            TrialOutcome::Aborted {
                                reason: format!(
                                    "target {index} not validated within {:.1} s (shown at t={:.2}, effector {:.3} m away)",
                                    active.spec.target_timeout, active.state.shown_at, distance
                                ),
                            },
                        ));
                    }
                }
                Err(e) => {
                    active.status = TrialStatus::Aborted;
                    output.finished = Some((active.id, TrialOutcome::Aborted { reason: e.to_string() }));
                }
            }
        }
        if let Some(active) = &self.trial {
            output.events = self.wrap_events(active.id, trial_events);
        }
        if let Some(active) = self.trial.as_ref().filter(|t| t.status != TrialStatus::Running) {
            // Keep commanding the final pose once the trial is over.
            self.hold = *active.controller.last_desired();
        }
        if !output.events.is_empty() || output.finished.is_some() || self.telemetry_due(self.tick) {
            output.snapshot = Some(self.snapshot(desired, flags));
        }
        output
    }

    /// Ends the running trial (input closed, operator left).
    pub fn abort_trial(&mut self, reason: &str) -> Option<(Vec<EventRecord>, TrialOutcome)> {
        let now = self.now();
        let effector = self.effector().translation;
        let active = self.trial.as_mut().filter(|t| t.status == TrialStatus::Running)?;
        active.status = TrialStatus::Aborted;
        let event = TrialEvent {
            t: now,
            kind: EventKind::TrialAborted,
            target_index: active.state.current_target_index,
            effector_position: [effector.x, effector.y, effector.z],
        };
        let id = active.id;
        self.hold = *active.controller.last_desired();
        Some((
            self.wrap_events(id, vec![event]),
            TrialOutcome::Aborted {
                reason: reason.to_owned(),
            },
        ))
    }

    /// Snapshot of the current state (as of the last tick).
    pub fn snapshot(&self, desired: Transform<f64>, flags: Flags) -> Snapshot {
        let effector = self.effector();
        let body = self.body.world_from_body;
        let (trial_id, target, status, completed, link) = match &self.trial {
            Some(t) => {
                let target = (t.status == TrialStatus::Running).then(|| {
                    let i = t.state.current_target_index;
                    let p = t.seq.targets[i];
                    TargetInfo {
                        index: i,
                        position: [p.x, p.y, p.z],
                        tolerance: t.spec.tolerance_radius,
                        dwell_progress: t.state.dwell_progress(&t.spec, self.now()),
                    }
                });
                (
                    Some(t.id),
                    target,
                    t.status,
                    t.state.completed.len(),
                    t.controller.effective_link(&body),
                )
            }
            None => (
                None,
                None,
                TrialStatus::Idle,
                0,
                body.rotation
                    .transpose()
                    .apply(&(desired.translation - body.translation)),
            ),
        };
        Snapshot {
            session_id: self.setup.session_id.clone(),
            config_hash: self.setup.config_hash.clone(),
            trial_id,
            tick: self.tick,
            t: self.now(),
            mode: self.trial.as_ref().map_or(self.mode, |t| t.controller.mode()),
            q: self.q.angles.iter().copied().collect(),
            effector,
            desired,
            desired_headset: self.setup.registry.from_world(Frame::Headset, &desired),
            body,
            link_body: [link.x, link.y, link.z],
            joystick_velocity: [self.last_velocity.x, self.last_velocity.y, self.last_velocity.z],
            target,
            status,
            targets_completed: completed,
            flags,
        }
    }

    /// Snapshot for a newly connected console, without advancing time.
    pub fn current_snapshot(&self) -> Snapshot {
        self.snapshot(self.desired(), Flags::default())
    }
}

fn check_monotone(stream: &'static str, t: f64, last: Option<f64>) -> Result<(), InputRejected> {
    match last {
        Some(last) if t < last => Err(InputRejected::NonMonotone { stream, t, last }),
        _ if !t.is_finite() => Err(InputRejected::NonMonotone {
            stream,
            t,
            last: last.unwrap_or(f64::NEG_INFINITY),
        }),
        _ => Ok(()),
    }
}

/// Collects one trial's records as they are produced.
#[derive(Clone, Debug)]
pub struct TrialRecorder {
    pub log: TrialLog,
}

impl TrialRecorder {
    pub fn new(header: LogHeader) -> Self {
        Self {
            log: TrialLog {
                header,
                events: Vec::new(),
                telemetry: Vec::new(),
            },
        }
    }

    pub fn push(&mut self, out: &TickOutput) {
        self.log.events.extend(out.events.iter().cloned());
        if let Some(s) = &out.snapshot {
            self.log.telemetry.push(s.clone());
        }
    }
}

/// Quaternion body-pose message for a world-frame body pose, expressed in the optical frame.
pub fn body_pose_message(registry: &FrameRegistry<f64>, world_from_body: &Transform<f64>, t: f64) -> InboundMessage {
    let optical = registry.from_world(Frame::Optical, world_from_body);
    let p = optical.translation;
    InboundMessage::BodyPose {
        t,
        translation: [p.x, p.y, p.z],
        rotation: optical.rotation.to_quaternion(),
    }
}
