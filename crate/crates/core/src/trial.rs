//! Target protocol: Fibonacci surface targets alternating with the sphere center, and the
//! dwell-validation state machine that turns an effector trajectory into trial events.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link::ControlMode;
use crate::num::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrialError {
    #[error("invalid trial spec: {0}")]
    Spec(&'static str),
    #[error("non-monotone timestamp: {t} after {last}")]
    NonMonotone { t: f64, last: f64 },
    #[error("trial already completed")]
    Completed,
}

/// Points on a sphere via the offset Fibonacci lattice:
/// `z_i = 1 - 2(i + 1/2)/n`, azimuth `i * pi(3 - sqrt 5)`.
pub fn fibonacci_sphere<T: Real>(n: usize, radius: T, center: &Vector3<T>) -> Vec<Vector3<T>> {
    let golden_angle = T::pi() * (T::lit(3.0) - T::lit(5.0).sqrt());
    let nf = T::from_usize(n).expect("count fits");
    (0..n)
        .map(|i| {
            let fi = T::from_usize(i).expect("index fits");
            let z = T::one() - T::lit(2.0) * (fi + T::lit(0.5)) / nf;
            let ring = (T::one() - z * z).max(T::zero()).sqrt();
            let phi = fi * golden_angle;
            center + Vector3::new(ring * phi.cos(), ring * phi.sin(), z) * radius
        })
        .collect()
}

fn default_radius() -> f64 {
    0.15
}
fn default_pairs() -> usize {
    15
}
fn default_tolerance() -> f64 {
    0.02
}
fn default_dwell() -> f64 {
    1.0
}
fn default_timeout() -> f64 {
    60.0
}

/// Protocol parameters for one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSpec {
    /// Sphere center in `W`; `None` in configs means "the effector position at trial start".
    #[serde(default)]
    pub center: Option<[f64; 3]>,
    #[serde(default = "default_radius")]
    pub sphere_radius: f64,
    #[serde(default = "default_pairs")]
    pub n_pairs: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance_radius: f64,
    #[serde(default = "default_dwell")]
    pub dwell_time: f64,
    pub mode: ControlMode,
    /// Shuffles the surface order when set; otherwise lattice order.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Watchdog: seconds allowed per target before the trial is aborted.
    #[serde(default = "default_timeout")]
    pub target_timeout: f64,
}

impl TrialSpec {
    pub fn new(mode: ControlMode) -> Self {
        Self {
            center: None,
            sphere_radius: default_radius(),
            n_pairs: default_pairs(),
            tolerance_radius: default_tolerance(),
            dwell_time: default_dwell(),
            mode,
            seed: None,
            target_timeout: default_timeout(),
        }
    }

    pub fn validate(&self) -> Result<(), TrialError> {
        if !(self.sphere_radius > 0.0) {
            return Err(TrialError::Spec("sphere_radius must be positive"));
        }
        if !(self.tolerance_radius > 0.0 && self.tolerance_radius < self.sphere_radius) {
            return Err(TrialError::Spec("tolerance_radius must lie in (0, sphere_radius)"));
        }
        if self.n_pairs < 1 {
            return Err(TrialError::Spec("n_pairs must be at least 1"));
        }
        if !(self.dwell_time > 0.0) {
            return Err(TrialError::Spec("dwell_time must be positive"));
        }
        if !(self.target_timeout > self.dwell_time) {
            return Err(TrialError::Spec("target_timeout must exceed dwell_time"));
        }
        Ok(())
    }

    pub fn center_vec(&self) -> Option<Vector3<f64>> {
        self.center.map(Vector3::from)
    }

    /// Copy with the center fixed.
    pub fn centered_at(&self, center: &Vector3<f64>) -> Self {
        Self {
            center: Some([center.x, center.y, center.z]),
            ..self.clone()
        }
    }
}

/// Ordered targets: surface, center, surface, center, ...
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSequence {
    pub center: Vector3<f64>,
    pub targets: Vec<Vector3<f64>>,
}

impl TargetSequence {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Vector3<f64>> {
        self.targets.get(index)
    }
}

/// Builds the alternating sequence. The spec must carry a center.
pub fn build_sequence(spec: &TrialSpec) -> Result<TargetSequence, TrialError> {
    spec.validate()?;
    let center = spec
        .center_vec()
        .ok_or(TrialError::Spec("trial center not resolved"))?;
    let mut surface = fibonacci_sphere(spec.n_pairs, spec.sphere_radius, &center);
    if let Some(seed) = spec.seed {
        surface.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let targets = surface.into_iter().flat_map(|p| [p, center]).collect();
    Ok(TargetSequence { center, targets })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TargetShown,
    ToleranceEntered,
    ToleranceExited,
    TargetValidated,
    TrialCompleted,
    TrialAborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialEvent {
    pub t: f64,
    pub kind: EventKind,
    pub target_index: usize,
    pub effector_position: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletedTarget {
    pub target_index: usize,
    pub t_appear: f64,
    pub t_validated: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrialState {
    pub current_target_index: usize,
    pub shown_at: f64,
    /// Set iff the effector is currently inside the tolerance ball.
    pub dwell_entered_at: Option<f64>,
    pub completed: Vec<CompletedTarget>,
    pub last_t: Option<f64>,
    pub finished: bool,
}

impl TrialState {
    /// Progress of the current dwell in `[0, 1]`.
    pub fn dwell_progress(&self, spec: &TrialSpec, t: f64) -> f64 {
        match self.dwell_entered_at {
            Some(entered) => ((t - entered) / spec.dwell_time).clamp(0.0, 1.0),
            None => 0.0,
        }
    }
}

fn event(t: f64, kind: EventKind, target_index: usize, p: &Vector3<f64>) -> TrialEvent {
    TrialEvent {
        t,
        kind,
        target_index,
        effector_position: [p.x, p.y, p.z],
    }
}

/// Shows the first target at `t`.
pub fn start(
    seq: &TargetSequence,
    spec: &TrialSpec,
    effector_pos: &Vector3<f64>,
    t: f64,
) -> (TrialState, Vec<TrialEvent>) {
    let mut state = TrialState {
        shown_at: t,
        last_t: Some(t),
        ..TrialState::default()
    };
    let mut events = vec![event(t, EventKind::TargetShown, 0, effector_pos)];
    check_entry(&mut state, seq, spec, effector_pos, t, &mut events);
    (state, events)
}

fn inside(seq: &TargetSequence, spec: &TrialSpec, index: usize, p: &Vector3<f64>) -> bool {
    // Closed ball.
    (p - seq.targets[index]).norm() <= spec.tolerance_radius
}

fn check_entry(
    state: &mut TrialState,
    seq: &TargetSequence,
    spec: &TrialSpec,
    p: &Vector3<f64>,
    t: f64,
    events: &mut Vec<TrialEvent>,
) {
    if state.dwell_entered_at.is_none() && inside(seq, spec, state.current_target_index, p) {
        state.dwell_entered_at = Some(t);
        events.push(event(t, EventKind::ToleranceEntered, state.current_target_index, p));
    }
}

/// Advances the state machine with the real effector position at time `t`.
///
/// A target validates once the effector has stayed continuously inside the tolerance ball
/// for `dwell_time`; leaving the ball resets the timer. The next target is shown at the
/// validation timestamp.
pub fn update(
    state: &TrialState,
    seq: &TargetSequence,
    spec: &TrialSpec,
    effector_pos: &Vector3<f64>,
    t: f64,
) -> Result<(TrialState, Vec<TrialEvent>), TrialError> {
    if state.finished {
        return Err(TrialError::Completed);
    }
    if let Some(last) = state.last_t {
        if t < last {
            return Err(TrialError::NonMonotone { t, last });
        }
    }
    let mut next = state.clone();
    next.last_t = Some(t);
    let mut events = Vec::new();
    let index = next.current_target_index;
    let is_inside = inside(seq, spec, index, effector_pos);

    match (next.dwell_entered_at, is_inside) {
        (None, true) => check_entry(&mut next, seq, spec, effector_pos, t, &mut events),
        (Some(_), false) => {
            next.dwell_entered_at = None;
            events.push(event(t, EventKind::ToleranceExited, index, effector_pos));
        }
        _ => {}
    }

    if let Some(entered) = next.dwell_entered_at {
        if t - entered >= spec.dwell_time {
            events.push(event(t, EventKind::TargetValidated, index, effector_pos));
            next.completed.push(CompletedTarget {
                target_index: index,
                t_appear: next.shown_at,
                t_validated: t,
            });
            next.dwell_entered_at = None;
            if index + 1 == seq.len() {
                next.finished = true;
                events.push(event(t, EventKind::TrialCompleted, index, effector_pos));
            } else {
                next.current_target_index = index + 1;
                next.shown_at = t;
                events.push(event(t, EventKind::TargetShown, index + 1, effector_pos));
                check_entry(&mut next, seq, spec, effector_pos, t, &mut events);
            }
        }
    }
    Ok((next, events))
}
