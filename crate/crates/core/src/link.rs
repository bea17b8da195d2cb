//! The three control laws that turn body pose and joystick input into the desired virtual
//! effector pose `T_{W->E_R*}`.
//!
//! * Joystick: the desired position integrates the world-frame joystick velocity.
//! * Body: a rigid virtual link, fixed in the body frame, carries the desired position.
//! * Dual: the body-frame link itself is reshaped by the joystick velocity (rotated into
//!   the body frame) while the body carries it.
//!
//! In every mode the desired orientation is frozen to the effector orientation at trial start.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;
use crate::se3::{Rotation, Transform};

/// Seconds without a body pose after which Body/Dual modes hold their last output.
pub const BODY_DROPOUT_TIMEOUT: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Joystick,
    Body,
    Dual,
}

impl ControlMode {
    pub fn uses_body(self) -> bool {
        !matches!(self, ControlMode::Joystick)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ControlMode::Joystick => "joystick",
            ControlMode::Body => "body",
            ControlMode::Dual => "dual",
        }
    }
}

impl std::fmt::Display for ControlMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ControlMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joystick" => Ok(ControlMode::Joystick),
            "body" => Ok(ControlMode::Body),
            "dual" => Ok(ControlMode::Dual),
            other => Err(format!("unknown control mode `{other}`")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("joystick gain must be positive")]
    Gain,
    #[error("joystick max speed must be positive")]
    MaxSpeed,
    #[error("dead zone must lie in [0, 1)")]
    DeadZone,
}

/// Measured body pose `T_{W->E_H}(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyState<T: Real> {
    pub world_from_body: Transform<T>,
    pub timestamp: T,
}

/// World-frame joystick velocity, m/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JoystickSample<T: Real> {
    pub velocity_world: Vector3<T>,
    pub timestamp: T,
}

impl<T: Real> JoystickSample<T> {
    pub fn zero(timestamp: T) -> Self {
        Self {
            velocity_world: Vector3::zeros(),
            timestamp,
        }
    }
}

/// The virtual body-to-effector link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VirtualLink<T: Real> {
    /// `x_{E_H->E_R*}` expressed in the body frame, meters.
    pub link_body: Vector3<T>,
    /// `R_{W->E_R}(t0)`, held for the whole trial.
    pub frozen_rotation: Rotation<T>,
    pub t0_body: Transform<T>,
    pub t0_effector_position: Vector3<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeConfig<T: Real> {
    pub mode: ControlMode,
    /// Velocity at full deflection, m/s.
    pub joystick_gain: T,
    pub joystick_max_speed: T,
    /// Fraction of full scale below which a deflection axis reads zero.
    pub dead_zone: T,
    /// Maps raw device axes into the world frame.
    pub world_from_device: Rotation<T>,
}

impl<T: Real> ModeConfig<T> {
    pub fn new(mode: ControlMode, joystick_gain: T, joystick_max_speed: T) -> Result<Self, LinkError> {
        let cfg = Self {
            mode,
            joystick_gain,
            joystick_max_speed,
            dead_zone: T::lit(0.02),
            world_from_device: Rotation::identity(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if !(self.joystick_gain > T::zero()) {
            return Err(LinkError::Gain);
        }
        if !(self.joystick_max_speed > T::zero()) {
            return Err(LinkError::MaxSpeed);
        }
        if !(self.dead_zone >= T::zero() && self.dead_zone < T::one()) {
            return Err(LinkError::DeadZone);
        }
        Ok(())
    }

    /// Converts a device deflection (each axis in `[-1, 1]`) to a world-frame velocity.
    pub fn joystick_sample(&self, deflection: &Vector3<T>, timestamp: T) -> JoystickSample<T> {
        let shaped = deflection.map(|d| {
            let d = d.clamp(-T::one(), T::one());
            if d.abs() < self.dead_zone {
                T::zero()
            } else {
                d
            }
        });
        let mut v = self.world_from_device.apply(&shaped) * self.joystick_gain;
        let speed = v.norm();
        if speed > self.joystick_max_speed {
            v *= self.joystick_max_speed / speed;
        }
        JoystickSample {
            velocity_world: v,
            timestamp,
        }
    }

    /// Device deflection that reproduces `velocity_world` (inverse of [`Self::joystick_sample`]
    /// away from the dead zone and the clamps).
    pub fn deflection_for(&self, velocity_world: &Vector3<T>) -> Vector3<T> {
        self.world_from_device.transpose().apply(velocity_world) / self.joystick_gain
    }
}

/// Desired pose with the frozen orientation.
pub fn desired_pose<T: Real>(position: Vector3<T>, frozen: &Rotation<T>) -> Transform<T> {
    Transform::new(*frozen, position)
}

/// Shapes the link from the body and effector poses at trial start.
pub fn init_link<T: Real>(body0: &BodyState<T>, effector0: &Transform<T>) -> VirtualLink<T> {
    let body = &body0.world_from_body;
    VirtualLink {
        link_body: body
            .rotation
            .transpose()
            .apply(&(effector0.translation - body.translation)),
        frozen_rotation: effector0.rotation,
        t0_body: *body,
        t0_effector_position: effector0.translation,
    }
}

/// Joystick mode: `x* = x_E(t0) + integral of v`. Rectangle rule over one tick.
pub fn joystick_target<T: Real>(
    link: &VirtualLink<T>,
    accumulated: &Vector3<T>,
    sample: &JoystickSample<T>,
    dt: T,
) -> (Vector3<T>, Transform<T>) {
    let accumulated = accumulated + sample.velocity_world * dt;
    let position = link.t0_effector_position + accumulated;
    (accumulated, desired_pose(position, &link.frozen_rotation))
}

/// Body mode: `x* = R_body * link + x_body` with a rigid link.
pub fn body_target<T: Real>(link: &VirtualLink<T>, body: &BodyState<T>) -> Transform<T> {
    let b = &body.world_from_body;
    desired_pose(
        b.rotation.apply(&link.link_body) + b.translation,
        &link.frozen_rotation,
    )
}

/// Dual mode: the link grows by the joystick velocity rotated into the body frame (body
/// rotation sampled at the start of the tick), then is carried by the body.
pub fn dual_target<T: Real>(
    link: &VirtualLink<T>,
    body: &BodyState<T>,
    sample: &JoystickSample<T>,
    dt: T,
) -> (VirtualLink<T>, Transform<T>) {
    let mut next = *link;
    next.link_body += body
        .world_from_body
        .rotation
        .transpose()
        .apply(&sample.velocity_world)
        * dt;
    let desired = body_target(&next, body);
    (next, desired)
}

/// Output of one controller tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkOutput<T: Real> {
    pub desired: Transform<T>,
    /// Body input is older than [`BODY_DROPOUT_TIMEOUT`]; the previous desired pose was held.
    pub body_stale: bool,
}

/// Stateful wrapper that runs the active mode's law tick after tick.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkController<T: Real> {
    mode: ControlMode,
    link: VirtualLink<T>,
    accumulated: Vector3<T>,
    last_desired: Transform<T>,
}

impl<T: Real> LinkController<T> {
    /// Starts a trial: shapes the link from the current body and effector poses.
    pub fn start(mode: ControlMode, body0: &BodyState<T>, effector0: &Transform<T>) -> Self {
        let link = init_link(body0, effector0);
        Self {
            mode,
            last_desired: desired_pose(link.t0_effector_position, &link.frozen_rotation),
            link,
            accumulated: Vector3::zeros(),
        }
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    pub fn link(&self) -> &VirtualLink<T> {
        &self.link
    }

    pub fn accumulated(&self) -> &Vector3<T> {
        &self.accumulated
    }

    pub fn last_desired(&self) -> &Transform<T> {
        &self.last_desired
    }

    /// Advances one tick of length `dt` ending at `now`.
    pub fn step(&mut self, body: &BodyState<T>, sample: &JoystickSample<T>, dt: T, now: T) -> LinkOutput<T> {
        if self.mode.uses_body() && now - body.timestamp > T::lit(BODY_DROPOUT_TIMEOUT) {
            return LinkOutput {
                desired: self.last_desired,
                body_stale: true,
            };
        }
        let desired = match self.mode {
            ControlMode::Joystick => {
                let (acc, desired) = joystick_target(&self.link, &self.accumulated, sample, dt);
                self.accumulated = acc;
                desired
            }
            ControlMode::Body => body_target(&self.link, body),
            ControlMode::Dual => {
                let (link, desired) = dual_target(&self.link, body, sample, dt);
                self.link = link;
                desired
            }
        };
        self.last_desired = desired;
        LinkOutput {
            desired,
            body_stale: false,
        }
    }

    /// Pointer vector from the body to the current desired effector, in the body frame. Equals
    /// `link_body` in Body and Dual modes; in Joystick mode it is the implied link.
    pub fn effective_link(&self, body: &Transform<T>) -> Vector3<T> {
        match self.mode {
            ControlMode::Body | ControlMode::Dual => self.link.link_body,
            ControlMode::Joystick => body
                .rotation
                .transpose()
                .apply(&(self.last_desired.translation - body.translation)),
        }
    }

    /// Anti-windup: after the servo clamped the desired position, pull the integrator state
    /// back so that the law reproduces the clamped position.
    pub fn absorb_clamp(&mut self, clamped_position: &Vector3<T>, body: &BodyState<T>) {
        match self.mode {
            ControlMode::Joystick => {
                self.accumulated = clamped_position - self.link.t0_effector_position;
            }
            ControlMode::Dual => {
                let b = &body.world_from_body;
                self.link.link_body = b.rotation.transpose().apply(&(clamped_position - b.translation));
            }
            ControlMode::Body => {}
        }
        self.last_desired.translation = *clamped_position;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn body(t: Transform<f64>, ts: f64) -> BodyState<f64> {
        BodyState {
            world_from_body: t,
            timestamp: ts,
        }
    }

    fn sample(v: Vector3<f64>) -> JoystickSample<f64> {
        JoystickSample {
            velocity_world: v,
            timestamp: 0.0,
        }
    }

    fn scenario() -> (BodyState<f64>, Transform<f64>) {
        let b = body(
            Transform::new(Rotation::rz(3.0), Vector3::new(1.45, 0.0, 1.25)),
            0.0,
        );
        let e = Transform::new(Rotation::rx(3.1), Vector3::new(0.49, 0.02, 0.99));
        (b, e)
    }

    #[test]
    fn init_link_examples() {
        let link = init_link(&body(Transform::identity(), 0.0), &Transform::from_translation(Vector3::new(1.0, 0.0, 0.0)));
        assert_eq!(link.link_body, Vector3::new(1.0, 0.0, 0.0));

        let b = body(Transform::from_rotation(Rotation::rz(FRAC_PI_2)), 0.0);
        let e = Transform::from_translation(Vector3::new(0.0, 1.0, 0.0));
        let link = init_link(&b, &e);
        assert_abs_diff_eq!(link.link_body, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        // Forward through the body law reproduces the effector position.
        assert_abs_diff_eq!(body_target(&link, &b).translation, e.translation, epsilon = 1e-15);
        assert_eq!(link.frozen_rotation, e.rotation);
    }

    #[test]
    fn joystick_integrates_velocity() {
        let (b, e) = scenario();
        let link = init_link(&b, &e);
        let mut acc = Vector3::zeros();
        for _ in 0..200 {
            let (a, d) = joystick_target(&link, &acc, &sample(Vector3::zeros()), 0.01);
            acc = a;
            assert_eq!(d, Transform::new(e.rotation, e.translation));
        }
        let mut acc = Vector3::zeros();
        let mut desired = Transform::identity();
        for _ in 0..200 {
            (acc, desired) = joystick_target(&link, &acc, &sample(Vector3::new(0.1, 0.0, 0.0)), 0.01);
        }
        assert_abs_diff_eq!(acc, Vector3::new(0.2, 0.0, 0.0), epsilon = 1e-9);
        assert_abs_diff_eq!(desired.translation - e.translation, Vector3::new(0.2, 0.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn joystick_matches_rectangle_sum() {
        let (b, e) = scenario();
        let link = init_link(&b, &e);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut acc = Vector3::zeros();
        let mut pieces = Vec::new();
        for _ in 0..50 {
            let v = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
            let ticks = rng.random_range(1..30);
            pieces.push((v, ticks));
            for _ in 0..ticks {
                acc = joystick_target(&link, &acc, &sample(v), 0.01).0;
            }
        }
        // Oracle: piecewise-constant velocity times duration.
        let oracle: Vector3<f64> = pieces.iter().map(|(v, n)| v * (*n as f64 * 0.01)).sum();
        assert_abs_diff_eq!(acc, oracle, epsilon = 1e-12);
    }

    #[test]
    fn body_target_examples() {
        let (b, e) = scenario();
        let link = init_link(&b, &e);
        assert!(body_target(&link, &b).max_abs_diff(&Transform::new(e.rotation, e.translation)) < 1e-15);

        let start = body(Transform::identity(), 0.0);
        let link = init_link(&start, &Transform::from_translation(Vector3::new(1.0, 0.0, 0.0)));
        let yawed = body(Transform::from_rotation(Rotation::rz(0.1)), 0.1);
        let moved = (body_target(&link, &yawed).translation - Vector3::new(1.0, 0.0, 0.0)).norm();
        assert_abs_diff_eq!(moved, 2.0 * (0.05f64).sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(moved, 0.0999583, epsilon = 1e-6);

        let shifted = body(Transform::from_translation(Vector3::new(0.05, 0.0, 0.0)), 0.1);
        assert_abs_diff_eq!(
            body_target(&link, &shifted).translation - Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.05, 0.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn dual_with_rotated_body() {
        let b = body(Transform::from_rotation(Rotation::rz(FRAC_PI_2)), 0.0);
        let e = Transform::from_translation(Vector3::new(0.0, 1.0, 0.0));
        let mut link = init_link(&b, &e);
        let start = link.link_body;
        let mut desired = Transform::identity();
        for _ in 0..100 {
            (link, desired) = dual_target(&link, &b, &sample(Vector3::new(0.1, 0.0, 0.0)), 0.01);
        }
        assert_abs_diff_eq!(link.link_body - start, Vector3::new(0.0, -0.1, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(desired.translation - e.translation, Vector3::new(0.1, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn dual_degenerates_to_joystick_and_body() {
        let (b, e) = scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let link0 = init_link(&b, &e);
        let (mut dl, mut acc) = (link0, Vector3::zeros());
        for _ in 0..6000 {
            let s = sample(Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)));
            let (l, dual) = dual_target(&dl, &b, &s, 0.01);
            let (a, joy) = joystick_target(&link0, &acc, &s, 0.01);
            dl = l;
            acc = a;
            assert!((dual.translation - joy.translation).amax() <= 1e-9);
        }

        let mut dl = link0;
        for i in 0..600 {
            let t = i as f64 * 0.01;
            let moving = body(
                Transform::new(Rotation::from_angle_axis(&Vector3::new(0.1 * t.sin(), 0.2 * t, -0.1)) * b.world_from_body.rotation, b.world_from_body.translation + Vector3::new(0.01 * t, 0.0, 0.02)),
                t,
            );
            let (l, dual) = dual_target(&dl, &moving, &sample(Vector3::zeros()), 0.01);
            dl = l;
            assert!((dual.translation - body_target(&link0, &moving).translation).amax() <= 1e-12);
        }
    }

    #[test]
    fn deflection_shaping() {
        let cfg = ModeConfig::new(ControlMode::Joystick, 0.25, 0.3).unwrap();
        let s = cfg.joystick_sample(&Vector3::new(0.01, -0.5, 1.7), 0.0);
        assert_abs_diff_eq!(s.velocity_world, Vector3::new(0.0, -0.125, 0.25), epsilon = 1e-15);
        let fast = cfg.joystick_sample(&Vector3::new(1.0, 1.0, 1.0), 0.0);
        assert_abs_diff_eq!(fast.velocity_world.norm(), 0.3, epsilon = 1e-15);
        let v = Vector3::new(0.05, -0.02, 0.1);
        assert_abs_diff_eq!(cfg.joystick_sample(&cfg.deflection_for(&v), 0.0).velocity_world, v, epsilon = 1e-15);
        assert_eq!(ModeConfig::new(ControlMode::Dual, 0.0, 1.0), Err(LinkError::Gain));
        assert_eq!(ModeConfig::new(ControlMode::Dual, 1.0, -1.0), Err(LinkError::MaxSpeed));
    }

    #[test]
    fn controller_holds_on_body_dropout() {
        let (b, e) = scenario();
        let mut ctl = LinkController::start(ControlMode::Body, &b, &e);
        let moved = body(Transform::new(Rotation::rz(3.05), b.world_from_body.translation), 0.1);
        let out = ctl.step(&moved, &JoystickSample::zero(0.1), 0.01, 0.1);
        assert!(!out.body_stale);
        let out2 = ctl.step(&moved, &JoystickSample::zero(0.5), 0.01, 0.5);
        assert!(out2.body_stale);
        assert_eq!(out2.desired, out.desired);
        // Joystick mode never looks at the body stream.
        let mut joy = LinkController::start(ControlMode::Joystick, &b, &e);
        assert!(!joy.step(&b, &sample(Vector3::x()), 0.01, 10.0).body_stale);
    }

    #[test]
    fn anti_windup_tracks_clamped_position() {
        let (b, e) = scenario();
        for mode in [ControlMode::Joystick, ControlMode::Dual] {
            let mut ctl = LinkController::start(mode, &b, &e);
            ctl.step(&b, &sample(Vector3::new(0.5, 0.0, 0.0)), 0.01, 0.0);
            let clamped = e.translation + Vector3::new(0.001, 0.0, 0.0);
            ctl.absorb_clamp(&clamped, &b);
            let out = ctl.step(&b, &JoystickSample::zero(0.01), 0.01, 0.01);
            assert_abs_diff_eq!(out.desired.translation, clamped, epsilon = 1e-12);
        }
    }

    #[test]
    fn effective_link_in_joystick_mode() {
        let (b, e) = scenario();
        let mut ctl = LinkController::start(ControlMode::Joystick, &b, &e);
        let l0 = ctl.effective_link(&b.world_from_body);
        assert_abs_diff_eq!(l0, init_link(&b, &e).link_body, epsilon = 1e-15);
        for _ in 0..100 {
            ctl.step(&b, &sample(Vector3::new(0.0, 0.1, 0.0)), 0.01, 0.0);
        }
        let dl = b.world_from_body.rotation.apply(&(ctl.effective_link(&b.world_from_body) - l0));
        assert_abs_diff_eq!(dl, Vector3::new(0.0, 0.1, 0.0), epsilon = 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn arb_rotvec(max: f64) -> impl Strategy<Value = Vector3<f64>> {
            (-max..max, -max..max, -max..max).prop_map(|(x, y, z)| Vector3::new(x, y, z))
        }

        proptest! {
            #[test]
            fn rigid_link_isometry(rv in arb_rotvec(1.5), tx in -1.0f64..1.0, ty in -1.0f64..1.0, tz in -1.0f64..1.0) {
                let (b, e) = scenario();
                let link = init_link(&b, &e);
                let moved = body(Transform::new(Rotation::from_angle_axis(&rv), Vector3::new(tx, ty, tz)), 1.0);
                let d = body_target(&link, &moved);
                prop_assert!(((d.translation - moved.world_from_body.translation).norm() - link.link_body.norm()).abs() < 1e-12);
            }

            #[test]
            fn lever_amplification(theta in 1e-3f64..3.0, ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0, len in 0.2f64..1.5) {
                let axis = Vector3::new(ax, ay, az).normalize();
                // Link perpendicular to the rotation axis.
                let link_dir = axis.cross(&Vector3::new(1.0, 0.3, -0.2)).normalize();
                let start = body(Transform::identity(), 0.0);
                let link = init_link(&start, &Transform::from_translation(link_dir * len));
                let rotated = body(Transform::from_rotation(Rotation::from_axis_angle(&axis, theta)), 1.0);
                let disp = (body_target(&link, &rotated).translation - link_dir * len).norm();
                prop_assert!((disp - 2.0 * len * (theta / 2.0).sin()).abs() < 1e-12);
                prop_assert!(disp > 0.0);
            }

            #[test]
            fn orientation_stays_frozen(seed in 0u64..1000) {
                let (b, e) = scenario();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for mode in [ControlMode::Joystick, ControlMode::Body, ControlMode::Dual] {
                    let mut ctl = LinkController::start(mode, &b, &e);
                    for i in 0..50 {
                        let t = i as f64 * 0.01;
                        let bs = body(Transform::new(Rotation::from_angle_axis(&Vector3::new(rng.random_range(-0.5..0.5), 0.1, 0.0)), Vector3::new(rng.random_range(-0.1..0.1), 0.0, 1.0)), t);
                        let out = ctl.step(&bs, &sample(Vector3::new(rng.random_range(-0.2..0.2), 0.0, 0.1)), 0.01, t);
                        prop_assert_eq!(out.desired.rotation, e.rotation);
                    }
                }
            }

            #[test]
            fn dual_link_is_sufficient_statistic(seed in 0u64..1000) {
                // Two different joystick histories that end at the same link produce the same
                // desired-translation change under an identical body motion with zero joystick.
                let (b, e) = scenario();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let link0 = init_link(&b, &e);
                let mut a = link0;
                let push = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.05);
                for _ in 0..10 {
                    a = dual_target(&a, &b, &sample(push), 0.01).0;
                }
                let mut c = link0;
                c = dual_target(&c, &b, &sample(push * 10.0), 0.01).0;
                prop_assert!((a.link_body - c.link_body).amax() < 1e-12);
                let motion: Vec<BodyState<f64>> = (0..20).map(|i| {
                    let t = i as f64 * 0.01;
                    body(Transform::new(Rotation::rz(3.0 + 0.02 * i as f64), b.world_from_body.translation + Vector3::new(0.0, 0.002 * i as f64, 0.0)), t)
                }).collect();
                let run = |mut l: VirtualLink<f64>| {
                    let first = dual_target(&l, &motion[0], &sample(Vector3::zeros()), 0.01);
                    l = first.0;
                    let mut last = first.1;
                    for m in &motion[1..] {
                        let r = dual_target(&l, m, &sample(Vector3::zeros()), 0.01);
                        l = r.0;
                        last = r.1;
                    }
                    last.translation - first.1.translation
                };
                prop_assert!((run(a) - run(c)).amax() < 1e-12);
            }
        }
    }
}
