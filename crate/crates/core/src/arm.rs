//! Serial-arm kinematics and the resolved-rate position servo.
//!
//! The servo drives the real effector `E_R` toward a desired pose with a task-space velocity
//! proportional to the pose error, mapped to joint rates through a damped pseudo-inverse
//! of the geometric Jacobian.

use nalgebra::{DMatrix, DVector, Dyn, OMatrix, Vector3, Vector6, U6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;
use crate::se3::{Rotation, Transform};

/// Joint count of the arm descriptions used by sessions.
pub const SESSION_ARM_DOF: usize = 7;

/// Geometric Jacobian: 3 linear rows (m/rad) above 3 angular rows (rad/rad).
pub type Jacobian<T> = OMatrix<T, U6, Dyn>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArmError {
    #[error("arm has no joints")]
    NoJoints,
    #[error("expected {expected} joints, found {found}")]
    JointCount { expected: usize, found: usize },
    #[error("joint {index} axis is not unit norm (|axis| = {norm})")]
    AxisNorm { index: usize, norm: f64 },
    #[error("joint {index} limits are empty ([{min}, {max}])")]
    EmptyLimits { index: usize, min: f64, max: f64 },
    #[error("joint velocity limit must be positive, got {0}")]
    VelocityLimit(f64),
    #[error("joint state has {found} angles, arm has {expected} joints")]
    StateSize { expected: usize, found: usize },
    #[error("invalid servo config: {0}")]
    Servo(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RevoluteJoint<T: Real> {
    /// Fixed transform from the previous joint frame (or the arm base) to this joint.
    pub origin: Transform<T>,
    /// Rotation axis in the joint frame, unit norm.
    pub axis: Vector3<T>,
    /// `[min, max]` in radians.
    pub limits: [T; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SerialArm<T: Real> {
    joints: Vec<RevoluteJoint<T>>,
    base_frame: Transform<T>,
    flange_to_effector: Transform<T>,
    joint_velocity_limit: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointState<T: Real> {
    pub angles: DVector<T>,
    pub timestamp: T,
}

impl<T: Real> JointState<T> {
    pub fn new(angles: DVector<T>, timestamp: T) -> Self {
        Self { angles, timestamp }
    }

    pub fn from_slice(angles: &[T]) -> Self {
        Self::new(DVector::from_column_slice(angles), T::zero())
    }
}

/// Axis-aligned box in the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBox<T: Real> {
    pub min: Vector3<T>,
    pub max: Vector3<T>,
}

impl<T: Real> WorkspaceBox<T> {
    pub fn unbounded() -> Self {
        let big = T::lit(1e9);
        Self {
            min: Vector3::repeat(-big),
            max: Vector3::repeat(big),
        }
    }

    pub fn around(center: &Vector3<T>, half_extent: T) -> Self {
        Self {
            min: center.add_scalar(-half_extent),
            max: center.add_scalar(half_extent),
        }
    }

    pub fn contains(&self, p: &Vector3<T>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Componentwise clamp; the flag reports whether anything moved.
    pub fn clamp(&self, p: &Vector3<T>) -> (Vector3<T>, bool) {
        let mut out = *p;
        let mut clamped = false;
        for i in 0..3 {
            if out[i] < self.min[i] {
                out[i] = self.min[i];
                clamped = true;
            } else if out[i] > self.max[i] {
                out[i] = self.max[i];
                clamped = true;
            }
        }
        (out, clamped)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServoConfig<T: Real> {
    /// Proportional gain `k`, 1/s.
    pub gain_k: T,
    /// Damping of the least-squares inverse.
    pub damping_lambda: T,
    /// Integration step, seconds.
    pub dt: T,
    pub workspace: WorkspaceBox<T>,
    /// Rows of the 6-D pose error that are servoed (x, y, z, rx, ry, rz).
    pub task_rows: [bool; 6],
}

impl<T: Real> ServoConfig<T> {
    pub fn new(gain_k: T, damping_lambda: T, dt: T, workspace: WorkspaceBox<T>) -> Result<Self, ArmError> {
        let cfg = Self {
            gain_k,
            damping_lambda,
            dt,
            workspace,
            task_rows: [true; 6],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_task_rows(mut self, rows: [bool; 6]) -> Self {
        self.task_rows = rows;
        self
    }

    pub fn validate(&self) -> Result<(), ArmError> {
        let bad = |m: &str| Err(ArmError::Servo(m.to_owned()));
        if !(self.gain_k > T::zero()) {
            return bad("gain_k must be positive");
        }
        if !(self.dt > T::zero()) {
            return bad("dt must be positive");
        }
        if !(self.dt * self.gain_k < T::lit(0.5)) {
            return bad("dt * gain_k must stay below 0.5");
        }
        if !(self.damping_lambda >= T::zero()) {
            return bad("damping_lambda must be non-negative");
        }
        if (0..3).any(|i| self.workspace.min[i] > self.workspace.max[i]) {
            return bad("workspace box has min > max");
        }
        if !self.task_rows.iter().any(|&r| r) {
            return bad("no task rows selected");
        }
        Ok(())
    }
}

/// Outcome of one servo step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport<T: Real> {
    pub state: JointState<T>,
    /// Desired pose after the workspace clamp.
    pub effective_desired: Transform<T>,
    pub workspace_clamped: bool,
    pub velocity_saturated: bool,
    pub joint_limit_clamped: bool,
}

impl<T: Real> SerialArm<T> {
    pub fn new(
        joints: Vec<RevoluteJoint<T>>,
        base_frame: Transform<T>,
        flange_to_effector: Transform<T>,
        joint_velocity_limit: T,
    ) -> Result<Self, ArmError> {
        if joints.is_empty() {
            return Err(ArmError::NoJoints);
        }
        for (index, j) in joints.iter().enumerate() {
            let norm = j.axis.norm();
            if (norm - T::one()).abs() > T::lit(1e-9) {
                return Err(ArmError::AxisNorm {
                    index,
                    norm: norm.to_f64_lossy(),
                });
            }
            if !(j.limits[0] < j.limits[1]) {
                return Err(ArmError::EmptyLimits {
                    index,
                    min: j.limits[0].to_f64_lossy(),
                    max: j.limits[1].to_f64_lossy(),
                });
            }
        }
        if !(joint_velocity_limit > T::zero()) {
            return Err(ArmError::VelocityLimit(joint_velocity_limit.to_f64_lossy()));
        }
        Ok(Self {
            joints,
            base_frame,
            flange_to_effector,
            joint_velocity_limit,
        })
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[RevoluteJoint<T>] {
        &self.joints
    }

    pub fn base_frame(&self) -> &Transform<T> {
        &self.base_frame
    }

    pub fn flange_to_effector(&self) -> &Transform<T> {
        &self.flange_to_effector
    }

    pub fn joint_velocity_limit(&self) -> T {
        self.joint_velocity_limit
    }

    /// Same arm with a different `T_{W->B_R}`.
    pub fn with_base_frame(mut self, base_frame: Transform<T>) -> Self {
        self.base_frame = base_frame;
        self
    }

    pub fn with_flange_to_effector(mut self, flange_to_effector: Transform<T>) -> Self {
        self.flange_to_effector = flange_to_effector;
        self
    }

    pub fn check_state(&self, q: &JointState<T>) -> Result<(), ArmError> {
        if q.angles.len() != self.dof() {
            return Err(ArmError::StateSize {
                expected: self.dof(),
                found: q.angles.len(),
            });
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &JointState<T>) -> bool {
        self.joints
            .iter()
            .zip(q.angles.iter())
            .all(|(j, &a)| a >= j.limits[0] && a <= j.limits[1])
    }

    /// World-frame joint frames after applying each joint's rotation, followed by the effector
    /// pose. Entry `i` holds the frame of joint `i` *before* its own rotation (its origin and
    /// axis do not depend on `q_i`).
    fn chain(&self, q: &JointState<T>) -> (Vec<Transform<T>>, Transform<T>) {
        let mut frames = Vec::with_capacity(self.dof());
        let mut current = self.base_frame;
        for (joint, &angle) in self.joints.iter().zip(q.angles.iter()) {
            current = current.compose(&joint.origin);
            frames.push(current);
            current = current.compose(&Transform::from_rotation(Rotation::from_axis_angle(
                &joint.axis,
                angle,
            )));
        }
        (frames, current.compose(&self.flange_to_effector))
    }

    /// `T_{W->E_R}` for configuration `q`.
    pub fn forward_kinematics(&self, q: &JointState<T>) -> Transform<T> {
        self.chain(q).1
    }

    /// Column `i` is `(z_i x (p_e - p_i), z_i)` with `z_i`, `p_i` the joint axis and origin in `W`.
    pub fn geometric_jacobian(&self, q: &JointState<T>) -> Jacobian<T> {
        let (frames, effector) = self.chain(q);
        let p_e = effector.translation;
        let mut jac = Jacobian::<T>::zeros(self.dof());
        for (i, (frame, joint)) in frames.iter().zip(&self.joints).enumerate() {
            let z = frame.transform_vector(&joint.axis);
            let lever = z.cross(&(p_e - frame.translation));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lever);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        jac
    }

    /// One explicit-Euler step of `q' = q + dt * J^+_lambda * (k * e)`.
    ///
    /// The desired translation is clamped into the workspace box first. Joint rates above the
    /// velocity limit are scaled down uniformly, then angles are clamped to the joint limits.
    pub fn resolved_rate_step(
        &self,
        q: &JointState<T>,
        desired: &Transform<T>,
        cfg: &ServoConfig<T>,
    ) -> StepReport<T> {
        let (clamped_translation, workspace_clamped) = cfg.workspace.clamp(&desired.translation);
        let effective_desired = Transform::new(desired.rotation, clamped_translation);
        let current = self.forward_kinematics(q);
        let error = pose_error(&current, &effective_desired);

        let rows: Vec<usize> = (0..6).filter(|&r| cfg.task_rows[r]).collect();
        let mut rates = if error.iter().all(|&e| e == T::zero()) {
            DVector::zeros(self.dof())
        } else {
            let jac = self.geometric_jacobian(q);
            let j = DMatrix::from_fn(rows.len(), self.dof(), |r, c| jac[(rows[r], c)]);
            let e = DVector::from_fn(rows.len(), |r, _| error[rows[r]] * cfg.gain_k);
            damped_pseudo_inverse_apply(&j, &e, cfg.damping_lambda)
        };

        let mut velocity_saturated = false;
        let peak = rates.amax();
        if peak > self.joint_velocity_limit {
            rates *= self.joint_velocity_limit / peak;
            velocity_saturated = true;
        }

        let mut angles = &q.angles + rates * cfg.dt;
        let mut joint_limit_clamped = false;
        for (a, joint) in angles.iter_mut().zip(&self.joints) {
            if *a < joint.limits[0] {
                *a = joint.limits[0];
                joint_limit_clamped = true;
            } else if *a > joint.limits[1] {
                *a = joint.limits[1];
                joint_limit_clamped = true;
            }
        }

        StepReport {
            state: JointState::new(angles, q.timestamp + cfg.dt),
            effective_desired,
            workspace_clamped,
            velocity_saturated,
            joint_limit_clamped,
        }
    }
}

/// `J^T (J J^T + lambda^2 I)^{-1} e`.
fn damped_pseudo_inverse_apply<T: Real>(j: &DMatrix<T>, e: &DVector<T>, lambda: T) -> DVector<T> {
    let m = j.nrows();
    let gram = j * j.transpose() + DMatrix::identity(m, m) * (lambda * lambda);
    let y = match gram.clone().cholesky() {
        Some(chol) => chol.solve(e),
        None => gram.lu().solve(e).unwrap_or_else(|| DVector::zeros(m)),
    };
    j.transpose() * y
}

/// 6-D pose error: `desired.t - current.t` above `angleaxis(R_desired R_current^T)`.
pub fn pose_error<T: Real>(current: &Transform<T>, desired: &Transform<T>) -> Vector6<T> {
    let dp = desired.translation - current.translation;
    let dr = (desired.rotation * current.rotation.transpose()).angle_axis();
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// JSON arm description: seven joints, base and flange transforms, velocity limit, and a home
/// configuration with its (golden) effector pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmDescription {
    #[serde(default)]
    pub name: String,
    pub joints: Vec<JointDescription>,
    pub base_frame: Transform<f64>,
    pub flange_to_effector: Transform<f64>,
    pub joint_velocity_limit: f64,
    pub home: Vec<f64>,
    /// Effector pose at `home` relative to `base_frame`'s parent, as computed offline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_effector: Option<Transform<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDescription {
    pub transform: Transform<f64>,
    pub axis: [f64; 3],
    pub limits: [f64; 2],
}

impl ArmDescription {
    /// Builds the arm without constraining the joint count.
    pub fn build_any<T: Real>(&self) -> Result<SerialArm<T>, ArmError> {
        let joints = self
            .joints
            .iter()
            .map(|j| RevoluteJoint {
                origin: j.transform.cast(),
                axis: Vector3::from(j.axis).map(T::lit),
                limits: j.limits.map(T::lit),
            })
            .collect();
        let arm = SerialArm::new(
            joints,
            self.base_frame.cast(),
            self.flange_to_effector.cast(),
            T::lit(self.joint_velocity_limit),
        )?;
        if self.home.len() != arm.dof() {
            return Err(ArmError::StateSize {
                expected: arm.dof(),
                found: self.home.len(),
            });
        }
        Ok(arm)
    }

    /// Builds a session arm: exactly [`SESSION_ARM_DOF`] joints.
    pub fn build<T: Real>(&self) -> Result<SerialArm<T>, ArmError> {
        if self.joints.len() != SESSION_ARM_DOF {
            return Err(ArmError::JointCount {
                expected: SESSION_ARM_DOF,
                found: self.joints.len(),
            });
        }
        self.build_any()
    }

    pub fn home_state<T: Real>(&self) -> JointState<T> {
        JointState::new(DVector::from_iterator(self.home.len(), self.home.iter().map(|&v| T::lit(v))), T::zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix2, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn planar(l1: f64, l2: f64) -> SerialArm<f64> {
        SerialArm::new(
            vec![
                RevoluteJoint {
                    origin: Transform::identity(),
                    axis: Vector3::z(),
                    limits: [-3.0, 3.0],
                },
                RevoluteJoint {
                    origin: Transform::from_translation(Vector3::new(l1, 0.0, 0.0)),
                    axis: Vector3::z(),
                    limits: [-3.0, 3.0],
                },
            ],
            Transform::identity(),
            Transform::from_translation(Vector3::new(l2, 0.0, 0.0)),
            10.0,
        )
        .unwrap()
    }

    fn spatial_arm() -> SerialArm<f64> {
        let axes = [Vector3::z(), Vector3::y(), Vector3::z(), Vector3::y(), Vector3::z(), Vector3::y(), Vector3::z()];
        let offsets = [0.1564, 0.1284, 0.2104, 0.2104, 0.2084, 0.1059, 0.1059];
        let joints = axes
            .iter()
            .zip(offsets)
            .map(|(a, o)| RevoluteJoint {
                origin: Transform::from_translation(Vector3::new(0.0, 0.01, o)),
                axis: *a,
                limits: [-6.0, 6.0],
            })
            .collect();
        SerialArm::new(
            joints,
            Transform::from_translation(Vector3::new(0.0, 0.0, 0.75)),
            Transform::new(Rotation::rx(0.3), Vector3::new(0.0, 0.02, 0.18)),
            1.2,
        )
        .unwrap()
    }

    fn unbounded_cfg(k: f64, lambda: f64, dt: f64) -> ServoConfig<f64> {
        ServoConfig::new(k, lambda, dt, WorkspaceBox::unbounded()).unwrap()
    }

    #[test]
    fn rejects_bad_arms() {
        let j = |axis: Vector3<f64>, limits| RevoluteJoint { origin: Transform::identity(), axis, limits };
        assert_eq!(
            SerialArm::new(vec![], Transform::identity(), Transform::identity(), 1.0),
            Err(ArmError::NoJoints)
        );
        assert!(matches!(
            SerialArm::new(vec![j(Vector3::new(0.0, 0.0, 2.0), [-1.0, 1.0])], Transform::identity(), Transform::identity(), 1.0),
            Err(ArmError::AxisNorm { index: 0, .. })
        ));
        assert!(matches!(
            SerialArm::new(vec![j(Vector3::z(), [1.0, 1.0])], Transform::identity(), Transform::identity(), 1.0),
            Err(ArmError::EmptyLimits { .. })
        ));
    }

    #[test]
    fn servo_config_stability_margin() {
        assert!(ServoConfig::new(0.5, 1e-3, 0.01, WorkspaceBox::unbounded()).is_ok());
        assert!(ServoConfig::new(50.0, 1e-3, 0.01, WorkspaceBox::unbounded()).is_err());
        assert!(ServoConfig::new(0.0, 1e-3, 0.01, WorkspaceBox::unbounded()).is_err());
        assert!(ServoConfig::new(0.5, 1e-3, -0.01, WorkspaceBox::unbounded()).is_err());
    }

    #[test]
    fn fk_with_identity_chain_is_base_then_flange() {
        let base = Transform::new(Rotation::rz(0.4), Vector3::new(1.0, 2.0, 3.0));
        let flange = Transform::new(Rotation::rx(-0.2), Vector3::new(0.0, 0.0, 0.1));
        let joints = (0..7)
            .map(|i| RevoluteJoint {
                origin: Transform::identity(),
                axis: if i % 2 == 0 { Vector3::z() } else { Vector3::y() },
                limits: [-1.0, 1.0],
            })
            .collect();
        let arm = SerialArm::new(joints, base, flange, 1.0).unwrap();
        let fk = arm.forward_kinematics(&JointState::from_slice(&[0.0; 7]));
        assert!(fk.max_abs_diff(&base.compose(&flange)) < 1e-15);
    }

    #[test]
    fn fk_is_periodic() {
        let arm = spatial_arm();
        let q = JointState::from_slice(&[0.1, 0.5, -0.2, 1.4, 0.3, 1.0, -0.4]);
        let base = arm.forward_kinematics(&q);
        for i in 0..7 {
            let mut shifted = q.clone();
            shifted.angles[i] += 2.0 * std::f64::consts::PI;
            assert!(arm.forward_kinematics(&shifted).max_abs_diff(&base) < 1e-12);
        }
    }

    #[test]
    fn planar_fk_matches_trigonometry() {
        let arm = planar(0.5, 0.3);
        let (a, b) = (0.4, -1.1);
        let fk = arm.forward_kinematics(&JointState::from_slice(&[a, b]));
        let expected = Vector3::new(0.5 * a.cos() + 0.3 * (a + b).cos(), 0.5 * a.sin() + 0.3 * (a + b).sin(), 0.0);
        assert_abs_diff_eq!(fk.translation, expected, epsilon = 1e-15);
    }

    #[test]
    fn single_joint_column_is_lever_arm() {
        let arm = planar(0.5, 0.3);
        let q = JointState::from_slice(&[0.7, 0.0]);
        let jac = arm.geometric_jacobian(&q);
        let r = arm.forward_kinematics(&q).translation;
        let v = Vector3::z().cross(&r);
        assert_abs_diff_eq!(jac.fixed_view::<3, 1>(0, 0).into_owned(), v, epsilon = 1e-15);
        assert_abs_diff_eq!(jac.fixed_view::<3, 1>(3, 0).into_owned(), Vector3::z(), epsilon = 1e-15);
    }

    /// Central differences of FK: translation difference and angle-axis of the relative rotation.
    fn finite_difference_column(arm: &SerialArm<f64>, q: &JointState<f64>, i: usize, eps: f64) -> Vector6<f64> {
        let mut plus = q.clone();
        let mut minus = q.clone();
        plus.angles[i] += eps;
        minus.angles[i] -= eps;
        let (tp, tm) = (arm.forward_kinematics(&plus), arm.forward_kinematics(&minus));
        let dp = (tp.translation - tm.translation) / (2.0 * eps);
        let dr = (tp.rotation * tm.rotation.transpose()).angle_axis() / (2.0 * eps);
        Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let arm = spatial_arm();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let angles: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
            let q = JointState::from_slice(&angles);
            let jac = arm.geometric_jacobian(&q);
            for i in 0..7 {
                let col: Vector6<f64> = jac.column(i).into_owned();
                let fd = finite_difference_column(&arm, &q, i, 1e-6);
                assert!((fd - col).norm() <= 1e-5 * col.norm(), "column {i}: {fd} vs {col}");
            }
        }
    }

    #[test]
    fn linear_jacobian_ignores_effector_orientation() {
        let arm = spatial_arm();
        let q = JointState::from_slice(&[0.2, 0.4, 0.1, 1.2, -0.3, 0.9, 0.5]);
        let flange = *arm.flange_to_effector();
        let reoriented = arm
            .clone()
            .with_flange_to_effector(Transform::new(Rotation::from_angle_axis(&Vector3::new(1.0, -0.5, 2.0)), flange.translation));
        let (a, b) = (arm.geometric_jacobian(&q), reoriented.geometric_jacobian(&q));
        assert!((a.rows(0, 3) - b.rows(0, 3)).amax() < 1e-15);
    }

    #[test]
    fn pose_error_cases() {
        let t = Transform::new(Rotation::rz(0.3), Vector3::new(0.2, 0.1, 0.5));
        assert_eq!(pose_error(&t, &t), Vector6::zeros());
        let shifted = Transform::new(t.rotation, t.translation + Vector3::new(0.1, 0.0, 0.0));
        assert_abs_diff_eq!(pose_error(&t, &shifted), Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0), epsilon = 1e-15);
        let turned = Transform::new(Rotation::rz(0.2) * t.rotation, t.translation);
        // Quaternion-log oracle for the rotational part.
        let rel = nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(
            *(turned.rotation * t.rotation.transpose()).matrix(),
        ))
        .scaled_axis();
        let e = pose_error(&t, &turned);
        assert_abs_diff_eq!(e, Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.2), epsilon = 1e-12);
        assert_abs_diff_eq!(e.fixed_rows::<3>(3).into_owned(), rel, epsilon = 1e-12);
    }

    #[test]
    fn servo_fixed_point() {
        let arm = spatial_arm();
        let q = JointState::from_slice(&[0.2, 0.4, 0.1, 1.2, -0.3, 0.9, 0.5]);
        let desired = arm.forward_kinematics(&q);
        let report = arm.resolved_rate_step(&q, &desired, &unbounded_cfg(0.5, 1e-3, 0.001));
        assert_eq!(report.state.angles, q.angles);
        assert!(!report.velocity_saturated && !report.joint_limit_clamped && !report.workspace_clamped);
    }

    #[test]
    fn planar_step_matches_analytic_inverse() {
        let (l1, l2) = (0.5, 0.3);
        let arm = planar(l1, l2);
        let (a, b) = (0.3, 0.9);
        let q = JointState::from_slice(&[a, b]);
        let desired = Transform::from_translation(Vector3::new(0.45, 0.55, 0.0));
        let (k, dt) = (0.5, 0.001);
        let cfg = unbounded_cfg(k, 0.0, dt).with_task_rows([true, true, false, false, false, false]);
        let report = arm.resolved_rate_step(&q, &desired, &cfg);

        let jac = Matrix2::new(
            -l1 * a.sin() - l2 * (a + b).sin(),
            -l2 * (a + b).sin(),
            l1 * a.cos() + l2 * (a + b).cos(),
            l2 * (a + b).cos(),
        );
        let p = Vector2::new(l1 * a.cos() + l2 * (a + b).cos(), l1 * a.sin() + l2 * (a + b).sin());
        let e = Vector2::new(0.45, 0.55) - p;
        let expected = Vector2::new(a, b) + jac.try_inverse().unwrap() * (e * k) * dt;
        assert_abs_diff_eq!(report.state.angles[0], expected.x, epsilon = 1e-12);
        assert_abs_diff_eq!(report.state.angles[1], expected.y, epsilon = 1e-12);
    }

    #[test]
    fn closed_loop_decays_exponentially() {
        let arm = spatial_arm();
        let mut q = JointState::from_slice(&[0.0, 0.5, 0.1, 1.5, -0.1, 1.14, 0.0]);
        let start = arm.forward_kinematics(&q);
        let desired = Transform::new(start.rotation, start.translation + Vector3::new(0.0, 0.3, 0.0));
        let cfg = unbounded_cfg(0.5, 1e-3, 0.001);
        for _ in 0..4000 {
            q = arm.resolved_rate_step(&q, &desired, &cfg).state;
        }
        let err = (desired.translation - arm.forward_kinematics(&q).translation).norm();
        let ratio = err / 0.3;
        let target = (-2.0f64).exp();
        assert!((ratio - target).abs() <= 0.02 * target, "ratio {ratio}");
    }

    #[test]
    fn velocity_saturation_scales_uniformly() {
        let arm = planar(0.5, 0.3);
        let q = JointState::from_slice(&[0.3, 0.9]);
        let desired = Transform::from_translation(Vector3::new(-0.6, 0.2, 0.0));
        let cfg = ServoConfig::new(40.0, 1e-3, 0.01, WorkspaceBox::unbounded())
            .unwrap()
            .with_task_rows([true, true, false, false, false, false]);
        let report = arm.resolved_rate_step(&q, &desired, &cfg);
        assert!(report.velocity_saturated);
        let rates = (&report.state.angles - &q.angles) / 0.01;
        assert!(rates.amax() <= 10.0 + 1e-9);
    }

    #[test]
    fn joint_limits_are_enforced() {
        let mut arm = planar(0.5, 0.3);
        arm.joints[1].limits = [0.0, 0.9005];
        let q = JointState::from_slice(&[0.3, 0.9]);
        let desired = Transform::from_translation(Vector3::new(0.2, 0.3, 0.0));
        let cfg = unbounded_cfg(0.5, 1e-3, 0.01).with_task_rows([true, true, false, false, false, false]);
        let report = arm.resolved_rate_step(&q, &desired, &cfg);
        assert!(report.joint_limit_clamped);
        assert!(arm.within_limits(&report.state));
    }

    #[test]
    fn arm_description_requires_seven_joints_for_sessions() {
        let desc = ArmDescription {
            name: "planar".into(),
            joints: vec![JointDescription { transform: Transform::identity(), axis: [0.0, 0.0, 1.0], limits: [-1.0, 1.0] }],
            base_frame: Transform::identity(),
            flange_to_effector: Transform::identity(),
            joint_velocity_limit: 1.0,
            home: vec![0.0],
            home_effector: None,
        };
        assert!(desc.build_any::<f64>().is_ok());
        assert_eq!(desc.build::<f64>(), Err(ArmError::JointCount { expected: 7, found: 1 }));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_q() -> impl Strategy<Value = JointState<f64>> {
            proptest::collection::vec(-2.5f64..2.5, 7).prop_map(|v| JointState::from_slice(&v))
        }

        proptest! {
            #[test]
            fn damping_never_increases_step(q in arb_q(), dx in -0.2f64..0.2, dy in -0.2f64..0.2, l1 in 0.0f64..0.5, extra in 0.0f64..0.5) {
                let arm = spatial_arm();
                let start = arm.forward_kinematics(&q);
                let desired = Transform::new(start.rotation, start.translation + Vector3::new(dx, dy, 0.05));
                let step = |lambda: f64| {
                    let cfg = unbounded_cfg(0.5, lambda, 0.01);
                    (arm.resolved_rate_step(&q, &desired, &cfg).state.angles - &q.angles).norm()
                };
                prop_assert!(step(l1 + extra) <= step(l1) + 1e-12);
            }

            #[test]
            fn workspace_clamp_holds(x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0, q in arb_q()) {
                let arm = spatial_arm();
                let bx = WorkspaceBox { min: Vector3::new(0.2, -0.3, 0.8), max: Vector3::new(0.7, 0.3, 1.2) };
                let cfg = ServoConfig::new(0.5, 1e-3, 0.01, bx).unwrap();
                let report = arm.resolved_rate_step(&q, &Transform::from_translation(Vector3::new(x, y, z)), &cfg);
                prop_assert!(bx.contains(&report.effective_desired.translation));
                prop_assert_eq!(report.workspace_clamped, !bx.contains(&Vector3::new(x, y, z)));
            }
        }
    }
}
