//! Six-axis arm kinematics: DH forward kinematics, damped least-squares IK,
//! standoff poses, and collision-checked joint trajectories.

mod planner;

use nalgebra::{Isometry3, Matrix6, Translation3, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{approach_frame, Pose6D};

pub use planner::{
    link_clearance, plan_motion, segment_capsule_distance, trapezoid_duration, PlannerConfig,
    Trajectory,
};

#[derive(Debug, thiserror::Error)]
pub enum ArmError {
    #[error("target at ({x:.3}, {y:.3}, {z:.3}) is unreachable")]
    Unreachable { x: f64, y: f64, z: f64 },
    #[error("no collision-free path: {0}")]
    PlanFailed(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Standard DH row: `Rz(theta + theta_offset) · Tz(d) · Tx(a) · Rx(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta_offset: f64,
}

impl DhRow {
    pub fn transform(&self, theta: f64) -> Isometry3<f64> {
        let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta + self.theta_offset);
        let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha);
        let translation = rz * Vector3::new(self.a, 0.0, self.d);
        Isometry3::from_parts(Translation3::from(translation), rz * rx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub q: [f64; 6],
}

impl JointConfig {
    pub fn new(q: [f64; 6]) -> Self {
        Self { q }
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::from_row_slice(&self.q)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            q: [v[0], v[1], v[2], v[3], v[4], v[5]],
        }
    }

    pub fn distance(&self, other: &JointConfig) -> f64 {
        (self.as_vector() - other.as_vector()).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub dh: [DhRow; 6],
    /// `[lower, upper]` per joint, radians.
    pub joint_limits: [[f64; 2]; 6],
    pub velocity_limits: [f64; 6],
    pub acceleration_limits: [f64; 6],
    /// Nozzle frame relative to the flange.
    pub tool: Pose6D,
    /// Capsule radius of each link segment, base outward; the last entry covers flange to nozzle.
    pub link_radii: [f64; 7],
}

/// Ready configuration: elbow up, nozzle near `(0.4, 0, 0.42)` pointing along world +X.
pub const HOME: JointConfig = JointConfig {
    q: [2.492, -2.106, 2.127, -0.022, 0.921, 1.571],
};

impl Default for ArmModel {
    fn default() -> Self {
        Self::ur5e()
    }
}

impl ArmModel {
    /// Manufacturer-published UR5e kinematics with an 8 cm nozzle on the flange.
    pub fn ur5e() -> Self {
        use std::f64::consts::{FRAC_PI_2, PI, TAU};
        let row = |a, alpha, d| DhRow {
            a,
            alpha,
            d,
            theta_offset: 0.0,
        };
        Self {
            dh: [
                row(0.0, FRAC_PI_2, 0.1625),
                row(-0.425, 0.0, 0.0),
                row(-0.3922, 0.0, 0.0),
                row(0.0, FRAC_PI_2, 0.1333),
                row(0.0, -FRAC_PI_2, 0.0997),
                row(0.0, 0.0, 0.0996),
            ],
            joint_limits: [
                [-TAU, TAU],
                [-TAU, TAU],
                [-PI, PI],
                [-TAU, TAU],
                [-TAU, TAU],
                [-TAU, TAU],
            ],
            velocity_limits: [PI; 6],
            acceleration_limits: [8.0; 6],
            tool: Pose6D::from_translation(Vector3::new(0.0, 0.0, 0.08)),
            link_radii: [0.06, 0.06, 0.06, 0.05, 0.045, 0.045, 0.02],
        }
    }

    pub fn with_tool(mut self, tool: Pose6D) -> Self {
        self.tool = tool;
        self
    }

    pub fn validate(&self) -> Result<(), ArmError> {
        for (j, [lo, hi]) in self.joint_limits.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ArmError::InvalidArgument(format!(
                    "joint {} limits are invalid",
                    j + 1
                )));
            }
        }
        if self
            .velocity_limits
            .iter()
            .chain(&self.acceleration_limits)
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(ArmError::InvalidArgument(
                "velocity and acceleration limits must be positive".into(),
            ));
        }
        if self.link_radii.iter().any(|r| !(*r >= 0.0)) {
            return Err(ArmError::InvalidArgument(
                "link radii must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &JointConfig) -> bool {
        q.q.iter()
            .zip(&self.joint_limits)
            .all(|(v, [lo, hi])| (lo..=hi).contains(&v))
    }

    pub fn clamp(&self, q: &JointConfig) -> JointConfig {
        let mut out = *q;
        for (v, [lo, hi]) in out.q.iter_mut().zip(&self.joint_limits) {
            *v = v.clamp(*lo, *hi);
        }
        out
    }

    /// Frames 0 through 6 (base, then each joint's DH frame), without the tool.
    pub fn frames(&self, q: &JointConfig) -> [Isometry3<f64>; 7] {
        let mut frames = [Isometry3::identity(); 7];
        for i in 0..6 {
            frames[i + 1] = frames[i] * self.dh[i].transform(q.q[i]);
        }
        frames
    }

    /// Base origin, the six DH frame origins, and the nozzle position.
    pub fn link_points(&self, q: &JointConfig) -> [Vector3<f64>; 8] {
        let frames = self.frames(q);
        let mut pts = [Vector3::zeros(); 8];
        for (p, f) in pts.iter_mut().zip(&frames) {
            *p = f.translation.vector;
        }
        pts[7] = (frames[6] * self.tool.to_isometry()).translation.vector;
        pts
    }

    pub fn forward_kinematics(&self, q: &JointConfig) -> Pose6D {
        Pose6D::from_isometry(&(self.frames(q)[6] * self.tool.to_isometry()))
    }

    /// Geometric Jacobian of the tool point, linear rows first.
    pub fn jacobian(&self, q: &JointConfig) -> Matrix6<f64> {
        let frames = self.frames(q);
        let tip = (frames[6] * self.tool.to_isometry()).translation.vector;
        let mut jac = Matrix6::zeros();
        for i in 0..6 {
            let z = frames[i].rotation * Vector3::z();
            let o = frames[i].translation.vector;
            let lin = z.cross(&(tip - o));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        jac
    }

    /// Largest distance of the flange from the base axis with the arm laid
    /// out straight (all DH angles zero).
    pub fn stretch_reach(&self) -> f64 {
        let flange = self.frames(&JointConfig::new([0.0; 6]))[6]
            .translation
            .vector;
        flange.xy().norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    pub max_iterations: usize,
    pub position_tolerance: f64,
    pub orientation_tolerance: f64,
    /// Extra seeds drawn around the caller's seed.
    pub perturbed_seeds: usize,
    pub perturbation: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            position_tolerance: 1e-6,
            orientation_tolerance: 1e-4,
            perturbed_seeds: 8,
            perturbation: 0.6,
        }
    }
}

fn pose_error(target: &Pose6D, current: &Pose6D) -> Vector6<f64> {
    let dp = target.position - current.position;
    let dr = (target.orientation * current.orientation.inverse()).scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

fn error_norms(e: &Vector6<f64>) -> (f64, f64) {
    (e.fixed_rows::<3>(0).norm(), e.fixed_rows::<3>(3).norm())
}

/// Levenberg-Marquardt style damped least squares from one seed.
fn solve_from(
    model: &ArmModel,
    target: &Pose6D,
    seed: JointConfig,
    config: &IkConfig,
) -> Option<JointConfig> {
    const POLISH: f64 = 1e-13;
    let mut q = model.clamp(&seed);
    let mut err = pose_error(target, &model.forward_kinematics(&q));
    let mut cost = err.norm_squared();
    let mut lambda = 1e-2;
    for _ in 0..config.max_iterations {
        let (ep, eo) = error_norms(&err);
        if ep < POLISH && eo < POLISH {
            break;
        }
        let jac = model.jacobian(&q);
        let jjt = jac * jac.transpose() + Matrix6::identity() * (lambda * lambda);
        let Some(step) = jjt.cholesky().map(|c| jac.transpose() * c.solve(&err)) else {
            lambda *= 10.0;
            continue;
        };
        let max = step.amax();
        let step = if max > 0.5 { step * (0.5 / max) } else { step };
        let trial = model.clamp(&JointConfig::from_vector(&(q.as_vector() + step)));
        let trial_err = pose_error(target, &model.forward_kinematics(&trial));
        let trial_cost = trial_err.norm_squared();
        if trial_cost < cost {
            q = trial;
            err = trial_err;
            cost = trial_cost;
            lambda = (lambda * 0.3).max(1e-9);
        } else {
            lambda *= 10.0;
            if lambda > 1e6 {
                break;
            }
        }
    }
    let (ep, eo) = error_norms(&err);
    (ep < config.position_tolerance && eo < config.orientation_tolerance).then_some(q)
}

/// Joint configuration whose tool pose matches `target`.
///
/// Runs damped least squares from `seed` and from deterministic perturbed
/// seeds; among converged solutions the one closest to `seed` wins.
pub fn inverse_kinematics(
    model: &ArmModel,
    target: &Pose6D,
    seed: &JointConfig,
    config: &IkConfig,
) -> Result<JointConfig, ArmError> {
    let unreachable = || ArmError::Unreachable {
        x: target.position.x,
        y: target.position.y,
        z: target.position.z,
    };
    if !target.is_finite() || !seed.is_finite() {
        return Err(ArmError::InvalidArgument(
            "target and seed must be finite".into(),
        ));
    }
    let mut best: Option<(f64, JointConfig)> = None;
    let mut consider = |q: JointConfig| {
        let d = q.distance(seed);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, q));
        }
    };
    if let Some(q) = solve_from(model, target, *seed, config) {
        if q.distance(seed) == 0.0 {
            return Ok(q);
        }
        consider(q);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x1c0ffee);
    for _ in 0..config.perturbed_seeds {
        let mut start = *seed;
        for v in &mut start.q {
            *v += rng.random_range(-config.perturbation..=config.perturbation);
        }
        if let Some(q) = solve_from(model, target, start, config) {
            consider(q);
        }
    }
    best.map(|(_, q)| q).ok_or_else(unreachable)
}

/// Nozzle pose `distance` out along the cluster's approach axis, aimed back at it.
pub fn standoff_pose(cluster: &Pose6D, distance: f64) -> Result<Pose6D, ArmError> {
    if !(distance > 0.0 && distance.is_finite()) {
        return Err(ArmError::InvalidArgument(format!(
            "standoff distance must be positive, got {distance}"
        )));
    }
    let axis = cluster.z_axis();
    let orientation =
        approach_frame(&-axis).map_err(|e| ArmError::InvalidArgument(e.to_string()))?;
    Ok(Pose6D::new(cluster.position + axis * distance, orientation))
}
