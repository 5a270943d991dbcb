use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{inverse_kinematics, ArmError, ArmModel, IkConfig, JointConfig};
use crate::geometry::{segment_segment_distance, Pose6D};
use crate::orchard::Capsule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Largest per-joint change between consecutive waypoints, degrees.
    pub max_step_deg: f64,
    /// Minimum link-to-obstacle surface distance, meters.
    pub safety_margin: f64,
    pub via_attempts: usize,
    /// Half-width of the box around the path midpoint that via configurations are drawn from, radians.
    pub via_spread: f64,
    /// Fraction of the arm's velocity and acceleration limits used for timing.
    pub speed_scale: f64,
    pub seed: u64,
    pub ik: IkConfig,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            max_step_deg: 1.0,
            safety_margin: 0.02,
            via_attempts: 60,
            via_spread: 1.2,
            speed_scale: 0.085,
            seed: 0,
            ik: IkConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<JointConfig>,
    /// Seconds from the start of the motion, strictly increasing.
    pub timestamps: Vec<f64>,
    pub duration: f64,
}

impl Trajectory {
    pub fn final_config(&self) -> Option<JointConfig> {
        self.waypoints.last().copied()
    }

    /// `t,q1..q6` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,q1,q2,q3,q4,q5,q6\n");
        for (t, q) in self.timestamps.iter().zip(&self.waypoints) {
            let _ = write!(out, "{t}");
            for v in q.q {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Distance between segment `p0p1` and the capsule surface, clamped at 0.
pub fn segment_capsule_distance(p0: &Vector3<f64>, p1: &Vector3<f64>, capsule: &Capsule) -> f64 {
    (segment_segment_distance(p0, p1, &capsule.p0, &capsule.p1) - capsule.radius).max(0.0)
}

/// Smallest signed gap between any link capsule and any obstacle surface.
pub fn link_clearance(model: &ArmModel, q: &JointConfig, obstacles: &[Capsule]) -> f64 {
    let pts = model.link_points(q);
    let mut clearance = f64::INFINITY;
    for (k, radius) in model.link_radii.iter().enumerate() {
        for o in obstacles {
            let gap =
                segment_segment_distance(&pts[k], &pts[k + 1], &o.p0, &o.p1) - o.radius - radius;
            clearance = clearance.min(gap);
        }
    }
    clearance
}

/// Rest-to-rest time over `distance` with a trapezoidal (or triangular) speed profile.
pub fn trapezoid_duration(distance: f64, v_max: f64, a_max: f64) -> f64 {
    if distance <= 0.0 {
        return 0.0;
    }
    if v_max * v_max / a_max >= distance {
        2.0 * (distance / a_max).sqrt()
    } else {
        distance / v_max + v_max / a_max
    }
}

/// Time at which a rest-to-rest profile over `[0, 1]` reaches `s`.
fn time_at(s: f64, v: f64, a: f64, total: f64) -> f64 {
    let ramp = (v * v / (2.0 * a)).min(0.5);
    if s <= ramp {
        (2.0 * s / a).sqrt()
    } else if s >= 1.0 - ramp {
        total - (2.0 * (1.0 - s) / a).sqrt()
    } else {
        v / a + (s - ramp) / v
    }
}

/// Plans a timed joint path from `from` to the nozzle pose `target`.
///
/// Tries the straight joint-space segment first, then paths through seeded
/// random via configurations. Each leg is densified to `max_step_deg` joint
/// steps, every waypoint must keep `safety_margin` from every obstacle, and
/// each leg is timed rest-to-rest with all joints synchronized.
pub fn plan_motion(
    model: &ArmModel,
    from: &JointConfig,
    target: &Pose6D,
    obstacles: &[Capsule],
    config: &PlannerConfig,
) -> Result<Trajectory, ArmError> {
    model.validate()?;
    if !model.within_limits(from) || !from.is_finite() {
        return Err(ArmError::InvalidArgument(
            "start configuration is outside the joint limits".into(),
        ));
    }
    if !(config.max_step_deg > 0.0 && config.speed_scale > 0.0) {
        return Err(ArmError::InvalidArgument(
            "max_step_deg and speed_scale must be positive".into(),
        ));
    }
    let goal = inverse_kinematics(model, target, from, &config.ik)?;
    let clear = |q: &JointConfig| link_clearance(model, q, obstacles) >= config.safety_margin;
    if !clear(from) {
        return Err(ArmError::PlanFailed(
            "start configuration violates the safety margin".into(),
        ));
    }
    if !clear(&goal) {
        return Err(ArmError::PlanFailed(
            "goal configuration violates the safety margin".into(),
        ));
    }
    let step = config.max_step_deg.to_radians();
    if let Some(path) = densify(&[*from, goal], step).filter(|p| p.iter().all(clear)) {
        return Ok(time_path(
            model,
            &[*from, goal],
            &path,
            step,
            config.speed_scale,
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.via_attempts {
        let mut via = JointConfig::from_vector(&((from.as_vector() + goal.as_vector()) / 2.0));
        for v in &mut via.q {
            *v += rng.random_range(-config.via_spread..=config.via_spread);
        }
        let via = model.clamp(&via);
        let corners = [*from, via, goal];
        if let Some(path) = densify(&corners, step).filter(|p| p.iter().all(clear)) {
            return Ok(time_path(model, &corners, &path, step, config.speed_scale));
        }
    }
    Err(ArmError::PlanFailed(format!(
        "no clear path after {} via attempts",
        config.via_attempts
    )))
}

fn steps_for(a: &JointConfig, b: &JointConfig, step: f64) -> usize {
    let span = (b.as_vector() - a.as_vector()).amax();
    ((span / step).ceil() as usize).max(1)
}

/// Waypoints along straight legs between `corners`, inclusive of the ends.
fn densify(corners: &[JointConfig], step: f64) -> Option<Vec<JointConfig>> {
    let mut out = vec![corners[0]];
    for pair in corners.windows(2) {
        let (a, b) = (pair[0].as_vector(), pair[1].as_vector());
        if (b - a).amax() == 0.0 {
            continue;
        }
        let n = steps_for(&pair[0], &pair[1], step);
        for k in 1..=n {
            out.push(JointConfig::from_vector(
                &(a + (b - a) * (k as f64 / n as f64)),
            ));
        }
    }
    Some(out)
}

fn time_path(
    model: &ArmModel,
    corners: &[JointConfig],
    path: &[JointConfig],
    step: f64,
    scale: f64,
) -> Trajectory {
    let mut timestamps = vec![0.0];
    let mut offset = 0.0;
    for pair in corners.windows(2) {
        let delta = pair[1].as_vector() - pair[0].as_vector();
        if delta.amax() == 0.0 {
            continue;
        }
        // Joint j moves |delta_j| * s; the slowest joint bounds ds/dt and d2s/dt2.
        let mut v = f64::INFINITY;
        let mut a = f64::INFINITY;
        for j in 0..6 {
            let d = delta[j].abs();
            if d > 0.0 {
                v = v.min(model.velocity_limits[j] * scale / d);
                a = a.min(model.acceleration_limits[j] * scale / d);
            }
        }
        let total = trapezoid_duration(1.0, v, a);
        let n = steps_for(&pair[0], &pair[1], step);
        for k in 1..=n {
            timestamps.push(offset + time_at(k as f64 / n as f64, v, a, total));
        }
        offset += total;
    }
    debug_assert_eq!(timestamps.len(), path.len());
    Trajectory {
        waypoints: path.to_vec(),
        duration: offset,
        timestamps,
    }
}
