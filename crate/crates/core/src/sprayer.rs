//! Electrostatic sprayer: pump flow, cone deposition, and tank accounting.
//!
//! Deposition is a parametric model. A flower receives spray only if it lies
//! inside the nozzle cone (apex at the nozzle, axis along the nozzle's +Z) and
//! no obstacle capsule blocks the straight line from nozzle to flower. Its base
//! dose is the emitted volume times the fraction of the cone's solid angle the
//! flower disk subtends, times the cosine between the stigma normal and the
//! direction back to the nozzle, times a Gaussian radial profile across the
//! cone. Flowers facing the nozzle get the electrostatic gain on top. If the
//! resulting doses add up to more than was emitted they are scaled down so
//! none of the volume is created.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose6D;
use crate::orchard::ray_capsule;
use crate::orchard::OrchardScene;

#[derive(Debug, Error)]
pub enum SprayerError {
    #[error("invalid sprayer config: {0}")]
    InvalidConfig(String),
    #[error("tank holds {available_ml:.3} ml but the spray needs {required_ml:.3} ml")]
    TankEmpty { available_ml: f64, required_ml: f64 },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("writing spray event: {0}")]
    Io(#[from] std::io::Error),
}

/// Piecewise-linear pump flow in ml/s as a function of supply voltage.
///
/// Knots are `[volts, ml_per_s]` with strictly increasing voltage. Outside the
/// knot range the end segments are extended, and negative flow clamps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowMap(pub Vec<[f64; 2]>);

impl Default for FlowMap {
    fn default() -> Self {
        Self(vec![[0.0, 0.0], [24.0, 1.573]])
    }
}

impl FlowMap {
    pub fn validate(&self) -> Result<(), SprayerError> {
        let knots = &self.0;
        if knots.is_empty() {
            return Err(SprayerError::InvalidConfig(
                "flow map needs at least one knot".into(),
            ));
        }
        if knots.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SprayerError::InvalidConfig(
                "flow map knots must be finite".into(),
            ));
        }
        if knots.iter().any(|k| k[1] < 0.0) {
            return Err(SprayerError::InvalidConfig(
                "flow map has negative flow".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(SprayerError::InvalidConfig(
                "flow map voltages must strictly increase".into(),
            ));
        }
        Ok(())
    }

    pub fn flow_at(&self, volts: f64) -> f64 {
        let knots = &self.0;
        let Some(first) = knots.first() else {
            return 0.0;
        };
        if knots.len() == 1 {
            return first[1].max(0.0);
        }
        let seg = knots
            .windows(2)
            .position(|w| volts <= w[1][0])
            .unwrap_or(knots.len() - 2);
        let ([v0, f0], [v1, f1]) = (knots[seg], knots[seg + 1]);
        (f0 + (f1 - f0) * (volts - v0) / (v1 - v0)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SprayerConfig {
    pub supply_voltage: f64,
    pub flow_map: FlowMap,
    pub cone_half_angle_deg: f64,
    /// Dose multiplier for flowers whose stigma faces the nozzle.
    pub electrostatic_gain: f64,
    /// Seconds per spray.
    pub spray_duration: f64,
    /// Air pressure, recorded only.
    pub spray_pressure_psi: f64,
    /// Nozzle-to-cluster distance, meters.
    pub standoff: f64,
    /// Width of the radial dose profile as a fraction of the half-angle.
    pub profile_width: f64,
    /// Relative standard deviation of multiplicative per-flower dose noise.
    pub dose_jitter: f64,
}

impl Default for SprayerConfig {
    fn default() -> Self {
        Self {
            supply_voltage: 24.0,
            flow_map: FlowMap::default(),
            cone_half_angle_deg: 15.0,
            electrostatic_gain: 2.0,
            spray_duration: 2.0,
            spray_pressure_psi: 15.0,
            standoff: 0.20,
            profile_width: 0.5,
            dose_jitter: 0.0,
        }
    }
}

impl SprayerConfig {
    pub fn validate(&self) -> Result<(), SprayerError> {
        self.flow_map.validate()?;
        let bad = |what: &str| Err(SprayerError::InvalidConfig(what.to_string()));
        if !self.supply_voltage.is_finite() {
            return bad("supply voltage must be finite");
        }
        if !(self.cone_half_angle_deg > 0.0 && self.cone_half_angle_deg < 90.0) {
            return bad("cone half-angle must lie strictly between 0 and 90 degrees");
        }
        if !(self.electrostatic_gain >= 1.0 && self.electrostatic_gain.is_finite()) {
            return bad("electrostatic gain must be at least 1");
        }
        if !(self.spray_duration >= 0.0 && self.spray_duration.is_finite()) {
            return bad("spray duration must be non-negative");
        }
        if !(self.standoff > 0.0 && self.standoff.is_finite()) {
            return bad("standoff must be positive");
        }
        if !(self.profile_width > 0.0 && self.profile_width.is_finite()) {
            return bad("profile width must be positive");
        }
        if !(self.dose_jitter >= 0.0 && self.dose_jitter.is_finite()) {
            return bad("dose jitter must be non-negative");
        }
        Ok(())
    }

    pub fn flow_rate(&self) -> f64 {
        self.flow_map.flow_at(self.supply_voltage)
    }
}

/// Suspension volume in ml emitted over `duration` seconds.
pub fn emitted_volume(config: &SprayerConfig, duration: f64) -> Result<f64, SprayerError> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(SprayerError::InvalidArgument(format!(
            "spray duration must be non-negative, got {duration}"
        )));
    }
    Ok(config.flow_rate() * duration)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TankState {
    /// Grams of pollen per liter of suspension.
    pub pollen_concentration: f64,
    /// Remaining suspension, ml.
    pub suspension_volume: f64,
    /// Volume after a refill, ml.
    pub capacity: f64,
    /// Seconds since the suspension was mixed.
    pub age_since_mix: f64,
    pub replacement_interval: f64,
}

impl Default for TankState {
    fn default() -> Self {
        Self {
            pollen_concentration: 2.0,
            suspension_volume: 1000.0,
            capacity: 1000.0,
            age_since_mix: 0.0,
            replacement_interval: 90.0 * 60.0,
        }
    }
}

impl TankState {
    pub fn with_concentration(concentration: f64) -> Self {
        Self {
            pollen_concentration: concentration,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SprayerError> {
        let ok = self.pollen_concentration >= 0.0
            && self.suspension_volume >= 0.0
            && self.capacity >= self.suspension_volume
            && self.age_since_mix >= 0.0
            && self.replacement_interval > 0.0
            && [
                self.pollen_concentration,
                self.capacity,
                self.age_since_mix,
                self.replacement_interval,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SprayerError::InvalidConfig(format!(
                "inconsistent tank state {self:?}"
            )))
        }
    }

    pub fn replacement_due(&self) -> bool {
        self.age_since_mix >= self.replacement_interval
    }

    /// Fresh suspension at full capacity.
    pub fn replaced(&self) -> Self {
        Self {
            suspension_volume: self.capacity,
            age_since_mix: 0.0,
            ..self.clone()
        }
    }
}

/// Ages the suspension by `elapsed` seconds and reports whether it is due for replacement.
pub fn tick_tank(tank: &TankState, elapsed: f64) -> Result<(TankState, bool), SprayerError> {
    if !(elapsed >= 0.0 && elapsed.is_finite()) {
        return Err(SprayerError::InvalidArgument(format!(
            "elapsed time must be non-negative, got {elapsed}"
        )));
    }
    let next = TankState {
        age_since_mix: tank.age_since_mix + elapsed,
        ..tank.clone()
    };
    let due = next.replacement_due();
    Ok((next, due))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TankEventKind {
    /// Suspension reached its replacement interval.
    Scheduled,
    /// Not enough suspension left for the next spray.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TankEvent {
    /// Mission clock at replacement, seconds.
    pub t: f64,
    pub kind: TankEventKind,
    /// Volume discarded, ml.
    pub discarded: f64,
    /// Suspension age when replaced, seconds.
    pub age: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SprayEvent {
    pub cluster_id: Option<u32>,
    pub nozzle: Pose6D,
    pub duration: f64,
    pub emitted_volume: f64,
    /// Deposited ml per flower id.
    #[serde(deserialize_with = "id_keyed")]
    pub doses: BTreeMap<u32, f64>,
    #[serde(deserialize_with = "id_keyed")]
    pub covered: BTreeMap<u32, bool>,
}

/// Accepts flower ids as JSON object keys even when the event is read
/// through a buffered (internally tagged) enum, where keys stay strings.
fn id_keyed<'de, D, T>(d: D) -> Result<BTreeMap<u32, T>, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Deserialize<'de>,
{
    BTreeMap::<String, T>::deserialize(d)?
        .into_iter()
        .map(|(k, v)| {
            k.parse()
                .map(|k| (k, v))
                .map_err(|_| serde::de::Error::custom(format!("invalid flower id {k:?}")))
        })
        .collect()
}

impl SprayEvent {
    pub fn total_dose(&self) -> f64 {
        self.doses.values().sum()
    }

    /// Fraction of a cluster's flowers that received spray.
    pub fn covered_fraction(&self, flower_ids: &[u32]) -> f64 {
        if flower_ids.is_empty() {
            return 0.0;
        }
        let hit = flower_ids
            .iter()
            .filter(|id| self.covered.get(id).copied().unwrap_or(false))
            .count();
        hit as f64 / flower_ids.len() as f64
    }

    pub fn write_json_line<W: Write>(&self, mut out: W) -> Result<(), SprayerError> {
        let line = serde_json::to_string(self).map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
        Ok(())
    }
}

/// Sprays the scene from `nozzle` for the configured duration.
///
/// Returns the event and the tank with the emitted volume drawn off. The tank
/// must already hold enough suspension; refilling is the caller's job.
pub fn simulate_spray(
    scene: &OrchardScene,
    nozzle: &Pose6D,
    config: &SprayerConfig,
    tank: &TankState,
    seed: u64,
) -> Result<(SprayEvent, TankState), SprayerError> {
    config.validate()?;
    if !nozzle.is_finite() {
        return Err(SprayerError::InvalidArgument(
            "nozzle pose is not finite".into(),
        ));
    }
    let emitted = emitted_volume(config, config.spray_duration)?;
    if tank.suspension_volume < emitted {
        return Err(SprayerError::TankEmpty {
            available_ml: tank.suspension_volume,
            required_ml: emitted,
        });
    }

    let apex = nozzle.position;
    let axis = nozzle.z_axis();
    let half_angle = config.cone_half_angle_deg.to_radians();
    let cone_solid_angle = 2.0 * PI * (1.0 - half_angle.cos());
    let sigma = config.profile_width * half_angle;
    let disk_area = PI * scene.flower_radius * scene.flower_radius;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut doses = BTreeMap::new();
    let mut covered = BTreeMap::new();
    for (_, flower) in scene.flowers() {
        // Drawn for every flower so one flower's noise never depends on another's coverage.
        let noise: f64 = StandardNormal.sample(&mut rng);
        let to_flower = flower.position - apex;
        let range = to_flower.norm();
        let angle = if range > 0.0 {
            axis.dot(&(to_flower / range)).clamp(-1.0, 1.0).acos()
        } else {
            0.0
        };
        let hit = range > 0.0 && angle <= half_angle && !occluded(scene, &apex, &flower.position);
        covered.insert(flower.id, hit);
        let mut dose = 0.0;
        if hit {
            let back = -to_flower / range;
            let cos_inc = flower.stigma_normal.dot(&back).max(0.0);
            let fraction = (disk_area / (range * range)) / cone_solid_angle;
            let profile = (-0.5 * (angle / sigma).powi(2)).exp();
            dose = emitted * fraction * cos_inc * profile;
            if cos_inc > 0.0 {
                dose *= config.electrostatic_gain;
            }
            dose *= (1.0 + config.dose_jitter * noise).max(0.0);
        }
        doses.insert(flower.id, dose);
    }
    let total: f64 = doses.values().sum();
    if total > emitted {
        let scale = emitted / total;
        for dose in doses.values_mut() {
            *dose *= scale;
        }
        // Guard against the sum landing an ulp above the emitted volume.
        let excess = doses.values().sum::<f64>() - emitted;
        if excess > 0.0 {
            let shrink = 1.0 - 4.0 * f64::EPSILON;
            doses.values_mut().for_each(|d| *d *= shrink);
        }
    }

    let event = SprayEvent {
        cluster_id: None,
        nozzle: *nozzle,
        duration: config.spray_duration,
        emitted_volume: emitted,
        doses,
        covered,
    };
    let tank = TankState {
        suspension_volume: (tank.suspension_volume - emitted).max(0.0),
        ..tank.clone()
    };
    Ok((event, tank))
}

fn occluded(scene: &OrchardScene, from: &Vector3<f64>, to: &Vector3<f64>) -> bool {
    let delta = to - from;
    let dist = delta.norm();
    let dir = delta / dist;
    scene.obstacles.iter().any(|c| {
        c.surface_distance(from) <= 0.0 || ray_capsule(from, &dir, c).is_some_and(|t| t < dist)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::standoff_pose;
    use crate::geometry::approach_frame;
    use crate::orchard::{
        generate_scene, Capsule, CapsuleKind, ClusterSpec, FlowerSpec, SceneConfig,
    };
    use proptest::prelude::*;

    fn flower(id: u32, position: Vector3<f64>, normal: Vector3<f64>) -> FlowerSpec {
        FlowerSpec {
            id,
            position,
            stigma_normal: normal.normalize(),
            receptive: true,
        }
    }

    fn scene_with(flowers: Vec<FlowerSpec>) -> OrchardScene {
        let mut scene = OrchardScene::empty(0);
        scene.clusters.push(ClusterSpec {
            id: 1,
            center: flowers[0].position,
            opening_axis: -Vector3::x(),
            flowers,
            concavity_depth: 0.0,
        });
        scene
    }

    /// Nozzle at the origin spraying along +x.
    fn nozzle() -> Pose6D {
        Pose6D::new(Vector3::zeros(), approach_frame(&Vector3::x()).unwrap())
    }

    #[test]
    fn emitted_volume_follows_flow_map() {
        let config = SprayerConfig::default();
        assert!((emitted_volume(&config, 2.0).unwrap() - 3.146).abs() < 1e-12);
        assert_eq!(emitted_volume(&config, 0.0).unwrap(), 0.0);
        let half = SprayerConfig {
            supply_voltage: 12.0,
            ..config
        };
        assert!((emitted_volume(&half, 2.0).unwrap() - 1.573).abs() < 1e-12);
        assert!(emitted_volume(&half, -1.0).is_err());
    }

    #[test]
    fn flow_map_interpolates_and_extends() {
        let map = FlowMap(vec![[0.0, 0.0], [10.0, 1.0], [20.0, 3.0]]);
        assert!((map.flow_at(15.0) - 2.0).abs() < 1e-12);
        assert!((map.flow_at(25.0) - 4.0).abs() < 1e-12);
        assert_eq!(map.flow_at(-5.0), 0.0);
        assert!(FlowMap(vec![[1.0, 0.0], [1.0, 1.0]]).validate().is_err());
    }

    #[test]
    fn on_axis_facing_flower_gets_the_largest_dose() {
        let facing = -Vector3::x();
        let scene = scene_with(vec![
            flower(10, Vector3::new(0.2, 0.0, 0.0), facing),
            flower(11, Vector3::new(0.2, 0.03, 0.0), facing),
            flower(12, Vector3::new(0.25, 0.0, 0.02), facing),
            flower(
                13,
                Vector3::new(0.2, 0.0, -0.02),
                Vector3::new(-1.0, 0.0, 1.0),
            ),
            flower(14, Vector3::new(-0.01, 0.2, 0.0), facing),
        ]);
        let (event, tank) = simulate_spray(
            &scene,
            &nozzle(),
            &SprayerConfig::default(),
            &TankState::default(),
            1,
        )
        .unwrap();
        let best = event
            .doses
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!(*best.0, 10);
        assert!(event.covered[&10]);
        assert!(!event.covered[&14], "95 degrees off axis");
        assert_eq!(event.doses[&14], 0.0);
        assert!((tank.suspension_volume - (1000.0 - 3.146)).abs() < 1e-9);
    }

    #[test]
    fn gain_applies_only_to_facing_flowers() {
        let scene = scene_with(vec![
            flower(10, Vector3::new(0.2, 0.0, 0.0), -Vector3::x()),
            flower(11, Vector3::new(0.2, 0.01, 0.0), Vector3::x()),
        ]);
        let plain = SprayerConfig {
            electrostatic_gain: 1.0,
            ..SprayerConfig::default()
        };
        let (a, _) = simulate_spray(&scene, &nozzle(), &plain, &TankState::default(), 0).unwrap();
        let (b, _) = simulate_spray(
            &scene,
            &nozzle(),
            &SprayerConfig::default(),
            &TankState::default(),
            0,
        )
        .unwrap();
        assert!((b.doses[&10] / a.doses[&10] - 2.0).abs() < 1e-12);
        assert!(b.covered[&11]);
        assert_eq!(b.doses[&11], 0.0);
    }

    #[test]
    fn empty_tank_is_an_error() {
        let scene = scene_with(vec![flower(10, Vector3::new(0.2, 0.0, 0.0), -Vector3::x())]);
        let tank = TankState {
            suspension_volume: 1.0,
            ..TankState::default()
        };
        let err =
            simulate_spray(&scene, &nozzle(), &SprayerConfig::default(), &tank, 0).unwrap_err();
        assert!(matches!(err, SprayerError::TankEmpty { .. }));
    }

    #[test]
    fn tank_ages_toward_replacement() {
        let tank = TankState {
            age_since_mix: 89.0 * 60.0,
            ..TankState::default()
        };
        assert!(tick_tank(&tank, 120.0).unwrap().1);
        let (same, due) = tick_tank(&tank, 0.0).unwrap();
        assert_eq!(same, tank);
        assert!(!due);

        let mut tank = TankState::default();
        let mut replacements = 0;
        for _ in 0..2 {
            let (next, due) = tick_tank(&tank, 45.0 * 60.0).unwrap();
            tank = if due {
                replacements += 1;
                next.replaced()
            } else {
                next
            };
        }
        assert_eq!(replacements, 1);
        assert_eq!(tank.age_since_mix, 0.0);
    }

    #[test]
    fn standoff_sprays_cover_facing_flowers() {
        let config = SceneConfig {
            cluster_count: 23,
            total_flowers: Some(130),
            span_y: [-0.45, 0.45],
            ..SceneConfig::benchmark()
        };
        let scene = generate_scene(&config, 23).unwrap();
        let sprayer = SprayerConfig::default();
        for cluster in &scene.clusters {
            let target = Pose6D::new(
                cluster.center,
                approach_frame(&cluster.opening_axis).unwrap(),
            );
            let pose = standoff_pose(&target, sprayer.standoff).unwrap();
            let (event, _) =
                simulate_spray(&scene, &pose, &sprayer, &TankState::default(), 0).unwrap();
            let ids: Vec<u32> = cluster.flowers.iter().map(|f| f.id).collect();
            for f in &cluster.flowers {
                let back = (pose.position - f.position).normalize();
                if f.stigma_normal.dot(&back) > 0.0 {
                    assert!(
                        event.covered[&f.id],
                        "cluster {} flower {}",
                        cluster.id, f.id
                    );
                    assert!(event.doses[&f.id] > 0.0);
                }
            }
            assert!(event.covered_fraction(&ids) > 0.5);
            assert!(event.total_dose() <= event.emitted_volume);
        }
    }

    #[test]
    fn event_serializes_as_one_line() {
        let scene = scene_with(vec![flower(10, Vector3::new(0.2, 0.0, 0.0), -Vector3::x())]);
        let (event, _) = simulate_spray(
            &scene,
            &nozzle(),
            &SprayerConfig::default(),
            &TankState::default(),
            0,
        )
        .unwrap();
        let mut buf = Vec::new();
        event.write_json_line(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(value["doses"]["10"].as_f64().unwrap() > 0.0);
    }

    fn random_scene(seed: u64, n: usize) -> OrchardScene {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flowers = (0..n)
            .map(|k| {
                let p = Vector3::new(
                    rng.random_range(0.05..0.4),
                    rng.random_range(-0.08..0.08),
                    rng.random_range(-0.08..0.08),
                );
                let nrm = Vector3::new(
                    rng.random_range(-1.0..0.3),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                flower(k as u32, p, nrm)
            })
            .collect();
        scene_with(flowers)
    }

    proptest! {
        #[test]
        fn doses_never_exceed_emitted(seed in any::<u64>(), n in 1usize..40, gain in 1.0f64..50.0, jitter in 0.0f64..1.0) {
            let scene = random_scene(seed, n);
            let config = SprayerConfig { electrostatic_gain: gain, dose_jitter: jitter, cone_half_angle_deg: 40.0, ..SprayerConfig::default() };
            let (event, _) = simulate_spray(&scene, &nozzle(), &config, &TankState::default(), seed).unwrap();
            prop_assert!(event.total_dose() <= event.emitted_volume);
            prop_assert!(event.doses.values().all(|d| *d >= 0.0));
        }

        #[test]
        fn wider_cone_never_uncovers(seed in any::<u64>(), a in 1.0f64..45.0, b in 1.0f64..45.0) {
            let scene = random_scene(seed, 20);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let narrow = SprayerConfig { cone_half_angle_deg: lo, ..SprayerConfig::default() };
            let wide = SprayerConfig { cone_half_angle_deg: hi, ..SprayerConfig::default() };
            let (n, _) = simulate_spray(&scene, &nozzle(), &narrow, &TankState::default(), 0).unwrap();
            let (w, _) = simulate_spray(&scene, &nozzle(), &wide, &TankState::default(), 0).unwrap();
            for (id, hit) in &n.covered {
                prop_assert!(!hit || w.covered[id]);
            }
        }

        #[test]
        fn longer_spray_never_lowers_a_dose(seed in any::<u64>(), a in 0.0f64..5.0, b in 0.0f64..5.0) {
            let scene = random_scene(seed, 20);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let short = SprayerConfig { spray_duration: lo, ..SprayerConfig::default() };
            let long = SprayerConfig { spray_duration: hi, ..SprayerConfig::default() };
            let (s, _) = simulate_spray(&scene, &nozzle(), &short, &TankState::default(), seed).unwrap();
            let (l, _) = simulate_spray(&scene, &nozzle(), &long, &TankState::default(), seed).unwrap();
            for (id, d) in &s.doses {
                prop_assert!(l.doses[id] >= *d * (1.0 - 1e-12));
            }
        }

        #[test]
        fn blocking_capsule_zeroes_the_dose(t in 0.2f64..0.8, radius in 0.002f64..0.02) {
            let mut scene = scene_with(vec![flower(10, Vector3::new(0.2, 0.01, 0.0), -Vector3::x())]);
            let target = scene.clusters[0].flowers[0].position;
            let mid = target * t;
            scene.obstacles.push(Capsule::new(mid - Vector3::z() * 0.05, mid + Vector3::z() * 0.05, radius, CapsuleKind::Branch));
            let (event, _) = simulate_spray(&scene, &nozzle(), &SprayerConfig::default(), &TankState::default(), 0).unwrap();
            prop_assert_eq!(event.doses[&10], 0.0);
            prop_assert!(!event.covered[&10]);
        }
    }
}
