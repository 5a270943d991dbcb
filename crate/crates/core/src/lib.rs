//! Simulation and algorithms for a robotic apple-pollination pipeline.
//!
//! A seeded orchard scene is rendered to an RGB-D frame, flower clusters are
//! segmented and their poses estimated, the operator reviews the targets, a
//! visiting order is solved, and a six-axis arm carries an electrostatic
//! nozzle to each cluster. [`mission`] ties the stages together and reports
//! cycle time, spray doses, and simulated fruit set. [`analysis`] holds the
//! fruit-quality statistics.

pub mod analysis;
pub mod arm;
pub mod geometry;
pub mod mission;
pub mod orchard;
pub mod perception;
pub mod seed;
pub mod sequencing;
pub mod sprayer;

pub use arm::{ArmModel, JointConfig, Trajectory};
pub use geometry::{CameraModel, PointCloud, Pose6D};
pub use mission::{
    run_mission, Mission, MissionConfig, MissionError, MissionEvent, MissionReport, Transition,
};
pub use orchard::{generate_scene, OrchardScene, SceneConfig};
pub use perception::{ClusterTarget, Decision, InstanceMaskSet, ReviewDecision, TargetState};
pub use sequencing::{Tour, TourProblem};
pub use sprayer::{SprayEvent, SprayerConfig, TankState};
