//! Domain model for a non-reactive driving scene: map geometry, signal
//! timelines, log-replay agents, the ego state and the human trajectory,
//! plus JSON serialization and the seeded synthetic generator.

pub mod gen;

pub use gen::{generate_scenarios, FramePair, GenError, TemplateMix};

use crate::geom::{wrap_angle, OrientedBox, Polygon, Polyline, Pose, RigidTransform};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Planning horizon: 40 poses at 10 Hz.
pub const TRAJ_LEN: usize = 40;
/// Agent tracks carry one extra pose for t = 0.
pub const AGENT_TRACK_LEN: usize = 41;
/// Simulation step in seconds.
pub const DT: f64 = 0.1;
/// Simulation horizon in seconds.
pub const HORIZON_S: f64 = 4.0;

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema error: {0}")]
    Json(String),
    #[error("invalid field {field}: {message}")]
    Invalid { field: String, message: String },
}

impl From<serde_json::Error> for SchemaError {
    fn from(e: serde_json::Error) -> Self {
        SchemaError::Json(e.to_string())
    }
}

fn invalid(field: &str, message: impl Into<String>) -> SchemaError {
    SchemaError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Navigation command attached to the ego state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    Follow,
    TurnLeft,
    TurnRight,
    LaneChangeLeft,
    LaneChangeRight,
}

impl Command {
    /// Two-dimensional folding used by the student's ego embedding:
    /// (lateral direction, lane-change flag).
    pub fn fold(self) -> [f64; 2] {
        match self {
            Command::Follow => [0.0, 0.0],
            Command::TurnLeft => [1.0, 0.0],
            Command::TurnRight => [-1.0, 0.0],
            Command::LaneChangeLeft => [1.0, 1.0],
            Command::LaneChangeRight => [-1.0, 1.0],
        }
    }
}

pub const DEFAULT_EGO_LENGTH: f64 = 4.6;
pub const DEFAULT_EGO_WIDTH: f64 = 1.9;

/// Ego vehicle state at t = 0. The pose is the identity of the scenario's
/// local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose,
    pub velocity: f64,
    pub acceleration: f64,
    pub command: Command,
    pub length: f64,
    pub width: f64,
}

impl EgoState {
    pub fn new(velocity: f64, acceleration: f64, command: Command) -> Self {
        EgoState {
            pose: Pose::identity(),
            velocity,
            acceleration,
            command,
            length: DEFAULT_EGO_LENGTH,
            width: DEFAULT_EGO_WIDTH,
        }
    }

    pub fn box_at(&self, pose: Pose) -> OrientedBox {
        OrientedBox::new(pose, self.length / 2.0, self.width / 2.0)
    }

    fn validate(&self) -> Result<(), SchemaError> {
        if self.velocity < 0.0 {
            return Err(invalid("ego.velocity", "must be non-negative"));
        }
        if self.pose != Pose::identity() {
            return Err(invalid("ego.pose", "must be the local-frame identity"));
        }
        if self.length <= 0.0 || self.width <= 0.0 {
            return Err(invalid("ego", "box dims must be positive"));
        }
        Ok(())
    }
}

/// Log-replay agent covering t in [0, 4] s at 10 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: String,
    pub length: f64,
    pub width: f64,
    pub poses: Vec<Pose>,
}

impl AgentTrack {
    pub fn box_at(&self, step: usize) -> OrientedBox {
        let pose = self.poses[step.min(self.poses.len() - 1)];
        OrientedBox::new(pose, self.length / 2.0, self.width / 2.0)
    }

    fn validate(&self) -> Result<(), SchemaError> {
        if self.poses.len() != AGENT_TRACK_LEN {
            return Err(invalid(
                "agents.poses",
                format!(
                    "agent track must have exactly 41 poses, got {}",
                    self.poses.len()
                ),
            ));
        }
        for w in self.poses.windows(2) {
            if (w[1].position() - w[0].position()).norm() >= 5.0 {
                return Err(invalid("agents.poses", "consecutive displacement >= 5 m"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalState {
    Red,
    Green,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalPhase {
    pub start_s: f64,
    pub end_s: f64,
    pub state: SignalState,
}

/// A signal-controlled region with its phase timeline over [0, 4] s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTimeline {
    pub region: Polygon,
    pub phases: Vec<SignalPhase>,
}

impl SignalTimeline {
    pub fn state_at(&self, t: f64) -> SignalState {
        let t = t.clamp(0.0, HORIZON_S);
        for p in &self.phases {
            if t >= p.start_s && t < p.end_s {
                return p.state;
            }
        }
        self.phases
            .last()
            .map(|p| p.state)
            .unwrap_or(SignalState::Green)
    }

    fn validate(&self) -> Result<(), SchemaError> {
        if self.phases.is_empty() {
            return Err(invalid("signals.phases", "must be non-empty"));
        }
        if self.phases[0].start_s != 0.0 {
            return Err(invalid("signals.phases", "must start at 0"));
        }
        for w in self.phases.windows(2) {
            if w[0].end_s != w[1].start_s {
                return Err(invalid("signals.phases", "must be contiguous"));
            }
        }
        let last = self.phases.last().unwrap();
        if last.end_s < HORIZON_S {
            return Err(invalid("signals.phases", "must cover [0, 4] s"));
        }
        Ok(())
    }
}

/// A 4-second plan: 40 poses at 10 Hz (t = 0.1 .. 4.0 s) in the ego local
/// frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Trajectory {
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Result<Self, SchemaError> {
        if poses.len() != TRAJ_LEN {
            return Err(invalid(
                "trajectory",
                format!("trajectory must have exactly 40 poses, got {}", poses.len()),
            ));
        }
        if let Some(p) = poses.iter().find(|p| !p.is_finite()) {
            return Err(invalid("trajectory", format!("non-finite pose {p:?}")));
        }
        Ok(Trajectory { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    /// Pose at step `t` in 1..=40 (t = 0 is the local-frame origin).
    pub fn pose_at_step(&self, t: usize) -> Pose {
        debug_assert!((1..=TRAJ_LEN).contains(&t));
        self.poses[t - 1]
    }

    pub fn final_pose(&self) -> Pose {
        self.poses[TRAJ_LEN - 1]
    }

    pub fn transformed(&self, tf: &RigidTransform) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|p| tf.apply_pose(*p)).collect(),
        }
    }
}

impl<'de> Deserialize<'de> for Trajectory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let poses = Vec::<Pose>::deserialize(d)?;
        Trajectory::new(poses).map_err(serde::de::Error::custom)
    }
}

/// Finite-difference kinematic series of a trajectory. Lengths for a 40-pose
/// input: speed 39, lon_accel 38, lon_jerk 37, yaw_rate 39, yaw_accel 38,
/// lat_accel 38.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicProfile {
    pub speed: Vec<f64>,
    pub lon_accel: Vec<f64>,
    pub lon_jerk: Vec<f64>,
    pub yaw_rate: Vec<f64>,
    pub yaw_accel: Vec<f64>,
    pub lat_accel: Vec<f64>,
}

fn forward_diff(xs: &[f64], dt: f64) -> Vec<f64> {
    xs.windows(2).map(|w| (w[1] - w[0]) / dt).collect()
}

/// Finite-difference kinematics over an arbitrary pose sequence (>= 4 poses).
pub fn kinematics_of_poses(poses: &[Pose], dt: f64) -> KinematicProfile {
    assert!(
        poses.len() >= 4,
        "need at least 4 poses for a kinematic profile"
    );
    let speed: Vec<f64> = poses
        .windows(2)
        .map(|w| (w[1].position() - w[0].position()).norm() / dt)
        .collect();
    let lon_accel = forward_diff(&speed, dt);
    let lon_jerk = forward_diff(&lon_accel, dt);
    let yaw_rate: Vec<f64> = poses
        .windows(2)
        .map(|w| wrap_angle(w[1].heading - w[0].heading) / dt)
        .collect();
    let yaw_accel = forward_diff(&yaw_rate, dt);
    let lat_accel: Vec<f64> = (0..speed.len() - 1)
        .map(|i| 0.5 * (speed[i] + speed[i + 1]) * 0.5 * (yaw_rate[i] + yaw_rate[i + 1]))
        .collect();
    KinematicProfile {
        speed,
        lon_accel,
        lon_jerk,
        yaw_rate,
        yaw_accel,
        lat_accel,
    }
}

/// Kinematic series of a 40-pose trajectory.
pub fn derive_kinematics(traj: &Trajectory, dt: f64) -> KinematicProfile {
    kinematics_of_poses(traj.poses(), dt)
}

/// Symbolic world snapshot in the ego local frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub lanes: Vec<Polyline>,
    pub route: Polyline,
    pub drivable: Vec<Polygon>,
    pub agents: Vec<AgentTrack>,
    pub signals: Vec<SignalTimeline>,
    pub ego: EgoState,
    pub human: Trajectory,
    pub preceding_id: Option<String>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.lanes.is_empty() {
            return Err(invalid("lanes", "must be non-empty"));
        }
        if self.route.total_length() <= 0.0 {
            return Err(invalid("route", "total length must be positive"));
        }
        if self.drivable.is_empty() {
            return Err(invalid("drivable", "must be non-empty"));
        }
        self.ego.validate()?;
        for a in &self.agents {
            a.validate()?;
        }
        for s in &self.signals {
            s.validate()?;
        }
        Ok(())
    }
}

pub fn save_scenario(s: &Scenario, path: &Path) -> Result<(), SchemaError> {
    s.validate()?;
    let json = serde_json::to_string_pretty(s)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_scenario(path: &Path) -> Result<Scenario, SchemaError> {
    let raw = std::fs::read_to_string(path)?;
    let s: Scenario = serde_json::from_str(&raw)?;
    s.validate()?;
    Ok(s)
}

/// One entry of the FramePair manifest written by `gen`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePairEntry {
    pub prev: String,
    pub curr: String,
    pub transform: RigidTransform,
}

pub fn save_manifest(entries: &[FramePairEntry], path: &Path) -> Result<(), SchemaError> {
    std::fs::write(path, serde_json::to_string_pretty(entries)?)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Vec<FramePairEntry>, SchemaError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Loads every pair referenced by a manifest, resolving paths relative to the
/// manifest's directory.
pub fn load_pairs(manifest_path: &Path) -> Result<Vec<FramePair>, SchemaError> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let entries = load_manifest(manifest_path)?;
    entries
        .iter()
        .map(|e| {
            Ok(FramePair {
                prev: load_scenario(&base.join(&e.prev))?,
                curr: load_scenario(&base.join(&e.curr))?,
                transform: e.transform,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;

    pub(crate) fn straight_trajectory(speed: f64) -> Trajectory {
        let poses = (1..=TRAJ_LEN)
            .map(|i| Pose::new(speed * DT * i as f64, 0.0, 0.0))
            .collect();
        Trajectory::new(poses).unwrap()
    }

    #[test]
    fn constant_velocity_kinematics() {
        let traj = straight_trajectory(5.0);
        let k = derive_kinematics(&traj, DT);
        assert_eq!(k.speed.len(), 39);
        assert_eq!(k.lon_accel.len(), 38);
        assert_eq!(k.lon_jerk.len(), 37);
        assert_eq!(k.yaw_rate.len(), 39);
        assert_eq!(k.yaw_accel.len(), 38);
        assert_eq!(k.lat_accel.len(), 38);
        for s in &k.speed {
            assert!((s - 5.0).abs() < 1e-9);
        }
        for a in &k.lon_accel {
            assert!(a.abs() < 1e-9);
        }
        for y in &k.yaw_rate {
            assert!(y.abs() < 1e-12);
        }
    }

    #[test]
    fn circular_arc_kinematics() {
        let r = 20.0;
        let v = 5.0;
        let omega = v / r;
        let poses = (1..=TRAJ_LEN)
            .map(|i| {
                let t = DT * i as f64;
                let a = omega * t;
                Pose::new(r * a.sin(), r * (1.0 - a.cos()), a)
            })
            .collect();
        let traj = Trajectory::new(poses).unwrap();
        let k = derive_kinematics(&traj, DT);
        for y in &k.yaw_rate {
            assert!((y - 0.25).abs() / 0.25 < 0.02, "yaw rate {y}");
        }
        for l in &k.lat_accel {
            assert!((l - 1.25).abs() / 1.25 < 0.02, "lat accel {l}");
        }
    }

    #[test]
    fn uniform_acceleration_kinematics() {
        // v(t) = t, x(t) = t^2/2, 0 -> 4 m/s over 4 s
        let poses = (1..=TRAJ_LEN)
            .map(|i| {
                let t = DT * i as f64;
                Pose::new(0.5 * t * t, 0.0, 0.0)
            })
            .collect();
        let traj = Trajectory::new(poses).unwrap();
        let k = derive_kinematics(&traj, DT);
        for a in &k.lon_accel {
            assert!((a - 1.0).abs() < 0.02, "lon accel {a}");
        }
        for j in &k.lon_jerk {
            assert!(j.abs() < 0.02, "lon jerk {j}");
        }
    }

    #[test]
    fn trajectory_length_invariant() {
        let short: Vec<Pose> = (1..TRAJ_LEN)
            .map(|i| Pose::new(i as f64, 0.0, 0.0))
            .collect();
        let err = Trajectory::new(short).unwrap_err();
        assert!(err.to_string().contains("40"));
    }

    #[test]
    fn signal_state_lookup() {
        let region = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ])
        .unwrap();
        let tl = SignalTimeline {
            region,
            phases: vec![
                SignalPhase {
                    start_s: 0.0,
                    end_s: 2.0,
                    state: SignalState::Red,
                },
                SignalPhase {
                    start_s: 2.0,
                    end_s: 4.0,
                    state: SignalState::Green,
                },
            ],
        };
        tl.validate().unwrap();
        assert_eq!(tl.state_at(0.5), SignalState::Red);
        assert_eq!(tl.state_at(2.0), SignalState::Green);
        assert_eq!(tl.state_at(4.0), SignalState::Green);
    }
}
