//! Rule-based expert: the nine sub-metrics, PDMS/EPDMS aggregation, and
//! ScoreMatrix generation for the whole planning vocabulary.

use crate::geom::{
    box_in_polygons, obb_intersects, point_in_polygon, project_onto_polyline, Pose, RigidTransform,
    Vec2,
};
use crate::scenario::{
    derive_kinematics, kinematics_of_poses, KinematicProfile, Scenario, SignalState, Trajectory,
    DT, TRAJ_LEN,
};
use crate::vocab::{fnv1a64, Vocabulary};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Thresholds and bounds of the rule-based teachers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    /// lateral / backward-displacement tolerance for DDC and LK (m)
    pub tau_d: f64,
    /// extended-comfort RMS thresholds
    pub tau_a: f64,
    pub tau_j: f64,
    pub tau_yr: f64,
    pub tau_ya: f64,
    pub ttc_horizon: f64,
    pub ttc_step: f64,
    pub lon_accel_min: f64,
    pub lon_accel_max: f64,
    pub lat_accel_max: f64,
    pub lon_jerk_max: f64,
    pub yaw_rate_max: f64,
    pub yaw_accel_max: f64,
    pub ep_min_ref: f64,
    pub log_clamp_eps: f64,
    /// per-edge sample count for drivable-area membership
    pub dac_edge_samples: usize,
    /// at-fault speed threshold for NC (m/s)
    pub nc_speed_eps: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            tau_d: 0.5,
            tau_a: 0.7,
            tau_j: 0.5,
            tau_yr: 0.1,
            tau_ya: 0.1,
            ttc_horizon: 1.0,
            ttc_step: 0.1,
            lon_accel_min: -4.05,
            lon_accel_max: 2.40,
            lat_accel_max: 4.89,
            lon_jerk_max: 4.13,
            yaw_rate_max: 0.95,
            yaw_accel_max: 1.93,
            ep_min_ref: 5.0,
            log_clamp_eps: 1e-6,
            dac_edge_samples: 8,
            nc_speed_eps: 0.05,
        }
    }
}

/// FNV-1a of the canonical config serialization; used to detect stale caches.
pub fn config_hash(cfg: &TeacherConfig) -> u64 {
    fnv1a64(
        serde_json::to_string(cfg)
            .expect("config serializes")
            .as_bytes(),
    )
}

#[derive(Debug, thiserror::Error)]
pub enum TeacherError {
    #[error("missing subscore: {0}")]
    MissingSubscore(&'static str),
    #[error("frame transform missing for extended comfort")]
    FrameMismatch,
    #[error("no ego-progress reference available")]
    NoReference,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("score matrix format error: {0}")]
    Format(String),
    #[error("config hash mismatch: scores built with {found:016x}, expected {expected:016x}")]
    ConfigHashMismatch { found: u64, expected: u64 },
}

/// Per-trajectory sub-metric scores. All binary metrics are 0/1; EP is graded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubScores {
    pub nc: f64,
    pub dac: f64,
    pub ep: f64,
    pub ttc: f64,
    pub c: f64,
    pub tl: f64,
    pub ddc: f64,
    pub lk: f64,
    pub ec: Option<f64>,
}

/// Distillation metric order (EC deliberately absent).
pub const METRIC_NAMES: [&str; 8] = ["NC", "DAC", "EP", "TTC", "C", "TL", "DDC", "LK"];
pub const METRIC_COUNT: usize = 8;

/// Per-scenario teacher scores for every vocabulary trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub scenario_id: String,
    pub values: Vec<[f64; METRIC_COUNT]>,
}

impl ScoreMatrix {
    pub fn subscores(&self, row: usize) -> SubScores {
        let v = self.values[row];
        SubScores {
            nc: v[0],
            dac: v[1],
            ep: v[2],
            ttc: v[3],
            c: v[4],
            tl: v[5],
            ddc: v[6],
            lk: v[7],
            ec: None,
        }
    }
}

fn ego_speed_at_step(profile: &KinematicProfile, step: usize, initial: f64) -> f64 {
    // speed[i] spans poses (i+1, i+2); use the segment ending at `step`
    debug_assert!((1..=TRAJ_LEN).contains(&step));
    if step < 2 {
        initial.max(profile.speed.first().copied().unwrap_or(0.0))
    } else {
        profile.speed[(step - 2).min(profile.speed.len() - 1)]
    }
}

/// No at-fault Collision: 0 iff the ego box overlaps an agent box at some step
/// while the ego is moving.
pub fn score_nc(traj: &Trajectory, scenario: &Scenario, cfg: &TeacherConfig) -> f64 {
    if scenario.agents.is_empty() {
        return 1.0;
    }
    let profile = derive_kinematics(traj, DT);
    for step in 1..=TRAJ_LEN {
        let ego_box = scenario.ego.box_at(traj.pose_at_step(step));
        for agent in &scenario.agents {
            if obb_intersects(&ego_box, &agent.box_at(step)) {
                let at_fault =
                    ego_speed_at_step(&profile, step, scenario.ego.velocity) >= cfg.nc_speed_eps;
                if at_fault {
                    return 0.0;
                }
            }
        }
    }
    1.0
}

/// Drivable Area Compliance: the ego footprint stays inside the union of
/// drivable polygons at every step.
pub fn score_dac(traj: &Trajectory, scenario: &Scenario, cfg: &TeacherConfig) -> f64 {
    for step in 1..=TRAJ_LEN {
        let ego_box = scenario.ego.box_at(traj.pose_at_step(step));
        if !box_in_polygons(&ego_box, &scenario.drivable, cfg.dac_edge_samples) {
            return 0.0;
        }
    }
    1.0
}

/// Time-to-Collision: constant-speed forward projection from every step finds
/// no overlap with an agent within the horizon.
pub fn score_ttc(traj: &Trajectory, scenario: &Scenario, cfg: &TeacherConfig) -> f64 {
    if scenario.agents.is_empty() {
        return 1.0;
    }
    let profile = derive_kinematics(traj, DT);
    let n_sub = (cfg.ttc_horizon / cfg.ttc_step).round() as usize;
    for step in 1..=TRAJ_LEN {
        let pose = traj.pose_at_step(step);
        let speed = ego_speed_at_step(&profile, step, scenario.ego.velocity);
        let dir = Vec2::new(pose.heading.cos(), pose.heading.sin());
        for sub in 1..=n_sub {
            let tau = cfg.ttc_step * sub as f64;
            let offset = dir.scale(speed * tau);
            let proj_pose = Pose::new(pose.x + offset.x, pose.y + offset.y, pose.heading);
            let ego_box = scenario.ego.box_at(proj_pose);
            // agents held at their final pose beyond the horizon
            let agent_step = step + (tau / DT).round() as usize;
            for agent in &scenario.agents {
                if obb_intersects(&ego_box, &agent.box_at(agent_step)) {
                    return 0.0;
                }
            }
        }
    }
    1.0
}

/// Comfort: every kinematic series stays within the configured bounds.
pub fn score_comfort(traj: &Trajectory, cfg: &TeacherConfig) -> f64 {
    let k = derive_kinematics(traj, DT);
    let ok = k
        .lon_accel
        .iter()
        .all(|a| (cfg.lon_accel_min..=cfg.lon_accel_max).contains(a))
        && k.lat_accel.iter().all(|a| a.abs() <= cfg.lat_accel_max)
        && k.lon_jerk.iter().all(|j| j.abs() <= cfg.lon_jerk_max)
        && k.yaw_rate.iter().all(|y| y.abs() <= cfg.yaw_rate_max)
        && k.yaw_accel.iter().all(|y| y.abs() <= cfg.yaw_accel_max);
    if ok {
        1.0
    } else {
        0.0
    }
}

/// Route progress of a trajectory: arc length gained along the route from the
/// origin projection to the final-pose projection.
pub fn route_progress(traj: &Trajectory, scenario: &Scenario) -> f64 {
    let start = project_onto_polyline(Vec2::new(0.0, 0.0), &scenario.route).arc_length;
    let end = project_onto_polyline(traj.final_pose().position(), &scenario.route).arc_length;
    end - start
}

/// Ego Progress given the per-scenario reference (max progress over
/// penalty-passing vocabulary trajectories).
pub fn score_ep(
    traj: &Trajectory,
    scenario: &Scenario,
    reference: f64,
    cfg: &TeacherConfig,
) -> f64 {
    let progress = route_progress(traj, scenario);
    if reference < cfg.ep_min_ref {
        if progress >= 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (progress / reference).clamp(0.0, 1.0)
    }
}

/// Traffic light compliance: 0 iff the ego front bumper enters a signal
/// region while that signal is red. Waiting outside the region is compliant.
pub fn score_tl(traj: &Trajectory, scenario: &Scenario, _cfg: &TeacherConfig) -> f64 {
    if scenario.signals.is_empty() {
        return 1.0;
    }
    for signal in &scenario.signals {
        let mut prev_inside = false;
        for step in 1..=TRAJ_LEN {
            let front = scenario.ego.box_at(traj.pose_at_step(step)).front_bumper();
            let inside = point_in_polygon(front, &signal.region);
            if inside
                && (!prev_inside || step == 1)
                && signal.state_at(DT * step as f64) == SignalState::Red
            {
                return 0.0;
            }
            prev_inside = inside;
        }
    }
    1.0
}

/// Driving Direction Compliance: cumulative backward displacement against the
/// closest lane direction stays within tau_D.
pub fn score_ddc(traj: &Trajectory, scenario: &Scenario, cfg: &TeacherConfig) -> f64 {
    let mut backward = 0.0;
    for w in traj.poses().windows(2) {
        let mid = (w[0].position() + w[1].position()).scale(0.5);
        let mut best: Option<(f64, Vec2)> = None;
        for lane in &scenario.lanes {
            let pr = project_onto_polyline(mid, lane);
            if best.map_or(true, |(d, _)| pr.lateral < d) {
                best = Some((pr.lateral, pr.tangent));
            }
        }
        let tangent = best.expect("lanes are non-empty").1;
        let along = (w[1].position() - w[0].position()).dot(tangent);
        backward += (-along).max(0.0);
    }
    if backward <= cfg.tau_d {
        1.0
    } else {
        0.0
    }
}

/// Lane Keeping: lateral distance to the nearest lane centerline stays within
/// tau_D at every step.
pub fn score_lk(traj: &Trajectory, scenario: &Scenario, cfg: &TeacherConfig) -> f64 {
    for step in 1..=TRAJ_LEN {
        let p = traj.pose_at_step(step).position();
        let d = scenario
            .lanes
            .iter()
            .map(|l| project_onto_polyline(p, l).lateral)
            .fold(f64::INFINITY, f64::min);
        if d > cfg.tau_d {
            return 0.0;
        }
    }
    1.0
}

/// Overlap between a previous-frame prediction (re-expressed in the current
/// frame, first 0.5 s dropped) and the current prediction: 35 poses each.
const EC_DROP: usize = 5;

/// Extended Comfort: RMS kinematic discrepancy between consecutive frames'
/// predictions stays under the thresholds. Returns 1 when `prev` is absent.
pub fn score_ec(
    curr: &Trajectory,
    prev: Option<&Trajectory>,
    pair_transform: Option<&RigidTransform>,
    cfg: &TeacherConfig,
) -> Result<f64, TeacherError> {
    let Some(prev) = prev else {
        return Ok(1.0);
    };
    let tf = pair_transform.ok_or(TeacherError::FrameMismatch)?;
    let prev_in_curr = prev.transformed(tf);
    let prev_overlap = &prev_in_curr.poses()[EC_DROP..];
    let curr_overlap = &curr.poses()[..TRAJ_LEN - EC_DROP];
    let kp = kinematics_of_poses(prev_overlap, DT);
    let kc = kinematics_of_poses(curr_overlap, DT);
    let rms = |a: &[f64], b: &[f64]| -> f64 {
        let n = a.len().min(b.len());
        (a[..n]
            .iter()
            .zip(&b[..n])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n as f64)
            .sqrt()
    };
    let d_a = rms(&kc.lon_accel, &kp.lon_accel);
    let d_j = rms(&kc.lon_jerk, &kp.lon_jerk);
    let d_yr = rms(&kc.yaw_rate, &kp.yaw_rate);
    let d_ya = rms(&kc.yaw_accel, &kp.yaw_accel);
    Ok(
        if d_a <= cfg.tau_a && d_j <= cfg.tau_j && d_yr <= cfg.tau_yr && d_ya <= cfg.tau_ya {
            1.0
        } else {
            0.0
        },
    )
}

/// `NC x DAC x (5 TTC + 2 C + 5 EP) / 12`
pub fn pdms(s: &SubScores) -> f64 {
    s.nc * s.dac * (5.0 * s.ttc + 2.0 * s.c + 5.0 * s.ep) / 12.0
}

/// `NC x DAC x DDC x TL x (5 TTC + 2 C + 5 EP + 5 LK + 5 EC) / 22`
pub fn epdms(s: &SubScores) -> Result<f64, TeacherError> {
    let ec = s.ec.ok_or(TeacherError::MissingSubscore("ec"))?;
    Ok(
        s.nc * s.dac
            * s.ddc
            * s.tl
            * (5.0 * s.ttc + 2.0 * s.c + 5.0 * s.ep + 5.0 * s.lk + 5.0 * ec)
            / 22.0,
    )
}

/// All eight distillation metrics for one trajectory, given the EP reference.
pub fn score_row(
    traj: &Trajectory,
    scenario: &Scenario,
    reference: f64,
    cfg: &TeacherConfig,
) -> [f64; METRIC_COUNT] {
    [
        score_nc(traj, scenario, cfg),
        score_dac(traj, scenario, cfg),
        score_ep(traj, scenario, reference, cfg),
        score_ttc(traj, scenario, cfg),
        score_comfort(traj, cfg),
        score_tl(traj, scenario, cfg),
        score_ddc(traj, scenario, cfg),
        score_lk(traj, scenario, cfg),
    ]
}

/// EP reference for a scenario: best route progress among vocabulary
/// trajectories passing NC and DAC.
pub fn ep_reference(scenario: &Scenario, vocab: &Vocabulary, cfg: &TeacherConfig) -> f64 {
    vocab
        .trajectories
        .par_iter()
        .map(|t| {
            if score_nc(t, scenario, cfg) == 1.0 && score_dac(t, scenario, cfg) == 1.0 {
                route_progress(t, scenario)
            } else {
                f64::NEG_INFINITY
            }
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
        .max(0.0)
}

/// Offline simulation of the whole vocabulary in one scenario.
pub fn teach_scenario(scenario: &Scenario, vocab: &Vocabulary, cfg: &TeacherConfig) -> ScoreMatrix {
    let reference = ep_reference(scenario, vocab, cfg);
    let values: Vec<[f64; METRIC_COUNT]> = vocab
        .trajectories
        .par_iter()
        .map(|t| score_row(t, scenario, reference, cfg))
        .collect();
    ScoreMatrix {
        scenario_id: scenario.id.clone(),
        values,
    }
}

const SCORE_MAGIC: &[u8; 8] = b"HMDPSCR1";

#[derive(Serialize, Deserialize)]
struct ScoreSidecar {
    scenario_id: String,
    metric_names: Vec<String>,
    config_hash: u64,
}

/// Writes the binary matrix plus its JSON sidecar (`<path>.json`).
pub fn save_score_matrix(
    m: &ScoreMatrix,
    cfg: &TeacherConfig,
    path: &Path,
) -> Result<(), TeacherError> {
    let mut buf = Vec::with_capacity(16 + m.values.len() * METRIC_COUNT * 4);
    buf.extend_from_slice(SCORE_MAGIC);
    buf.extend_from_slice(&(m.values.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(METRIC_COUNT as u32).to_le_bytes());
    for row in &m.values {
        for v in row {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    let sidecar = ScoreSidecar {
        scenario_id: m.scenario_id.clone(),
        metric_names: METRIC_NAMES.iter().map(|s| s.to_string()).collect(),
        config_hash: config_hash(cfg),
    };
    std::fs::write(
        path.with_extension("scores.json"),
        serde_json::to_string_pretty(&sidecar).map_err(|e| TeacherError::Format(e.to_string()))?,
    )?;
    Ok(())
}

/// Config hash recorded in a score matrix's JSON sidecar.
pub fn score_sidecar_hash(path: &Path) -> Result<u64, TeacherError> {
    let sidecar: ScoreSidecar = serde_json::from_str(&std::fs::read_to_string(
        path.with_extension("scores.json"),
    )?)
    .map_err(|e| TeacherError::Format(e.to_string()))?;
    Ok(sidecar.config_hash)
}

/// Loads a score matrix, checking the sidecar's config hash against `cfg`.
/// A `None` hash check skips the comparison.
pub fn load_score_matrix(
    path: &Path,
    expected_hash: Option<u64>,
) -> Result<ScoreMatrix, TeacherError> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() < 16 || &raw[..8] != SCORE_MAGIC {
        return Err(TeacherError::Format("bad magic".into()));
    }
    let k = u32::from_le_bytes(raw[8..12].try_into().unwrap()) as usize;
    let m = u32::from_le_bytes(raw[12..16].try_into().unwrap()) as usize;
    if m != METRIC_COUNT {
        return Err(TeacherError::Format(format!("expected 8 metrics, got {m}")));
    }
    if raw.len() != 16 + k * m * 4 {
        return Err(TeacherError::Format("truncated matrix".into()));
    }
    let mut values = Vec::with_capacity(k);
    let mut off = 16;
    for _ in 0..k {
        let mut row = [0.0; METRIC_COUNT];
        for slot in row.iter_mut() {
            *slot = f32::from_le_bytes(raw[off..off + 4].try_into().unwrap()) as f64;
            off += 4;
        }
        values.push(row);
    }
    let sidecar: ScoreSidecar = serde_json::from_str(&std::fs::read_to_string(
        path.with_extension("scores.json"),
    )?)
    .map_err(|e| TeacherError::Format(e.to_string()))?;
    if let Some(h) = expected_hash {
        if sidecar.config_hash != h {
            return Err(TeacherError::ConfigHashMismatch {
                found: sidecar.config_hash,
                expected: h,
            });
        }
    }
    Ok(ScoreMatrix {
        scenario_id: sidecar.scenario_id,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Polygon;
    use crate::scenario::{
        AgentTrack, Command, EgoState, SignalPhase, SignalTimeline, AGENT_TRACK_LEN,
    };

    fn straight_traj(speed: f64) -> Trajectory {
        Trajectory::new(
            (1..=TRAJ_LEN)
                .map(|i| Pose::new(speed * DT * i as f64, 0.0, 0.0))
                .collect(),
        )
        .unwrap()
    }

    fn corridor_scenario(agents: Vec<AgentTrack>) -> Scenario {
        let route =
            crate::geom::Polyline::new(vec![Vec2::new(-20.0, 0.0), Vec2::new(100.0, 0.0)]).unwrap();
        Scenario {
            id: "test".into(),
            lanes: vec![route.clone()],
            route,
            drivable: vec![Polygon::new(vec![
                Vec2::new(-25.0, -6.0),
                Vec2::new(105.0, -6.0),
                Vec2::new(105.0, 6.0),
                Vec2::new(-25.0, 6.0),
            ])
            .unwrap()],
            agents,
            signals: Vec::new(),
            ego: EgoState::new(5.0, 0.0, Command::Follow),
            human: straight_traj(5.0),
            preceding_id: None,
        }
    }

    fn stopped_agent(x: f64, y: f64) -> AgentTrack {
        AgentTrack {
            id: "a".into(),
            length: 4.0,
            width: 1.8,
            poses: vec![Pose::new(x, y, 0.0); AGENT_TRACK_LEN],
        }
    }

    #[test]
    fn nc_empty_scene() {
        let cfg = TeacherConfig::default();
        let s = corridor_scenario(vec![]);
        assert_eq!(score_nc(&straight_traj(5.0), &s, &cfg), 1.0);
    }

    #[test]
    fn nc_frontal_collision() {
        let cfg = TeacherConfig::default();
        let s = corridor_scenario(vec![stopped_agent(3.0, 0.0)]);
        assert_eq!(score_nc(&straight_traj(5.0), &s, &cfg), 0.0);
    }

    #[test]
    fn nc_not_at_fault_when_stationary() {
        let cfg = TeacherConfig::default();
        // agent sweeps laterally through a stationary ego
        let poses = (0..AGENT_TRACK_LEN)
            .map(|i| Pose::new(0.0, 10.0 - 0.48 * i as f64, -std::f64::consts::FRAC_PI_2))
            .collect();
        let agent = AgentTrack {
            id: "sweep".into(),
            length: 4.0,
            width: 1.8,
            poses,
        };
        let s = corridor_scenario(vec![agent]);
        let stationary = Trajectory::new(vec![Pose::identity(); TRAJ_LEN]).unwrap();
        assert_eq!(score_nc(&stationary, &s, &cfg), 1.0);
        // the same sweep against a moving ego is at-fault
        assert_eq!(score_nc(&straight_traj(2.0), &s, &cfg), 0.0);
    }

    #[test]
    fn dac_inside_and_outside() {
        let cfg = TeacherConfig::default();
        let s = corridor_scenario(vec![]);
        assert_eq!(score_dac(&straight_traj(5.0), &s, &cfg), 1.0);
        let veer = Trajectory::new(
            (1..=TRAJ_LEN)
                .map(|i| Pose::new(2.0 * DT * i as f64, 10.0 * DT * i as f64 / 4.0, 0.0))
                .collect(),
        )
        .unwrap();
        assert_eq!(score_dac(&veer, &s, &cfg), 0.0);
    }

    #[test]
    fn ttc_cases() {
        let cfg = TeacherConfig::default();
        let s = corridor_scenario(vec![]);
        assert_eq!(score_ttc(&straight_traj(5.0), &s, &cfg), 1.0);
        // 10 m/s toward a stopped agent 5 m ahead: collision within the 1 s projection
        let near = corridor_scenario(vec![stopped_agent(5.0 + 4.3, 0.0)]);
        assert_eq!(score_ttc(&straight_traj(10.0), &near, &cfg), 0.0);
        // 2 m/s, TTC well beyond the horizon and no contact within the plan
        let far = corridor_scenario(vec![stopped_agent(30.0, 0.0)]);
        assert_eq!(score_ttc(&straight_traj(2.0), &far, &cfg), 1.0);
    }

    #[test]
    fn comfort_cases() {
        let cfg = TeacherConfig::default();
        assert_eq!(score_comfort(&straight_traj(5.0), &cfg), 1.0);
        // 0 -> 10 m/s step between two consecutive poses
        let mut poses: Vec<Pose> = (1..=TRAJ_LEN).map(|_| Pose::identity()).collect();
        let mut x = 0.0;
        for (i, p) in poses.iter_mut().enumerate() {
            let v = if i < 20 { 0.0 } else { 10.0 };
            x += v * DT;
            *p = Pose::new(x, 0.0, 0.0);
        }
        let step_traj = Trajectory::new(poses).unwrap();
        assert_eq!(score_comfort(&step_traj, &cfg), 0.0);
    }

    #[test]
    fn comfort_arc_below_lat_bound() {
        let cfg = TeacherConfig::default();
        // v^2 / r = 4.5 < 4.89
        let v: f64 = 9.0;
        let r = v * v / 4.5;
        let omega = v / r;
        let poses = (1..=TRAJ_LEN)
            .map(|i| {
                let a = omega * DT * i as f64;
                Pose::new(r * a.sin(), r * (1.0 - a.cos()), a)
            })
            .collect();
        let arc = Trajectory::new(poses).unwrap();
        let k = derive_kinematics(&arc, DT);
        assert!(k.yaw_rate.iter().all(|y| y.abs() < cfg.yaw_rate_max));
        assert_eq!(score_comfort(&arc, &cfg), 1.0);
    }

    #[test]
    fn ep_ratio() {
        let cfg = TeacherConfig::default();
        let s = corridor_scenario(vec![]);
        // progress 8 m vs reference 16 m
        assert!((score_ep(&straight_traj(2.0), &s, 16.0, &cfg) - 0.5).abs() < 1e-9);
        // zero motion, reference 20 m
        let still = Trajectory::new(vec![Pose::identity(); TRAJ_LEN]).unwrap();
        assert_eq!(score_ep(&still, &s, 20.0, &cfg), 0.0);
        // low-progress scenario: reference below the floor
        assert_eq!(score_ep(&still, &s, 2.0, &cfg), 1.0);
    }

    fn red_green_signal(red_until: f64) -> SignalTimeline {
        let region = Polygon::new(vec![
            Vec2::new(10.0, -5.0),
            Vec2::new(14.0, -5.0),
            Vec2::new(14.0, 5.0),
            Vec2::new(10.0, 5.0),
        ])
        .unwrap();
        let phases = if red_until <= 0.0 {
            vec![SignalPhase {
                start_s: 0.0,
                end_s: 4.0,
                state: SignalState::Green,
            }]
        } else if red_until >= 4.0 {
            vec![SignalPhase {
                start_s: 0.0,
                end_s: 4.0,
                state: SignalState::Red,
            }]
        } else {
            vec![
                SignalPhase {
                    start_s: 0.0,
                    end_s: red_until,
                    state: SignalState::Red,
                },
                SignalPhase {
                    start_s: red_until,
                    end_s: 4.0,
                    state: SignalState::Green,
                },
            ]
        };
        SignalTimeline { region, phases }
    }

    #[test]
    fn tl_cases() {
        let cfg = TeacherConfig::default();
        let mut s = corridor_scenario(vec![]);
        assert_eq!(score_tl(&straight_traj(5.0), &s, &cfg), 1.0);
        // red the whole horizon, ego drives through
        s.signals = vec![red_green_signal(4.0)];
        assert_eq!(score_tl(&straight_traj(5.0), &s, &cfg), 0.0);
        // red on [0,2), green afterwards; front bumper (x+2.3) enters x=10 at
        // x(t)=10-2.3 => t = 7.7/3.5 = 2.2 s > 2.0 s
        s.signals = vec![red_green_signal(2.0)];
        assert_eq!(score_tl(&straight_traj(3.5), &s, &cfg), 1.0);
        // same scene but fast enough to enter during red
        assert_eq!(score_tl(&straight_traj(8.0), &s, &cfg), 0.0);
    }

    #[test]
    fn ddc_cases() {
        let cfg = TeacherConfig::default();
        let s = corridor_scenario(vec![]);
        assert_eq!(score_ddc(&straight_traj(5.0), &s, &cfg), 1.0);
        // reversing 2 m against the lane direction
        let reverse = Trajectory::new(
            (1..=TRAJ_LEN)
                .map(|i| Pose::new(-2.0 * i as f64 / TRAJ_LEN as f64, 0.0, 0.0))
                .collect(),
        )
        .unwrap();
        assert_eq!(score_ddc(&reverse, &s, &cfg), 0.0);
        // oscillation with 0.4 m of total backward displacement: 8 backward
        // steps of 0.05 m among forward motion
        let mut x = 0.0;
        let poses = (1..=TRAJ_LEN)
            .map(|i| {
                if i % 5 == 0 && i <= 40 && x > 0.1 && i <= 40 {
                    x -= 0.05;
                } else {
                    x += 0.3;
                }
                Pose::new(x, 0.0, 0.0)
            })
            .collect();
        let osc = Trajectory::new(poses).unwrap();
        assert_eq!(score_ddc(&osc, &s, &cfg), 1.0);
    }

    #[test]
    fn lk_cases() {
        let cfg = TeacherConfig::default();
        let s = corridor_scenario(vec![]);
        assert_eq!(score_lk(&straight_traj(5.0), &s, &cfg), 1.0);
        let offset = Trajectory::new(
            (1..=TRAJ_LEN)
                .map(|i| Pose::new(5.0 * DT * i as f64, 1.0, 0.0))
                .collect(),
        )
        .unwrap();
        assert_eq!(score_lk(&offset, &s, &cfg), 0.0);
    }

    #[test]
    fn lk_lane_change_midpoint() {
        let cfg = TeacherConfig::default();
        let mut s = corridor_scenario(vec![]);
        let lane2 =
            crate::geom::Polyline::new(vec![Vec2::new(-20.0, 3.0), Vec2::new(100.0, 3.0)]).unwrap();
        s.lanes.push(lane2);
        // ramp from y=0 to y=3: midpoint is 1.5 m from both centerlines
        let change = Trajectory::new(
            (1..=TRAJ_LEN)
                .map(|i| Pose::new(5.0 * DT * i as f64, 3.0 * i as f64 / TRAJ_LEN as f64, 0.0))
                .collect(),
        )
        .unwrap();
        assert_eq!(score_lk(&change, &s, &cfg), 0.0);
    }

    #[test]
    fn ec_identical_predictions() {
        let cfg = TeacherConfig::default();
        // same world-frame trajectory seen from two frames 0.5 s apart:
        // build a world trajectory and slice it
        let world: Vec<Pose> = (0..=TRAJ_LEN + EC_DROP)
            .map(|i| Pose::new(4.0 * DT * i as f64, 0.0, 0.0))
            .collect();
        let prev_frame = world[0];
        let curr_frame = world[EC_DROP];
        let tf_prev = RigidTransform::between(Pose::identity(), prev_frame);
        let tf_curr = RigidTransform::between(Pose::identity(), curr_frame);
        let prev = Trajectory::new(
            world[1..=TRAJ_LEN]
                .iter()
                .map(|p| tf_prev.apply_pose(*p))
                .collect(),
        )
        .unwrap();
        let curr = Trajectory::new(
            world[EC_DROP + 1..=EC_DROP + TRAJ_LEN]
                .iter()
                .map(|p| tf_curr.apply_pose(*p))
                .collect(),
        )
        .unwrap();
        let pair_tf = RigidTransform::between(prev_frame, curr_frame);
        let ec = score_ec(&curr, Some(&prev), Some(&pair_tf), &cfg).unwrap();
        assert_eq!(ec, 1.0);
        // absent preceding prediction scores 1
        assert_eq!(score_ec(&curr, None, None, &cfg).unwrap(), 1.0);
        // missing transform is an error
        assert!(matches!(
            score_ec(&curr, Some(&prev), None, &cfg),
            Err(TeacherError::FrameMismatch)
        ));
    }

    #[test]
    fn ec_divergent_swerve() {
        let cfg = TeacherConfig::default();
        let swerve = |sign: f64| {
            Trajectory::new(
                (1..=TRAJ_LEN)
                    .map(|i| {
                        let t = DT * i as f64;
                        Pose::new(5.0 * t, sign * 0.5 * t * t, sign * 0.4 * t)
                    })
                    .collect(),
            )
            .unwrap()
        };
        let ec = score_ec(
            &swerve(1.0),
            Some(&swerve(-1.0)),
            Some(&RigidTransform::identity()),
            &cfg,
        )
        .unwrap();
        assert_eq!(ec, 0.0);
    }

    #[test]
    fn pdms_hand_values() {
        let all = SubScores {
            nc: 1.0,
            dac: 1.0,
            ep: 1.0,
            ttc: 1.0,
            c: 1.0,
            tl: 1.0,
            ddc: 1.0,
            lk: 1.0,
            ec: Some(1.0),
        };
        assert!((pdms(&all) - 1.0).abs() < 1e-12);
        assert!((epdms(&all).unwrap() - 1.0).abs() < 1e-12);
        let nc0 = SubScores { nc: 0.0, ..all };
        assert_eq!(pdms(&nc0), 0.0);
        let tl0 = SubScores { tl: 0.0, ..all };
        assert_eq!(epdms(&tl0).unwrap(), 0.0);
        let half_ep = SubScores { ep: 0.5, ..all };
        assert!((pdms(&half_ep) - (5.0 + 2.0 + 2.5) / 12.0).abs() < 1e-9);
        let ep08 = SubScores { ep: 0.8, ..all };
        assert!((epdms(&ep08).unwrap() - 21.0 / 22.0).abs() < 1e-9);
        let no_ec = SubScores { ec: None, ..all };
        assert!(matches!(
            epdms(&no_ec),
            Err(TeacherError::MissingSubscore(_))
        ));
    }

    #[test]
    fn score_matrix_roundtrip() {
        let cfg = TeacherConfig::default();
        let m = ScoreMatrix {
            scenario_id: "sc".into(),
            values: vec![[1.0, 0.0, 0.5, 1.0, 1.0, 1.0, 0.0, 1.0]; 7],
        };
        let dir = std::env::temp_dir().join("drivesim-score-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.scores");
        save_score_matrix(&m, &cfg, &path).unwrap();
        let l = load_score_matrix(&path, Some(config_hash(&cfg))).unwrap();
        assert_eq!(l.scenario_id, "sc");
        assert_eq!(l.values, m.values);
        // stale-config detection
        let mut other = cfg.clone();
        other.tau_d = 0.6;
        assert!(load_score_matrix(&path, Some(config_hash(&other))).is_err());
    }
}
