//! Symbolic scene featurization: one fixed-width token row per scene element.

use crate::geom::RigidTransform;
use crate::scenario::{Scenario, SignalState, DT};
use crate::student::nn::Matrix;

/// Raw token width: 5-way type one-hot, frame tag, 10 feature slots.
pub const D_RAW: usize = 16;
const N_TYPES: usize = 5;
const FEAT_OFF: usize = N_TYPES + 1;

/// Fixed standardization constants (not data-dependent).
const POS_SCALE: f64 = 1.0 / 50.0;
const SPEED_SCALE: f64 = 1.0 / 15.0;
const ACCEL_SCALE: f64 = 1.0 / 4.0;
const EXTENT_SCALE: f64 = 1.0 / 5.0;

/// Arc-length spacing of lane centerline sample tokens (m).
const LANE_SAMPLE_STEP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenType {
    Ego,
    Agent,
    Lane,
    Signal,
    Drivable,
}

impl TokenType {
    fn index(self) -> usize {
        match self {
            TokenType::Ego => 0,
            TokenType::Agent => 1,
            TokenType::Lane => 2,
            TokenType::Signal => 3,
            TokenType::Drivable => 4,
        }
    }
}

/// The student's view of a scene: n x 16 feature rows plus per-row tags.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTokens {
    pub data: Matrix,
    pub types: Vec<TokenType>,
    /// true for rows contributed by the preceding frame (gradient-detached)
    pub from_prev: Vec<bool>,
}

impl SceneTokens {
    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }
}

fn push_token(
    rows: &mut Vec<Vec<f64>>,
    types: &mut Vec<TokenType>,
    from_prev: &mut Vec<bool>,
    ty: TokenType,
    prev: bool,
    features: &[f64],
) {
    assert!(features.len() <= D_RAW - FEAT_OFF);
    let mut row = vec![0.0; D_RAW];
    row[ty.index()] = 1.0;
    row[N_TYPES] = if prev { 1.0 } else { 0.0 };
    row[FEAT_OFF..FEAT_OFF + features.len()].copy_from_slice(features);
    rows.push(row);
    types.push(ty);
    from_prev.push(prev);
}

fn encode_into(
    scenario: &Scenario,
    tf: &RigidTransform,
    prev: bool,
    rows: &mut Vec<Vec<f64>>,
    types: &mut Vec<TokenType>,
    from_prev: &mut Vec<bool>,
) {
    // ego context
    let ego_pose = tf.apply_pose(scenario.ego.pose);
    let cmd = scenario.ego.command.fold();
    push_token(
        rows,
        types,
        from_prev,
        TokenType::Ego,
        prev,
        &[
            ego_pose.x * POS_SCALE,
            ego_pose.y * POS_SCALE,
            ego_pose.heading.cos(),
            ego_pose.heading.sin(),
            scenario.ego.velocity * SPEED_SCALE,
            scenario.ego.acceleration * ACCEL_SCALE,
            cmd[0],
            cmd[1],
        ],
    );

    // agents: pose at t=0, speed from the first finite difference of the track
    for agent in &scenario.agents {
        let p = tf.apply_pose(agent.poses[0]);
        let speed = (agent.poses[1].position() - agent.poses[0].position()).norm() / DT;
        push_token(
            rows,
            types,
            from_prev,
            TokenType::Agent,
            prev,
            &[
                p.x * POS_SCALE,
                p.y * POS_SCALE,
                p.heading.cos(),
                p.heading.sin(),
                speed * SPEED_SCALE,
                agent.length * EXTENT_SCALE,
                agent.width * EXTENT_SCALE,
            ],
        );
    }

    // lane centerline samples with tangents
    for lane in &scenario.lanes {
        let lane = lane.transformed(tf);
        let total = lane.total_length();
        let mut arc = 0.0;
        loop {
            let p = lane.point_at(arc);
            let t = lane.tangent_at(arc);
            push_token(
                rows,
                types,
                from_prev,
                TokenType::Lane,
                prev,
                &[p.x * POS_SCALE, p.y * POS_SCALE, t.x, t.y],
            );
            if arc >= total {
                break;
            }
            arc = (arc + LANE_SAMPLE_STEP).min(total);
        }
    }

    // signals: region centroid, current state, red fraction of the horizon
    for signal in &scenario.signals {
        let c = tf.apply_point(signal.region.centroid());
        let red_now = if signal.state_at(0.0) == SignalState::Red {
            1.0
        } else {
            0.0
        };
        let red_time: f64 = signal
            .phases
            .iter()
            .filter(|ph| ph.state == SignalState::Red)
            .map(|ph| ph.end_s - ph.start_s)
            .sum();
        push_token(
            rows,
            types,
            from_prev,
            TokenType::Signal,
            prev,
            &[
                c.x * POS_SCALE,
                c.y * POS_SCALE,
                red_now,
                red_time / crate::scenario::HORIZON_S,
            ],
        );
    }

    // drivable-area boundary vertices
    for poly in &scenario.drivable {
        let poly = poly.transformed(tf);
        for v in poly.vertices() {
            push_token(
                rows,
                types,
                from_prev,
                TokenType::Drivable,
                prev,
                &[v.x * POS_SCALE, v.y * POS_SCALE],
            );
        }
    }
}

/// Featurizes a single frame in its own coordinates.
pub fn encode_scene(scenario: &Scenario) -> SceneTokens {
    encode_pair(scenario, None)
}

/// Featurizes the current frame, optionally appending the preceding frame's
/// tokens re-expressed in the current frame and tagged for gradient detach.
pub fn encode_pair(curr: &Scenario, prev: Option<(&Scenario, &RigidTransform)>) -> SceneTokens {
    let mut rows = Vec::new();
    let mut types = Vec::new();
    let mut from_prev = Vec::new();
    encode_into(
        curr,
        &RigidTransform::identity(),
        false,
        &mut rows,
        &mut types,
        &mut from_prev,
    );
    if let Some((scene, tf)) = prev {
        encode_into(scene, tf, true, &mut rows, &mut types, &mut from_prev);
    }
    SceneTokens {
        data: Matrix::from_rows(rows),
        types,
        from_prev,
    }
}

/// The 4-dim ego feature vector fed to the ego embedding.
pub fn ego_features(scenario: &Scenario) -> [f64; 4] {
    let cmd = scenario.ego.command.fold();
    [
        scenario.ego.velocity * SPEED_SCALE,
        scenario.ego.acceleration * ACCEL_SCALE,
        cmd[0],
        cmd[1],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Polygon, Polyline, Pose, Vec2};
    use crate::scenario::{AgentTrack, Command, EgoState, Trajectory, AGENT_TRACK_LEN, TRAJ_LEN};

    fn base_scenario(agents: Vec<AgentTrack>) -> Scenario {
        let route = Polyline::new(vec![Vec2::new(-20.0, 0.0), Vec2::new(80.0, 0.0)]).unwrap();
        Scenario {
            id: "enc".into(),
            lanes: vec![route.clone()],
            route,
            drivable: vec![Polygon::new(vec![
                Vec2::new(-25.0, -6.0),
                Vec2::new(85.0, -6.0),
                Vec2::new(85.0, 6.0),
                Vec2::new(-25.0, 6.0),
            ])
            .unwrap()],
            agents,
            signals: Vec::new(),
            ego: EgoState::new(5.0, 0.2, Command::Follow),
            human: Trajectory::new(
                (1..=TRAJ_LEN)
                    .map(|i| Pose::new(0.5 * i as f64, 0.0, 0.0))
                    .collect(),
            )
            .unwrap(),
            preceding_id: None,
        }
    }

    #[test]
    fn empty_agents_token_types() {
        let toks = encode_scene(&base_scenario(vec![]));
        assert!(toks
            .types
            .iter()
            .all(|t| matches!(t, TokenType::Ego | TokenType::Lane | TokenType::Drivable)));
        assert_eq!(
            toks.types.iter().filter(|t| **t == TokenType::Ego).count(),
            1
        );
    }

    #[test]
    fn determinism() {
        let s = base_scenario(vec![]);
        assert_eq!(encode_scene(&s), encode_scene(&s));
    }

    #[test]
    fn agent_rows_carry_finite_difference_speed() {
        let mk = |id: &str, v: f64, y: f64| AgentTrack {
            id: id.into(),
            length: 4.0,
            width: 1.8,
            poses: (0..AGENT_TRACK_LEN)
                .map(|i| Pose::new(20.0 + v * DT * i as f64, y, 0.0))
                .collect(),
        };
        let s = base_scenario(vec![
            mk("a", 3.0, 0.0),
            mk("b", 7.5, 3.5),
            mk("c", 0.0, -3.5),
        ]);
        let toks = encode_scene(&s);
        let agent_rows: Vec<&[f64]> = toks
            .types
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == TokenType::Agent)
            .map(|(i, _)| toks.data.row(i))
            .collect();
        assert_eq!(agent_rows.len(), 3);
        let speeds: Vec<f64> = agent_rows
            .iter()
            .map(|r| r[FEAT_OFF + 4] / SPEED_SCALE)
            .collect();
        assert!((speeds[0] - 3.0).abs() < 1e-9);
        assert!((speeds[1] - 7.5).abs() < 1e-9);
        assert!(speeds[2].abs() < 1e-9);
    }

    #[test]
    fn pair_appends_tagged_rows() {
        let s = base_scenario(vec![]);
        let tf = RigidTransform::between(Pose::identity(), Pose::new(2.5, 0.0, 0.0));
        let single = encode_scene(&s);
        let pair = encode_pair(&s, Some((&s, &tf)));
        assert_eq!(pair.len(), 2 * single.len());
        assert!(pair.from_prev[..single.len()].iter().all(|p| !p));
        assert!(pair.from_prev[single.len()..].iter().all(|p| *p));
        // prev-frame ego row is shifted by the transform
        let prev_ego = pair.data.row(single.len());
        assert!((prev_ego[FEAT_OFF] - (-2.5 * POS_SCALE)).abs() < 1e-9);
    }
}
