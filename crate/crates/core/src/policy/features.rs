//! Observation encoding: own-state features and per-entity descriptors in
//! the agent's yaw-aligned frame.

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use crate::traj::{StartState, TrajectorySpline, Vec3};
use crate::world::ObstaclePrediction;

/// Times, relative to now, at which entity positions are sampled.
pub const DESCRIPTOR_TIMES: [f64; 4] = [0.0, 0.5, 1.0, 1.5];
pub const ENTITY_DIM: usize = 3 * DESCRIPTOR_TIMES.len() + 3;
/// Local goal (3), velocity (3), acceleration (3), yaw rate (1).
pub const OWN_DIM: usize = 10;

/// What the policy sees at one replan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub start: StartState,
    pub t_start: f64,
    pub goal: Vec3,
    pub obstacles: Vec<ObstaclePrediction>,
    pub peers: Vec<TrajectorySpline>,
}

/// Network-ready form of an [`Observation`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub own: [f64; OWN_DIM],
    /// Canonically ordered: farthest first, nearest last.
    pub entities: Vec<[f64; ENTITY_DIM]>,
}

/// Body frame with x along the current heading, z up.
#[derive(Debug, Clone, Copy)]
pub struct LocalFrame {
    origin: Vec3,
    to_local: Rotation3<f64>,
}

impl LocalFrame {
    pub fn new(origin: Vec3, yaw: f64) -> Self {
        LocalFrame { origin, to_local: Rotation3::from_axis_angle(&Vec3::z_axis(), -yaw) }
    }

    pub fn point(&self, p: &Vec3) -> Vec3 {
        self.to_local * (p - self.origin)
    }

    pub fn vector(&self, v: &Vec3) -> Vec3 {
        self.to_local * v
    }

    /// Back to the world frame, for direction vectors.
    pub fn vector_to_world(&self, v: &Vec3) -> Vec3 {
        self.to_local.inverse() * v
    }
}

/// An entity the policy can react to.
pub enum Entity<'a> {
    Obstacle(&'a ObstaclePrediction),
    Agent(&'a TrajectorySpline),
}

impl Entity<'_> {
    fn position(&self, t: f64) -> Vec3 {
        match self {
            Entity::Obstacle(o) => o.position(t),
            Entity::Agent(tr) => tr.position(t),
        }
    }
}

/// Descriptor of one entity: positions at `now + DESCRIPTOR_TIMES` and half
/// extents, all in `frame`.
pub fn descriptor(entity: &Entity<'_>, frame: &LocalFrame, now: f64, agent_half_extent: f64) -> [f64; ENTITY_DIM] {
    let mut d = [0.0; ENTITY_DIM];
    for (k, dt) in DESCRIPTOR_TIMES.iter().enumerate() {
        let p = frame.point(&entity.position(now + dt));
        d[3 * k..3 * k + 3].copy_from_slice(p.as_slice());
    }
    let half = match entity {
        Entity::Obstacle(o) => o.half_extents,
        Entity::Agent(_) => Vec3::repeat(agent_half_extent),
    };
    d[ENTITY_DIM - 3..].copy_from_slice(half.as_slice());
    d
}

/// Sort descriptors by current distance, farthest first, so the nearest
/// entity is consumed last. Ties are broken by the full descriptor, which
/// makes the order a function of the set alone.
pub fn canonical_order(entities: &mut [[f64; ENTITY_DIM]]) {
    let dist = |d: &[f64; ENTITY_DIM]| d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    entities.sort_by(|a, b| {
        dist(b).total_cmp(&dist(a)).then_with(|| {
            a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
}

pub fn encode(obs: &Observation, plan_radius: f64, agent_half_extent: f64) -> Encoded {
    let s = &obs.start;
    let frame = LocalFrame::new(s.pos, s.yaw);
    let to_goal = obs.goal - s.pos;
    let n = to_goal.norm();
    let local_goal = if n > plan_radius { to_goal * (plan_radius / n) } else { to_goal };
    let mut own = [0.0; OWN_DIM];
    own[0..3].copy_from_slice(frame.vector(&local_goal).as_slice());
    own[3..6].copy_from_slice(frame.vector(&s.vel).as_slice());
    own[6..9].copy_from_slice(frame.vector(&s.acc).as_slice());
    own[9] = s.yaw_rate;

    let mut entities: Vec<_> = obs
        .obstacles
        .iter()
        .map(Entity::Obstacle)
        .chain(obs.peers.iter().map(Entity::Agent))
        .map(|e| descriptor(&e, &frame, obs.t_start, agent_half_extent))
        .collect();
    canonical_order(&mut entities);
    Encoded { own, entities }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Trefoil;

    #[test]
    fn frame_rotates_heading_onto_x() {
        let f = LocalFrame::new(Vec3::new(1.0, 1.0, 0.0), std::f64::consts::FRAC_PI_2);
        let p = f.point(&Vec3::new(1.0, 3.0, 0.5));
        assert!((p - Vec3::new(2.0, 0.0, 0.5)).norm() < 1e-12);
        let v = Vec3::new(0.3, -0.2, 0.1);
        assert!((f.vector_to_world(&f.vector(&v)) - v).norm() < 1e-12);
    }

    #[test]
    fn nearest_entity_is_last() {
        let obs = Observation {
            start: StartState::at_rest(Vec3::zeros(), 0.0),
            t_start: 0.0,
            goal: Vec3::new(10.0, 0.0, 0.0),
            obstacles: [3.0, 1.0, 2.0]
                .iter()
                .enumerate()
                .map(|(i, x)| ObstaclePrediction::cube(i as u32, 0.5, Trefoil::stationary(Vec3::new(*x, 0.0, 0.0))))
                .collect(),
            peers: vec![],
        };
        let enc = encode(&obs, 4.0, 0.15);
        let xs: Vec<f64> = enc.entities.iter().map(|d| d[0]).collect();
        assert_eq!(xs, vec![3.0, 2.0, 1.0]);
        // goal clipped to the planning sphere
        assert!((enc.own[0] - 4.0).abs() < 1e-12);
    }
}
