use serde::{Deserialize, Serialize};

use super::{PlanProblem, PlannerConfig};
use crate::traj::{check_dynamic_feasibility, sample_times, Basis, TrajectorySpline, DEGREE};
use crate::world::{CameraModel, ObstaclePrediction};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub(crate) fn gauss_legendre(n: usize) -> (&'static [f64], &'static [f64]) {
    const N1: [f64; 1] = [0.0];
    const W1: [f64; 1] = [2.0];
    const N2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
    const W2: [f64; 2] = [1.0, 1.0];
    const N3: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
    const W3: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    const N4: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
    const W4: [f64; 4] = [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];
    const N5: [f64; 5] = [-0.906_179_845_938_664, -0.538_469_310_105_683_1, 0.0, 0.538_469_310_105_683_1, 0.906_179_845_938_664];
    const W5: [f64; 5] = [
        0.236_926_885_056_189_1,
        0.478_628_670_499_366_5,
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
    ];
    match n {
        1 => (&N1, &W1),
        2 => (&N2, &W2),
        3 => (&N3, &W3),
        4 => (&N4, &W4),
        _ => (&N5, &W5),
    }
}

/// Composite Gauss–Legendre rule: each spline segment is split into `panels`
/// equal pieces with `points` nodes each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadrature {
    pub points: usize,
    pub panels: usize,
}

impl Quadrature {
    /// Nodes and weights on the normalized window `[0, 1]`; weights sum to one.
    pub(crate) fn nodes(&self, n_seg: usize) -> Vec<(f64, f64)> {
        let (nodes, weights) = gauss_legendre(self.points);
        let n = n_seg * self.panels.max(1);
        let len = 1.0 / n as f64;
        (0..n)
            .flat_map(|k| {
                let a = k as f64 * len;
                nodes.iter().zip(weights).map(move |(x, w)| (a + (x + 1.0) * 0.5 * len, w * 0.5 * len))
            })
            .collect()
    }
}

/// `−α Σᵢ ∫₀ᵀ inFOV(obstacleᵢ)³ dt`, by Gauss–Legendre quadrature over each
/// spline segment.
pub fn fov_term(
    traj: &TrajectorySpline,
    obstacles: &[ObstaclePrediction],
    cam: &CameraModel,
    alpha_fov: f64,
    quad: Quadrature,
) -> f64 {
    if obstacles.is_empty() || alpha_fov == 0.0 {
        return 0.0;
    }
    let n_seg = traj.pos_ctrl.len() - DEGREE;
    let mut integral = 0.0;
    for (s, w) in quad.nodes(n_seg) {
        let t = traj.t_start + s * traj.total_time;
        let x = traj.eval(t, 0);
        for obs in obstacles {
            integral += w * cam.in_fov(&x.pos, x.yaw, &obs.position(t)).powi(3);
        }
    }
    -alpha_fov * integral * traj.total_time
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub jerk: f64,
    pub goal: f64,
    pub fov: f64,
    pub time: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.jerk + self.goal + self.fov + self.time
    }
}

/// `∫‖jerk‖² dt`, exact: jerk is constant on every segment.
pub(crate) fn jerk_integral(traj: &TrajectorySpline) -> f64 {
    let basis = Basis::clamped_uniform(traj.pos_ctrl.len());
    let n_seg = basis.n_segments();
    let t = traj.total_time;
    (0..n_seg)
        .map(|seg| {
            let row = basis.row((seg as f64 + 0.5) / n_seg as f64);
            let j = row.apply3(3, &traj.pos_ctrl) / t.powi(3);
            j.norm_squared() * t / n_seg as f64
        })
        .sum()
}

/// Unpenalized objective of `traj` for `prob`.
pub fn total_cost(traj: &TrajectorySpline, prob: &PlanProblem, cfg: &PlannerConfig) -> CostBreakdown {
    let w = &prob.weights;
    let goal = prob.local_goal(cfg.plan_radius);
    let end = traj.pos_ctrl.last().expect("validated trajectory");
    CostBreakdown {
        jerk: w.alpha_jerk * jerk_integral(traj),
        goal: w.alpha_goal * (end - goal).norm_squared(),
        fov: fov_term(traj, &prob.obstacles, &prob.cam, w.alpha_fov, cfg.quadrature()),
        time: if prob.free_time { w.alpha_time * traj.total_time } else { 0.0 },
    }
}

/// What a trajectory must keep clear of.
#[derive(Debug, Clone, Copy)]
pub enum Body<'a> {
    Obstacle(&'a ObstaclePrediction),
    /// Another agent flying this trajectory.
    Peer(&'a TrajectorySpline),
}

/// Minimum over samples in `window` of the distance to `body` minus `margin`.
/// Non-negative means clear.
pub fn clearance(traj: &TrajectorySpline, body: Body<'_>, margin: f64, window: (f64, f64), dt: f64) -> f64 {
    assert!(dt > 0.0, "dt must be positive");
    sample_times(window.0, window.1, dt)
        .map(|t| {
            let p = traj.position(t);
            match body {
                Body::Obstacle(obs) => obs.signed_distance(&p, t).0,
                Body::Peer(peer) => (p - peer.position(t)).norm(),
            }
        })
        .fold(f64::INFINITY, f64::min)
        - margin
}

/// Result of the a-posteriori checks on a candidate trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardCheck {
    pub dynamics_ok: bool,
    pub worst_limit_ratio: f64,
    pub min_obstacle_clearance: f64,
    pub min_peer_clearance: f64,
}

impl HardCheck {
    pub fn passed(&self) -> bool {
        self.dynamics_ok && self.min_obstacle_clearance >= 0.0 && self.min_peer_clearance >= 0.0
    }
}

/// Dense-sampled dynamic and clearance checks for `traj` against `prob`.
/// Clearance is checked over the trajectory and the following hover period,
/// extended to the end of the longest peer trajectory.
pub fn hard_check(traj: &TrajectorySpline, prob: &PlanProblem, cfg: &PlannerConfig) -> HardCheck {
    let feas = check_dynamic_feasibility(traj, &prob.lim, cfg.check_dt);
    let hold_end = traj.t_end() + cfg.hold_horizon;
    let peer_end = prob.peer_trajs.iter().map(TrajectorySpline::t_end).fold(hold_end, f64::max);
    let window = (traj.t_start, hold_end);
    let min_obs = prob
        .obstacles
        .iter()
        .map(|o| clearance(traj, Body::Obstacle(o), prob.safety_margin, window, cfg.check_dt))
        .fold(f64::INFINITY, f64::min);
    let min_peer = prob
        .peer_trajs
        .iter()
        .map(|p| clearance(traj, Body::Peer(p), prob.safety_margin, (traj.t_start, peer_end), cfg.check_dt))
        .fold(f64::INFINITY, f64::min);
    HardCheck {
        dynamics_ok: feas.ok,
        worst_limit_ratio: feas.worst_ratio.max(),
        min_obstacle_clearance: min_obs,
        min_peer_clearance: min_peer,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::{StartState, Vec3};
    use crate::world::Trefoil;

    #[test]
    fn quadrature_weights_sum_to_one_and_integrate_polynomials() {
        for (points, panels) in [(1, 1), (2, 3), (3, 1), (4, 2), (5, 4)] {
            let nodes = Quadrature { points, panels }.nodes(4);
            let s: f64 = nodes.iter().map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // degree-9 polynomial is exact with 5 nodes per segment
        let nodes = Quadrature { points: 5, panels: 1 }.nodes(3);
        let v: f64 = nodes.iter().map(|(x, w)| w * x.powi(9)).sum();
        assert!((v - 0.1).abs() < 1e-12);
    }

    #[test]
    fn fov_term_empty_is_zero() {
        let traj = TrajectorySpline::constant(0.0, 2.0, Vec3::zeros(), 0.0);
        assert_eq!(fov_term(&traj, &[], &CameraModel::default(), 10.0, Quadrature { points: 5, panels: 1 }), 0.0);
    }

    #[test]
    fn fov_term_pinned_on_axis() {
        let traj = TrajectorySpline::constant(0.0, 2.5, Vec3::zeros(), 0.0);
        let obs = ObstaclePrediction::cube(0, 0.5, Trefoil::stationary(Vec3::new(3.0, 0.0, 0.0)));
        let cam = CameraModel::default();
        let score = cam.in_fov(&Vec3::zeros(), 0.0, &obs.position(0.0));
        assert!(score > 0.99);
        let f = fov_term(&traj, &[obs], &cam, 10.0, Quadrature { points: 5, panels: 2 });
        assert!((f + 10.0 * 2.5 * score.powi(3)).abs() < 1e-9);
        assert!((f + 10.0 * 2.5).abs() < 0.25);
    }

    #[test]
    fn stationary_at_goal_costs_nothing() {
        let goal = Vec3::new(1.0, 1.0, 1.0);
        let prob = PlanProblem::new(StartState::at_rest(goal, 0.0), 0.0, goal);
        let traj = TrajectorySpline::constant(0.0, 1.0, goal, 0.0);
        assert_eq!(total_cost(&traj, &prob, &PlannerConfig::default()).total(), 0.0);
    }

    #[test]
    fn clearance_geometry() {
        let a = TrajectorySpline::new(0.0, 2.0, (0..6).map(|i| Vec3::new(i as f64, 0.0, 1.0)).collect(), vec![0.0; 6]).unwrap();
        let mut b = a.clone();
        for c in &mut b.pos_ctrl {
            c.y += 5.0;
        }
        let c = clearance(&a, Body::Peer(&b), 0.5, (0.0, 2.0), 0.01);
        assert!((c - 4.5).abs() < 1e-9);
        let obs = ObstaclePrediction::cube(0, 0.5, Trefoil::stationary(Vec3::new(2.5, 0.0, 1.0)));
        assert!(clearance(&a, Body::Obstacle(&obs), 0.3, (0.0, 2.0), 0.01) < 0.0);
    }
}
