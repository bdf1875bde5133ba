//! Post-hoc metrics on the 10 Hz metric clock.

use serde::{Deserialize, Serialize};

use crate::traj::{Basis, DynamicLimits, TrajectorySpline, Vec3};
use crate::world::{box_signed_distance, CameraModel, ObstaclePrediction};

/// Metric clock period, seconds.
pub const FRAME_DT: f64 = 0.1;

/// The trajectory an agent actually flies: each commit takes over at its own
/// start time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlownPath {
    pub commits: Vec<TrajectorySpline>,
}

/// Kinematic state of one agent at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
    pub jerk: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl FlownPath {
    pub fn new(commits: Vec<TrajectorySpline>) -> Self {
        assert!(!commits.is_empty(), "a flown path needs an initial trajectory");
        FlownPath { commits }
    }

    /// Commit in force at `t`.
    pub fn active(&self, t: f64) -> &TrajectorySpline {
        let idx = self.commits.partition_point(|c| c.t_start <= t);
        &self.commits[idx.saturating_sub(1)]
    }

    pub fn state(&self, t: f64) -> AgentState {
        let tr = self.active(t);
        let p = tr.eval(t, 0);
        let v = tr.eval(t, 1);
        AgentState { pos: p.pos, vel: v.pos, acc: tr.eval(t, 2).pos, jerk: tr.eval(t, 3).pos, yaw: p.yaw, yaw_rate: v.yaw }
    }

    /// `(∫‖a‖², ∫‖j‖²)` over `[t0, t1]`, exact for the piecewise-polynomial
    /// path: every polynomial piece gets a 3-point Gauss–Legendre rule.
    pub fn smoothness(&self, t0: f64, t1: f64) -> (f64, f64) {
        let mut cuts = vec![t0, t1];
        for (k, c) in self.commits.iter().enumerate() {
            let until = self.commits.get(k + 1).map_or(f64::INFINITY, |n| n.t_start);
            let basis = Basis::clamped_uniform(c.pos_ctrl.len());
            cuts.extend(basis.knots().iter().map(|u| c.t_start + u * c.total_time).filter(|t| *t < until));
            cuts.push(c.t_start);
        }
        cuts.retain(|t| *t >= t0 && *t <= t1);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let nodes = [(-(0.6f64).sqrt(), 5.0 / 9.0), (0.0, 8.0 / 9.0), ((0.6f64).sqrt(), 5.0 / 9.0)];
        let (mut acc, mut jerk) = (0.0, 0.0);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
            // the commit is chosen at the midpoint so the whole piece uses it
            let tr = self.active(mid);
            for (x, wt) in nodes {
                let t = mid + half * x;
                acc += wt * half * tr.eval(t, 2).pos.norm_squared();
                jerk += wt * half * tr.eval(t, 3).pos.norm_squared();
            }
        }
        (acc, jerk)
    }
}

/// Visibility of one obstacle in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sighting {
    pub in_range: bool,
    pub visible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovMetrics {
    /// Percentage of frames with some obstacle in range in which an
    /// in-range obstacle is inside the FOV.
    pub rate: f64,
    /// False when no frame had an obstacle in range; `rate` is then 0.
    pub defined: bool,
    /// Longest run of consecutive visible frames per obstacle, averaged
    /// over obstacles.
    pub max_run: f64,
}

/// `trace[frame][obstacle]`.
pub fn fov_metrics(trace: &[Vec<Sighting>]) -> FovMetrics {
    let n_obs = trace.iter().map(|f| f.len()).max().unwrap_or(0);
    let (mut denom, mut num) = (0usize, 0usize);
    for frame in trace {
        if frame.iter().any(|s| s.in_range) {
            denom += 1;
            if frame.iter().any(|s| s.in_range && s.visible) {
                num += 1;
            }
        }
    }
    let mut runs = 0.0;
    for o in 0..n_obs {
        let (mut best, mut cur) = (0usize, 0usize);
        for frame in trace {
            if frame.get(o).is_some_and(|s| s.visible) {
                cur += 1;
                best = best.max(cur);
            } else {
                cur = 0;
            }
        }
        runs += best as f64;
    }
    FovMetrics {
        rate: if denom > 0 { 100.0 * num as f64 / denom as f64 } else { 0.0 },
        defined: denom > 0,
        max_run: if n_obs > 0 { runs / n_obs as f64 } else { 0.0 },
    }
}

pub fn sighting(cam: &CameraModel, s: &AgentState, obstacle: &Vec3) -> Sighting {
    Sighting { in_range: (obstacle - s.pos).norm() <= cam.depth_range, visible: cam.in_fov_binary(&s.pos, s.yaw, obstacle) }
}

/// Relative slack on the limit checks, for frames that land exactly on an
/// active constraint.
const LIMIT_SLACK: f64 = 1e-6;

pub fn translational_violation(s: &AgentState, lim: &DynamicLimits) -> bool {
    let over = |x: f64, m: f64| x > m * (1.0 + LIMIT_SLACK);
    over(s.vel.norm(), lim.v_max) || over(s.acc.norm(), lim.a_max) || over(s.jerk.norm(), lim.j_max)
}

pub fn yaw_violation(s: &AgentState, lim: &DynamicLimits) -> bool {
    s.yaw_rate.abs() > lim.yaw_rate_max * (1.0 + LIMIT_SLACK)
}

/// Clearance from a point agent to an obstacle box; negative inside.
pub fn obstacle_clearance(pos: &Vec3, o: &ObstaclePrediction, t: f64) -> f64 {
    box_signed_distance(&(pos - o.position(t)), &o.half_extents).0
}

/// Frame times `0, dt, …` up to and including `t_end`.
pub fn frame_times(t_end: f64) -> Vec<f64> {
    let n = (t_end / FRAME_DT + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * FRAME_DT).collect()
}

/// Per-agent metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub agent: usize,
    pub planner: String,
    pub avg_computation_ms: f64,
    pub replans: usize,
    pub commits: usize,
    pub reached_goal: bool,
    pub success: bool,
    /// Time of the first frame after which the agent stays within the goal
    /// tolerance until the end of the run.
    pub travel_time: Option<f64>,
    pub fov_rate: f64,
    pub fov_defined: bool,
    pub max_fov_frames: f64,
    pub trans_violation_rate: f64,
    pub yaw_violation_rate: f64,
    pub avg_cost: Option<f64>,
    pub collision_frames: usize,
    pub violation_frames: usize,
    pub accel_integral: f64,
    pub jerk_integral: f64,
    pub min_obstacle_clearance: f64,
}

/// Mean over agents; `success` requires every agent to succeed and the run
/// to finish before its time limit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_agents: usize,
    pub success: bool,
    pub avg_computation_ms: f64,
    pub travel_time: Option<f64>,
    pub fov_rate: f64,
    pub max_fov_frames: f64,
    pub trans_violation_rate: f64,
    pub yaw_violation_rate: f64,
    pub avg_cost: Option<f64>,
    pub accel_integral: f64,
    pub jerk_integral: f64,
    pub collision_frames: usize,
    pub violation_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub agents: Vec<AgentMetrics>,
    pub aggregate: Aggregate,
    pub min_inter_agent_distance: Option<f64>,
    pub inter_agent_violation_frames: usize,
    pub end_time: f64,
    pub timed_out: bool,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn aggregate(agents: &[AgentMetrics]) -> Aggregate {
    if agents.is_empty() {
        return Aggregate { success: true, ..Aggregate::default() };
    }
    let all = |f: fn(&AgentMetrics) -> f64| mean(agents.iter().map(f)).unwrap_or(0.0);
    Aggregate {
        n_agents: agents.len(),
        success: agents.iter().all(|a| a.success),
        avg_computation_ms: all(|a| a.avg_computation_ms),
        travel_time: if agents.iter().all(|a| a.travel_time.is_some()) {
            mean(agents.iter().filter_map(|a| a.travel_time))
        } else {
            None
        },
        fov_rate: all(|a| a.fov_rate),
        max_fov_frames: all(|a| a.max_fov_frames),
        trans_violation_rate: all(|a| a.trans_violation_rate),
        yaw_violation_rate: all(|a| a.yaw_violation_rate),
        avg_cost: mean(agents.iter().filter_map(|a| a.avg_cost)),
        accel_integral: all(|a| a.accel_integral),
        jerk_integral: all(|a| a.jerk_integral),
        collision_frames: agents.iter().map(|a| a.collision_frames).sum(),
        violation_frames: agents.iter().map(|a| a.violation_frames).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(in_range: bool, visible: bool) -> Sighting {
        Sighting { in_range, visible }
    }

    #[test]
    fn always_visible() {
        let trace = vec![vec![s(true, true)]; 37];
        let m = fov_metrics(&trace);
        assert_eq!((m.rate, m.defined, m.max_run), (100.0, true, 37.0));
    }

    #[test]
    fn never_in_range_is_flagged() {
        let m = fov_metrics(&vec![vec![s(false, false), s(false, false)]; 10]);
        assert_eq!((m.rate, m.defined, m.max_run), (0.0, false, 0.0));
    }

    #[test]
    fn alternating_visibility() {
        let trace: Vec<_> = (0..20).map(|k| vec![s(true, k % 2 == 0)]).collect();
        let m = fov_metrics(&trace);
        assert_eq!((m.rate, m.max_run), (50.0, 1.0));
    }

    #[test]
    fn out_of_range_frames_leave_the_denominator() {
        let mut trace = vec![vec![s(true, true)]; 3];
        trace.extend(vec![vec![s(false, false)]; 5]);
        trace.push(vec![s(true, false)]);
        let m = fov_metrics(&trace);
        assert_eq!(m.rate, 75.0);
        assert_eq!(m.max_run, 3.0);
    }

    #[test]
    fn runs_are_averaged_over_obstacles() {
        let trace = vec![
            vec![s(true, true), s(true, false)],
            vec![s(true, true), s(true, true)],
            vec![s(true, false), s(true, true)],
            vec![s(true, false), s(true, true)],
        ];
        assert_eq!(fov_metrics(&trace).max_run, 2.5);
    }

    #[test]
    fn active_commit_switches_at_start_time() {
        let a = TrajectorySpline::constant(0.0, 1.0, Vec3::zeros(), 0.0);
        let b = TrajectorySpline::constant(2.0, 1.0, Vec3::x(), 0.0);
        let p = FlownPath::new(vec![a, b]);
        assert_eq!(p.state(1.99).pos, Vec3::zeros());
        assert_eq!(p.state(2.0).pos, Vec3::x());
        assert_eq!(p.state(-1.0).pos, Vec3::zeros());
    }
}
