//! Perception-aware trajectory optimizer (the expert planner).
//!
//! Position and yaw control points (and the total time, in the free-time
//! variant) are optimized jointly against a cost made of jerk effort, a
//! terminal goal term, the negated cubed visibility integral and, when the
//! time is free, a linear time term. Dynamic limits and clearances are
//! handled by an exterior quadratic penalty whose weight grows over a fixed
//! outer schedule; every result is re-checked by dense sampling.

mod cost;
mod objective;
mod solve;

pub use cost::{clearance, fov_term, hard_check, total_cost, Body, CostBreakdown, HardCheck, Quadrature};
pub use objective::{gradient, Layout, Objective};
pub use solve::{solve, time_bounds, GuessSummary};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::{DynamicLimits, StartState, TrajectorySpline, Vec3};
use crate::world::{CameraModel, ObstaclePrediction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Weights {
    pub alpha_fov: f64,
    pub alpha_jerk: f64,
    pub alpha_goal: f64,
    pub alpha_time: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { alpha_fov: 10.0, alpha_jerk: 1e-3, alpha_goal: 10.0, alpha_time: 1.0 }
    }
}

/// Solver and discretization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub n_ctrl: usize,
    /// Gauss–Legendre nodes per panel for the visibility integral (1..=5).
    pub quad_points: usize,
    /// Quadrature panels per spline segment.
    pub quad_panels: usize,
    /// Penalty sample points per spline segment.
    pub samples_per_segment: usize,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub grad_tol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    /// Extra distance added to the safety margin inside the penalty.
    pub margin_inflation: f64,
    /// Fraction of each dynamic limit the penalty aims for.
    pub limit_shrink: f64,
    /// Sampling step of the a-posteriori checks, seconds.
    pub check_dt: f64,
    /// After the trajectory ends, the hover point is kept clear this long.
    pub hold_horizon: f64,
    /// The goal is projected onto a sphere of this radius around the start.
    pub plan_radius: f64,
    /// Magnitude of the initial-guess lateral/vertical offsets, meters.
    pub guess_offset: f64,
    pub lbfgs_memory: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            n_ctrl: 8,
            quad_points: 5,
            quad_panels: 6,
            samples_per_segment: 10,
            outer_iters: 30,
            inner_iters: 50,
            grad_tol: 1e-6,
            penalty_init: 1.0,
            penalty_growth: 1.6,
            margin_inflation: 0.1,
            limit_shrink: 0.95,
            check_dt: 0.01,
            hold_horizon: 1.5,
            plan_radius: 4.0,
            guess_offset: 1.0,
            lbfgs_memory: 6,
        }
    }
}

impl PlannerConfig {
    pub fn quadrature(&self) -> Quadrature {
        Quadrature { points: self.quad_points, panels: self.quad_panels }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ctrl < 6 {
            return Err(Error::InvalidConfig("n_ctrl must be at least 6".into()));
        }
        if !(1..=5).contains(&self.quad_points) {
            return Err(Error::InvalidConfig("quad_points must be in 1..=5".into()));
        }
        if self.quad_panels == 0 {
            return Err(Error::InvalidConfig("quad_panels must be positive".into()));
        }
        if self.samples_per_segment == 0 || self.check_dt <= 0.0 || self.plan_radius <= 0.0 {
            return Err(Error::InvalidConfig("sampling settings must be positive".into()));
        }
        if self.penalty_growth < 1.0 || self.penalty_init <= 0.0 {
            return Err(Error::InvalidConfig("penalty schedule must be increasing".into()));
        }
        Ok(())
    }
}

/// One planning request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanProblem {
    pub start: StartState,
    /// Absolute time at which the new trajectory begins.
    pub t_start: f64,
    pub goal_pos: Vec3,
    pub obstacles: Vec<ObstaclePrediction>,
    pub peer_trajs: Vec<TrajectorySpline>,
    pub lim: DynamicLimits,
    pub cam: CameraModel,
    pub weights: Weights,
    pub n_guesses: usize,
    pub free_time: bool,
    pub safety_margin: f64,
    /// Seed for the randomized initial guesses.
    pub seed: u64,
}

impl PlanProblem {
    /// Problem with default limits, camera and weights.
    pub fn new(start: StartState, t_start: f64, goal_pos: Vec3) -> Self {
        PlanProblem {
            start,
            t_start,
            goal_pos,
            obstacles: Vec::new(),
            peer_trajs: Vec::new(),
            lim: DynamicLimits::default(),
            cam: CameraModel::default(),
            weights: Weights::default(),
            n_guesses: 1,
            free_time: false,
            safety_margin: 0.3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.start.is_finite() || !self.t_start.is_finite() || !self.goal_pos.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("plan problem has non-finite start or goal".into()));
        }
        let w = &self.weights;
        if [w.alpha_fov, w.alpha_jerk, w.alpha_goal, w.alpha_time].iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidConfig("weights must be non-negative".into()));
        }
        if self.n_guesses == 0 || self.safety_margin <= 0.0 {
            return Err(Error::InvalidConfig("n_guesses ≥ 1 and safety_margin > 0 required".into()));
        }
        self.lim.validate()?;
        self.cam.validate()
    }

    /// Goal projected onto the planning sphere around the start position.
    pub fn local_goal(&self, plan_radius: f64) -> Vec3 {
        let d = self.goal_pos - self.start.pos;
        let n = d.norm();
        if n <= plan_radius {
            self.goal_pos
        } else {
            self.start.pos + d * (plan_radius / n)
        }
    }
}

/// Outcome of a planning request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub traj: TrajectorySpline,
    pub cost: f64,
    pub breakdown: CostBreakdown,
    pub solver_iterations: usize,
    pub wall_time_ms: f64,
    pub feasible: bool,
    pub guesses: Vec<GuessSummary>,
}
