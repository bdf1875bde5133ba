//! Clamped cubic B-spline trajectories over position and yaw.
//!
//! A trajectory is defined on the local window `[0, T]`, placed on the
//! simulation clock at `t_start`. Outside the window the trajectory holds
//! its boundary state with zero derivatives.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Spline degree used everywhere in the planner.
pub const DEGREE: usize = 3;

/// Clamped uniform knot vector on the normalized domain `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Basis {
    n_ctrl: usize,
}

/// Basis functions (and their derivatives, orders 0..=3) of the four control
/// points that influence a given parameter value, in normalized units.
#[derive(Debug, Clone, Copy)]
pub struct BasisRow {
    /// Index of the first influencing control point.
    pub first: usize,
    pub ders: [[f64; 4]; 4],
}

impl Basis {
    pub fn clamped_uniform(n_ctrl: usize) -> Self {
        assert!(n_ctrl > DEGREE, "need at least degree+1 control points");
        Basis { n_ctrl }
    }

    pub fn knot(&self, i: usize) -> f64 {
        let n_seg = self.n_segments() as f64;
        ((i as f64 - DEGREE as f64) / n_seg).clamp(0.0, 1.0)
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..self.n_ctrl + DEGREE + 1).map(|i| self.knot(i)).collect()
    }

    pub fn n_ctrl(&self) -> usize {
        self.n_ctrl
    }

    pub fn n_segments(&self) -> usize {
        self.n_ctrl - DEGREE
    }

    /// Knot span index `i` with `knot(i) <= u < knot(i+1)`; `u = 1` falls into
    /// the last non-empty span.
    pub fn find_span(&self, u: f64) -> usize {
        let n_seg = self.n_segments();
        let seg = ((u * n_seg as f64).floor().max(0.0) as usize).min(n_seg - 1);
        seg + DEGREE
    }

    /// Nonzero basis functions and derivatives at `u` (Piegl & Tiller A2.3).
    pub fn row(&self, u: f64) -> BasisRow {
        let u = u.clamp(0.0, 1.0);
        let span = self.find_span(u);
        let p = DEGREE;
        let mut ndu = [[0.0f64; 4]; 4];
        let mut left = [0.0f64; 4];
        let mut right = [0.0f64; 4];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = u - self.knot(span + 1 - j);
            right[j] = self.knot(span + j) - u;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = [[0.0f64; 4]; 4];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = [[0.0f64; 4]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for kk in 1..=p {
                let mut d = 0.0;
                let rk = r as isize - kk as isize;
                let pk = p - kk;
                if r >= kk {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { kk - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][kk] = -a[s1][kk - 1] / ndu[pk + 1][r];
                    d += a[s2][kk] * ndu[r][pk];
                }
                ders[kk][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for kk in 1..=p {
            for j in 0..=p {
                ders[kk][j] *= fac;
            }
            fac *= (p - kk) as f64;
        }
        BasisRow { first: span - p, ders }
    }
}

impl BasisRow {
    pub fn apply3(&self, order: usize, ctrl: &[Vec3]) -> Vec3 {
        let w = &self.ders[order];
        ctrl[self.first] * w[0] + ctrl[self.first + 1] * w[1] + ctrl[self.first + 2] * w[2] + ctrl[self.first + 3] * w[3]
    }

    pub fn apply1(&self, order: usize, ctrl: &[f64]) -> f64 {
        let w = &self.ders[order];
        ctrl[self.first] * w[0] + ctrl[self.first + 1] * w[1] + ctrl[self.first + 2] * w[2] + ctrl[self.first + 3] * w[3]
    }
}

/// Position and yaw splines sharing one time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpline {
    pub t_start: f64,
    pub total_time: f64,
    pub degree: usize,
    pub pos_ctrl: Vec<Vec3>,
    pub yaw_ctrl: Vec<f64>,
}

/// Flat-output sample: position (or derivative) and yaw (or derivative).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatSample {
    pub pos: Vec3,
    pub yaw: f64,
}

impl TrajectorySpline {
    pub fn new(t_start: f64, total_time: f64, pos_ctrl: Vec<Vec3>, yaw_ctrl: Vec<f64>) -> Result<Self> {
        let traj = TrajectorySpline { t_start, total_time, degree: DEGREE, pos_ctrl, yaw_ctrl };
        traj.validate()?;
        Ok(traj)
    }

    /// Trajectory that stays at `pos` with heading `yaw` forever.
    pub fn constant(t_start: f64, total_time: f64, pos: Vec3, yaw: f64) -> Self {
        TrajectorySpline { t_start, total_time, degree: DEGREE, pos_ctrl: vec![pos; DEGREE + 1], yaw_ctrl: vec![yaw; DEGREE + 1] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree != DEGREE {
            return Err(Error::InvalidTrajectory(format!("degree {} unsupported", self.degree)));
        }
        if !(self.total_time > 0.0 && self.total_time.is_finite()) || !self.t_start.is_finite() {
            return Err(Error::InvalidTrajectory(format!("bad time window t_start={} T={}", self.t_start, self.total_time)));
        }
        if self.pos_ctrl.len() <= DEGREE || self.yaw_ctrl.len() <= DEGREE {
            return Err(Error::InvalidTrajectory(format!(
                "need at least {} control points (pos {}, yaw {})",
                DEGREE + 1,
                self.pos_ctrl.len(),
                self.yaw_ctrl.len()
            )));
        }
        let finite = self.pos_ctrl.iter().all(|c| c.iter().all(|v| v.is_finite())) && self.yaw_ctrl.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidTrajectory("non-finite control point".into()));
        }
        Ok(())
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.total_time
    }

    /// Evaluate the `order`-th time derivative at absolute time `t`.
    pub fn eval(&self, t: f64, order: usize) -> FlatSample {
        assert!(order <= DEGREE, "derivative order {order} > {DEGREE}");
        let local = t - self.t_start;
        if local < 0.0 || local > self.total_time {
            if order > 0 {
                return FlatSample { pos: Vec3::zeros(), yaw: 0.0 };
            }
            return if local < 0.0 {
                FlatSample { pos: self.pos_ctrl[0], yaw: self.yaw_ctrl[0] }
            } else {
                FlatSample { pos: *self.pos_ctrl.last().unwrap(), yaw: *self.yaw_ctrl.last().unwrap() }
            };
        }
        let s = local / self.total_time;
        let scale = self.total_time.powi(-(order as i32));
        let row = Basis::clamped_uniform(self.pos_ctrl.len()).row(s);
        let pos = row.apply3(order, &self.pos_ctrl) * scale;
        let yaw = if self.yaw_ctrl.len() == self.pos_ctrl.len() {
            row.apply1(order, &self.yaw_ctrl)
        } else {
            Basis::clamped_uniform(self.yaw_ctrl.len()).row(s).apply1(order, &self.yaw_ctrl)
        } * scale;
        FlatSample { pos, yaw }
    }

    pub fn position(&self, t: f64) -> Vec3 {
        self.eval(t, 0).pos
    }

    /// Position, velocity and acceleration at `t` plus yaw and yaw rate.
    pub fn state_at(&self, t: f64) -> StartState {
        let p = self.eval(t, 0);
        let v = self.eval(t, 1);
        let a = self.eval(t, 2);
        StartState { pos: p.pos, vel: v.pos, acc: a.pos, yaw: p.yaw, yaw_rate: v.yaw }
    }

    /// Same trajectory shifted on the simulation clock.
    pub fn with_start(mut self, t_start: f64) -> Self {
        self.t_start = t_start;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let traj: TrajectorySpline = serde_json::from_str(s)?;
        traj.validate()?;
        Ok(traj)
    }
}

/// Kinematic state a new plan must continue from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartState {
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl StartState {
    pub fn at_rest(pos: Vec3, yaw: f64) -> Self {
        StartState { pos, vel: Vec3::zeros(), acc: Vec3::zeros(), yaw, yaw_rate: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.pos.iter().chain(self.vel.iter()).chain(self.acc.iter()).all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.yaw_rate.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicLimits {
    pub v_max: f64,
    pub a_max: f64,
    pub j_max: f64,
    pub yaw_rate_max: f64,
}

impl Default for DynamicLimits {
    fn default() -> Self {
        DynamicLimits { v_max: 2.0, a_max: 10.0, j_max: 30.0, yaw_rate_max: 4.0 }
    }
}

impl DynamicLimits {
    pub fn validate(&self) -> Result<()> {
        let all = [self.v_max, self.a_max, self.j_max, self.yaw_rate_max];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("dynamic limits must be positive: {self:?}")))
        }
    }
}

/// Largest sampled magnitude divided by the limit, per quantity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LimitRatios {
    pub vel: f64,
    pub acc: f64,
    pub jerk: f64,
    pub yaw_rate: f64,
}

impl LimitRatios {
    pub fn max(&self) -> f64 {
        self.vel.max(self.acc).max(self.jerk).max(self.yaw_rate)
    }

    pub fn within(&self) -> bool {
        self.max() <= 1.0
    }

    /// Ratios of a single sample against the limits.
    pub fn of_sample(v: Vec3, a: Vec3, j: Vec3, yaw_rate: f64, lim: &DynamicLimits) -> Self {
        LimitRatios {
            vel: v.norm() / lim.v_max,
            acc: a.norm() / lim.a_max,
            jerk: j.norm() / lim.j_max,
            yaw_rate: yaw_rate.abs() / lim.yaw_rate_max,
        }
    }

    fn merge(&mut self, o: &LimitRatios) {
        self.vel = self.vel.max(o.vel);
        self.acc = self.acc.max(o.acc);
        self.jerk = self.jerk.max(o.jerk);
        self.yaw_rate = self.yaw_rate.max(o.yaw_rate);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub ok: bool,
    pub worst_ratio: LimitRatios,
}

/// Sample the trajectory every `dt` seconds over its window and compare the
/// derivative magnitudes against `lim`.
pub fn check_dynamic_feasibility(traj: &TrajectorySpline, lim: &DynamicLimits, dt: f64) -> FeasibilityReport {
    assert!(dt > 0.0, "dt must be positive");
    let mut worst = LimitRatios::default();
    for t in sample_times(traj.t_start, traj.t_end(), dt) {
        // Jerk is discontinuous at knots; evaluating just inside the window
        // keeps the end samples on the last segment.
        let te = t.min(traj.t_end() - 1e-12).max(traj.t_start);
        let v = traj.eval(te, 1);
        let a = traj.eval(te, 2).pos;
        let j = traj.eval(te, 3).pos;
        worst.merge(&LimitRatios::of_sample(v.pos, a, j, v.yaw, lim));
    }
    FeasibilityReport { ok: worst.within(), worst_ratio: worst }
}

/// `t0, t0+dt, ...` up to and including `t1`.
pub fn sample_times(t0: f64, t1: f64, dt: f64) -> impl Iterator<Item = f64> {
    let n = ((t1 - t0) / dt).floor().max(0.0) as usize;
    let last_is_end = (t0 + n as f64 * dt - t1).abs() < 1e-12;
    (0..=n).map(move |i| t0 + i as f64 * dt).chain((!last_is_end).then_some(t1))
}

/// Braking trajectory from `state` that comes to rest while respecting `lim`.
///
/// Uses six control points with the last three tied, which gives velocity
/// control points `(v, v, 0, 0, 0)` and a monotone slow-down. The knot
/// spacing is grown until the sampled check passes.
pub fn stop_trajectory(state: &StartState, t_start: f64, lim: &DynamicLimits) -> TrajectorySpline {
    let v = state.vel;
    let speed = v.norm();
    let n_ctrl = 6;
    let n_seg = (n_ctrl - DEGREE) as f64;
    if speed < 1e-9 {
        let mut traj = TrajectorySpline::constant(t_start, 0.5, state.pos, state.yaw);
        traj.pos_ctrl = vec![state.pos; n_ctrl];
        traj.yaw_ctrl = vec![state.yaw; n_ctrl];
        return traj;
    }
    let mut h = (speed / lim.a_max).max((speed / lim.j_max).sqrt()).max(1e-3) * 1.05;
    loop {
        let c0 = state.pos;
        let c1 = c0 + v * (h / 3.0);
        let c2 = c0 + v * h;
        let traj = TrajectorySpline {
            t_start,
            total_time: h * n_seg,
            degree: DEGREE,
            pos_ctrl: vec![c0, c1, c2, c2, c2, c2],
            yaw_ctrl: vec![state.yaw; n_ctrl],
        };
        if check_dynamic_feasibility(&traj, lim, 1e-3).ok {
            return traj;
        }
        h *= 1.25;
    }
}
