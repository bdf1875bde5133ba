//! Map one head of raw network output to a start-anchored trajectory.
//!
//! Head layout: free position control points as offsets in the start yaw
//! frame, free yaw control points as offsets from the start yaw, then a
//! time logit. The first three position and first two yaw control points
//! come from the start state; the last free points are repeated to the end,
//! matching the expert's parameterization.

use super::features::LocalFrame;
use crate::traj::{StartState, TrajectorySpline, Vec3, DEGREE};

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoder {
    pub n_ctrl: usize,
    pub t_min: f64,
    pub t_scale: f64,
}

impl Decoder {
    pub fn n_pos_free(&self) -> usize {
        self.n_ctrl - 5
    }

    pub fn n_yaw_free(&self) -> usize {
        self.n_ctrl - 3
    }

    pub fn head_len(&self) -> usize {
        3 * self.n_pos_free() + self.n_yaw_free() + 1
    }

    pub fn n_segments(&self) -> usize {
        self.n_ctrl - DEGREE
    }

    /// `T = t_min + t_scale · softplus(logit)`.
    pub fn total_time(&self, logit: f64) -> f64 {
        self.t_min + self.t_scale * softplus(logit)
    }

    pub fn decode(&self, head: &[f64], start: &StartState, t_start: f64) -> TrajectorySpline {
        debug_assert_eq!(head.len(), self.head_len());
        let n = self.n_ctrl;
        let frame = LocalFrame::new(start.pos, start.yaw);
        let t = self.total_time(head[self.head_len() - 1]);
        let h = t / self.n_segments() as f64;
        let mut pos = Vec::with_capacity(n);
        pos.push(start.pos);
        pos.push(start.pos + start.vel * (h / 3.0));
        pos.push(start.pos + start.vel * h + start.acc * (h * h / 3.0));
        for k in 0..self.n_pos_free() {
            let off = Vec3::new(head[3 * k], head[3 * k + 1], head[3 * k + 2]);
            pos.push(start.pos + frame.vector_to_world(&off));
        }
        let last = *pos.last().unwrap();
        pos.push(last);
        pos.push(last);
        let mut yaw = Vec::with_capacity(n);
        yaw.push(start.yaw);
        yaw.push(start.yaw + start.yaw_rate * (h / 3.0));
        let off = 3 * self.n_pos_free();
        yaw.extend(head[off..off + self.n_yaw_free()].iter().map(|d| start.yaw + d));
        yaw.push(*yaw.last().unwrap());
        TrajectorySpline { t_start, total_time: t, degree: DEGREE, pos_ctrl: pos, yaw_ctrl: yaw }
    }

    /// Chain `dL/d(control points, T)` back to `dL/d(head)`.
    pub fn backward(&self, head: &[f64], start: &StartState, d_pos: &[Vec3], d_yaw: &[f64], d_time: f64) -> Vec<f64> {
        let n = self.n_ctrl;
        let frame = LocalFrame::new(start.pos, start.yaw);
        let logit = head[self.head_len() - 1];
        let h = self.total_time(logit) / self.n_segments() as f64;
        let mut out = vec![0.0; self.head_len()];
        for k in 0..self.n_pos_free() {
            let mut d = d_pos[3 + k];
            if k + 1 == self.n_pos_free() {
                d += d_pos[n - 2] + d_pos[n - 1];
            }
            // the frame is a rotation: its adjoint is the forward map
            let local = frame.vector(&d);
            out[3 * k..3 * k + 3].copy_from_slice(local.as_slice());
        }
        let off = 3 * self.n_pos_free();
        for k in 0..self.n_yaw_free() {
            let mut d = d_yaw[2 + k];
            if k + 1 == self.n_yaw_free() {
                d += d_yaw[n - 1];
            }
            out[off + k] = d;
        }
        let dh = d_pos[1].dot(&(start.vel / 3.0))
            + d_pos[2].dot(&(start.vel + start.acc * (2.0 * h / 3.0)))
            + d_yaw[1] * start.yaw_rate / 3.0;
        let d_t = d_time + dh / self.n_segments() as f64;
        out[self.head_len() - 1] = d_t * self.t_scale * sigmoid(logit);
        out
    }
}
