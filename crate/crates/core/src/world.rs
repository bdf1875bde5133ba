//! Obstacles, their trefoil-knot motion, and camera visibility.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::Vec3;

/// Trefoil-knot motion `center + scale ⊙ k(τ)`, `τ = angular_rate·t + phase`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trefoil {
    pub center: Vec3,
    pub scale: Vec3,
    pub angular_rate: f64,
    pub phase: f64,
}

impl Trefoil {
    pub fn stationary(center: Vec3) -> Self {
        Trefoil { center, scale: Vec3::zeros(), angular_rate: 0.0, phase: 0.0 }
    }

    pub fn position(&self, t: f64) -> Vec3 {
        let tau = self.angular_rate * t + self.phase;
        let knot = Vec3::new(tau.sin() + 2.0 * (2.0 * tau).sin(), tau.cos() - 2.0 * (2.0 * tau).cos(), -(3.0 * tau).sin()) / 3.0;
        self.center + self.scale.component_mul(&knot)
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        let tau = self.angular_rate * t + self.phase;
        let dknot =
            Vec3::new(tau.cos() + 4.0 * (2.0 * tau).cos(), -tau.sin() + 4.0 * (2.0 * tau).sin(), -3.0 * (3.0 * tau).cos()) / 3.0;
        self.scale.component_mul(&dknot) * self.angular_rate
    }
}

/// A tracked obstacle: an axis-aligned box moving along a trefoil.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstaclePrediction {
    pub id: u32,
    pub half_extents: Vec3,
    pub motion: Trefoil,
    pub valid_from: f64,
}

impl ObstaclePrediction {
    pub fn new(id: u32, half_extents: Vec3, motion: Trefoil) -> Self {
        ObstaclePrediction { id, half_extents, motion, valid_from: 0.0 }
    }

    /// Cube with edge `edge` meters.
    pub fn cube(id: u32, edge: f64, motion: Trefoil) -> Self {
        Self::new(id, Vec3::repeat(edge / 2.0), motion)
    }

    pub fn validate(&self) -> Result<()> {
        if self.half_extents.iter().all(|h| *h > 0.0 && h.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidScenario(format!("obstacle {} has non-positive extents", self.id)))
        }
    }

    pub fn position(&self, t: f64) -> Vec3 {
        self.motion.position(t)
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        self.motion.velocity(t)
    }

    /// Signed distance from `p` to the box at time `t` and its gradient
    /// with respect to `p`.
    pub fn signed_distance(&self, p: &Vec3, t: f64) -> (f64, Vec3) {
        box_signed_distance(&(p - self.position(t)), &self.half_extents)
    }
}

/// Signed distance from `rel` (relative to the box center) to an axis-aligned
/// box with half extents `half`; negative inside. Returns the gradient too.
pub fn box_signed_distance(rel: &Vec3, half: &Vec3) -> (f64, Vec3) {
    let q = rel.abs() - half;
    let outside = q.map(|v| v.max(0.0));
    let out_norm = outside.norm();
    if out_norm > 0.0 {
        let grad = Vec3::from_fn(|i, _| rel[i].signum() * outside[i] / out_norm);
        return (out_norm, grad);
    }
    let (axis, inside) = q.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
    let mut grad = Vec3::zeros();
    grad[axis] = if rel[axis] >= 0.0 { 1.0 } else { -1.0 };
    (inside, grad)
}

/// Conical camera rigidly mounted on the body-yaw frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub half_angle: f64,
    pub depth_range: f64,
    /// Optical-axis yaw offset from the body x axis.
    pub mount_yaw: f64,
    /// Optical-axis elevation above the body horizontal plane.
    pub mount_pitch: f64,
    /// Logistic sharpness of the angular gate.
    pub k_ang: f64,
    /// Logistic sharpness of the range gates, 1/m.
    pub k_rng: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel { half_angle: PI / 4.0, depth_range: 6.0, mount_yaw: 0.0, mount_pitch: 0.0, k_ang: 20.0, k_rng: 10.0 }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Smooth visibility score with its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FovScore {
    pub value: f64,
    pub d_agent_pos: Vec3,
    pub d_yaw: f64,
    pub d_target: Vec3,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_angle > 0.0 && self.half_angle < PI / 2.0) || self.depth_range <= 0.0 {
            return Err(Error::InvalidConfig(format!("camera out of range: {self:?}")));
        }
        if self.k_ang <= 0.0 || self.k_rng <= 0.0 {
            return Err(Error::InvalidConfig("camera sharpness must be positive".into()));
        }
        Ok(())
    }

    /// Unit optical axis and its derivative with respect to body yaw.
    pub fn optical_axis(&self, yaw: f64) -> (Vec3, Vec3) {
        let psi = yaw + self.mount_yaw;
        let (cp, sp) = (self.mount_pitch.cos(), self.mount_pitch.sin());
        (Vec3::new(psi.cos() * cp, psi.sin() * cp, sp), Vec3::new(-psi.sin() * cp, psi.cos() * cp, 0.0))
    }

    /// Cosine of the angle between the optical axis and the target direction.
    pub fn cos_angle(&self, agent_pos: &Vec3, agent_yaw: f64, target: &Vec3) -> Option<(f64, f64)> {
        let r = target - agent_pos;
        let d = r.norm();
        if d < 1e-12 {
            return None;
        }
        Some((self.optical_axis(agent_yaw).0.dot(&r) / d, d))
    }

    pub fn in_fov(&self, agent_pos: &Vec3, agent_yaw: f64, target: &Vec3) -> f64 {
        self.in_fov_with_grad(agent_pos, agent_yaw, target).value
    }

    /// `σ(k_ang (cos θ − cos α)) · σ(k_rng (R − d)) · σ(k_rng d)`.
    pub fn in_fov_with_grad(&self, agent_pos: &Vec3, agent_yaw: f64, target: &Vec3) -> FovScore {
        let r = target - agent_pos;
        let d = r.norm();
        let (axis, daxis) = self.optical_axis(agent_yaw);
        if d < 1e-12 {
            let v = sigmoid(self.k_ang * (1.0 - self.half_angle.cos())) * sigmoid(self.k_rng * self.depth_range) * 0.5;
            return FovScore { value: v, d_agent_pos: Vec3::zeros(), d_yaw: 0.0, d_target: Vec3::zeros() };
        }
        let u = r / d;
        let cos_t = axis.dot(&u);
        let ga = sigmoid(self.k_ang * (cos_t - self.half_angle.cos()));
        let gf = sigmoid(self.k_rng * (self.depth_range - d));
        let gn = sigmoid(self.k_rng * d);
        let value = ga * gf * gn;

        let dga = self.k_ang * ga * (1.0 - ga);
        // d cosθ / d r = (axis − cosθ u) / d
        let dcos_dr = (axis - u * cos_t) / d;
        let dgf_dd = -self.k_rng * gf * (1.0 - gf);
        let dgn_dd = self.k_rng * gn * (1.0 - gn);
        let dv_dr = dcos_dr * (dga * gf * gn) + u * (ga * (dgf_dd * gn + gf * dgn_dd));
        let d_yaw = dga * daxis.dot(&u) * gf * gn;
        FovScore { value, d_agent_pos: -dv_dr, d_yaw, d_target: dv_dr }
    }

    /// Hard visibility test used for metrics.
    pub fn in_fov_binary(&self, agent_pos: &Vec3, agent_yaw: f64, target: &Vec3) -> bool {
        match self.cos_angle(agent_pos, agent_yaw, target) {
            Some((cos_t, d)) => cos_t >= self.half_angle.cos() && d <= self.depth_range,
            None => false,
        }
    }
}

/// Sampling ranges for randomized trefoil obstacles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrefoilRanges {
    /// Centers are drawn inside this axis-aligned region.
    pub center_min: Vec3,
    pub center_max: Vec3,
    pub scale_min: f64,
    pub scale_max: f64,
    pub rate_min: f64,
    pub rate_max: f64,
    pub edge: f64,
}

impl Default for TrefoilRanges {
    fn default() -> Self {
        TrefoilRanges {
            center_min: Vec3::new(-2.0, -2.0, 1.0),
            center_max: Vec3::new(2.0, 2.0, 1.0),
            scale_min: 1.0,
            scale_max: 3.0,
            rate_min: 0.3,
            rate_max: 1.0,
            edge: 0.5,
        }
    }
}

impl TrefoilRanges {
    /// Obstacles whose boxes stay well inside a circle of `radius` at height `z`.
    pub fn inside_circle(radius: f64, z: f64) -> Self {
        let c = radius / 6.0;
        TrefoilRanges {
            center_min: Vec3::new(-c, -c, z),
            center_max: Vec3::new(c, c, z),
            scale_min: 0.2 * radius,
            scale_max: 0.4 * radius,
            rate_min: 0.2,
            rate_max: 0.5,
            edge: 0.5,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, id: u32, rng: &mut R) -> ObstaclePrediction {
        let center = Vec3::from_fn(|i, _| uniform(rng, self.center_min[i], self.center_max[i]));
        let scale = Vec3::from_fn(|_, _| uniform(rng, self.scale_min, self.scale_max));
        let rate = uniform(rng, self.rate_min, self.rate_max);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let motion = Trefoil { center, scale, angular_rate: sign * rate, phase: rng.gen_range(0.0..2.0 * PI) };
        ObstaclePrediction::cube(id, self.edge, motion)
    }
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Smallest signed angular difference `a − b` in `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_trefoil() -> Trefoil {
        Trefoil { center: Vec3::zeros(), scale: Vec3::repeat(1.0), angular_rate: 1.0, phase: 0.0 }
    }

    #[test]
    fn zero_scale_stays_at_center() {
        let m = Trefoil { scale: Vec3::zeros(), ..unit_trefoil() };
        let c = Vec3::new(1.0, -1.0, 2.0);
        let m = Trefoil { center: c, ..m };
        for t in [0.0, 1.3, -4.0, 100.0] {
            assert_eq!(m.position(t), c);
        }
    }

    #[test]
    fn periodic_in_tau() {
        let m = unit_trefoil();
        for t in [0.1, 0.7, 2.9] {
            assert!((m.position(t) - m.position(t + 2.0 * PI)).norm() < 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_quarter_turn() {
        // τ = π/2: sin τ = 1, sin 2τ = 0, cos τ = 0, cos 2τ = −1, sin 3τ = −1
        let p = unit_trefoil().position(PI / 2.0);
        let expected = Vec3::new(1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0);
        assert!((p - expected).norm() < 1e-12, "{p:?}");
    }

    #[test]
    fn velocity_matches_finite_difference() {
        let m = Trefoil { scale: Vec3::new(1.5, 2.0, 0.5), angular_rate: 0.7, phase: 0.3, ..unit_trefoil() };
        for t in [0.0, 1.1, 4.2] {
            let h = 1e-6;
            let fd = (m.position(t + h) - m.position(t - h)) / (2.0 * h);
            assert!((fd - m.velocity(t)).norm() < 1e-7);
        }
    }

    #[test]
    fn box_distance_cases() {
        let half = Vec3::repeat(0.25);
        let (d, g) = box_signed_distance(&Vec3::new(1.25, 0.0, 0.0), &half);
        assert!((d - 1.0).abs() < 1e-12 && (g - Vec3::x()).norm() < 1e-12);
        let (d, _) = box_signed_distance(&Vec3::zeros(), &half);
        assert!((d + 0.25).abs() < 1e-12);
        let (d, g) = box_signed_distance(&Vec3::new(0.0, -0.2, 0.0), &half);
        assert!((d + 0.05).abs() < 1e-12 && (g + Vec3::y()).norm() < 1e-12);
        let (d, _) = box_signed_distance(&Vec3::new(1.25, 1.25, 0.0), &half);
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn on_axis_mid_range_is_visible() {
        let cam = CameraModel::default();
        let s = cam.in_fov(&Vec3::zeros(), 0.0, &Vec3::new(cam.depth_range / 2.0, 0.0, 0.0));
        assert!(s > 0.95, "{s}");
    }

    #[test]
    fn behind_is_invisible() {
        let cam = CameraModel::default();
        let s = cam.in_fov(&Vec3::zeros(), 0.0, &Vec3::new(-3.0, 0.0, 0.0));
        assert!(s < 0.05, "{s}");
    }

    #[test]
    fn cone_boundary_is_half() {
        let cam = CameraModel::default();
        let d = cam.depth_range / 2.0;
        let a = cam.half_angle;
        let target = Vec3::new(d * a.cos(), d * a.sin(), 0.0);
        let s = cam.in_fov(&Vec3::zeros(), 0.0, &target);
        let expected = 0.5 * (1.0 / (1.0 + (-cam.k_rng * (cam.depth_range - d)).exp())) * (1.0 / (1.0 + (-cam.k_rng * d).exp()));
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.5).abs() < 1e-6);
    }

    #[test]
    fn binary_cases() {
        let cam = CameraModel::default();
        assert!(cam.in_fov_binary(&Vec3::zeros(), 0.0, &Vec3::new(1.0, 0.1, 0.0)));
        assert!(!cam.in_fov_binary(&Vec3::zeros(), 0.0, &Vec3::new(cam.depth_range + 0.1, 0.0, 0.0)));
        assert!(!cam.in_fov_binary(&Vec3::zeros(), PI, &Vec3::new(1.0, 0.0, 0.0)));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cam = CameraModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 200 {
            let p = Vec3::from_fn(|_, _| rng.gen_range(-2.0..2.0));
            let q = Vec3::from_fn(|_, _| rng.gen_range(-4.0..4.0));
            let yaw = rng.gen_range(-PI..PI);
            let g = cam.in_fov_with_grad(&p, yaw, &q);
            if g.value < 1e-4 || g.value > 0.9999 {
                continue;
            }
            checked += 1;
            let h = 1e-6;
            let fd_yaw = (cam.in_fov(&p, yaw + h, &q) - cam.in_fov(&p, yaw - h, &q)) / (2.0 * h);
            assert!((fd_yaw - g.d_yaw).abs() <= 1e-4 * fd_yaw.abs().max(1e-3));
            for i in 0..3 {
                let mut e = Vec3::zeros();
                e[i] = h;
                let fdp = (cam.in_fov(&(p + e), yaw, &q) - cam.in_fov(&(p - e), yaw, &q)) / (2.0 * h);
                let fdq = (cam.in_fov(&p, yaw, &(q + e)) - cam.in_fov(&p, yaw, &(q - e))) / (2.0 * h);
                assert!((fdp - g.d_agent_pos[i]).abs() <= 1e-4 * fdp.abs().max(1e-3));
                assert!((fdq - g.d_target[i]).abs() <= 1e-4 * fdq.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn binary_agrees_with_smooth_score() {
        let cam = CameraModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1000;
        let mut agree = 0;
        for _ in 0..n {
            let p = Vec3::from_fn(|_, _| rng.gen_range(-3.0..3.0));
            let q = Vec3::from_fn(|_, _| rng.gen_range(-5.0..5.0));
            let yaw = rng.gen_range(-PI..PI);
            if cam.in_fov_binary(&p, yaw, &q) == (cam.in_fov(&p, yaw, &q) > 0.5) {
                agree += 1;
            }
        }
        assert!(agree as f64 >= 0.95 * n as f64, "{agree}/{n}");
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.1) + 0.1).abs() < 1e-12);
        assert!((wrap_angle(2.0 * PI + 0.2) - 0.2).abs() < 1e-12);
    }
}
