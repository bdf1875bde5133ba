use super::cost::CostBreakdown;
use super::{PlanProblem, PlannerConfig};
use crate::traj::{Basis, BasisRow, TrajectorySpline, Vec3, DEGREE};

/// Mapping between the flat decision vector and spline control points.
///
/// Position: the first three control points are fixed by the start position,
/// velocity and acceleration; the last three are tied so the trajectory ends
/// at rest. Yaw: the first two follow start yaw and yaw rate; the last two
/// are tied (zero terminal yaw rate). The total time is appended last when
/// it is a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_ctrl: usize,
    pub free_time: bool,
}

impl Layout {
    pub fn n_pos_points(&self) -> usize {
        self.n_ctrl - 5
    }

    pub fn n_yaw(&self) -> usize {
        self.n_ctrl - 3
    }

    pub fn yaw_offset(&self) -> usize {
        3 * self.n_pos_points()
    }

    pub fn time_index(&self) -> Option<usize> {
        self.free_time.then(|| self.yaw_offset() + self.n_yaw())
    }

    pub fn len(&self) -> usize {
        self.yaw_offset() + self.n_yaw() + usize::from(self.free_time)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Value of the penalized objective split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub cost: CostBreakdown,
    pub penalty: f64,
}

impl Evaluation {
    pub fn penalized(&self, mu: f64) -> f64 {
        self.cost.total() + mu * self.penalty
    }
}

/// Penalized objective over the decision vector, with analytic gradient.
pub struct Objective<'a> {
    prob: &'a PlanProblem,
    cfg: &'a PlannerConfig,
    layout: Layout,
    goal: Vec3,
    fixed_time: f64,
    n_seg: usize,
    pen_rows: Vec<(f64, BasisRow)>,
    quad_rows: Vec<(f64, f64, BasisRow)>,
    jerk_rows: Vec<BasisRow>,
    hold_offsets: Vec<f64>,
}

struct Grad {
    pos: Vec<Vec3>,
    yaw: Vec<f64>,
    time: f64,
}

impl<'a> Objective<'a> {
    /// `fixed_time` is the trajectory duration when the time is not free.
    pub fn new(prob: &'a PlanProblem, cfg: &'a PlannerConfig, fixed_time: f64) -> Self {
        let basis = Basis::clamped_uniform(cfg.n_ctrl);
        let n_seg = basis.n_segments();
        let n_pen = n_seg * cfg.samples_per_segment;
        let pen_rows = (0..=n_pen)
            .map(|j| {
                let s = j as f64 / n_pen as f64;
                (s, basis.row(s))
            })
            .collect();
        let quad_rows = cfg.quadrature().nodes(n_seg).into_iter().map(|(s, w)| (s, w, basis.row(s))).collect();
        let jerk_rows = (0..n_seg).map(|seg| basis.row((seg as f64 + 0.5) / n_seg as f64)).collect();
        let n_hold = (cfg.hold_horizon / 0.1).ceil() as usize;
        let hold_offsets = (1..=n_hold).map(|k| k as f64 * cfg.hold_horizon / n_hold as f64).collect();
        Objective {
            prob,
            cfg,
            layout: Layout { n_ctrl: cfg.n_ctrl, free_time: prob.free_time },
            goal: prob.local_goal(cfg.plan_radius),
            fixed_time,
            n_seg,
            pen_rows,
            quad_rows,
            jerk_rows,
            hold_offsets,
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn goal(&self) -> Vec3 {
        self.goal
    }

    fn time_of(&self, x: &[f64]) -> f64 {
        self.layout.time_index().map_or(self.fixed_time, |i| x[i])
    }

    /// Start-anchored control points for knot spacing `h`.
    fn anchors(&self, h: f64) -> ([Vec3; 3], [f64; 2]) {
        let s = &self.prob.start;
        ([s.pos, s.pos + s.vel * (h / 3.0), s.pos + s.vel * h + s.acc * (h * h / 3.0)], [s.yaw, s.yaw + s.yaw_rate * (h / 3.0)])
    }

    pub fn decode(&self, x: &[f64]) -> (Vec<Vec3>, Vec<f64>, f64) {
        let n = self.cfg.n_ctrl;
        let t = self.time_of(x);
        let (pa, ya) = self.anchors(t / self.n_seg as f64);
        let mut pos = Vec::with_capacity(n);
        pos.extend_from_slice(&pa);
        for k in 0..self.layout.n_pos_points() {
            pos.push(Vec3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]));
        }
        let last = *pos.last().unwrap();
        pos.push(last);
        pos.push(last);
        let mut yaw = Vec::with_capacity(n);
        yaw.extend_from_slice(&ya);
        let off = self.layout.yaw_offset();
        yaw.extend_from_slice(&x[off..off + self.layout.n_yaw()]);
        yaw.push(*yaw.last().unwrap());
        (pos, yaw, t)
    }

    pub fn trajectory(&self, x: &[f64]) -> TrajectorySpline {
        let (pos_ctrl, yaw_ctrl, total_time) = self.decode(x);
        TrajectorySpline { t_start: self.prob.t_start, total_time, degree: DEGREE, pos_ctrl, yaw_ctrl }
    }

    /// Decision vector reproducing the free control points of `pos`/`yaw`.
    pub fn encode(&self, pos: &[Vec3], yaw: &[f64], total_time: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.layout.len());
        for c in &pos[3..3 + self.layout.n_pos_points()] {
            x.extend_from_slice(&[c.x, c.y, c.z]);
        }
        x.extend_from_slice(&yaw[2..2 + self.layout.n_yaw()]);
        if self.layout.free_time {
            x.push(total_time);
        }
        x
    }

    pub fn value(&self, x: &[f64], mu: f64) -> f64 {
        self.evaluate(x, mu, None).penalized(mu)
    }

    /// Evaluate cost and penalty at `x`; when `grad` is given it receives the
    /// gradient of `cost + mu·penalty` with respect to `x`.
    pub fn evaluate(&self, x: &[f64], mu: f64, grad: Option<&mut [f64]>) -> Evaluation {
        let (pos, yaw, t) = self.decode(x);
        let want = grad.is_some();
        let n = pos.len();
        let mut g = Grad { pos: vec![Vec3::zeros(); n], yaw: vec![0.0; n], time: 0.0 };
        let w = self.prob.weights;

        // jerk effort, piecewise constant jerk
        let mut jerk_sum = 0.0;
        let jerk_scale = w.alpha_jerk / (self.n_seg as f64 * t.powi(5));
        for row in &self.jerk_rows {
            let j = row.apply3(3, &pos);
            jerk_sum += j.norm_squared();
            if want && w.alpha_jerk > 0.0 {
                for (k, d) in row.ders[3].iter().enumerate() {
                    g.pos[row.first + k] += j * (2.0 * jerk_scale * d);
                }
            }
        }
        let jerk = jerk_scale * jerk_sum;
        g.time += -5.0 * jerk / t;

        let end = pos[n - 1];
        let goal = w.alpha_goal * (end - self.goal).norm_squared();
        g.pos[n - 1] += (end - self.goal) * (2.0 * w.alpha_goal);

        let fov = self.fov(&pos, &yaw, t, want, &mut g);

        let time = if self.layout.free_time { w.alpha_time * t } else { 0.0 };
        g.time += if self.layout.free_time { w.alpha_time } else { 0.0 };

        let penalty = self.penalties(&pos, &yaw, t, mu, want, &mut g);

        if let Some(out) = grad {
            self.pull_back(&g, t, out);
        }
        Evaluation { cost: CostBreakdown { jerk, goal, fov, time }, penalty }
    }

    fn fov(&self, pos: &[Vec3], yaw: &[f64], t: f64, want: bool, g: &mut Grad) -> f64 {
        let alpha = self.prob.weights.alpha_fov;
        if alpha == 0.0 || self.prob.obstacles.is_empty() {
            return 0.0;
        }
        let cam = &self.prob.cam;
        let mut total = 0.0;
        for (s, wq, row) in &self.quad_rows {
            let time = self.prob.t_start + s * t;
            let p = row.apply3(0, pos);
            let psi = row.apply1(0, yaw);
            for obs in &self.prob.obstacles {
                let sc = cam.in_fov_with_grad(&p, psi, &obs.position(time));
                let cube = sc.value.powi(3);
                total += wq * cube;
                if want {
                    // d/d(value) of −α T w value³
                    let dv = -alpha * t * wq * 3.0 * sc.value * sc.value;
                    for k in 0..4 {
                        let b = row.ders[0][k];
                        g.pos[row.first + k] += sc.d_agent_pos * (dv * b);
                        g.yaw[row.first + k] += sc.d_yaw * dv * b;
                    }
                    g.time += dv * sc.d_target.dot(&obs.velocity(time)) * s - alpha * wq * cube;
                }
            }
        }
        -alpha * t * total
    }

    fn penalties(&self, pos: &[Vec3], yaw: &[f64], t: f64, mu: f64, want: bool, g: &mut Grad) -> f64 {
        let lim = &self.prob.lim;
        let shrink = self.cfg.limit_shrink;
        let margin = self.prob.safety_margin + self.cfg.margin_inflation;
        let limits = [lim.v_max * shrink, lim.a_max * shrink, lim.j_max * shrink];
        let yaw_lim = lim.yaw_rate_max * shrink;
        let mut total = 0.0;
        let n = pos.len();

        for (s, row) in &self.pen_rows {
            // dynamic limits on velocity, acceleration and jerk
            for (order, l) in limits.iter().enumerate().map(|(i, l)| (i + 1, *l)) {
                let scale = t.powi(-(order as i32));
                let v = row.apply3(order, pos) * scale;
                let excess = v.norm_squared() / (l * l) - 1.0;
                if excess > 0.0 {
                    total += excess * excess;
                    if want {
                        // φ = excess², dφ/dv = 4 excess v / l²
                        let dv = v * (4.0 * excess * mu / (l * l));
                        for k in 0..4 {
                            g.pos[row.first + k] += dv * (row.ders[order][k] * scale);
                        }
                        g.time += dv.dot(&v) * (-(order as f64) / t);
                    }
                }
            }
            let rate = row.apply1(1, yaw) / t;
            let excess = rate * rate / (yaw_lim * yaw_lim) - 1.0;
            if excess > 0.0 {
                total += excess * excess;
                if want {
                    let dr = 4.0 * excess * mu * rate / (yaw_lim * yaw_lim);
                    for k in 0..4 {
                        g.yaw[row.first + k] += dr * row.ders[1][k] / t;
                    }
                    g.time += -dr * rate / t;
                }
            }

            let time = self.prob.t_start + s * t;
            let p = row.apply3(0, pos);
            let mut dp = Vec3::zeros();
            let mut dt = 0.0;
            total += self.clearance_penalty(&p, time, margin, mu, want, &mut dp, &mut dt);
            if want {
                for k in 0..4 {
                    g.pos[row.first + k] += dp * row.ders[0][k];
                }
                g.time += dt * s;
            }
        }

        // hover period after the trajectory ends
        let end = pos[n - 1];
        for off in &self.hold_offsets {
            let time = self.prob.t_start + t + off;
            let mut dp = Vec3::zeros();
            let mut dt = 0.0;
            total += self.clearance_penalty(&end, time, margin, mu, want, &mut dp, &mut dt);
            if want {
                g.pos[n - 1] += dp;
                g.time += dt;
            }
        }
        total
    }

    /// Clearance penalty at one sample; accumulates `mu`-scaled derivatives
    /// with respect to the agent position and the absolute sample time.
    #[allow(clippy::too_many_arguments)]
    fn clearance_penalty(&self, p: &Vec3, time: f64, margin: f64, mu: f64, want: bool, dp: &mut Vec3, dt: &mut f64) -> f64 {
        let mut total = 0.0;
        for obs in &self.prob.obstacles {
            let (sd, grad) = obs.signed_distance(p, time);
            let gap = margin - sd;
            if gap > 0.0 {
                total += gap * gap;
                if want {
                    *dp += grad * (-2.0 * gap * mu);
                    *dt += 2.0 * gap * mu * grad.dot(&obs.velocity(time));
                }
            }
        }
        for peer in &self.prob.peer_trajs {
            let q = peer.eval(time, 0).pos;
            let r = p - q;
            let d = r.norm();
            let gap = margin - d;
            if gap > 0.0 {
                total += gap * gap;
                if want && d > 1e-12 {
                    let u = r / d;
                    *dp += u * (-2.0 * gap * mu);
                    *dt += 2.0 * gap * mu * u.dot(&peer.eval(time, 1).pos);
                }
            }
        }
        total
    }

    /// Chain control-point gradients back to the decision vector.
    fn pull_back(&self, g: &Grad, t: f64, out: &mut [f64]) {
        let n = g.pos.len();
        let np = self.layout.n_pos_points();
        for k in 0..np {
            let mut gk = g.pos[3 + k];
            if k == np - 1 {
                gk += g.pos[n - 2] + g.pos[n - 1];
            }
            out[3 * k] = gk.x;
            out[3 * k + 1] = gk.y;
            out[3 * k + 2] = gk.z;
        }
        let off = self.layout.yaw_offset();
        let ny = self.layout.n_yaw();
        for k in 0..ny {
            let mut gk = g.yaw[2 + k];
            if k == ny - 1 {
                gk += g.yaw[n - 1];
            }
            out[off + k] = gk;
        }
        if let Some(ti) = self.layout.time_index() {
            let s = &self.prob.start;
            let ns = self.n_seg as f64;
            let h = t / ns;
            let dc1 = s.vel / (3.0 * ns);
            let dc2 = (s.vel + s.acc * (2.0 * h / 3.0)) / ns;
            let dy1 = s.yaw_rate / (3.0 * ns);
            out[ti] = g.time + g.pos[1].dot(&dc1) + g.pos[2].dot(&dc2) + g.yaw[1] * dy1;
        }
    }
}

/// Gradient of the penalized objective at decision vector `x` with penalty
/// weight `mu`. Has one entry per free control-point coordinate, plus one
/// for the total time when `prob.free_time`.
pub fn gradient(x: &[f64], prob: &PlanProblem, cfg: &PlannerConfig, fixed_time: f64, mu: f64) -> Vec<f64> {
    let obj = Objective::new(prob, cfg, fixed_time);
    let mut g = vec![0.0; obj.layout().len()];
    obj.evaluate(x, mu, Some(&mut g));
    g
}
