//! Weighted imitation loss on time-normalized samples.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::features::Encoded;
use super::net::{ForwardCache, PolicyNet};
use crate::traj::{Basis, BasisRow, StartState, TrajectorySpline, Vec3};
use crate::world::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha_yaw: f64,
    /// Uniform samples per trajectory, endpoints included.
    pub samples: usize,
    /// Weight of the squared total-time error added during training.
    pub time_weight: f64,
    /// Share of the loss spread evenly over all heads; the rest goes to the
    /// best head.
    pub head_mix: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha_yaw: 70.0, samples: 50, time_weight: 1.0, head_mix: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pos: f64,
    pub yaw: f64,
    pub total: f64,
}

fn fractions(k: usize) -> impl Iterator<Item = f64> {
    assert!(k >= 2, "need at least two loss samples");
    (0..k).map(move |i| i as f64 / (k - 1) as f64)
}

/// `L_pos + alpha_yaw · L_yaw` between two trajectories, each sampled at the
/// same fractions of its own span.
pub fn il_loss(student: &TrajectorySpline, expert: &TrajectorySpline, cfg: &LossConfig) -> LossBreakdown {
    let (mut pos, mut yaw) = (0.0, 0.0);
    for s in fractions(cfg.samples) {
        let a = student.eval(student.t_start + s * student.total_time, 0);
        let b = expert.eval(expert.t_start + s * expert.total_time, 0);
        pos += (a.pos - b.pos).norm_squared();
        yaw += wrap_angle(a.yaw - b.yaw).powi(2);
    }
    let k = cfg.samples as f64;
    let (pos, yaw) = (pos / k, yaw / k);
    LossBreakdown { pos, yaw, total: pos + cfg.alpha_yaw * yaw }
}

/// Expert trajectory sampled once for repeated loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub pos: Vec<Vec3>,
    pub yaw: Vec<f64>,
    pub total_time: f64,
}

impl Target {
    pub fn new(expert: &TrajectorySpline, samples: usize) -> Self {
        let (pos, yaw) = fractions(samples)
            .map(|s| {
                let e = expert.eval(expert.t_start + s * expert.total_time, 0);
                (e.pos, e.yaw)
            })
            .unzip();
        Target { pos, yaw, total_time: expert.total_time }
    }
}

/// Basis rows of the student's spline at the loss sample fractions.
pub fn sample_rows(n_ctrl: usize, samples: usize) -> Vec<BasisRow> {
    let basis = Basis::clamped_uniform(n_ctrl);
    fractions(samples).map(|s| basis.row(s)).collect()
}

/// Loss of one decoded trajectory and its gradient with respect to the
/// control points.
pub fn loss_and_grad(
    traj: &TrajectorySpline,
    rows: &[BasisRow],
    target: &Target,
    alpha_yaw: f64,
) -> (LossBreakdown, Vec<Vec3>, Vec<f64>) {
    let k = rows.len() as f64;
    let mut d_pos = vec![Vec3::zeros(); traj.pos_ctrl.len()];
    let mut d_yaw = vec![0.0; traj.yaw_ctrl.len()];
    let (mut pos, mut yaw) = (0.0, 0.0);
    for ((row, tp), ty) in rows.iter().zip(&target.pos).zip(&target.yaw) {
        let ep = row.apply3(0, &traj.pos_ctrl) - tp;
        let ey = wrap_angle(row.apply1(0, &traj.yaw_ctrl) - ty);
        pos += ep.norm_squared();
        yaw += ey * ey;
        for j in 0..4 {
            let w = row.ders[0][j];
            d_pos[row.first + j] += ep * (2.0 * w / k);
            d_yaw[row.first + j] += alpha_yaw * 2.0 * ey * w / k;
        }
    }
    let (pos, yaw) = (pos / k, yaw / k);
    (LossBreakdown { pos, yaw, total: pos + alpha_yaw * yaw }, d_pos, d_yaw)
}

/// One training example in network-ready form.
#[derive(Debug, Clone)]
pub struct Sample {
    pub encoded: Encoded,
    pub start: StartState,
    pub t_start: f64,
    pub target: Target,
}

/// Mean objective over a batch, and its gradient with respect to the raw
/// network outputs.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// Training objective: mixed over heads, including the time term.
    pub objective: f64,
    /// Imitation loss of the best head per sample, averaged.
    pub best: LossBreakdown,
    pub d_out: DMatrix<f64>,
}

pub fn batch_loss(net: &PolicyNet, cache: &ForwardCache, batch: &[&Sample], rows: &[BasisRow], cfg: &LossConfig) -> BatchLoss {
    let dec = net.cfg.decoder();
    let hl = dec.head_len();
    let n_heads = net.cfg.n_heads;
    let out = cache.output();
    let nb = batch.len() as f64;
    let mut d_out = DMatrix::zeros(out.nrows(), out.ncols());
    let mut objective = 0.0;
    let mut best = LossBreakdown::default();
    for (r, s) in batch.iter().enumerate() {
        let row: Vec<f64> = out.row(r).iter().copied().collect();
        let per_head: Vec<_> = (0..n_heads)
            .map(|h| {
                let head = &row[h * hl..(h + 1) * hl];
                let tr = dec.decode(head, &s.start, s.t_start);
                let (l, dp, dy) = loss_and_grad(&tr, rows, &s.target, cfg.alpha_yaw);
                let dt = tr.total_time - s.target.total_time;
                (l, l.total + cfg.time_weight * dt * dt, dp, dy, 2.0 * cfg.time_weight * dt)
            })
            .collect();
        let arg = (0..n_heads).min_by(|a, b| per_head[*a].1.total_cmp(&per_head[*b].1)).unwrap();
        let mix = if n_heads > 1 { cfg.head_mix } else { 0.0 };
        for (h, (_, obj, dp, dy, dt)) in per_head.iter().enumerate() {
            let w = mix / n_heads as f64 + if h == arg { 1.0 - mix } else { 0.0 };
            objective += w * obj / nb;
            let head = &row[h * hl..(h + 1) * hl];
            let g = dec.backward(head, &s.start, dp, dy, *dt);
            for (k, gk) in g.iter().enumerate() {
                d_out[(r, h * hl + k)] = w * gk / nb;
            }
        }
        let lb = per_head[arg].0;
        best.pos += lb.pos / nb;
        best.yaw += lb.yaw / nb;
        best.total += lb.total / nb;
    }
    BatchLoss { objective, best, d_out }
}

/// Exact gradients of the batch objective with respect to every parameter.
pub fn net_gradients(net: &PolicyNet, batch: &[&Sample], rows: &[BasisRow], cfg: &LossConfig) -> (BatchLoss, PolicyNet) {
    let enc: Vec<Encoded> = batch.iter().map(|s| s.encoded.clone()).collect();
    let cache = net.forward(&enc);
    let loss = batch_loss(net, &cache, batch, rows, cfg);
    let grad = net.backward(&cache, &loss.d_out);
    (loss, grad)
}
