use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cost::{hard_check, total_cost, HardCheck};
use super::objective::Objective;
use super::{PlanProblem, PlanResult, PlannerConfig};
use crate::error::Result;
use crate::traj::{Basis, Vec3};
use crate::world::wrap_angle;

/// Per-guess outcome, kept for diagnostics and tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuessSummary {
    pub cost: f64,
    pub feasible: bool,
    pub iterations: usize,
    /// Penalized objective at the final penalty weight, before and after.
    pub initial_objective: f64,
    pub final_objective: f64,
    pub final_penalty_weight: f64,
    /// True when every accepted line-search step decreased the objective.
    pub monotone: bool,
    pub check: HardCheck,
}

/// Lower bound, nominal value and upper bound of the total time.
///
/// The nominal value is also the duration used when the time is fixed.
pub fn time_bounds(prob: &PlanProblem, cfg: &PlannerConfig) -> (f64, f64, f64) {
    let d = (prob.local_goal(cfg.plan_radius) - prob.start.pos).norm();
    let v0 = prob.start.vel.norm();
    let lim = &prob.lim;
    let nominal = (1.4 * d / lim.v_max + 0.5 + v0 / lim.a_max).max(0.8);
    let lo = (0.8 * d / lim.v_max).max(0.3).min(0.9 * nominal);
    (lo, nominal, 2.0 * nominal)
}

/// Solve `prob` from `n_guesses` initializations and keep the cheapest
/// result that passes the dense checks.
pub fn solve(prob: &PlanProblem, cfg: &PlannerConfig) -> Result<PlanResult> {
    prob.validate()?;
    cfg.validate()?;
    let clock = Instant::now();
    let (lo, nominal, hi) = time_bounds(prob, cfg);
    let obj = Objective::new(prob, cfg, nominal);
    let mut rng = ChaCha8Rng::seed_from_u64(prob.seed);

    let mut best: Option<(usize, f64)> = None;
    let mut fallback: Option<(usize, f64)> = None;
    let mut runs = Vec::with_capacity(prob.n_guesses);
    let mut total_iters = 0;
    for idx in 0..prob.n_guesses {
        let x0 = initial_guess(&obj, prob, cfg, idx, nominal, &mut rng);
        let run = optimize(&obj, prob, cfg, &x0, (lo, hi));
        total_iters += run.summary.iterations;
        let traj = obj.trajectory(&run.x);
        let check = hard_check(&traj, prob, cfg);
        let cost = total_cost(&traj, prob, cfg).total();
        let summary = GuessSummary { cost, feasible: check.passed(), check, ..run.summary };
        if summary.feasible {
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((idx, cost));
            }
        } else if fallback.is_none_or(|(_, f)| summary.final_objective < f) {
            fallback = Some((idx, summary.final_objective));
        }
        runs.push((run.x, summary));
    }
    let pick = best.or(fallback).map(|(i, _)| i).unwrap_or(0);
    let traj = obj.trajectory(&runs[pick].0);
    let breakdown = total_cost(&traj, prob, cfg);
    let guesses: Vec<GuessSummary> = runs.iter().map(|(_, s)| *s).collect();
    let wall_time_ms = clock.elapsed().as_secs_f64() * 1e3;
    log::debug!(
        "solve: {} guesses, pick {pick}, cost {:.3}, feasible {}, {:.1} ms",
        prob.n_guesses,
        breakdown.total(),
        guesses[pick].feasible,
        wall_time_ms
    );
    Ok(PlanResult {
        traj,
        cost: breakdown.total(),
        breakdown,
        solver_iterations: total_iters,
        wall_time_ms,
        feasible: guesses[pick].feasible,
        guesses,
    })
}

/// Straight line to the local goal, bent sideways or vertically for guesses
/// after the first.
fn initial_guess(
    obj: &Objective<'_>,
    prob: &PlanProblem,
    cfg: &PlannerConfig,
    idx: usize,
    total_time: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = cfg.n_ctrl;
    let basis = Basis::clamped_uniform(n);
    let p0 = prob.start.pos;
    let goal = obj.goal();
    let span = goal - p0;
    let dir = if span.norm() > 1e-6 { span.normalize() } else { Vec3::x() };
    let mut lateral = Vec3::z().cross(&dir);
    if lateral.norm() < 1e-6 {
        lateral = Vec3::x();
    }
    let lateral = lateral.normalize();
    let up = dir.cross(&lateral).normalize();
    let offset = match idx {
        0 => Vec3::zeros(),
        1 => lateral,
        2 => -lateral,
        3 => up,
        4 => -up,
        _ => {
            let a = rng.gen_range(0.0..2.0 * PI);
            lateral * a.cos() + up * a.sin()
        }
    } * cfg.guess_offset;

    let heading = if span.xy().norm() > 1e-3 { span.y.atan2(span.x) } else { prob.start.yaw };
    let turn = wrap_angle(heading - prob.start.yaw);
    let greville = |k: usize| (basis.knot(k + 1) + basis.knot(k + 2) + basis.knot(k + 3)) / 3.0;

    let mut pos = vec![p0; n];
    let mut yaw = vec![prob.start.yaw; n];
    for k in 3..n {
        let xi = greville(k);
        let bump = if k < n - 3 { (PI * xi).sin() } else { 0.0 };
        pos[k] = p0 + span * xi + offset * bump;
    }
    for (k, y) in yaw.iter_mut().enumerate().skip(2) {
        *y = prob.start.yaw + turn * greville(k);
    }
    obj.encode(&pos, &yaw, total_time)
}

struct Run {
    x: Vec<f64>,
    summary: GuessSummary,
}

/// Penalty continuation: minimize `cost + mu·penalty` for an increasing
/// sequence of `mu`, warm-starting each stage from the previous one.
fn optimize(obj: &Objective<'_>, prob: &PlanProblem, cfg: &PlannerConfig, x0: &[f64], bounds: (f64, f64)) -> Run {
    let layout = obj.layout();
    let time_idx = layout.time_index();
    let (lo, hi) = bounds;
    // internal coordinates: total time goes through a logistic map into (lo, hi)
    let to_internal = |x: &[f64]| -> Vec<f64> {
        let mut y = x.to_vec();
        if let Some(i) = time_idx {
            let r = ((x[i] - lo) / (hi - lo)).clamp(1e-6, 1.0 - 1e-6);
            y[i] = (r / (1.0 - r)).ln();
        }
        y
    };
    let to_external = |y: &[f64]| -> Vec<f64> {
        let mut x = y.to_vec();
        if let Some(i) = time_idx {
            x[i] = lo + (hi - lo) / (1.0 + (-y[i]).exp());
        }
        x
    };

    let mut y = to_internal(x0);
    let mut mu = cfg.penalty_init;
    let mut iterations = 0;
    let mut monotone = true;
    for _ in 0..cfg.outer_iters {
        let f = |yv: &[f64], g: Option<&mut [f64]>| -> f64 {
            let x = to_external(yv);
            match g {
                None => obj.value(&x, mu),
                Some(g) => {
                    let ev = obj.evaluate(&x, mu, Some(g));
                    if let Some(i) = time_idx {
                        let sig = (x[i] - lo) / (hi - lo);
                        g[i] *= (hi - lo) * sig * (1.0 - sig);
                    }
                    ev.penalized(mu)
                }
            }
        };
        let stats = lbfgs(&f, &mut y, cfg.inner_iters, cfg.grad_tol, cfg.lbfgs_memory);
        iterations += stats.iterations;
        monotone &= stats.monotone;
        let xs = to_external(&y);
        let penalty = obj.evaluate(&xs, mu, None).penalty;
        if penalty == 0.0 && stats.converged {
            break;
        }
        // stop as soon as the hard checks pass
        if hard_check(&obj.trajectory(&xs), prob, cfg).passed() {
            break;
        }
        mu *= cfg.penalty_growth;
    }
    let x = to_external(&y);
    let summary = GuessSummary {
        cost: f64::NAN,
        feasible: false,
        iterations,
        initial_objective: obj.value(x0, mu),
        final_objective: obj.value(&x, mu),
        final_penalty_weight: mu,
        monotone,
        check: HardCheck {
            dynamics_ok: false,
            worst_limit_ratio: f64::NAN,
            min_obstacle_clearance: f64::NAN,
            min_peer_clearance: f64::NAN,
        },
    };
    Run { x, summary }
}

struct DescentStats {
    iterations: usize,
    converged: bool,
    monotone: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory quasi-Newton descent with Armijo backtracking. Falls back
/// to the negative gradient whenever the two-loop direction is not a descent
/// direction or the line search stalls.
fn lbfgs<F>(f: &F, x: &mut [f64], max_iters: usize, tol: f64, memory: usize) -> DescentStats
where
    F: Fn(&[f64], Option<&mut [f64]>) -> f64,
{
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(x, Some(&mut g));
    let mut s_hist: Vec<Vec<f64>> = Vec::with_capacity(memory);
    let mut y_hist: Vec<Vec<f64>> = Vec::with_capacity(memory);
    let mut trial = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut monotone = true;
    let mut converged = false;
    let mut it = 0;
    while it < max_iters {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < tol {
            converged = true;
            break;
        }
        let mut d = two_loop(&g, &s_hist, &y_hist);
        let mut slope = dot(&d, &g);
        if slope >= 0.0 || !slope.is_finite() {
            s_hist.clear();
            y_hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&d, &g);
        }
        let mut step = if s_hist.is_empty() { (1.0 / dot(&g, &g).sqrt()).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..40 {
            for i in 0..n {
                trial[i] = x[i] + step * d[i];
            }
            let ft = f(&trial, None);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some(ft);
                break;
            }
            step *= 0.5;
        }
        it += 1;
        let Some(_) = accepted else {
            if s_hist.is_empty() {
                // steepest descent cannot make progress: stationary to working precision
                converged = true;
                break;
            }
            s_hist.clear();
            y_hist.clear();
            continue;
        };
        let f_new = f(&trial, Some(&mut g_new));
        if f_new > fx {
            monotone = false;
        }
        let s: Vec<f64> = (0..n).map(|i| trial[i] - x[i]).collect();
        let yv: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        if dot(&s, &yv) > 1e-12 {
            if s_hist.len() == memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(yv);
        }
        x.copy_from_slice(&trial);
        g.copy_from_slice(&g_new);
        let decrease = fx - f_new;
        fx = f_new;
        if decrease.abs() <= 1e-12 * fx.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    DescentStats { iterations: it, converged, monotone }
}

fn two_loop(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let m = s_hist.len();
    let mut alpha = vec![0.0; m];
    for i in (0..m).rev() {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        alpha[i] = rho * dot(&s_hist[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
            *qj -= alpha[i] * yj;
        }
    }
    if m > 0 {
        let gamma = dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for i in 0..m {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        let beta = rho * dot(&y_hist[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
