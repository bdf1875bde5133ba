//! Spline evaluation against an independent de Boor implementation and
//! finite differences.

use primer_core::traj::{check_dynamic_feasibility, stop_trajectory, DynamicLimits, StartState, TrajectorySpline, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Clamped uniform knots on `[0, T]`, built directly.
fn knots(n_ctrl: usize, t: f64) -> Vec<f64> {
    let n_seg = n_ctrl - 3;
    let mut k = vec![0.0; 4];
    for i in 1..n_seg {
        k.push(t * i as f64 / n_seg as f64);
    }
    k.extend([t; 4]);
    k
}

/// de Boor's algorithm for a degree-3 spline at local time `u`.
fn de_boor(ctrl: &[Vec3], knots: &[f64], u: f64) -> Vec3 {
    let p = 3;
    let n = ctrl.len();
    let mut k = p;
    while k < n - 1 && u >= knots[k + 1] {
        k += 1;
    }
    let mut d: Vec<Vec3> = (0..=p).map(|j| ctrl[j + k - p]).collect();
    for r in 1..=p {
        for j in (r..=p).rev() {
            let i = j + k - p;
            let denom = knots[i + p + 1 - r] - knots[i];
            let alpha = if denom == 0.0 { 0.0 } else { (u - knots[i]) / denom };
            d[j] = d[j - 1] * (1.0 - alpha) + d[j] * alpha;
        }
    }
    d[p]
}

fn random_traj(rng: &mut ChaCha8Rng, n: usize) -> TrajectorySpline {
    let pos = (0..n).map(|_| Vec3::from_fn(|_, _| rng.gen_range(-3.0..3.0))).collect();
    let yaw = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    TrajectorySpline::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.5..4.0), pos, yaw).unwrap()
}

#[test]
fn value_and_velocity_match_de_boor_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let traj = random_traj(&mut rng, 6);
        let kn = knots(6, traj.total_time);
        let t = traj.t_start + 0.37 * traj.total_time;
        let local = 0.37 * traj.total_time;

        let oracle = de_boor(&traj.pos_ctrl, &kn, local);
        let got = traj.eval(t, 0).pos;
        assert!((got - oracle).norm() <= 1e-6 * oracle.norm().max(1e-9), "{got:?} vs {oracle:?}");

        let h = 1e-5;
        let fd = (de_boor(&traj.pos_ctrl, &kn, local + h) - de_boor(&traj.pos_ctrl, &kn, local - h)) / (2.0 * h);
        let vel = traj.eval(t, 1).pos;
        assert!((vel - fd).norm() <= 1e-6 * fd.norm().max(1e-9), "{vel:?} vs {fd:?}");
    }
}

#[test]
fn yaw_matches_de_boor_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let traj = random_traj(&mut rng, 8);
        let kn = knots(8, traj.total_time);
        let as3: Vec<Vec3> = traj.yaw_ctrl.iter().map(|y| Vec3::new(*y, 0.0, 0.0)).collect();
        for f in [0.0, 0.11, 0.5, 0.93] {
            let local = f * traj.total_time;
            let oracle = de_boor(&as3, &kn, local).x;
            assert!((traj.eval(traj.t_start + local, 0).yaw - oracle).abs() < 1e-9);
        }
    }
}

#[test]
fn dense_sampling_oracle_for_feasibility() {
    let lim = DynamicLimits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let traj = random_traj(&mut rng, 7);
        let coarse = check_dynamic_feasibility(&traj, &lim, 1e-3);
        let dense = check_dynamic_feasibility(&traj, &lim, 1e-4);
        let (a, b) = (coarse.worst_ratio, dense.worst_ratio);
        for (x, y) in [(a.vel, b.vel), (a.acc, b.acc), (a.jerk, b.jerk), (a.yaw_rate, b.yaw_rate)] {
            assert!((x - y).abs() <= 0.02 * y, "{x} vs {y}");
        }
    }
}

#[test]
fn stop_trajectories_are_feasible_and_end_at_rest() {
    let lim = DynamicLimits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let mut s = StartState::at_rest(Vec3::from_fn(|_, _| rng.gen_range(-3.0..3.0)), rng.gen_range(-3.0..3.0));
        s.vel = Vec3::from_fn(|_, _| rng.gen_range(-1.2..1.2));
        let traj = stop_trajectory(&s, 1.0, &lim);
        assert!(check_dynamic_feasibility(&traj, &lim, 1e-3).ok);
        assert!(traj.eval(traj.t_end(), 1).pos.norm() < 1e-9);
        assert!((traj.position(1.0) - s.pos).norm() < 1e-12);
    }
}

proptest! {
    #[test]
    fn derivative_orders_are_consistent(seed in 0u64..10_000, frac in 0.05f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = random_traj(&mut rng, 8);
        // keep away from knots (multiples of 1/5 of the window)
        let seg = frac * 5.0;
        prop_assume!((seg - seg.round()).abs() > 0.02);
        let t = traj.t_start + frac * traj.total_time;
        let h = 1e-6 * traj.total_time;
        for order in 0..3 {
            let fd = (traj.eval(t + h, order).pos - traj.eval(t - h, order).pos) / (2.0 * h);
            let an = traj.eval(t, order + 1).pos;
            prop_assert!((fd - an).norm() <= 1e-5 * an.norm().max(1.0), "order {} {:?} {:?}", order, fd, an);
        }
    }

    #[test]
    fn clamped_endpoints_hold(seed in 0u64..10_000, n in 4usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = random_traj(&mut rng, n);
        prop_assert!((traj.position(traj.t_start) - traj.pos_ctrl[0]).norm() < 1e-12);
        prop_assert!((traj.position(traj.t_end()) - traj.pos_ctrl[n - 1]).norm() < 1e-9);
        prop_assert!((traj.eval(traj.t_end(), 0).yaw - traj.yaw_ctrl[n - 1]).abs() < 1e-9);
    }

    #[test]
    fn eval_is_bit_reproducible(seed in 0u64..10_000, frac in -0.2f64..1.2, order in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = random_traj(&mut rng, 8);
        let t = traj.t_start + frac * traj.total_time;
        let a = traj.eval(t, order);
        let b = traj.clone().eval(t, order);
        prop_assert_eq!(a.pos.map(f64::to_bits), b.pos.map(f64::to_bits));
        prop_assert_eq!(a.yaw.to_bits(), b.yaw.to_bits());
    }
}
