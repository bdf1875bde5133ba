//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.
//!
//! Everything runs in a single test so the timing measurements do not share
//! the CPU with other tests. Expect a run time of tens of minutes; the
//! student policy is trained from scratch first.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use primer_core::deconflict::{conflict, overlap_window, ExpertPlanner, PlanRequest, Planner};
use primer_core::harness::{build_circle_exchange, min_separation, run_with, PlannerKind, RunResult, Scenario};
use primer_core::optimizer::{clearance, fov_term, gradient, solve, time_bounds, Body, Objective, PlannerConfig};
use primer_core::policy::{
    il_loss, net_gradients, policy_forward, sample_rows, train_dagger, CircleEnv, EnvFactory, LossConfig, Observation,
    PolicyConfig, PolicyNet, Sample, StudentPlanner, Target, TrainConfig, TrainOutcome,
};
use primer_core::traj::{sample_times, stop_trajectory, StartState, TrajectorySpline, Vec3};
use primer_core::world::{box_signed_distance, CameraModel, ObstaclePrediction, Trefoil, TrefoilRanges};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

/// Written straight to stderr so the lines show up even when the test
/// harness captures output.
macro_rules! say {
    ($($arg:tt)*) => {
        let _ = writeln!(std::io::stderr(), $($arg)*);
    };
}

#[derive(Default)]
struct Report {
    results: Vec<(usize, bool)>,
}

impl Report {
    fn record(&mut self, n: usize, pass: bool, detail: String) {
        say!("criterion {n}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((n, pass));
    }
}

fn expert() -> ExpertPlanner {
    ExpertPlanner::new(true, 6)
}

fn run_scn(scn: &Scenario, student: Option<&Arc<PolicyNet>>) -> RunResult {
    run_with(scn, student.cloned()).expect("scenario runs")
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn train() -> (TrainOutcome, f64) {
    let cfg = TrainConfig::default();
    let clock = Instant::now();
    let out = train_dagger(&cfg, &ExpertPlanner::new(true, cfg.expert_guesses), &cfg.env).expect("training runs");
    let secs = clock.elapsed().as_secs_f64();
    for r in &out.rounds {
        say!(
            "  training round {}: beta {:.2}, {} new demos, dataset {}, loss {:.3} -> {:.3}",
            r.round,
            r.beta,
            r.new_demos,
            r.dataset_size,
            r.loss_start,
            r.loss_end
        );
    }
    (out, secs)
}

/// Expert solve time against student inference time on the same replans of
/// a single agent flying past one trefoil obstacle. The expert flies and
/// its replan observations are recorded; the student is then timed on the
/// same observations in a pass of its own, so neither planner runs with
/// caches flushed by the other. The interleaved figure is reported too.
fn speedup(report: &mut Report, student: &StudentPlanner) {
    let mut planner = expert();
    let (mut t_expert, mut t_interleaved) = (Vec::new(), Vec::new());
    let mut observations = Vec::new();
    let mut seed = 0;
    while t_expert.len() < 50 {
        let scn = build_circle_exchange(1, 3.0, 1, seed);
        seed += 1;
        let spec = &scn.agents[0];
        let mut traj = stop_trajectory(&StartState::at_rest(spec.start, spec.initial_yaw()), 0.0, &scn.lim);
        let lead = scn.protocol.planning_time + scn.protocol.delay_check_duration;
        for k in 0..80 {
            let t_start = k as f64 * lead + lead;
            let start = traj.state_at(t_start);
            if (start.pos - spec.goal).norm() < scn.protocol.goal_tolerance || t_expert.len() == 50 {
                break;
            }
            let req = PlanRequest { agent_id: 0, start, t_start, goal: spec.goal, obstacles: &scn.obstacles, peers: &[] };
            let out = planner.plan(&req);
            let obs = Observation { start, t_start, goal: spec.goal, obstacles: scn.obstacles.clone(), peers: vec![] };
            t_interleaved.push(student.forward(&obs).wall_time_ms);
            t_expert.push(out.wall_time_ms);
            observations.push(obs);
            if let Some(tr) = out.traj {
                traj = tr;
            }
        }
    }
    let t_student: Vec<f64> = observations.iter().map(|o| student.forward(o).wall_time_ms).collect();
    let t_select: Vec<f64> = observations.iter().map(|o| student.infer(o).1).collect();
    let (e, s, full, inter) = (mean(&t_expert), mean(&t_student), mean(&t_select), mean(&t_interleaved));
    report.record(
        1,
        e >= 100.0 * s,
        format!(
            "expert PARM*-6 {e:.2} ms vs student forward {s:.3} ms over {} replans: {:.0}x (interleaved with the expert {inter:.3} ms, {:.0}x; forward + scoring of all heads {full:.2} ms, {:.0}x)",
            t_expert.len(),
            e / s,
            e / inter,
            e / full
        ),
    );
}

fn optimality_gap(report: &mut Report, outcome: &TrainOutcome, train_secs: f64, student: &StudentPlanner) {
    let env = CircleEnv { min_agents: 1, max_agents: 1, min_obstacles: 2, max_obstacles: 2, ..CircleEnv::default() };
    let planner = expert();
    let (mut ce, mut cs) = (Vec::new(), Vec::new());
    let mut passed = 0;
    for k in 0..20u64 {
        let ep = env.episode(&mut ChaCha8Rng::seed_from_u64(1_000_000 + k));
        let obs = Observation { start: ep.starts[0], t_start: 0.0, goal: ep.goals[0], obstacles: ep.obstacles, peers: vec![] };
        let mut prob = student.problem(&obs);
        prob.n_guesses = planner.n_guesses;
        prob.seed = k;
        ce.push(solve(&prob, &planner.cfg).expect("expert solves").cost);
        let (pick, _) = student.infer(&obs);
        passed += pick.passed as usize;
        cs.push(pick.cost);
    }
    let (e, s) = (mean(&ce), mean(&cs));
    let gap = (s - e) / e.abs();
    let rounds = outcome.rounds.len();
    let demos = outcome.dataset.len();
    report.record(
        2,
        rounds >= 3 && demos >= 500 && gap <= 0.25,
        format!(
            "{rounds} rounds, {demos} demos, {train_secs:.0} s training; mean cost expert {e:.2} student {s:.2}, gap {:.1}% ({passed}/20 student picks pass the hard checks)",
            100.0 * gap
        ),
    );
}

fn safety(report: &mut Report, student: &Arc<PolicyNet>) {
    let mut details = Vec::new();
    let mut ok = true;
    for (kind, guesses) in [(PlannerKind::ParmStar, 1), (PlannerKind::ParmStar, 6), (PlannerKind::Primer, 6)] {
        let mut good = 0;
        let (mut coll, mut viol) = (0, 0);
        for seed in 0..10 {
            let scn = build_circle_exchange(1, 3.0, 2, seed).with_planner(kind, guesses);
            let m = run_scn(&scn, Some(student)).metrics;
            coll += m.aggregate.collision_frames;
            viol += m.aggregate.violation_frames;
            good += (m.aggregate.success && m.aggregate.collision_frames == 0 && m.aggregate.violation_frames == 0) as usize;
        }
        ok &= good == 10;
        details.push(format!("{kind}-{guesses} {good}/10 (collision frames {coll}, violation frames {viol})"));
    }
    report.record(3, ok, details.join("; "));
}

fn deconfliction(report: &mut Report) {
    let mut worst = f64::INFINITY;
    let (mut bad, mut frames, mut ok_runs) = (0, 0, 0);
    for seed in 0..100 {
        let scn = build_circle_exchange(3, 3.0, 2, seed);
        let mut net = scn.net;
        net.delay_max = 0.05;
        net.seed = seed;
        let scn = scn.with_network(net);
        assert!((scn.protocol.delay_check_duration - 0.11).abs() < 1e-12);
        let res = run_scn(&scn, None);
        let sep = min_separation(&res.log, 0.01).expect("three agents");
        worst = worst.min(sep);
        bad += (sep < scn.margin) as usize;
        frames += res.metrics.inter_agent_violation_frames;
        ok_runs += res.metrics.aggregate.success as usize;
    }
    let q = 1.0 / 64.0;
    let delays = [0.0, q, 2.0 * q, 3.0 * q];
    let cfg = primer_core::deconflict::ProtocolConfig {
        delay_check_duration: 2.0 * delays[3] + q,
        planning_time: 4.0 * q,
        ..Default::default()
    };
    let (orderings, unsafe_orderings) = common::explore(cfg, q, &delays);
    report.record(
        4,
        bad == 0 && frames == 0 && unsafe_orderings == 0,
        format!(
            "100 runs: {bad} with separation below margin, min separation {worst:.3} m, {ok_runs} fully successful; exhaustive 2-agent search: {unsafe_orderings}/{orderings} unsafe orderings"
        ),
    );
}

fn multi_guess(report: &mut Report) {
    let env = CircleEnv { min_agents: 1, max_agents: 1, min_obstacles: 2, max_obstacles: 2, ..CircleEnv::default() };
    let cfg = PlannerConfig::default();
    let mut dominated = 0;
    let (mut w1, mut w6) = (Vec::new(), Vec::new());
    for k in 0..20u64 {
        let ep = env.episode(&mut ChaCha8Rng::seed_from_u64(2_000_000 + k));
        let planner = expert();
        let req = PlanRequest {
            agent_id: 0,
            start: ep.starts[0],
            t_start: 0.0,
            goal: ep.goals[0],
            obstacles: &ep.obstacles,
            peers: &[],
        };
        let mut prob = planner.problem(&req);
        prob.seed = k;
        prob.n_guesses = 1;
        let one = solve(&prob, &cfg).expect("solves");
        prob.n_guesses = 6;
        let six = solve(&prob, &cfg).expect("solves");
        dominated += (six.cost <= one.cost) as usize;
        w1.push(one.wall_time_ms);
        w6.push(six.wall_time_ms);
    }
    report.record(
        5,
        dominated == 20 && mean(&w6) > mean(&w1),
        format!("6-guess cost <= 1-guess cost in {dominated}/20; wall time {:.1} ms vs {:.1} ms", mean(&w6), mean(&w1)),
    );
}

fn fov_efficacy(report: &mut Report) {
    let rate = |alpha: f64| {
        let rates: Vec<f64> = (0..10)
            .map(|seed| {
                let mut scn = build_circle_exchange(1, 3.0, 2, seed);
                scn.weights.alpha_fov = alpha;
                run_scn(&scn, None).metrics.aggregate.fov_rate
            })
            .collect();
        mean(&rates)
    };
    let (on, off) = (rate(10.0), rate(0.0));
    report.record(6, on - off >= 10.0, format!("mean fov_rate {on:.1}% with alpha_fov 10 vs {off:.1}% with 0"));
}

// ---- criterion 7 oracles ----

fn de_boor(ctrl: &[Vec3], total: f64, u: f64) -> Vec3 {
    let n_seg = ctrl.len() - 3;
    let mut kn = vec![0.0; 4];
    kn.extend((1..n_seg).map(|i| total * i as f64 / n_seg as f64));
    kn.extend([total; 4]);
    let mut k = 3;
    while k < ctrl.len() - 1 && u >= kn[k + 1] {
        k += 1;
    }
    let mut d: Vec<Vec3> = (0..=3).map(|j| ctrl[j + k - 3]).collect();
    for r in 1..=3 {
        for j in (r..=3).rev() {
            let i = j + k - 3;
            let den = kn[i + 4 - r] - kn[i];
            let a = if den == 0.0 { 0.0 } else { (u - kn[i]) / den };
            d[j] = d[j - 1] * (1.0 - a) + d[j] * a;
        }
    }
    d[3]
}

fn random_traj(rng: &mut ChaCha8Rng) -> TrajectorySpline {
    let start = Vec3::new(-3.0, 0.0, 1.0);
    let pos = (0..8).map(|i| start + Vec3::new(0.8 * i as f64, rng.gen_range(-1.0..1.0), rng.gen_range(-0.3..0.3))).collect();
    let yaw = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    TrajectorySpline::new(rng.gen_range(0.0..2.0), rng.gen_range(2.0..4.0), pos, yaw).unwrap()
}

fn random_obstacle(rng: &mut ChaCha8Rng, id: u32) -> ObstaclePrediction {
    let motion = Trefoil {
        center: Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0),
        scale: Vec3::from_fn(|_, _| rng.gen_range(0.5..1.5)),
        angular_rate: rng.gen_range(0.3..1.0),
        phase: rng.gen_range(0.0..6.0),
    };
    ObstaclePrediction::cube(id, 0.5, motion)
}

fn numerics(report: &mut Report) {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(70);

    let mut spline_err: f64 = 0.0;
    for _ in 0..200 {
        let tr = random_traj(&mut rng);
        let f = rng.gen_range(0.0..1.0);
        let oracle = de_boor(&tr.pos_ctrl, tr.total_time, f * tr.total_time);
        let got = tr.eval(tr.t_start + f * tr.total_time, 0).pos;
        spline_err = spline_err.max((got - oracle).norm() / oracle.norm().max(1e-9));
    }

    let cfg = PlannerConfig::default();
    let mut opt_err: f64 = 0.0;
    for trial in 0..10 {
        let mut start = StartState::at_rest(Vec3::new(-3.0, rng.gen_range(-0.5..0.5), 1.0), rng.gen_range(-0.5..0.5));
        start.vel = Vec3::new(rng.gen_range(0.0..1.0), rng.gen_range(-0.3..0.3), 0.0);
        let mut prob = primer_core::optimizer::PlanProblem::new(start, rng.gen_range(0.0..3.0), Vec3::new(3.0, 0.0, 1.0));
        prob.obstacles = (0..2).map(|i| random_obstacle(&mut rng, i)).collect();
        prob.peer_trajs.push(random_traj(&mut rng));
        prob.free_time = trial % 2 == 0;
        let (_, nominal, _) = time_bounds(&prob, &cfg);
        let obj = Objective::new(&prob, &cfg, nominal);
        let layout = obj.layout();
        let x: Vec<f64> = (0..layout.len())
            .map(|i| {
                if Some(i) == layout.time_index() {
                    rng.gen_range(1.0..4.0)
                } else if i < layout.yaw_offset() {
                    [-1.5, 0.0, 1.0][i % 3] + rng.gen_range(-1.5..1.5)
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        let g = gradient(&x, &prob, &cfg, nominal, 10.0);
        for i in 0..x.len() {
            // fourth-order stencil: the penalized objective is large at
            // random points, so small steps drown in cancellation
            let h = 1e-3 * x[i].abs().max(1.0);
            let at = |d: f64| {
                let mut y = x.clone();
                y[i] += d;
                obj.value(&y, 10.0)
            };
            let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            opt_err = opt_err.max((g[i] - fd).abs() / fd.abs().max(1e-3));
        }
    }

    let toy = PolicyConfig { hidden: 2, width: 4, depth: 2, n_heads: 2, ..PolicyConfig::default() };
    let loss = LossConfig::default();
    let rows = sample_rows(toy.n_ctrl, loss.samples);
    let mut net = PolicyNet::random(&toy, &mut rng);
    for v in net.layers.last_mut().unwrap().w.iter_mut() {
        *v *= 20.0;
    }
    let samples: Vec<Sample> = (0..3).map(|k| toy_sample(&mut rng, &toy, &loss, k)).collect();
    let batch: Vec<&Sample> = samples.iter().collect();
    let (_, grad) = net_gradients(&net, &batch, &rows, &loss);
    let f = |n: &PolicyNet| net_gradients(n, &batch, &rows, &loss).0.objective;
    let mut net_err: f64 = 0.0;
    let n_arrays = net.params().len();
    for a in 0..n_arrays {
        for k in 0..net.params()[a].len() {
            let x = net.params()[a][k];
            let h = 1e-6 * x.abs().max(1.0);
            let (mut p, mut m) = (net.clone(), net.clone());
            p.params_mut()[a][k] = x + h;
            m.params_mut()[a][k] = x - h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let an = grad.params()[a][k];
            net_err = net_err.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
        }
    }

    let cam = CameraModel::default();
    let mut fov_err: f64 = 0.0;
    let mut tested = 0;
    while tested < 10 {
        let tr = random_traj(&mut rng);
        let obs: Vec<_> = (0..2).map(|i| random_obstacle(&mut rng, i)).collect();
        let n = 20_000;
        let h = tr.total_time / n as f64;
        let riemann: f64 = -10.0
            * (0..n)
                .map(|i| {
                    let t = tr.t_start + (i as f64 + 0.5) * h;
                    let x = tr.eval(t, 0);
                    obs.iter().map(|o| cam.in_fov(&x.pos, x.yaw, &o.position(t)).powi(3)).sum::<f64>() * h
                })
                .sum::<f64>();
        if riemann.abs() < 1e-2 {
            continue;
        }
        tested += 1;
        let quad = fov_term(&tr, &obs, &cam, 10.0, cfg.quadrature());
        fov_err = fov_err.max((quad - riemann).abs() / riemann.abs());
    }

    let margin = 0.3;
    let (mut disagree, mut clear_gap): (usize, f64) = (0, 0.0);
    for _ in 0..100 {
        let a = random_traj(&mut rng);
        let b = random_traj(&mut rng);
        let (t0, t1) = overlap_window(&a, &b);
        let dense = sample_times(t0, t1, 0.001).map(|t| (a.position(t) - b.position(t)).norm()).fold(f64::INFINITY, f64::min);
        if conflict(&a, &b, margin, 0.01) != (dense < margin) && (dense - margin).abs() > 1e-3 {
            disagree += 1;
        }
        let o = random_obstacle(&mut rng, 0);
        let window = (a.t_start, a.t_end());
        let coarse = clearance(&a, Body::Obstacle(&o), margin, window, 0.01);
        let oracle = sample_times(window.0, window.1, 0.001)
            .map(|t| box_signed_distance(&(a.position(t) - o.position(t)), &o.half_extents).0)
            .fold(f64::INFINITY, f64::min)
            - margin;
        clear_gap = clear_gap.max(coarse - oracle);
        if coarse < oracle - 1e-12 {
            disagree += 1;
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    let pass = spline_err < 1e-6
        && opt_err < 1e-4
        && net_err < 1e-4
        && fov_err < 1e-3
        && disagree == 0
        && clear_gap < 0.01
        && secs < 60.0;
    report.record(
        7,
        pass,
        format!(
            "spline {spline_err:.1e}, optimizer grad {opt_err:.1e}, network grad {net_err:.1e}, fov quadrature {fov_err:.1e}, conflict/clearance disagreements {disagree} (clearance gap {clear_gap:.1e} m), {secs:.1} s"
        ),
    );
}

fn random_obs(rng: &mut ChaCha8Rng, n_obstacles: usize, n_peers: usize) -> Observation {
    let ranges = TrefoilRanges::inside_circle(3.0, 1.0);
    let obstacles = (0..n_obstacles).map(|i| ranges.sample(i as u32, rng)).collect();
    let peers = (0..n_peers)
        .map(|_| {
            let a = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), 1.0);
            let b = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), 1.0);
            let pos = (0..6).map(|k| a + (b - a) * (k as f64 / 5.0)).collect();
            TrajectorySpline::new(0.0, rng.gen_range(2.0..5.0), pos, vec![0.0; 6]).unwrap()
        })
        .collect();
    let mut start =
        StartState::at_rest(Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), 1.0), rng.gen_range(-PI..PI));
    start.vel = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
    Observation { start, t_start: rng.gen_range(0.0..2.0), goal: Vec3::new(rng.gen_range(-3.0..3.0), 0.0, 1.0), obstacles, peers }
}

/// A straight, time-scaled target from the start to the goal.
fn straight_target(obs: &Observation) -> TrajectorySpline {
    let s = obs.start.pos;
    let d = obs.goal - s;
    let pos = (0..8).map(|k| s + d * (k as f64 / 7.0)).collect();
    let yaw = (0..8).map(|k| obs.start.yaw + 0.1 * k as f64).collect();
    TrajectorySpline::new(obs.t_start, 1.0 + d.norm(), pos, yaw).unwrap()
}

fn toy_sample(rng: &mut ChaCha8Rng, cfg: &PolicyConfig, loss: &LossConfig, k: usize) -> Sample {
    let obs = random_obs(rng, k, k % 2);
    Sample {
        encoded: primer_core::policy::encode(&obs, cfg.plan_radius, cfg.agent_half_extent),
        start: obs.start,
        t_start: obs.t_start,
        target: Target::new(&straight_target(&obs), loss.samples),
    }
}

fn entity_contract(report: &mut Report, net: &PolicyNet, student: &StudentPlanner) {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let mut shapes_ok = true;
    for n in 0..=10 {
        let obs = random_obs(&mut rng, n - n / 2, n / 2);
        for out in [policy_forward(net, &obs), student.forward(&obs)] {
            shapes_ok &= out.candidates.len() == net.cfg.n_heads
                && out.candidates.iter().all(|c| c.pos_ctrl.len() == net.cfg.n_ctrl && c.validate().is_ok());
        }
    }
    let obs = random_obs(&mut rng, 5, 3);
    let reference = policy_forward(net, &obs).candidates;
    let compiled = student.forward(&obs).candidates;
    let mut invariant = 0;
    for _ in 0..100 {
        let mut p = obs.clone();
        p.obstacles.shuffle(&mut rng);
        p.peers.shuffle(&mut rng);
        invariant += (policy_forward(net, &p).candidates == reference && student.forward(&p).candidates == compiled) as usize;
    }
    report.record(
        8,
        shapes_ok && invariant == 100,
        format!("fixed output shape for 0..=10 entities: {shapes_ok}; identical output under {invariant}/100 permutations"),
    );
}

fn loss_semantics(report: &mut Report) {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let expert = straight_target(&random_obs(&mut rng, 0, 0));
    let same = il_loss(&expert, &expert, &cfg).total;
    let mut shifted = expert.clone();
    shifted.pos_ctrl.iter_mut().for_each(|c| *c += Vec3::new(0.6, 0.0, -0.8));
    let offset = il_loss(&shifted, &expert, &cfg).total;
    let mut turned = expert.clone();
    turned.yaw_ctrl.iter_mut().for_each(|y| *y += 0.1);
    let yaw = il_loss(&turned, &expert, &cfg).total;
    let arithmetic = same == 0.0 && (offset - 1.0).abs() < 1e-12 && (yaw - 0.7).abs() < 1e-12;

    let toy = PolicyConfig { hidden: 2, width: 4, depth: 2, n_heads: 1, ..PolicyConfig::default() };
    let dec = toy.decoder();
    let net = PolicyNet::random(&toy, &mut rng);
    let cols = 3 * dec.n_pos_free()..3 * dec.n_pos_free() + dec.n_yaw_free();
    let grad_at = |alpha: f64| {
        let loss = LossConfig { alpha_yaw: alpha, ..LossConfig::default() };
        let rows = sample_rows(toy.n_ctrl, loss.samples);
        let mut r = ChaCha8Rng::seed_from_u64(91);
        let samples: Vec<Sample> = (0..3).map(|k| toy_sample(&mut r, &toy, &loss, k)).collect();
        let batch: Vec<&Sample> = samples.iter().collect();
        let (_, g) = net_gradients(&net, &batch, &rows, &loss);
        g.layers.last().unwrap().w.columns_range(cols.clone()).into_owned()
    };
    let (g35, g70, g140) = (grad_at(35.0), grad_at(70.0), grad_at(140.0));
    let lin = ((&g140 - &g70 * 2.0).norm() / g140.norm()).max((&g35 * 2.0 - &g70).norm() / g70.norm());
    report.record(
        9,
        arithmetic && g70.norm() > 0.0 && lin <= 1e-12,
        format!("il_loss identical {same}, 1 m offset {offset}, 0.1 rad yaw {yaw}; yaw-head gradient linearity error {lin:.1e}"),
    );
}

#[test]
fn acceptance() {
    let mut report = Report::default();

    // cheap criteria first so a failure shows up early
    numerics(&mut report);
    loss_semantics(&mut report);
    multi_guess(&mut report);
    fov_efficacy(&mut report);

    let (outcome, train_secs) = train();
    let net = Arc::new(outcome.net.clone());
    let student = StudentPlanner::new(net.clone());
    entity_contract(&mut report, &net, &student);
    speedup(&mut report, &student);
    optimality_gap(&mut report, &outcome, train_secs, &student);
    safety(&mut report, &net);
    deconfliction(&mut report);

    report.results.sort();
    let failed: Vec<usize> = report.results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    say!("acceptance: {}/{} criteria pass", report.results.len() - failed.len(), report.results.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
