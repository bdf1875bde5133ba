//! Two-agent protocol harness shared by the protocol tests and the
//! acceptance run.

#![allow(dead_code)]

use primer_core::deconflict::{conflict, AgentProcess, PlanMessage, PlanOutput, PlanRequest, Planner, ProtocolConfig};
use primer_core::traj::{DynamicLimits, StartState, TrajectorySpline, Vec3};

/// Straight flight to a fixed point that ignores every constraint.
pub struct Scripted {
    pub target: Vec3,
    pub duration: f64,
}

impl Planner for Scripted {
    fn plan(&mut self, req: &PlanRequest<'_>) -> PlanOutput {
        let p0 = req.start.pos;
        let g = self.target;
        let pos = vec![p0, p0, p0, p0 + (g - p0) / 3.0, p0 + (g - p0) * (2.0 / 3.0), g, g, g];
        let traj = TrajectorySpline::new(req.t_start, self.duration, pos, vec![req.start.yaw; 8]).unwrap();
        PlanOutput { traj: Some(traj), cost: Some(0.0), breakdown: None, wall_time_ms: 0.0 }
    }

    fn name(&self) -> String {
        "scripted".into()
    }
}

pub fn agent(id: usize, start: Vec3, goal: Vec3, cfg: ProtocolConfig, planner: Box<dyn Planner>) -> AgentProcess {
    AgentProcess::new(id, StartState::at_rest(start, 0.0), goal, 0.0, DynamicLimits::default(), cfg, planner, 1)
}

/// Replays one execution, taking scheduling decisions from a recorded
/// prefix and extending it with first choices; `advance` then enumerates the
/// next unexplored branch depth-first.
#[derive(Default)]
pub struct Explorer {
    trail: Vec<(usize, usize)>,
    pos: usize,
}

impl Explorer {
    pub fn choose(&mut self, n: usize) -> usize {
        if self.pos == self.trail.len() {
            self.trail.push((0, n));
        }
        let (c, m) = self.trail[self.pos];
        assert_eq!(m, n, "replay diverged");
        self.pos += 1;
        c
    }

    pub fn advance(&mut self) -> bool {
        self.pos = 0;
        while let Some((c, n)) = self.trail.pop() {
            if c + 1 < n {
                self.trail.push((c + 1, n));
                return true;
            }
        }
        false
    }
}

enum Ev {
    Timer(usize),
    Deliver(usize, PlanMessage),
}

/// One cycle per agent; message delays and the order of simultaneous events
/// come from the explorer. True when both agents committed mutually
/// conflicting trajectories.
pub fn run_once(ex: &mut Explorer, offset: f64, cfg: ProtocolConfig, delays: &[f64]) -> bool {
    let a = Scripted { target: Vec3::new(2.0, 0.0, 1.0), duration: 5.0 };
    let b = Scripted { target: Vec3::new(0.0, 2.0, 1.0), duration: 5.0 };
    let mut agents = [
        agent(0, Vec3::new(-2.0, 0.0, 1.0), Vec3::new(2.0, 0.0, 1.0), cfg, Box::new(a)),
        agent(1, Vec3::new(0.0, -2.0, 1.0), Vec3::new(0.0, 2.0, 1.0), cfg, Box::new(b)),
    ];
    let mut events: Vec<(f64, Ev)> = vec![(0.0, Ev::Timer(0)), (offset, Ev::Timer(1))];
    while !events.is_empty() {
        let t = events.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
        let due: Vec<usize> = (0..events.len()).filter(|i| events[*i].0 == t).collect();
        let (_, ev) = events.remove(due[ex.choose(due.len())]);
        let (who, step) = match ev {
            Ev::Timer(i) => (i, agents[i].on_timer(t)),
            Ev::Deliver(i, msg) => {
                agents[i].inbox().push(msg);
                (i, agents[i].on_delivery(t))
            }
        };
        for msg in step.broadcast {
            let d = delays[ex.choose(delays.len())];
            events.push((t + d, Ev::Deliver(1 - who, msg)));
        }
        if step.outcome.is_none() {
            if let Some(w) = step.wake_at {
                events.push((w, Ev::Timer(who)));
            }
        }
    }
    let committed_new = |i: usize| agents[i].commits().len() > 1;
    let both = committed_new(0) && committed_new(1);
    both && conflict(agents[0].committed(), agents[1].committed(), cfg.margin, cfg.check_dt)
}

/// Explores every delay assignment and every ordering of simultaneous events
/// for start offsets on a dyadic grid. Returns (executions, unsafe ones).
pub fn explore(cfg: ProtocolConfig, q: f64, delays: &[f64]) -> (usize, usize) {
    let mut runs = 0;
    let mut unsafe_runs = 0;
    for k in 0..=16 {
        let offset = k as f64 * q;
        let mut ex = Explorer::default();
        loop {
            runs += 1;
            if run_once(&mut ex, offset, cfg, delays) {
                unsafe_runs += 1;
            }
            if !ex.advance() {
                break;
            }
        }
    }
    (runs, unsafe_runs)
}
