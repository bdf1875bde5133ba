//! End-to-end run: agents, network and obstacles on one event clock.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::{
    aggregate, fov_metrics, frame_times, obstacle_clearance, sighting, translational_violation, yaw_violation, AgentMetrics,
    AgentState, FlownPath, RunMetrics, FRAME_DT,
};
use super::scenario::{PlannerKind, Scenario};
use crate::deconflict::{AgentProcess, CycleRecord, ExpertPlanner, MessageKind, Outcome, PlanMessage, Planner, Step};
use crate::error::{Error, Result};
use crate::netsim::{Network, TraceRecord};
use crate::policy::{load_checkpoint, PolicyNet, StudentPlanner};
use crate::traj::{StartState, TrajectorySpline, Vec3};

/// One message leaving an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub sent_at: f64,
    pub sender: usize,
    pub kind: MessageKind,
    pub recipients: Vec<usize>,
}

/// One 10 Hz metric-clock sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub agents: Vec<AgentState>,
    pub obstacles: Vec<Vec3>,
}

/// Everything recorded during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub scenario: String,
    pub seed: u64,
    pub planners: Vec<String>,
    pub goals: Vec<Vec3>,
    pub paths: Vec<FlownPath>,
    pub cycles: Vec<CycleRecord>,
    pub messages: Vec<MessageRecord>,
    pub network: Vec<TraceRecord>,
    pub frames: Vec<Frame>,
    pub end_time: f64,
}

impl RunLog {
    /// Line-per-record form: a header, then frames, cycles and messages.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        #[serde(tag = "record", rename_all = "snake_case")]
        enum Line<'a> {
            Header { scenario: &'a str, seed: u64, planners: &'a [String], goals: &'a [Vec3], end_time: f64 },
            Path { agent: usize, commits: &'a [TrajectorySpline] },
            Frame(&'a Frame),
            Cycle(&'a CycleRecord),
            Message(&'a MessageRecord),
            Network(&'a TraceRecord),
        }
        let mut put = |l: Line<'_>| -> Result<()> {
            serde_json::to_writer(&mut w, &l)?;
            writeln!(w)?;
            Ok(())
        };
        put(Line::Header {
            scenario: &self.scenario,
            seed: self.seed,
            planners: &self.planners,
            goals: &self.goals,
            end_time: self.end_time,
        })?;
        for (agent, p) in self.paths.iter().enumerate() {
            put(Line::Path { agent, commits: &p.commits })?;
        }
        self.frames.iter().try_for_each(|f| put(Line::Frame(f)))?;
        self.cycles.iter().try_for_each(|c| put(Line::Cycle(c)))?;
        self.messages.iter().try_for_each(|m| put(Line::Message(m)))?;
        self.network.iter().try_for_each(|n| put(Line::Network(n)))
    }

    /// Writes `trajectories.csv` (one row per frame and agent),
    /// `obstacles.csv` and `cycles.csv` into `dir`.
    pub fn write_plot_data(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("trajectories.csv"))?;
        w.write_record(["t", "agent", "x", "y", "z", "vx", "vy", "vz", "speed", "accel", "jerk", "yaw", "yaw_rate"])?;
        for f in &self.frames {
            for (i, s) in f.agents.iter().enumerate() {
                let row = [f.t, i as f64, s.pos.x, s.pos.y, s.pos.z, s.vel.x, s.vel.y, s.vel.z].into_iter().chain([
                    s.vel.norm(),
                    s.acc.norm(),
                    s.jerk.norm(),
                    s.yaw,
                    s.yaw_rate,
                ]);
                w.write_record(row.map(|v| v.to_string()))?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("obstacles.csv"))?;
        w.write_record(["t", "obstacle", "x", "y", "z"])?;
        for f in &self.frames {
            for (i, p) in f.obstacles.iter().enumerate() {
                w.write_record([f.t, i as f64, p.x, p.y, p.z].map(|v| v.to_string()))?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("cycles.csv"))?;
        w.write_record(["agent", "started_at", "finished_at", "outcome", "wall_time_ms", "cost", "conflict_with"])?;
        for c in &self.cycles {
            w.write_record([
                c.agent.to_string(),
                c.started_at.to_string(),
                c.finished_at.to_string(),
                format!("{:?}", c.outcome),
                c.wall_time_ms.to_string(),
                c.cost.map(|v| v.to_string()).unwrap_or_default(),
                c.conflict_with.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Self> {
        let mut log = RunLog {
            scenario: String::new(),
            seed: 0,
            planners: Vec::new(),
            goals: Vec::new(),
            paths: Vec::new(),
            cycles: Vec::new(),
            messages: Vec::new(),
            network: Vec::new(),
            frames: Vec::new(),
            end_time: 0.0,
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let v: serde_json::Value = serde_json::from_str(line)?;
            let kind = v.get("record").and_then(|k| k.as_str()).unwrap_or_default().to_string();
            match kind.as_str() {
                "header" => {
                    log.scenario = serde_json::from_value(v["scenario"].clone())?;
                    log.seed = serde_json::from_value(v["seed"].clone())?;
                    log.planners = serde_json::from_value(v["planners"].clone())?;
                    log.goals = serde_json::from_value(v["goals"].clone())?;
                    log.end_time = serde_json::from_value(v["end_time"].clone())?;
                }
                "path" => log.paths.push(FlownPath::new(serde_json::from_value(v["commits"].clone())?)),
                "frame" => log.frames.push(serde_json::from_value(v)?),
                "cycle" => log.cycles.push(serde_json::from_value(v)?),
                "message" => log.messages.push(serde_json::from_value(v)?),
                "network" => log.network.push(serde_json::from_value(v)?),
                other => return Err(Error::InvalidScenario(format!("unknown log record {other:?}"))),
            }
        }
        Ok(log)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: RunMetrics,
    pub log: RunLog,
}

impl RunResult {
    /// Writes `metrics.csv` (one row per agent), `metrics.json` and the
    /// line-record log `run.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
        for a in &self.metrics.agents {
            w.serialize(a)?;
        }
        w.flush()?;
        std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&self.metrics)?)?;
        self.log.write_jsonl(std::io::BufWriter::new(std::fs::File::create(dir.join("run.jsonl"))?))
    }
}

fn planner_for(scn: &Scenario, idx: usize, student: Option<&Arc<PolicyNet>>) -> Result<Box<dyn Planner>> {
    let spec = &scn.agents[idx];
    Ok(match spec.planner {
        PlannerKind::Parm | PlannerKind::ParmStar => {
            let mut p = ExpertPlanner::new(spec.planner == PlannerKind::ParmStar, spec.n_guesses);
            p.cfg = scn.planner.clone();
            p.lim = scn.lim;
            p.cam = scn.cam;
            p.weights = scn.weights;
            p.safety_margin = scn.margin;
            p.seed = scn.seed;
            Box::new(p)
        }
        PlannerKind::Primer => {
            let net = student.ok_or_else(|| Error::InvalidScenario("PRIMER agent without a checkpoint".into()))?;
            let mut p = StudentPlanner::new(net.clone());
            p.cfg = scn.planner.clone();
            p.lim = scn.lim;
            p.cam = scn.cam;
            p.weights = scn.weights;
            p.safety_margin = scn.margin;
            Box::new(p)
        }
    })
}

struct Sim {
    agents: Vec<AgentProcess>,
    net: Network<PlanMessage>,
    messages: Vec<MessageRecord>,
}

impl Sim {
    fn apply(&mut self, id: usize, step: Step, now: f64) {
        for msg in step.broadcast {
            let kind = msg.kind;
            let sched = self.net.broadcast(id, &msg, now);
            self.messages.push(MessageRecord { sent_at: now, sender: id, kind, recipients: sched.iter().map(|s| s.1).collect() });
        }
    }

    fn sense(&mut self, scn: &Scenario, now: f64) {
        for id in 0..self.agents.len() {
            let pos = self.agents[id].committed().position(now);
            let seen: Vec<_> =
                scn.obstacles.iter().filter(|o| (o.position(now) - pos).norm() <= scn.sensing_range).cloned().collect();
            if let Some(msg) = self.agents[id].sense(&seen, now) {
                self.apply(id, Step { broadcast: vec![msg], ..Step::default() }, now);
            }
        }
    }

    fn all_arrived(&self, now: f64, tol: f64) -> bool {
        self.agents.iter().all(|a| a.goal_reached() && (a.committed().position(now) - a.goal).norm() <= tol)
    }
}

/// Run `scn` with the student weights named in the scenario, if any.
pub fn run(scn: &Scenario) -> Result<RunResult> {
    let student = match &scn.checkpoint {
        Some(p) if scn.agents.iter().any(|a| a.planner == PlannerKind::Primer) => Some(Arc::new(load_checkpoint(p)?)),
        _ => None,
    };
    run_with(scn, student)
}

/// Run `scn`; `student` supplies the weights for PRIMER agents.
pub fn run_with(scn: &Scenario, student: Option<Arc<PolicyNet>>) -> Result<RunResult> {
    scn.validate()?;
    let mut protocol = scn.protocol;
    protocol.margin = scn.margin;
    let mut agents = Vec::with_capacity(scn.agents.len());
    for (i, spec) in scn.agents.iter().enumerate() {
        let start = StartState::at_rest(spec.start, spec.initial_yaw());
        let planner = planner_for(scn, i, student.as_ref())?;
        agents.push(AgentProcess::new(i, start, spec.goal, 0.0, scn.lim, protocol, planner, scn.seed));
    }
    let mut net = Network::new(scn.net, agents.len())?;
    net.enable_trace();
    let mut sim = Sim { agents, net, messages: Vec::new() };

    let mut tick = 0usize;
    sim.sense(scn, 0.0);
    for id in 0..sim.agents.len() {
        let step = sim.agents[id].on_timer(0.0);
        sim.apply(id, step, 0.0);
    }
    let (now, timed_out) = loop {
        let t_tick = tick as f64 * FRAME_DT;
        let t_deliver = sim.net.next_delivery_time().unwrap_or(f64::INFINITY);
        let t_wake = sim.agents.iter().filter_map(|a| a.next_wake()).fold(f64::INFINITY, f64::min);
        let t = t_tick.min(t_deliver).min(t_wake);
        if t > scn.sim_duration {
            break (scn.sim_duration, true);
        }
        if t_deliver <= t {
            for d in sim.net.advance(t) {
                sim.agents[d.recipient].inbox().push(d.message);
                let step = sim.agents[d.recipient].on_delivery(t);
                sim.apply(d.recipient, step, t);
            }
        } else if t_wake <= t {
            for id in 0..sim.agents.len() {
                if sim.agents[id].next_wake() == Some(t) {
                    let step = sim.agents[id].on_timer(t);
                    sim.apply(id, step, t);
                }
            }
        } else {
            sim.sense(scn, t);
            tick += 1;
            if sim.all_arrived(t, protocol.goal_tolerance) {
                break (t, false);
            }
        }
    };

    let paths: Vec<FlownPath> = sim.agents.iter().map(|a| FlownPath::new(a.commits().to_vec())).collect();
    let mut cycles: Vec<CycleRecord> = sim.agents.iter().flat_map(|a| a.history().iter().cloned()).collect();
    cycles.sort_by(|a, b| a.finished_at.total_cmp(&b.finished_at).then(a.agent.cmp(&b.agent)));
    let frames: Vec<Frame> = frame_times(now)
        .into_iter()
        .map(|t| Frame {
            t,
            agents: paths.iter().map(|p| p.state(t)).collect(),
            obstacles: scn.obstacles.iter().map(|o| o.position(t)).collect(),
        })
        .collect();
    let log = RunLog {
        scenario: scn.name.clone(),
        seed: scn.seed,
        planners: sim.agents.iter().map(|a| a.planner_name()).collect(),
        goals: scn.agents.iter().map(|a| a.goal).collect(),
        paths,
        cycles,
        messages: sim.messages,
        network: sim.net.trace().map(|t| t.to_vec()).unwrap_or_default(),
        frames,
        end_time: now,
    };
    let metrics = compute_metrics(scn, &log, timed_out);
    Ok(RunResult { metrics, log })
}

/// All metrics from a run log.
pub fn compute_metrics(scn: &Scenario, log: &RunLog, timed_out: bool) -> RunMetrics {
    let tol = scn.protocol.goal_tolerance;
    let n = log.paths.len();
    let mut min_pair: Option<f64> = None;
    let mut pair_violations = 0;
    let mut pair_bad = vec![0usize; n];
    for f in &log.frames {
        let mut bad = false;
        for i in 0..n {
            for j in i + 1..n {
                let d = (f.agents[i].pos - f.agents[j].pos).norm();
                min_pair = Some(min_pair.map_or(d, |m| m.min(d)));
                if d < scn.margin {
                    bad = true;
                    pair_bad[i] += 1;
                    pair_bad[j] += 1;
                }
            }
        }
        pair_violations += bad as usize;
    }
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let goal = log.goals[i];
        // arrival: the first frame after which the agent stays at the goal
        let away = log.frames.iter().rposition(|f| (f.agents[i].pos - goal).norm() > tol);
        let arrival = match away {
            None => log.frames.first().map(|f| f.t),
            Some(k) => log.frames.get(k + 1).map(|f| f.t),
        };
        let flight_end = arrival.unwrap_or(log.end_time);
        let mut sightings = Vec::new();
        let (mut trans, mut yaw, mut collisions) = (0usize, 0usize, 0usize);
        let mut violation_frames = 0;
        let mut min_clear = f64::INFINITY;
        for f in &log.frames {
            let s = &f.agents[i];
            if f.t <= flight_end + 1e-9 {
                sightings.push(f.obstacles.iter().map(|o| sighting(&scn.cam, s, o)).collect::<Vec<_>>());
            }
            let tv = translational_violation(s, &scn.lim);
            let yv = yaw_violation(s, &scn.lim);
            trans += tv as usize;
            yaw += yv as usize;
            violation_frames += (tv || yv) as usize;
            let clear = scn.obstacles.iter().map(|o| obstacle_clearance(&s.pos, o, f.t)).fold(f64::INFINITY, f64::min);
            min_clear = min_clear.min(clear);
            collisions += (clear < 0.0) as usize;
        }
        collisions += pair_bad[i];
        let fov = fov_metrics(&sightings);
        let mine: Vec<&CycleRecord> = log.cycles.iter().filter(|c| c.agent == i).collect();
        let planned: Vec<f64> = mine.iter().filter(|c| c.outcome != Outcome::Skipped).map(|c| c.wall_time_ms).collect();
        let costs: Vec<f64> = mine.iter().filter(|c| c.outcome == Outcome::CommittedNew).filter_map(|c| c.cost).collect();
        let (accel_integral, jerk_integral) = log.paths[i].smoothness(0.0, log.end_time);
        let n_frames = log.frames.len().max(1) as f64;
        agents.push(AgentMetrics {
            agent: i,
            planner: log.planners[i].clone(),
            avg_computation_ms: if planned.is_empty() { 0.0 } else { planned.iter().sum::<f64>() / planned.len() as f64 },
            replans: planned.len(),
            commits: costs.len(),
            reached_goal: arrival.is_some(),
            success: arrival.is_some() && collisions == 0,
            travel_time: arrival,
            fov_rate: fov.rate,
            fov_defined: fov.defined,
            max_fov_frames: fov.max_run,
            trans_violation_rate: 100.0 * trans as f64 / n_frames,
            yaw_violation_rate: 100.0 * yaw as f64 / n_frames,
            avg_cost: (!costs.is_empty()).then(|| costs.iter().sum::<f64>() / costs.len() as f64),
            collision_frames: collisions,
            violation_frames,
            accel_integral,
            jerk_integral,
            min_obstacle_clearance: min_clear,
        });
    }
    let mut summary = aggregate(&agents);
    summary.success &= !timed_out;
    RunMetrics {
        aggregate: summary,
        agents,
        min_inter_agent_distance: min_pair,
        inter_agent_violation_frames: pair_violations,
        end_time: log.end_time,
        timed_out,
    }
}

/// Smallest distance between any two flown paths over `[0, end]`, sampled
/// every `dt`.
pub fn min_separation(log: &RunLog, dt: f64) -> Option<f64> {
    let n = log.paths.len();
    let mut best: Option<f64> = None;
    for t in crate::traj::sample_times(0.0, log.end_time, dt) {
        let pos: Vec<Vec3> = log.paths.iter().map(|p| p.active(t).position(t)).collect();
        for i in 0..n {
            for j in i + 1..n {
                let d = (pos[i] - pos[j]).norm();
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
    }
    best
}
