//! Per-agent asynchronous replanning: optimize, check, delay-check, then
//! commit or revert, plus sharing of obstacle predictions.
//!
//! An [`AgentProcess`] is a step-driven state machine. The owner (a
//! simulator or a test script) calls [`AgentProcess::on_timer`] at the times
//! the agent asks for and [`AgentProcess::on_delivery`] whenever a message
//! was pushed into the agent's [`Inbox`]. Messages the agent wants sent are
//! returned in [`Step::broadcast`].

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{clearance, solve, Body, CostBreakdown, PlanProblem, PlannerConfig, Weights};
use crate::traj::{check_dynamic_feasibility, sample_times, stop_trajectory, DynamicLimits, StartState, TrajectorySpline, Vec3};
use crate::world::{CameraModel, ObstaclePrediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Tentative,
    Committed,
    ObstacleShare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMessage {
    pub sender_id: usize,
    pub kind: MessageKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traj: Option<TrajectorySpline>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obstacles: Vec<ObstaclePrediction>,
    pub sent_at: f64,
}

impl PlanMessage {
    pub fn tentative(sender_id: usize, traj: TrajectorySpline, sent_at: f64) -> Self {
        PlanMessage { sender_id, kind: MessageKind::Tentative, traj: Some(traj), obstacles: Vec::new(), sent_at }
    }

    pub fn committed(sender_id: usize, traj: TrajectorySpline, sent_at: f64) -> Self {
        PlanMessage { sender_id, kind: MessageKind::Committed, traj: Some(traj), obstacles: Vec::new(), sent_at }
    }

    pub fn obstacle_share(sender_id: usize, obstacles: Vec<ObstaclePrediction>, sent_at: f64) -> Self {
        PlanMessage { sender_id, kind: MessageKind::ObstacleShare, traj: None, obstacles, sent_at }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let msg: PlanMessage = serde_json::from_str(s)?;
        if let Some(t) = &msg.traj {
            t.validate()?;
        }
        Ok(msg)
    }
}

/// Sampled distances within this much of the running minimum are refined.
const REFINE_BAND: f64 = 0.05;

/// Minimum distance between the two position curves over `window`.
///
/// Sampled at step `dt`; every sampled local minimum close to the overall
/// minimum is then refined by golden-section search between its neighbors.
pub fn min_distance(a: &TrajectorySpline, b: &TrajectorySpline, window: (f64, f64), dt: f64) -> f64 {
    assert!(dt > 0.0, "dt must be positive");
    let dist = |t: f64| (a.position(t) - b.position(t)).norm();
    let times: Vec<f64> = sample_times(window.0, window.1, dt).collect();
    let d: Vec<f64> = times.iter().map(|t| dist(*t)).collect();
    let mut best = d.iter().copied().fold(f64::INFINITY, f64::min);
    let coarse_best = best;
    for i in 0..d.len() {
        let left = if i > 0 { d[i - 1] } else { f64::INFINITY };
        let right = if i + 1 < d.len() { d[i + 1] } else { f64::INFINITY };
        let flat = d[i] == left && d[i] == right;
        if flat || d[i] > left || d[i] > right || d[i] > coarse_best + REFINE_BAND {
            continue;
        }
        let lo = if i > 0 { times[i - 1] } else { times[i] };
        let hi = if i + 1 < d.len() { times[i + 1] } else { times[i] };
        best = best.min(golden_min(&dist, lo, hi));
    }
    best
}

fn golden_min(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    const R: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - R * (hi - lo);
    let mut x2 = lo + R * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..40 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - R * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + R * (hi - lo);
            f2 = f(x2);
        }
    }
    f1.min(f2).min(f(lo)).min(f(hi))
}

/// Space-time overlap window of two trajectories, each held constant
/// outside its own span.
pub fn overlap_window(a: &TrajectorySpline, b: &TrajectorySpline) -> (f64, f64) {
    (a.t_start.max(b.t_start), a.t_end().max(b.t_end()))
}

/// True when the two trajectories come closer than `margin` anywhere in
/// their overlap window.
pub fn conflict(a: &TrajectorySpline, b: &TrajectorySpline, margin: f64, dt: f64) -> bool {
    min_distance(a, b, overlap_window(a, b), dt) < margin
}

/// Shared message queue of one agent. The network appends from outside; the
/// agent keeps a read cursor, so appends during a cycle are never lost.
#[derive(Debug, Clone, Default)]
pub struct Inbox(Arc<Mutex<Vec<PlanMessage>>>);

impl Inbox {
    pub fn push(&self, msg: PlanMessage) {
        self.0.lock().expect("inbox lock").push(msg);
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("inbox lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Messages from index `from` onwards.
    pub fn read_from(&self, from: usize) -> Vec<PlanMessage> {
        let q = self.0.lock().expect("inbox lock");
        q.get(from..).map(<[PlanMessage]>::to_vec).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeerEntry {
    pub committed: Option<(TrajectorySpline, f64)>,
    pub tentative: Option<(TrajectorySpline, f64)>,
}

/// Latest committed and tentative trajectory per peer, by send time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeerTable {
    entries: BTreeMap<usize, PeerEntry>,
}

impl PeerTable {
    pub fn get(&self, peer: usize) -> Option<&PeerEntry> {
        self.entries.get(&peer)
    }

    pub fn update(&mut self, msg: &PlanMessage) {
        let Some(traj) = &msg.traj else { return };
        let e = self.entries.entry(msg.sender_id).or_default();
        let newer = |slot: &Option<(TrajectorySpline, f64)>| slot.as_ref().is_none_or(|(_, t)| msg.sent_at >= *t);
        match msg.kind {
            MessageKind::Committed => {
                if newer(&e.committed) {
                    e.committed = Some((traj.clone(), msg.sent_at));
                }
            }
            MessageKind::Tentative => {
                if newer(&e.tentative) {
                    e.tentative = Some((traj.clone(), msg.sent_at));
                }
            }
            MessageKind::ObstacleShare => {}
        }
        // a commit or revert sent after the tentative settles it
        if let (Some((_, tc)), Some((_, tt))) = (&e.committed, &e.tentative) {
            if tt <= tc {
                e.tentative = None;
            }
        }
    }

    /// Every trajectory a peer may be flying: committed ones and unsettled
    /// tentatives, ordered by peer id.
    pub fn constraints(&self) -> Vec<(usize, TrajectorySpline)> {
        let mut out = Vec::new();
        for (id, e) in &self.entries {
            for (t, _) in e.committed.iter().chain(&e.tentative) {
                out.push((*id, t.clone()));
            }
        }
        out
    }
}

/// Merged obstacle predictions, keyed by obstacle id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObstacleTable {
    entries: BTreeMap<u32, ObstaclePrediction>,
}

impl ObstacleTable {
    /// Keep, per id, the prediction with the latest `valid_from`. Returns
    /// true if anything changed.
    pub fn merge(&mut self, preds: &[ObstaclePrediction]) -> bool {
        let mut changed = false;
        for p in preds {
            match self.entries.get(&p.id) {
                Some(old) if old.valid_from >= p.valid_from => {}
                _ => {
                    self.entries.insert(p.id, *p);
                    changed = true;
                }
            }
        }
        changed
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&ObstaclePrediction> {
        self.entries.get(&id)
    }

    /// Predictions ordered by id.
    pub fn to_vec(&self) -> Vec<ObstaclePrediction> {
        self.entries.values().cloned().collect()
    }
}

/// Everything a planner sees for one cycle.
#[derive(Debug, Clone)]
pub struct PlanRequest<'a> {
    pub agent_id: usize,
    pub start: StartState,
    pub t_start: f64,
    pub goal: Vec3,
    pub obstacles: &'a [ObstaclePrediction],
    pub peers: &'a [TrajectorySpline],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutput {
    /// `None` when the planner reports failure.
    pub traj: Option<TrajectorySpline>,
    pub cost: Option<f64>,
    pub breakdown: Option<CostBreakdown>,
    pub wall_time_ms: f64,
}

/// Anything that turns a [`PlanRequest`] into a trajectory.
pub trait Planner {
    fn plan(&mut self, req: &PlanRequest<'_>) -> PlanOutput;

    fn name(&self) -> String;
}

/// The optimization-based expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPlanner {
    pub cfg: PlannerConfig,
    pub lim: DynamicLimits,
    pub cam: CameraModel,
    pub weights: Weights,
    pub n_guesses: usize,
    pub free_time: bool,
    pub safety_margin: f64,
    pub seed: u64,
}

impl ExpertPlanner {
    /// PARM (fixed time) or PARM* (`free_time`).
    pub fn new(free_time: bool, n_guesses: usize) -> Self {
        ExpertPlanner {
            cfg: PlannerConfig::default(),
            lim: DynamicLimits::default(),
            cam: CameraModel::default(),
            weights: Weights::default(),
            n_guesses,
            free_time,
            safety_margin: 0.3,
            seed: 0,
        }
    }

    pub fn problem(&self, req: &PlanRequest<'_>) -> PlanProblem {
        let mut prob = PlanProblem::new(req.start, req.t_start, req.goal);
        prob.obstacles = req.obstacles.to_vec();
        prob.peer_trajs = req.peers.to_vec();
        prob.lim = self.lim;
        prob.cam = self.cam;
        prob.weights = self.weights;
        prob.n_guesses = self.n_guesses;
        prob.free_time = self.free_time;
        prob.safety_margin = self.safety_margin;
        prob.seed = self.seed ^ (req.agent_id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ req.t_start.to_bits();
        prob
    }
}

impl Planner for ExpertPlanner {
    fn plan(&mut self, req: &PlanRequest<'_>) -> PlanOutput {
        let clock = Instant::now();
        match solve(&self.problem(req), &self.cfg) {
            Ok(res) => PlanOutput {
                traj: res.feasible.then_some(res.traj),
                cost: Some(res.cost),
                breakdown: Some(res.breakdown),
                wall_time_ms: res.wall_time_ms,
            },
            Err(e) => {
                log::warn!("agent {}: planner error: {e}", req.agent_id);
                PlanOutput { traj: None, cost: None, breakdown: None, wall_time_ms: clock.elapsed().as_secs_f64() * 1e3 }
            }
        }
    }

    fn name(&self) -> String {
        format!("{}-{}", if self.free_time { "PARM*" } else { "PARM" }, self.n_guesses)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    /// Length of the delay check, seconds.
    pub delay_check_duration: f64,
    /// Simulated time the planner takes.
    pub planning_time: f64,
    /// Minimum allowed inter-agent distance.
    pub margin: f64,
    /// Sampling step of the conflict and clearance checks.
    pub check_dt: f64,
    pub goal_tolerance: f64,
    /// After a revert the next cycle starts after a uniform random wait in
    /// `[0, retry_backoff]`.
    pub retry_backoff: f64,
    /// Wait before re-checking once the goal is reached.
    pub idle_period: f64,
    /// Obstacles must stay clear of the hover point this long after the end.
    pub hold_horizon: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            delay_check_duration: 0.11,
            planning_time: 0.1,
            margin: 0.3,
            check_dt: 0.01,
            goal_tolerance: 0.3,
            retry_backoff: 0.2,
            idle_period: 0.5,
            hold_horizon: 1.5,
        }
    }
}

impl ProtocolConfig {
    /// Delay check of twice the maximum network delay plus 10 ms.
    pub fn for_max_delay(delay_max: f64) -> Self {
        ProtocolConfig { delay_check_duration: 2.0 * delay_max + 0.01, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.planning_time, self.margin, self.check_dt, self.goal_tolerance, self.idle_period];
        if positive.iter().any(|v| !(*v > 0.0)) || self.delay_check_duration < 0.0 || self.retry_backoff < 0.0 {
            return Err(Error::InvalidConfig("protocol durations and margins must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Optimizing,
    Checking,
    DelayChecking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevertReason {
    PlannerFailed,
    /// Own dynamic or obstacle check of the planner output failed.
    Unverified,
    /// Conflict found in the check right after optimization.
    CheckConflict,
    /// Conflict found during the delay check.
    DelayConflict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome", content = "reason")]
pub enum Outcome {
    CommittedNew,
    Reverted(RevertReason),
    Skipped,
}

/// Summary of one finished cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub agent: usize,
    pub started_at: f64,
    pub finished_at: f64,
    pub outcome: Outcome,
    pub wall_time_ms: f64,
    pub cost: Option<f64>,
    pub breakdown: Option<CostBreakdown>,
    /// Peer whose trajectory caused a conflict revert.
    pub conflict_with: Option<usize>,
}

/// What the owner has to do after a step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Step {
    pub broadcast: Vec<PlanMessage>,
    pub outcome: Option<Outcome>,
    /// Next time the agent wants [`AgentProcess::on_timer`].
    pub wake_at: Option<f64>,
}

struct Cycle {
    started_at: f64,
    output: PlanOutput,
    candidate: Option<TrajectorySpline>,
    deadline: f64,
}

/// One agent running the replanning protocol.
pub struct AgentProcess {
    pub id: usize,
    pub goal: Vec3,
    cfg: ProtocolConfig,
    lim: DynamicLimits,
    committed: TrajectorySpline,
    phase: Phase,
    inbox: Inbox,
    cursor: usize,
    peers: PeerTable,
    obstacles: ObstacleTable,
    planner: Box<dyn Planner>,
    cycle: Option<Cycle>,
    wake: Option<f64>,
    rng: ChaCha8Rng,
    history: Vec<CycleRecord>,
    commits: Vec<TrajectorySpline>,
}

impl AgentProcess {
    /// Agent hovering (or braking) from `start` at time `t0`.
    pub fn new(
        id: usize,
        start: StartState,
        goal: Vec3,
        t0: f64,
        lim: DynamicLimits,
        cfg: ProtocolConfig,
        planner: Box<dyn Planner>,
        seed: u64,
    ) -> Self {
        let committed = stop_trajectory(&start, t0, &lim);
        AgentProcess {
            id,
            goal,
            cfg,
            lim,
            commits: vec![committed.clone()],
            committed,
            phase: Phase::Idle,
            inbox: Inbox::default(),
            cursor: 0,
            peers: PeerTable::default(),
            obstacles: ObstacleTable::default(),
            planner,
            cycle: None,
            wake: None,
            rng: ChaCha8Rng::seed_from_u64(seed ^ (id as u64).wrapping_mul(0xa076_1d64_78bd_642f)),
            history: Vec::new(),
        }
    }

    pub fn committed(&self) -> &TrajectorySpline {
        &self.committed
    }

    /// Every trajectory this agent committed, in order, starting with the
    /// initial stop trajectory.
    pub fn commits(&self) -> &[TrajectorySpline] {
        &self.commits
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn inbox(&self) -> Inbox {
        self.inbox.clone()
    }

    pub fn peers(&self) -> &PeerTable {
        &self.peers
    }

    pub fn obstacles(&self) -> &ObstacleTable {
        &self.obstacles
    }

    pub fn history(&self) -> &[CycleRecord] {
        &self.history
    }

    pub fn planner_name(&self) -> String {
        self.planner.name()
    }

    pub fn goal_reached(&self) -> bool {
        (self.committed.position(self.committed.t_end()) - self.goal).norm() <= self.cfg.goal_tolerance
    }

    /// Merge own detections; returns a share message when the table changed.
    pub fn sense(&mut self, detections: &[ObstaclePrediction], now: f64) -> Option<PlanMessage> {
        self.obstacles.merge(detections).then(|| PlanMessage::obstacle_share(self.id, self.obstacles.to_vec(), now))
    }

    pub fn merge_obstacle_share(&mut self, msg: &PlanMessage) {
        debug_assert_eq!(msg.kind, MessageKind::ObstacleShare);
        self.obstacles.merge(&msg.obstacles);
    }

    /// Apply every unread inbox message to the tables and return the
    /// trajectory-carrying ones.
    fn drain(&mut self) -> Vec<PlanMessage> {
        let new = self.inbox.read_from(self.cursor);
        self.cursor += new.len();
        for m in &new {
            match m.kind {
                MessageKind::ObstacleShare => self.merge_obstacle_share(m),
                _ => self.peers.update(m),
            }
        }
        new.into_iter().filter(|m| m.traj.is_some() && m.sender_id != self.id).collect()
    }

    fn first_conflict<'m>(
        &self,
        traj: &TrajectorySpline,
        msgs: impl IntoIterator<Item = (usize, &'m TrajectorySpline)>,
    ) -> Option<usize> {
        msgs.into_iter().find(|(_, other)| conflict(traj, other, self.cfg.margin, self.cfg.check_dt)).map(|(id, _)| id)
    }

    /// Own a-posteriori check of a planner output: start continuity,
    /// dynamic limits and obstacle clearance.
    fn verify(&self, traj: &TrajectorySpline, start: &StartState, t_start: f64) -> bool {
        if traj.validate().is_err() || (traj.t_start - t_start).abs() > 1e-9 {
            return false;
        }
        let s = traj.state_at(t_start);
        if (s.pos - start.pos).norm() > 1e-6 || (s.vel - start.vel).norm() > 1e-6 || (s.acc - start.acc).norm() > 1e-6 {
            return false;
        }
        if !check_dynamic_feasibility(traj, &self.lim, self.cfg.check_dt).ok {
            return false;
        }
        let window = (traj.t_start, traj.t_end() + self.cfg.hold_horizon);
        self.obstacles
            .entries
            .values()
            .all(|o| clearance(traj, Body::Obstacle(o), self.cfg.margin, window, self.cfg.check_dt) >= 0.0)
    }

    /// Time of the pending wake-up, if any.
    pub fn next_wake(&self) -> Option<f64> {
        self.wake
    }

    /// Start a cycle. Requires [`Phase::Idle`].
    pub fn begin_cycle(&mut self, now: f64) -> Step {
        let step = self.begin_inner(now);
        self.wake = step.wake_at;
        step
    }

    fn begin_inner(&mut self, now: f64) -> Step {
        assert_eq!(self.phase, Phase::Idle, "agent {} is not idle", self.id);
        self.drain();
        if self.goal_reached() {
            self.record(now, now, Outcome::Skipped, None, None);
            return Step { outcome: Some(Outcome::Skipped), wake_at: Some(now + self.cfg.idle_period), ..Default::default() };
        }
        self.phase = Phase::Optimizing;
        let t_start = now + self.cfg.planning_time + self.cfg.delay_check_duration;
        let start = self.committed.state_at(t_start);
        let peers: Vec<TrajectorySpline> = self.peers.constraints().into_iter().map(|(_, t)| t).collect();
        let obstacles = self.obstacles.to_vec();
        let req = PlanRequest { agent_id: self.id, start, t_start, goal: self.goal, obstacles: &obstacles, peers: &peers };
        let output = self.planner.plan(&req);
        let candidate = output.traj.clone().filter(|t| self.verify(t, &start, t_start));
        let deadline = now + self.cfg.planning_time;
        self.cycle = Some(Cycle { started_at: now, output, candidate, deadline });
        Step { wake_at: Some(deadline), ..Default::default() }
    }

    /// Timer callback: moves the cycle forward according to the phase.
    /// Once the agent has requested a wake-up, timers at other times are
    /// ignored.
    pub fn on_timer(&mut self, now: f64) -> Step {
        if self.wake.is_some_and(|w| w != now) {
            return Step::default();
        }
        let step = self.timer_inner(now);
        self.wake = step.wake_at;
        step
    }

    /// Message callback: during the delay check every new trajectory is
    /// tested at once; otherwise messages wait in the inbox.
    pub fn on_delivery(&mut self, now: f64) -> Step {
        let step = self.delivery_inner(now);
        if step.wake_at.is_some() {
            self.wake = step.wake_at;
        }
        step
    }

    fn timer_inner(&mut self, now: f64) -> Step {
        match self.phase {
            Phase::Idle => self.begin_inner(now),
            Phase::Optimizing => self.finish_optimization(now),
            Phase::DelayChecking => {
                let deadline = self.cycle.as_ref().expect("cycle in progress").deadline;
                if now < deadline {
                    return Step { wake_at: Some(deadline), ..Default::default() };
                }
                self.finish_delay_check(now)
            }
            Phase::Checking => unreachable!("checking is instantaneous"),
        }
    }

    fn delivery_inner(&mut self, now: f64) -> Step {
        if self.phase != Phase::DelayChecking {
            return Step::default();
        }
        let new = self.drain();
        let cand = self.cycle.as_ref().and_then(|c| c.candidate.as_ref()).expect("delay check has a candidate");
        match self.first_conflict(cand, new.iter().map(|m| (m.sender_id, m.traj.as_ref().expect("filtered")))) {
            Some(peer) => self.revert(now, RevertReason::DelayConflict, Some(peer), true),
            None => Step::default(),
        }
    }

    fn finish_optimization(&mut self, now: f64) -> Step {
        self.phase = Phase::Checking;
        self.drain();
        let Some(cand) = self.cycle.as_ref().and_then(|c| c.candidate.clone()) else {
            let reason = if self.cycle.as_ref().is_some_and(|c| c.output.traj.is_none()) {
                RevertReason::PlannerFailed
            } else {
                RevertReason::Unverified
            };
            return self.revert(now, reason, None, false);
        };
        // everything known by now: the snapshot plus what arrived meanwhile
        let known = self.peers.constraints();
        if let Some(peer) = self.first_conflict(&cand, known.iter().map(|(id, t)| (*id, t))) {
            return self.revert(now, RevertReason::CheckConflict, Some(peer), false);
        }
        self.phase = Phase::DelayChecking;
        let deadline = now + self.cfg.delay_check_duration;
        self.cycle.as_mut().expect("cycle in progress").deadline = deadline;
        Step { broadcast: vec![PlanMessage::tentative(self.id, cand, now)], wake_at: Some(deadline), ..Default::default() }
    }

    fn finish_delay_check(&mut self, now: f64) -> Step {
        let step = self.delivery_inner(now);
        if step.outcome.is_some() {
            return step;
        }
        let cycle = self.cycle.take().expect("cycle in progress");
        let cand = cycle.candidate.expect("delay check has a candidate");
        self.committed = cand.clone();
        self.commits.push(cand.clone());
        self.phase = Phase::Idle;
        self.history.push(CycleRecord {
            agent: self.id,
            started_at: cycle.started_at,
            finished_at: now,
            outcome: Outcome::CommittedNew,
            wall_time_ms: cycle.output.wall_time_ms,
            cost: cycle.output.cost,
            breakdown: cycle.output.breakdown,
            conflict_with: None,
        });
        Step {
            broadcast: vec![PlanMessage::committed(self.id, cand, now)],
            outcome: Some(Outcome::CommittedNew),
            wake_at: Some(now),
        }
    }

    /// Drop the candidate and keep the committed trajectory. If a tentative
    /// went out, the unchanged committed trajectory is re-broadcast so peers
    /// can discard the tentative.
    fn revert(&mut self, now: f64, reason: RevertReason, peer: Option<usize>, announced: bool) -> Step {
        let cycle = self.cycle.take();
        self.phase = Phase::Idle;
        let outcome = Outcome::Reverted(reason);
        let (started, out) = cycle.map(|c| (c.started_at, Some(c.output))).unwrap_or((now, None));
        self.record(started, now, outcome, out, peer);
        let wait = self.rng.gen::<f64>() * self.cfg.retry_backoff;
        Step {
            broadcast: if announced { vec![PlanMessage::committed(self.id, self.committed.clone(), now)] } else { Vec::new() },
            outcome: Some(outcome),
            wake_at: Some(now + wait),
        }
    }

    fn record(&mut self, started_at: f64, finished_at: f64, outcome: Outcome, out: Option<PlanOutput>, peer: Option<usize>) {
        self.history.push(CycleRecord {
            agent: self.id,
            started_at,
            finished_at,
            outcome,
            wall_time_ms: out.as_ref().map_or(0.0, |o| o.wall_time_ms),
            cost: out.as_ref().and_then(|o| o.cost),
            breakdown: out.as_ref().and_then(|o| o.breakdown),
            conflict_with: peer,
        });
    }
}

/// Transport used by [`replan_cycle`].
pub trait Bus {
    fn publish(&mut self, msg: PlanMessage, now: f64);
    /// Deliver everything due up to `until` into the recipients' inboxes.
    fn deliver_until(&mut self, until: f64);
}

/// Run one whole cycle of `agent` starting at `now`, driving `bus` along.
/// Messages arriving during the delay check are tested when it ends.
pub fn replan_cycle(agent: &mut AgentProcess, now: f64, bus: &mut dyn Bus) -> Outcome {
    let mut step = agent.begin_cycle(now);
    loop {
        for m in step.broadcast.drain(..) {
            let sent = m.sent_at;
            bus.publish(m, sent);
        }
        if let Some(o) = step.outcome {
            return o;
        }
        let t = step.wake_at.expect("running cycle always schedules a wake-up");
        bus.deliver_until(t);
        step = agent.on_timer(t);
    }
}
