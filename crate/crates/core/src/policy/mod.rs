//! Imitation-learned student planner.
//!
//! An LSTM summarizes the surrounding obstacles and agents into a fixed-size
//! latent; a fully connected trunk maps it, together with the agent's own
//! state, to several candidate trajectories ("heads"). Training follows
//! DAgger against the optimization expert.

mod checkpoint;
mod decode;
mod features;
mod infer;
mod loss;
mod net;
mod train;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use decode::Decoder;
pub use features::{
    canonical_order, descriptor, encode, Encoded, Entity, LocalFrame, Observation, DESCRIPTOR_TIMES, ENTITY_DIM, OWN_DIM,
};
pub use infer::CompiledPolicy;
pub use loss::{
    batch_loss, il_loss, loss_and_grad, net_gradients, sample_rows, BatchLoss, LossBreakdown, LossConfig, Sample, Target,
};
pub use net::{Adam, Dense, ForwardCache, Lstm, LstmStep, PolicyNet};
pub use train::{
    load_dataset, save_dataset, train_dagger, CircleEnv, DemoMeta, Demonstration, EnvFactory, Episode, RoundStats, TrainConfig,
    TrainOutcome, Trainer,
};

use crate::deconflict::{PlanOutput, PlanRequest, Planner};
use crate::error::{Error, Result};
use crate::optimizer::{hard_check, total_cost, PlanProblem, PlannerConfig, Weights};
use crate::traj::{DynamicLimits, TrajectorySpline};
use crate::world::CameraModel;

/// Architecture and decode settings; stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// LSTM latent size.
    pub hidden: usize,
    /// Trunk layer width and count.
    pub width: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub n_ctrl: usize,
    pub t_min: f64,
    pub t_scale: f64,
    /// The goal fed to the network is clipped to this distance.
    pub plan_radius: f64,
    /// Half extent used in the descriptor of another agent.
    pub agent_half_extent: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: 64,
            width: 1024,
            depth: 4,
            n_heads: 6,
            n_ctrl: 8,
            t_min: 0.3,
            t_scale: 2.0,
            plan_radius: 4.0,
            agent_half_extent: 0.15,
        }
    }
}

impl PolicyConfig {
    pub fn decoder(&self) -> Decoder {
        Decoder { n_ctrl: self.n_ctrl, t_min: self.t_min, t_scale: self.t_scale }
    }

    pub fn out_dim(&self) -> usize {
        self.n_heads * self.decoder().head_len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.width == 0 || self.n_heads == 0 {
            return Err(Error::InvalidConfig("policy sizes must be positive".into()));
        }
        if self.n_ctrl < 6 {
            return Err(Error::InvalidConfig("policy n_ctrl must be at least 6".into()));
        }
        if !(self.t_min > 0.0 && self.t_scale > 0.0 && self.plan_radius > 0.0) {
            return Err(Error::InvalidConfig("policy time and radius settings must be positive".into()));
        }
        Ok(())
    }
}

/// Candidate trajectories, one per head, and the inference time.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub candidates: Vec<TrajectorySpline>,
    pub wall_time_ms: f64,
}

/// Encode `obs`, run the network and decode every head.
pub fn policy_forward(net: &PolicyNet, obs: &Observation) -> PolicyOutput {
    let clock = Instant::now();
    let enc = encode(obs, net.cfg.plan_radius, net.cfg.agent_half_extent);
    let cache = net.forward(std::slice::from_ref(&enc));
    let out = cache.output();
    let dec = net.cfg.decoder();
    let hl = dec.head_len();
    let row: Vec<f64> = out.row(0).iter().copied().collect();
    let candidates = row.chunks(hl).map(|head| dec.decode(head, &obs.start, obs.t_start)).collect();
    let wall_time_ms = clock.elapsed().as_secs_f64() * 1e3;
    log::debug!("policy_forward: {} entities, {:.3} ms", enc.entities.len(), wall_time_ms);
    PolicyOutput { candidates, wall_time_ms }
}

/// The trained policy as a [`Planner`]: picks the cheapest candidate that
/// passes the dense checks, or the cheapest overall when none does.
#[derive(Debug, Clone)]
pub struct StudentPlanner {
    pub net: Arc<PolicyNet>,
    compiled: Arc<CompiledPolicy>,
    pub cfg: PlannerConfig,
    pub lim: DynamicLimits,
    pub cam: CameraModel,
    pub weights: Weights,
    pub safety_margin: f64,
}

/// A candidate with its cost and check result.
#[derive(Debug, Clone)]
pub struct Scored {
    pub traj: TrajectorySpline,
    pub cost: f64,
    pub passed: bool,
}

impl StudentPlanner {
    pub fn new(net: Arc<PolicyNet>) -> Self {
        StudentPlanner {
            compiled: Arc::new(CompiledPolicy::new(&net)),
            net,
            cfg: PlannerConfig::default(),
            lim: DynamicLimits::default(),
            cam: CameraModel::default(),
            weights: Weights::default(),
            safety_margin: 0.3,
        }
    }

    pub fn problem(&self, obs: &Observation) -> PlanProblem {
        let mut prob = PlanProblem::new(obs.start, obs.t_start, obs.goal);
        prob.obstacles = obs.obstacles.clone();
        prob.peer_trajs = obs.peers.clone();
        prob.lim = self.lim;
        prob.cam = self.cam;
        prob.weights = self.weights;
        prob.free_time = true;
        prob.safety_margin = self.safety_margin;
        prob
    }

    /// Every head scored, in head order.
    pub fn score(&self, obs: &Observation, candidates: Vec<TrajectorySpline>) -> Vec<Scored> {
        let prob = self.problem(obs);
        candidates
            .into_iter()
            .map(|traj| {
                let cost = total_cost(&traj, &prob, &self.cfg).total();
                let passed = hard_check(&traj, &prob, &self.cfg).passed();
                Scored { traj, cost, passed }
            })
            .collect()
    }

    /// Index of the selected candidate.
    pub fn select(scored: &[Scored]) -> usize {
        let best = |feasible_only: bool| {
            (0..scored.len())
                .filter(|i| !feasible_only || scored[*i].passed)
                .min_by(|a, b| scored[*a].cost.total_cmp(&scored[*b].cost))
        };
        best(true).or_else(|| best(false)).expect("at least one head")
    }

    /// Network forward and decode only, on the compiled weights.
    pub fn forward(&self, obs: &Observation) -> PolicyOutput {
        self.compiled.policy_forward(obs)
    }

    /// Full inference: forward, scoring and selection.
    pub fn infer(&self, obs: &Observation) -> (Scored, f64) {
        let clock = Instant::now();
        let out = self.compiled.policy_forward(obs);
        let mut scored = self.score(obs, out.candidates);
        let pick = Self::select(&scored);
        (scored.swap_remove(pick), clock.elapsed().as_secs_f64() * 1e3)
    }
}

impl Planner for StudentPlanner {
    fn plan(&mut self, req: &PlanRequest<'_>) -> PlanOutput {
        let obs = Observation {
            start: req.start,
            t_start: req.t_start,
            goal: req.goal,
            obstacles: req.obstacles.to_vec(),
            peers: req.peers.to_vec(),
        };
        let (best, wall_time_ms) = self.infer(&obs);
        let prob = self.problem(&obs);
        let breakdown = total_cost(&best.traj, &prob, &self.cfg);
        PlanOutput { traj: Some(best.traj), cost: Some(best.cost), breakdown: Some(breakdown), wall_time_ms }
    }

    fn name(&self) -> String {
        format!("PRIMER-{}", self.net.cfg.n_heads)
    }
}
