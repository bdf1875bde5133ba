//! DAgger: roll out a mix of expert and student, label every visited
//! observation with the expert, aggregate, refit.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{encode, Observation};
use super::loss::{net_gradients, sample_rows, LossBreakdown, LossConfig, Sample, Target};
use super::net::{Adam, PolicyNet};
use super::{PolicyConfig, StudentPlanner};
use crate::deconflict::{ExpertPlanner, PlanRequest};
use crate::error::{Error, Result};
use crate::optimizer::solve;
use crate::traj::{stop_trajectory, BasisRow, StartState, TrajectorySpline, Vec3};
use crate::world::{ObstaclePrediction, TrefoilRanges};

/// Initial conditions of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub obstacles: Vec<ObstaclePrediction>,
    pub starts: Vec<StartState>,
    pub goals: Vec<Vec3>,
}

pub trait EnvFactory {
    fn episode(&self, rng: &mut ChaCha8Rng) -> Episode;
}

/// Agents on a circle flying to roughly antipodal goals around randomized
/// trefoil obstacles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircleEnv {
    pub radius: f64,
    pub height: f64,
    pub min_agents: usize,
    pub max_agents: usize,
    pub min_obstacles: usize,
    pub max_obstacles: usize,
    /// Goals are displaced from the antipode by up to this much.
    pub goal_jitter: f64,
    pub obstacle_ranges: TrefoilRanges,
}

impl Default for CircleEnv {
    fn default() -> Self {
        CircleEnv {
            radius: 3.0,
            height: 1.0,
            min_agents: 1,
            max_agents: 3,
            min_obstacles: 1,
            max_obstacles: 3,
            goal_jitter: 0.5,
            obstacle_ranges: TrefoilRanges::inside_circle(3.0, 1.0),
        }
    }
}

impl EnvFactory for CircleEnv {
    fn episode(&self, rng: &mut ChaCha8Rng) -> Episode {
        let n_agents = rng.gen_range(self.min_agents..=self.max_agents.max(self.min_agents));
        let n_obs = rng.gen_range(self.min_obstacles..=self.max_obstacles.max(self.min_obstacles));
        let obstacles = (0..n_obs).map(|i| self.obstacle_ranges.sample(i as u32, rng)).collect();
        let phase = rng.gen_range(0.0..2.0 * PI);
        let mut starts = Vec::with_capacity(n_agents);
        let mut goals = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let a = phase + 2.0 * PI * i as f64 / n_agents as f64;
            let p = Vec3::new(self.radius * a.cos(), self.radius * a.sin(), self.height);
            let jitter = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0) * self.goal_jitter;
            let goal = Vec3::new(-p.x, -p.y, self.height) + jitter;
            let heading = (goal.y - p.y).atan2(goal.x - p.x) + rng.gen_range(-0.5..0.5);
            starts.push(StartState::at_rest(p, heading));
            goals.push(goal);
        }
        Episode { obstacles, starts, goals }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoMeta {
    pub round: usize,
    pub episode: usize,
    pub step: usize,
    pub agent: usize,
    pub seed: u64,
}

/// An observation labeled by a feasible expert solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub observation: Observation,
    pub expert_traj: TrajectorySpline,
    pub expert_cost: f64,
    pub meta: DemoMeta,
}

pub fn save_dataset(demos: &[Demonstration], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in demos {
        serde_json::to_writer(&mut w, d)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<Demonstration>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub policy: PolicyConfig,
    pub loss: LossConfig,
    pub dagger_rounds: usize,
    /// Probability of executing the expert's action, per round; the last
    /// value repeats if the list is short.
    pub betas: Vec<f64>,
    pub episodes_per_round: usize,
    pub max_steps: usize,
    /// Simulated time between replans in a rollout, seconds.
    pub replan_period: f64,
    pub goal_tolerance: f64,
    pub steps_per_round: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub expert_guesses: usize,
    pub env: CircleEnv,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            policy: PolicyConfig::default(),
            loss: LossConfig::default(),
            dagger_rounds: 4,
            betas: vec![1.0, 0.5, 0.25, 0.0],
            episodes_per_round: 12,
            max_steps: 40,
            replan_period: 0.5,
            goal_tolerance: 0.3,
            steps_per_round: 800,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            expert_guesses: 6,
            env: CircleEnv::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn beta(&self, round: usize) -> f64 {
        self.betas.get(round).or(self.betas.last()).copied().unwrap_or(0.0)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.loss.alpha_yaw <= 0.0 || self.loss.samples < 2 {
            return Err(Error::InvalidConfig("alpha_yaw must be positive and samples ≥ 2".into()));
        }
        if self.betas.iter().any(|b| !(0.0..=1.0).contains(b)) || self.betas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidConfig("betas must lie in [0, 1] and not increase".into()));
        }
        if self.batch_size == 0 || self.learning_rate <= 0.0 || self.replan_period <= 0.0 {
            return Err(Error::InvalidConfig("batch size, learning rate and replan period must be positive".into()));
        }
        Ok(())
    }
}

/// Per-round learning-curve record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    pub beta: f64,
    pub new_demos: usize,
    pub skipped: usize,
    pub dataset_size: usize,
    pub student_actions: usize,
    pub expert_actions: usize,
    /// Mean training objective over the first and last few steps.
    pub loss_start: f64,
    pub loss_end: f64,
    /// Best-head imitation loss over the whole dataset after fitting.
    pub dataset_loss: LossBreakdown,
    pub expert_time_s: f64,
    pub fit_time_s: f64,
}

pub struct TrainOutcome {
    pub net: PolicyNet,
    pub rounds: Vec<RoundStats>,
    pub dataset: Vec<Demonstration>,
}

#[derive(Default)]
struct RolloutStats {
    demos: Vec<Demonstration>,
    skipped: usize,
    student_actions: usize,
    expert_actions: usize,
    expert_time_s: f64,
}

/// Training state; [`train_dagger`] drives it round by round.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub net: PolicyNet,
    pub expert: ExpertPlanner,
    opt: Adam,
    rows: Vec<BasisRow>,
    dataset: Vec<Demonstration>,
    samples: Vec<Sample>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, expert: ExpertPlanner) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = PolicyNet::random(&cfg.policy, &mut rng);
        Ok(Self::with_net(cfg, expert, net, rng))
    }

    pub fn with_net(cfg: TrainConfig, expert: ExpertPlanner, net: PolicyNet, rng: ChaCha8Rng) -> Self {
        let opt = Adam::new(&net, cfg.learning_rate, cfg.beta1, cfg.beta2);
        let rows = sample_rows(cfg.policy.n_ctrl, cfg.loss.samples);
        Trainer { cfg, net, expert, opt, rows, dataset: Vec::new(), samples: Vec::new(), rng }
    }

    pub fn dataset(&self) -> &[Demonstration] {
        &self.dataset
    }

    pub fn sample_of(&self, d: &Demonstration) -> Sample {
        let p = &self.cfg.policy;
        Sample {
            encoded: encode(&d.observation, p.plan_radius, p.agent_half_extent),
            start: d.observation.start,
            t_start: d.observation.t_start,
            target: Target::new(&d.expert_traj, self.cfg.loss.samples),
        }
    }

    pub fn add_demos(&mut self, demos: Vec<Demonstration>) {
        for d in demos {
            self.samples.push(self.sample_of(&d));
            self.dataset.push(d);
        }
    }

    fn student(&self) -> StudentPlanner {
        let mut s = StudentPlanner::new(Arc::new(self.net.clone()));
        s.cfg = self.expert.cfg.clone();
        s.lim = self.expert.lim;
        s.cam = self.expert.cam;
        s.weights = self.expert.weights;
        s.safety_margin = self.expert.safety_margin;
        s
    }

    fn rollout(&self, round: usize, episode: usize, beta: f64, env: &dyn EnvFactory, student: &StudentPlanner) -> RolloutStats {
        let seed = self.cfg.seed ^ ((round as u64) << 32) ^ (episode as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ep = env.episode(&mut rng);
        let lim = self.expert.lim;
        let mut trajs: Vec<TrajectorySpline> = ep.starts.iter().map(|s| stop_trajectory(s, 0.0, &lim)).collect();
        let mut done = vec![false; trajs.len()];
        let mut stats = RolloutStats::default();
        for step in 0..self.cfg.max_steps {
            let t = step as f64 * self.cfg.replan_period;
            for i in 0..trajs.len() {
                if done[i] {
                    continue;
                }
                let state = trajs[i].state_at(t);
                let settled = (trajs[i].position(trajs[i].t_end()) - ep.goals[i]).norm() < self.cfg.goal_tolerance;
                if settled && (state.pos - ep.goals[i]).norm() < self.cfg.goal_tolerance {
                    done[i] = true;
                    continue;
                }
                let peers: Vec<TrajectorySpline> =
                    trajs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, tr)| tr.clone()).collect();
                let obs = Observation { start: state, t_start: t, goal: ep.goals[i], obstacles: ep.obstacles.clone(), peers };
                let req = PlanRequest {
                    agent_id: i,
                    start: obs.start,
                    t_start: t,
                    goal: obs.goal,
                    obstacles: &obs.obstacles,
                    peers: &obs.peers,
                };
                let mut prob = self.expert.problem(&req);
                prob.seed ^= seed;
                let clock = Instant::now();
                let label = match solve(&prob, &self.expert.cfg) {
                    Ok(res) if res.feasible => Some((res.traj, res.cost)),
                    _ => None,
                };
                stats.expert_time_s += clock.elapsed().as_secs_f64();
                let use_expert = rng.gen::<f64>() < beta;
                let action = match (&label, use_expert) {
                    (Some((tr, _)), true) => {
                        stats.expert_actions += 1;
                        Some(tr.clone())
                    }
                    _ => {
                        let (pick, _) = student.infer(&obs);
                        if pick.passed {
                            stats.student_actions += 1;
                            Some(pick.traj)
                        } else {
                            label.as_ref().map(|(tr, _)| {
                                stats.expert_actions += 1;
                                tr.clone()
                            })
                        }
                    }
                };
                match label {
                    Some((expert_traj, expert_cost)) => stats.demos.push(Demonstration {
                        observation: obs,
                        expert_traj,
                        expert_cost,
                        meta: DemoMeta { round, episode, step, agent: i, seed },
                    }),
                    None => stats.skipped += 1,
                }
                if let Some(a) = action {
                    trajs[i] = a;
                }
            }
            if done.iter().all(|d| *d) {
                break;
            }
        }
        stats
    }

    /// `steps` mini-batch updates; returns the mean objective over the first
    /// and the last few steps.
    pub fn fit(&mut self, steps: usize) -> (f64, f64) {
        if self.samples.is_empty() || steps == 0 {
            return (f64::NAN, f64::NAN);
        }
        let window = (steps / 10).clamp(1, 20);
        let (mut first, mut last) = (0.0, 0.0);
        let n = self.samples.len();
        for step in 0..steps {
            let batch: Vec<&Sample> = (0..self.cfg.batch_size.min(n)).map(|_| &self.samples[self.rng.gen_range(0..n)]).collect();
            let (loss, grad) = net_gradients(&self.net, &batch, &self.rows, &self.cfg.loss);
            if step < window {
                first += loss.objective / window as f64;
            }
            if step + window >= steps {
                last += loss.objective / window as f64;
            }
            self.opt.step(&mut self.net, &grad);
        }
        (first, last)
    }

    /// Best-head imitation loss over the dataset.
    pub fn dataset_loss(&self) -> LossBreakdown {
        let mut total = LossBreakdown::default();
        let n = self.samples.len() as f64;
        for chunk in self.samples.chunks(64) {
            let batch: Vec<&Sample> = chunk.iter().collect();
            let enc: Vec<_> = chunk.iter().map(|s| s.encoded.clone()).collect();
            let cache = self.net.forward(&enc);
            let l = super::loss::batch_loss(&self.net, &cache, &batch, &self.rows, &self.cfg.loss).best;
            let w = chunk.len() as f64 / n;
            total.pos += l.pos * w;
            total.yaw += l.yaw * w;
            total.total += l.total * w;
        }
        total
    }

    /// One DAgger round: rollouts, aggregation, refit.
    pub fn round(&mut self, round: usize, env: &dyn EnvFactory) -> RoundStats {
        let beta = self.cfg.beta(round);
        let student = self.student();
        let mut agg = RolloutStats::default();
        for ep in 0..self.cfg.episodes_per_round {
            let s = self.rollout(round, ep, beta, env, &student);
            agg.demos.extend(s.demos);
            agg.skipped += s.skipped;
            agg.student_actions += s.student_actions;
            agg.expert_actions += s.expert_actions;
            agg.expert_time_s += s.expert_time_s;
        }
        let new_demos = agg.demos.len();
        self.add_demos(agg.demos);
        let clock = Instant::now();
        let (loss_start, loss_end) = self.fit(self.cfg.steps_per_round);
        let stats = RoundStats {
            round,
            beta,
            new_demos,
            skipped: agg.skipped,
            dataset_size: self.dataset.len(),
            student_actions: agg.student_actions,
            expert_actions: agg.expert_actions,
            loss_start,
            loss_end,
            dataset_loss: self.dataset_loss(),
            expert_time_s: agg.expert_time_s,
            fit_time_s: clock.elapsed().as_secs_f64(),
        };
        log::info!(
            "round {round}: beta {beta:.2}, +{new_demos} demos ({} skipped), dataset {}, loss {:.4} -> {:.4}",
            stats.skipped,
            stats.dataset_size,
            loss_start,
            loss_end
        );
        stats
    }

    pub fn finish(self, rounds: Vec<RoundStats>) -> TrainOutcome {
        TrainOutcome { net: self.net, rounds, dataset: self.dataset }
    }
}

/// Run every configured DAgger round.
pub fn train_dagger(cfg: &TrainConfig, expert: &ExpertPlanner, env: &dyn EnvFactory) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone(), expert.clone())?;
    let rounds = (0..cfg.dagger_rounds).map(|r| trainer.round(r, env)).collect();
    Ok(trainer.finish(rounds))
}
