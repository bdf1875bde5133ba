use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deconflict::ProtocolConfig;
use crate::error::{Error, Result};
use crate::netsim::NetworkConfig;
use crate::optimizer::{PlannerConfig, Weights};
use crate::traj::{DynamicLimits, Vec3};
use crate::world::{CameraModel, ObstaclePrediction, TrefoilRanges};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlannerKind {
    #[serde(rename = "PARM")]
    Parm,
    #[serde(rename = "PARM*")]
    ParmStar,
    #[serde(rename = "PRIMER")]
    Primer,
}

impl PlannerKind {
    pub fn label(&self) -> &'static str {
        match self {
            PlannerKind::Parm => "PARM",
            PlannerKind::ParmStar => "PARM*",
            PlannerKind::Primer => "PRIMER",
        }
    }
}

impl std::fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub start: Vec3,
    pub goal: Vec3,
    /// Initial heading; defaults to facing the goal.
    #[serde(default)]
    pub yaw: Option<f64>,
    pub planner: PlannerKind,
    #[serde(default = "one")]
    pub n_guesses: usize,
}

fn one() -> usize {
    1
}

impl AgentSpec {
    pub fn initial_yaw(&self) -> f64 {
        self.yaw.unwrap_or_else(|| {
            let d = self.goal - self.start;
            d.y.atan2(d.x)
        })
    }
}

/// A complete, reproducible simulation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub agents: Vec<AgentSpec>,
    pub obstacles: Vec<ObstaclePrediction>,
    pub lim: DynamicLimits,
    pub cam: CameraModel,
    pub net: NetworkConfig,
    pub protocol: ProtocolConfig,
    pub weights: Weights,
    pub planner: PlannerConfig,
    pub sim_duration: f64,
    pub margin: f64,
    /// Obstacles farther than this from an agent are not detected.
    pub sensing_range: f64,
    pub seed: u64,
    /// Student weights, required when any agent uses PRIMER.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "scenario".into(),
            agents: Vec::new(),
            obstacles: Vec::new(),
            lim: DynamicLimits::default(),
            cam: CameraModel::default(),
            net: NetworkConfig::default(),
            protocol: ProtocolConfig::default(),
            weights: Weights::default(),
            planner: PlannerConfig::default(),
            sim_duration: 60.0,
            margin: 0.3,
            sensing_range: 10.0,
            seed: 0,
            checkpoint: None,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.lim.validate()?;
        self.cam.validate()?;
        self.net.validate()?;
        self.protocol.validate()?;
        self.planner.validate()?;
        for o in &self.obstacles {
            o.validate()?;
        }
        if !(self.sim_duration > 0.0 && self.margin > 0.0 && self.sensing_range > 0.0) {
            return Err(Error::InvalidScenario("sim_duration, margin and sensing_range must be positive".into()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.n_guesses == 0 {
                return Err(Error::InvalidScenario(format!("agent {i} needs at least one guess")));
            }
            for (j, b) in self.agents.iter().enumerate().skip(i + 1) {
                if (a.start - b.start).norm() < self.margin {
                    return Err(Error::InvalidScenario(format!("agents {i} and {j} start closer than the margin")));
                }
            }
        }
        Ok(())
    }

    /// Give every agent the same planner.
    pub fn with_planner(mut self, planner: PlannerKind, n_guesses: usize) -> Self {
        for a in &mut self.agents {
            a.planner = planner;
            a.n_guesses = n_guesses;
        }
        self
    }

    /// Network settings with the matching delay-check duration.
    pub fn with_network(mut self, net: NetworkConfig) -> Self {
        self.protocol.delay_check_duration = ProtocolConfig::for_max_delay(net.delay_max).delay_check_duration;
        self.net = net;
        self
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(s)?;
        file.into_scenario()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_seed(path, None)
    }

    /// Loads a scenario file, optionally replacing its seed before any
    /// obstacles are generated. The network seed follows the override.
    pub fn load_with_seed(path: &Path, seed: Option<u64>) -> Result<Self> {
        let mut file: ScenarioFile = toml::from_str(&std::fs::read_to_string(path)?)?;
        if let Some(seed) = seed {
            file.seed = seed;
            if let Some(net) = &mut file.net {
                net.seed = seed;
            }
        }
        let mut scn = file.into_scenario()?;
        if seed.is_some() {
            scn.net.seed = scn.seed;
        }
        if let Some(ck) = &scn.checkpoint {
            if ck.is_relative() {
                scn.checkpoint = Some(path.parent().unwrap_or(Path::new(".")).join(ck));
            }
        }
        Ok(scn)
    }
}

/// `n_agents` evenly spaced on a circle of `radius`, each flying to the
/// antipodal point, with `n_obstacles` random trefoil obstacles inside.
pub fn build_circle_exchange(n_agents: usize, radius: f64, n_obstacles: usize, seed: u64) -> Scenario {
    let height = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = TrefoilRanges::inside_circle(radius, height);
    let obstacles = (0..n_obstacles).map(|i| ranges.sample(i as u32, &mut rng)).collect();
    let agents = (0..n_agents)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n_agents as f64;
            let start = Vec3::new(radius * a.cos(), radius * a.sin(), height);
            AgentSpec {
                start,
                goal: Vec3::new(-start.x, -start.y, height),
                yaw: None,
                planner: PlannerKind::ParmStar,
                n_guesses: 1,
            }
        })
        .collect();
    Scenario { name: format!("circle-{n_agents}a-{n_obstacles}o"), agents, obstacles, seed, ..Scenario::default() }
}

/// Generator section of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircleSpec {
    pub n_agents: usize,
    pub radius: f64,
    pub n_obstacles: usize,
    pub planner: PlannerKind,
    pub n_guesses: usize,
}

impl Default for CircleSpec {
    fn default() -> Self {
        CircleSpec { n_agents: 1, radius: 3.0, n_obstacles: 2, planner: PlannerKind::ParmStar, n_guesses: 1 }
    }
}

/// On-disk scenario: either explicit agents/obstacles or a `[circle]`
/// generator, plus overrides for every setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioFile {
    pub name: Option<String>,
    pub seed: u64,
    pub circle: Option<CircleSpec>,
    pub agents: Vec<AgentSpec>,
    pub obstacles: Vec<ObstaclePrediction>,
    pub lim: Option<DynamicLimits>,
    pub cam: Option<CameraModel>,
    pub net: Option<NetworkConfig>,
    pub protocol: Option<ProtocolConfig>,
    pub weights: Option<Weights>,
    pub planner: Option<PlannerConfig>,
    pub sim_duration: Option<f64>,
    pub margin: Option<f64>,
    pub sensing_range: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario> {
        let mut scn = match &self.circle {
            Some(c) => build_circle_exchange(c.n_agents, c.radius, c.n_obstacles, self.seed).with_planner(c.planner, c.n_guesses),
            None => Scenario { seed: self.seed, ..Scenario::default() },
        };
        scn.agents.extend(self.agents);
        scn.obstacles.extend(self.obstacles);
        if let Some(n) = self.name {
            scn.name = n;
        }
        if let Some(net) = self.net {
            scn = scn.with_network(net);
        }
        scn.lim = self.lim.unwrap_or(scn.lim);
        scn.cam = self.cam.unwrap_or(scn.cam);
        scn.protocol = self.protocol.unwrap_or(scn.protocol);
        scn.weights = self.weights.unwrap_or(scn.weights);
        scn.planner = self.planner.unwrap_or(scn.planner);
        scn.sim_duration = self.sim_duration.unwrap_or(scn.sim_duration);
        scn.margin = self.margin.unwrap_or(scn.margin);
        scn.sensing_range = self.sensing_range.unwrap_or(scn.sensing_range);
        scn.checkpoint = self.checkpoint;
        scn.protocol.margin = scn.margin;
        scn.validate()?;
        Ok(scn)
    }
}
