//! Benchmark tables: mean metrics per environment, method and guess count.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::RunMetrics;
use super::scenario::{build_circle_exchange, PlannerKind, Scenario};
use super::sim::run_with;
use crate::error::{Error, Result};
use crate::netsim::NetworkConfig;
use crate::optimizer::Weights;
use crate::policy::{load_checkpoint, PolicyNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSpec {
    pub name: String,
    pub n_agents: usize,
    pub n_obstacles: usize,
    pub radius: f64,
    pub sim_duration: f64,
    /// Network override; the delay check follows `delay_max`.
    pub net: Option<NetworkConfig>,
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec { name: "1a-2o".into(), n_agents: 1, n_obstacles: 2, radius: 3.0, sim_duration: 60.0, net: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub planner: PlannerKind,
    #[serde(default = "one")]
    pub n_guesses: usize,
    /// Cost weight overrides, e.g. to switch the FOV term off.
    #[serde(default)]
    pub weights: Option<Weights>,
    #[serde(default)]
    pub label: Option<String>,
}

fn one() -> usize {
    1
}

impl MethodSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.planner.label().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSpec {
    pub name: String,
    pub repetitions: usize,
    pub seed: u64,
    /// Student weights for PRIMER rows; relative to the spec file.
    pub checkpoint: Option<PathBuf>,
    #[serde(rename = "environment")]
    pub environments: Vec<EnvSpec>,
    #[serde(rename = "method")]
    pub methods: Vec<MethodSpec>,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            name: "benchmark".into(),
            repetitions: 10,
            seed: 0,
            checkpoint: None,
            environments: Vec::new(),
            methods: Vec::new(),
        }
    }
}

impl BenchSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let mut spec: BenchSpec = toml::from_str(&std::fs::read_to_string(path)?)?;
        if let Some(ck) = &spec.checkpoint {
            if ck.is_relative() {
                spec.checkpoint = Some(path.parent().unwrap_or(Path::new(".")).join(ck));
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 || self.environments.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidConfig("a benchmark needs at least one environment, method and repetition".into()));
        }
        if self.environments.iter().any(|e| e.n_agents == 0) {
            return Err(Error::InvalidConfig("environments need at least one agent".into()));
        }
        Ok(())
    }

    /// Scenario for one table cell and repetition. Every method sees the
    /// same obstacles for a given repetition.
    pub fn scenario(&self, env: &EnvSpec, method: &MethodSpec, rep: usize) -> Scenario {
        let seed = self.seed.wrapping_add(rep as u64);
        let mut scn =
            build_circle_exchange(env.n_agents, env.radius, env.n_obstacles, seed).with_planner(method.planner, method.n_guesses);
        if let Some(net) = env.net {
            scn = scn.with_network(NetworkConfig { seed, ..net });
        } else {
            scn.net.seed = seed;
        }
        scn.name = format!("{}/{}-{}/{}", env.name, method.label(), method.n_guesses, rep);
        scn.sim_duration = env.sim_duration;
        if let Some(w) = method.weights {
            scn.weights = w;
        }
        scn
    }
}

/// One run inside a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub env: String,
    pub method: String,
    pub n_guesses: usize,
    pub rep: usize,
    pub seed: u64,
    pub metrics: RunMetrics,
}

/// Mean metrics of one table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub env: String,
    pub method: String,
    pub n_guesses: usize,
    pub runs: usize,
    pub avg_computation_ms: f64,
    pub success_rate: f64,
    /// Mean over runs in which every agent arrived.
    pub travel_time: Option<f64>,
    pub fov_rate: f64,
    pub max_fov_frames: f64,
    pub trans_violation_rate: f64,
    pub yaw_violation_rate: f64,
    pub avg_cost: Option<f64>,
    pub accel_integral: f64,
    pub jerk_integral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub name: String,
    pub rows: Vec<BenchRow>,
    pub runs: Vec<RunRecord>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Collapse the runs of one cell into a row.
pub fn summarize(runs: &[RunRecord]) -> BenchRow {
    let first = runs.first().expect("a table cell has runs");
    let m = |f: fn(&RunMetrics) -> f64| mean(runs.iter().map(|r| f(&r.metrics))).unwrap_or(0.0);
    BenchRow {
        env: first.env.clone(),
        method: first.method.clone(),
        n_guesses: first.n_guesses,
        runs: runs.len(),
        avg_computation_ms: m(|r| r.aggregate.avg_computation_ms),
        success_rate: m(|r| if r.aggregate.success { 100.0 } else { 0.0 }),
        travel_time: mean(runs.iter().filter_map(|r| r.metrics.aggregate.travel_time)),
        fov_rate: m(|r| r.aggregate.fov_rate),
        max_fov_frames: m(|r| r.aggregate.max_fov_frames),
        trans_violation_rate: m(|r| r.aggregate.trans_violation_rate),
        yaw_violation_rate: m(|r| r.aggregate.yaw_violation_rate),
        avg_cost: mean(runs.iter().filter_map(|r| r.metrics.aggregate.avg_cost)),
        accel_integral: m(|r| r.aggregate.accel_integral),
        jerk_integral: m(|r| r.aggregate.jerk_integral),
    }
}

/// Every repetition of one (environment, method) cell.
pub fn run_series(
    spec: &BenchSpec,
    env: &EnvSpec,
    method: &MethodSpec,
    student: Option<&Arc<PolicyNet>>,
) -> Result<Vec<RunRecord>> {
    (0..spec.repetitions)
        .map(|rep| {
            let scn = spec.scenario(env, method, rep);
            let res = run_with(&scn, student.cloned())?;
            log::info!(
                "{}: success {} travel {:?} compute {:.2} ms",
                scn.name,
                res.metrics.aggregate.success,
                res.metrics.aggregate.travel_time,
                res.metrics.aggregate.avg_computation_ms
            );
            Ok(RunRecord {
                env: env.name.clone(),
                method: method.label(),
                n_guesses: method.n_guesses,
                rep,
                seed: scn.seed,
                metrics: res.metrics,
            })
        })
        .collect()
}

pub fn benchmark(spec: &BenchSpec) -> Result<BenchTable> {
    spec.validate()?;
    let student = if spec.methods.iter().any(|m| m.planner == PlannerKind::Primer) {
        let path = spec.checkpoint.as_ref().ok_or_else(|| Error::InvalidConfig("PRIMER rows need a checkpoint".into()))?;
        Some(Arc::new(load_checkpoint(path)?))
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for env in &spec.environments {
        for method in &spec.methods {
            let cell = run_series(spec, env, method, student.as_ref())?;
            rows.push(summarize(&cell));
            runs.extend(cell);
        }
    }
    Ok(BenchTable { name: spec.name.clone(), rows, runs })
}

impl BenchTable {
    /// Writes `table.csv`, `table.json`, `runs.jsonl` and the per-run plot
    /// series `series.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("table.csv"))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        std::fs::write(dir.join("table.json"), serde_json::to_string_pretty(self.rows.as_slice())?)?;
        let mut lines = String::new();
        for r in &self.runs {
            lines.push_str(&serde_json::to_string(r)?);
            lines.push('\n');
        }
        std::fs::write(dir.join("runs.jsonl"), lines)?;
        let mut w = csv::Writer::from_path(dir.join("series.csv"))?;
        w.write_record([
            "env",
            "method",
            "n_guesses",
            "rep",
            "agent",
            "computation_ms",
            "travel_time",
            "accel_integral",
            "jerk_integral",
            "success",
        ])?;
        for r in &self.runs {
            for a in &r.metrics.agents {
                w.write_record([
                    r.env.clone(),
                    r.method.clone(),
                    r.n_guesses.to_string(),
                    r.rep.to_string(),
                    a.agent.to_string(),
                    format!("{}", a.avg_computation_ms),
                    a.travel_time.map(|t| t.to_string()).unwrap_or_default(),
                    format!("{}", a.accel_integral),
                    format!("{}", a.jerk_integral),
                    a.success.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
