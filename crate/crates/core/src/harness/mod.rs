//! Scenarios, the simulation driver, metrics and benchmark tables.

pub mod bench;
pub mod metrics;
pub mod scenario;
pub mod sim;

pub use bench::{benchmark, run_series, BenchRow, BenchSpec, BenchTable, EnvSpec, MethodSpec, RunRecord};
pub use metrics::{
    aggregate, fov_metrics, AgentMetrics, AgentState, Aggregate, FlownPath, FovMetrics, RunMetrics, Sighting, FRAME_DT,
};
pub use scenario::{build_circle_exchange, AgentSpec, CircleSpec, PlannerKind, Scenario, ScenarioFile};
pub use sim::{compute_metrics, min_separation, run, run_with, Frame, MessageRecord, RunLog, RunResult};
