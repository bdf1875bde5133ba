//! Perception-aware multi-agent trajectory planning.
//!
//! The crate bundles an optimization-based expert planner, an asynchronous
//! trajectory deconfliction protocol running over a simulated network, an
//! imitation-learned student policy and the benchmark harness that compares
//! them.

pub mod deconflict;
pub mod error;
pub mod harness;
pub mod netsim;
pub mod optimizer;
pub mod policy;
pub mod traj;
pub mod world;

pub use error::{Error, Result};
