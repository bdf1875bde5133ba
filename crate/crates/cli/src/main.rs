use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use primer_core::deconflict::ExpertPlanner;
use primer_core::harness::{benchmark, run_with, BenchSpec, PlannerKind, RunLog, RunResult, Scenario};
use primer_core::policy::{load_checkpoint, save_checkpoint, save_dataset, train_dagger, TrainConfig};

#[derive(Parser)]
#[command(name = "primer", version, about = "Multi-agent perception-aware trajectory planning")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one scenario file and report its metrics.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for metrics.csv, metrics.json and run.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every environment and method of a benchmark spec.
    Benchmark {
        spec: PathBuf,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
    },
    /// Train the student policy with DAgger against the optimizer.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "policy.ckpt")]
        out: PathBuf,
        /// Also save the aggregated demonstrations as JSON lines.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Fly a scenario with every agent driven by a trained policy.
    EvalPolicy {
        checkpoint: PathBuf,
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a run log into CSV series for plotting.
    PlotData {
        log: PathBuf,
        #[arg(long, default_value = "plot-data")]
        out: PathBuf,
    },
}

fn report(res: &RunResult, out: Option<&Path>) -> Result<()> {
    let a = &res.metrics.aggregate;
    println!("{}", res.log.scenario);
    println!("  success            {}", a.success);
    match a.travel_time {
        Some(t) => println!("  travel time        {t:.2} s"),
        None => println!("  travel time        -"),
    }
    println!("  computation        {:.2} ms", a.avg_computation_ms);
    println!("  fov rate           {:.1} %", a.fov_rate);
    println!("  violations         {:.1} % trans, {:.1} % yaw", a.trans_violation_rate, a.yaw_violation_rate);
    println!("  smoothness         {:.2} accel, {:.2} jerk", a.accel_integral, a.jerk_integral);
    if let Some(d) = res.metrics.min_inter_agent_distance {
        println!("  min separation     {d:.3} m");
    }
    if let Some(dir) = out {
        res.write(dir).with_context(|| format!("writing {}", dir.display()))?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Run { scenario, seed, out } => {
            let scn = Scenario::load_with_seed(&scenario, seed).with_context(|| format!("loading {}", scenario.display()))?;
            let student = match &scn.checkpoint {
                Some(ck) if scn.agents.iter().any(|a| a.planner == PlannerKind::Primer) => Some(Arc::new(load_checkpoint(ck)?)),
                _ => None,
            };
            report(&run_with(&scn, student)?, out.as_deref())
        }
        Cmd::Benchmark { spec, out } => {
            let spec = BenchSpec::load(&spec).with_context(|| format!("loading {}", spec.display()))?;
            let table = benchmark(&spec)?;
            println!(
                "{:<10} {:<10} {:>2} {:>8} {:>9} {:>9} {:>7} {:>9} {:>9}",
                "env", "method", "ng", "comp ms", "success %", "travel s", "fov %", "accel", "jerk"
            );
            for r in &table.rows {
                let travel = r.travel_time.map(|t| format!("{t:.2}")).unwrap_or_else(|| "-".into());
                println!(
                    "{:<10} {:<10} {:>2} {:>8.2} {:>9.0} {:>9} {:>7.1} {:>9.2} {:>9.2}",
                    r.env,
                    r.method,
                    r.n_guesses,
                    r.avg_computation_ms,
                    r.success_rate,
                    travel,
                    r.fov_rate,
                    r.accel_integral,
                    r.jerk_integral
                );
            }
            table.write(&out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Train { config, out, dataset } => {
            let cfg = match &config {
                Some(p) => TrainConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => TrainConfig::default(),
            };
            let outcome = train_dagger(&cfg, &ExpertPlanner::new(true, cfg.expert_guesses), &cfg.env)?;
            for r in &outcome.rounds {
                println!(
                    "round {} beta {:.2}: {} demos (dataset {}), loss {:.3} -> {:.3}",
                    r.round, r.beta, r.new_demos, r.dataset_size, r.loss_start, r.loss_end
                );
            }
            save_checkpoint(&outcome.net, &out)?;
            let curve = out.with_extension("rounds.json");
            std::fs::write(&curve, serde_json::to_string_pretty(&outcome.rounds)?)?;
            if let Some(p) = dataset {
                save_dataset(&outcome.dataset, &p)?;
            }
            println!("wrote {} and {}", out.display(), curve.display());
            Ok(())
        }
        Cmd::EvalPolicy { checkpoint, scenario, seed, out } => {
            let net = Arc::new(load_checkpoint(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?);
            let mut scn = Scenario::load_with_seed(&scenario, seed)?;
            if scn.agents.is_empty() {
                bail!("{} has no agents", scenario.display());
            }
            for a in &mut scn.agents {
                a.planner = PlannerKind::Primer;
            }
            report(&run_with(&scn, Some(net))?, out.as_deref())
        }
        Cmd::PlotData { log, out } => {
            let text = std::fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            RunLog::read_jsonl(&text)?.write_plot_data(&out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}
