use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sched_core::a3c::{self, Hyperparams};
use sched_core::baselines::{DqnConfig, QLearningConfig, Strategy};
use sched_core::bench::{self, ExperimentConfig, Policy, TraceSource};
use sched_core::simenv::ClusterConfig;
use sched_core::{gradcheck, nn, trace};

#[derive(Parser)]
#[command(
    name = "sched",
    version,
    about = "Trace-driven cluster scheduling with actor-critic learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a trace CSV from summary statistics.
    GenTrace {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        horizon_ms: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one learning strategy and write its checkpoint and log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every configured strategy.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Utilization spread of every strategy across load levels.
    Stability {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long)]
        seed: u64,
    },
}

/// Experiment knobs other than the cluster, learner and trace blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExperimentBlock {
    window_ms: u64,
    eval_episodes: usize,
    strategies: Vec<Strategy>,
    seeds: Option<Vec<u64>>,
    /// Defaults to `hyperparams.total_steps`.
    step_budget: Option<u64>,
    load_multipliers: Vec<f64>,
    sample_interval_ms: f64,
    qlearning: QLearningConfig,
    dqn: DqnConfig,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        ExperimentBlock {
            window_ms: d.window_ms,
            eval_episodes: d.eval_episodes,
            strategies: d.strategies,
            seeds: None,
            step_budget: None,
            load_multipliers: d.load_multipliers,
            sample_interval_ms: d.sample_interval_ms,
            qlearning: d.qlearning,
            dqn: d.dqn,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(default)]
    cluster: ClusterConfig,
    #[serde(default)]
    hyperparams: Hyperparams,
    trace: TraceSource,
    #[serde(default)]
    experiment: ExperimentBlock,
    /// Ignored in favour of `--out`; accepted so a config can record it.
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
}

impl RunConfig {
    fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        if let TraceSource::Csv { path: trace } = &mut cfg.trace {
            if trace.is_relative() {
                *trace = path.parent().unwrap_or(Path::new(".")).join(&*trace);
            }
        }
        cfg.experiment().validate()?;
        Ok(cfg)
    }

    fn experiment(&self) -> ExperimentConfig {
        let e = &self.experiment;
        ExperimentConfig {
            cluster: self.cluster.clone(),
            trace: self.trace.clone(),
            window_ms: e.window_ms,
            eval_episodes: e.eval_episodes,
            strategies: e.strategies.clone(),
            seeds: e.seeds.clone().unwrap_or_else(|| vec![self.seed]),
            step_budget: e.step_budget.unwrap_or(self.hyperparams.total_steps),
            load_multipliers: e.load_multipliers.clone(),
            sample_interval_ms: e.sample_interval_ms,
            a3c: self.hyperparams.clone(),
            qlearning: e.qlearning.clone(),
            dqn: e.dqn.clone(),
        }
    }
}

/// Usage and configuration problems exit with 2, runtime failures with 1.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn usage<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Usage)
}

fn runtime<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Runtime)
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn out_dir(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))
}

fn gen_trace(stats: &Path, horizon_ms: u64, seed: u64, out: &Path) -> Result<(), Failure> {
    let stats = usage(trace::TraceStats::from_json_file(stats).map_err(anyhow::Error::from))?;
    let records = usage(trace::generate_synthetic(&stats, horizon_ms, seed).map_err(anyhow::Error::from))?;
    runtime(trace::write_trace_csv(out, &records).map_err(anyhow::Error::from))?;
    println!("wrote {} tasks to {}", records.len(), out.display());
    Ok(())
}

fn train(config: &Path, strategy: &str, out: &Path) -> Result<(), Failure> {
    let strategy: Strategy = usage(strategy.parse().map_err(anyhow::Error::from))?;
    if !strategy.learns() {
        return Err(Failure::Usage(anyhow!("{strategy}: strategy has no training phase")));
    }
    let cfg = usage(RunConfig::load(config))?;
    let exp = cfg.experiment();
    let (windows, _) = usage(exp.windows(1.0).map_err(anyhow::Error::from))?;
    runtime(out_dir(out))?;
    let trained = runtime(
        bench::train_strategy(&exp, strategy, &windows, cfg.seed, cfg.hyperparams.timing).map_err(anyhow::Error::from),
    )?;
    match &trained.policy {
        Policy::Net(p) => runtime(nn::save_checkpoint(&p.net, &out.join("model.bin")).map_err(anyhow::Error::from))?,
        Policy::Table(p) => runtime(write(&out.join("qtable.json"), &(p.table.to_json() + "\n")))?,
        Policy::RoundRobin(_) | Policy::Priority(_) => unreachable!("static strategies rejected above"),
    }
    let log = trained.log.unwrap_or_default();
    runtime(write(&out.join("training_log.csv"), &log.to_csv()))?;
    if let Ok(curve) = bench::loss_curve(&log) {
        runtime(write(&out.join("loss_curve.csv"), &bench::loss_curve_csv(&curve)))?;
    }
    let converged = a3c::detect_convergence(
        &log,
        cfg.hyperparams.convergence_window,
        cfg.hyperparams.convergence_threshold,
    );
    println!(
        "{strategy}: {} epochs, {} rejected updates, converged at {}",
        log.epochs.len(),
        log.rejected_updates,
        converged.map_or("-".into(), |t| format!("{t:.2} s"))
    );
    Ok(())
}

fn compare(config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = usage(RunConfig::load(config))?;
    let exp = cfg.experiment();
    usage(exp.windows(1.0).map(drop).map_err(anyhow::Error::from))?;
    let report = runtime(bench::run_comparison(&exp).map_err(anyhow::Error::from))?;
    runtime(out_dir(out))?;
    runtime(write(&out.join("report.json"), &report.to_json()))?;
    let table = report.to_table();
    runtime(write(&out.join("table.txt"), &table))?;
    print!("{table}");
    Ok(())
}

fn stability(config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = usage(RunConfig::load(config))?;
    let exp = cfg.experiment();
    for &load in &exp.load_multipliers {
        usage(exp.windows(load).map(drop).map_err(anyhow::Error::from))?;
    }
    let series = runtime(bench::stability_study(&exp, &exp.load_multipliers).map_err(anyhow::Error::from))?;
    runtime(out_dir(out))?;
    let csv = series.to_csv();
    runtime(write(&out.join("stability.csv"), &csv))?;
    print!("{csv}");
    Ok(())
}

fn gradcheck(seed: u64) -> Result<(), Failure> {
    let worst = gradcheck::run(seed, 100);
    println!(
        "max relative error {worst:.3e} over 100 cases (tolerance {:.0e})",
        gradcheck::TOLERANCE
    );
    if worst < gradcheck::TOLERANCE {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!("gradient check failed")))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenTrace {
            stats,
            horizon_ms,
            seed,
            out,
        } => gen_trace(&stats, horizon_ms, seed, &out),
        Command::Train { config, strategy, out } => train(&config, &strategy, &out),
        Command::Compare { config, out } => compare(&config, &out),
        Command::Stability { config, out } => stability(&config, &out),
        Command::Gradcheck { seed } => gradcheck(seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SCHED_LOG", "off")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
