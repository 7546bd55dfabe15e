//! Experiment harness: the strategy comparison, the smoothed loss curve and
//! the stability-under-load study.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::a3c::{self, detect_convergence, Hyperparams, Timing, TrainingLog};
use crate::baselines::{
    train_dqn, train_qlearning, DqnConfig, GreedyNet, PriorityRule, QLearningConfig, QPolicy, RoundRobin, Scheduler,
    Strategy,
};
use crate::error::{Error, Result};
use crate::simenv::{Action, ClusterConfig, ClusterSim, Observation, WindowEnv};
use crate::trace::{self, SynthOptions, TaskRecord, TraceStats, TraceWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum TraceSource {
    /// A trace CSV, cleaned before use.
    Csv { path: PathBuf },
    Synthetic {
        stats: TraceStats,
        horizon_ms: u64,
        seed: u64,
        #[serde(default)]
        options: SynthOptions,
    },
}

impl TraceSource {
    /// Loads the records; `load` scales the arrival rate of synthetic
    /// sources and must be 1 for files.
    pub fn records(&self, load: f64) -> Result<Vec<TaskRecord>> {
        match self {
            TraceSource::Csv { path } => {
                if load != 1.0 {
                    return Err(Error::InvalidConfig(
                        "load multipliers need a synthetic trace source".into(),
                    ));
                }
                Ok(trace::clean_records(&trace::parse_trace_csv(path)?).0)
            }
            TraceSource::Synthetic {
                stats,
                horizon_ms,
                seed,
                options,
            } => trace::generate_synthetic_with(&stats.with_load(load), *horizon_ms, *seed, options),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub cluster: ClusterConfig,
    pub trace: TraceSource,
    pub window_ms: u64,
    /// Trailing non-empty windows held out for evaluation; the rest train.
    pub eval_episodes: usize,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    /// Environment steps granted to every learning strategy.
    pub step_budget: u64,
    pub load_multipliers: Vec<f64>,
    pub sample_interval_ms: f64,
    pub a3c: Hyperparams,
    pub qlearning: QLearningConfig,
    pub dqn: DqnConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            cluster: ClusterConfig::default(),
            trace: TraceSource::Synthetic {
                stats: default_stats(),
                horizon_ms: 60_000,
                seed: 0,
                options: SynthOptions::default(),
            },
            window_ms: 5_000,
            eval_episodes: 2,
            strategies: Strategy::ALL.to_vec(),
            seeds: vec![0],
            step_budget: 20_000,
            load_multipliers: vec![0.5, 1.0, 2.0, 4.0],
            sample_interval_ms: 100.0,
            a3c: Hyperparams::default(),
            qlearning: QLearningConfig::default(),
            dqn: DqnConfig::default(),
        }
    }
}

fn default_stats() -> TraceStats {
    let mut priority_histogram = [0; trace::PRIORITY_BINS];
    priority_histogram[..].fill(1);
    TraceStats {
        task_count: 1000,
        cpu_req_mean: 0.2,
        cpu_req_std: 0.1,
        mem_req_mean: 0.2,
        mem_req_std: 0.1,
        duration_ms_mean: 500.0,
        duration_ms_std: 250.0,
        arrival_rate_per_s: 20.0,
        priority_histogram,
    }
}

impl ExperimentConfig {
    /// The 20-node contention scenario: about 5,000 synthetic tasks arriving
    /// faster than the cluster drains them, mostly at low priority, with
    /// round-robin placing roughly three tasks in four.
    pub fn contention() -> ExperimentConfig {
        let stats = TraceStats {
            task_count: 5_000,
            cpu_req_mean: 0.25,
            cpu_req_std: 0.15,
            mem_req_mean: 0.2,
            mem_req_std: 0.15,
            duration_ms_mean: 2_000.0,
            duration_ms_std: 1_000.0,
            arrival_rate_per_s: 80.0,
            priority_histogram: [30, 10, 20, 10, 10, 5, 3, 2, 3, 5, 1, 1],
        };
        ExperimentConfig {
            cluster: ClusterConfig {
                node_count: 20,
                max_queue_len: 8,
                ..ClusterConfig::default()
            },
            trace: TraceSource::Synthetic {
                stats,
                horizon_ms: 62_500,
                seed: 7,
                options: SynthOptions::default(),
            },
            window_ms: 10_000,
            eval_episodes: 2,
            strategies: Strategy::ALL.to_vec(),
            seeds: (0..5).collect(),
            step_budget: 200_000,
            load_multipliers: vec![0.5, 1.0, 2.0, 4.0],
            sample_interval_ms: 100.0,
            a3c: Hyperparams {
                gamma: 0.5,
                ..Hyperparams::default()
            },
            qlearning: QLearningConfig::default(),
            dqn: DqnConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.a3c.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.strategies.is_empty() {
            return bad("at least one strategy is required");
        }
        if self.window_ms == 0 {
            return bad("window_ms must be positive");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be at least 1");
        }
        if !(self.sample_interval_ms > 0.0) {
            return bad("sample_interval_ms must be positive");
        }
        if self.load_multipliers.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return bad("load multipliers must be positive");
        }
        Ok(())
    }

    /// Non-empty windows of the trace at `load`, split into (train, eval).
    pub fn windows(&self, load: f64) -> Result<(Vec<TraceWindow>, Vec<TraceWindow>)> {
        let records = self.trace.records(load)?;
        let windows: Vec<TraceWindow> = trace::segment_windows(&records, self.window_ms)
            .into_iter()
            .filter(|w| !w.is_empty())
            .collect();
        if windows.len() <= self.eval_episodes {
            return Err(Error::InvalidConfig(format!(
                "{} non-empty windows cannot hold out {} for evaluation",
                windows.len(),
                self.eval_episodes
            )));
        }
        let split = windows.len() - self.eval_episodes;
        let eval = windows[split..].to_vec();
        let mut train = windows;
        train.truncate(split);
        Ok((train, eval))
    }

    fn hyper(&self, timing: Timing) -> Hyperparams {
        Hyperparams {
            total_steps: self.step_budget,
            timing,
            ..self.a3c.clone()
        }
    }

    /// Baseline epochs cover as many environment steps as an actor-critic
    /// epoch, so convergence is measured on the same scale.
    fn steps_per_epoch(&self) -> u64 {
        self.a3c.updates_per_epoch * self.a3c.n_steps as u64
    }
}

/// Any of the five strategies in evaluable form.
#[derive(Debug, Clone)]
pub enum Policy {
    RoundRobin(RoundRobin),
    Priority(PriorityRule),
    Table(QPolicy),
    Net(GreedyNet),
}

impl Scheduler for Policy {
    fn select(&mut self, obs: &Observation, task: &TaskRecord) -> Action {
        match self {
            Policy::RoundRobin(p) => p.select(obs, task),
            Policy::Priority(p) => p.select(obs, task),
            Policy::Table(p) => p.select(obs, task),
            Policy::Net(p) => p.select(obs, task),
        }
    }
}

/// A trained or static policy together with its training log.
#[derive(Debug, Clone)]
pub struct Trained {
    pub policy: Policy,
    pub log: Option<TrainingLog>,
}

/// Builds `strategy` for `cluster`, training it on `train` when it learns.
pub fn train_strategy(
    exp: &ExperimentConfig,
    strategy: Strategy,
    train: &[TraceWindow],
    seed: u64,
    timing: Timing,
) -> Result<Trained> {
    let cluster = &exp.cluster;
    Ok(match strategy {
        Strategy::RoundRobin => Trained {
            policy: Policy::RoundRobin(RoundRobin::new(cluster.node_count)),
            log: None,
        },
        Strategy::Priority => Trained {
            policy: Policy::Priority(PriorityRule),
            log: None,
        },
        Strategy::Qlearning => {
            let cfg = QLearningConfig {
                total_steps: exp.step_budget,
                updates_per_epoch: exp.steps_per_epoch(),
                gamma: exp.a3c.gamma,
                ..exp.qlearning.clone()
            };
            let mut env = WindowEnv::new(cluster, train, 0, 1, seed)?;
            let (policy, log) = train_qlearning(&cfg, &mut env, seed, timing)?;
            Trained {
                policy: Policy::Table(policy),
                log: Some(log),
            }
        }
        Strategy::Dqn => {
            let cfg = DqnConfig {
                total_steps: exp.step_budget,
                updates_per_epoch: exp.steps_per_epoch(),
                gamma: exp.a3c.gamma,
                ..exp.dqn.clone()
            };
            let mut env = WindowEnv::new(cluster, train, 0, 1, seed)?;
            let (policy, log) = train_dqn(&cfg, &mut env, seed, timing)?;
            Trained {
                policy: Policy::Net(policy),
                log: Some(log),
            }
        }
        Strategy::A3c => {
            let (net, log) = a3c::train(&exp.hyper(timing), cluster, train, seed)?;
            Trained {
                policy: Policy::Net(GreedyNet { net }),
                log: Some(log),
            }
        }
    })
}

/// Raw counters from evaluating one policy on a set of windows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub total_tasks: usize,
    pub started: usize,
    pub failed: usize,
    pub delay_sum_ms: f64,
    pub util_area: f64,
    pub busy_span_ms: f64,
    pub balance_sum: f64,
    pub balance_samples: usize,
}

impl EvalCounts {
    /// Mean queueing delay over started tasks.
    pub fn mean_delay_ms(&self) -> f64 {
        if self.started == 0 {
            0.0
        } else {
            self.delay_sum_ms / self.started as f64
        }
    }

    pub fn success_rate_pct(&self) -> f64 {
        if self.total_tasks == 0 {
            0.0
        } else {
            100.0 * self.started as f64 / self.total_tasks as f64
        }
    }

    /// Time-averaged mean cpu reservation.
    pub fn utilization_pct(&self) -> f64 {
        if self.busy_span_ms > 0.0 {
            (100.0 * self.util_area / self.busy_span_ms).clamp(0.0, 100.0)
        } else {
            0.0
        }
    }

    /// Mean across samples of the cross-node utilization stddev.
    pub fn balance_stddev_pct(&self) -> f64 {
        if self.balance_samples == 0 {
            0.0
        } else {
            100.0 * self.balance_sum / self.balance_samples as f64
        }
    }
}

/// Runs `policy` greedily over every window. With `sample_interval_ms` set,
/// per-node utilization spread is sampled on that simulated-time grid.
/// `on_episode` sees each finished simulator.
pub fn evaluate_policy(
    policy: &mut dyn Scheduler,
    cluster: &ClusterConfig,
    windows: &[TraceWindow],
    seed: u64,
    sample_interval_ms: Option<f64>,
    mut on_episode: impl FnMut(&ClusterSim),
) -> Result<EvalCounts> {
    let mut c = EvalCounts::default();
    for w in windows.iter().filter(|w| !w.is_empty()) {
        let (mut sim, mut obs) = ClusterSim::reset(cluster, w, seed)?;
        if let Some(dt) = sample_interval_ms {
            sim.enable_sampling(dt);
        }
        loop {
            let task = *sim.current_task().expect("not done");
            let out = sim.step(policy.select(&obs, &task))?;
            match out.next_obs {
                Some(o) => obs = o,
                None => break,
            }
        }
        let s = sim.summary();
        c.total_tasks += s.total_tasks;
        c.started += s.succeeded;
        c.failed += s.failed;
        c.delay_sum_ms += s.delay_sum_ms;
        c.util_area += s.util_area;
        c.busy_span_ms += s.busy_span_ms;
        c.balance_sum += s.balance_samples.iter().sum::<f64>();
        c.balance_samples += s.balance_samples.len();
        on_episode(&sim);
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub mean_delay_ms: f64,
    pub success_rate_pct: f64,
    pub utilization_pct: f64,
    pub convergence_time_s: Option<f64>,
    pub total_tasks: usize,
    pub started: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyMetrics {
    pub strategy: Strategy,
    pub mean_delay_ms: f64,
    pub success_rate_pct: f64,
    pub utilization_pct: f64,
    /// Median over seeds; absent for static strategies and when the median
    /// seed never converged.
    pub convergence_time_s: Option<f64>,
    pub per_seed: Vec<SeedMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<StrategyMetrics>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Median with missing values ranked above every present one.
pub fn median_or_none(values: &[Option<f64>]) -> Option<f64> {
    let ranked: Vec<f64> = values.iter().map(|v| v.unwrap_or(f64::INFINITY)).collect();
    Some(median(&ranked)).filter(|m| m.is_finite())
}

impl StrategyMetrics {
    fn from_seeds(strategy: Strategy, per_seed: Vec<SeedMetrics>) -> StrategyMetrics {
        let col = |f: fn(&SeedMetrics) -> f64| median(&per_seed.iter().map(f).collect::<Vec<_>>());
        StrategyMetrics {
            strategy,
            mean_delay_ms: col(|s| s.mean_delay_ms),
            success_rate_pct: col(|s| s.success_rate_pct),
            utilization_pct: col(|s| s.utilization_pct),
            convergence_time_s: if strategy.learns() {
                median_or_none(&per_seed.iter().map(|s| s.convergence_time_s).collect::<Vec<_>>())
            } else {
                None
            },
            per_seed,
        }
    }
}

impl MetricsReport {
    pub fn row(&self, strategy: Strategy) -> Option<&StrategyMetrics> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialize") + "\n"
    }

    /// Aligned text table with one row per strategy; `-` marks a missing
    /// convergence time.
    pub fn to_table(&self) -> String {
        let header = [
            "Strategy",
            "Avg delay (ms)",
            "Success rate (%)",
            "Utilization (%)",
            "Convergence (s)",
        ];
        let mut rows = vec![header.map(String::from).to_vec()];
        for r in &self.rows {
            rows.push(vec![
                r.strategy.to_string(),
                format!("{:.1}", r.mean_delay_ms),
                format!("{:.1}", r.success_rate_pct),
                format!("{:.1}", r.utilization_pct),
                r.convergence_time_s.map_or("-".into(), |t| format!("{t:.2}")),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c == 0 {
                        format!("{s:<w$}", w = widths[c])
                    } else {
                        format!("{s:>w$}", w = widths[c])
                    }
                })
                .collect();
            writeln!(out, "{}", cells.join("  ").trim_end()).expect("string write");
        }
        out
    }
}

/// Trains every learning strategy under the shared step budget, evaluates
/// all strategies on the held-out windows and aggregates per-seed medians.
pub fn run_comparison(exp: &ExperimentConfig) -> Result<MetricsReport> {
    exp.validate()?;
    let (train, eval) = exp.windows(1.0)?;
    let mut rows = Vec::new();
    for &strategy in &exp.strategies {
        let mut per_seed = Vec::new();
        for &seed in &exp.seeds {
            log::info!("{strategy}: seed {seed}");
            let mut trained = train_strategy(exp, strategy, &train, seed, exp.a3c.timing)?;
            let c = evaluate_policy(&mut trained.policy, &exp.cluster, &eval, seed, None, |_| {})?;
            let convergence_time_s = trained
                .log
                .as_ref()
                .and_then(|l| detect_convergence(l, exp.a3c.convergence_window, exp.a3c.convergence_threshold));
            per_seed.push(SeedMetrics {
                seed,
                mean_delay_ms: c.mean_delay_ms(),
                success_rate_pct: c.success_rate_pct(),
                utilization_pct: c.utilization_pct(),
                convergence_time_s,
                total_tasks: c.total_tasks,
                started: c.started,
            });
        }
        rows.push(StrategyMetrics::from_seeds(strategy, per_seed));
    }
    Ok(MetricsReport { rows })
}

pub const LOSS_SMOOTHING: usize = 5;

/// Trailing moving average (window 5, shorter at the start) of the
/// per-epoch mean critic loss.
pub fn loss_curve(log: &TrainingLog) -> Result<Vec<f64>> {
    if log.epochs.is_empty() {
        return Err(Error::InvalidArgument("training log has no epochs".into()));
    }
    let loss: Vec<f64> = log.epochs.iter().map(|e| e.mean_critic_loss).collect();
    Ok((0..loss.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(LOSS_SMOOTHING);
            loss[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect())
}

pub fn loss_curve_csv(series: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, v) in series.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, v).expect("string write");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub load: f64,
    pub strategy: Strategy,
    /// Median over seeds of the mean sampled stddev, in percent.
    pub stddev: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilitySeries {
    pub points: Vec<StabilityPoint>,
}

impl StabilitySeries {
    pub fn get(&self, load: f64, strategy: Strategy) -> Option<&StabilityPoint> {
        self.points.iter().find(|p| p.load == load && p.strategy == strategy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("load,strategy,stddev\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.load, p.strategy, p.stddev).expect("string write");
        }
        out
    }
}

/// For every load multiplier, replays the synthetic trace at the scaled
/// arrival rate under each strategy (learners are trained at that load) and
/// records the sampled cross-node utilization spread.
pub fn stability_study(exp: &ExperimentConfig, load_multipliers: &[f64]) -> Result<StabilitySeries> {
    exp.validate()?;
    let mut series = StabilitySeries::default();
    for &load in load_multipliers {
        if !(load > 0.0 && load.is_finite()) {
            return Err(Error::InvalidConfig(format!("load multiplier {load} must be positive")));
        }
        let (train, eval) = exp.windows(load)?;
        for &strategy in &exp.strategies {
            let mut per_seed = Vec::new();
            for &seed in &exp.seeds {
                log::info!("stability {load}x {strategy}: seed {seed}");
                let mut trained = train_strategy(exp, strategy, &train, seed, exp.a3c.timing)?;
                let c = evaluate_policy(
                    &mut trained.policy,
                    &exp.cluster,
                    &eval,
                    seed,
                    Some(exp.sample_interval_ms),
                    |_| {},
                )?;
                per_seed.push(c.balance_stddev_pct());
            }
            series.points.push(StabilityPoint {
                load,
                strategy,
                stddev: median(&per_seed),
                per_seed,
            });
        }
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::a3c::EpochRecord;

    fn task(id: u64, t: f64, cpu: f64) -> TaskRecord {
        TaskRecord {
            task_id: id,
            submit_ms: t,
            cpu_req: cpu,
            mem_req: 0.1,
            duration_ms: 100.0,
            priority: 3,
            deadline_ms: 1000.0,
        }
    }

    fn window(records: Vec<TaskRecord>) -> TraceWindow {
        TraceWindow {
            window_index: 0,
            start_ms: 0.0,
            end_ms: 1000.0,
            records,
        }
    }

    fn log_of(losses: &[f64]) -> TrainingLog {
        TrainingLog {
            epochs: losses
                .iter()
                .enumerate()
                .map(|(i, &l)| EpochRecord {
                    epoch: i as u64 + 1,
                    global_updates: i as u64 + 1,
                    mean_critic_loss: l,
                    mean_reward: 0.0,
                    wall_clock_s: 0.0,
                })
                .collect(),
            rejected_updates: 0,
        }
    }

    #[test]
    fn single_task_on_empty_cluster() {
        let cluster = ClusterConfig::default();
        let w = [window(vec![task(0, 0.0, 0.3)])];
        for policy in [&mut RoundRobin::new(4) as &mut dyn Scheduler, &mut PriorityRule] {
            let c = evaluate_policy(policy, &cluster, &w, 0, None, |_| {}).unwrap();
            assert_eq!(c.mean_delay_ms(), 0.0);
            assert_eq!(c.success_rate_pct(), 100.0);
        }
    }

    #[test]
    fn one_node_collapses_policies() {
        let cluster = ClusterConfig {
            node_count: 1,
            max_queue_len: 2,
            ..Default::default()
        };
        let w = [window((0..12).map(|i| task(i, i as f64 * 10.0, 0.3)).collect())];
        let rr = evaluate_policy(&mut RoundRobin::new(1), &cluster, &w, 0, Some(50.0), |_| {}).unwrap();
        let pr = evaluate_policy(&mut PriorityRule, &cluster, &w, 0, Some(50.0), |_| {}).unwrap();
        assert_eq!(rr, pr);
        assert!(rr.failed > 0);
        assert_eq!(rr.balance_stddev_pct(), 0.0);
    }

    #[test]
    fn success_matches_task_csv_recount() {
        let cluster = ClusterConfig {
            node_count: 2,
            max_queue_len: 1,
            ..Default::default()
        };
        let w = [window((0..30).map(|i| task(i, i as f64 * 5.0, 0.45)).collect())];
        let mut csvs = Vec::new();
        let c = evaluate_policy(&mut RoundRobin::new(2), &cluster, &w, 0, None, |s| {
            csvs.push(s.task_csv())
        })
        .unwrap();
        let (mut started, mut total) = (0, 0);
        for line in csvs.concat().lines().filter(|l| !l.starts_with("task_id")) {
            total += 1;
            if !line.split(',').nth(2).unwrap().is_empty() {
                started += 1;
            }
        }
        assert_eq!(total, c.total_tasks);
        assert_eq!(100.0 * started as f64 / total as f64, c.success_rate_pct());
        assert!(c.success_rate_pct() < 100.0);
    }

    #[test]
    fn loss_curve_smoothing() {
        let flat = loss_curve(&log_of(&[2.0; 12])).unwrap();
        assert_eq!(flat, vec![2.0; 12]);
        let s = loss_curve(&log_of(&[5.0, 1.0, 3.0, 3.0, 3.0, 0.0])).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s[0], 5.0);
        assert_eq!(s[1], 3.0);
        assert_eq!(s[4], 3.0);
        assert_eq!(s[5], 2.0);
        assert!(loss_curve(&TrainingLog::default()).is_err());
        let csv = loss_curve_csv(&s);
        assert!(csv.starts_with("epoch,loss\n1,5\n"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median_or_none(&[Some(1.0), None, Some(2.0)]), Some(2.0));
        assert_eq!(median_or_none(&[Some(1.0), None, None]), None);
    }

    #[test]
    fn table_marks_static_convergence() {
        let row = |s, c| StrategyMetrics {
            strategy: s,
            mean_delay_ms: 1.0,
            success_rate_pct: 50.0,
            utilization_pct: 10.0,
            convergence_time_s: c,
            per_seed: vec![],
        };
        let report = MetricsReport {
            rows: vec![row(Strategy::RoundRobin, None), row(Strategy::A3c, Some(1.5))],
        };
        let table = report.to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("round_robin") && lines[1].ends_with('-'));
        assert!(lines[2].ends_with("1.50"));
        let back: MetricsReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let no_seeds = ExperimentConfig {
            seeds: vec![],
            ..Default::default()
        };
        assert!(no_seeds.validate().is_err());
        let no_strategies = ExperimentConfig {
            strategies: vec![],
            ..Default::default()
        };
        assert!(no_strategies.validate().is_err());
    }
}
