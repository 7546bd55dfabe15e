//! Discrete-event cluster simulator with a step/reward interface.
//!
//! One episode replays one [`TraceWindow`]. Each call to [`ClusterSim::step`]
//! places the task that just arrived on a node, then advances the clock to
//! the next arrival, processing completions and queue promotions on the way.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{TaskRecord, TraceWindow, MAX_PRIORITY};

const CAPACITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub node_count: usize,
    pub cpu_capacity: f64,
    pub mem_capacity: f64,
    pub max_queue_len: usize,
    pub w_success: f64,
    pub w_delay: f64,
    pub w_balance: f64,
    pub reference_delay_ms: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            node_count: 4,
            cpu_capacity: 1.0,
            mem_capacity: 1.0,
            max_queue_len: 8,
            w_success: 1.0,
            w_delay: 0.5,
            w_balance: 0.25,
            reference_delay_ms: 1000.0,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.node_count == 0 {
            return bad("node_count must be at least 1");
        }
        if !(self.cpu_capacity > 0.0 && self.mem_capacity > 0.0) {
            return bad("capacities must be positive");
        }
        if self.max_queue_len == 0 {
            return bad("max_queue_len must be at least 1");
        }
        if !(self.w_success >= 0.0 && self.w_delay >= 0.0 && self.w_balance >= 0.0) {
            return bad("reward weights must be non-negative");
        }
        if !(self.reference_delay_ms > 0.0) {
            return bad("reference_delay_ms must be positive");
        }
        Ok(())
    }

    /// Length of an observation vector for this cluster.
    pub fn obs_len(&self) -> usize {
        obs_len(self.node_count)
    }

    pub fn from_json_file(path: &Path) -> Result<ClusterConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ClusterConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn obs_len(node_count: usize) -> usize {
    3 * node_count + 4
}

/// Per-node features come first as `(free_cpu, free_mem, queue_fill)`
/// triples, followed by the arriving task's `cpu_req`, `mem_req`,
/// `priority / 11` and the elapsed fraction of the episode window.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Node count implied by the vector length.
    pub fn node_count(&self) -> usize {
        (self.0.len() - 4) / 3
    }

    pub fn free_cpu(&self, node: usize) -> f64 {
        self.0[3 * node]
    }

    pub fn free_mem(&self, node: usize) -> f64 {
        self.0[3 * node + 1]
    }

    pub fn queue_fill(&self, node: usize) -> f64 {
        self.0[3 * node + 2]
    }

    pub fn task_cpu(&self) -> f64 {
        self.0[self.0.len() - 4]
    }
}

/// Index of the node a task is sent to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action(pub usize);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepInfo {
    pub completions: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    /// `None` once the episode is over.
    pub next_obs: Option<Observation>,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskState {
    Queued,
    Running,
    Completed,
    Failed,
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskState::Queued => "queued",
            TaskState::Running => "running",
            TaskState::Completed => "completed",
            TaskState::Failed => "failed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub record: TaskRecord,
    pub state: TaskState,
    pub assigned_node: usize,
    pub start_ms: Option<f64>,
    pub finish_ms: Option<f64>,
}

impl TaskInstance {
    /// Queueing delay, for tasks that started.
    pub fn delay_ms(&self) -> Option<f64> {
        self.start_ms.map(|s| s - self.record.submit_ms)
    }
}

#[derive(Debug, Clone, Default)]
pub struct NodeState {
    pub cpu_used: f64,
    pub mem_used: f64,
    /// Indices into the episode's task list.
    pub running: Vec<usize>,
    pub queue: VecDeque<usize>,
}

/// Immediate result of placing a task, as seen by the reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dispatch {
    Started,
    Queued {
        /// Wait predicted from the node's current running set and queue,
        /// or `None` if the task is predicted to expire in the queue.
        projected_wait_ms: Option<f64>,
    },
    Rejected,
}

/// Reward for one dispatch.
///
/// `r = w_success·[started in deadline] − w_delay·min(delay/ref, 1) −
/// w_balance·σ(cpu_used)`, and `−w_success` for a rejected task.
pub fn compute_reward(config: &ClusterConfig, dispatch: Dispatch, cpu_used: &[f64]) -> f64 {
    let (in_deadline, delay) = match dispatch {
        Dispatch::Rejected => return -config.w_success,
        Dispatch::Started => (true, 0.0),
        Dispatch::Queued {
            projected_wait_ms: Some(w),
        } => (true, w),
        Dispatch::Queued {
            projected_wait_ms: None,
        } => (false, f64::INFINITY),
    };
    let success = if in_deadline { config.w_success } else { 0.0 };
    let delay_term = (delay / config.reference_delay_ms).min(1.0);
    success - config.w_delay * delay_term - config.w_balance * population_std(cpu_used)
}

pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Completion {
    time: f64,
    node: usize,
    task: usize,
}

impl Eq for Completion {}

impl Ord for Completion {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.node.cmp(&other.node))
            .then(self.task.cmp(&other.task))
    }
}

impl PartialOrd for Completion {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Utilization snapshot: per-node reserved cpu fraction and its mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Utilization {
    pub per_node: Vec<f64>,
    pub mean: f64,
}

/// Aggregate counters for a finished (or in-progress) episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeSummary {
    pub total_tasks: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub delay_sum_ms: f64,
    /// Integral of mean cpu utilization over simulated time.
    pub util_area: f64,
    pub busy_span_ms: f64,
    /// Cross-node utilization standard deviations at each sample instant.
    pub balance_samples: Vec<f64>,
}

impl EpisodeSummary {
    pub fn mean_utilization(&self) -> f64 {
        if self.busy_span_ms > 0.0 {
            self.util_area / self.busy_span_ms
        } else {
            0.0
        }
    }
}

/// The cluster simulator. Single owner; one instance per worker.
#[derive(Debug, Clone)]
pub struct ClusterSim {
    config: ClusterConfig,
    nodes: Vec<NodeState>,
    tasks: Vec<TaskInstance>,
    pending: Vec<TaskRecord>,
    next_arrival: usize,
    events: BinaryHeap<Reverse<Completion>>,
    clock: f64,
    window_start: f64,
    window_end: f64,
    first_arrival: f64,
    util_area: f64,
    sample_interval_ms: Option<f64>,
    next_sample: f64,
    balance_samples: Vec<f64>,
    done: bool,
    seed: u64,
}

impl ClusterSim {
    /// Starts an episode over `window`. The simulator is deterministic;
    /// `seed` is recorded but the dynamics draw no randomness.
    pub fn reset(config: &ClusterConfig, window: &TraceWindow, seed: u64) -> Result<(ClusterSim, Observation)> {
        config.validate()?;
        if window.records.is_empty() {
            return Err(Error::EmptyWindow);
        }
        let mut pending = window.records.clone();
        pending.sort_by(|a, b| a.submit_ms.total_cmp(&b.submit_ms));
        let first = pending[0].submit_ms.max(window.start_ms);
        let sim = ClusterSim {
            config: config.clone(),
            nodes: vec![NodeState::default(); config.node_count],
            tasks: Vec::with_capacity(pending.len()),
            pending,
            next_arrival: 0,
            events: BinaryHeap::new(),
            clock: first,
            window_start: window.start_ms,
            window_end: window.end_ms.max(first + 1.0),
            first_arrival: first,
            util_area: 0.0,
            sample_interval_ms: None,
            next_sample: first,
            balance_samples: Vec::new(),
            done: false,
            seed,
        };
        let obs = sim.observe();
        Ok((sim, obs))
    }

    /// Records cross-node utilization spread every `interval_ms` of
    /// simulated time from the first arrival onwards.
    pub fn enable_sampling(&mut self, interval_ms: f64) {
        assert!(interval_ms > 0.0);
        self.sample_interval_ms = Some(interval_ms);
        self.next_sample = self.clock;
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn tasks(&self) -> &[TaskInstance] {
        &self.tasks
    }

    /// The task awaiting placement, if any.
    pub fn current_task(&self) -> Option<&TaskRecord> {
        if self.done {
            None
        } else {
            self.pending.get(self.next_arrival)
        }
    }

    pub fn window_len(&self) -> usize {
        self.pending.len()
    }

    pub fn utilization(&self) -> Utilization {
        let per_node: Vec<f64> = self
            .nodes
            .iter()
            .map(|n| n.cpu_used / self.config.cpu_capacity)
            .collect();
        let mean = per_node.iter().sum::<f64>() / per_node.len() as f64;
        Utilization { per_node, mean }
    }

    fn cpu_fractions(&self) -> Vec<f64> {
        self.utilization().per_node
    }

    /// Observation for the current task; `None` once done.
    pub fn observation(&self) -> Option<Observation> {
        (!self.done).then(|| self.observe())
    }

    fn observe(&self) -> Observation {
        let cfg = &self.config;
        let mut v = Vec::with_capacity(cfg.obs_len());
        for n in &self.nodes {
            v.push((1.0 - n.cpu_used / cfg.cpu_capacity).clamp(0.0, 1.0));
            v.push((1.0 - n.mem_used / cfg.mem_capacity).clamp(0.0, 1.0));
            v.push((n.queue.len() as f64 / cfg.max_queue_len as f64).clamp(0.0, 1.0));
        }
        let task = &self.pending[self.next_arrival];
        v.push(task.cpu_req.clamp(0.0, 1.0));
        v.push(task.mem_req.clamp(0.0, 1.0));
        v.push((task.priority.min(MAX_PRIORITY) as f64) / MAX_PRIORITY as f64);
        let span = self.window_end - self.window_start;
        v.push(((self.clock - self.window_start) / span).clamp(0.0, 1.0));
        Observation(v)
    }

    fn fits(&self, node: usize, rec: &TaskRecord) -> bool {
        let n = &self.nodes[node];
        n.cpu_used + rec.cpu_req <= self.config.cpu_capacity + CAPACITY_SLACK
            && n.mem_used + rec.mem_req <= self.config.mem_capacity + CAPACITY_SLACK
    }

    fn start(&mut self, node: usize, task: usize) {
        let rec = self.tasks[task].record;
        let n = &mut self.nodes[node];
        n.cpu_used += rec.cpu_req;
        n.mem_used += rec.mem_req;
        n.running.push(task);
        let t = &mut self.tasks[task];
        t.state = TaskState::Running;
        t.start_ms = Some(self.clock);
        let finish = self.clock + rec.duration_ms;
        t.finish_ms = Some(finish);
        self.events.push(Reverse(Completion {
            time: finish,
            node,
            task,
        }));
    }

    /// Places the current task on `action`'s node and advances the clock to
    /// the next arrival (or drains the cluster after the last one).
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let node = action.0;
        if node >= self.config.node_count {
            return Err(Error::ActionOutOfRange {
                action: node,
                n: self.config.node_count,
            });
        }
        let mut info = StepInfo::default();
        let rec = self.pending[self.next_arrival];
        let task = self.tasks.len();
        self.tasks.push(TaskInstance {
            record: rec,
            state: TaskState::Queued,
            assigned_node: node,
            start_ms: None,
            finish_ms: None,
        });
        self.next_arrival += 1;

        let dispatch = if self.fits(node, &rec) {
            self.start(node, task);
            Dispatch::Started
        } else if self.nodes[node].queue.len() < self.config.max_queue_len {
            self.nodes[node].queue.push_back(task);
            Dispatch::Queued {
                projected_wait_ms: self.project_wait(node, task),
            }
        } else {
            self.tasks[task].state = TaskState::Failed;
            info.failures += 1;
            Dispatch::Rejected
        };
        let reward = compute_reward(&self.config, dispatch, &self.cpu_fractions());

        match self.pending.get(self.next_arrival) {
            Some(next) => {
                let t = next.submit_ms.max(self.clock);
                self.advance(Some(t), &mut info);
            }
            None => {
                self.advance(None, &mut info);
                self.done = true;
            }
        }
        Ok(StepOutcome {
            reward,
            next_obs: self.observation(),
            done: self.done,
            info,
        })
    }

    /// Processes events up to `target` (inclusive), or until no events remain
    /// when `target` is `None`.
    fn advance(&mut self, target: Option<f64>, info: &mut StepInfo) {
        loop {
            let next_event = self.events.peek().map(|Reverse(c)| c.time);
            let horizon = match (target, next_event) {
                (Some(t), _) => t,
                (None, Some(e)) => e,
                (None, None) => break,
            };
            let next_sample = self.sample_interval_ms.map(|_| self.next_sample);
            match (next_event, next_sample) {
                (Some(e), s) if e <= horizon && s.is_none_or(|s| e <= s) => {
                    let Reverse(c) = self.events.pop().expect("peeked");
                    self.move_clock(c.time);
                    self.complete(c, info);
                }
                (_, Some(s)) if s <= horizon => {
                    self.move_clock(s);
                    self.balance_samples.push(population_std(&self.cpu_fractions()));
                    self.next_sample += self.sample_interval_ms.expect("sampling");
                }
                _ => {
                    self.move_clock(horizon);
                    if target.is_some() {
                        break;
                    }
                }
            }
        }
    }

    fn move_clock(&mut self, t: f64) {
        debug_assert!(t >= self.clock);
        if t > self.clock {
            self.util_area += self.utilization().mean * (t - self.clock);
            self.clock = t;
        }
    }

    fn complete(&mut self, c: Completion, info: &mut StepInfo) {
        let rec = self.tasks[c.task].record;
        let n = &mut self.nodes[c.node];
        n.running.retain(|&t| t != c.task);
        if n.running.is_empty() {
            n.cpu_used = 0.0;
            n.mem_used = 0.0;
        } else {
            n.cpu_used = (n.cpu_used - rec.cpu_req).max(0.0);
            n.mem_used = (n.mem_used - rec.mem_req).max(0.0);
        }
        self.tasks[c.task].state = TaskState::Completed;
        info.completions += 1;
        self.promote(c.node, info);
    }

    /// FIFO promotion: expired heads fail, fitting heads start, the first
    /// head that does not fit blocks the rest.
    fn promote(&mut self, node: usize, info: &mut StepInfo) {
        while let Some(&head) = self.nodes[node].queue.front() {
            let rec = self.tasks[head].record;
            if self.clock - rec.submit_ms > rec.deadline_ms {
                self.nodes[node].queue.pop_front();
                self.tasks[head].state = TaskState::Failed;
                info.failures += 1;
            } else if self.fits(node, &rec) {
                self.nodes[node].queue.pop_front();
                self.start(node, head);
            } else {
                break;
            }
        }
    }

    /// Predicts when the queued `task` would start on `node` if nothing else
    /// were placed there, replaying the node's completions and FIFO
    /// promotions. `None` when it would expire first.
    fn project_wait(&self, node: usize, task: usize) -> Option<f64> {
        let n = &self.nodes[node];
        let mut cpu = n.cpu_used;
        let mut mem = n.mem_used;
        let mut finishing: BinaryHeap<Reverse<Completion>> = n
            .running
            .iter()
            .map(|&t| {
                Reverse(Completion {
                    time: self.tasks[t].finish_ms.expect("running task has finish"),
                    node,
                    task: t,
                })
            })
            .collect();
        let mut queue: VecDeque<usize> = n.queue.clone();
        let cap_cpu = self.config.cpu_capacity + CAPACITY_SLACK;
        let cap_mem = self.config.mem_capacity + CAPACITY_SLACK;
        while let Some(Reverse(c)) = finishing.pop() {
            let now = c.time;
            let r = &self.tasks[c.task].record;
            cpu -= r.cpu_req;
            mem -= r.mem_req;
            if finishing.is_empty() {
                cpu = 0.0;
                mem = 0.0;
            }
            while let Some(&head) = queue.front() {
                let hr = &self.tasks[head].record;
                if now - hr.submit_ms > hr.deadline_ms {
                    queue.pop_front();
                    if head == task {
                        return None;
                    }
                } else if cpu + hr.cpu_req <= cap_cpu && mem + hr.mem_req <= cap_mem {
                    queue.pop_front();
                    if head == task {
                        return Some(now - hr.submit_ms);
                    }
                    cpu += hr.cpu_req;
                    mem += hr.mem_req;
                    finishing.push(Reverse(Completion {
                        time: now + hr.duration_ms,
                        node,
                        task: head,
                    }));
                } else {
                    break;
                }
            }
        }
        None
    }

    /// Counts of dispatched tasks by state: queued, running, completed, failed.
    pub fn state_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for t in &self.tasks {
            c[t.state as usize] += 1;
        }
        c
    }

    /// Checks capacity conservation and task accounting; returns a
    /// description of the first violation found.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (i, n) in self.nodes.iter().enumerate() {
            let cpu: f64 = n.running.iter().map(|&t| self.tasks[t].record.cpu_req).sum();
            let mem: f64 = n.running.iter().map(|&t| self.tasks[t].record.mem_req).sum();
            if (cpu - n.cpu_used).abs() > 1e-9 || (mem - n.mem_used).abs() > 1e-9 {
                return Err(format!("node {i}: reservation drift cpu {cpu} vs {}", n.cpu_used));
            }
            if n.cpu_used > self.config.cpu_capacity + 1e-9 || n.mem_used > self.config.mem_capacity + 1e-9 {
                return Err(format!("node {i}: over capacity ({}, {})", n.cpu_used, n.mem_used));
            }
            if n.queue.len() > self.config.max_queue_len {
                return Err(format!("node {i}: queue overflow"));
            }
            if n.running.iter().any(|&t| self.tasks[t].state != TaskState::Running) {
                return Err(format!("node {i}: non-running task in running set"));
            }
            if n.queue.iter().any(|&t| self.tasks[t].state != TaskState::Queued) {
                return Err(format!("node {i}: non-queued task in queue"));
            }
        }
        let [q, r, c, f] = self.state_counts();
        if q + r + c + f != self.next_arrival || self.tasks.len() != self.next_arrival {
            return Err("task accounting mismatch".into());
        }
        let queued: usize = self.nodes.iter().map(|n| n.queue.len()).sum();
        let running: usize = self.nodes.iter().map(|n| n.running.len()).sum();
        if queued != q || running != r {
            return Err("state counts disagree with node contents".into());
        }
        if self.done && (q != 0 || r != 0 || self.tasks.len() != self.pending.len()) {
            return Err("episode done with live tasks".into());
        }
        for t in &self.tasks {
            if let Some(s) = t.start_ms {
                if s < t.record.submit_ms {
                    return Err(format!("task {} started before submission", t.record.task_id));
                }
                if t.finish_ms != Some(s + t.record.duration_ms) {
                    return Err(format!("task {} finish mismatch", t.record.task_id));
                }
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> EpisodeSummary {
        let mut s = EpisodeSummary {
            total_tasks: self.pending.len(),
            util_area: self.util_area,
            busy_span_ms: self.clock - self.first_arrival,
            balance_samples: self.balance_samples.clone(),
            ..Default::default()
        };
        for t in &self.tasks {
            match t.delay_ms() {
                Some(d) => {
                    s.succeeded += 1;
                    s.delay_sum_ms += d;
                }
                None if t.state == TaskState::Failed => s.failed += 1,
                None => {}
            }
        }
        s
    }

    /// Per-task rows `task_id,node,start_ms,finish_ms,state,delay_ms`.
    pub fn task_csv(&self) -> String {
        let mut out = String::from("task_id,node,start_ms,finish_ms,state,delay_ms\n");
        for t in &self.tasks {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                t.record.task_id,
                t.assigned_node,
                opt(t.start_ms),
                opt(t.finish_ms),
                t.state,
                opt(t.delay_ms()),
            ));
        }
        out
    }
}

/// An episodic decision process over a fixed action set, as consumed by the
/// learners.
pub trait Environment {
    fn n_actions(&self) -> usize;
    fn obs_len(&self) -> usize;
    /// Begins the next episode and returns its first observation.
    fn reset(&mut self) -> Result<Observation>;
    fn step(&mut self, action: Action) -> Result<StepOutcome>;
}

/// Replays a rotation of trace windows, one window per episode.
#[derive(Debug, Clone)]
pub struct WindowEnv {
    config: ClusterConfig,
    windows: Vec<TraceWindow>,
    cursor: usize,
    stride: usize,
    seed: u64,
    sim: Option<ClusterSim>,
}

impl WindowEnv {
    /// Episodes visit `windows[offset]`, `windows[offset + stride]`, ...
    /// cyclically. Empty windows are skipped.
    pub fn new(
        config: &ClusterConfig,
        windows: &[TraceWindow],
        offset: usize,
        stride: usize,
        seed: u64,
    ) -> Result<WindowEnv> {
        config.validate()?;
        let windows: Vec<TraceWindow> = windows.iter().filter(|w| !w.is_empty()).cloned().collect();
        if windows.is_empty() {
            return Err(Error::EmptyWindow);
        }
        Ok(WindowEnv {
            config: config.clone(),
            cursor: offset % windows.len(),
            windows,
            stride: stride.max(1),
            seed,
            sim: None,
        })
    }

    pub fn sim(&self) -> Option<&ClusterSim> {
        self.sim.as_ref()
    }

    pub fn current_task(&self) -> Option<&TaskRecord> {
        self.sim.as_ref().and_then(|s| s.current_task())
    }
}

impl Environment for WindowEnv {
    fn n_actions(&self) -> usize {
        self.config.node_count
    }

    fn obs_len(&self) -> usize {
        self.config.obs_len()
    }

    fn reset(&mut self) -> Result<Observation> {
        let window = &self.windows[self.cursor];
        self.cursor = (self.cursor + self.stride) % self.windows.len();
        let (sim, obs) = ClusterSim::reset(&self.config, window, self.seed)?;
        self.sim = Some(sim);
        Ok(obs)
    }

    fn step(&mut self, action: Action) -> Result<StepOutcome> {
        match self.sim.as_mut() {
            Some(sim) => sim.step(action),
            None => Err(Error::EpisodeDone),
        }
    }
}
