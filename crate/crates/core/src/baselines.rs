//! Comparison schedulers: round-robin, priority rules, tabular Q-learning
//! and DQN. All of them choose a node from the same [`Observation`].

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::a3c::{EpochAccumulator, SegmentStats, Timing, TrainingLog};
use crate::error::{Error, Result};
use crate::nn::{argmax, Mlp, MlpShape, OptimConfig, OptimState};
use crate::simenv::{Action, Environment, Observation};
use crate::trace::TaskRecord;

/// A placement policy used during evaluation.
pub trait Scheduler {
    fn select(&mut self, obs: &Observation, task: &TaskRecord) -> Action;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    RoundRobin,
    Priority,
    Qlearning,
    Dqn,
    A3c,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::RoundRobin,
        Strategy::Priority,
        Strategy::Qlearning,
        Strategy::Dqn,
        Strategy::A3c,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::RoundRobin => "round_robin",
            Strategy::Priority => "priority",
            Strategy::Qlearning => "qlearning",
            Strategy::Dqn => "dqn",
            Strategy::A3c => "a3c",
        }
    }

    /// Whether the strategy has a training phase.
    pub fn learns(self) -> bool {
        matches!(self, Strategy::Qlearning | Strategy::Dqn | Strategy::A3c)
    }

    pub fn valid_names() -> String {
        Strategy::ALL.map(Strategy::name).join(", ")
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Strategy> {
        Strategy::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown strategy `{s}`; valid: {}", Strategy::valid_names()))
        })
    }
}

/// Static polling: cycles through the nodes regardless of state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundRobin {
    pub next_index: usize,
    pub node_count: usize,
}

impl RoundRobin {
    pub fn new(node_count: usize) -> RoundRobin {
        RoundRobin {
            next_index: 0,
            node_count: node_count.max(1),
        }
    }

    pub fn rr_select(&mut self) -> Action {
        let a = Action(self.next_index);
        self.next_index = (self.next_index + 1) % self.node_count;
        a
    }
}

impl Scheduler for RoundRobin {
    fn select(&mut self, _obs: &Observation, _task: &TaskRecord) -> Action {
        self.rr_select()
    }
}

/// Tasks at or above this priority are treated as high priority.
pub const HIGH_PRIORITY: u8 = 6;

/// High-priority tasks go to the node with the most free cpu; the rest go
/// to the node with the most queue headroom, then the most free cpu. Ties
/// resolve to the lowest node index.
pub fn priority_select(obs: &Observation, priority: u8) -> Action {
    let n = obs.node_count();
    let mut best = 0;
    for i in 1..n {
        let better = if priority >= HIGH_PRIORITY {
            obs.free_cpu(i) > obs.free_cpu(best)
        } else {
            let (hi, hb) = (1.0 - obs.queue_fill(i), 1.0 - obs.queue_fill(best));
            hi > hb || (hi == hb && obs.free_cpu(i) > obs.free_cpu(best))
        };
        if better {
            best = i;
        }
    }
    Action(best)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PriorityRule;

impl Scheduler for PriorityRule {
    fn select(&mut self, obs: &Observation, task: &TaskRecord) -> Action {
        priority_select(obs, task.priority)
    }
}

/// Bins each node's free cpu and the task's cpu request into `bins`
/// half-open equal-width bins; 1.0 falls in the top bin.
pub fn discretize(obs: &Observation, bins: usize) -> Vec<u8> {
    let bins = bins.max(1);
    let bin = |x: f64| ((x.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1) as u8;
    let n = obs.node_count();
    let mut key: Vec<u8> = (0..n).map(|i| bin(obs.free_cpu(i))).collect();
    key.push(bin(obs.task_cpu()));
    key
}

/// Tabular action values over discretized states. Unseen states read as
/// all-zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: HashMap<Vec<u8>, Vec<f64>>,
    pub n_actions: usize,
    pub alpha: f64,
}

impl QTable {
    pub fn new(n_actions: usize, alpha: f64) -> QTable {
        QTable {
            values: HashMap::new(),
            n_actions,
            alpha,
        }
    }

    pub fn row(&self, key: &[u8]) -> Vec<f64> {
        self.values
            .get(key)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.n_actions])
    }

    pub fn get(&self, key: &[u8], a: Action) -> f64 {
        self.values.get(key).map_or(0.0, |r| r[a.0])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.values.contains_key(key)
    }

    /// `Q(s,a) ← Q(s,a) + α(r + γ·max Q(s',·)·[¬done] − Q(s,a))`; returns
    /// the TD error.
    pub fn q_update(&mut self, s: &[u8], a: Action, r: f64, s_next: &[u8], done: bool, gamma: f64) -> f64 {
        let next_max = if done {
            0.0
        } else {
            self.values
                .get(s_next)
                .map_or(0.0, |row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        };
        let n = self.n_actions;
        let alpha = self.alpha;
        let q = &mut self.values.entry(s.to_vec()).or_insert_with(|| vec![0.0; n])[a.0];
        let td = r + gamma * next_max - *q;
        *q += alpha * td;
        td
    }

    pub fn greedy(&self, key: &[u8]) -> Action {
        Action(self.values.get(key).map_or(0, |row| argmax(row)))
    }

    /// Rows sorted by key, for reproducible serialization.
    pub fn sorted_rows(&self) -> Vec<(Vec<u8>, Vec<f64>)> {
        let mut rows: Vec<_> = self.values.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        rows
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            key: &'a [u8],
            values: &'a [f64],
        }
        let rows = self.sorted_rows();
        let rows: Vec<Row> = rows.iter().map(|(k, v)| Row { key: k, values: v }).collect();
        serde_json::to_string(&rows).expect("q-table serialize")
    }
}

/// Linear ε schedule from `start` to `end` over `decay_steps`.
pub fn linear_epsilon(start: f64, end: f64, decay_steps: u64, step: u64) -> f64 {
    if decay_steps == 0 || step >= decay_steps {
        return end;
    }
    start + (end - start) * step as f64 / decay_steps as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QLearningConfig {
    pub bins: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the step budget over which ε decays.
    pub decay_fraction: f64,
    pub total_steps: u64,
    pub updates_per_epoch: u64,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        QLearningConfig {
            bins: 4,
            alpha: 0.1,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            decay_fraction: 0.5,
            total_steps: 200_000,
            updates_per_epoch: 100,
        }
    }
}

/// Greedy tabular policy.
#[derive(Debug, Clone)]
pub struct QPolicy {
    pub table: QTable,
    pub bins: usize,
}

impl Scheduler for QPolicy {
    fn select(&mut self, obs: &Observation, _task: &TaskRecord) -> Action {
        self.table.greedy(&discretize(obs, self.bins))
    }
}

/// ε-greedy tabular Q-learning for `cfg.total_steps` environment steps.
pub fn train_qlearning<E: Environment>(
    cfg: &QLearningConfig,
    env: &mut E,
    seed: u64,
    timing: Timing,
) -> Result<(QPolicy, TrainingLog)> {
    let n = env.n_actions();
    let mut table = QTable::new(n, cfg.alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut epochs = EpochAccumulator::new(cfg.updates_per_epoch.max(1));
    let decay_steps = (cfg.total_steps as f64 * cfg.decay_fraction) as u64;
    let clock = Clock::start(timing);
    let mut obs = None;
    for step in 0..cfg.total_steps {
        let o = match obs.take() {
            Some(o) => o,
            None => env.reset()?,
        };
        let key = discretize(&o, cfg.bins);
        let eps = linear_epsilon(cfg.epsilon_start, cfg.epsilon_end, decay_steps, step);
        let action = if rng.gen::<f64>() < eps {
            Action(rng.gen_range(0..n))
        } else {
            table.greedy(&key)
        };
        let out = env.step(action)?;
        let next_key = out
            .next_obs
            .as_ref()
            .map(|o| discretize(o, cfg.bins))
            .unwrap_or_default();
        let td = table.q_update(&key, action, out.reward, &next_key, out.done, cfg.gamma);
        epochs.record(
            &SegmentStats {
                transitions: 1,
                critic_loss_sum: td * td,
                reward_sum: out.reward,
            },
            || clock.seconds(step + 1),
        );
        obs = if out.done { None } else { out.next_obs };
    }
    Ok((QPolicy { table, bins: cfg.bins }, epochs.log))
}

/// Training-time clock shared by the single-threaded learners.
pub(crate) struct Clock {
    timing: Timing,
    started: std::time::Instant,
}

impl Clock {
    pub(crate) fn start(timing: Timing) -> Clock {
        Clock {
            timing,
            started: std::time::Instant::now(),
        }
    }

    pub(crate) fn seconds(&self, steps: u64) -> f64 {
        match self.timing {
            Timing::Wall => self.started.elapsed().as_secs_f64(),
            Timing::Virtual { seconds_per_step } => steps as f64 * seconds_per_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub capacity: usize,
    pub batch_size: usize,
    pub sync_every: u64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub decay_fraction: f64,
    pub hidden: Vec<usize>,
    pub optim: OptimConfig,
    pub total_steps: u64,
    pub updates_per_epoch: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            capacity: 10_000,
            batch_size: 32,
            sync_every: 500,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            decay_fraction: 0.5,
            hidden: vec![128, 64],
            optim: OptimConfig::default(),
            total_steps: 200_000,
            updates_per_epoch: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnTransition {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Option<Observation>,
    pub done: bool,
}

/// Deep Q-network with uniform replay and a periodically synced target.
/// Q-values are read from the network's action head.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub online: Mlp,
    pub target: Mlp,
    optim: OptimState,
    pub buffer: VecDeque<DqnTransition>,
    rng: ChaCha8Rng,
    pub steps: u64,
    pub target_syncs: u64,
    pub cfg: DqnConfig,
}

impl DqnAgent {
    pub fn new(cfg: &DqnConfig, obs_len: usize, n_actions: usize, seed: u64) -> Result<DqnAgent> {
        let online = Mlp::init(&MlpShape::new(obs_len, &cfg.hidden, n_actions), seed)?;
        Ok(DqnAgent {
            target: online.clone(),
            optim: OptimState::new(online.params().len(), &cfg.optim),
            online,
            buffer: VecDeque::with_capacity(cfg.capacity),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EED),
            steps: 0,
            target_syncs: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn epsilon(&self) -> f64 {
        let decay = (self.cfg.total_steps as f64 * self.cfg.decay_fraction) as u64;
        linear_epsilon(self.cfg.epsilon_start, self.cfg.epsilon_end, decay, self.steps)
    }

    pub fn q_values(&self, net: &Mlp, obs: &Observation) -> Vec<f64> {
        net.forward(obs.as_slice()).expect("observation shape").logits
    }

    /// ε-greedy action for the current schedule position.
    pub fn act(&mut self, obs: &Observation) -> Action {
        let n = self.online.shape().actions;
        if self.rng.gen::<f64>() < self.epsilon() {
            Action(self.rng.gen_range(0..n))
        } else {
            Action(argmax(&self.q_values(&self.online, obs)))
        }
    }

    /// Stores `transition`, then (once the buffer holds a batch) takes one
    /// minibatch gradient step on the squared TD error and syncs the target
    /// on schedule. Returns the minibatch loss when a step was taken.
    pub fn dqn_step(&mut self, transition: DqnTransition) -> Result<Option<f64>> {
        if self.buffer.len() == self.cfg.capacity.max(1) {
            self.buffer.pop_front();
        }
        self.buffer.push_back(transition);
        self.steps += 1;
        let b = self.cfg.batch_size.max(1);
        let mut loss = None;
        if self.buffer.len() >= b {
            let mut grads = crate::nn::Gradients::zeros(self.online.params().len());
            let mut sq = 0.0;
            for _ in 0..b {
                let t = &self.buffer[self.rng.gen_range(0..self.buffer.len())];
                let bootstrap = match (&t.next_obs, t.done) {
                    (Some(o), false) => {
                        let q = self.q_values(&self.target, o);
                        q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    }
                    _ => 0.0,
                };
                let y = t.reward + self.cfg.gamma * bootstrap;
                let f = self.online.forward(t.obs.as_slice())?;
                let err = f.logits[t.action.0] - y;
                sq += err * err;
                let mut dlogits = vec![0.0; f.logits.len()];
                dlogits[t.action.0] = err / b as f64;
                self.online.backward_raw_into(&f.cache, &dlogits, 0.0, &mut grads);
            }
            match self.optim.apply(self.online.params_mut(), &grads) {
                Ok(()) | Err(Error::NonFiniteGradient) => {}
                Err(e) => return Err(e),
            }
            loss = Some(sq / b as f64);
        }
        if self.cfg.sync_every > 0 && self.steps.is_multiple_of(self.cfg.sync_every) {
            self.target = self.online.clone();
            self.target_syncs += 1;
        }
        Ok(loss)
    }
}

/// Greedy policy read from a network's action head (DQN Q-values or
/// actor-critic logits).
#[derive(Debug, Clone)]
pub struct GreedyNet {
    pub net: Mlp,
}

impl Scheduler for GreedyNet {
    fn select(&mut self, obs: &Observation, _task: &TaskRecord) -> Action {
        self.net.forward(obs.as_slice()).expect("observation shape").greedy()
    }
}

pub fn train_dqn<E: Environment>(
    cfg: &DqnConfig,
    env: &mut E,
    seed: u64,
    timing: Timing,
) -> Result<(GreedyNet, TrainingLog)> {
    let mut agent = DqnAgent::new(cfg, env.obs_len(), env.n_actions(), seed)?;
    let mut epochs = EpochAccumulator::new(cfg.updates_per_epoch.max(1));
    let clock = Clock::start(timing);
    let mut obs = None;
    for step in 0..cfg.total_steps {
        let o = match obs.take() {
            Some(o) => o,
            None => env.reset()?,
        };
        let action = agent.act(&o);
        let out = env.step(action)?;
        let reward = out.reward;
        let next = if out.done { None } else { out.next_obs.clone() };
        let loss = agent.dqn_step(DqnTransition {
            obs: o,
            action,
            reward,
            next_obs: out.next_obs,
            done: out.done,
        })?;
        if let Some(l) = loss {
            epochs.record(
                &SegmentStats {
                    transitions: 1,
                    critic_loss_sum: l,
                    reward_sum: reward,
                },
                || clock.seconds(step + 1),
            );
        }
        obs = next;
    }
    Ok((GreedyNet { net: agent.online }, epochs.log))
}

/// A two-node decision process in which node 1 is permanently saturated:
/// every task sent there is rejected, every task sent to node 0 starts at
/// once. Task sizes cycle through a fixed sequence so several discretized
/// states are visited.
pub mod saturated {
    use super::*;

    pub const TASK_CPU: [f64; 4] = [0.1, 0.35, 0.6, 0.85];

    #[derive(Debug, Clone)]
    pub struct SaturatedPair {
        pub episode_len: usize,
        pub accept_reward: f64,
        pub reject_reward: f64,
        t: usize,
    }

    impl SaturatedPair {
        pub fn new(episode_len: usize) -> SaturatedPair {
            SaturatedPair {
                episode_len: episode_len.max(1),
                accept_reward: 1.0,
                reject_reward: -1.0,
                t: 0,
            }
        }

        /// Observation at position `t` of an episode.
        pub fn obs_at(&self, t: usize) -> Observation {
            let cpu = TASK_CPU[t % TASK_CPU.len()];
            Observation(vec![
                1.0,
                1.0,
                0.0, // node 0: idle
                0.0,
                0.0,
                1.0, // node 1: full, queue full
                cpu,
                0.1,
                (t % 12) as f64 / 11.0,
                t as f64 / self.episode_len as f64,
            ])
        }

        pub fn reward(&self, a: Action) -> f64 {
            if a.0 == 0 {
                self.accept_reward
            } else {
                self.reject_reward
            }
        }
    }

    impl Environment for SaturatedPair {
        fn n_actions(&self) -> usize {
            2
        }

        fn obs_len(&self) -> usize {
            crate::simenv::obs_len(2)
        }

        fn reset(&mut self) -> Result<Observation> {
            self.t = 0;
            Ok(self.obs_at(0))
        }

        fn step(&mut self, action: Action) -> Result<crate::simenv::StepOutcome> {
            if self.t >= self.episode_len {
                return Err(Error::EpisodeDone);
            }
            if action.0 >= 2 {
                return Err(Error::ActionOutOfRange { action: action.0, n: 2 });
            }
            let reward = self.reward(action);
            self.t += 1;
            let done = self.t == self.episode_len;
            Ok(crate::simenv::StepOutcome {
                reward,
                next_obs: (!done).then(|| self.obs_at(self.t)),
                done,
                info: Default::default(),
            })
        }
    }

    /// Optimal action per discretized state, by value iteration on the
    /// discretized model. The model is built by enumerating every episode
    /// position; positions sharing a key are merged with empirical
    /// transition frequencies.
    pub fn value_iteration_oracle(env: &SaturatedPair, bins: usize, gamma: f64) -> HashMap<Vec<u8>, Action> {
        let keys: Vec<Vec<u8>> = (0..env.episode_len).map(|t| discretize(&env.obs_at(t), bins)).collect();
        let mut index: HashMap<Vec<u8>, usize> = HashMap::new();
        for k in &keys {
            let next = index.len();
            index.entry(k.clone()).or_insert(next);
        }
        let s = index.len();
        // successor counts (None = terminal) per state
        let mut succ: Vec<HashMap<Option<usize>, f64>> = vec![HashMap::new(); s];
        for t in 0..env.episode_len {
            let from = index[&keys[t]];
            let to = (t + 1 < env.episode_len).then(|| index[&keys[t + 1]]);
            *succ[from].entry(to).or_insert(0.0) += 1.0;
        }
        let mut v = vec![0.0; s];
        for _ in 0..10_000 {
            let mut delta: f64 = 0.0;
            let mut nv = vec![0.0; s];
            for i in 0..s {
                let total: f64 = succ[i].values().sum();
                let cont: f64 = succ[i].iter().map(|(to, c)| c / total * to.map_or(0.0, |j| v[j])).sum();
                nv[i] = (0..2)
                    .map(|a| env.reward(Action(a)) + gamma * cont)
                    .fold(f64::NEG_INFINITY, f64::max);
                delta = delta.max((nv[i] - v[i]).abs());
            }
            v = nv;
            if delta < 1e-12 {
                break;
            }
        }
        index
            .into_keys()
            .map(|k| {
                // the continuation value is action independent here
                let q: Vec<f64> = (0..2).map(|a| env.reward(Action(a))).collect();
                (k, Action(argmax(&q)))
            })
            .collect()
    }
}
