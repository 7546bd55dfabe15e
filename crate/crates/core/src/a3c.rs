//! Asynchronous advantage actor-critic training.
//!
//! `K` workers each own an environment and a stale copy of the global
//! parameters. A worker samples up to `n` steps from its policy, computes
//! n-step returns and advantages, backpropagates the combined actor/critic
//! loss averaged over the segment, and applies the result to the shared
//! parameters under a write lock. Snapshots are taken under a read lock, so
//! no worker ever observes a partially applied update.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;
use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Mlp, MlpShape, OptimConfig, OptimState};
use crate::simenv::{Action, ClusterConfig, Environment, Observation, WindowEnv};
use crate::trace::TraceWindow;

/// How the training log's time column is produced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Timing {
    /// Real elapsed seconds since training started.
    #[default]
    Wall,
    /// Deterministic stand-in: environment steps per worker times a fixed
    /// cost. Used wherever logs must be byte-reproducible.
    Virtual { seconds_per_step: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub gamma: f64,
    /// TD horizon, also the rollout length.
    pub n_steps: usize,
    pub workers: usize,
    /// Environment steps across all workers.
    pub total_steps: u64,
    pub entropy_coeff: f64,
    pub optim: OptimConfig,
    pub hidden: Vec<usize>,
    /// Global updates per logged epoch.
    pub updates_per_epoch: u64,
    pub eval_interval: u64,
    pub convergence_window: usize,
    pub convergence_threshold: f64,
    pub timing: Timing,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            gamma: 0.99,
            n_steps: 5,
            workers: 4,
            total_steps: 200_000,
            entropy_coeff: 0.01,
            optim: OptimConfig::default(),
            hidden: vec![128, 64],
            updates_per_epoch: 100,
            eval_interval: 10,
            convergence_window: 10,
            convergence_threshold: 0.02,
            timing: Timing::Wall,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if self.n_steps == 0 {
            return bad("n_steps must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.updates_per_epoch == 0 {
            return bad("updates_per_epoch must be at least 1");
        }
        if self.convergence_window == 0 || !(self.convergence_threshold >= 0.0) {
            return bad("convergence window must be positive and threshold non-negative");
        }
        if !(self.entropy_coeff >= 0.0) {
            return bad("entropy_coeff must be non-negative");
        }
        if !(self.optim.lr > 0.0 && (0.0..=1.0).contains(&self.optim.decay) && self.optim.eps >= 0.0) {
            return bad("invalid optimizer settings");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// `V(s_{t+n})`, or 0 when the segment ends the episode.
    pub bootstrap_value: f64,
    pub targets: Vec<f64>,
}

/// n-step returns `R_t = Σ_{i<L−t} γ^i r_{t+i} + γ^{L−t}·bootstrap`.
pub fn nstep_targets(rewards: &[f64], bootstrap_value: f64, gamma: f64) -> Vec<f64> {
    let mut targets = vec![0.0; rewards.len()];
    let mut acc = bootstrap_value;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        targets[t] = acc;
    }
    targets
}

pub fn advantage(target: f64, value: f64) -> f64 {
    target - value
}

pub fn critic_loss(target: f64, value: f64) -> f64 {
    (target - value).powi(2)
}

/// Draws an index from a probability vector.
pub fn sample_action(policy: &[f64], rng: &mut ChaCha8Rng) -> Action {
    match WeightedIndex::new(policy) {
        Ok(dist) => Action(dist.sample(rng)),
        Err(_) => Action(crate::nn::argmax(policy)),
    }
}

/// A sampling worker: private environment, RNG and episode position.
pub struct Worker<E> {
    pub id: usize,
    pub env: E,
    rng: ChaCha8Rng,
    obs: Option<Observation>,
}

impl<E: Environment> Worker<E> {
    pub fn new(id: usize, env: E, seed: u64) -> Worker<E> {
        Worker {
            id,
            env,
            rng: ChaCha8Rng::seed_from_u64(seed),
            obs: None,
        }
    }

    /// Samples up to `max_len` steps with `params`' stochastic policy,
    /// starting a new episode first if the previous one ended.
    pub fn rollout(&mut self, params: &Mlp, max_len: usize, gamma: f64) -> Result<Trajectory> {
        let mut obs = match self.obs.take() {
            Some(o) => o,
            None => self.env.reset()?,
        };
        let mut transitions = Vec::with_capacity(max_len);
        let mut next = None;
        for _ in 0..max_len.max(1) {
            let f = params.forward(obs.as_slice())?;
            let action = sample_action(&f.policy, &mut self.rng);
            let out = self.env.step(action)?;
            transitions.push(Transition {
                obs,
                action,
                reward: out.reward,
                done: out.done,
            });
            match out.next_obs {
                Some(o) if !out.done => obs = o,
                _ => {
                    next = None;
                    break;
                }
            }
            next = Some(obs.clone());
        }
        let bootstrap_value = match &next {
            Some(o) => params.forward(o.as_slice())?.value,
            None => 0.0,
        };
        self.obs = next;
        let rewards: Vec<f64> = transitions.iter().map(|t| t.reward).collect();
        let targets = nstep_targets(&rewards, bootstrap_value, gamma);
        Ok(Trajectory {
            transitions,
            bootstrap_value,
            targets,
        })
    }
}

/// Segment statistics reported alongside a gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SegmentStats {
    pub transitions: usize,
    pub critic_loss_sum: f64,
    pub reward_sum: f64,
}

/// Mean over the segment of the per-transition actor-critic gradients.
pub fn worker_update(trajectory: &Trajectory, params: &Mlp, entropy_coeff: f64) -> Result<(Gradients, SegmentStats)> {
    let mut total = Gradients::zeros(params.params().len());
    let mut stats = SegmentStats::default();
    for (tr, &target) in trajectory.transitions.iter().zip(&trajectory.targets) {
        let f = params.forward(tr.obs.as_slice())?;
        let adv = advantage(target, f.value);
        params.backward_into(&f.cache, tr.action, adv, target, entropy_coeff, &mut total)?;
        stats.transitions += 1;
        stats.critic_loss_sum += critic_loss(target, f.value);
        stats.reward_sum += tr.reward;
    }
    if stats.transitions > 0 {
        total.scale(1.0 / stats.transitions as f64);
    }
    Ok((total, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub global_updates: u64,
    pub mean_critic_loss: f64,
    pub mean_reward: f64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// Updates refused because of non-finite gradients.
    pub rejected_updates: u64,
}

pub const TRAINING_LOG_HEADER: &str = "epoch,global_updates,mean_critic_loss,mean_reward,wall_clock_s";

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRAINING_LOG_HEADER);
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.global_updates, e.mean_critic_loss, e.mean_reward, e.wall_clock_s
            ));
        }
        s
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }
}

/// Accumulates per-update statistics into fixed-size epochs.
#[derive(Debug, Clone)]
pub struct EpochAccumulator {
    updates_per_epoch: u64,
    updates: u64,
    loss_sum: f64,
    reward_sum: f64,
    count: usize,
    pub log: TrainingLog,
}

impl EpochAccumulator {
    pub fn new(updates_per_epoch: u64) -> EpochAccumulator {
        EpochAccumulator {
            updates_per_epoch,
            updates: 0,
            loss_sum: 0.0,
            reward_sum: 0.0,
            count: 0,
            log: TrainingLog::default(),
        }
    }

    /// Records one accepted update; closes an epoch every
    /// `updates_per_epoch` updates, stamping it with `now()`.
    pub fn record(&mut self, stats: &SegmentStats, now: impl FnOnce() -> f64) {
        self.updates += 1;
        self.loss_sum += stats.critic_loss_sum;
        self.reward_sum += stats.reward_sum;
        self.count += stats.transitions;
        if self.updates.is_multiple_of(self.updates_per_epoch) {
            let n = self.count.max(1) as f64;
            self.log.epochs.push(EpochRecord {
                epoch: self.log.epochs.len() as u64 + 1,
                global_updates: self.updates,
                mean_critic_loss: self.loss_sum / n,
                mean_reward: self.reward_sum / n,
                wall_clock_s: now(),
            });
            self.loss_sum = 0.0;
            self.reward_sum = 0.0;
            self.count = 0;
        }
    }
}

struct GlobalInner {
    mlp: Mlp,
    optim: OptimState,
    version: u64,
    epochs: EpochAccumulator,
}

/// The shared parameter store. Reads take a shared lock and copy the
/// parameters; updates take the exclusive lock.
pub struct GlobalParams {
    inner: RwLock<GlobalInner>,
    rejected: AtomicU64,
}

impl GlobalParams {
    pub fn new(mlp: Mlp, optim: &OptimConfig, updates_per_epoch: u64) -> GlobalParams {
        let optim = OptimState::new(mlp.params().len(), optim);
        GlobalParams {
            inner: RwLock::new(GlobalInner {
                mlp,
                optim,
                version: 0,
                epochs: EpochAccumulator::new(updates_per_epoch),
            }),
            rejected: AtomicU64::new(0),
        }
    }

    pub fn snapshot(&self) -> (Mlp, u64) {
        let g = self.inner.read().expect("global params lock");
        (g.mlp.clone(), g.version)
    }

    /// Copies the current parameters into `dst`, reusing its allocation.
    pub fn snapshot_into(&self, dst: &mut Mlp) -> u64 {
        let g = self.inner.read().expect("global params lock");
        dst.params_mut().copy_from_slice(g.mlp.params());
        g.version
    }

    pub fn version(&self) -> u64 {
        self.inner.read().expect("global params lock").version
    }

    pub fn rejected(&self) -> u64 {
        self.rejected.load(Ordering::SeqCst)
    }

    /// Applies one optimizer step and returns the new version. Non-finite
    /// gradients are rejected without touching the parameters.
    pub fn apply(&self, grads: &Gradients) -> Result<u64> {
        self.apply_with_stats(grads, &SegmentStats::default(), || 0.0)
    }

    pub fn apply_with_stats(&self, grads: &Gradients, stats: &SegmentStats, now: impl FnOnce() -> f64) -> Result<u64> {
        let mut g = self.inner.write().expect("global params lock");
        let GlobalInner { mlp, optim, .. } = &mut *g;
        if let Err(e) = optim.apply(mlp.params_mut(), grads) {
            if matches!(e, Error::NonFiniteGradient) {
                self.rejected.fetch_add(1, Ordering::SeqCst);
            }
            return Err(e);
        }
        g.version += 1;
        g.epochs.record(stats, now);
        Ok(g.version)
    }

    pub fn into_parts(self) -> (Mlp, TrainingLog) {
        let g = self.inner.into_inner().expect("global params lock");
        let mut log = g.epochs.log;
        log.rejected_updates = self.rejected.load(Ordering::SeqCst);
        (g.mlp, log)
    }
}

/// Per-worker seed derived from the run seed.
pub fn worker_seed(seed: u64, worker: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((worker as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains on arbitrary environments built by `make_env(worker_id)`.
///
/// With one worker everything runs on the calling thread and the result is
/// a deterministic function of the inputs (given virtual timing).
pub fn train_with<E, F>(hyper: &Hyperparams, make_env: F, seed: u64) -> Result<(Mlp, TrainingLog)>
where
    E: Environment + Send,
    F: Fn(usize) -> Result<E> + Sync,
{
    hyper.validate()?;
    let probe = make_env(0)?;
    let shape = MlpShape::new(probe.obs_len(), &hyper.hidden, probe.n_actions());
    let global = GlobalParams::new(Mlp::init(&shape, seed)?, &hyper.optim, hyper.updates_per_epoch);
    let budget = AtomicU64::new(hyper.total_steps);
    let consumed = AtomicU64::new(0);
    let started = Instant::now();
    let k = hyper.workers;
    let now = || match hyper.timing {
        Timing::Wall => started.elapsed().as_secs_f64(),
        Timing::Virtual { seconds_per_step } => consumed.load(Ordering::SeqCst) as f64 / k as f64 * seconds_per_step,
    };

    let run_worker = |id: usize, env: E| -> Result<()> {
        let mut worker = Worker::new(id, env, worker_seed(seed, id));
        let (mut local, _) = global.snapshot();
        loop {
            let take = budget
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |left| {
                    (left > 0).then(|| left - left.min(hyper.n_steps as u64))
                })
                .map(|left| left.min(hyper.n_steps as u64))
                .unwrap_or(0);
            if take == 0 {
                return Ok(());
            }
            global.snapshot_into(&mut local);
            let traj = worker.rollout(&local, take as usize, hyper.gamma)?;
            // unused reservation (early episode end) goes back to the pool
            let used = traj.transitions.len() as u64;
            if used < take {
                budget.fetch_add(take - used, Ordering::SeqCst);
            }
            consumed.fetch_add(used, Ordering::SeqCst);
            let (grads, stats) = worker_update(&traj, &local, hyper.entropy_coeff)?;
            match global.apply_with_stats(&grads, &stats, now) {
                Ok(_) | Err(Error::NonFiniteGradient) => {}
                Err(e) => return Err(e),
            }
        }
    };

    if k == 1 {
        run_worker(0, probe)?;
    } else {
        let mut envs = vec![probe];
        for id in 1..k {
            envs.push(make_env(id)?);
        }
        std::thread::scope(|s| -> Result<()> {
            let handles: Vec<_> = envs
                .into_iter()
                .enumerate()
                .map(|(id, env)| {
                    let run = &run_worker;
                    s.spawn(move || run(id, env))
                })
                .collect();
            for h in handles {
                h.join().expect("worker panicked")?;
            }
            Ok(())
        })?;
    }
    Ok(global.into_parts())
}

/// Trains on the cluster simulator. Worker `k` replays windows
/// `k, k + K, k + 2K, ...` cyclically.
pub fn train(
    hyper: &Hyperparams,
    config: &ClusterConfig,
    windows: &[TraceWindow],
    seed: u64,
) -> Result<(Mlp, TrainingLog)> {
    if windows.iter().all(|w| w.is_empty()) {
        return Err(Error::EmptyWindow);
    }
    let k = hyper.workers;
    train_with(
        hyper,
        |id| WindowEnv::new(config, windows, id, k, worker_seed(seed, id)),
        seed,
    )
}

/// First time at which the `window`-epoch moving average of mean reward
/// stays flat (relative change at most `threshold` between consecutive
/// epochs) for `window` consecutive epochs. Returns the time of the epoch
/// that starts the flat run.
pub fn detect_convergence(log: &TrainingLog, window: usize, threshold: f64) -> Option<f64> {
    detect_convergence_epoch(log, window, threshold).map(|i| log.epochs[i].wall_clock_s)
}

/// Index into `log.epochs` of the convergence epoch.
pub fn detect_convergence_epoch(log: &TrainingLog, window: usize, threshold: f64) -> Option<usize> {
    let w = window.max(1);
    let rewards: Vec<f64> = log.epochs.iter().map(|e| e.mean_reward).collect();
    if rewards.len() < w {
        return None;
    }
    // ma[j] averages epochs j..j+w, i.e. it is the moving average at epoch j+w-1
    let ma: Vec<f64> = rewards.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect();
    let flat = |j: usize| (ma[j + 1] - ma[j]).abs() <= threshold * ma[j].abs();
    let mut run = 0;
    for j in 0..ma.len().saturating_sub(1) {
        if flat(j) {
            run += 1;
            if run == w {
                // the flat run began at ma[j + 1 - w], which is epoch index j
                return Some(j);
            }
        } else {
            run = 0;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force double loop over the discounted sum.
    fn oracle(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
        let l = rewards.len();
        (0..l)
            .map(|t| {
                let mut s = 0.0;
                for i in 0..(l - t) {
                    s += gamma.powi(i as i32) * rewards[t + i];
                }
                s + gamma.powi((l - t) as i32) * bootstrap
            })
            .collect()
    }

    #[test]
    fn nstep_examples() {
        assert_eq!(nstep_targets(&[1.0, 1.0, 1.0], 0.0, 0.5), vec![1.75, 1.5, 1.0]);
        assert_eq!(nstep_targets(&[0.3, -1.0, 2.0], 9.0, 0.0), vec![0.3, -1.0, 2.0]);
        let t = nstep_targets(&[0.0, 0.0], 1.0, 0.9);
        assert!((t[0] - 0.81).abs() < 1e-15 && (t[1] - 0.9).abs() < 1e-15);
        assert_eq!(oracle(&[1.0, 1.0, 1.0], 0.0, 0.5), vec![1.75, 1.5, 1.0]);
    }

    #[test]
    fn advantage_and_loss() {
        assert_eq!(advantage(1.3, 1.3), 0.0);
        // one-step form: r + γV(s') − V(s)
        let target = nstep_targets(&[1.0], 0.5, 0.9)[0];
        assert!((target - 1.45).abs() < 1e-15);
        assert!((advantage(target, 1.0) - 0.45).abs() < 1e-15);
        assert_eq!(advantage(2.0, 1.0), -advantage(1.0, 2.0));
        assert_eq!(critic_loss(1.0, 1.0), 0.0);
        assert_eq!(critic_loss(1.75, 1.0), 0.5625);
        assert_eq!(critic_loss(0.2, 1.7), critic_loss(1.7, 0.2));
    }

    fn log_from(rewards: &[f64]) -> TrainingLog {
        TrainingLog {
            epochs: rewards
                .iter()
                .enumerate()
                .map(|(i, &r)| EpochRecord {
                    epoch: i as u64 + 1,
                    global_updates: (i as u64 + 1) * 100,
                    mean_critic_loss: 1.0,
                    mean_reward: r,
                    wall_clock_s: (i + 1) as f64,
                })
                .collect(),
            rejected_updates: 0,
        }
    }

    #[test]
    fn convergence_on_constant_log() {
        let log = log_from(&[0.5; 40]);
        // epoch W (1-based) is index W-1
        assert_eq!(detect_convergence_epoch(&log, 10, 0.02), Some(9));
        assert_eq!(detect_convergence(&log, 10, 0.02), Some(10.0));
    }

    #[test]
    fn no_convergence_on_steep_ramp() {
        // per-epoch growth stays above 2% of the moving average throughout
        let rewards: Vec<f64> = (0..40).map(|i| 1.0 + 0.5 * i as f64).collect();
        assert_eq!(detect_convergence(&log_from(&rewards), 10, 0.02), None);
    }

    #[test]
    fn convergence_after_flat_point() {
        // grows 10% per epoch until epoch 60, then flat
        let rewards: Vec<f64> = (1..=120).map(|e: i32| 1.1f64.powi(e.min(60))).collect();
        let t = detect_convergence(&log_from(&rewards), 10, 0.02).unwrap();
        assert!((60.0..=70.0).contains(&t), "converged at {t}");
    }

    #[test]
    fn short_log_never_converges() {
        assert_eq!(detect_convergence(&log_from(&[1.0; 5]), 10, 0.02), None);
    }

    #[test]
    fn hyperparam_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        assert!(Hyperparams {
            gamma: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(Hyperparams {
            n_steps: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(Hyperparams {
            workers: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn log_csv_header() {
        let csv = log_from(&[1.0]).to_csv();
        assert!(csv.starts_with("epoch,global_updates,mean_critic_loss,mean_reward,wall_clock_s\n"));
        assert_eq!(csv.lines().count(), 2);
    }
}
