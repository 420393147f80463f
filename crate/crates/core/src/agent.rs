//! Double-DQN learner for the dispatch environment.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::{self, EnvConfig, EpisodeState, InitMode, StepReason};
use crate::error::{AgentError, EnvError, NeuralError};
use crate::network::NetworkCase;
use crate::neural::{apply_update, Method, Mlp, OptimizerState};
use crate::rng::{child_seed, substream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions; the oldest is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            storage: Vec::with_capacity(capacity),
            cursor: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    /// `n` distinct transitions chosen uniformly.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<&Transition> {
        sample(rng, self.storage.len(), n.min(self.storage.len()))
            .into_iter()
            .map(|i| &self.storage[i])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StallBoost {
    /// Episodes without a new best cost before the boost fires.
    pub patience: usize,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub decay_rate: f64,
    pub batch_size: usize,
    pub memory_size: usize,
    /// Learn-steps between copies of the online net into the target net.
    pub target_sync_period: usize,
    /// Environment steps per learn-step.
    pub learn_every: usize,
    pub max_train_episodes: usize,
    pub max_eval_steps: usize,
    pub stall_boost: Option<StallBoost>,
    pub hidden: Vec<usize>,
    pub method: Method,
    /// Double-network target; `false` gives the single-network max target.
    pub double_q: bool,
    pub train_init: InitMode,
    pub eval_epsilon: f64,
    /// Relative slack when comparing a cost against the benchmark.
    pub benchmark_rtol: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            alpha: 0.001,
            epsilon_start: 1.0,
            epsilon_min: 0.05,
            decay_rate: 0.999,
            batch_size: 200,
            memory_size: 2000,
            target_sync_period: 200,
            learn_every: 1,
            max_train_episodes: 300,
            max_eval_steps: 300,
            stall_boost: Some(StallBoost {
                patience: 20,
                epsilon: 0.3,
            }),
            hidden: vec![128, 64],
            method: Method::adam(),
            double_q: true,
            train_init: InitMode::UniformRandom,
            eval_epsilon: 0.0,
            benchmark_rtol: 1e-9,
        }
    }
}

impl AgentConfig {
    pub fn check(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate < 1.0) {
            return bad(format!("decay_rate must lie in (0, 1), got {}", self.decay_rate));
        }
        if !(self.epsilon_start <= 1.0 && self.epsilon_min >= 0.0 && self.epsilon_min <= self.epsilon_start) {
            return bad(format!(
                "need 0 <= epsilon_min ({}) <= epsilon_start ({}) <= 1",
                self.epsilon_min, self.epsilon_start
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.batch_size == 0 || self.memory_size < self.batch_size {
            return bad(format!(
                "batch_size {} must be positive and at most memory_size {}",
                self.batch_size, self.memory_size
            ));
        }
        if self.target_sync_period == 0 || self.learn_every == 0 {
            return bad("target_sync_period and learn_every must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return bad(format!("eval_epsilon must lie in [0, 1], got {}", self.eval_epsilon));
        }
        if let Some(b) = self.stall_boost {
            if b.patience == 0 || !(0.0..=1.0).contains(&b.epsilon) {
                return bad("stall boost needs patience >= 1 and epsilon in [0, 1]".into());
            }
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        Ok(())
    }

    pub fn layer_sizes(&self, obs_dim: usize, n_actions: usize) -> Vec<usize> {
        let mut sizes = vec![obs_dim];
        sizes.extend(&self.hidden);
        sizes.push(n_actions);
        sizes
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice over all of the network's outputs.
pub fn select_action(net: &Mlp, obs: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> Result<usize, NeuralError> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..net.output_dim()));
    }
    Ok(argmax(&net.forward(obs)?))
}

/// One geometric decay step that stops at the floor.
pub fn decay_epsilon(epsilon: f64, config: &AgentConfig) -> f64 {
    let next = config.decay_rate * epsilon;
    if next > config.epsilon_min {
        next
    } else {
        config.epsilon_min
    }
}

/// Bootstrapped targets for a batch. With `double_q` the online net picks
/// the next action and the target net scores it; otherwise the target net
/// does both.
pub fn compute_targets(
    online: &Mlp,
    target: &Mlp,
    batch: &[&Transition],
    gamma: f64,
    double_q: bool,
) -> Result<Vec<f64>, NeuralError> {
    if online.sizes() != target.sizes() {
        return Err(NeuralError::Architecture(online.sizes().to_vec(), target.sizes().to_vec()));
    }
    let n_out = online.output_dim();
    let next: Vec<f64> = batch.iter().flat_map(|t| t.s_next.iter().copied()).collect();
    let q_target = target.forward_batch(&next, batch.len())?;
    let q_select = if double_q {
        online.forward_batch(&next, batch.len())?
    } else {
        q_target.clone()
    };
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.terminal {
                t.r
            } else {
                let row = i * n_out..(i + 1) * n_out;
                let a_star = argmax(&q_select[row.clone()]);
                t.r + gamma * q_target[row][a_star]
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearnOutcome {
    Skipped,
    Updated { loss: f64, synced: bool },
}

/// Online and target networks, optimizer, replay memory.
#[derive(Debug, Clone)]
pub struct Agent {
    pub online: Mlp,
    pub target: Mlp,
    pub optimizer: OptimizerState,
    pub buffer: ReplayBuffer,
    pub config: AgentConfig,
    learn_steps: u64,
    replay_rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(obs_dim: usize, n_actions: usize, config: AgentConfig, seed: u64) -> Result<Self, AgentError> {
        config.check()?;
        let sizes = config.layer_sizes(obs_dim, n_actions);
        let online = Mlp::new(&sizes, child_seed(seed, Stream::Network, 0))?;
        let target = online.clone();
        let optimizer = OptimizerState::new(&online, config.method, config.alpha);
        Ok(Self {
            online,
            target,
            optimizer,
            buffer: ReplayBuffer::new(config.memory_size),
            replay_rng: substream(seed, Stream::Replay),
            config,
            learn_steps: 0,
        })
    }

    pub fn learn_steps(&self) -> u64 {
        self.learn_steps
    }

    pub fn learn_step(&mut self) -> Result<LearnOutcome, AgentError> {
        let n = self.config.batch_size;
        if self.buffer.len() < n {
            return Ok(LearnOutcome::Skipped);
        }
        let batch = self.buffer.sample(n, &mut self.replay_rng);
        let targets = compute_targets(&self.online, &self.target, &batch, self.config.gamma, self.config.double_q)?;
        let inputs: Vec<f64> = batch.iter().flat_map(|t| t.s.iter().copied()).collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.a).collect();
        let (grads, loss) = self.online.backward(&inputs, &actions, &targets)?;
        apply_update(&mut self.online, &grads, &mut self.optimizer)?;
        self.learn_steps += 1;
        let synced = self.learn_steps.is_multiple_of(self.config.target_sync_period as u64);
        if synced {
            self.target.copy_from(&self.online)?;
        }
        Ok(LearnOutcome::Updated { loss, synced })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub episode: usize,
    pub step: usize,
    pub epsilon: f64,
    pub action: usize,
    pub reward: f64,
    pub cost: Option<f64>,
    pub reason: StepReason,
}

pub const TRAIN_LOG_HEADER: &str = "episode,step,epsilon,action,reward,cost,reason";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|c| c.to_string()).unwrap_or_default()
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.episode,
            self.step,
            self.epsilon,
            self.action,
            self.reward,
            fmt_opt(self.cost),
            self.reason.as_str()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub steps: usize,
    pub reason: StepReason,
    /// Lowest in-band cost seen in this episode, initial state included.
    pub best_cost: Option<f64>,
    /// Running best over all episodes so far.
    pub best_so_far: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub agent: Agent,
    pub log: Vec<LogRow>,
    pub episodes: Vec<EpisodeSummary>,
    /// Episode trace rows (see [`env::trace_header`]) with a global step index.
    pub profile: Vec<String>,
    pub best_cost: Option<f64>,
    pub best_dispatch: Option<Vec<f64>>,
    pub final_epsilon: f64,
}

fn in_band_cost(state: &EpisodeState, env_config: &EnvConfig) -> Option<f64> {
    if env::in_band(state.solution(), env_config) {
        state.cost()
    } else {
        None
    }
}

fn reset_episode(
    case: &NetworkCase,
    env_config: &EnvConfig,
    init: InitMode,
    seed: u64,
    episode: usize,
) -> Result<EpisodeState, EnvError> {
    let mut last = None;
    for attempt in 0..100u64 {
        let s = child_seed(seed, Stream::Init, (episode as u64) << 8 | attempt);
        match env::reset(case, env_config, init, s) {
            Ok((state, _)) => return Ok(state),
            Err(EnvError::InitialDiverged) if init != InitMode::AsGiven => last = Some(EnvError::InitialDiverged),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or(EnvError::InitialDiverged))
}

/// Train a fresh agent on `case`.
pub fn train(
    case: &NetworkCase,
    env_config: &EnvConfig,
    config: &AgentConfig,
    seed: u64,
) -> Result<TrainResult, AgentError> {
    config.check()?;
    // The snapshot itself must solve before anything else happens.
    let (probe, _) = env::reset(case, env_config, InitMode::AsGiven, 0)?;
    let n_ctrl = probe.controls().len();
    let mut agent = Agent::new(env::observation_dim(case), env::n_actions(n_ctrl), config.clone(), seed)?;
    let mut explore = substream(seed, Stream::Exploration);

    let mut epsilon = config.epsilon_start;
    let mut log = Vec::new();
    let mut episodes = Vec::with_capacity(config.max_train_episodes);
    let mut profile = Vec::new();
    let mut best_cost: Option<f64> = None;
    let mut best_dispatch = None;
    let mut stall = 0usize;
    let mut global_step = 0usize;

    for episode in 0..config.max_train_episodes {
        let mut state = reset_episode(case, env_config, config.train_init, seed, episode)?;
        let mut episode_best = in_band_cost(&state, env_config);
        let mut episode_dispatch = episode_best.map(|_| state.solution().pg.clone());
        let mut reason = StepReason::Running;

        while !state.is_terminal() {
            let s = state.observation().0.clone();
            let a = select_action(&agent.online, &s, epsilon, &mut explore)?;
            let outcome = env::step(&mut state, a, env_config)?;
            agent.buffer.push(Transition {
                s,
                a,
                r: outcome.reward,
                s_next: outcome.observation.0.clone(),
                terminal: outcome.reason.is_failure(),
            });
            global_step += 1;
            if let (Some(c), false) = (outcome.cost, outcome.reason.is_failure()) {
                if episode_best.is_none_or(|b| c < b) {
                    episode_best = Some(c);
                    episode_dispatch = Some(outcome.dispatch.clone());
                }
            }
            log.push(LogRow {
                episode,
                step: state.step_count(),
                epsilon,
                action: a,
                reward: outcome.reward,
                cost: outcome.cost,
                reason: outcome.reason,
            });
            profile.push(env::trace_row(global_step, a, &outcome));
            epsilon = decay_epsilon(epsilon, config);
            if global_step.is_multiple_of(config.learn_every) {
                agent.learn_step()?;
            }
            reason = outcome.reason;
        }

        let improved = match (episode_best, best_cost) {
            (Some(e), Some(b)) => e < b,
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            best_cost = episode_best;
            best_dispatch = episode_dispatch;
            stall = 0;
        } else {
            stall += 1;
        }
        if let Some(boost) = config.stall_boost {
            if stall >= boost.patience {
                epsilon = epsilon.max(boost.epsilon);
                stall = 0;
            }
        }
        episodes.push(EpisodeSummary {
            episode,
            steps: state.step_count(),
            reason,
            best_cost: episode_best,
            best_so_far: best_cost,
        });
    }

    Ok(TrainResult {
        agent,
        log,
        episodes,
        profile,
        best_cost,
        best_dispatch,
        final_epsilon: epsilon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalPolicy {
    /// Stop at the first state whose cost reaches the reference.
    BenchmarkStop { reference_cost: f64 },
    /// Use the whole step budget and keep the cheapest in-band state.
    BudgetMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ReferenceReached,
    BudgetExhausted,
    VoltageViolation,
    Diverged,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::ReferenceReached => "reference_reached",
            StopReason::BudgetExhausted => "budget_exhausted",
            StopReason::VoltageViolation => "voltage_violation",
            StopReason::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub seed: u64,
    pub init_cost: Option<f64>,
    pub best_cost: Option<f64>,
    /// All generator outputs (MW) at the best state.
    pub best_dispatch: Option<Vec<f64>>,
    pub steps: usize,
    pub stop_reason: StopReason,
    /// Cost after each step (`None` where the flow diverged).
    pub trajectory: Vec<Option<f64>>,
}

/// Run the trained policy from one snapshot.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    net: &Mlp,
    case: &NetworkCase,
    env_config: &EnvConfig,
    config: &AgentConfig,
    policy: EvalPolicy,
    init: InitMode,
    seed: u64,
) -> Result<EvalReport, AgentError> {
    if let EvalPolicy::BenchmarkStop { reference_cost } = policy {
        if reference_cost.is_nan() {
            return Err(AgentError::Config("benchmark reference cost must not be NaN".into()));
        }
    }
    let env_config = EnvConfig {
        max_episode_steps: usize::MAX,
        ..*env_config
    };
    let (mut state, _) = env::reset(case, &env_config, init, seed)?;
    let expected = [env::observation_dim(case), state.n_actions()];
    if [net.input_dim(), net.output_dim()] != expected {
        return Err(NeuralError::Architecture(
            vec![net.input_dim(), net.output_dim()],
            expected.to_vec(),
        )
        .into());
    }
    let mut explore = substream(seed, Stream::Exploration);
    let init_cost = in_band_cost(&state, &env_config);
    let mut best_cost = init_cost;
    let mut best_dispatch = init_cost.map(|_| state.solution().pg.clone());
    let mut trajectory = Vec::new();
    let mut stop_reason = StopReason::BudgetExhausted;

    while state.step_count() < config.max_eval_steps {
        let a = select_action(net, &state.observation().0, config.eval_epsilon, &mut explore)?;
        let outcome = env::step(&mut state, a, &env_config)?;
        trajectory.push(outcome.cost);
        match outcome.reason {
            StepReason::VoltageViolation => {
                stop_reason = StopReason::VoltageViolation;
                break;
            }
            StepReason::Diverged => {
                stop_reason = StopReason::Diverged;
                break;
            }
            _ => {}
        }
        let cost = outcome.cost.expect("converged step has a cost");
        if best_cost.is_none_or(|b| cost < b) {
            best_cost = Some(cost);
            best_dispatch = Some(outcome.dispatch.clone());
        }
        if let EvalPolicy::BenchmarkStop { reference_cost } = policy {
            if cost <= reference_cost + config.benchmark_rtol * reference_cost.abs() {
                stop_reason = StopReason::ReferenceReached;
                break;
            }
        }
    }

    Ok(EvalReport {
        seed,
        init_cost,
        best_cost,
        best_dispatch,
        steps: state.step_count(),
        stop_reason,
        trajectory,
    })
}

/// Evaluate from many seeds on a bounded worker pool. Reports come back in
/// seed order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_many(
    net: &Mlp,
    case: &NetworkCase,
    env_config: &EnvConfig,
    config: &AgentConfig,
    policy: EvalPolicy,
    init: InitMode,
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<EvalReport>, AgentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| AgentError::Config(e.to_string()))?;
    pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| evaluate(net, case, env_config, config, policy, init, s))
            .collect()
    })
}

pub const EVAL_HEADER: &str = "run,seed,init_cost,best_cost,steps,stop_reason";

pub fn eval_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(EVAL_HEADER);
    out.push('\n');
    for (run, r) in reports.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            run,
            r.seed,
            fmt_opt(r.init_cost),
            fmt_opt(r.best_cost),
            r.steps,
            r.stop_reason.as_str()
        ));
    }
    out
}

pub fn train_log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(TRAIN_LOG_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

/// Share of runs within each relative gap of the reference, plus mean steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub runs: usize,
    pub within_0_1pct: f64,
    pub within_0_5pct: f64,
    pub within_1pct: f64,
    pub within_2pct: f64,
    pub mean_steps: f64,
    pub mean_gap: f64,
}

pub fn relative_gap(cost: f64, reference: f64) -> f64 {
    (cost - reference) / reference.abs()
}

pub fn summarize(reports: &[EvalReport], reference: f64) -> EvalSummary {
    let n = reports.len().max(1) as f64;
    let gaps: Vec<f64> = reports
        .iter()
        .map(|r| r.best_cost.map_or(f64::INFINITY, |c| relative_gap(c, reference)))
        .collect();
    let frac = |tol: f64| gaps.iter().filter(|&&g| g <= tol + 1e-12).count() as f64 / n;
    let finite: Vec<f64> = gaps.iter().copied().filter(|g| g.is_finite()).collect();
    EvalSummary {
        runs: reports.len(),
        within_0_1pct: frac(0.001),
        within_0_5pct: frac(0.005),
        within_1pct: frac(0.01),
        within_2pct: frac(0.02),
        mean_steps: reports.iter().map(|r| r.steps as f64).sum::<f64>() / n,
        mean_gap: finite.iter().sum::<f64>() / finite.len().max(1) as f64,
    }
}
