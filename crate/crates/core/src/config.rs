//! Flat, versioned run configuration stored as TOML.
//!
//! Every key is optional except `version`; missing keys take the defaults
//! below, unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, StallBoost};
use crate::env::{EnvConfig, InitMode};
use crate::neural::Method;
use crate::oracle::OracleConfig;
use crate::powerflow::SolverConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    /// Case file; the bundled 14-bus case when absent. `.raw` files are read
    /// as PSS/E v26 and need `costs`.
    pub case: Option<PathBuf>,
    pub costs: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub run_name: String,
    /// Worker threads for evaluations and oracle restarts.
    pub workers: usize,

    pub tolerance: f64,
    pub max_iterations: usize,
    pub enforce_q_limits: bool,
    pub flat_start: bool,

    pub delta_p: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    pub r_p: f64,
    pub r_n: f64,
    pub r_e: f64,
    pub beta: f64,
    pub max_episode_steps: usize,

    pub gamma: f64,
    pub alpha: f64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub decay_rate: f64,
    pub batch_size: usize,
    pub memory_size: usize,
    pub target_sync_period: usize,
    pub learn_every: usize,
    pub max_train_episodes: usize,
    pub max_eval_steps: usize,
    /// Episodes without improvement before ε is boosted; 0 disables.
    pub stall_patience: usize,
    pub stall_epsilon: f64,
    pub hidden: Vec<usize>,
    /// `adam` or `sgd`.
    pub optimizer: String,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub double_q: bool,
    /// `uniform`, `given` or `perturbed`.
    pub train_init: String,
    /// Standard deviation (MW) for `perturbed` starts.
    pub init_sigma: f64,
    pub eval_epsilon: f64,
    pub benchmark_rtol: f64,
    pub eval_runs: usize,
    /// `benchmark` or `budget`.
    pub eval_policy: String,
    pub eval_init: String,
    pub load_factor: f64,

    pub oracle_restarts: usize,
    pub oracle_max_sweeps: usize,
    pub respect_voltage_band: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        let env = EnvConfig::default();
        let agent = AgentConfig::default();
        let oracle = OracleConfig::default();
        let boost = agent.stall_boost.expect("default has a stall boost");
        let (b1, b2, eps) = match agent.method {
            Method::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
            Method::Sgd => unreachable!(),
        };
        Self {
            version: CONFIG_VERSION,
            seed: 7,
            case: None,
            costs: None,
            checkpoint: None,
            out_dir: PathBuf::from("out"),
            run_name: "run".into(),
            workers: 1,
            tolerance: solver.tolerance,
            max_iterations: solver.max_iterations,
            enforce_q_limits: solver.enforce_q_limits,
            flat_start: solver.flat_start,
            delta_p: env.delta_p,
            v_lo: env.v_lo,
            v_hi: env.v_hi,
            r_p: env.r_p,
            r_n: env.r_n,
            r_e: env.r_e,
            beta: env.beta,
            max_episode_steps: env.max_episode_steps,
            gamma: agent.gamma,
            alpha: agent.alpha,
            epsilon_start: agent.epsilon_start,
            epsilon_min: agent.epsilon_min,
            decay_rate: agent.decay_rate,
            batch_size: agent.batch_size,
            memory_size: agent.memory_size,
            target_sync_period: agent.target_sync_period,
            learn_every: agent.learn_every,
            max_train_episodes: agent.max_train_episodes,
            max_eval_steps: agent.max_eval_steps,
            stall_patience: boost.patience,
            stall_epsilon: boost.epsilon,
            hidden: agent.hidden.clone(),
            optimizer: "adam".into(),
            adam_beta1: b1,
            adam_beta2: b2,
            adam_eps: eps,
            double_q: agent.double_q,
            train_init: "uniform".into(),
            init_sigma: 5.0,
            eval_epsilon: agent.eval_epsilon,
            benchmark_rtol: agent.benchmark_rtol,
            eval_runs: 45,
            eval_policy: "benchmark".into(),
            eval_init: "uniform".into(),
            load_factor: 1.0,
            oracle_restarts: oracle.restarts,
            oracle_max_sweeps: oracle.max_sweeps,
            respect_voltage_band: oracle.respect_voltage_band,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config: missing `version` key")]
    MissingVersion,
    #[error("config: unsupported version {0}, expected {CONFIG_VERSION}")]
    Version(u32),
    #[error("config: {0}")]
    Invalid(String),
    #[error("config: {0}")]
    Io(#[from] std::io::Error),
}

fn parse_init(name: &str, sigma: f64) -> Result<InitMode, ConfigError> {
    match name {
        "uniform" => Ok(InitMode::UniformRandom),
        "given" => Ok(InitMode::AsGiven),
        "perturbed" => Ok(InitMode::Perturbed(sigma)),
        other => Err(ConfigError::Invalid(format!(
            "init mode must be uniform, given or perturbed, got {other:?}"
        ))),
    }
}

/// Which test-time stopping rule `eval` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Benchmark,
    Budget,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if !table.contains_key("version") {
            return Err(ConfigError::MissingVersion);
        }
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if config.version != CONFIG_VERSION {
            return Err(ConfigError::Version(config.version));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.env_config().check().map_err(|e| invalid(&e))?;
        self.agent_config()?.check().map_err(|e| invalid(&e))?;
        self.oracle_config().check().map_err(|e| invalid(&e))?;
        self.policy_kind()?;
        parse_init(&self.eval_init, self.init_sigma)?;
        if !(self.load_factor > 0.0 && self.load_factor.is_finite()) {
            return Err(ConfigError::Invalid(format!("load_factor must be positive, got {}", self.load_factor)));
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            enforce_q_limits: self.enforce_q_limits,
            flat_start: self.flat_start,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            delta_p: self.delta_p,
            v_lo: self.v_lo,
            v_hi: self.v_hi,
            r_p: self.r_p,
            r_n: self.r_n,
            r_e: self.r_e,
            beta: self.beta,
            max_episode_steps: self.max_episode_steps,
            solver: self.solver_config(),
        }
    }

    pub fn agent_config(&self) -> Result<AgentConfig, ConfigError> {
        let method = match self.optimizer.as_str() {
            "adam" => Method::Adam {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            "sgd" => Method::Sgd,
            other => return Err(ConfigError::Invalid(format!("optimizer must be adam or sgd, got {other:?}"))),
        };
        Ok(AgentConfig {
            gamma: self.gamma,
            alpha: self.alpha,
            epsilon_start: self.epsilon_start,
            epsilon_min: self.epsilon_min,
            decay_rate: self.decay_rate,
            batch_size: self.batch_size,
            memory_size: self.memory_size,
            target_sync_period: self.target_sync_period,
            learn_every: self.learn_every,
            max_train_episodes: self.max_train_episodes,
            max_eval_steps: self.max_eval_steps,
            stall_boost: (self.stall_patience > 0).then_some(StallBoost {
                patience: self.stall_patience,
                epsilon: self.stall_epsilon,
            }),
            hidden: self.hidden.clone(),
            method,
            double_q: self.double_q,
            train_init: parse_init(&self.train_init, self.init_sigma)?,
            eval_epsilon: self.eval_epsilon,
            benchmark_rtol: self.benchmark_rtol,
        })
    }

    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            delta_p: self.delta_p,
            restarts: self.oracle_restarts,
            max_sweeps: self.oracle_max_sweeps,
            seed: self.seed,
            respect_voltage_band: self.respect_voltage_band,
            workers: self.workers,
        }
    }

    pub fn eval_init(&self) -> InitMode {
        parse_init(&self.eval_init, self.init_sigma).unwrap_or(InitMode::UniformRandom)
    }

    pub fn policy_kind(&self) -> Result<PolicyKind, ConfigError> {
        match self.eval_policy.as_str() {
            "benchmark" => Ok(PolicyKind::Benchmark),
            "budget" => Ok(PolicyKind::Budget),
            other => Err(ConfigError::Invalid(format!(
                "eval_policy must be benchmark or budget, got {other:?}"
            ))),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_name)
    }
}
