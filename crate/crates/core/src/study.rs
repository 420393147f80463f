//! End-to-end case studies: one training run evaluated from many random
//! starts, and the trained policy replayed at other load levels.

use std::fmt::Write as _;
use std::path::Path;

use crate::agent::{self, EvalPolicy, EvalReport, EvalSummary, TrainResult};
use crate::cases;
use crate::config::{ConfigError, PolicyKind, RunConfig};
use crate::env::{self, InitMode};
use crate::error::{AgentError, CaseError, EnvError, OracleError};
use crate::native::{parse_costs, parse_native_case};
use crate::network::NetworkCase;
use crate::neural::Mlp;
use crate::oracle::{coordinate_descent, OracleResult};
use crate::raw::parse_psse_raw_v26;
use crate::rng::{child_seed, Stream};

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn read(path: &Path) -> Result<String, StudyError> {
    std::fs::read_to_string(path).map_err(|source| StudyError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load a case file by extension (`.raw` is PSS/E v26, anything else the
/// native format) and apply an optional cost sidecar.
pub fn load_case(case: Option<&Path>, costs: Option<&Path>) -> Result<NetworkCase, StudyError> {
    let mut network = match case {
        None => cases::ieee14(),
        Some(path) => {
            let text = read(path)?;
            let is_raw = path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("raw"));
            if is_raw {
                parse_psse_raw_v26(&text)?
            } else {
                parse_native_case(&text)?
            }
        }
    };
    if let Some(path) = costs {
        network.apply_costs(&parse_costs(&read(path)?)?)?;
    }
    Ok(network)
}

pub fn load_case_for(config: &RunConfig) -> Result<NetworkCase, StudyError> {
    load_case(config.case.as_deref(), config.costs.as_deref())
}

/// Case scaled by `factor` with inertia redispatch (the case itself at 1.0).
pub fn case_at(case: &NetworkCase, factor: f64) -> Result<NetworkCase, StudyError> {
    if factor == 1.0 {
        Ok(case.clone())
    } else {
        Ok(env::inertia_redispatch(case, factor)?)
    }
}

/// Initial-state seeds for evaluation runs.
pub fn eval_seeds(seed: u64, runs: usize) -> Vec<u64> {
    (0..runs as u64)
        .map(|i| child_seed(seed, Stream::Init, (1 << 32) + i))
        .collect()
}

pub fn oracle_for(case: &NetworkCase, config: &RunConfig) -> Result<OracleResult, StudyError> {
    Ok(coordinate_descent(case, &config.env_config(), &config.oracle_config())?)
}

/// Evaluate `net` from `runs` seeded starts under the configured policy.
pub fn evaluate_runs(
    net: &Mlp,
    case: &NetworkCase,
    config: &RunConfig,
    reference: f64,
    runs: usize,
) -> Result<Vec<EvalReport>, StudyError> {
    let policy = match config.policy_kind()? {
        PolicyKind::Benchmark => EvalPolicy::BenchmarkStop {
            reference_cost: reference,
        },
        PolicyKind::Budget => EvalPolicy::BudgetMin,
    };
    Ok(agent::evaluate_many(
        net,
        case,
        &config.env_config(),
        &config.agent_config()?,
        policy,
        config.eval_init(),
        &eval_seeds(config.seed, runs),
        config.workers,
    )?)
}

#[derive(Debug, Clone)]
pub struct StudyOne {
    pub oracle: OracleResult,
    pub train: TrainResult,
    pub reports: Vec<EvalReport>,
    pub summary: EvalSummary,
}

/// Train once on `case`, then evaluate from `eval_runs` random starts
/// against the oracle cost.
pub fn study_one(case: &NetworkCase, config: &RunConfig) -> Result<StudyOne, StudyError> {
    let oracle = oracle_for(case, config)?;
    let train = agent::train(case, &config.env_config(), &config.agent_config()?, config.seed)?;
    let reports = evaluate_runs(&train.agent.online, case, config, oracle.cost, config.eval_runs)?;
    let summary = agent::summarize(&reports, oracle.cost);
    Ok(StudyOne {
        oracle,
        train,
        reports,
        summary,
    })
}

pub fn study_one_summary(study: &StudyOne, config: &RunConfig) -> String {
    let s = &study.summary;
    let mut out = String::new();
    let _ = writeln!(out, "study I: base case, {} runs from uniform random starts", s.runs);
    let _ = writeln!(out, "training episodes: {}", study.train.episodes.len());
    let _ = writeln!(out, "training steps: {}", study.train.log.len());
    let _ = writeln!(out, "final epsilon: {:.6}", study.train.final_epsilon);
    let _ = writeln!(out, "best training cost: {}", fmt_cost(study.train.best_cost));
    let _ = writeln!(out, "oracle cost: {:.6}", study.oracle.cost);
    let _ = writeln!(out, "eval policy: {}", config.eval_policy);
    let _ = writeln!(out, "within 0.1%: {:.4}", s.within_0_1pct);
    let _ = writeln!(out, "within 0.5%: {:.4}", s.within_0_5pct);
    let _ = writeln!(out, "within 1%: {:.4}", s.within_1pct);
    let _ = writeln!(out, "within 2%: {:.4}", s.within_2pct);
    let _ = writeln!(out, "mean steps: {:.2}", s.mean_steps);
    let _ = writeln!(out, "mean gap: {:.6}", s.mean_gap);
    out
}

fn fmt_cost(c: Option<f64>) -> String {
    c.map_or_else(|| "none".into(), |c| format!("{c:.6}"))
}

pub const STUDY_TWO_FACTORS: [f64; 4] = [0.8, 0.9, 1.1, 1.2];

#[derive(Debug, Clone)]
pub struct FactorRow {
    pub factor: f64,
    pub oracle: OracleResult,
    pub report: EvalReport,
}

impl FactorRow {
    pub fn gap(&self) -> Option<f64> {
        self.report
            .best_cost
            .map(|c| agent::relative_gap(c, self.oracle.cost))
    }
}

/// Replay `net` from the redispatched snapshot at each load factor, keeping
/// the cheapest state within the step budget.
pub fn study_two(
    case: &NetworkCase,
    config: &RunConfig,
    net: &Mlp,
    factors: &[f64],
) -> Result<Vec<FactorRow>, StudyError> {
    let agent_config = config.agent_config()?;
    let env_config = config.env_config();
    factors
        .iter()
        .map(|&factor| {
            let scaled = case_at(case, factor)?;
            let oracle = oracle_for(&scaled, config)?;
            let report = agent::evaluate(
                net,
                &scaled,
                &env_config,
                &agent_config,
                EvalPolicy::BudgetMin,
                InitMode::AsGiven,
                config.seed,
            )?;
            Ok(FactorRow {
                factor,
                oracle,
                report,
            })
        })
        .collect()
}

pub const STUDY_TWO_HEADER: &str = "load_factor,oracle_cost,agent_cost,gap,init_cost,steps";

pub fn study_two_csv(rows: &[FactorRow]) -> String {
    let mut out = String::from(STUDY_TWO_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.factor,
            r.oracle.cost,
            r.report.best_cost.map(|c| c.to_string()).unwrap_or_default(),
            r.gap().map(|g| g.to_string()).unwrap_or_default(),
            r.report.init_cost.map(|c| c.to_string()).unwrap_or_default(),
            r.report.steps
        );
    }
    out
}

pub fn study_two_summary(rows: &[FactorRow]) -> String {
    let mut out = String::from("study II: load factor sweep with inertia redispatch\n");
    let _ = writeln!(out, "{:>6} {:>12} {:>12} {:>9}", "load", "oracle", "agent", "gap");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>5.0}% {:>12.6} {:>12} {:>8.3}%",
            r.factor * 100.0,
            r.oracle.cost,
            fmt_cost(r.report.best_cost),
            r.gap().unwrap_or(f64::NAN) * 100.0
        );
    }
    out
}
