use thiserror::Error;

use crate::network::Violation;

fn join(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}, field {column}: malformed number {text:?}")]
    Malformed {
        line: usize,
        column: usize,
        text: String,
    },
    #[error("line {line}: unsupported record before bus data terminator: {message}")]
    UnsupportedRecord { line: usize, message: String },
    #[error("invalid case: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("load factor must be positive, got {0}")]
    NonPositiveFactor(f64),
    #[error("no generator with index {0}")]
    UnknownGenerator(usize),
}

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("branch {index} ({from}-{to}) has zero impedance")]
    ZeroImpedance { index: usize, from: usize, to: usize },
    #[error("expected {expected} voltage entries, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("action index {index} outside [0, {n_actions})")]
    ActionOutOfRange { index: usize, n_actions: usize },
    #[error("initial snapshot did not converge")]
    InitialDiverged,
    #[error("episode already terminated")]
    Terminated,
    #[error("cost requires a converged power flow")]
    Unconverged,
    #[error("invalid environment config: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("architecture mismatch: {0:?} vs {1:?}")]
    Architecture(Vec<usize>, Vec<usize>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("invalid agent config: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("no feasible dispatch found")]
    Infeasible,
    #[error("search window has {0} lattice points, limit is {1}")]
    WindowTooLarge(u128, u128),
    #[error("window has {got} axes, case has {expected} controllable generators")]
    WindowShape { expected: usize, got: usize },
    #[error("invalid oracle config: {0}")]
    Config(String),
}
