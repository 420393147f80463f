pub mod agent;
pub mod cases;
pub mod config;
pub mod env;
pub mod error;
pub mod native;
pub mod network;
pub mod neural;
pub mod oracle;
pub mod powerflow;
pub mod raw;
pub mod rng;
pub mod study;

pub use error::{CaseError, EnvError, PowerFlowError};
pub use network::{Branch, Bus, BusKind, Generator, NetworkCase, Violation};
pub use powerflow::{solve, solve_from, BranchFlow, PowerFlowSolution, SolverConfig};
