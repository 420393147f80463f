//! Dispatch environment.
//!
//! The agent controls every non-slack generator through a joint discrete
//! action: each generator moves by `-delta_p`, `0` or `+delta_p` MW. After the
//! move the network is re-solved, and the reward is
//!
//! ```text
//! r_p - beta * cost    all bus voltages inside [v_lo, v_hi]
//! -r_n                 some bus voltage outside the band
//! -r_e                 power flow diverged
//! ```
//!
//! with `cost = Σ a·P² + b·P` over all generators in k$/hr.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::EnvError;
use crate::network::NetworkCase;
use crate::powerflow::{solve_from, PowerFlowSolution, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    /// Action step, MW.
    pub delta_p: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    pub r_p: f64,
    pub r_n: f64,
    pub r_e: f64,
    /// Cost weight, per k$/hr.
    pub beta: f64,
    pub max_episode_steps: usize,
    pub solver: SolverConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            delta_p: 0.5,
            v_lo: 0.95,
            v_hi: 1.05,
            r_p: 1.0,
            r_n: 5.0,
            r_e: 10.0,
            beta: 0.02,
            max_episode_steps: 200,
            solver: SolverConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn check(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::Config(m));
        if !(self.v_lo < self.v_hi) {
            return bad(format!("v_lo {} must be below v_hi {}", self.v_lo, self.v_hi));
        }
        if !(self.delta_p > 0.0) {
            return bad(format!("delta_p must be positive, got {}", self.delta_p));
        }
        for (name, v) in [("r_p", self.r_p), ("r_n", self.r_n), ("r_e", self.r_e), ("beta", self.beta)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        self.solver.check().map_err(EnvError::Config)
    }
}

/// How controllable setpoints are chosen when an episode starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitMode {
    /// The case's own `pg` values.
    AsGiven,
    /// Independently uniform over `[p_min, p_max]`.
    UniformRandom,
    /// Gaussian with the given standard deviation (MW) around the case
    /// values, clamped to limits.
    Perturbed(f64),
}

/// Flat state vector: `vm` per bus, `va` per bus (radians), then `p_from`
/// and `q_from` per in-service branch in per-unit of the case base.
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
}

pub fn observation_dim(case: &NetworkCase) -> usize {
    2 * case.n_bus() + 2 * case.branches.iter().filter(|b| b.in_service).count()
}

/// Build the observation for a solved case.
pub fn observe(case: &NetworkCase, solution: &PowerFlowSolution) -> Observation {
    let mut v = Vec::with_capacity(observation_dim(case));
    v.extend_from_slice(&solution.vm);
    v.extend_from_slice(&solution.va);
    let live: Vec<_> = case
        .branches
        .iter()
        .zip(&solution.branch_flows)
        .filter(|(b, _)| b.in_service)
        .map(|(_, f)| *f)
        .collect();
    v.extend(live.iter().map(|f| f.p_from / case.base_mva));
    v.extend(live.iter().map(|f| f.q_from / case.base_mva));
    Observation(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepReason {
    Running,
    MaxSteps,
    VoltageViolation,
    Diverged,
}

impl StepReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StepReason::Running => "running",
            StepReason::MaxSteps => "max_steps",
            StepReason::VoltageViolation => "voltage_violation",
            StepReason::Diverged => "diverged",
        }
    }

    /// Whether the episode ended because of the state itself rather than
    /// the step limit.
    pub fn is_failure(self) -> bool {
        matches!(self, StepReason::VoltageViolation | StepReason::Diverged)
    }
}

impl fmt::Display for StepReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    /// k$/hr; `None` when the power flow diverged.
    pub cost: Option<f64>,
    pub terminal: bool,
    pub reason: StepReason,
    /// Per-generator active output, MW.
    pub dispatch: Vec<f64>,
    pub vm_min: f64,
    pub vm_max: f64,
}

pub fn n_actions(n_ctrl: usize) -> usize {
    3usize.pow(n_ctrl as u32)
}

/// Per-generator MW deltas for a joint action index. The least significant
/// base-3 digit drives the first controllable generator; digits 0, 1, 2 map
/// to `-delta_p`, `0`, `+delta_p`.
pub fn decode_action(index: usize, n_ctrl: usize, delta_p: f64) -> Result<Vec<f64>, EnvError> {
    let n_actions = n_actions(n_ctrl);
    if index >= n_actions {
        return Err(EnvError::ActionOutOfRange { index, n_actions });
    }
    let mut rest = index;
    Ok((0..n_ctrl)
        .map(|_| {
            let digit = rest % 3;
            rest /= 3;
            match digit {
                0 => -delta_p,
                1 => 0.0,
                _ => delta_p,
            }
        })
        .collect())
}

/// Inverse of [`decode_action`] on digit vectors (`0`, `1`, `2` per generator).
pub fn encode_action(digits: &[u8]) -> usize {
    digits
        .iter()
        .rev()
        .fold(0, |acc, &d| acc * 3 + usize::from(d.min(2)))
}

/// Generation cost Σ a·P² + b·P over all generators, k$/hr.
pub fn compute_cost(solution: &PowerFlowSolution, case: &NetworkCase) -> Result<f64, EnvError> {
    if !solution.converged {
        return Err(EnvError::Unconverged);
    }
    Ok(dispatch_cost(case, &solution.pg))
}

/// Cost of an explicit per-generator dispatch, k$/hr.
pub fn dispatch_cost(case: &NetworkCase, pg: &[f64]) -> f64 {
    case.generators
        .iter()
        .zip(pg)
        .map(|(g, &p)| g.cost_a * p * p + g.cost_b * p)
        .sum::<f64>()
        / 1000.0
}

pub fn in_band(solution: &PowerFlowSolution, config: &EnvConfig) -> bool {
    solution
        .vm
        .iter()
        .all(|&v| v >= config.v_lo && v <= config.v_hi)
}

/// Reward and step classification. `cost` is ignored unless the solution
/// converged inside the voltage band.
pub fn compute_reward(solution: &PowerFlowSolution, cost: f64, config: &EnvConfig) -> (f64, StepReason) {
    if !solution.converged {
        (-config.r_e, StepReason::Diverged)
    } else if !in_band(solution, config) {
        (-config.r_n, StepReason::VoltageViolation)
    } else {
        (config.r_p - config.beta * cost, StepReason::Running)
    }
}

/// Mutable state of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    case: NetworkCase,
    controls: Vec<usize>,
    solution: PowerFlowSolution,
    observation: Observation,
    step_count: usize,
    terminal: bool,
}

impl EpisodeState {
    /// The case with generator `pg` set to the current setpoints.
    pub fn case(&self) -> &NetworkCase {
        &self.case
    }

    pub fn controls(&self) -> &[usize] {
        &self.controls
    }

    pub fn setpoints(&self) -> Vec<f64> {
        self.controls
            .iter()
            .map(|&g| self.case.generators[g].pg)
            .collect()
    }

    pub fn solution(&self) -> &PowerFlowSolution {
        &self.solution
    }

    pub fn observation(&self) -> &Observation {
        &self.observation
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn n_actions(&self) -> usize {
        n_actions(self.controls.len())
    }

    /// Cost of the current state, when it converged.
    pub fn cost(&self) -> Option<f64> {
        compute_cost(&self.solution, &self.case).ok()
    }
}

fn initial_setpoints(case: &NetworkCase, controls: &[usize], init: InitMode, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    controls
        .iter()
        .map(|&g| {
            let gen = &case.generators[g];
            match init {
                InitMode::AsGiven => gen.pg,
                InitMode::UniformRandom => {
                    if gen.p_max > gen.p_min {
                        rng.random_range(gen.p_min..=gen.p_max)
                    } else {
                        gen.p_min
                    }
                }
                InitMode::Perturbed(sigma) => {
                    let noise = Normal::new(0.0, sigma.abs())
                        .map(|d| d.sample(&mut rng))
                        .unwrap_or(0.0);
                    gen.clamp_p(gen.pg + noise)
                }
            }
        })
        .collect()
}

/// Start an episode on `case`. Fails if the initial snapshot does not solve.
pub fn reset(
    case: &NetworkCase,
    config: &EnvConfig,
    init: InitMode,
    seed: u64,
) -> Result<(EpisodeState, Observation), EnvError> {
    config.check()?;
    let violations = case.validate();
    if !violations.is_empty() {
        return Err(crate::error::CaseError::Invalid(violations).into());
    }
    let controls = case.controllable_generators();
    let setpoints = initial_setpoints(case, &controls, init, seed);
    let mut case = case.clone();
    for (&g, p) in controls.iter().zip(setpoints) {
        case.generators[g].pg = p;
    }
    let solution = solve_from(&case, &config.solver, None)?;
    if !solution.converged {
        return Err(EnvError::InitialDiverged);
    }
    let observation = observe(&case, &solution);
    let state = EpisodeState {
        case,
        controls,
        solution,
        observation: observation.clone(),
        step_count: 0,
        terminal: false,
    };
    Ok((state, observation))
}

/// Solve with a warm start from the previous voltages, retrying from a flat
/// start if that fails.
fn resolve(case: &NetworkCase, solver: &SolverConfig, prev: &PowerFlowSolution) -> Result<PowerFlowSolution, EnvError> {
    let warm = solve_from(case, solver, Some((&prev.vm, &prev.va)))?;
    if warm.converged {
        return Ok(warm);
    }
    let flat = SolverConfig { flat_start: true, ..*solver };
    Ok(solve_from(case, &flat, None)?)
}

/// Apply one joint action.
pub fn step(state: &mut EpisodeState, action: usize, config: &EnvConfig) -> Result<StepOutcome, EnvError> {
    if state.terminal {
        return Err(EnvError::Terminated);
    }
    let deltas = decode_action(action, state.controls.len(), config.delta_p)?;
    for (&g, d) in state.controls.iter().zip(&deltas) {
        let gen = &mut state.case.generators[g];
        gen.pg = gen.clamp_p(gen.pg + d);
    }
    let solution = resolve(&state.case, &config.solver, &state.solution)?;
    state.step_count += 1;

    let cost = compute_cost(&solution, &state.case).ok();
    let (reward, mut reason) = compute_reward(&solution, cost.unwrap_or(f64::NAN), config);
    if reason == StepReason::Running && state.step_count >= config.max_episode_steps {
        reason = StepReason::MaxSteps;
    }
    let terminal = reason != StepReason::Running;
    state.terminal = terminal;

    let dispatch = if solution.converged {
        solution.pg.clone()
    } else {
        state.case.generators.iter().map(|g| g.pg).collect()
    };
    let (vm_min, vm_max) = solution.vm_range();
    if solution.converged {
        state.observation = observe(&state.case, &solution);
    }
    state.solution = solution;

    Ok(StepOutcome {
        observation: state.observation.clone(),
        reward,
        cost,
        terminal,
        reason,
        dispatch,
        vm_min,
        vm_max,
    })
}

/// Scale loads by `factor` and move each controllable generator by its
/// share of the load change, where a generator's share is its output over
/// the total output of all generators in the base case. Generators that hit
/// a limit pass their remainder to the unclamped ones in proportion to
/// their shares; the slack absorbs whatever is left when solved.
pub fn inertia_redispatch(case: &NetworkCase, factor: f64) -> Result<NetworkCase, EnvError> {
    let mut out = case.scale_load(factor)?;
    let (load, _) = case.total_load();
    let change = load * (factor - 1.0);
    let total: f64 = case.generators.iter().map(|g| g.pg).sum();
    let controls = case.controllable_generators();
    if total <= 0.0 || controls.is_empty() {
        return Ok(out);
    }
    let shares: Vec<f64> = controls.iter().map(|&g| case.generators[g].pg / total).collect();
    let mut target = change * shares.iter().sum::<f64>();
    let mut free: Vec<bool> = vec![true; controls.len()];
    // Each pass either places all of the remaining change or clamps at least
    // one more generator.
    for _ in 0..=controls.len() {
        let weight: f64 = shares
            .iter()
            .zip(&free)
            .filter(|(_, &f)| f)
            .map(|(s, _)| s)
            .sum();
        if target == 0.0 || weight <= 0.0 {
            break;
        }
        let mut placed = 0.0;
        for (k, &g) in controls.iter().enumerate() {
            if !free[k] {
                continue;
            }
            let gen = &mut out.generators[g];
            let wanted = gen.pg + target * shares[k] / weight;
            let clamped = gen.clamp_p(wanted);
            if clamped != wanted {
                free[k] = false;
            }
            placed += clamped - gen.pg;
            gen.pg = clamped;
        }
        target -= placed;
        if target.abs() < 1e-12 {
            break;
        }
    }
    if let Some(s) = case.slack_generator() {
        let moved: f64 = controls
            .iter()
            .map(|&g| out.generators[g].pg - case.generators[g].pg)
            .sum();
        let slack = &mut out.generators[s];
        slack.pg = slack.clamp_p(slack.pg + change - moved);
    }
    Ok(out)
}

/// Header of the per-step episode trace CSV.
pub fn trace_header(n_gen: usize) -> String {
    let mut h = String::from("step,action_index,cost_k$_hr,reward,terminal,reason,vm_min,vm_max");
    for g in 1..=n_gen {
        h.push_str(&format!(",pg_{g}"));
    }
    h
}

/// One trace CSV row for a step.
pub fn trace_row(step: usize, action: usize, outcome: &StepOutcome) -> String {
    let cost = outcome.cost.map(|c| c.to_string()).unwrap_or_default();
    let mut row = format!(
        "{step},{action},{cost},{},{},{},{},{}",
        outcome.reward, outcome.terminal, outcome.reason, outcome.vm_min, outcome.vm_max
    );
    for p in &outcome.dispatch {
        row.push_str(&format!(",{p}"));
    }
    row
}
