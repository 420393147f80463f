//! Reference dispatch on the same discrete lattice the agent moves on.
//!
//! Every evaluated point is solved from a flat start, so the cost of a
//! dispatch does not depend on the order points are visited in. A point is
//! feasible when the power flow converges, the slack generator stays inside
//! its active-power limits and, optionally, every bus voltage sits in the
//! band.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;

use crate::env::{self, EnvConfig};
use crate::error::OracleError;
use crate::network::NetworkCase;
use crate::powerflow::{solve, SolverConfig};
use crate::rng::{child_seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub delta_p: f64,
    pub restarts: usize,
    pub max_sweeps: usize,
    pub seed: u64,
    pub respect_voltage_band: bool,
    /// Worker threads for independent restarts.
    pub workers: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            delta_p: 0.5,
            restarts: 10,
            max_sweeps: 1000,
            seed: 0,
            respect_voltage_band: true,
            workers: 1,
        }
    }
}

impl OracleConfig {
    pub fn check(&self) -> Result<(), OracleError> {
        if self.restarts == 0 {
            return Err(OracleError::Config("restarts must be at least 1".into()));
        }
        if !(self.delta_p > 0.0 && self.delta_p.is_finite()) {
            return Err(OracleError::Config(format!("delta_p must be positive, got {}", self.delta_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Controllable generator setpoints, MW.
    pub setpoints: Vec<f64>,
    /// Solved output of every generator, MW.
    pub dispatch: Vec<f64>,
    pub cost: f64,
    pub feasible: bool,
    pub restarts_used: usize,
    pub sweeps: usize,
}

/// Cost and full dispatch of one setpoint vector, `None` when infeasible.
pub fn evaluate_point(
    case: &NetworkCase,
    env_config: &EnvConfig,
    respect_voltage_band: bool,
    setpoints: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let mut case = case.clone();
    for (g, &p) in case.controllable_generators().into_iter().zip(setpoints) {
        case.generators[g].pg = p;
    }
    let solver = SolverConfig {
        flat_start: true,
        ..env_config.solver
    };
    let sol = solve(&case, &solver).ok()?;
    if !sol.converged {
        return None;
    }
    if respect_voltage_band && !env::in_band(&sol, env_config) {
        return None;
    }
    let slack = case.slack_generator()?;
    let gen = &case.generators[slack];
    let p = sol.pg[slack];
    let slack_tol = 1e-6;
    if p < gen.p_min - slack_tol || p > gen.p_max + slack_tol {
        return None;
    }
    let cost = env::compute_cost(&sol, &case).ok()?;
    Some((cost, sol.pg))
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Lower cost wins; equal costs go to the lexicographically smaller setpoints.
fn better(cost: f64, sp: &[f64], best_cost: f64, best_sp: &[f64]) -> bool {
    match cost.total_cmp(&best_cost) {
        Ordering::Less => true,
        Ordering::Equal => lex_cmp(sp, best_sp).is_lt(),
        Ordering::Greater => false,
    }
}

struct Descent {
    setpoints: Vec<f64>,
    cost: f64,
    dispatch: Vec<f64>,
    sweeps: usize,
}

fn descend(
    case: &NetworkCase,
    env_config: &EnvConfig,
    config: &OracleConfig,
    start: Vec<f64>,
) -> Option<Descent> {
    let controls = case.controllable_generators();
    let eval = |sp: &[f64]| evaluate_point(case, env_config, config.respect_voltage_band, sp);
    let mut current = start;
    let (mut cost, mut dispatch) = match eval(&current) {
        Some((c, d)) => (c, d),
        None => (f64::INFINITY, Vec::new()),
    };
    let mut sweeps = 0;
    while sweeps < config.max_sweeps {
        sweeps += 1;
        let mut improved = false;
        for (k, &g) in controls.iter().enumerate() {
            let gen = &case.generators[g];
            let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
            for dir in [-1.0, 1.0] {
                let p = gen.clamp_p(current[k] + dir * config.delta_p);
                if p == current[k] {
                    continue;
                }
                let mut trial = current.clone();
                trial[k] = p;
                if let Some((c, d)) = eval(&trial) {
                    let wins = match &best {
                        Some((bc, bsp, _)) => better(c, &trial, *bc, bsp),
                        None => true,
                    };
                    if wins {
                        best = Some((c, trial, d));
                    }
                }
            }
            if let Some((c, sp, d)) = best {
                if c < cost {
                    cost = c;
                    current = sp;
                    dispatch = d;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    cost.is_finite().then_some(Descent {
        setpoints: current,
        cost,
        dispatch,
        sweeps,
    })
}

/// A uniform draw within the generator's limits, snapped to the
/// `p_min + k·delta_p` lattice.
fn lattice_draw(p_min: f64, p_max: f64, delta_p: f64, rng: &mut impl Rng) -> f64 {
    if p_max <= p_min {
        return p_min;
    }
    let u: f64 = rng.random_range(p_min..=p_max);
    let k = ((u - p_min) / delta_p).round();
    (p_min + k * delta_p).min(p_max)
}

/// Multi-start coordinate descent over non-slack setpoints.
pub fn coordinate_descent(
    case: &NetworkCase,
    env_config: &EnvConfig,
    config: &OracleConfig,
) -> Result<OracleResult, OracleError> {
    config.check()?;
    let violations = case.validate();
    if !violations.is_empty() {
        return Err(crate::error::CaseError::Invalid(violations).into());
    }
    let controls = case.controllable_generators();
    let starts: Vec<Vec<f64>> = (0..config.restarts)
        .map(|r| {
            if r == 0 {
                controls.iter().map(|&g| case.generators[g].pg).collect()
            } else {
                let mut rng = crate::rng::substream(child_seed(config.seed, Stream::Oracle, r as u64), Stream::Oracle);
                controls
                    .iter()
                    .map(|&g| {
                        let gen = &case.generators[g];
                        lattice_draw(gen.p_min, gen.p_max, config.delta_p, &mut rng)
                    })
                    .collect()
            }
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| OracleError::Config(e.to_string()))?;
    let runs: Vec<Option<Descent>> = pool.install(|| {
        starts
            .into_par_iter()
            .map(|s| descend(case, env_config, config, s))
            .collect()
    });

    let sweeps = runs.iter().flatten().map(|d| d.sweeps).sum();
    let mut best: Option<Descent> = None;
    for d in runs.into_iter().flatten() {
        let wins = match &best {
            Some(b) => better(d.cost, &d.setpoints, b.cost, &b.setpoints),
            None => true,
        };
        if wins {
            best = Some(d);
        }
    }
    let best = best.ok_or(OracleError::Infeasible)?;
    Ok(OracleResult {
        setpoints: best.setpoints,
        dispatch: best.dispatch,
        cost: best.cost,
        feasible: true,
        restarts_used: config.restarts,
        sweeps,
    })
}

/// Lattice points `lo, lo + delta_p, ...` up to `hi`, with `hi` itself
/// appended when the step does not land on it.
pub fn axis_points(lo: f64, hi: f64, delta_p: f64) -> Vec<f64> {
    let mut points = Vec::new();
    let mut k = 0.0;
    loop {
        let p = lo + k * delta_p;
        if p > hi + 1e-9 {
            break;
        }
        points.push(p.min(hi));
        k += 1.0;
    }
    if points.last().is_some_and(|&p| p < hi - 1e-9) {
        points.push(hi);
    }
    points
}

pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

/// Evaluate every lattice point of `window` (one `(lo, hi)` MW range per
/// controllable generator, intersected with its limits).
pub fn exhaustive_search(
    case: &NetworkCase,
    env_config: &EnvConfig,
    respect_voltage_band: bool,
    window: &[(f64, f64)],
    delta_p: f64,
) -> Result<OracleResult, OracleError> {
    let controls = case.controllable_generators();
    if window.len() != controls.len() {
        return Err(OracleError::WindowShape {
            expected: controls.len(),
            got: window.len(),
        });
    }
    if !(delta_p > 0.0) {
        return Err(OracleError::Config(format!("delta_p must be positive, got {delta_p}")));
    }
    let axes: Vec<Vec<f64>> = controls
        .iter()
        .zip(window)
        .map(|(&g, &(lo, hi))| {
            let gen = &case.generators[g];
            let (lo, hi) = (lo.max(gen.p_min), hi.min(gen.p_max));
            if lo > hi {
                Vec::new()
            } else {
                axis_points(lo, hi, delta_p)
            }
        })
        .collect();
    let total: u128 = axes.iter().map(|a| a.len() as u128).product();
    if total > EXHAUSTIVE_LIMIT {
        return Err(OracleError::WindowTooLarge(total, EXHAUSTIVE_LIMIT));
    }

    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut index = vec![0usize; axes.len()];
    for _ in 0..total {
        let sp: Vec<f64> = index.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
        if let Some((c, d)) = evaluate_point(case, env_config, respect_voltage_band, &sp) {
            let wins = match &best {
                Some((bc, bsp, _)) => better(c, &sp, *bc, bsp),
                None => true,
            };
            if wins {
                best = Some((c, sp, d));
            }
        }
        // Odometer with the last axis turning fastest.
        for k in (0..index.len()).rev() {
            index[k] += 1;
            if index[k] < axes[k].len() {
                break;
            }
            index[k] = 0;
        }
    }
    let (cost, setpoints, dispatch) = best.ok_or(OracleError::Infeasible)?;
    Ok(OracleResult {
        setpoints,
        dispatch,
        cost,
        feasible: true,
        restarts_used: 0,
        sweeps: 0,
    })
}

pub fn oracle_csv_header(n_gen: usize) -> String {
    let mut h = String::from("cost_k$_hr");
    for i in 1..=n_gen {
        h.push_str(&format!(",pg_{i}"));
    }
    h.push_str(",feasible,restarts_used,sweeps");
    h
}

pub fn oracle_csv(result: &OracleResult) -> String {
    let mut out = oracle_csv_header(result.dispatch.len());
    out.push('\n');
    out.push_str(&result.cost.to_string());
    for p in &result.dispatch {
        out.push_str(&format!(",{p}"));
    }
    out.push_str(&format!(",{},{},{}\n", result.feasible, result.restarts_used, result.sweeps));
    out
}
