//! AC power flow in polar coordinates.
//!
//! Full Newton–Raphson on the P/Q mismatch equations with a dense analytic
//! Jacobian, optional PV→PQ switching on reactive limits, and π-model
//! branch flow evaluation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::PowerFlowError;
use crate::network::{BusKind, NetworkCase};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Largest accepted absolute P or Q mismatch, p.u.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub enforce_q_limits: bool,
    /// Start from 1∠0 at PQ buses instead of the case voltages.
    pub flat_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 30,
            enforce_q_limits: true,
            flat_start: true,
        }
    }
}

impl SolverConfig {
    /// The loose 2e-3 p.u. tolerance of the original grid simulator.
    pub fn paper_env() -> Self {
        Self {
            tolerance: 2e-3,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(format!("tolerance must be positive, got {}", self.tolerance));
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveFailure {
    MaxIterations,
    SingularJacobian,
    NonFinite,
}

/// Terminal flows of one branch, MW/MVar, positive into the branch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BranchFlow {
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
}

impl BranchFlow {
    pub fn p_loss(&self) -> f64 {
        self.p_from + self.p_to
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub vm: Vec<f64>,
    /// Radians.
    pub va: Vec<f64>,
    /// Per generator, MW.
    pub pg: Vec<f64>,
    /// Per generator, MVar.
    pub qg: Vec<f64>,
    pub branch_flows: Vec<BranchFlow>,
    pub converged: bool,
    /// Newton updates taken, summed over all PV→PQ passes.
    pub iterations: usize,
    /// Infinity norm of the final mismatch vector, p.u.
    pub max_mismatch: f64,
    pub pv_to_pq_switches: Vec<usize>,
    pub failure: Option<SolveFailure>,
}

impl PowerFlowSolution {
    pub fn vm_range(&self) -> (f64, f64) {
        self.vm
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Series, from-side and to-side admittances of one in-service branch:
/// `(y_ff, y_ft, y_tf, y_tt)`.
fn branch_admittances(
    r: f64,
    x: f64,
    b: f64,
    tap: f64,
    shift: f64,
) -> (Complex64, Complex64, Complex64, Complex64) {
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
    let half = Complex64::new(0.0, b / 2.0);
    let t = Complex64::from_polar(tap, shift);
    let ytt = ys + half;
    let yff = ytt / (tap * tap);
    let yft = -ys / t.conj();
    let ytf = -ys / t;
    (yff, yft, ytf, ytt)
}

/// Nodal admittance matrix in bus order, p.u.
pub fn build_ybus(case: &NetworkCase) -> Result<DMatrix<Complex64>, PowerFlowError> {
    let n = case.n_bus();
    let index = case.bus_index();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (k, bus) in case.buses.iter().enumerate() {
        y[(k, k)] += Complex64::new(bus.gs, bus.bs) / case.base_mva;
    }
    for (k, br) in case.branches.iter().enumerate() {
        if !br.in_service {
            continue;
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(PowerFlowError::ZeroImpedance {
                index: k + 1,
                from: br.from_bus,
                to: br.to_bus,
            });
        }
        let (Some(&f), Some(&t)) = (index.get(&br.from_bus), index.get(&br.to_bus)) else {
            return Err(crate::error::CaseError::Invalid(case.validate()).into());
        };
        let (yff, yft, ytf, ytt) = branch_admittances(br.r, br.x, br.b_charging, br.tap, br.shift);
        y[(f, f)] += yff;
        y[(f, t)] += yft;
        y[(t, f)] += ytf;
        y[(t, t)] += ytt;
    }
    Ok(y)
}

/// Complex power injections `V ∘ conj(Y V)`, p.u.
pub fn bus_injections(ybus: &DMatrix<Complex64>, vm: &[f64], va: &[f64]) -> Vec<Complex64> {
    let v: Vec<Complex64> = vm
        .iter()
        .zip(va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    (0..v.len())
        .map(|i| {
            let current: Complex64 = (0..v.len()).map(|k| ybus[(i, k)] * v[k]).sum();
            v[i] * current.conj()
        })
        .collect()
}

/// π-model terminal flows for every branch; out-of-service branches carry zero.
pub fn compute_branch_flows(
    case: &NetworkCase,
    vm: &[f64],
    va: &[f64],
) -> Result<Vec<BranchFlow>, PowerFlowError> {
    let n = case.n_bus();
    for got in [vm.len(), va.len()] {
        if got != n {
            return Err(PowerFlowError::Dimension { expected: n, got });
        }
    }
    let index = case.bus_index();
    let mut flows = Vec::with_capacity(case.branches.len());
    for (k, br) in case.branches.iter().enumerate() {
        if !br.in_service {
            flows.push(BranchFlow::default());
            continue;
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(PowerFlowError::ZeroImpedance {
                index: k + 1,
                from: br.from_bus,
                to: br.to_bus,
            });
        }
        let (Some(&f), Some(&t)) = (index.get(&br.from_bus), index.get(&br.to_bus)) else {
            return Err(crate::error::CaseError::Invalid(case.validate()).into());
        };
        // Series current through the branch, measured after the ideal tap on
        // the from side; losses are then exactly |I|²z.
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let ratio = Complex64::from_polar(br.tap, br.shift);
        let vf = Complex64::from_polar(vm[f], va[f]) / ratio;
        let vt = Complex64::from_polar(vm[t], va[t]);
        let is = (vf - vt) * ys;
        let to_side = vt * is.conj();
        let i2 = is.norm_sqr();
        let half_b = br.b_charging / 2.0;
        let base = case.base_mva;
        flows.push(BranchFlow {
            p_from: (to_side.re + i2 * br.r) * base,
            q_from: (to_side.im + i2 * br.x - half_b * vf.norm_sqr()) * base,
            p_to: -to_side.re * base,
            q_to: (-to_side.im - half_b * vt.norm_sqr()) * base,
        });
    }
    Ok(flows)
}

/// The Newton system for one fixed assignment of bus roles.
///
/// The unknown vector is `[va at PV and PQ buses, vm at PQ buses]`; the
/// mismatch is `[ΔP at PV and PQ buses, ΔQ at PQ buses]`, calculated minus
/// scheduled, in p.u.
#[derive(Debug, Clone)]
pub struct NewtonSystem {
    ybus: DMatrix<Complex64>,
    /// Scheduled net injection per bus, p.u.
    scheduled: Vec<Complex64>,
    pvpq: Vec<usize>,
    pq: Vec<usize>,
    /// Voltage template; PV and slack entries are held fixed.
    vm: Vec<f64>,
    va: Vec<f64>,
}

impl NewtonSystem {
    pub fn new(
        ybus: DMatrix<Complex64>,
        scheduled: Vec<Complex64>,
        pvpq: Vec<usize>,
        pq: Vec<usize>,
        vm: Vec<f64>,
        va: Vec<f64>,
    ) -> Self {
        Self {
            ybus,
            scheduled,
            pvpq,
            pq,
            vm,
            va,
        }
    }

    pub fn dim(&self) -> usize {
        self.pvpq.len() + self.pq.len()
    }

    pub fn state(&self) -> Vec<f64> {
        self.pvpq
            .iter()
            .map(|&i| self.va[i])
            .chain(self.pq.iter().map(|&i| self.vm[i]))
            .collect()
    }

    /// Full per-bus voltages for an unknown vector.
    pub fn voltages(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut vm = self.vm.clone();
        let mut va = self.va.clone();
        for (k, &i) in self.pvpq.iter().enumerate() {
            va[i] = x[k];
        }
        let off = self.pvpq.len();
        for (k, &i) in self.pq.iter().enumerate() {
            vm[i] = x[off + k];
        }
        (vm, va)
    }

    pub fn mismatch(&self, x: &[f64]) -> Vec<f64> {
        let (vm, va) = self.voltages(x);
        let s = bus_injections(&self.ybus, &vm, &va);
        self.pvpq
            .iter()
            .map(|&i| s[i].re - self.scheduled[i].re)
            .chain(self.pq.iter().map(|&i| s[i].im - self.scheduled[i].im))
            .collect()
    }

    /// Analytic Jacobian of [`Self::mismatch`].
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let (vm, va) = self.voltages(x);
        let n = vm.len();
        let v: Vec<Complex64> = vm
            .iter()
            .zip(&va)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect();
        let ibus: Vec<Complex64> = (0..n)
            .map(|i| (0..n).map(|k| self.ybus[(i, k)] * v[k]).sum())
            .collect();
        let unit: Vec<Complex64> = v.iter().map(|vi| vi / vi.norm()).collect();
        let j = Complex64::new(0.0, 1.0);

        // dS_i/dVa_k = j V_i conj(δ_ik I_i − Y_ik V_k)
        let ds_dva = |i: usize, k: usize| {
            let mut inner = -self.ybus[(i, k)] * v[k];
            if i == k {
                inner += ibus[i];
            }
            j * v[i] * inner.conj()
        };
        // dS_i/dVm_k = V_i conj(Y_ik u_k) + δ_ik conj(I_i) u_i
        let ds_dvm = |i: usize, k: usize| {
            let mut out = v[i] * (self.ybus[(i, k)] * unit[k]).conj();
            if i == k {
                out += ibus[i].conj() * unit[i];
            }
            out
        };

        let np = self.pvpq.len();
        let dim = self.dim();
        let mut jac = DMatrix::zeros(dim, dim);
        for (r, &i) in self.pvpq.iter().enumerate() {
            for (c, &k) in self.pvpq.iter().enumerate() {
                jac[(r, c)] = ds_dva(i, k).re;
            }
            for (c, &k) in self.pq.iter().enumerate() {
                jac[(r, np + c)] = ds_dvm(i, k).re;
            }
        }
        for (r, &i) in self.pq.iter().enumerate() {
            for (c, &k) in self.pvpq.iter().enumerate() {
                jac[(np + r, c)] = ds_dva(i, k).im;
            }
            for (c, &k) in self.pq.iter().enumerate() {
                jac[(np + r, np + c)] = ds_dvm(i, k).im;
            }
        }
        jac
    }
}

struct NewtonResult {
    vm: Vec<f64>,
    va: Vec<f64>,
    iterations: usize,
    max_mismatch: f64,
    failure: Option<SolveFailure>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

fn newton(system: &NewtonSystem, config: &SolverConfig) -> NewtonResult {
    let mut x = system.state();
    let mut iterations = 0;
    loop {
        let f = system.mismatch(&x);
        let norm = inf_norm(&f);
        let (vm, va) = system.voltages(&x);
        let finish = |failure| NewtonResult {
            vm: vm.clone(),
            va: va.clone(),
            iterations,
            max_mismatch: norm,
            failure,
        };
        if !norm.is_finite() {
            return finish(Some(SolveFailure::NonFinite));
        }
        if norm <= config.tolerance {
            return finish(None);
        }
        if iterations >= config.max_iterations {
            return finish(Some(SolveFailure::MaxIterations));
        }
        let jac = system.jacobian(&x);
        let rhs = -DVector::from_vec(f);
        let Some(dx) = jac.lu().solve(&rhs) else {
            return finish(Some(SolveFailure::SingularJacobian));
        };
        if dx.iter().any(|d| !d.is_finite()) {
            return finish(Some(SolveFailure::SingularJacobian));
        }
        for (xi, di) in x.iter_mut().zip(dx.iter()) {
            *xi += di;
        }
        iterations += 1;
    }
}

/// Solve the power flow using the case (or flat) voltages as the initial guess.
pub fn solve(case: &NetworkCase, config: &SolverConfig) -> Result<PowerFlowSolution, PowerFlowError> {
    solve_from(case, config, None)
}

/// Solve the power flow, optionally warm-started from `(vm, va)` of a previous
/// solution. PV and slack magnitudes always come from generator setpoints.
///
/// Non-convergence is reported through `converged = false`, never as an error.
pub fn solve_from(
    case: &NetworkCase,
    config: &SolverConfig,
    guess: Option<(&[f64], &[f64])>,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let violations = case.validate();
    if !violations.is_empty() {
        return Err(crate::error::CaseError::Invalid(violations).into());
    }
    let n = case.n_bus();
    if let Some((vm, va)) = guess {
        for got in [vm.len(), va.len()] {
            if got != n {
                return Err(PowerFlowError::Dimension { expected: n, got });
            }
        }
    }
    let index = case.bus_index();
    let base = case.base_mva;
    let ybus = build_ybus(case)?;

    let gens_at: Vec<Vec<usize>> = {
        let mut at = vec![Vec::new(); n];
        for (g, gen) in case.generators.iter().enumerate() {
            at[index[&gen.bus]].push(g);
        }
        at
    };
    let slack = case
        .buses
        .iter()
        .position(|b| b.kind == BusKind::Slack)
        .expect("validated case has a slack bus");

    let mut kinds: Vec<BusKind> = case.buses.iter().map(|b| b.kind).collect();
    // Reactive output pinned at a limit after PV→PQ switching, MVar.
    let mut pinned_q: Vec<Option<f64>> = vec![None; case.generators.len()];
    let mut switches = Vec::new();

    let mut vm: Vec<f64> = Vec::with_capacity(n);
    let mut va: Vec<f64> = Vec::with_capacity(n);
    for (i, bus) in case.buses.iter().enumerate() {
        let (m, a) = match guess {
            Some((gvm, gva)) => (gvm[i], gva[i]),
            None if config.flat_start => (1.0, case.buses[slack].va),
            None => (bus.vm, bus.va),
        };
        vm.push(m);
        va.push(a);
    }
    va[slack] = case.buses[slack].va;
    for i in 0..n {
        if kinds[i] != BusKind::Pq {
            if let Some(&g) = gens_at[i].first() {
                vm[i] = case.generators[g].v_set;
            }
        }
    }

    let mut total_iterations = 0;
    let max_passes = case.generators.len() + 1;
    let mut pass = 0;
    let outcome = loop {
        pass += 1;
        let scheduled: Vec<Complex64> = (0..n)
            .map(|i| {
                let bus = &case.buses[i];
                let mut s = Complex64::new(-bus.pd, -bus.qd);
                for &g in &gens_at[i] {
                    let gen = &case.generators[g];
                    let q = pinned_q[g].unwrap_or(gen.qg);
                    s += Complex64::new(gen.pg, q);
                }
                s / base
            })
            .collect();
        let pvpq: Vec<usize> = (0..n).filter(|&i| kinds[i] != BusKind::Slack).collect();
        let pq: Vec<usize> = (0..n).filter(|&i| kinds[i] == BusKind::Pq).collect();
        let system = NewtonSystem::new(ybus.clone(), scheduled, pvpq, pq, vm.clone(), va.clone());
        let result = newton(&system, config);
        total_iterations += result.iterations;
        vm = result.vm;
        va = result.va;
        let status = (result.max_mismatch, result.failure);
        if result.failure.is_some() || !config.enforce_q_limits || pass >= max_passes {
            break status;
        }

        let s = bus_injections(&ybus, &vm, &va);
        let mut switched = false;
        for i in 0..n {
            if kinds[i] != BusKind::Pv || gens_at[i].is_empty() {
                continue;
            }
            let q_gen = s[i].im * base + case.buses[i].qd;
            let q_min: f64 = gens_at[i].iter().map(|&g| case.generators[g].q_min).sum();
            let q_max: f64 = gens_at[i].iter().map(|&g| case.generators[g].q_max).sum();
            let at_max = q_gen > q_max + config.tolerance * base;
            let at_min = q_gen < q_min - config.tolerance * base;
            if at_max || at_min {
                for &g in &gens_at[i] {
                    let gen = &case.generators[g];
                    pinned_q[g] = Some(if at_max { gen.q_max } else { gen.q_min });
                }
                kinds[i] = BusKind::Pq;
                switches.push(case.buses[i].id);
                switched = true;
            }
        }
        if !switched {
            break status;
        }
    };
    let (max_mismatch, failure) = outcome;
    let converged = failure.is_none();
    let s = bus_injections(&ybus, &vm, &va);
    let mut pg: Vec<f64> = case.generators.iter().map(|g| g.pg).collect();
    let mut qg: Vec<f64> = case
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| pinned_q[g].unwrap_or(gen.qg))
        .collect();
    for i in 0..n {
        if gens_at[i].is_empty() {
            continue;
        }
        let bus = &case.buses[i];
        if kinds[i] == BusKind::Slack {
            let p_total = s[i].re * base + bus.pd;
            let others: f64 = gens_at[i][1..].iter().map(|&g| case.generators[g].pg).sum();
            pg[gens_at[i][0]] = p_total - others;
        }
        if kinds[i] != BusKind::Pq {
            let q_total = s[i].im * base + bus.qd;
            distribute_q(case, &gens_at[i], q_total, &mut qg);
        }
    }

    let branch_flows = compute_branch_flows(case, &vm, &va)?;
    Ok(PowerFlowSolution {
        vm,
        va,
        pg,
        qg,
        branch_flows,
        converged,
        iterations: total_iterations,
        max_mismatch,
        pv_to_pq_switches: switches,
        failure,
    })
}

/// Split a bus's reactive output across its generators in proportion to
/// their reactive ranges.
fn distribute_q(case: &NetworkCase, gens: &[usize], q_total: f64, qg: &mut [f64]) {
    let q_min: f64 = gens.iter().map(|&g| case.generators[g].q_min).sum();
    let range: f64 = gens
        .iter()
        .map(|&g| case.generators[g].q_max - case.generators[g].q_min)
        .sum();
    for &g in gens {
        let gen = &case.generators[g];
        qg[g] = if range > 0.0 {
            gen.q_min + (q_total - q_min) * (gen.q_max - gen.q_min) / range
        } else {
            q_total / gens.len() as f64
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::network::{Branch, Bus, Generator};

    pub(crate) fn two_bus(pd: f64, qd: f64, r: f64, x: f64) -> NetworkCase {
        let bus = |id, kind, pd, qd| Bus {
            id,
            kind,
            vm: 1.0,
            va: 0.0,
            pd,
            qd,
            gs: 0.0,
            bs: 0.0,
            base_kv: 132.0,
        };
        NetworkCase {
            base_mva: 100.0,
            buses: vec![bus(1, BusKind::Slack, 0.0, 0.0), bus(2, BusKind::Pq, pd, qd)],
            branches: vec![Branch::line(1, 2, r, x, 0.0)],
            generators: vec![Generator {
                bus: 1,
                pg: 0.0,
                qg: 0.0,
                p_min: -1000.0,
                p_max: 1000.0,
                q_min: -1000.0,
                q_max: 1000.0,
                v_set: 1.0,
                cost_a: 0.0,
                cost_b: 0.0,
            }],
        }
    }

    #[test]
    fn two_bus_ybus_by_hand() {
        let y = build_ybus(&two_bus(0.0, 0.0, 0.0, 0.1)).unwrap();
        let j10 = Complex64::new(0.0, 10.0);
        assert!((y[(0, 1)] - j10).norm() < 1e-12);
        assert!((y[(1, 0)] - j10).norm() < 1e-12);
        assert!((y[(0, 0)] + j10).norm() < 1e-12);
        assert!((y[(1, 1)] + j10).norm() < 1e-12);
    }

    #[test]
    fn out_of_service_branches_leave_shunts_only() {
        let mut case = cases::ieee14();
        for br in &mut case.branches {
            br.in_service = false;
        }
        let y = build_ybus(&case).unwrap();
        for i in 0..14 {
            for k in 0..14 {
                let expected = if i == k {
                    Complex64::new(case.buses[i].gs, case.buses[i].bs) / 100.0
                } else {
                    Complex64::new(0.0, 0.0)
                };
                assert_eq!(y[(i, k)], expected);
            }
        }
    }

    #[test]
    fn zero_impedance_branch_is_an_error() {
        let mut case = two_bus(0.0, 0.0, 0.0, 0.1);
        case.branches[0].x = 0.0;
        assert!(matches!(
            build_ybus(&case),
            Err(PowerFlowError::ZeroImpedance { index: 1, .. })
        ));
    }

    #[test]
    fn ybus_symmetric_away_from_transformers() {
        let case = cases::ieee14();
        let y = build_ybus(&case).unwrap();
        for br in case.branches.iter().filter(|b| !b.is_transformer()) {
            let idx = case.bus_index();
            let (f, t) = (idx[&br.from_bus], idx[&br.to_bus]);
            assert_eq!(y[(f, t)], y[(t, f)]);
        }
        for i in 0..14 {
            for k in 0..14 {
                assert!((y[(i, k)] - y[(k, i)]).norm() < 1e-12, "({i},{k})");
            }
        }
    }

    #[test]
    fn single_slack_without_load_needs_no_iterations() {
        let mut case = two_bus(0.0, 0.0, 0.0, 0.1);
        case.buses.truncate(1);
        case.branches.clear();
        case.generators[0].v_set = 1.02;
        let sol = solve(&case, &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.vm, vec![1.02]);
        assert_eq!(sol.pg, vec![0.0]);
        assert!(sol.qg[0].abs() < 1e-12);
    }

    /// Closed form for a lossless line feeding a PQ load from a 1∠0 source:
    /// |V2|⁴ + (2qx − 1)|V2|² + x²(p² + q²) = 0 and sin δ = p x / |V2|.
    fn two_bus_closed_form(p: f64, q: f64, x: f64) -> (f64, f64) {
        let b = 2.0 * q * x - 1.0;
        let c = x * x * (p * p + q * q);
        let v2sq = (-b + (b * b - 4.0 * c).sqrt()) / 2.0;
        let v2 = v2sq.sqrt();
        (v2, -(p * x / v2).asin())
    }

    #[test]
    fn two_bus_matches_closed_form() {
        let case = two_bus(100.0, 0.0, 0.0, 0.1);
        let sol = solve(&case, &SolverConfig { tolerance: 1e-12, ..Default::default() }).unwrap();
        let (v2, theta) = two_bus_closed_form(1.0, 0.0, 0.1);
        // Reference values from an independent script: |V2|² = (1 + √0.96)/2,
        // and with q = 0 the angle is asin(0.2)/2.
        assert!((v2 - 0.994_936_153_005_124_1).abs() < 1e-12);
        assert!((theta + 0.100_678_960_395_165_4).abs() < 1e-12);
        assert!((theta + 0.2_f64.asin() / 2.0).abs() < 1e-12);
        assert!(sol.converged);
        assert!((sol.vm[1] - v2).abs() < 1e-10);
        assert!((sol.va[1] - theta).abs() < 1e-10);

        let flow = sol.branch_flows[0];
        assert!((flow.p_from - 100.0).abs() < 1e-8);
        assert!((flow.p_to + 100.0).abs() < 1e-8);
        assert!((sol.pg[0] - 100.0).abs() < 1e-8);
    }

    #[test]
    fn two_bus_with_load_q() {
        let case = two_bus(80.0, 30.0, 0.0, 0.2);
        let sol = solve(&case, &SolverConfig { tolerance: 1e-12, ..Default::default() }).unwrap();
        let (v2, theta) = two_bus_closed_form(0.8, 0.3, 0.2);
        assert!((sol.vm[1] - v2).abs() < 1e-10);
        assert!((sol.va[1] - theta).abs() < 1e-10);
    }

    #[test]
    fn flat_profile_carries_no_flow() {
        let mut case = cases::ieee14();
        for br in &mut case.branches {
            br.b_charging = 0.0;
            br.tap = 1.0;
        }
        let flows = compute_branch_flows(&case, &[1.0; 14], &[0.0; 14]).unwrap();
        for f in flows {
            assert_eq!(f, BranchFlow::default());
        }
    }

    #[test]
    fn lossless_branch_flows_are_antisymmetric() {
        let case = cases::ieee14();
        let sol = solve(&case, &SolverConfig::default()).unwrap();
        for (br, f) in case.branches.iter().zip(&sol.branch_flows) {
            if br.r == 0.0 {
                assert_eq!(f.p_from, -f.p_to, "{}-{}", br.from_bus, br.to_bus);
            } else {
                assert!(f.p_loss() >= 0.0);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let case = cases::ieee14();
        assert!(matches!(
            compute_branch_flows(&case, &[1.0; 13], &[0.0; 14]),
            Err(PowerFlowError::Dimension { expected: 14, got: 13 })
        ));
    }

    #[test]
    fn bundled_case_converges_tightly() {
        let case = cases::ieee14();
        let config = SolverConfig { tolerance: 1e-9, ..Default::default() };
        let sol = solve(&case, &config).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 10, "{}", sol.iterations);
        assert!(sol.max_mismatch <= 1e-9);
    }

    #[test]
    fn heavy_overload_does_not_converge() {
        let case = cases::ieee14().scale_load(10.0).unwrap();
        let sol = solve(&case, &SolverConfig::default()).unwrap();
        assert!(!sol.converged);
        assert!(sol.failure.is_some());
    }

    #[test]
    fn q_limits_pin_switched_generators() {
        let mut case = cases::ieee14();
        case.generators[1].q_max = 5.0;
        case.generators[1].q_min = -5.0;
        let sol = solve(&case, &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.pv_to_pq_switches.contains(&2));
        let q = sol.qg[1];
        assert!(q == 5.0 || q == -5.0, "{q}");
        for (g, gen) in case.generators.iter().enumerate().skip(1) {
            assert!(sol.qg[g] >= gen.q_min - 1e-9 && sol.qg[g] <= gen.q_max + 1e-9);
        }
    }

    #[test]
    fn multiple_generators_share_q_by_range() {
        let mut case = two_bus(50.0, 20.0, 0.01, 0.1);
        case.buses[1].kind = BusKind::Pv;
        let gen = |q_min, q_max| Generator {
            bus: 2,
            pg: 10.0,
            qg: 0.0,
            p_min: 0.0,
            p_max: 100.0,
            q_min,
            q_max,
            v_set: 1.0,
            cost_a: 0.0,
            cost_b: 0.0,
        };
        case.generators.push(gen(-10.0, 10.0));
        case.generators.push(gen(-30.0, 30.0));
        let sol = solve(&case, &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        let total = sol.qg[1] + sol.qg[2];
        assert!((sol.qg[1] - (-10.0 + (total + 40.0) * 0.25)).abs() < 1e-9);
        assert_eq!(sol.pg[1], 10.0);
        assert_eq!(sol.pg[2], 10.0);
    }
}
