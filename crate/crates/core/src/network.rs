//! Grid data model: buses, branches, generators and the case that owns them.
//!
//! Units follow the usual power-flow conventions: powers in MW/MVar,
//! impedances in per-unit on `base_mva`, angles in radians. Degrees only
//! appear at file boundaries.

use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::error::CaseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Voltage magnitude, p.u.
    pub vm: f64,
    /// Voltage angle, radians.
    pub va: f64,
    pub pd: f64,
    pub qd: f64,
    /// Shunt conductance, MW consumed at 1.0 p.u.
    pub gs: f64,
    /// Shunt susceptance, MVar injected at 1.0 p.u.
    pub bs: f64,
    pub base_kv: f64,
}

/// A π-model branch. Transformers are branches with `tap != 1` or a
/// non-zero phase shift; the tap sits on the from side.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance, p.u.
    pub b_charging: f64,
    pub tap: f64,
    /// Phase shift, radians.
    pub shift: f64,
    pub in_service: bool,
}

impl Branch {
    pub fn line(from_bus: usize, to_bus: usize, r: f64, x: f64, b_charging: f64) -> Self {
        Self {
            from_bus,
            to_bus,
            r,
            x,
            b_charging,
            tap: 1.0,
            shift: 0.0,
            in_service: true,
        }
    }

    pub fn is_transformer(&self) -> bool {
        self.tap != 1.0 || self.shift != 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub pg: f64,
    pub qg: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Scheduled voltage magnitude, p.u.
    pub v_set: f64,
    /// Quadratic cost coefficient, $/MW²h.
    pub cost_a: f64,
    /// Linear cost coefficient, $/MWh.
    pub cost_b: f64,
}

impl Generator {
    pub fn clamp_p(&self, p: f64) -> f64 {
        p.clamp(self.p_min, self.p_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

/// One broken invariant, as reported by [`NetworkCase::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// What the rule applies to, e.g. `generator 3` or `case`.
    pub subject: String,
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} {}", self.subject, self.field, self.rule)
    }
}

fn violation(subject: impl Into<String>, field: &'static str, rule: impl Into<String>) -> Violation {
    Violation {
        subject: subject.into(),
        field,
        rule: rule.into(),
    }
}

impl NetworkCase {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Map from bus id to its position in `buses`.
    pub fn bus_index(&self) -> HashMap<usize, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn slack_bus(&self) -> Option<&Bus> {
        self.buses.iter().find(|b| b.kind == BusKind::Slack)
    }

    /// Index (into `generators`) of the generator sitting on the slack bus.
    pub fn slack_generator(&self) -> Option<usize> {
        let slack = self.slack_bus()?.id;
        self.generators.iter().position(|g| g.bus == slack)
    }

    /// Indices of the generators the dispatch agent controls, in case order.
    pub fn controllable_generators(&self) -> Vec<usize> {
        let slack = self.slack_generator();
        (0..self.generators.len())
            .filter(|&i| Some(i) != slack)
            .collect()
    }

    pub fn total_load(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.pd, q + b.qd))
    }

    /// Every broken invariant of the case; empty iff the case is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            out.push(violation("case", "base_mva", "must be positive"));
        }

        let mut seen = HashSet::new();
        let mut kinds = HashMap::new();
        for bus in &self.buses {
            let who = format!("bus {}", bus.id);
            if bus.id == 0 {
                out.push(violation(&who, "id", "must be a positive integer"));
            }
            if !seen.insert(bus.id) {
                out.push(violation(&who, "id", "is not unique"));
            }
            if !(bus.vm.is_finite() && bus.vm > 0.0) {
                out.push(violation(&who, "vm", "must be positive"));
            }
            for (field, value) in [
                ("va", bus.va),
                ("pd", bus.pd),
                ("qd", bus.qd),
                ("gs", bus.gs),
                ("bs", bus.bs),
                ("base_kv", bus.base_kv),
            ] {
                if !value.is_finite() {
                    out.push(violation(&who, field, "must be finite"));
                }
            }
            kinds.insert(bus.id, bus.kind);
        }

        let slack_count = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        if slack_count != 1 {
            out.push(violation(
                "case",
                "buses",
                format!("must contain exactly one slack bus, found {slack_count}"),
            ));
        }

        for (i, br) in self.branches.iter().enumerate() {
            let who = format!("branch {} ({}-{})", i + 1, br.from_bus, br.to_bus);
            if !kinds.contains_key(&br.from_bus) {
                out.push(violation(&who, "from_bus", format!("references missing bus {}", br.from_bus)));
            }
            if !kinds.contains_key(&br.to_bus) {
                out.push(violation(&who, "to_bus", format!("references missing bus {}", br.to_bus)));
            }
            if br.from_bus == br.to_bus {
                out.push(violation(&who, "to_bus", "must differ from from_bus"));
            }
            if br.r == 0.0 && br.x == 0.0 {
                out.push(violation(&who, "x", "r and x cannot both be zero"));
            }
            if !(br.tap.is_finite() && br.tap > 0.0) {
                out.push(violation(&who, "tap", "must be positive"));
            }
            for (field, value) in [
                ("r", br.r),
                ("x", br.x),
                ("b_charging", br.b_charging),
                ("shift", br.shift),
            ] {
                if !value.is_finite() {
                    out.push(violation(&who, field, "must be finite"));
                }
            }
        }

        let mut hosted: HashMap<usize, usize> = HashMap::new();
        for (i, g) in self.generators.iter().enumerate() {
            let who = format!("generator {}", i + 1);
            if kinds.contains_key(&g.bus) {
                *hosted.entry(g.bus).or_default() += 1;
            } else {
                out.push(violation(&who, "bus", format!("references missing bus {}", g.bus)));
            }
            let finite = [
                ("pg", g.pg),
                ("qg", g.qg),
                ("p_min", g.p_min),
                ("p_max", g.p_max),
                ("q_min", g.q_min),
                ("q_max", g.q_max),
                ("cost_a", g.cost_a),
                ("cost_b", g.cost_b),
            ];
            let mut all_finite = true;
            for (field, value) in finite {
                if !value.is_finite() {
                    out.push(violation(&who, field, "must be finite"));
                    all_finite = false;
                }
            }
            if !(g.v_set.is_finite() && g.v_set > 0.0) {
                out.push(violation(&who, "v_set", "must be positive"));
            }
            if !all_finite {
                continue;
            }
            if g.p_min > g.p_max {
                out.push(violation(&who, "p_min", "exceeds p_max"));
            }
            if g.q_min > g.q_max {
                out.push(violation(&who, "q_min", "exceeds q_max"));
            }
            if g.pg < g.p_min {
                out.push(violation(&who, "pg", format!("{} below p_min {}", g.pg, g.p_min)));
            }
            if g.pg > g.p_max {
                out.push(violation(&who, "pg", format!("{} above p_max {}", g.pg, g.p_max)));
            }
        }

        for bus in &self.buses {
            let count = hosted.get(&bus.id).copied().unwrap_or(0);
            match bus.kind {
                BusKind::Slack if count != 1 => out.push(violation(
                    format!("bus {}", bus.id),
                    "generators",
                    format!("slack bus must host exactly one generator, found {count}"),
                )),
                BusKind::Pv if count == 0 => out.push(violation(
                    format!("bus {}", bus.id),
                    "generators",
                    "PV bus hosts no generator",
                )),
                _ => {}
            }
        }

        out
    }

    /// Returns `self` unchanged when valid, otherwise the collected violations.
    pub fn validated(self) -> Result<Self, CaseError> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(CaseError::Invalid(violations))
        }
    }

    /// A copy of the case with every bus load multiplied by `factor`.
    pub fn scale_load(&self, factor: f64) -> Result<NetworkCase, CaseError> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(CaseError::NonPositiveFactor(factor));
        }
        let mut scaled = self.clone();
        for bus in &mut scaled.buses {
            bus.pd *= factor;
            bus.qd *= factor;
        }
        Ok(scaled)
    }

    /// Replace generator cost coefficients from `(gen index, a, b)` rows,
    /// where the index is 1-based in case order.
    pub fn apply_costs(&mut self, costs: &[(usize, f64, f64)]) -> Result<(), CaseError> {
        for &(index, a, b) in costs {
            let g = index
                .checked_sub(1)
                .and_then(|i| self.generators.get_mut(i))
                .ok_or(CaseError::UnknownGenerator(index))?;
            g.cost_a = a;
            g.cost_b = b;
        }
        Ok(())
    }
}
