#![allow(dead_code)]

use oapd::{Branch, Bus, BusKind, Generator, NetworkCase};

pub fn bus(id: usize, kind: BusKind, pd: f64, qd: f64) -> Bus {
    Bus {
        id,
        kind,
        vm: 1.0,
        va: 0.0,
        pd,
        qd,
        gs: 0.0,
        bs: 0.0,
        base_kv: 132.0,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn gen(bus: usize, pg: f64, p_min: f64, p_max: f64, v_set: f64, a: f64, b: f64) -> Generator {
    Generator {
        bus,
        pg,
        qg: 0.0,
        p_min,
        p_max,
        q_min: -100.0,
        q_max: 100.0,
        v_set,
        cost_a: a,
        cost_b: b,
    }
}

/// Three buses in a triangle, a slack and two controllable generators with
/// convex costs. Limits and setpoints sit on the 0.5 MW lattice.
pub fn toy_two_gen(a2: f64, b2: f64, a3: f64, b3: f64) -> NetworkCase {
    NetworkCase {
        base_mva: 100.0,
        buses: vec![
            bus(1, BusKind::Slack, 0.0, 0.0),
            bus(2, BusKind::Pv, 40.0, 10.0),
            bus(3, BusKind::Pv, 35.0, 8.0),
        ],
        branches: vec![
            Branch::line(1, 2, 0.02, 0.12, 0.02),
            Branch::line(1, 3, 0.03, 0.15, 0.02),
            Branch::line(2, 3, 0.02, 0.10, 0.01),
        ],
        generators: vec![
            gen(1, 40.0, 0.0, 200.0, 1.02, 0.02, 20.0),
            gen(2, 15.0, 0.0, 30.0, 1.01, a2, b2),
            gen(3, 15.0, 0.0, 30.0, 1.01, a3, b3),
        ],
    }
    .validated()
    .unwrap()
}

/// Two free generators sharing one bus, so only their sum matters to the
/// network. The slack floor caps that sum at 50 MW.
pub fn toy_shared_bus() -> NetworkCase {
    NetworkCase {
        base_mva: 100.0,
        buses: vec![bus(1, BusKind::Slack, 0.0, 0.0), bus(2, BusKind::Pv, 60.0, 5.0)],
        branches: vec![Branch::line(1, 2, 0.01, 0.1, 0.0)],
        generators: vec![
            gen(1, 30.0, 10.0, 200.0, 1.0, 0.01, 20.0),
            gen(2, 15.0, 0.0, 40.0, 1.0, 0.0, 0.0),
            gen(2, 15.0, 0.0, 40.0, 1.0, 0.0, 0.0),
        ],
    }
    .validated()
    .unwrap()
}
