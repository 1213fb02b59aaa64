//! Seeded random feeders and scenarios for property checks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::QLimits;
use crate::grid::{Bus, BusKind, FeederModel, Line};
use crate::scenario::{ControlMode, ControllerSpec, GridSpec, InnerMode, InverterSpec, Scenario, TransportSpec};

/// Random radial feeder with `n_inv` inverters among `n_inv + extra`
/// non-slack buses, half of the passive ones carrying a load. Parents are
/// drawn among earlier buses, so the slack bus often has several branches.
pub fn random_feeder(seed: u64, n_inv: usize, extra: usize) -> FeederModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 1 + n_inv + extra;
    let mut kinds: Vec<BusKind> = (0..n_inv)
        .map(|_| BusKind::Inverter)
        .chain((0..extra).map(|_| BusKind::Passive))
        .collect();
    for i in (1..kinds.len()).rev() {
        let j = rng.gen_range(0..=i);
        kinds.swap(i, j);
    }
    let mut buses = vec![Bus::new(0, "S", BusKind::Slack)];
    let mut lines = Vec::new();
    for b in 1..n {
        let mut bus = Bus::new(b, format!("B{b}"), kinds[b - 1]);
        if bus.kind == BusKind::Passive && rng.gen_bool(0.5) {
            bus.kind = BusKind::Load;
            bus = bus.with_injection(-rng.gen_range(1000.0..8000.0), -rng.gen_range(0.0..2000.0));
        }
        buses.push(bus);
        let parent = rng.gen_range(0..b);
        lines.push(Line::new(parent, b, rng.gen_range(0.01..0.2), rng.gen_range(0.005..0.08)));
    }
    FeederModel::new(buses, lines, 1.0, 0.95, 1.05).expect("generated tree is valid")
}

pub fn grid_spec(feeder: &FeederModel) -> GridSpec {
    GridSpec {
        buses: feeder.buses().to_vec(),
        lines: feeder.lines().to_vec(),
        v_slack: feeder.v_slack,
        v_min: feeder.v_min,
        v_max: feeder.v_max,
        explicit_x: None,
        explicit_g: None,
    }
}

/// Distributed controller running from the first step with an inner loop
/// run close to exactness, at a fixed operating point.
pub fn steady_scenario(name: &str, grid: GridSpec, limits: &[(usize, QLimits)], max_steps: usize) -> Scenario {
    Scenario {
        name: name.into(),
        grid,
        inverters: limits
            .iter()
            .map(|&(bus, limits)| InverterSpec { bus, limits })
            .collect(),
        controller: ControllerSpec {
            mode: ControlMode::Distributed,
            alpha: 50.0,
            gamma: None,
            k: 20_000,
            inner: InnerMode::Tolerance { tolerance_kvar: 1e-4 },
            enabled_at_start: true,
            ..ControllerSpec::default()
        },
        events: Vec::new(),
        transport: TransportSpec::default(),
        dummy_nodes: None,
        clock_offsets_s: Vec::new(),
        noise_sigma_pu: 0.0,
        max_steps,
        interleaved_alpha: None,
    }
}

/// Random feeder with generation at every inverter. Generation and loads
/// are scaled down together until absorbing the full reactive capability
/// keeps every inverter voltage inside the limits with some margin.
pub fn random_feasible_scenario(seed: u64, n_inv: usize) -> Scenario {
    let feeder = random_feeder(seed, n_inv, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
    let mut grid = grid_spec(&feeder);
    let inv = feeder.inverter_buses();
    let caps: Vec<f64> = inv.iter().map(|_| rng.gen_range(3.0..10.0)).collect();
    let p: Vec<f64> = inv.iter().map(|_| rng.gen_range(2000.0..20000.0)).collect();
    let limits: Vec<(usize, QLimits)> = inv
        .iter()
        .zip(&caps)
        .map(|(&b, &c)| (b, QLimits::symmetric(c)))
        .collect();
    for (&b, &pb) in inv.iter().zip(&p) {
        grid.buses[b].p_w = pb;
    }
    let nominal = grid.buses.clone();
    let q_min: Vec<f64> = caps.iter().map(|c| -c).collect();
    let mut scale = 1.0;
    loop {
        for (bus, nom) in grid.buses.iter_mut().zip(&nominal) {
            bus.p_w = scale * nom.p_w;
            bus.q_var = scale * nom.q_var;
        }
        let s = steady_scenario("random", grid.clone(), &limits, 2000);
        let setup = s.setup().expect("generated scenario is valid");
        let absorbing = setup.plant.inverter_voltages(&q_min);
        let idle = setup.plant.inverter_voltages(&vec![0.0; inv.len()]);
        if let (Ok((v, true)), Ok((v0, true))) = (absorbing, idle) {
            if v.iter().all(|&x| x < 1.048 && x > 0.952) && v0.iter().all(|&x| x > 0.952) {
                return s;
            }
        }
        scale *= 0.8;
    }
}
