mod common;

use common::max_abs_diff;
use voltgrid_core::testbed::random_feeder;
use voltgrid_core::grid::{compute_x_matrix, neighbor_graph, NeighborGraph, SensitivityPair};
use voltgrid_core::linalg::Matrix;
use voltgrid_core::power_flow::{solve_power_flow, solve_power_flow_newton, InjectionVector};

#[test]
fn g_sparsity_matches_tree_neighbors() {
    for seed in 0..50 {
        let feeder = random_feeder(seed, 3 + (seed as usize % 8), 1 + seed as usize % 6);
        let pair = SensitivityPair::from_feeder(&feeder).unwrap();
        assert_eq!(
            NeighborGraph::from_sparsity(&pair.g),
            neighbor_graph(&feeder),
            "seed {seed}"
        );
    }
}

#[test]
fn g_inverts_x() {
    for seed in 0..50 {
        let feeder = random_feeder(seed, 2 + seed as usize % 9, seed as usize % 5);
        let pair = SensitivityPair::from_feeder(&feeder).unwrap();
        let n = pair.len();
        let gx = pair.g.mul(&pair.x);
        let err = max_abs_diff(gx.as_slice(), Matrix::identity(n).as_slice());
        assert!(err < 1e-9, "seed {seed}: |GX - I| = {err:e}");
    }
}

#[test]
fn sweep_agrees_with_newton() {
    for seed in 0..20 {
        let mut feeder = random_feeder(100 + seed, 3 + seed as usize % 6, 4);
        let mut inj = InjectionVector::nominal(&feeder);
        for b in feeder.inverter_buses() {
            inj.p_w[b] = 3000.0 + 500.0 * b as f64;
            inj.q_var[b] = -1000.0 + 300.0 * (b % 4) as f64;
        }
        inj.v_slack = 1.01;
        feeder.v_slack = 1.01;
        let sweep = solve_power_flow(&feeder, &inj).unwrap();
        assert!(sweep.converged);
        let newton = solve_power_flow_newton(&feeder, &inj).unwrap();
        assert!(newton.converged);
        let err = max_abs_diff(&sweep.magnitude, &newton.magnitude);
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn voltage_sensitivity_matches_scaled_x_at_no_load() {
    for seed in 0..10 {
        let feeder = random_feeder(200 + seed, 4, 3);
        let mut base = InjectionVector::zeros(feeder.bus_count(), 1.0);
        base.v_slack = 1.0;
        let inv = feeder.inverter_buses();
        let x = compute_x_matrix(&feeder).unwrap();
        let step_var = 10.0;
        for (j, &bj) in inv.iter().enumerate() {
            let mut up = base.clone();
            up.q_var[bj] += step_var;
            let mut down = base.clone();
            down.q_var[bj] -= step_var;
            let vu = solve_power_flow(&feeder, &up).unwrap().magnitude;
            let vd = solve_power_flow(&feeder, &down).unwrap().magnitude;
            for (i, &bi) in inv.iter().enumerate() {
                // per kVAr
                let fd = (vu[bi] - vd[bi]) / (2.0 * step_var / 1000.0);
                let model = x[(i, j)] / 160.0;
                let scale = x.max_abs() / 160.0;
                assert!(
                    (fd - model).abs() <= 0.01 * scale,
                    "seed {seed} ({i},{j}): {fd} vs {model}"
                );
            }
        }
    }
}
