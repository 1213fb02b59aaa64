#![allow(dead_code)]

use voltgrid_core::controller::QLimits;
use voltgrid_core::grid::{Bus, BusKind, Line};
use voltgrid_core::linalg::Matrix;
use voltgrid_core::scenario::{
    ControlMode, ControllerSpec, DummySpec, EventAction, GridSpec, InnerMode, InverterSpec, Scenario, TimedEvent,
    TransportSpec,
};
use voltgrid_core::sim::TransportMode;


/// The three-inverter lab feeder with the supplied controller model.
pub fn lab_grid() -> GridSpec {
    let kinds = [
        ("PCC", BusKind::Slack, 0.0),
        ("A", BusKind::Passive, 0.0),
        ("B", BusKind::Passive, 0.0),
        ("C", BusKind::Passive, 0.0),
        ("PV1", BusKind::Inverter, 0.0),
        ("LOAD", BusKind::Load, -15_000.0),
        ("D", BusKind::Passive, 0.0),
        ("PV2", BusKind::Inverter, 0.0),
        ("BAT", BusKind::Inverter, 10_000.0),
    ];
    let buses = kinds
        .iter()
        .enumerate()
        .map(|(i, &(n, k, p))| Bus::new(i, n, k).with_injection(p, 0.0))
        .collect();
    let lines = vec![
        Line::new(0, 1, 0.085, 0.054),
        Line::new(1, 2, 0.055, 0.035),
        Line::new(2, 3, 0.0078, 0.002),
        Line::new(3, 4, 0.095, 0.007),
        Line::new(3, 5, 0.002, 0.001),
        Line::new(2, 6, 0.11, 0.027),
        Line::new(6, 7, 0.025, 0.0008),
        Line::new(7, 8, 0.884, 0.039),
    ];
    GridSpec {
        buses,
        lines,
        v_slack: 1.00944,
        v_min: 0.95,
        v_max: 1.05,
        explicit_x: None,
        explicit_g: Some(lab_g()),
    }
}

pub fn lab_g() -> Matrix {
    Matrix::from_rows(&[[48.3, -40.7, 0.0], [-40.7, 61.8, -18.7], [0.0, -18.7, 19.1]])
}

pub fn lab_limits() -> Vec<(usize, QLimits)> {
    vec![
        (4, QLimits::symmetric(6.0)),
        (7, QLimits::symmetric(6.0)),
        (8, QLimits::symmetric(8.0)),
    ]
}

/// Controller enabled at 180 s, battery infeed removed at 660 s, end at
/// 900 s; fixed K = 100, γ = 0.005.
pub fn lab_scenario() -> Scenario {
    Scenario {
        name: "lab".into(),
        grid: lab_grid(),
        inverters: lab_limits()
            .into_iter()
            .map(|(bus, limits)| InverterSpec { bus, limits })
            .collect(),
        controller: ControllerSpec {
            mode: ControlMode::Distributed,
            alpha: 100.0,
            gamma: Some(0.005),
            k: 100,
            period_s: 10.0,
            inner: InnerMode::FixedK,
            ..ControllerSpec::default()
        },
        events: vec![
            TimedEvent {
                time_s: 180.0,
                action: EventAction::EnableController,
            },
            TimedEvent {
                time_s: 660.0,
                action: EventAction::SetInjection {
                    bus: 8,
                    p_w: 0.0,
                    q_var: 0.0,
                },
            },
            TimedEvent {
                time_s: 900.0,
                action: EventAction::End,
            },
        ],
        transport: TransportSpec {
            mode: TransportMode::DeterministicRounds { round_us: 1_000 },
            seed: 0,
        },
        dummy_nodes: Some(DummySpec {
            count: 0,
            from: 7,
            to: 8,
        }),
        clock_offsets_s: Vec::new(),
        noise_sigma_pu: 0.0,
        max_steps: 100_000,
        interleaved_alpha: Some(40.0),
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
