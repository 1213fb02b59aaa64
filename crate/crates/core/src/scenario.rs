//! Declarative experiment description and its expansion into a plant and
//! controller model.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::controller::{ControllerError, ControllerGains, DroopCurve, QLimits, VoltageLimits};
use crate::grid::{BusId, BusKind, FeederModel, GridError, Line, SensitivityPair};
use crate::linalg::Matrix;
use crate::power_flow::Plant;
use crate::qp::{recommended_gamma, InnerLoopConfig};
use crate::sim::TransportMode;

/// Entrywise tolerance between a supplied `X` and the inverse of a
/// supplied `G` (half a unit in the second decimal).
pub const EXPLICIT_X_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("grid: {0}")]
    Grid(#[from] GridError),
    #[error("controller: {0}")]
    Controller(#[from] ControllerError),
    #[error("inverter bus {0} has no limits in the inverter section")]
    MissingLimits(BusId),
    #[error("inverter section references bus {0}, which is not an inverter bus")]
    NotAnInverter(BusId),
    #[error("events must be time-ordered")]
    UnorderedEvents,
    #[error("event references unknown bus {0}")]
    UnknownBus(BusId),
    #[error("dummy nodes in explicit-matrix mode need inverters at both ends of the host line")]
    DummyHostNotInverters,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub buses: Vec<crate::grid::Bus>,
    pub lines: Vec<Line>,
    pub v_slack: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Supplied controller model; rows in agent order.
    pub explicit_x: Option<Matrix>,
    pub explicit_g: Option<Matrix>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverterSpec {
    pub bus: BusId,
    pub limits: QLimits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    Off,
    Droop,
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerMode {
    FixedK,
    /// Stop at `|Δq̂| < tolerance_kvar`, with `K` as the cap.
    Tolerance { tolerance_kvar: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSpec {
    pub mode: ControlMode,
    pub alpha: f64,
    /// `None` selects `1 / (2 σ(G))`.
    pub gamma: Option<f64>,
    pub k: usize,
    pub period_s: f64,
    pub droop_v: [f64; 4],
    pub inner: InnerMode,
    pub warm_start: bool,
    pub enabled_at_start: bool,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            mode: ControlMode::Distributed,
            alpha: 100.0,
            gamma: None,
            k: 100,
            period_s: 10.0,
            droop_v: [0.95, 0.99, 1.01, 1.05],
            inner: InnerMode::FixedK,
            warm_start: true,
            enabled_at_start: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventAction {
    EnableController,
    DisableController,
    SetInjection { bus: BusId, p_w: f64, q_var: f64 },
    End,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedEvent {
    pub time_s: f64,
    pub action: EventAction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportSpec {
    pub mode: TransportMode,
    pub seed: u64,
}

impl Default for TransportSpec {
    fn default() -> Self {
        Self {
            mode: TransportMode::DeterministicRounds { round_us: 1_000 },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DummySpec {
    pub count: usize,
    pub from: BusId,
    pub to: BusId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub grid: GridSpec,
    pub inverters: Vec<InverterSpec>,
    pub controller: ControllerSpec,
    pub events: Vec<TimedEvent>,
    pub transport: TransportSpec,
    pub dummy_nodes: Option<DummySpec>,
    /// Per-agent clock phase offsets in seconds (missing entries are 0).
    pub clock_offsets_s: Vec<f64>,
    /// Standard deviation of additive voltage measurement noise, p.u.
    pub noise_sigma_pu: f64,
    /// Upper bound on actuation steps when no `End` event is given.
    pub max_steps: usize,
    /// Outer step used by scalability runs with a single inner iteration.
    pub interleaved_alpha: Option<f64>,
}

/// Everything a run needs, derived from a [`Scenario`].
#[derive(Debug, Clone)]
pub struct Setup {
    pub feeder: FeederModel,
    pub plant: Plant,
    pub sensitivity: SensitivityPair,
    pub limits: Vec<QLimits>,
    pub names: Vec<String>,
    pub gains: ControllerGains,
    pub inner: InnerLoopConfig,
    pub vlim: VoltageLimits,
    pub droop: Vec<DroopCurve>,
}

impl Scenario {
    pub fn feeder(&self) -> Result<FeederModel, ScenarioError> {
        let g = &self.grid;
        Ok(FeederModel::new(g.buses.clone(), g.lines.clone(), g.v_slack, g.v_min, g.v_max)?)
    }

    fn validate(&self, feeder: &FeederModel) -> Result<(), ScenarioError> {
        for s in &self.inverters {
            let ok = feeder
                .buses()
                .get(s.bus)
                .is_some_and(|b| b.kind == BusKind::Inverter);
            if !ok {
                return Err(ScenarioError::NotAnInverter(s.bus));
            }
        }
        for w in self.events.windows(2) {
            if w[1].time_s < w[0].time_s {
                return Err(ScenarioError::UnorderedEvents);
            }
        }
        for e in &self.events {
            if let EventAction::SetInjection { bus, .. } = e.action {
                if bus >= feeder.bus_count() {
                    return Err(ScenarioError::UnknownBus(bus));
                }
            }
        }
        if !(self.noise_sigma_pu >= 0.0) {
            return Err(ScenarioError::Invalid("noise sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Expands dummy nodes (if any) and builds the plant, controller model
    /// and gains.
    pub fn setup(&self) -> Result<Setup, ScenarioError> {
        let expanded = match self.dummy_nodes {
            Some(d) if d.count > 0 => inject_dummy_nodes(self, d.count, d.from, d.to)?,
            _ => self.clone(),
        };
        expanded.setup_plain()
    }

    fn setup_plain(&self) -> Result<Setup, ScenarioError> {
        let feeder = self.feeder()?;
        self.validate(&feeder)?;
        let inv = feeder.inverter_buses();
        let sensitivity = if self.grid.explicit_x.is_some() || self.grid.explicit_g.is_some() {
            SensitivityPair::explicit(
                inv.clone(),
                self.grid.explicit_x.clone(),
                self.grid.explicit_g.clone(),
                EXPLICIT_X_TOLERANCE,
            )?
        } else {
            SensitivityPair::from_feeder(&feeder)?
        };
        let limits = inv
            .iter()
            .map(|&b| {
                self.inverters
                    .iter()
                    .find(|s| s.bus == b)
                    .map(|s| s.limits)
                    .ok_or(ScenarioError::MissingLimits(b))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let names = inv.iter().map(|&b| feeder.buses()[b].name.clone()).collect();
        let c = &self.controller;
        let gamma = c.gamma.unwrap_or_else(|| recommended_gamma(&sensitivity.g));
        let gains = ControllerGains::new(c.alpha, gamma, c.k, c.period_s)?;
        let inner = InnerLoopConfig {
            k: c.k,
            gamma,
            tolerance: match c.inner {
                InnerMode::FixedK => None,
                InnerMode::Tolerance { tolerance_kvar } => Some(tolerance_kvar),
            },
            warm_start: c.warm_start,
        };
        let droop = limits
            .iter()
            .map(|l| DroopCurve::new(c.droop_v, *l))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Setup {
            plant: Plant::new(feeder.clone(), inv),
            feeder,
            sensitivity,
            limits,
            names,
            gains,
            inner,
            vlim: VoltageLimits {
                min: self.grid.v_min,
                max: self.grid.v_max,
            },
            droop,
        })
    }
}

/// Splits the host line `from`–`to` into `count + 1` equal segments and
/// places a zero-capability agent at each new bus. In explicit-matrix mode
/// the direct coupling between the two inverters at the ends of the host
/// line is replaced by a chain through the new agents that leaves the
/// original agents' sensitivities unchanged.
pub fn inject_dummy_nodes(
    scenario: &Scenario,
    count: usize,
    from: BusId,
    to: BusId,
) -> Result<Scenario, ScenarioError> {
    let mut out = scenario.clone();
    out.dummy_nodes = None;
    let feeder = scenario.feeder()?;
    // orient the host line away from the slack bus
    let (a, b) = match feeder.parent(to) {
        Some((p, _)) if p == from => (from, to),
        _ => match feeder.parent(from) {
            Some((p, _)) if p == to => (to, from),
            _ => return Err(GridError::NoSuchLine(from, to).into()),
        },
    };
    if count == 0 {
        return Ok(out);
    }
    let explicit = scenario.grid.explicit_x.is_some() || scenario.grid.explicit_g.is_some();
    let (split, new_ids) = feeder.split_line(a, b, count + 1, BusKind::Inverter, "dummy")?;
    if explicit {
        let inv = feeder.inverter_buses();
        let up = inv.iter().position(|&x| x == a);
        let down = inv.iter().position(|&x| x == b);
        let (Some(up), Some(down)) = (up, down) else {
            return Err(ScenarioError::DummyHostNotInverters);
        };
        let pair = SensitivityPair::explicit(
            inv,
            scenario.grid.explicit_x.clone(),
            scenario.grid.explicit_g.clone(),
            EXPLICIT_X_TOLERANCE,
        )?;
        let grown = pair.with_interpolated_agents(up, down, count, &new_ids)?;
        out.grid.explicit_x = None;
        out.grid.explicit_g = Some(grown.g);
    }
    out.grid.buses = split.buses().to_vec();
    out.grid.lines = split.lines().to_vec();
    for (k, &id) in new_ids.iter().enumerate() {
        out.grid.buses[id].name = format!("D{}", k + 1);
        out.inverters.push(InverterSpec {
            bus: id,
            limits: QLimits { min: 0.0, max: 0.0 },
        });
    }
    Ok(out)
}
