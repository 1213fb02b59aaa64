//! Run summaries, oracle verification and the configuration of the
//! step-count studies.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::oracle::{fairness_cost, solve_outer_centralized, OracleError, OuterSettings, OuterSolution};
use crate::scenario::{ControlMode, DummySpec, EventAction, InnerMode, Scenario, ScenarioError, Setup};
use crate::sim::log::{within_limits, SETTLE_WINDOW};
use crate::sim::{run_simulation, RunOptions, SimError, SimOutput};

/// Actuation-step budget of convergence studies.
pub const STEP_CAP: usize = 30_000;
/// `|q̂|` beyond this multiple of the largest capability counts as
/// divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e3;
/// Inner-loop stopping tolerance of the deep mode, kVAr.
pub const DEEP_TOLERANCE_KVAR: f64 = 0.01;
/// Iteration cap of the deep mode.
pub const DEEP_ITERATION_CAP: usize = 200_000;
/// Largest allowed gap between distributed and centralized set-points, kVAr.
pub const VERIFY_TOLERANCE_KVAR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub n_agents: usize,
    pub mode: String,
    /// Largest number of inner iterations in any actuation step.
    pub comm_steps: usize,
    /// Actuations until the set-points reached their final value; the
    /// number of steps run when they never did.
    pub act_steps: usize,
    /// Set-points stopped moving.
    pub converged: bool,
    /// ...with every voltage inside its limits.
    pub feasible: bool,
    pub j_fair: f64,
    pub diverged: bool,
    pub final_q: Vec<f64>,
}

pub fn summarize(run_id: &str, mode: &str, setup: &Setup, out: &SimOutput) -> RunSummary {
    let d = &out.detector;
    let caps: Vec<f64> = setup.limits.iter().map(|l| l.capability()).collect();
    let converged = !out.diverged && d.settled_at.is_some();
    let act_steps = d.converged_at.or(d.settled_at).unwrap_or(d.steps());
    RunSummary {
        run_id: run_id.to_string(),
        n_agents: setup.limits.len(),
        mode: mode.to_string(),
        comm_steps: out.max_inner_iterations,
        act_steps: if converged { act_steps } else { d.steps() },
        converged,
        feasible: !out.diverged && d.converged_at.is_some(),
        j_fair: fairness_cost(&out.final_q, &caps),
        diverged: out.diverged,
        final_q: out.final_q.clone(),
    }
}

/// Centralized optimum for the plant state at the end of a run.
pub fn centralized_reference(setup: &Setup, out: &SimOutput) -> Result<OuterSolution, OracleError> {
    let mut plant = out.final_plant.clone();
    solve_outer_centralized(
        &mut plant,
        &setup.sensitivity.x,
        &setup.limits,
        setup.vlim,
        OuterSettings::default(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub reference: Vec<f64>,
    pub max_deviation_kvar: f64,
    pub reference_feasible: bool,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.max_deviation_kvar <= VERIFY_TOLERANCE_KVAR
    }
}

pub fn verify_run(setup: &Setup, out: &SimOutput) -> Result<Verification, OracleError> {
    let r = centralized_reference(setup, out)?;
    let dev = r
        .q
        .iter()
        .zip(&out.final_q)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(Verification {
        reference: r.q,
        max_deviation_kvar: dev,
        reference_feasible: r.feasible,
    })
}

/// The set-points were settled, with every voltage inside its limits,
/// when the run ended. Only such runs are comparable with the centralized
/// optimum.
pub fn ends_settled_and_feasible(setup: &Setup, out: &SimOutput) -> bool {
    !out.diverged && out.detector.currently_settled() && within_limits(&out.final_v, setup.vlim)
}

/// Options for runs that stop at convergence, divergence or the cap.
pub fn convergence_options(setup: &Setup, cap: usize) -> RunOptions {
    let max_cap = setup.limits.iter().map(|l| l.capability()).fold(0.0, f64::max);
    RunOptions {
        record_rows: false,
        record_steps: false,
        stop_on_convergence: true,
        divergence_limit_kvar: Some(DIVERGENCE_FACTOR * max_cap.max(1e-9)),
        max_steps: Some(cap + SETTLE_WINDOW + 1),
        ..RunOptions::default()
    }
}

/// The scenario with the controller running from the first step at a
/// fixed operating point: enable/disable and end events are dropped and
/// injection changes scheduled at or before activation are applied
/// upfront.
pub fn steady_study_scenario(base: &Scenario) -> Scenario {
    let mut s = base.clone();
    let activation = base
        .events
        .iter()
        .find(|e| e.action == EventAction::EnableController)
        .map_or(0.0, |e| e.time_s);
    for e in &base.events {
        if let EventAction::SetInjection { bus, p_w, q_var } = e.action {
            if e.time_s <= activation {
                s.grid.buses[bus].p_w = p_w;
                s.grid.buses[bus].q_var = q_var;
            }
        }
    }
    s.events.clear();
    s.controller.enabled_at_start = true;
    if s.controller.mode == ControlMode::Off {
        s.controller.mode = ControlMode::Distributed;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyMode {
    /// Inner loop run to the tolerance before each actuation.
    Deep,
    /// A single inner iteration per actuation.
    Interleaved,
}

impl StudyMode {
    pub fn name(&self) -> &'static str {
        match self {
            StudyMode::Deep => "deep",
            StudyMode::Interleaved => "interleaved",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "deep" => Some(StudyMode::Deep),
            "interleaved" => Some(StudyMode::Interleaved),
            _ => None,
        }
    }
}

/// Base scenario grown to `n_agents` by dummy agents on its host line and
/// configured for `mode`.
pub fn study_scenario(base: &Scenario, n_agents: usize, mode: StudyMode) -> Result<Scenario, ScenarioError> {
    let mut s = steady_study_scenario(base);
    let n_base = s.inverters.len();
    if n_agents < n_base {
        return Err(ScenarioError::Invalid(format!(
            "cannot shrink the base scenario from {n_base} to {n_agents} agents"
        )));
    }
    let host = base
        .dummy_nodes
        .ok_or_else(|| ScenarioError::Invalid("scenario has no dummy host line".to_string()))?;
    s.dummy_nodes = Some(DummySpec {
        count: n_agents - n_base,
        ..host
    });
    s.controller.gamma = None;
    match mode {
        StudyMode::Deep => {
            s.controller.alpha = 100.0;
            s.controller.k = DEEP_ITERATION_CAP;
            s.controller.inner = InnerMode::Tolerance {
                tolerance_kvar: DEEP_TOLERANCE_KVAR,
            };
        }
        StudyMode::Interleaved => {
            if let Some(a) = base.interleaved_alpha {
                s.controller.alpha = a;
            }
            s.controller.k = 1;
            s.controller.inner = InnerMode::FixedK;
        }
    }
    Ok(s)
}

/// Runs `scenario` until convergence, divergence or `cap` actuation steps.
pub fn run_to_convergence(
    run_id: &str,
    mode: &str,
    scenario: &Scenario,
    cap: usize,
) -> Result<RunSummary, StudyError> {
    let setup = scenario.setup()?;
    let out = run_simulation(scenario, &setup, &convergence_options(&setup, cap))?;
    let mut s = summarize(run_id, mode, &setup, &out);
    if s.act_steps > cap {
        s.converged = false;
        s.feasible = false;
        s.act_steps = cap;
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StudyError {
    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
}
