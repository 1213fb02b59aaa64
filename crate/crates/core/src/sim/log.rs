//! Per-agent time series and the steady-state detector applied to it.

use alloc::vec::Vec;

use crate::controller::{AgentId, VoltageLimits};

/// Column names of the time-series CSV, in order.
pub const LOG_COLUMNS: [&str; 10] = [
    "sim_time_s",
    "agent_id",
    "v_pu",
    "q_kvar",
    "lambda_min",
    "lambda_max",
    "mu_min",
    "mu_max",
    "qhat_kvar",
    "inner_iterations_used",
];

/// Per-inverter `|Δq|` below which the set-points count as settled, kVAr.
pub const SETTLE_TOLERANCE_KVAR: f64 = 0.01;
/// Slack on the voltage limits when judging feasibility, p.u.
pub const VOLTAGE_SLACK_PU: f64 = 1e-4;
/// Consecutive qualifying steps required.
pub const SETTLE_WINDOW: usize = 3;

/// One agent at one actuation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: u64,
    pub sim_time_s: f64,
    pub agent_id: AgentId,
    pub v_pu: f64,
    pub q_kvar: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub qhat_kvar: f64,
    pub inner_iterations_used: usize,
}

/// All agents at one actuation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: u64,
    /// Whether the controller acted in this step.
    pub active: bool,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub lambda_min: Vec<f64>,
    pub lambda_max: Vec<f64>,
    pub mu_min: Vec<f64>,
    pub mu_max: Vec<f64>,
    pub inner_iterations: usize,
    pub truncated: bool,
}

impl StepRecord {
    pub fn from_rows(rows: &[LogRow], active: bool, truncated: bool) -> Self {
        let col = |f: fn(&LogRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        Self {
            epoch: rows.first().map_or(0, |r| r.epoch),
            active,
            v: col(|r| r.v_pu),
            q: col(|r| r.q_kvar),
            q_hat: col(|r| r.qhat_kvar),
            lambda_min: col(|r| r.lambda_min),
            lambda_max: col(|r| r.lambda_max),
            mu_min: col(|r| r.mu_min),
            mu_max: col(|r| r.mu_max),
            inner_iterations: rows.iter().map(|r| r.inner_iterations_used).max().unwrap_or(0),
            truncated,
        }
    }
}

pub fn within_limits(v: &[f64], lim: VoltageLimits) -> bool {
    v.iter()
        .all(|&x| x >= lim.min - VOLTAGE_SLACK_PU && x <= lim.max + VOLTAGE_SLACK_PU)
}

/// Tracks when the set-points stop moving, and when they stop moving with
/// every voltage inside its limits. Steps are numbered from 1 at the first
/// step fed in.
#[derive(Debug, Clone)]
pub struct ConvergenceDetector {
    vlim: VoltageLimits,
    prev_q: Option<Vec<f64>>,
    step: usize,
    settled_run: usize,
    feasible_run: usize,
    /// Actuations completed when the set-points had reached their final
    /// value (window start minus one).
    pub settled_at: Option<usize>,
    pub converged_at: Option<usize>,
}

impl ConvergenceDetector {
    pub fn new(vlim: VoltageLimits) -> Self {
        Self {
            vlim,
            prev_q: None,
            step: 0,
            settled_run: 0,
            feasible_run: 0,
            settled_at: None,
            converged_at: None,
        }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Feeds the voltages measured at a step and the set-points applied
    /// in response. Returns true once converged.
    pub fn push(&mut self, v: &[f64], q: &[f64]) -> bool {
        self.step += 1;
        let stable = self.prev_q.as_ref().is_some_and(|p| {
            p.iter()
                .zip(q)
                .all(|(a, b)| (a - b).abs() < SETTLE_TOLERANCE_KVAR)
        });
        let feasible = stable && within_limits(v, self.vlim);
        self.settled_run = if stable { self.settled_run + 1 } else { 0 };
        self.feasible_run = if feasible { self.feasible_run + 1 } else { 0 };
        if self.settled_at.is_none() && self.settled_run == SETTLE_WINDOW {
            self.settled_at = Some(self.step - SETTLE_WINDOW);
        }
        if self.converged_at.is_none() && self.feasible_run == SETTLE_WINDOW {
            self.converged_at = Some(self.step - SETTLE_WINDOW);
        }
        self.prev_q = Some(q.to_vec());
        self.converged_at.is_some()
    }

    /// Whether the most recent steps are still settled.
    pub fn currently_settled(&self) -> bool {
        self.settled_run >= SETTLE_WINDOW
    }
}
