//! Parameter sweeps and scalability runs, parallel across runs.

use rayon::prelude::*;

use voltgrid_core::experiment::{run_to_convergence, steady_study_scenario, study_scenario, RunSummary, StudyError, StudyMode};
use voltgrid_core::scenario::{InnerMode, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub gamma: f64,
    pub k: usize,
    pub summary: RunSummary,
}

/// Steps to convergence for every `(γ, K)` with a fixed inner iteration
/// count, at the scenario's operating point.
pub fn sweep_gamma(base: &Scenario, gammas: &[f64], ks: &[usize], cap: usize) -> Result<Vec<SweepPoint>, StudyError> {
    let grid: Vec<(f64, usize)> = ks
        .iter()
        .flat_map(|&k| gammas.iter().map(move |&g| (g, k)))
        .collect();
    let steady = steady_study_scenario(base);
    grid.par_iter()
        .map(|&(gamma, k)| {
            let mut s = steady.clone();
            s.controller.gamma = Some(gamma);
            s.controller.k = k;
            s.controller.inner = InnerMode::FixedK;
            let id = format!("gamma={gamma}_k={k}");
            let summary = run_to_convergence(&id, "fixed", &s, cap)?;
            Ok(SweepPoint { gamma, k, summary })
        })
        .collect()
}

/// One run per network size and mode; sizes count agents including the
/// dummies placed on the scenario's host line.
pub fn scalability_study(
    base: &Scenario,
    sizes: &[usize],
    modes: &[StudyMode],
    cap: usize,
) -> Result<Vec<RunSummary>, StudyError> {
    let runs: Vec<(usize, StudyMode)> = sizes
        .iter()
        .flat_map(|&n| modes.iter().map(move |&m| (n, m)))
        .collect();
    runs.par_iter()
        .map(|&(n, mode)| {
            let s = study_scenario(base, n, mode)?;
            run_to_convergence(&format!("n={n}_{}", mode.name()), mode.name(), &s, cap)
        })
        .collect()
}

/// Fixed inner iteration counts on a network of `n_agents`, otherwise as
/// the deep mode.
pub fn truncated_study(base: &Scenario, n_agents: usize, ks: &[usize], cap: usize) -> Result<Vec<RunSummary>, StudyError> {
    ks.par_iter()
        .map(|&k| {
            let mut s = study_scenario(base, n_agents, StudyMode::Deep)?;
            s.controller.k = k;
            s.controller.inner = InnerMode::FixedK;
            run_to_convergence(&format!("n={n_agents}_k={k}"), "truncated", &s, cap)
        })
        .collect()
}
