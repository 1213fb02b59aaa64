//! Centralized reference solvers used to validate the distributed
//! controller.

use alloc::vec;
use alloc::vec::Vec;

use crate::controller::{QLimits, VoltageLimits};
use crate::linalg::{cholesky, cholesky_solve, symmetric_eigenvalues, Matrix};
use crate::power_flow::{linearized_voltage, Plant, PowerFlowError, OHM_KVAR_TO_PU};

pub const MAX_ENUMERATION_DIM: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("box QP has {0} free coordinates, enumeration supports at most {MAX_ENUMERATION_DIM}")]
    TooLarge(usize),
    #[error("no active set satisfies the KKT conditions")]
    NoKktPoint,
    #[error("dimension mismatch")]
    DimensionMismatch,
    #[error("power flow: {0}")]
    PowerFlow(#[from] PowerFlowError),
    #[error("power flow did not converge")]
    NotConverged,
}

/// `min ½ qᵀ M q + cᵀ q` subject to `lower ≤ q ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    pub m: Matrix,
    pub c: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxQp {
    /// The inner problem for given voltage multipliers: `M = X`,
    /// `c = X (λ_max − λ_min)`.
    pub fn from_multipliers(x: &Matrix, lambda_min: &[f64], lambda_max: &[f64], limits: &[QLimits]) -> Self {
        let d: Vec<f64> = lambda_max.iter().zip(lambda_min).map(|(a, b)| a - b).collect();
        Self {
            m: x.clone(),
            c: x.mul_vec(&d),
            lower: limits.iter().map(|l| l.min).collect(),
            upper: limits.iter().map(|l| l.max).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn gradient(&self, q: &[f64]) -> Vec<f64> {
        self.m
            .mul_vec(q)
            .into_iter()
            .zip(&self.c)
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn objective(&self, q: &[f64]) -> f64 {
        let mq = self.m.mul_vec(q);
        q.iter()
            .zip(&mq)
            .zip(&self.c)
            .map(|((qi, mqi), ci)| 0.5 * qi * mqi + ci * qi)
            .sum()
    }

    /// Natural residual `max_i |q_i − clamp(q_i − ∇_i, l_i, u_i)|`; zero
    /// exactly at the KKT point.
    pub fn kkt_residual(&self, q: &[f64]) -> f64 {
        let g = self.gradient(q);
        (0..self.dim()).fold(0.0, |acc, i| {
            let p = (q[i] - g[i]).clamp(self.lower[i], self.upper[i]);
            acc.max((q[i] - p).abs())
        })
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Exact solution by active-set enumeration. Assignments are visited in
/// order of increasing number of active bounds; for each, the free
/// coordinates solve the reduced linear system and the result is accepted
/// once primal feasibility and the multiplier signs check out.
/// Coordinates with `lower == upper` are fixed and not enumerated.
pub fn solve_inner_exact(p: &BoxQp) -> Result<Vec<f64>, OracleError> {
    let n = p.dim();
    if p.m.rows() != n || p.lower.len() != n || p.upper.len() != n {
        return Err(OracleError::DimensionMismatch);
    }
    let fixed: Vec<bool> = (0..n).map(|i| p.lower[i] == p.upper[i]).collect();
    let open: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
    if open.len() > MAX_ENUMERATION_DIM {
        return Err(OracleError::TooLarge(open.len()));
    }
    let scale_q = p
        .lower
        .iter()
        .chain(&p.upper)
        .fold(1.0f64, |a, v| a.max(v.abs()));
    let scale_g = 1.0 + p.c.iter().fold(0.0f64, |a, v| a.max(v.abs())) + p.m.max_abs() * scale_q * n as f64;
    let tol_q = 1e-10 * scale_q;
    let tol_g = 1e-10 * scale_g;

    let mut bounds = vec![Bound::Free; n];
    for i in 0..n {
        if fixed[i] {
            bounds[i] = Bound::Lower;
        }
    }
    let m = open.len();
    for active in 0..=m {
        let mut combo: Vec<usize> = (0..active).collect();
        loop {
            for signs in 0u32..(1u32 << active) {
                for &i in &open {
                    bounds[i] = Bound::Free;
                }
                for (bit, &c) in combo.iter().enumerate() {
                    bounds[open[c]] = if signs & (1 << bit) == 0 {
                        Bound::Lower
                    } else {
                        Bound::Upper
                    };
                }
                if let Some(q) = try_active_set(p, &bounds, &fixed, tol_q, tol_g) {
                    return Ok(q);
                }
            }
            if !next_combination(&mut combo, m) {
                break;
            }
        }
    }
    Err(OracleError::NoKktPoint)
}

fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    for i in (0..k).rev() {
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in (i + 1)..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn try_active_set(p: &BoxQp, bounds: &[Bound], fixed: &[bool], tol_q: f64, tol_g: f64) -> Option<Vec<f64>> {
    let n = p.dim();
    let mut q = vec![0.0; n];
    let mut free = Vec::new();
    for i in 0..n {
        match bounds[i] {
            Bound::Free => free.push(i),
            Bound::Lower => q[i] = p.lower[i],
            Bound::Upper => q[i] = p.upper[i],
        }
    }
    if !free.is_empty() {
        let mff = p.m.submatrix(&free);
        let rhs: Vec<f64> = free
            .iter()
            .map(|&i| {
                let coupled: f64 = (0..n)
                    .filter(|&j| bounds[j] != Bound::Free)
                    .map(|j| p.m[(i, j)] * q[j])
                    .sum();
                -p.c[i] - coupled
            })
            .collect();
        let l = cholesky(&mff)?;
        let sol = cholesky_solve(&l, &rhs);
        for (k, &i) in free.iter().enumerate() {
            if sol[k] < p.lower[i] - tol_q || sol[k] > p.upper[i] + tol_q {
                return None;
            }
            q[i] = sol[k].clamp(p.lower[i], p.upper[i]);
        }
    }
    let g = p.gradient(&q);
    for i in 0..n {
        if fixed[i] {
            continue;
        }
        let ok = match bounds[i] {
            Bound::Free => true,
            Bound::Lower => g[i] >= -tol_g,
            Bound::Upper => g[i] <= tol_g,
        };
        if !ok {
            return None;
        }
    }
    Some(q)
}

/// Steady-state voltage magnitudes at the inverters for given set-points.
pub trait VoltageMap {
    fn voltages(&mut self, q_kvar: &[f64]) -> Result<Vec<f64>, OracleError>;
}

/// `v = v₀ + X q / 160`.
#[derive(Debug, Clone)]
pub struct LinearizedModel {
    pub v0: Vec<f64>,
    pub x: Matrix,
}

impl VoltageMap for LinearizedModel {
    fn voltages(&mut self, q_kvar: &[f64]) -> Result<Vec<f64>, OracleError> {
        Ok(linearized_voltage(&self.x, &self.v0, q_kvar))
    }
}

impl VoltageMap for Plant {
    fn voltages(&mut self, q_kvar: &[f64]) -> Result<Vec<f64>, OracleError> {
        let (v, converged) = self.inverter_voltages(q_kvar)?;
        if !converged {
            return Err(OracleError::NotConverged);
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterSettings {
    pub alpha: f64,
    /// Stop when no multiplier changes by more than this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Consecutive fully-saturated iterations with a persisting violation
    /// after which the instance is declared infeasible.
    pub infeasible_patience: usize,
}

impl Default for OuterSettings {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            tolerance: 1e-8,
            max_iterations: 200_000,
            infeasible_patience: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterSolution {
    pub q: Vec<f64>,
    pub lambda_min: Vec<f64>,
    pub lambda_max: Vec<f64>,
    pub voltages: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub feasible: bool,
}

/// Centralized dual ascent on the voltage multipliers with the inner QP
/// solved exactly at every step.
pub fn solve_outer_centralized<V: VoltageMap + ?Sized>(
    model: &mut V,
    x: &Matrix,
    limits: &[QLimits],
    vlim: VoltageLimits,
    settings: OuterSettings,
) -> Result<OuterSolution, OracleError> {
    let n = limits.len();
    if x.rows() != n {
        return Err(OracleError::DimensionMismatch);
    }
    let mut lmin = vec![0.0; n];
    let mut lmax = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut saturated_run = 0;
    for it in 1..=settings.max_iterations {
        let v = model.voltages(&q)?;
        let mut change: f64 = 0.0;
        let mut violated = false;
        for i in 0..n {
            // agents without capability only relay coupling
            if limits[i].capability() == 0.0 {
                continue;
            }
            let a = (lmin[i] + settings.alpha * (vlim.min - v[i])).max(0.0);
            let b = (lmax[i] + settings.alpha * (v[i] - vlim.max)).max(0.0);
            change = change.max((a - lmin[i]).abs()).max((b - lmax[i]).abs());
            violated |= v[i] > vlim.max + 1e-9 || v[i] < vlim.min - 1e-9;
            lmin[i] = a;
            lmax[i] = b;
        }
        if change < settings.tolerance {
            return Ok(OuterSolution {
                q,
                lambda_min: lmin,
                lambda_max: lmax,
                voltages: v,
                iterations: it,
                converged: true,
                feasible: true,
            });
        }
        let all_saturated = q
            .iter()
            .zip(limits)
            .all(|(qi, l)| (qi - l.min).abs() < 1e-9 || (qi - l.max).abs() < 1e-9);
        saturated_run = if all_saturated && violated { saturated_run + 1 } else { 0 };
        if saturated_run >= settings.infeasible_patience {
            return Ok(OuterSolution {
                q,
                lambda_min: lmin,
                lambda_max: lmax,
                voltages: v,
                iterations: it,
                converged: false,
                feasible: false,
            });
        }
        q = solve_inner_exact(&BoxQp::from_multipliers(x, &lmin, &lmax, limits))?;
    }
    let v = model.voltages(&q)?;
    Ok(OuterSolution {
        q,
        lambda_min: lmin,
        lambda_max: lmax,
        voltages: v,
        iterations: settings.max_iterations,
        converged: false,
        feasible: true,
    })
}

/// `Σ (q_i / cap_i)²` over agents with nonzero capability.
pub fn fairness_cost(q: &[f64], caps: &[f64]) -> f64 {
    q.iter()
        .zip(caps)
        .filter(|(_, c)| **c != 0.0)
        .map(|(qi, c)| (qi / c) * (qi / c))
        .sum()
}

/// Minimizer of the fairness cost under the same box and voltage limits,
/// with voltages linearized through `X` around a reference point
/// `(q_ref, v_ref)`.
#[derive(Debug, Clone)]
pub struct FairnessProblem<'a> {
    pub x: &'a Matrix,
    pub limits: &'a [QLimits],
    pub q_ref: &'a [f64],
    pub v_ref: &'a [f64],
    pub vlim: VoltageLimits,
}

impl FairnessProblem<'_> {
    pub fn voltages(&self, q: &[f64]) -> Vec<f64> {
        let dq: Vec<f64> = q.iter().zip(self.q_ref).map(|(a, b)| a - b).collect();
        linearized_voltage(self.x, self.v_ref, &dq)
    }
}

/// Projected gradient ascent on the voltage multipliers of the fairness
/// problem. The diagonal cost makes the primal step a closed-form clamp.
pub fn solve_fair_reference(p: &FairnessProblem<'_>) -> Vec<f64> {
    let n = p.limits.len();
    let half_cap2: Vec<f64> = p
        .limits
        .iter()
        .map(|l| 0.5 * l.capability() * l.capability())
        .collect();
    // step from the curvature of the dual: s² X D X with D = diag(cap²/2)
    let mut xdx = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            xdx[(i, j)] = (0..n).map(|k| p.x[(i, k)] * half_cap2[k] * p.x[(k, j)]).sum::<f64>()
                * OHM_KVAR_TO_PU
                * OHM_KVAR_TO_PU;
        }
    }
    let curvature = symmetric_eigenvalues(&xdx).last().copied().unwrap_or(1.0).max(1e-300);
    let step = 1.0 / curvature;

    let mut nu_min = vec![0.0; n];
    let mut nu_max = vec![0.0; n];
    let primal = |nu_min: &[f64], nu_max: &[f64]| -> Vec<f64> {
        let d: Vec<f64> = nu_max.iter().zip(nu_min).map(|(a, b)| a - b).collect();
        let xd = p.x.mul_vec(&d);
        (0..n)
            .map(|i| (-half_cap2[i] * OHM_KVAR_TO_PU * xd[i]).clamp(p.limits[i].min, p.limits[i].max))
            .collect()
    };
    let mut q = primal(&nu_min, &nu_max);
    for _ in 0..2_000_000 {
        let v = p.voltages(&q);
        for i in 0..n {
            nu_min[i] = (nu_min[i] + step * (p.vlim.min - v[i])).max(0.0);
            nu_max[i] = (nu_max[i] + step * (v[i] - p.vlim.max)).max(0.0);
        }
        let next = primal(&nu_min, &nu_max);
        let delta = next
            .iter()
            .zip(&q)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        q = next;
        if delta < 1e-13 {
            break;
        }
    }
    q
}
