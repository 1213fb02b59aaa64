//! AC power flow of the radial feeder by backward/forward sweep, and the
//! linearized voltage model `v ≈ v₀ + X q` used by the controller.
//!
//! Per-unit system: 400 V base, 1 kVA power base, so an impedance in ohm
//! becomes per-unit after division by 160 and a power in W after division
//! by 1000.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::grid::{BusId, FeederModel};
use crate::linalg::{solve_lu, Matrix};

pub const V_BASE_VOLTS: f64 = 400.0;
pub const S_BASE_VA: f64 = 1000.0;
/// Base impedance in ohm.
pub const Z_BASE_OHM: f64 = V_BASE_VOLTS * V_BASE_VOLTS / S_BASE_VA;
/// Converts `X[Ω] · q[kVAr]` into a voltage change in p.u.
pub const OHM_KVAR_TO_PU: f64 = 1000.0 / (V_BASE_VOLTS * V_BASE_VOLTS);

pub const SWEEP_TOLERANCE: f64 = 1e-8;
pub const MAX_SWEEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PowerFlowError {
    #[error("injection vector has {got} entries, feeder has {expected} buses")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite injection at bus {0}")]
    NonFinite(BusId),
}

/// Per-bus complex power injections (generation positive). The slack
/// entry is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionVector {
    pub p_w: Vec<f64>,
    pub q_var: Vec<f64>,
    pub v_slack: f64,
}

impl InjectionVector {
    pub fn zeros(n: usize, v_slack: f64) -> Self {
        Self {
            p_w: vec![0.0; n],
            q_var: vec![0.0; n],
            v_slack,
        }
    }

    /// Nominal injections stored on the feeder's buses.
    pub fn nominal(feeder: &FeederModel) -> Self {
        Self {
            p_w: feeder.buses().iter().map(|b| b.p_w).collect(),
            q_var: feeder.buses().iter().map(|b| b.q_var).collect(),
            v_slack: feeder.v_slack,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSolution {
    pub magnitude: Vec<f64>,
    pub angle: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Backward/forward sweep until the largest per-bus complex voltage change
/// drops below [`SWEEP_TOLERANCE`], giving up after [`MAX_SWEEPS`].
pub fn solve_power_flow(
    feeder: &FeederModel,
    inj: &InjectionVector,
) -> Result<VoltageSolution, PowerFlowError> {
    let n = feeder.bus_count();
    if inj.p_w.len() != n || inj.q_var.len() != n {
        return Err(PowerFlowError::DimensionMismatch {
            expected: n,
            got: inj.p_w.len().min(inj.q_var.len()),
        });
    }
    for b in 0..n {
        if !inj.p_w[b].is_finite() || !inj.q_var[b].is_finite() {
            return Err(PowerFlowError::NonFinite(b));
        }
    }
    let slack = feeder.slack();
    let order = feeder.bfs_order();
    let s: Vec<Complex64> = (0..n)
        .map(|b| Complex64::new(inj.p_w[b], inj.q_var[b]) / S_BASE_VA)
        .collect();
    let z: Vec<Complex64> = (0..n)
        .map(|b| {
            feeder.parent(b).map_or(Complex64::new(0.0, 0.0), |(_, l)| {
                Complex64::new(l.r_ohm, l.x_ohm) / Z_BASE_OHM
            })
        })
        .collect();
    let parent: Vec<Option<BusId>> = (0..n).map(|b| feeder.parent(b).map(|(p, _)| p)).collect();

    let mut v = vec![Complex64::new(inj.v_slack, 0.0); n];
    let mut branch = vec![Complex64::new(0.0, 0.0); n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_SWEEPS {
        iterations += 1;
        // backward: current drawn by each subtree from its parent
        for &b in order.iter().rev() {
            branch[b] -= (s[b] / v[b]).conj();
            if let Some(p) = parent[b] {
                let ib = branch[b];
                branch[p] += ib;
            }
        }
        // forward
        let mut delta: f64 = 0.0;
        for &b in order {
            if let Some(p) = parent[b] {
                let nv = v[p] - z[b] * branch[b];
                delta = delta.max((nv - v[b]).norm());
                v[b] = nv;
            }
        }
        branch.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        if delta < SWEEP_TOLERANCE {
            converged = true;
            break;
        }
    }
    v[slack] = Complex64::new(inj.v_slack, 0.0);
    Ok(VoltageSolution {
        magnitude: v.iter().map(|c| c.norm()).collect(),
        angle: v.iter().map(|c| c.arg()).collect(),
        converged,
        iterations,
    })
}

/// Newton-Raphson power flow in polar coordinates on the full bus
/// admittance matrix. Independent of the sweep and much slower; kept as a
/// reference for checking it.
pub fn solve_power_flow_newton(
    feeder: &FeederModel,
    inj: &InjectionVector,
) -> Result<VoltageSolution, PowerFlowError> {
    let n = feeder.bus_count();
    if inj.p_w.len() != n || inj.q_var.len() != n {
        return Err(PowerFlowError::DimensionMismatch {
            expected: n,
            got: inj.p_w.len().min(inj.q_var.len()),
        });
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut y = vec![zero; n * n];
    for l in feeder.lines() {
        let yl = Complex64::new(1.0, 0.0) / (Complex64::new(l.r_ohm, l.x_ohm) / Z_BASE_OHM);
        y[l.from * n + l.from] += yl;
        y[l.to * n + l.to] += yl;
        y[l.from * n + l.to] -= yl;
        y[l.to * n + l.from] -= yl;
    }
    let slack = feeder.slack();
    let pq: Vec<BusId> = (0..n).filter(|&b| b != slack).collect();
    let m = pq.len();
    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    vm[slack] = inj.v_slack;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < 50 {
        let v: Vec<Complex64> = (0..n).map(|b| Complex64::from_polar(vm[b], va[b])).collect();
        let current: Vec<Complex64> = (0..n)
            .map(|i| (0..n).map(|k| y[i * n + k] * v[k]).sum())
            .collect();
        let mut f = vec![0.0; 2 * m];
        for (r, &b) in pq.iter().enumerate() {
            let s = v[b] * current[b].conj();
            f[r] = s.re - inj.p_w[b] / S_BASE_VA;
            f[r + m] = s.im - inj.q_var[b] / S_BASE_VA;
        }
        if f.iter().fold(0.0f64, |a, x| a.max(x.abs())) < 1e-12 {
            converged = true;
            break;
        }
        iterations += 1;
        // dS_i/dθ_k and dS_i/d|V_k| in closed form
        let mut jac = Matrix::zeros(2 * m, 2 * m);
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pq.iter().enumerate() {
                let yv = y[i * n + k] * v[k];
                let unit = v[k] / vm[k];
                let mut ds_da = -Complex64::i() * v[i] * yv.conj();
                let mut ds_dm = v[i] * (y[i * n + k] * unit).conj();
                if i == k {
                    ds_da += Complex64::i() * v[i] * current[i].conj();
                    ds_dm += current[i].conj() * unit;
                }
                jac[(r, c)] = ds_da.re;
                jac[(r, c + m)] = ds_dm.re;
                jac[(r + m, c)] = ds_da.im;
                jac[(r + m, c + m)] = ds_dm.im;
            }
        }
        let Some(dx) = solve_lu(jac, f.iter().map(|x| -x).collect()) else {
            break;
        };
        for (c, &b) in pq.iter().enumerate() {
            va[b] += dx[c];
            vm[b] += dx[c + m];
        }
    }
    Ok(VoltageSolution {
        magnitude: vm,
        angle: va,
        converged,
        iterations,
    })
}

/// `v = v_base + X q / 160` with `X` in ohm and `q` in kVAr.
pub fn linearized_voltage(x: &Matrix, v_base: &[f64], q_kvar: &[f64]) -> Vec<f64> {
    assert_eq!(v_base.len(), x.rows());
    x.mul_vec(q_kvar)
        .into_iter()
        .zip(v_base)
        .map(|(dv, v0)| v0 + OHM_KVAR_TO_PU * dv)
        .collect()
}

/// The physical plant as seen from the inverters: exogenous injections
/// plus the inverters' reactive set-points, solved by the sweep.
#[derive(Debug, Clone)]
pub struct Plant {
    feeder: FeederModel,
    exogenous: InjectionVector,
    inverter_buses: Vec<BusId>,
}

impl Plant {
    pub fn new(feeder: FeederModel, inverter_buses: Vec<BusId>) -> Self {
        let exogenous = InjectionVector::nominal(&feeder);
        Self {
            feeder,
            exogenous,
            inverter_buses,
        }
    }

    pub fn feeder(&self) -> &FeederModel {
        &self.feeder
    }

    pub fn inverter_buses(&self) -> &[BusId] {
        &self.inverter_buses
    }

    pub fn exogenous(&self) -> &InjectionVector {
        &self.exogenous
    }

    pub fn set_injection(&mut self, bus: BusId, p_w: f64, q_var: f64) {
        self.exogenous.p_w[bus] = p_w;
        self.exogenous.q_var[bus] = q_var;
    }

    /// Full solution with the inverters injecting `q_kvar`.
    pub fn solve(&self, q_kvar: &[f64]) -> Result<VoltageSolution, PowerFlowError> {
        let mut inj = self.exogenous.clone();
        for (&b, &q) in self.inverter_buses.iter().zip(q_kvar) {
            inj.q_var[b] += q * 1000.0;
        }
        solve_power_flow(&self.feeder, &inj)
    }

    /// Voltage magnitudes at the inverter buses.
    pub fn inverter_voltages(&self, q_kvar: &[f64]) -> Result<(Vec<f64>, bool), PowerFlowError> {
        let sol = self.solve(q_kvar)?;
        Ok((
            self.inverter_buses.iter().map(|&b| sol.magnitude[b]).collect(),
            sol.converged,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Bus, BusKind, Line};
    use approx::assert_relative_eq;

    fn two_bus(r: f64, x: f64) -> FeederModel {
        FeederModel::new(
            vec![Bus::new(0, "pcc", BusKind::Slack), Bus::new(1, "load", BusKind::Load)],
            vec![Line::new(0, 1, r, x)],
            1.0,
            0.95,
            1.05,
        )
        .unwrap()
    }

    #[test]
    fn zero_injection_is_flat() {
        let f = two_bus(0.1, 0.05);
        let sol = solve_power_flow(&f, &InjectionVector::zeros(2, 1.02)).unwrap();
        assert!(sol.converged);
        for (m, a) in sol.magnitude.iter().zip(&sol.angle) {
            assert_relative_eq!(*m, 1.02, epsilon = 1e-15);
            assert_eq!(*a, 0.0);
        }
    }

    #[test]
    fn two_bus_matches_quadratic() {
        // |V|^4 + (2(RP + XQ) - V0^2)|V|^2 + (R^2 + X^2)(P^2 + Q^2) = 0
        // with (P, Q) the consumed power in p.u.
        let (r, x) = (0.1, 0.05);
        let f = two_bus(r, x);
        let mut inj = InjectionVector::zeros(2, 1.0);
        inj.p_w[1] = -15_000.0;
        let sol = solve_power_flow(&f, &inj).unwrap();
        let (rp, xp) = (r / Z_BASE_OHM, x / Z_BASE_OHM);
        let (p, q) = (15.0, 0.0);
        let b = 2.0 * (rp * p + xp * q) - 1.0;
        let c = (rp * rp + xp * xp) * (p * p + q * q);
        let v2 = (-b + libm::sqrt(b * b - 4.0 * c)) / 2.0;
        assert_relative_eq!(sol.magnitude[1], libm::sqrt(v2), epsilon = 1e-6);
        let newton = solve_power_flow_newton(&f, &inj).unwrap();
        assert!(newton.converged);
        assert_relative_eq!(newton.magnitude[1], libm::sqrt(v2), epsilon = 1e-12);
    }

    #[test]
    fn wrong_dimension_is_an_error() {
        let f = two_bus(0.1, 0.05);
        assert!(solve_power_flow(&f, &InjectionVector::zeros(3, 1.0)).is_err());
    }

    #[test]
    fn linearized_step() {
        let x = Matrix::from_rows(&[[0.10, 0.09, 0.09], [0.09, 0.11, 0.11], [0.09, 0.11, 0.16]]);
        let v = linearized_voltage(&x, &[1.0, 1.0, 1.0], &[0.0, 0.0, -8.0]);
        assert_relative_eq!(v[2] - 1.0, -0.008, epsilon = 1e-15);
        assert_eq!(linearized_voltage(&x, &[1.01, 1.0, 0.99], &[0.0; 3]), vec![1.01, 1.0, 0.99]);
    }
}
