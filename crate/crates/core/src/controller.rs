//! Per-inverter control logic: the outer dual-ascent loop on the voltage
//! multipliers and the static droop baseline.

use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControllerError {
    #[error("controller gains must satisfy alpha > 0, gamma > 0, K >= 1, T > 0")]
    InvalidGains,
    #[error("droop breakpoints must satisfy v1 < v2 <= v3 < v4")]
    InvalidDroop,
    #[error("reactive limits must satisfy q_min <= q_max")]
    InvalidLimits,
}

/// Index of an agent (equivalently, of an inverter bus in agent order).
pub type AgentId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageLimits {
    pub min: f64,
    pub max: f64,
}

/// Reactive power capability in kVAr.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QLimits {
    pub min: f64,
    pub max: f64,
}

impl QLimits {
    pub fn new(min: f64, max: f64) -> Result<Self, ControllerError> {
        if !(min <= max) {
            return Err(ControllerError::InvalidLimits);
        }
        Ok(Self { min, max })
    }

    pub fn symmetric(cap: f64) -> Self {
        Self {
            min: -cap.abs(),
            max: cap.abs(),
        }
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.min, self.max)
    }

    /// Largest magnitude the inverter can deliver; zero for dummy agents.
    pub fn capability(&self) -> f64 {
        self.min.abs().max(self.max.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains {
    /// Outer (voltage multiplier) step.
    pub alpha: f64,
    /// Inner (reactive multiplier) step.
    pub gamma: f64,
    /// Inner iterations per actuation.
    pub k: usize,
    /// Actuation period, seconds.
    pub period_s: f64,
}

impl ControllerGains {
    pub fn new(alpha: f64, gamma: f64, k: usize, period_s: f64) -> Result<Self, ControllerError> {
        if !(alpha > 0.0 && gamma > 0.0 && k >= 1 && period_s > 0.0) {
            return Err(ControllerError::InvalidGains);
        }
        Ok(Self {
            alpha,
            gamma,
            k,
            period_s,
        })
    }
}

/// One inverter's controller memory.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub q_hat: f64,
    pub q_applied: f64,
    pub limits: QLimits,
    /// `(j, G_ij)` for `j` in self ∪ neighbors, ascending by `j`.
    pub g_row: Vec<(AgentId, f64)>,
    /// Neighbors, ascending.
    pub neighbors: Vec<AgentId>,
}

impl AgentState {
    pub fn new(id: AgentId, limits: QLimits, g_row: Vec<(AgentId, f64)>) -> Self {
        let neighbors = g_row
            .iter()
            .map(|e| e.0)
            .filter(|&j| j != id)
            .collect();
        Self {
            id,
            lambda_min: 0.0,
            lambda_max: 0.0,
            mu_min: 0.0,
            mu_max: 0.0,
            q_hat: 0.0,
            q_applied: 0.0,
            limits,
            g_row,
            neighbors,
        }
    }

    /// Projected dual ascent on the voltage multipliers with the measured
    /// local voltage. An agent without reactive capability only relays
    /// coupling and keeps its voltage multipliers at zero.
    pub fn lambda_update(&mut self, v_measured: f64, limits: VoltageLimits, alpha: f64) {
        if self.limits.capability() == 0.0 {
            return;
        }
        self.lambda_min = (self.lambda_min + alpha * (limits.min - v_measured)).max(0.0);
        self.lambda_max = (self.lambda_max + alpha * (v_measured - limits.max)).max(0.0);
    }

    /// Applies the inner-loop result, clamped to the inverter capability.
    /// Multipliers and `q_hat` are kept for the next warm start.
    pub fn actuation_step(&mut self, q_hat: f64) -> f64 {
        self.q_hat = q_hat;
        self.q_applied = self.limits.clamp(q_hat);
        self.q_applied
    }

    pub fn multipliers_nonnegative(&self) -> bool {
        self.lambda_min >= 0.0 && self.lambda_max >= 0.0 && self.mu_min >= 0.0 && self.mu_max >= 0.0
    }
}

/// Piecewise-linear Volt/VAr droop characteristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroopCurve {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
    pub q_min: f64,
    pub q_max: f64,
}

impl DroopCurve {
    pub fn new(v: [f64; 4], limits: QLimits) -> Result<Self, ControllerError> {
        let [v1, v2, v3, v4] = v;
        if !(v1 < v2 && v2 <= v3 && v3 < v4) {
            return Err(ControllerError::InvalidDroop);
        }
        Ok(Self {
            v1,
            v2,
            v3,
            v4,
            q_min: limits.min,
            q_max: limits.max,
        })
    }

    pub fn response(&self, v: f64) -> f64 {
        if v < self.v1 {
            self.q_max
        } else if v <= self.v2 {
            self.q_max * (self.v2 - v) / (self.v2 - self.v1)
        } else if v <= self.v3 {
            0.0
        } else if v <= self.v4 {
            self.q_min * (v - self.v3) / (self.v4 - self.v3)
        } else {
            self.q_min
        }
    }

    /// Lipschitz constant of [`Self::response`].
    pub fn slope_bound(&self) -> f64 {
        (self.q_max.abs() / (self.v2 - self.v1)).max(self.q_min.abs() / (self.v4 - self.v3))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LIMITS: VoltageLimits = VoltageLimits {
        min: 0.95,
        max: 1.05,
    };

    fn agent() -> AgentState {
        AgentState::new(0, QLimits::symmetric(8.0), alloc::vec![(0, 19.1)])
    }

    #[test]
    fn lambda_idle_inside_band() {
        let mut a = agent();
        a.lambda_update(1.0, LIMITS, 100.0);
        assert_eq!((a.lambda_min, a.lambda_max), (0.0, 0.0));
    }

    #[test]
    fn lambda_integrates_overvoltage() {
        let mut a = agent();
        a.lambda_update(1.06, LIMITS, 100.0);
        assert_relative_eq!(a.lambda_max, 1.0, epsilon = 1e-12);
        assert_eq!(a.lambda_min, 0.0);
        assert_eq!((a.mu_min, a.mu_max, a.q_hat), (0.0, 0.0, 0.0));
        let before = a.lambda_max;
        a.lambda_update(1.055, LIMITS, 100.0);
        assert!(a.lambda_max > before);
    }

    #[test]
    fn actuation_clamps() {
        let mut a = agent();
        assert_eq!(a.actuation_step(-3.2), -3.2);
        assert_eq!(a.actuation_step(-8.5), -8.0);
        assert_eq!(a.q_hat, -8.5);
    }

    #[test]
    fn droop_branches() {
        let c = DroopCurve::new([0.95, 0.99, 1.01, 1.05], QLimits::symmetric(6.0)).unwrap();
        assert_relative_eq!(c.response(0.97), 3.0, epsilon = 1e-12);
        assert_eq!(c.response(1.0), 0.0);
        assert_eq!(c.response(0.90), 6.0);
        assert_eq!(c.response(1.10), -6.0);
        assert_relative_eq!(c.response(1.03), -3.0, epsilon = 1e-12);
    }

    #[test]
    fn droop_rejects_unordered_breakpoints() {
        assert!(DroopCurve::new([0.99, 0.95, 1.01, 1.05], QLimits::symmetric(6.0)).is_err());
    }

    #[test]
    fn gains_are_validated() {
        assert!(ControllerGains::new(100.0, 0.005, 100, 10.0).is_ok());
        assert!(ControllerGains::new(0.0, 0.005, 100, 10.0).is_err());
        assert!(ControllerGains::new(100.0, 0.005, 0, 10.0).is_err());
    }
}
