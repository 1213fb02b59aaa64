//! Simulated time in integer microseconds and per-agent periodic
//! interrupts.

pub type Micros = u64;

pub fn secs_to_us(s: f64) -> Micros {
    libm::round(s * 1e6).max(0.0) as Micros
}

pub fn us_to_secs(us: Micros) -> f64 {
    us as f64 * 1e-6
}

/// Fires at `offset + k · period`, `k = 0, 1, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentClock {
    pub period_us: Micros,
    pub offset_us: Micros,
}

impl AgentClock {
    pub fn new(period_s: f64, offset_s: f64) -> Self {
        Self {
            period_us: secs_to_us(period_s).max(1),
            offset_us: secs_to_us(offset_s),
        }
    }

    pub fn interrupt(&self, k: u64) -> Micros {
        self.offset_us + k * self.period_us
    }

    /// Index of the first interrupt at or after `t`.
    pub fn first_at_or_after(&self, t: Micros) -> u64 {
        if t <= self.offset_us {
            0
        } else {
            (t - self.offset_us).div_ceil(self.period_us)
        }
    }
}
