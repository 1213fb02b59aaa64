//! Nested distributed QP solver: rounds of local reactive-multiplier
//! updates, neighbor exchange of those multipliers, and local recomputation
//! of the unconstrained minimizer `q̂` from the sparse row of `G`.
//!
//! With `M = X` the minimizer of the reactive-multiplier Lagrangian is
//!
//! ```text
//! q̂_i = λ_i,min − λ_i,max + Σ_j G_ij (μ_j,min − μ_j,max)
//! ```
//!
//! and `G_ij` is nonzero only for neighbors, so every agent needs nothing
//! but its neighbors' `μ` values.

use alloc::vec::Vec;

use crate::controller::{AgentId, AgentState};
use crate::linalg::{spectral_norm_symmetric, Matrix};

/// Serialized size of a [`MultiplierMessage`].
pub const WIRE_LEN: usize = 24;

/// The only payload exchanged between agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiplierMessage {
    pub sender: u32,
    pub tau: u32,
    pub mu_min: f64,
    pub mu_max: f64,
}

impl MultiplierMessage {
    /// Little-endian `(sender: u32, tau: u32, mu_min: f64, mu_max: f64)`.
    pub fn to_bytes(&self) -> [u8; WIRE_LEN] {
        let mut out = [0u8; WIRE_LEN];
        out[0..4].copy_from_slice(&self.sender.to_le_bytes());
        out[4..8].copy_from_slice(&self.tau.to_le_bytes());
        out[8..16].copy_from_slice(&self.mu_min.to_le_bytes());
        out[16..24].copy_from_slice(&self.mu_max.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, QpError> {
        if bytes.len() != WIRE_LEN {
            return Err(QpError::BadWireLength(bytes.len()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let msg = Self {
            sender: u32_at(0),
            tau: u32_at(4),
            mu_min: f64_at(8),
            mu_max: f64_at(16),
        };
        if !(msg.mu_min >= 0.0 && msg.mu_max >= 0.0) {
            return Err(QpError::NegativeMultiplier(msg.sender));
        }
        Ok(msg)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("agent {agent} has no message from neighbor {neighbor} for iteration {tau}")]
    MissingNeighbor {
        agent: AgentId,
        neighbor: AgentId,
        tau: u32,
    },
    #[error("agent {agent} received a message from non-neighbor {sender}")]
    UnexpectedSender { agent: AgentId, sender: AgentId },
    #[error("wire message must be {WIRE_LEN} bytes, got {0}")]
    BadWireLength(usize),
    #[error("negative multiplier in message from {0}")]
    NegativeMultiplier(u32),
    #[error("invalid inner loop configuration")]
    InvalidConfig,
    #[error("transport: {0}")]
    Transport(#[from] ExchangeError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExchangeError {
    #[error("agents {from} and {to} are not neighbors")]
    NotNeighbors { from: AgentId, to: AgentId },
    #[error("no message from {from} to {to} for iteration {tau}")]
    Missing { from: AgentId, to: AgentId, tau: u32 },
    #[error("barrier of agent {agent} unresolved for iteration {tau}")]
    Deadlock { agent: AgentId, tau: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerLoopConfig {
    /// Iteration count, or the iteration cap in tolerance mode.
    pub k: usize,
    pub gamma: f64,
    /// Early stop once every agent's stopping residual falls below this
    /// (kVAr); see [`AgentState::qhat_update`].
    pub tolerance: Option<f64>,
    pub warm_start: bool,
}

impl InnerLoopConfig {
    pub fn fixed(k: usize, gamma: f64) -> Self {
        Self {
            k,
            gamma,
            tolerance: None,
            warm_start: true,
        }
    }

    pub fn until_tolerance(tolerance: f64, cap: usize, gamma: f64) -> Self {
        Self {
            k: cap,
            gamma,
            tolerance: Some(tolerance),
            warm_start: true,
        }
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let tol_ok = self.tolerance.map_or(true, |t| t > 0.0);
        if self.k >= 1 && self.gamma > 0.0 && tol_ok {
            Ok(())
        } else {
            Err(QpError::InvalidConfig)
        }
    }
}

impl AgentState {
    /// Projected ascent on the reactive multipliers using the current `q̂`.
    pub fn mu_update(&mut self, gamma: f64) {
        self.mu_min = (self.mu_min + gamma * (self.limits.min - self.q_hat)).max(0.0);
        self.mu_max = (self.mu_max + gamma * (self.q_hat - self.limits.max)).max(0.0);
    }

    pub fn outgoing(&self, tau: u32) -> MultiplierMessage {
        MultiplierMessage {
            sender: self.id as u32,
            tau,
            mu_min: self.mu_min,
            mu_max: self.mu_max,
        }
    }

    /// Recomputes `q̂` from the own multipliers and one message per
    /// neighbor. Returns the stopping residual: the larger of `|Δq̂|` and
    /// the distance of `q̂` from the agent's box, which vanishes only once
    /// the coupling through zero-capability relays has settled.
    pub fn qhat_update(&mut self, msgs: &[MultiplierMessage]) -> Result<f64, QpError> {
        for m in msgs {
            let s = m.sender as AgentId;
            if s == self.id || self.neighbors.binary_search(&s).is_err() {
                return Err(QpError::UnexpectedSender {
                    agent: self.id,
                    sender: s,
                });
            }
        }
        let tau = msgs.first().map_or(0, |m| m.tau);
        let mut q = self.lambda_min - self.lambda_max;
        for &(j, gij) in &self.g_row {
            let dmu = if j == self.id {
                self.mu_min - self.mu_max
            } else {
                let m = msgs
                    .iter()
                    .find(|m| m.sender as AgentId == j)
                    .ok_or(QpError::MissingNeighbor {
                        agent: self.id,
                        neighbor: j,
                        tau,
                    })?;
                m.mu_min - m.mu_max
            };
            q += gij * dmu;
        }
        let change = (q - self.q_hat).abs();
        self.q_hat = q;
        Ok(change.max((q - self.limits.clamp(q)).abs()))
    }

    /// Cold-start state for the inner loop.
    pub fn reset_inner(&mut self) {
        self.mu_min = 0.0;
        self.mu_max = 0.0;
        self.q_hat = 0.0;
    }
}

/// Synchronous message exchange used by the round-based inner loop.
pub trait Exchange {
    fn send(&mut self, from: AgentId, to: AgentId, msg: MultiplierMessage) -> Result<(), ExchangeError>;

    /// Moves every message sent in the current round to its destination.
    fn end_round(&mut self);

    /// Appends to `out` the iteration-`tau` message of each neighbor.
    fn collect(
        &mut self,
        agent: AgentId,
        neighbors: &[AgentId],
        tau: u32,
        out: &mut Vec<MultiplierMessage>,
    ) -> Result<(), ExchangeError>;
}

/// In-memory exchange: one inbox per agent, no delays.
#[derive(Debug, Default, Clone)]
pub struct Mailbox {
    pending: Vec<(AgentId, MultiplierMessage)>,
    inbox: Vec<Vec<MultiplierMessage>>,
    /// Every delivered `(from, to)` pair, when recording is enabled.
    pub trace: Option<Vec<(AgentId, AgentId)>>,
}

impl Mailbox {
    pub fn new(agents: usize) -> Self {
        Self {
            pending: Vec::new(),
            inbox: (0..agents).map(|_| Vec::new()).collect(),
            trace: None,
        }
    }

    pub fn recording(agents: usize) -> Self {
        let mut m = Self::new(agents);
        m.trace = Some(Vec::new());
        m
    }
}

impl Exchange for Mailbox {
    fn send(&mut self, _from: AgentId, to: AgentId, msg: MultiplierMessage) -> Result<(), ExchangeError> {
        self.pending.push((to, msg));
        Ok(())
    }

    fn end_round(&mut self) {
        for (to, msg) in self.pending.drain(..) {
            if let Some(t) = self.trace.as_mut() {
                t.push((msg.sender as AgentId, to));
            }
            self.inbox[to].push(msg);
        }
    }

    fn collect(
        &mut self,
        agent: AgentId,
        neighbors: &[AgentId],
        tau: u32,
        out: &mut Vec<MultiplierMessage>,
    ) -> Result<(), ExchangeError> {
        let inbox = &mut self.inbox[agent];
        for &n in neighbors {
            let pos = inbox
                .iter()
                .position(|m| m.sender as AgentId == n && m.tau == tau)
                .ok_or(ExchangeError::Missing {
                    from: n,
                    to: agent,
                    tau,
                })?;
            out.push(inbox.swap_remove(pos));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerLoopOutcome {
    pub q_hat: Vec<f64>,
    pub iterations: usize,
    /// Tolerance mode only: the cap was reached before the tolerance.
    pub truncated: bool,
}

/// Runs the inner loop over all agents in lock-step rounds. Each round:
/// every agent updates its `μ`, sends it to its neighbors, and once every
/// neighbor's message for the round is in, recomputes `q̂`.
pub fn run_inner_loop<E: Exchange>(
    agents: &mut [AgentState],
    cfg: &InnerLoopConfig,
    exchange: &mut E,
) -> Result<InnerLoopOutcome, QpError> {
    cfg.validate()?;
    if !cfg.warm_start {
        agents.iter_mut().for_each(AgentState::reset_inner);
    }
    let mut buf = Vec::new();
    let mut iterations = 0;
    let mut truncated = false;
    for tau in 0..cfg.k {
        let tau32 = tau as u32;
        for a in agents.iter_mut() {
            a.mu_update(cfg.gamma);
            let msg = a.outgoing(tau32);
            for &n in &a.neighbors {
                exchange.send(a.id, n, msg)?;
            }
        }
        exchange.end_round();
        let mut change: f64 = 0.0;
        for a in agents.iter_mut() {
            buf.clear();
            exchange.collect(a.id, &a.neighbors, tau32, &mut buf)?;
            change = change.max(a.qhat_update(&buf)?);
        }
        iterations = tau + 1;
        if let Some(tol) = cfg.tolerance {
            if change < tol {
                break;
            }
            if iterations == cfg.k {
                truncated = true;
            }
        }
    }
    Ok(InnerLoopOutcome {
        q_hat: agents.iter().map(|a| a.q_hat).collect(),
        iterations,
        truncated,
    })
}

/// Step size `1 / (2 σ(G))` with `σ` the largest singular value.
pub fn recommended_gamma(g: &Matrix) -> f64 {
    1.0 / (2.0 * spectral_norm_symmetric(g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::QLimits;
    use approx::assert_relative_eq;

    fn lab_agents() -> Vec<AgentState> {
        let g = [[48.3, -40.7, 0.0], [-40.7, 61.8, -18.7], [0.0, -18.7, 19.1]];
        let caps = [6.0, 6.0, 8.0];
        (0..3)
            .map(|i| {
                let row = (0..3).filter(|&j| g[i][j] != 0.0).map(|j| (j, g[i][j])).collect();
                AgentState::new(i, QLimits::symmetric(caps[i]), row)
            })
            .collect()
    }

    #[test]
    fn wire_roundtrip_and_layout() {
        let m = MultiplierMessage {
            sender: 7,
            tau: 3,
            mu_min: 0.25,
            mu_max: 0.0,
        };
        let b = m.to_bytes();
        assert_eq!(&b[0..4], &[7, 0, 0, 0]);
        assert_eq!(&b[4..8], &[3, 0, 0, 0]);
        assert_eq!(MultiplierMessage::from_bytes(&b).unwrap(), m);
        assert!(MultiplierMessage::from_bytes(&b[..10]).is_err());
    }

    #[test]
    fn mu_stays_zero_inside_box() {
        let mut a = lab_agents().remove(2);
        a.q_hat = 3.0;
        a.mu_update(0.005);
        assert_eq!((a.mu_min, a.mu_max), (0.0, 0.0));
    }

    #[test]
    fn mu_integrates_violation() {
        let mut a = lab_agents().remove(2);
        a.q_hat = -8.5;
        a.mu_update(0.005);
        assert_relative_eq!(a.mu_min, 0.0025, epsilon = 1e-15);
        assert_eq!(a.mu_max, 0.0);
    }

    #[test]
    fn qhat_with_only_lambda() {
        let mut agents = lab_agents();
        agents[2].lambda_max = 1.0;
        let mut mb = Mailbox::new(3);
        let out = run_inner_loop(&mut agents, &InnerLoopConfig::fixed(1, 0.005), &mut mb).unwrap();
        assert_eq!(out.q_hat, vec![0.0, 0.0, -1.0]);
    }

    #[test]
    fn zero_state_is_fixed() {
        let mut agents = lab_agents();
        let mut mb = Mailbox::new(3);
        let out = run_inner_loop(&mut agents, &InnerLoopConfig::fixed(1, 0.005), &mut mb).unwrap();
        assert_eq!(out.q_hat, vec![0.0; 3]);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn missing_neighbor_is_reported() {
        let mut a = lab_agents().remove(1);
        let msg = MultiplierMessage {
            sender: 0,
            tau: 0,
            mu_min: 0.0,
            mu_max: 0.0,
        };
        assert!(matches!(
            a.qhat_update(&[msg]),
            Err(QpError::MissingNeighbor { neighbor: 2, .. })
        ));
        let stray = MultiplierMessage { sender: 2, ..msg };
        let mut b = lab_agents().remove(0);
        assert!(matches!(
            b.qhat_update(&[stray]),
            Err(QpError::UnexpectedSender { sender: 2, .. })
        ));
    }

    #[test]
    fn only_neighbors_communicate() {
        let mut agents = lab_agents();
        agents[2].lambda_max = 20.0;
        let mut mb = Mailbox::recording(3);
        run_inner_loop(&mut agents, &InnerLoopConfig::fixed(50, 0.005), &mut mb).unwrap();
        let trace = mb.trace.unwrap();
        assert_eq!(trace.len(), 50 * 4);
        assert!(trace.iter().all(|&(a, b)| (a as i64 - b as i64).abs() == 1));
    }

    #[test]
    fn tolerance_mode_stops_early() {
        let mut agents = lab_agents();
        agents[2].lambda_max = 10.0;
        let mut mb = Mailbox::new(3);
        let cfg = InnerLoopConfig::until_tolerance(0.01, 100_000, 0.005);
        let out = run_inner_loop(&mut agents, &cfg, &mut mb).unwrap();
        assert!(out.iterations < 100_000);
        assert!(!out.truncated);
        let mut mb = Mailbox::new(3);
        let cfg = InnerLoopConfig::until_tolerance(1e-300, 5, 0.005);
        let mut agents = lab_agents();
        agents[2].lambda_max = 10.0;
        let out = run_inner_loop(&mut agents, &cfg, &mut mb).unwrap();
        assert!(out.truncated);
        assert_eq!(out.iterations, 5);
    }
}
