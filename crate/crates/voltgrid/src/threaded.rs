//! Inner loop with one OS thread per agent, exchanging multipliers over
//! channels. Used to check that the simulated transport computes the same
//! numbers as genuinely concurrent agents.

use std::collections::HashMap;
use std::sync::mpsc;
use std::sync::{Barrier, Mutex};
use std::thread;

use voltgrid_core::controller::AgentState;
use voltgrid_core::qp::{InnerLoopConfig, InnerLoopOutcome, MultiplierMessage, QpError};
use voltgrid_core::sim::InnerSolver;

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadedSolver;

struct Shared {
    barrier: Barrier,
    /// Largest stopping residual of the round, double-buffered by round
    /// parity.
    max_change: [Mutex<f64>; 2],
}

fn agent_loop(
    agent: &mut AgentState,
    cfg: &InnerLoopConfig,
    inbox: mpsc::Receiver<MultiplierMessage>,
    peers: Vec<mpsc::Sender<MultiplierMessage>>,
    shared: &Shared,
) -> Result<(usize, bool), QpError> {
    let mut early: HashMap<u32, Vec<MultiplierMessage>> = HashMap::new();
    let mut round = Vec::with_capacity(agent.neighbors.len());
    for tau in 0..cfg.k {
        let tau32 = tau as u32;
        agent.mu_update(cfg.gamma);
        let msg = agent.outgoing(tau32);
        for p in &peers {
            // a closed channel means the peer already failed
            let _ = p.send(msg);
        }
        round.clear();
        round.extend(early.remove(&tau32).unwrap_or_default());
        while round.len() < agent.neighbors.len() {
            let m = inbox.recv().map_err(|_| QpError::MissingNeighbor {
                agent: agent.id,
                neighbor: usize::MAX,
                tau: tau32,
            })?;
            if m.tau == tau32 {
                round.push(m);
            } else {
                early.entry(m.tau).or_default().push(m);
            }
        }
        let change = agent.qhat_update(&round)?;
        if let Some(tol) = cfg.tolerance {
            let slot = tau % 2;
            {
                let mut m = shared.max_change[slot].lock().expect("poisoned");
                *m = m.max(change);
            }
            let leader = shared.barrier.wait().is_leader();
            let worst = *shared.max_change[slot].lock().expect("poisoned");
            if leader {
                *shared.max_change[1 - slot].lock().expect("poisoned") = 0.0;
            }
            shared.barrier.wait();
            if worst < tol {
                return Ok((tau + 1, false));
            }
        }
    }
    Ok((cfg.k, cfg.tolerance.is_some()))
}

impl InnerSolver for ThreadedSolver {
    fn solve(&mut self, agents: &mut [AgentState], cfg: &InnerLoopConfig) -> Result<InnerLoopOutcome, QpError> {
        cfg.validate()?;
        if !cfg.warm_start {
            agents.iter_mut().for_each(AgentState::reset_inner);
        }
        let n = agents.len();
        let (senders, receivers): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel()).unzip();
        let shared = Shared {
            barrier: Barrier::new(n),
            max_change: [Mutex::new(0.0), Mutex::new(0.0)],
        };
        let results: Vec<Result<(usize, bool), QpError>> = thread::scope(|s| {
            let handles: Vec<_> = agents
                .iter_mut()
                .zip(receivers)
                .map(|(agent, inbox)| {
                    let peers = agent.neighbors.iter().map(|&j| senders[j].clone()).collect();
                    let shared = &shared;
                    s.spawn(move || agent_loop(agent, cfg, inbox, peers, shared))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("agent thread panicked"))
                .collect()
        });
        let mut iterations = 0;
        let mut truncated = false;
        for r in results {
            let (it, tr) = r?;
            iterations = iterations.max(it);
            truncated |= tr;
        }
        Ok(InnerLoopOutcome {
            q_hat: agents.iter().map(|a| a.q_hat).collect(),
            iterations,
            truncated,
        })
    }
}
