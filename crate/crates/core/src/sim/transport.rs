//! Point-to-point message transport between neighboring agents.
//!
//! Each directed edge is a FIFO channel. Delivery times are either the next
//! round boundary or a random delay; in both cases a message never
//! overtakes an earlier one on the same edge.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::AgentId;
use crate::grid::NeighborGraph;
use crate::qp::{Exchange, ExchangeError, MultiplierMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMode {
    /// Delivered at the next multiple of `round_us`.
    DeterministicRounds { round_us: u64 },
    /// Delay drawn uniformly from `[min_us, max_us]`.
    RandomDelay { min_us: u64, max_us: u64 },
}

impl TransportMode {
    pub fn is_deterministic(&self) -> bool {
        matches!(self, TransportMode::DeterministicRounds { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    /// Actuation epoch the message belongs to.
    pub epoch: u64,
    pub deliver_at_us: u64,
    pub msg: MultiplierMessage,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeStats {
    pub from: AgentId,
    pub to: AgentId,
    pub sent: u64,
    pub delivered: u64,
}

#[derive(Debug, Clone)]
struct Channel {
    to: AgentId,
    queue: VecDeque<Envelope>,
    last_delivery_us: u64,
    sent: u64,
    delivered: u64,
}

#[derive(Debug, Clone)]
pub struct Transport {
    mode: TransportMode,
    rng: ChaCha8Rng,
    /// `channels[from]`, one per neighbor in ascending order.
    channels: Vec<Vec<Channel>>,
    /// Lock-step use: messages of the current round not yet released.
    staged: Vec<(AgentId, AgentId)>,
}

impl Transport {
    pub fn new(graph: &NeighborGraph, mode: TransportMode, seed: u64) -> Self {
        let channels = (0..graph.len())
            .map(|i| {
                graph
                    .neighbors(i)
                    .iter()
                    .map(|&to| Channel {
                        to,
                        queue: VecDeque::new(),
                        last_delivery_us: 0,
                        sent: 0,
                        delivered: 0,
                    })
                    .collect()
            })
            .collect();
        Self {
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            channels,
            staged: Vec::new(),
        }
    }

    pub fn mode(&self) -> TransportMode {
        self.mode
    }

    fn channel_mut(&mut self, from: AgentId, to: AgentId) -> Result<&mut Channel, ExchangeError> {
        let list = self
            .channels
            .get_mut(from)
            .ok_or(ExchangeError::NotNeighbors { from, to })?;
        let pos = list
            .binary_search_by_key(&to, |c| c.to)
            .map_err(|_| ExchangeError::NotNeighbors { from, to })?;
        Ok(&mut list[pos])
    }

    /// Queues `msg` on the edge `from → to` at time `now_us` and returns
    /// its delivery time.
    pub fn send(
        &mut self,
        now_us: u64,
        from: AgentId,
        to: AgentId,
        epoch: u64,
        msg: MultiplierMessage,
    ) -> Result<u64, ExchangeError> {
        let sampled = match self.mode {
            TransportMode::DeterministicRounds { round_us } => {
                let r = round_us.max(1);
                (now_us / r + 1) * r
            }
            TransportMode::RandomDelay { min_us, max_us } => {
                now_us + self.rng.gen_range(min_us..=max_us.max(min_us))
            }
        };
        let ch = self.channel_mut(from, to)?;
        let at = sampled.max(ch.last_delivery_us);
        ch.last_delivery_us = at;
        ch.sent += 1;
        ch.queue.push_back(Envelope {
            epoch,
            deliver_at_us: at,
            msg,
        });
        Ok(at)
    }

    /// Removes the oldest message on `from → to`.
    pub fn deliver(&mut self, from: AgentId, to: AgentId) -> Option<Envelope> {
        let ch = self.channel_mut(from, to).ok()?;
        let env = ch.queue.pop_front()?;
        ch.delivered += 1;
        Some(env)
    }

    pub fn in_flight(&self) -> usize {
        self.channels
            .iter()
            .flat_map(|l| l.iter())
            .map(|c| c.queue.len())
            .sum()
    }

    pub fn stats(&self) -> Vec<EdgeStats> {
        self.channels
            .iter()
            .enumerate()
            .flat_map(|(from, l)| {
                l.iter().map(move |c| EdgeStats {
                    from,
                    to: c.to,
                    sent: c.sent,
                    delivered: c.delivered,
                })
            })
            .collect()
    }
}

/// Round-based use: messages sent in a round become visible at
/// [`Exchange::end_round`], then are consumed by `collect`.
impl Exchange for Transport {
    fn send(&mut self, from: AgentId, to: AgentId, msg: MultiplierMessage) -> Result<(), ExchangeError> {
        Transport::send(self, 0, from, to, 0, msg)?;
        self.staged.push((from, to));
        Ok(())
    }

    fn end_round(&mut self) {
        self.staged.clear();
    }

    fn collect(
        &mut self,
        agent: AgentId,
        neighbors: &[AgentId],
        tau: u32,
        out: &mut Vec<MultiplierMessage>,
    ) -> Result<(), ExchangeError> {
        for &n in neighbors {
            let env = self.deliver(n, agent).ok_or(ExchangeError::Missing {
                from: n,
                to: agent,
                tau,
            })?;
            if env.msg.tau != tau {
                return Err(ExchangeError::Missing {
                    from: n,
                    to: agent,
                    tau,
                });
            }
            out.push(env.msg);
        }
        Ok(())
    }
}
