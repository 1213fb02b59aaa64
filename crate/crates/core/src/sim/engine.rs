//! Closed-loop simulation: periodic interrupts measure the plant, update
//! the voltage multipliers, run the inner loop over the transport and
//! actuate.
//!
//! Two executors share the same semantics. The lock-step executor is used
//! when every agent fires at the same instant and delivery is round-based;
//! it runs the inner loop as plain rounds. The event-driven executor
//! handles phase offsets and random delays with a priority queue over
//! simulated time. An epoch's inner loop starts at the earliest interrupt
//! of that epoch and every other agent joins when first contacted, so the
//! per-iteration barrier makes both executors compute the same numbers.

use alloc::collections::{BTreeMap, BinaryHeap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::controller::{AgentId, AgentState};
use crate::power_flow::PowerFlowError;
use crate::qp::{run_inner_loop, InnerLoopConfig, InnerLoopOutcome, MultiplierMessage, QpError};
use crate::scenario::{ControlMode, EventAction, Scenario, Setup};

use super::clock::{secs_to_us, us_to_secs, AgentClock, Micros};
use super::log::{ConvergenceDetector, LogRow, StepRecord};
use super::transport::{EdgeStats, Transport};

/// A barrier left unresolved for this many periods is reported as a
/// deadlock.
pub const DEADLOCK_PERIODS: u64 = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("power flow failed at t = {time_s} s: {source}")]
    PowerFlow { time_s: f64, source: PowerFlowError },
    #[error("power flow did not converge at t = {time_s} s")]
    PowerFlowDiverged { time_s: f64 },
    #[error("agent {agent} waited on iteration {tau} of epoch {epoch} past the deadlock bound (t = {time_s} s)")]
    Deadlock {
        agent: AgentId,
        epoch: u64,
        tau: u32,
        time_s: f64,
    },
    #[error("inner loop: {0}")]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Executor {
    /// Lock-step when the configuration allows it, event-driven otherwise.
    Auto,
    LockStep,
    EventDriven,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub executor: Executor,
    pub record_rows: bool,
    pub record_steps: bool,
    /// Stop once the detector reports convergence.
    pub stop_on_convergence: bool,
    /// Stop and flag divergence once any `|q̂|` exceeds this, kVAr.
    pub divergence_limit_kvar: Option<f64>,
    /// Overrides the scenario's step bound.
    pub max_steps: Option<usize>,
    /// Overrides the transport seed.
    pub seed: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            executor: Executor::Auto,
            record_rows: true,
            record_steps: true,
            stop_on_convergence: false,
            divergence_limit_kvar: None,
            max_steps: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    /// Sorted by `(epoch, agent)`.
    pub rows: Vec<LogRow>,
    pub steps: Vec<StepRecord>,
    pub detector: ConvergenceDetector,
    /// Completed actuation steps.
    pub epochs: u64,
    pub final_q: Vec<f64>,
    pub final_v: Vec<f64>,
    pub final_lambda_max: Vec<f64>,
    /// Largest inner iteration count of any step.
    pub max_inner_iterations: usize,
    pub diverged: bool,
    pub any_truncated: bool,
    pub edge_stats: Vec<EdgeStats>,
    pub stale_discarded: u64,
    pub executor: Executor,
    /// Plant with the injections in force at the end of the run.
    pub final_plant: crate::power_flow::Plant,
}

/// Runs the inner loop for the lock-step executor.
pub trait InnerSolver {
    fn solve(&mut self, agents: &mut [AgentState], cfg: &InnerLoopConfig) -> Result<InnerLoopOutcome, QpError>;
}

pub fn build_agents(setup: &Setup) -> Vec<AgentState> {
    (0..setup.limits.len())
        .map(|i| AgentState::new(i, setup.limits[i], setup.sensitivity.g_row(i)))
        .collect()
}

pub fn lock_step_applicable(scenario: &Scenario, n: usize) -> bool {
    let offsets: Vec<Micros> = (0..n).map(|i| offset_us(scenario, i)).collect();
    scenario.transport.mode.is_deterministic() && offsets.windows(2).all(|w| w[0] == w[1])
}

fn offset_us(scenario: &Scenario, i: usize) -> Micros {
    secs_to_us(scenario.clock_offsets_s.get(i).copied().unwrap_or(0.0))
}

/// Runs `scenario` with the default lock-step inner solver.
pub fn run_simulation(scenario: &Scenario, setup: &Setup, opts: &RunOptions) -> Result<SimOutput, SimError> {
    run_simulation_with(scenario, setup, opts, None)
}

/// As [`run_simulation`]; `solver` replaces the transport rounds of the
/// lock-step executor.
pub fn run_simulation_with(
    scenario: &Scenario,
    setup: &Setup,
    opts: &RunOptions,
    solver: Option<&mut dyn InnerSolver>,
) -> Result<SimOutput, SimError> {
    let mut core = Core::new(scenario, setup, opts);
    let executor = match opts.executor {
        Executor::Auto if lock_step_applicable(scenario, core.n) => Executor::LockStep,
        Executor::Auto => Executor::EventDriven,
        e => e,
    };
    match executor {
        Executor::LockStep => run_lock_step(&mut core, solver)?,
        _ => run_event_driven(&mut core)?,
    }
    Ok(core.finish(executor))
}

/// State shared by both executors.
struct Core<'a> {
    scenario: &'a Scenario,
    setup: &'a Setup,
    opts: &'a RunOptions,
    n: usize,
    agents: Vec<AgentState>,
    plant: crate::power_flow::Plant,
    plant_cache: Option<Vec<f64>>,
    transport: Transport,
    noise: Option<(Normal<f64>, Vec<ChaCha8Rng>)>,
    period_us: Micros,
    base_offset_us: Micros,
    end_us: Option<Micros>,
    max_epochs: u64,
    pending: BTreeMap<u64, (Vec<Option<LogRow>>, usize, bool)>,
    next_finalize: u64,
    rows: Vec<LogRow>,
    steps: Vec<StepRecord>,
    detector: ConvergenceDetector,
    detector_started: bool,
    final_v: Vec<f64>,
    max_inner: usize,
    diverged: bool,
    any_truncated: bool,
    stop: bool,
    stale: u64,
}

impl<'a> Core<'a> {
    fn new(scenario: &'a Scenario, setup: &'a Setup, opts: &'a RunOptions) -> Self {
        let n = setup.limits.len();
        let seed = opts.seed.unwrap_or(scenario.transport.seed);
        let noise = (scenario.noise_sigma_pu > 0.0).then(|| {
            let dist = Normal::new(0.0, scenario.noise_sigma_pu).expect("sigma validated");
            let rngs = (0..n)
                .map(|i| ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_a11_u64.wrapping_mul(i as u64 + 1)))
                .collect();
            (dist, rngs)
        });
        let base_offset_us = (0..n).map(|i| offset_us(scenario, i)).min().unwrap_or(0);
        let end_us = scenario
            .events
            .iter()
            .find(|e| e.action == EventAction::End)
            .map(|e| secs_to_us(e.time_s));
        Self {
            scenario,
            setup,
            opts,
            n,
            agents: build_agents(setup),
            plant: setup.plant.clone(),
            plant_cache: None,
            transport: Transport::new(&setup.sensitivity.neighbors, scenario.transport.mode, seed),
            noise,
            period_us: secs_to_us(setup.gains.period_s).max(1),
            base_offset_us,
            end_us,
            max_epochs: opts.max_steps.unwrap_or(scenario.max_steps) as u64,
            pending: BTreeMap::new(),
            next_finalize: 0,
            rows: Vec::new(),
            steps: Vec::new(),
            detector: ConvergenceDetector::new(setup.vlim),
            detector_started: false,
            final_v: vec![f64::NAN; n],
            max_inner: 0,
            diverged: false,
            any_truncated: false,
            stop: false,
            stale: 0,
        }
    }

    fn epoch_time(&self, k: u64) -> Micros {
        self.base_offset_us + k * self.period_us
    }

    fn epoch_in_horizon(&self, k: u64) -> bool {
        k < self.max_epochs && self.end_us.map_or(true, |e| self.epoch_time(k) < e)
    }

    /// Whether the controller acts in epoch `k`: decided by the enable
    /// state at the epoch's earliest interrupt.
    fn epoch_active(&self, k: u64) -> bool {
        if self.scenario.controller.mode == ControlMode::Off {
            return false;
        }
        let t = self.epoch_time(k);
        let mut on = self.scenario.controller.enabled_at_start;
        for e in &self.scenario.events {
            if secs_to_us(e.time_s) > t {
                break;
            }
            match e.action {
                EventAction::EnableController => on = true,
                EventAction::DisableController => on = false,
                _ => {}
            }
        }
        on
    }

    fn apply_event(&mut self, action: EventAction) {
        match action {
            EventAction::SetInjection { bus, p_w, q_var } => {
                self.plant.set_injection(bus, p_w, q_var);
                self.plant_cache = None;
            }
            EventAction::End => self.stop = true,
            EventAction::EnableController | EventAction::DisableController => {}
        }
    }

    fn true_voltages(&mut self, now: Micros) -> Result<&[f64], SimError> {
        if self.plant_cache.is_none() {
            let q: Vec<f64> = self.agents.iter().map(|a| a.q_applied).collect();
            let (v, ok) = self.plant.inverter_voltages(&q).map_err(|source| SimError::PowerFlow {
                time_s: us_to_secs(now),
                source,
            })?;
            if !ok {
                return Err(SimError::PowerFlowDiverged { time_s: us_to_secs(now) });
            }
            self.plant_cache = Some(v);
        }
        Ok(self.plant_cache.as_deref().unwrap_or(&[]))
    }

    fn measure(&mut self, agent: AgentId, now: Micros) -> Result<f64, SimError> {
        let v = self.true_voltages(now)?[agent];
        Ok(match self.noise.as_mut() {
            Some((dist, rngs)) => v + dist.sample(&mut rngs[agent]),
            None => v,
        })
    }

    fn actuate(&mut self, agent: AgentId, q_hat: f64) {
        let before = self.agents[agent].q_applied;
        let after = self.agents[agent].actuation_step(q_hat);
        if before != after {
            self.plant_cache = None;
        }
    }

    /// Local action at an interrupt of an inactive (or droop) epoch.
    fn local_step(&mut self, agent: AgentId, k: u64, now: Micros, active: bool) -> Result<(), SimError> {
        let v = self.measure(agent, now)?;
        if active && self.scenario.controller.mode == ControlMode::Droop {
            let q = self.setup.droop[agent].response(v);
            self.actuate(agent, q);
        }
        self.record(agent, k, now, v, 0, false);
        Ok(())
    }

    fn record(&mut self, agent: AgentId, k: u64, now: Micros, v: f64, iterations: usize, truncated: bool) {
        let a = &self.agents[agent];
        let row = LogRow {
            epoch: k,
            sim_time_s: us_to_secs(now),
            agent_id: agent,
            v_pu: v,
            q_kvar: a.q_applied,
            lambda_min: a.lambda_min,
            lambda_max: a.lambda_max,
            mu_min: a.mu_min,
            mu_max: a.mu_max,
            qhat_kvar: a.q_hat,
            inner_iterations_used: iterations,
        };
        let n = self.n;
        let entry = self.pending.entry(k).or_insert_with(|| (vec![None; n], 0, false));
        if entry.0[agent].is_none() {
            entry.1 += 1;
        }
        entry.0[agent] = Some(row);
        entry.2 |= truncated;
        self.finalize_ready();
    }

    fn finalize_ready(&mut self) {
        while let Some((slots, count, truncated)) = self.pending.get(&self.next_finalize) {
            if *count < self.n {
                break;
            }
            let truncated = *truncated;
            let rows: Vec<LogRow> = slots.iter().map(|r| r.expect("counted")).collect();
            self.pending.remove(&self.next_finalize);
            let k = self.next_finalize;
            self.next_finalize += 1;
            self.finalize_epoch(k, rows, truncated);
        }
    }

    fn finalize_epoch(&mut self, k: u64, rows: Vec<LogRow>, truncated: bool) {
        let active = self.epoch_active(k);
        let step = StepRecord::from_rows(&rows, active, truncated);
        self.max_inner = self.max_inner.max(step.inner_iterations);
        self.any_truncated |= truncated;
        self.final_v.clone_from(&step.v);
        let never_enabled = self.scenario.controller.mode == ControlMode::Off;
        if active || never_enabled {
            self.detector_started = true;
        }
        if self.detector_started {
            let done = self.detector.push(&step.v, &step.q);
            if done && self.opts.stop_on_convergence {
                self.stop = true;
            }
        }
        if let Some(limit) = self.opts.divergence_limit_kvar {
            if step.q_hat.iter().any(|q| !(q.abs() <= limit)) {
                self.diverged = true;
                self.stop = true;
            }
        }
        if self.opts.record_rows {
            self.rows.extend(rows);
        }
        if self.opts.record_steps {
            self.steps.push(step);
        }
    }

    fn finish(self, executor: Executor) -> SimOutput {
        SimOutput {
            rows: self.rows,
            steps: self.steps,
            detector: self.detector,
            epochs: self.next_finalize,
            final_q: self.agents.iter().map(|a| a.q_applied).collect(),
            final_v: self.final_v,
            final_lambda_max: self.agents.iter().map(|a| a.lambda_max).collect(),
            max_inner_iterations: self.max_inner,
            diverged: self.diverged,
            any_truncated: self.any_truncated,
            edge_stats: self.transport.stats(),
            stale_discarded: self.stale,
            executor,
            final_plant: self.plant,
        }
    }
}

fn run_lock_step(core: &mut Core<'_>, mut solver: Option<&mut dyn InnerSolver>) -> Result<(), SimError> {
    let events = core.scenario.events.clone();
    let mut next_event = 0;
    let mut k = 0u64;
    let cfg = core.setup.inner;
    let alpha = core.setup.gains.alpha;
    let mut v = Vec::with_capacity(core.n);
    while !core.stop && core.epoch_in_horizon(k) {
        let now = core.epoch_time(k);
        while next_event < events.len() && secs_to_us(events[next_event].time_s) <= now {
            core.apply_event(events[next_event].action);
            next_event += 1;
        }
        if core.stop {
            break;
        }
        let active = core.epoch_active(k);
        v.clear();
        for i in 0..core.n {
            v.push(core.measure(i, now)?);
        }
        let (iterations, truncated) = match core.scenario.controller.mode {
            ControlMode::Distributed if active => {
                for (a, &vi) in core.agents.iter_mut().zip(&v) {
                    a.lambda_update(vi, core.setup.vlim, alpha);
                }
                let out = match solver.as_mut() {
                    Some(s) => s.solve(&mut core.agents, &cfg)?,
                    None => run_inner_loop(&mut core.agents, &cfg, &mut core.transport)?,
                };
                for i in 0..core.n {
                    core.actuate(i, out.q_hat[i]);
                }
                (out.iterations, out.truncated)
            }
            ControlMode::Droop if active => {
                for (i, &vi) in v.iter().enumerate() {
                    let q = core.setup.droop[i].response(vi);
                    core.actuate(i, q);
                }
                (0, false)
            }
            _ => (0, false),
        };
        for (i, &vi) in v.iter().enumerate() {
            core.record(i, k, now, vi, iterations, truncated);
        }
        k += 1;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// event-driven executor

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Scenario(usize),
    Interrupt { agent: AgentId, k: u64 },
    Deliver { from: AgentId, to: AgentId },
}

#[derive(Debug, Clone, Copy)]
struct Snapshot {
    iteration: usize,
    mu_min: f64,
    mu_max: f64,
    q_hat: f64,
}

#[derive(Debug, Clone)]
struct Runtime {
    clock: AgentClock,
    /// Last epoch started.
    epoch: Option<u64>,
    busy: bool,
    /// Waiting at the capped iteration for the termination decision.
    parked: bool,
    tau: u32,
    start_requested: bool,
    inbox: Vec<(u64, MultiplierMessage)>,
    measured_v: f64,
    measured_at: Micros,
    waiting_since: Micros,
    history: VecDeque<Snapshot>,
}

/// Global early-termination decision for tolerance mode: iteration `it`
/// ends the loop once every agent has completed it and the largest
/// stopping residual among them is below the tolerance, or `it` is the cap.
#[derive(Debug, Clone)]
struct Termination {
    epoch: u64,
    counts: Vec<usize>,
    max_change: Vec<f64>,
    resolved: usize,
}

impl Termination {
    fn new() -> Self {
        Self {
            epoch: u64::MAX,
            counts: Vec::new(),
            max_change: Vec::new(),
            resolved: 0,
        }
    }

    /// Returns the stopping iteration once decided.
    fn report(&mut self, epoch: u64, iteration: usize, change: f64, n: usize, tol: f64, cap: usize) -> Option<usize> {
        if epoch != self.epoch {
            self.epoch = epoch;
            self.counts.clear();
            self.max_change.clear();
            self.resolved = 0;
        }
        let idx = iteration - 1;
        if self.counts.len() <= idx {
            self.counts.resize(idx + 1, 0);
            self.max_change.resize(idx + 1, 0.0);
        }
        self.counts[idx] += 1;
        self.max_change[idx] = self.max_change[idx].max(change);
        while self.resolved < self.counts.len() && self.counts[self.resolved] == n {
            let it = self.resolved + 1;
            if self.max_change[self.resolved] < tol || it >= cap {
                return Some(it);
            }
            self.resolved += 1;
        }
        None
    }
}

struct EventLoop<'c, 'a> {
    core: &'c mut Core<'a>,
    rt: Vec<Runtime>,
    queue: BinaryHeap<Reverse<(Micros, u64, Event)>>,
    seq: u64,
    now: Micros,
    term: Termination,
    buf: Vec<MultiplierMessage>,
}

fn run_event_driven(core: &mut Core<'_>) -> Result<(), SimError> {
    let rt = (0..core.n)
        .map(|i| Runtime {
            clock: AgentClock {
                period_us: core.period_us,
                offset_us: offset_us(core.scenario, i),
            },
            epoch: None,
            busy: false,
            parked: false,
            tau: 0,
            start_requested: false,
            inbox: Vec::new(),
            measured_v: f64::NAN,
            measured_at: 0,
            waiting_since: 0,
            history: VecDeque::new(),
        })
        .collect();
    let mut el = EventLoop {
        core,
        rt,
        queue: BinaryHeap::new(),
        seq: 0,
        now: 0,
        term: Termination::new(),
        buf: Vec::new(),
    };
    for (idx, e) in el.core.scenario.events.iter().enumerate() {
        el.push(secs_to_us(e.time_s), Event::Scenario(idx));
    }
    for i in 0..el.core.n {
        el.schedule_interrupt(i, 0);
    }
    el.run()
}

impl EventLoop<'_, '_> {
    fn push(&mut self, at: Micros, ev: Event) {
        self.queue.push(Reverse((at, self.seq, ev)));
        self.seq += 1;
    }

    fn schedule_interrupt(&mut self, agent: AgentId, k: u64) {
        if self.core.epoch_in_horizon(k) {
            let at = self.rt[agent].clock.interrupt(k);
            self.push(at, Event::Interrupt { agent, k });
        }
    }

    fn distributed(&self) -> bool {
        self.core.scenario.controller.mode == ControlMode::Distributed
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(Reverse((at, _, ev))) = self.queue.pop() {
            self.now = at;
            match ev {
                Event::Scenario(idx) => {
                    let action = self.core.scenario.events[idx].action;
                    self.core.apply_event(action);
                }
                Event::Interrupt { agent, k } => {
                    self.check_deadlock()?;
                    self.schedule_interrupt(agent, k + 1);
                    self.on_interrupt(agent, k)?;
                }
                Event::Deliver { from, to } => self.on_deliver(from, to)?,
            }
            if self.core.stop {
                return Ok(());
            }
        }
        if let Some(i) = (0..self.core.n).find(|&i| self.rt[i].busy) {
            return Err(self.deadlock(i));
        }
        Ok(())
    }

    fn deadlock(&self, i: AgentId) -> SimError {
        SimError::Deadlock {
            agent: i,
            epoch: self.rt[i].epoch.unwrap_or(0),
            tau: self.rt[i].tau,
            time_s: us_to_secs(self.now),
        }
    }

    fn check_deadlock(&self) -> Result<(), SimError> {
        let bound = DEADLOCK_PERIODS * self.core.period_us;
        for (i, r) in self.rt.iter().enumerate() {
            if r.busy && self.now.saturating_sub(r.waiting_since) > bound {
                return Err(self.deadlock(i));
            }
        }
        Ok(())
    }

    fn next_epoch(&self, agent: AgentId) -> u64 {
        self.rt[agent].epoch.map_or(0, |e| e + 1)
    }

    fn on_interrupt(&mut self, agent: AgentId, k: u64) -> Result<(), SimError> {
        let next = self.next_epoch(agent);
        if k < next {
            // already joined this epoch when contacted
            return Ok(());
        }
        let active = self.core.epoch_active(k);
        if active && self.distributed() {
            if self.rt[agent].busy {
                self.rt[agent].start_requested = true;
                return Ok(());
            }
            self.start_epoch(agent, k)
        } else {
            self.rt[agent].epoch = Some(k);
            self.core.local_step(agent, k, self.now, active)
        }
    }

    fn start_epoch(&mut self, agent: AgentId, k: u64) -> Result<(), SimError> {
        let v = self.core.measure(agent, self.now)?;
        let vlim = self.core.setup.vlim;
        let alpha = self.core.setup.gains.alpha;
        let cfg = self.core.setup.inner;
        let a = &mut self.core.agents[agent];
        a.lambda_update(v, vlim, alpha);
        if !cfg.warm_start {
            a.reset_inner();
        }
        let r = &mut self.rt[agent];
        r.epoch = Some(k);
        r.busy = true;
        r.parked = false;
        r.start_requested = false;
        r.tau = 0;
        r.measured_v = v;
        r.measured_at = self.now;
        r.history.clear();
        self.begin_round(agent)?;
        self.try_progress(agent)
    }

    fn begin_round(&mut self, agent: AgentId) -> Result<(), SimError> {
        let gamma = self.core.setup.inner.gamma;
        let epoch = self.rt[agent].epoch.unwrap_or(0);
        let tau = self.rt[agent].tau;
        let a = &mut self.core.agents[agent];
        a.mu_update(gamma);
        let msg = a.outgoing(tau);
        for idx in 0..self.core.agents[agent].neighbors.len() {
            let to = self.core.agents[agent].neighbors[idx];
            let at = self
                .core
                .transport
                .send(self.now, agent, to, epoch, msg)
                .map_err(QpError::from)?;
            self.push(at, Event::Deliver { from: agent, to });
        }
        self.rt[agent].waiting_since = self.now;
        Ok(())
    }

    fn on_deliver(&mut self, from: AgentId, to: AgentId) -> Result<(), SimError> {
        let Some(env) = self.core.transport.deliver(from, to) else {
            return Ok(());
        };
        let r = &mut self.rt[to];
        let current = r.epoch;
        let stale = match current {
            Some(e) => env.epoch < e || (env.epoch == e && !r.busy),
            None => false,
        };
        if stale {
            self.core.stale += 1;
            return Ok(());
        }
        r.inbox.push((env.epoch, env.msg));
        let next = self.next_epoch(to);
        if env.epoch == next {
            if self.rt[to].busy {
                self.rt[to].start_requested = true;
            } else {
                return self.start_epoch(to, next);
            }
        }
        self.try_progress(to)
    }

    fn try_progress(&mut self, agent: AgentId) -> Result<(), SimError> {
        let cfg = self.core.setup.inner;
        loop {
            let r = &self.rt[agent];
            if !r.busy || r.parked {
                return Ok(());
            }
            let epoch = r.epoch.unwrap_or(0);
            let tau = r.tau;
            let nbrs = &self.core.agents[agent].neighbors;
            let ready = nbrs.iter().all(|&j| {
                r.inbox
                    .iter()
                    .any(|(e, m)| *e == epoch && m.tau == tau && m.sender as AgentId == j)
            });
            if !ready {
                return Ok(());
            }
            self.buf.clear();
            let inbox = &mut self.rt[agent].inbox;
            let mut i = 0;
            while i < inbox.len() {
                let (e, m) = inbox[i];
                if e == epoch && m.tau == tau {
                    self.buf.push(m);
                    inbox.swap_remove(i);
                } else {
                    i += 1;
                }
            }
            let change = self.core.agents[agent].qhat_update(&self.buf)?;
            let iteration = tau as usize + 1;
            match cfg.tolerance {
                None => {
                    if iteration == cfg.k {
                        return self.finish_agent(agent, iteration, false);
                    }
                }
                Some(tol) => {
                    let a = &self.core.agents[agent];
                    let snap = Snapshot {
                        iteration,
                        mu_min: a.mu_min,
                        mu_max: a.mu_max,
                        q_hat: a.q_hat,
                    };
                    self.rt[agent].history.push_back(snap);
                    let n = self.core.n;
                    if let Some(stop) = self.term.report(epoch, iteration, change, n, tol, cfg.k) {
                        return self.stop_all(epoch, stop, stop >= cfg.k && self.term.max_change[stop - 1] >= tol);
                    }
                    let resolved = self.term.resolved;
                    let h = &mut self.rt[agent].history;
                    while h.front().is_some_and(|s| s.iteration <= resolved) && h.len() > 1 {
                        h.pop_front();
                    }
                    if iteration == cfg.k {
                        self.rt[agent].parked = true;
                        return Ok(());
                    }
                }
            }
            self.rt[agent].tau += 1;
            self.begin_round(agent)?;
        }
    }

    /// Rolls every agent back to iteration `stop` of `epoch` and actuates.
    fn stop_all(&mut self, epoch: u64, stop: usize, truncated: bool) -> Result<(), SimError> {
        for i in 0..self.core.n {
            if !(self.rt[i].busy && self.rt[i].epoch == Some(epoch)) {
                continue;
            }
            if let Some(s) = self.rt[i].history.iter().find(|s| s.iteration == stop).copied() {
                let a = &mut self.core.agents[i];
                a.mu_min = s.mu_min;
                a.mu_max = s.mu_max;
                a.q_hat = s.q_hat;
            }
        }
        for i in 0..self.core.n {
            if self.rt[i].busy && self.rt[i].epoch == Some(epoch) {
                self.finish_agent(i, stop, truncated)?;
            }
        }
        Ok(())
    }

    fn finish_agent(&mut self, agent: AgentId, iterations: usize, truncated: bool) -> Result<(), SimError> {
        let q_hat = self.core.agents[agent].q_hat;
        self.core.actuate(agent, q_hat);
        let r = &mut self.rt[agent];
        r.busy = false;
        r.parked = false;
        r.history.clear();
        let epoch = r.epoch.unwrap_or(0);
        r.inbox.retain(|(e, _)| *e > epoch);
        let (v, at) = (r.measured_v, r.measured_at);
        self.core.record(agent, epoch, at, v, iterations, truncated);
        let next = epoch + 1;
        let contacted = self.rt[agent].inbox.iter().any(|(e, _)| *e == next);
        if (self.rt[agent].start_requested || contacted) && self.core.epoch_in_horizon(next) && !self.core.stop {
            self.rt[agent].start_requested = false;
            return self.start_epoch(agent, next);
        }
        Ok(())
    }
}
