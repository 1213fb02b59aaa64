//! Simulated network and closed-loop experiment execution.

pub mod clock;
pub mod engine;
pub mod log;
pub mod transport;

pub use clock::{AgentClock, Micros};
pub use engine::{
    build_agents, lock_step_applicable, run_simulation, run_simulation_with, Executor, InnerSolver, RunOptions,
    SimError, SimOutput,
};
pub use log::{ConvergenceDetector, LogRow, StepRecord, LOG_COLUMNS};
pub use transport::{EdgeStats, Envelope, Transport, TransportMode};
