//! Distributed Volt/VAr control of radial distribution feeders.
//!
//! Inverter agents regulate bus voltages by dual ascent: an outer loop on
//! voltage-limit multipliers driven by local measurements, and an inner
//! loop on reactive-limit multipliers exchanged only between electrical
//! neighbors. The crate also carries the feeder model, an AC power flow,
//! centralized reference solvers and a simulated message-passing network.
//!
//! Without the default `std` feature the crate only needs `alloc`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod controller;
pub mod experiment;
pub mod grid;
pub mod linalg;
pub mod oracle;
pub mod power_flow;
pub mod qp;
pub mod scenario;
pub mod sim;
pub mod testbed;
