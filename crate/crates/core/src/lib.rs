//! Downlink resource allocation for multi-cell multi-carrier NOMA networks.
//!
//! The crate covers the propagation model ([`channel`]), exact SINR and
//! rate evaluation ([`rate`]), the three subproblem solvers ([`schedule`],
//! [`beam`], [`power`]), their alternation ([`solve`]), the JSONL sample
//! format shared with learned allocators ([`dataset`]) and the `noma` CLI.

pub mod allocation;
pub mod beam;
pub mod channel;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod power;
pub mod rate;
pub mod schedule;
pub mod solve;

pub use allocation::Allocation;
pub use channel::{ChannelState, Topology};
pub use config::{Dims, NetworkConfig};
pub use error::{Error, Result};
pub use rate::{RateModel, RateReport};
pub use solve::{solve_baseline, SolveResult, SolverSettings};
