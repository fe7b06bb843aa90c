//! Analytic simulator of a mobile NPU paired with a hybrid LPDDR5-PIM memory
//! module running tree-based speculative LLM decoding.
//!
//! The crate is organized around the main subsystems of the modeled machine:
//!
//! * [`workload`] - per-iteration operator lists (byte and FLOP counts) for a
//!   Llama2-family decoder with Medusa-style decode heads.
//! * [`hwmodel`] - hardware parameters and the roofline latency/energy
//!   estimator shared by the simulator and the scheduler.
//! * [`pimsim`] - the LPDDR5-PIM die microarchitecture: MPU resources,
//!   column-wise GEMM mapping, broadcast/all-reduce costs, mode switching.
//! * [`nmc`] - the near-data memory controller: tagged commands, copy-write
//!   data reallocation, the PIM global buffer, and the shared-DQ timeline.
//! * [`scheduler`] - the draft token pruner and the data allocation unit.
//! * [`simloop`] - the end-to-end draft/verify decode loop and metrics.
//! * [`config`] - experiment configuration (TOML) and validation.

pub mod config;
pub mod hwmodel;
pub mod nmc;
pub mod pimsim;
pub mod scheduler;
pub mod simloop;
pub mod workload;

use thiserror::Error;

/// Crate-wide error type. `Config` maps to CLI exit code 1, everything else
/// to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("DRAM protocol violation ({param}): {msg}")]
    Protocol { param: String, msg: String },
    #[error("global buffer address out of range: {0} (512 lines)")]
    Address(u16),
    #[error("reallocation exceeds PIM capacity: {0}")]
    Allocation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
