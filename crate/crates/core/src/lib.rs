//! Opportunistic scheduling over `n` homogeneous queues with i.i.d. on/off
//! channels.
//!
//! * [`sim`] simulates the exact finite-`n` Markov model under LCQ, LCQ(d)
//!   and LCQ(d_n);
//! * [`meanfield`] integrates the `n -> inf` limit dynamics;
//! * [`equilibrium`] computes the limiting equilibria and delays;
//! * [`harness`] runs replicated experiments and compares simulation with
//!   theory.

pub mod equilibrium;
pub mod error;
pub mod harness;
pub mod meanfield;
pub mod model;
pub mod output;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    mean_occupancy, occupancy_pmf, rho_distance, tail_from_counts, validate_params, CountTail, DnRule, PolicySpec,
    SelectionMode, SystemParams, TailVector,
};
