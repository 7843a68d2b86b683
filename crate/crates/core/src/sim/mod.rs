//! Event-driven simulation of the finite-`n` system under LCQ, LCQ(d) and
//! LCQ(d_n).

mod policy;
mod run;
mod state;

pub use policy::{select_lcq, LcqdSelector, Selector};
pub use run::{
    replica_seed, run, Event, EventCounts, InitialState, LittleCheck, Outcome, RunConfig, RunResult, Simulator,
    DEFAULT_SAMPLE_INTERVAL,
};
pub use state::QueueSystemState;
