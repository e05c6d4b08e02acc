//! Online reward learning from sequences of physical corrections.
//!
//! A robot team follows a planned trajectory. A human pushes individual
//! agents; each push deforms the plan smoothly in time. The team keeps a
//! belief over a finite set of candidate reward weights and updates it
//! after every push, treating the corrections so far as one sequence
//! rather than independent events.
//!
//! Module map:
//! - [`trajectory`]: waypoints, corrections, and the deformation kernel
//! - [`rewards`]: scenarios, features, and linear rewards
//! - [`evidence`]: accumulated evidence, likelihoods, and beliefs
//! - [`dstar`]: the normalizer `D*` and its precomputed library
//! - [`sim`]: planner, simulated human, episodes, logs, and replay
//! - [`service`]: the HTTP/SSE session server
//! - [`bench`]: accuracy benchmarks and belief-trace export
//! - [`cli`]: the `seqcorr` command line

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod dstar;
pub mod error;
pub mod evidence;
pub mod rewards;
pub mod service;
pub mod sim;
pub mod trajectory;

pub use error::{Error, Result};
