//! XL-MIMO uplink simulation.
//!
//! Long-term channel statistics for a modular array of planar subarrays,
//! MMSE channel estimation with pilot contamination, centralized MMSE and
//! distributed L-MMSE combining, closed-form deterministic SINR
//! approximations, and statistical-CSI scheduling / pilot assignment. The
//! [`experiments`] module wires these into Monte Carlo sweeps driven by
//! key=value scenario files.

// Negated comparisons reject NaN along with out-of-range values; index
// loops mirror the triangular solver recurrences.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod allocation;
pub mod channel;
pub mod combining;
pub mod deterministic;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod parallel;
pub mod rng;
pub mod system_model;

pub use error::{Error, Result};
