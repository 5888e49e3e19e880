//! Sequential exploration of expensive deterministic multi-response systems
//! with unknown infeasible regions.
//!
//! The workflow is: evaluate a space-filling initial design ([`design`]) on a
//! [`bench::Problem`], fit a feasibility classifier ([`classify`]), generate
//! new points concentrated in low-loss regions with a minimum energy design
//! ([`med`]), optionally against a cheap loss surrogate ([`surrogate`]), and
//! validate gated proposals ([`campaign`]). [`gp_ei`] provides the
//! expected-improvement baseline used for spread comparisons.

pub mod bench;
pub mod design;
pub mod par;
pub mod rng;
pub mod stats;
pub mod classify;
pub mod gp_ei;
pub mod med;
pub mod surrogate;
pub mod campaign;
pub mod cli;
