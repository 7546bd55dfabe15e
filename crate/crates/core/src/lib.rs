//! Trace-driven microservice cluster scheduling: a discrete-event simulator,
//! an asynchronous advantage actor-critic learner, four baseline schedulers
//! and a benchmark harness.

// negated float comparisons deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod a3c;
pub mod baselines;
pub mod bench;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod simenv;
pub mod trace;

pub use error::{Error, Result};
