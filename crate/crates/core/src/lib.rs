//! Desk-scale sandbox for resilient autoscaling of chained micro-services:
//! an attacker/defender scaling game over a synthetic cluster, a
//! trace-fitted digital twin, organization-constrained multi-agent policy
//! training, and post-hoc trajectory analysis.

pub mod error;
pub mod manifest;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod trace;
pub mod twin;

pub use error::{Error, Result};
