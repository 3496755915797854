//! Adaptive ad exposure under per-request and per-day constraints.
//!
//! The crate bundles a request-log simulator ([`env`]), the constrained MDP
//! layer built on it ([`pscmdp`]), a small dense-network engine ([`neural`]),
//! the two learning levels ([`lower`] per-request actor-critics trained with
//! constrained hindsight replay, [`higher`] an hourly constraint-choice DQN)
//! and the baselines, oracle and command-line harness in [`bench`].

pub mod error;
pub mod env;
pub mod pscmdp;
pub mod seeds;
pub mod neural;
pub mod lower;
pub mod higher;
pub mod bench;

pub use error::{Error, Result};
