//! Simulation, anatomical-prior scoring and reinforcement learning for
//! autonomous acquisition of the apical four-chamber cardiac view.
//!
//! Labeled phantom hearts ([`phantom`]) are cut by a virtual probe
//! ([`imaging`]); anatomical features and their Gaussian priors
//! ([`anatomy`]) define the state and reward of a probe-control MDP
//! ([`env`]) that a double DQN ([`agent`]) learns to solve. [`srg`] holds a
//! standalone spatial-relation graph attention block built on the same
//! small numerics core ([`nncore`]).

pub mod agent;
pub mod anatomy;
pub mod config;
pub mod env;
pub mod error;
pub mod imaging;
pub mod nncore;
pub mod phantom;
pub mod srg;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
