//! Reinforcement learning to rank over multi-step search sessions.
//!
//! A search session is modelled as a Markov decision process whose states are
//! item page histories. The crate provides the session types and exact
//! oracles ([`ssmdp`]), a synthetic shopping simulator ([`shop_sim`]), online
//! estimators of conversion behaviour ([`env_models`]), a small neural stack
//! ([`neural`]), the learning agents ([`agents`]) and a seeded experiment
//! harness ([`harness`]).

pub mod agents;
pub mod env_models;
pub mod error;
pub mod harness;
pub mod neural;
pub mod params;
pub mod shop_sim;
pub mod ssmdp;

pub use error::{Error, Result};
