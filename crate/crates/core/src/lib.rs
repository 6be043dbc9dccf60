//! Planning and optimistic learning for finite average-reward MDPs.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: finite MDPs, Bellman operators, exact policy evaluation,
//!   relative value iteration and diameter computation.
//! - [`planner`]: the span projection, the truncated operator `T_c`, the
//!   mixed policy operator and the `ScOpt` relative value iteration loop,
//!   generic over any [`planner::BackupProvider`].
//! - [`extended`]: bounded-parameter MDPs, the inner optimisation over
//!   transition boxes, the modified MDP and extended value iteration.
//! - [`confidence`]: online statistics and empirical-Bernstein sets.
//! - [`agent`]: the episodic UCRL / SCAL learners.
//! - [`env`]: benchmark and counterexample environments.
//! - [`harness`]: seeded regret experiments and CSV output.
//!
//! Data-parallel loops (independent seeds, hitting-time targets, policy
//! enumeration) go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and runs sequentially otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod confidence;
pub mod env;
pub mod error;
pub mod extended;
pub mod harness;
pub mod mdp;
pub mod par;
pub mod planner;

pub use error::{Error, NonConvergence, Oscillation, Result};
pub use mdp::{span, FiniteMdp, GainBias, RandomizedDecisionRule};
