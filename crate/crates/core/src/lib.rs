//! Offline reinforcement learning with expressive flow-matching policies and
//! flow-based distributional value learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`env`]: small deterministic MDPs, reference policies and offline datasets;
//! * [`nn`]: a minimal MLP substrate with reverse-mode gradients and Adam;
//! * [`flow`]: conditional flow matching and forward-Euler sampling;
//! * [`policy`]: the behaviour-cloned flow base policy;
//! * [`critic`]: the reward-to-go flow critic trained by flow-based TD, and
//!   the sample-averaged LogSumExp estimator of the optimal regularised Q;
//! * [`extraction`]: inference-time candidate reweighting and evaluation;
//! * [`oracle`]: exact dynamic programming on finite MDPs;
//! * [`qc`]: the scalar Q-chunking baseline;
//! * [`harness`]: configuration, training runs, sweeps and plots.

pub mod batch;
pub mod critic;
pub mod env;
pub mod error;
pub mod extraction;
pub mod flow;
pub mod harness;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod qc;
pub mod rng;

pub use error::{Error, Result};
