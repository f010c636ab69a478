//! Bayesian robust reinforcement learning.
//!
//! Posterior L1 uncertainty sets over tabular transition kernels, exact robust
//! dynamic programming, the uncertainty robust Bellman equation (URBE) that
//! bounds the posterior variance of robust Q-values, a tabular URBE agent, a
//! deep two-head DQN-URBE agent with its baselines, and the benchmark
//! environments used to compare them.

pub mod config;
pub mod deep;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod mdp;
pub mod neural;
pub mod posterior;
pub mod robust_dp;
pub mod robust_opt;
pub mod urbe_agent;

pub use error::{Error, Result};
