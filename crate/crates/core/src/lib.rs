//! Robot-conditioned trajectory response prediction.
//!
//! Learns from observed multi-agent trajectories how non-controlled agents
//! respond to a controlled robot, and predicts their responses to candidate
//! robot paths. See the crate README for the pipeline overview.

pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod evalkit;
pub mod neural;
pub mod responsernn;
pub mod rollout;
pub mod stgraph;
pub mod service;
pub mod synthgen;
pub mod training;
pub mod trajdata;

pub use error::{Error, Result};
