//! Prediction containers shared by the model, the baselines, evaluation and
//! the service.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::neural::GaussianParams;
use crate::trajdata::{Point, SequenceWindow, StandardizationStats};

/// Anything that turns an observed window into horizon predictions.
pub trait Predictor: Sync {
    fn name(&self) -> String;
    fn predict(&self, window: &SequenceWindow) -> Result<RolloutResult>;
}

/// Position distribution of one agent at consecutive horizon steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTrack {
    pub agent_id: u32,
    pub agent_type: usize,
    pub steps: Vec<GaussianParams>,
}

impl GaussianTrack {
    pub fn means(&self) -> Vec<Point> {
        self.steps.iter().map(GaussianParams::mean).collect()
    }
}

/// Predictions for every non-controlled agent of a window over its horizon,
/// in the coordinates of the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub window_id: String,
    pub t_obs: usize,
    pub t_pred: usize,
    pub agents: Vec<GaussianTrack>,
    /// Robot positions over the horizon that conditioned the prediction.
    pub robot_path: Vec<Point>,
}

impl RolloutResult {
    pub fn agent(&self, agent_id: u32) -> Option<&GaussianTrack> {
        self.agents.iter().find(|a| a.agent_id == agent_id)
    }

    /// De-standardizes every distribution and the robot path.
    pub fn to_world(&self, stats: &StandardizationStats) -> RolloutResult {
        let scale = [stats.std_x, stats.std_y];
        let offset = [stats.mean_x, stats.mean_y];
        RolloutResult {
            window_id: self.window_id.clone(),
            t_obs: self.t_obs,
            t_pred: self.t_pred,
            agents: self
                .agents
                .iter()
                .map(|a| GaussianTrack {
                    agent_id: a.agent_id,
                    agent_type: a.agent_type,
                    steps: a.steps.iter().map(|g| g.affine(scale, offset)).collect(),
                })
                .collect(),
            robot_path: self.robot_path.iter().map(|&p| stats.invert(p)).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rollouts serialize")
    }

    /// Mean Euclidean distance between corresponding agent means, averaged over
    /// agents and steps present in both rollouts.
    pub fn mean_divergence(&self, other: &RolloutResult) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for a in &self.agents {
            if let Some(b) = other.agent(a.agent_id) {
                for (p, q) in a.steps.iter().zip(&b.steps) {
                    total += (p.mu_x - q.mu_x).hypot(p.mu_y - q.mu_y);
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }
}
