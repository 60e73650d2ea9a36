//! Factorized spatio-temporal RNN that predicts how agents respond to a
//! controlled robot.
//!
//! One spatial edge RNN per ordered pair of agent types, and per agent type a
//! temporal edge RNN and a node RNN. Node RNNs attend over the states of
//! their outgoing spatial edges and emit a bivariate Gaussian over the next
//! position (or displacement, in velocity mode).

mod forward;
mod gradcheck;
mod layout;

pub use forward::{BatchItem, BatchPass, Feedback, ForwardOptions, WindowOutput};
pub use gradcheck::{gradcheck_window, gradient_check};
pub use layout::{EdgeFactor, Layout, NodeFactor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::neural::{AttentionScale, LossConfig, LossMode, ParameterSet};
use crate::rollout::{Predictor, RolloutResult};
use crate::training::Trainable;
use crate::trajdata::{Point, SequenceWindow, StandardizationStats, TypeLabels};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of agent types `K`.
    pub num_types: usize,
    pub edge_hidden: usize,
    pub node_hidden: usize,
    pub embedding: usize,
    pub attention_dim: usize,
    pub t_obs: usize,
    pub t_pred: usize,
    pub loss_mode: LossMode,
    pub attention_scale: AttentionScale,
    /// Standardized displacement per unit of temporal-edge feature and, in
    /// velocity mode, of the head's displacement output. 1 feeds raw
    /// displacements.
    #[serde(default = "unit_scale")]
    pub motion_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

/// Root-mean-square per-step displacement of present agents, a natural
/// `motion_scale` for a training set. `None` if nothing moves.
pub fn typical_step(windows: &[SequenceWindow]) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for w in windows {
        for a in &w.agents {
            for pair in a.positions.windows(2) {
                if let [Some(p), Some(q)] = pair {
                    sum += (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
                    n += 1;
                }
            }
        }
    }
    let rms = (sum / n.max(1) as f64).sqrt();
    (rms > 0.0 && rms.is_finite()).then_some(rms)
}

impl ModelConfig {
    /// Published layer sizes.
    pub fn new(num_types: usize, t_obs: usize, t_pred: usize, loss_mode: LossMode) -> Self {
        Self {
            num_types,
            edge_hidden: 128,
            node_hidden: 64,
            embedding: 64,
            attention_dim: 64,
            t_obs,
            t_pred,
            loss_mode,
            attention_scale: AttentionScale::NeighborCount,
            motion_scale: 1.0,
        }
    }

    pub fn with_motion_scale(self, motion_scale: f64) -> Self {
        Self { motion_scale, ..self }
    }

    /// Same structure with every layer width set to `width`, for fast tests.
    pub fn with_width(self, width: usize) -> Self {
        Self {
            edge_hidden: width,
            node_hidden: width,
            embedding: width,
            attention_dim: width,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("num_types", self.num_types),
            ("edge_hidden", self.edge_hidden),
            ("node_hidden", self.node_hidden),
            ("embedding", self.embedding),
            ("attention_dim", self.attention_dim),
            ("t_obs", self.t_obs),
            ("t_pred", self.t_pred),
        ];
        for (field, v) in sizes {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.motion_scale.is_finite() && self.motion_scale > 0.0) {
            return Err(Error::config("motion_scale", "must be positive"));
        }
        Ok(())
    }
}

/// A model instance: configuration, standardization it was trained under,
/// and its weights.
#[derive(Debug, Clone)]
pub struct ResponseRnn {
    config: ModelConfig,
    stats: StandardizationStats,
    params: ParameterSet,
    layout: Layout,
}

impl ResponseRnn {
    pub fn new(config: ModelConfig, stats: StandardizationStats, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, layout) = Layout::initialize(&config, &mut rng);
        Ok(Self { config, stats, params, layout })
    }

    pub fn from_parts(config: ModelConfig, stats: StandardizationStats, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&config, &params)?;
        if !params.is_finite() {
            return Err(Error::Checkpoint("parameters contain non-finite values".into()));
        }
        Ok(Self { config, stats, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn stats(&self) -> &StandardizationStats {
        &self.stats
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub const CHECKPOINT_KIND: &'static str = "responsernn";

    pub fn to_checkpoint(&self, labels: Option<TypeLabels>, training: Option<serde_json::Value>) -> Checkpoint {
        Checkpoint {
            kind: Self::CHECKPOINT_KIND.into(),
            model: serde_json::to_value(self.config).expect("config serializes"),
            stats: self.stats,
            labels,
            training,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = ckpt.model_config(Self::CHECKPOINT_KIND)?;
        if let Some(labels) = &ckpt.labels {
            if labels.len() != config.num_types {
                return Err(Error::Checkpoint(format!(
                    "{} type labels for a model with {} types",
                    labels.len(),
                    config.num_types
                )));
            }
        }
        Self::from_parts(config, ckpt.stats, ckpt.params.clone())
    }

    pub fn loss_config(&self, dt: f64) -> LossConfig {
        LossConfig::new(self.config.loss_mode, dt, [self.stats.std_x, self.stats.std_y])
    }

    /// Teacher-forced loss of a window and its gradient.
    pub fn loss_and_gradient(&self, window: &SequenceWindow) -> Result<(BatchPass, ParameterSet)> {
        self.batch_loss_and_gradient(&[window])
    }

    /// Teacher-forced pass over several windows and the gradient of their
    /// summed loss.
    pub fn batch_loss_and_gradient(&self, windows: &[&SequenceWindow]) -> Result<(BatchPass, ParameterSet)> {
        let items: Vec<BatchItem> = windows.iter().map(|w| BatchItem::new(w)).collect();
        let pass = self.forward_batch(&items, Feedback::Teacher, true)?;
        if pass.terms() == 0 {
            let ids: Vec<&str> = windows.iter().map(|w| w.id.as_str()).collect();
            return Err(Error::Data(format!("no loss terms in {}", ids.join(", "))));
        }
        let mut grads = self.params.zeros_like();
        self.backward(&pass, 1.0, &mut grads)?;
        Ok((pass, grads))
    }

    /// Teacher-forced loss only.
    pub fn loss(&self, window: &SequenceWindow) -> Result<(f64, usize)> {
        let pass = self.forward_window(window, None, ForwardOptions::default())?;
        Ok((pass.loss(), pass.terms()))
    }

    /// Teacher-forced losses of several windows in one pass.
    pub fn batch_loss(&self, windows: &[&SequenceWindow]) -> Result<Vec<(f64, usize)>> {
        let items: Vec<BatchItem> = windows.iter().map(|w| BatchItem::new(w)).collect();
        let pass = self.forward_batch(&items, Feedback::Teacher, false)?;
        Ok(pass.windows.iter().map(|w| (w.loss, w.terms)).collect())
    }

    /// Free-running rollout over the horizon.
    pub fn rollout(&self, window: &SequenceWindow, robot_path: Option<&[Point]>, feedback: Feedback, seed: u64) -> Result<RolloutResult> {
        let opts = ForwardOptions {
            feedback,
            robot_path,
            seed,
            record: false,
        };
        let mut pass = self.forward_window(window, None, opts)?;
        Ok(pass.windows.remove(0).rollout)
    }

    /// Mean rollout under the window's own robot path.
    pub fn predict_mean(&self, window: &SequenceWindow) -> Result<RolloutResult> {
        self.rollout(window, None, Feedback::Mean, 0)
    }

    /// `samples` stochastic rollouts with seeds derived from `seed`.
    pub fn sample_rollouts(&self, window: &SequenceWindow, robot_path: Option<&[Point]>, samples: usize, seed: u64) -> Result<Vec<RolloutResult>> {
        (0..samples as u64)
            .map(|i| self.rollout(window, robot_path, Feedback::Sample, seed.wrapping_add(i)))
            .collect()
    }

    /// Mean rollouts of the same observed history under each candidate robot
    /// path (standardized coordinates, one position per horizon step).
    pub fn simulate_whatif(&self, window: &SequenceWindow, candidates: &[Vec<Point>]) -> Result<Vec<RolloutResult>> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let items: Vec<BatchItem> = candidates
            .iter()
            .map(|path| BatchItem { robot_path: Some(path), ..BatchItem::new(window) })
            .collect();
        let pass = self.forward_batch(&items, Feedback::Mean, false)?;
        Ok(pass.windows.into_iter().map(|w| w.rollout).collect())
    }
}

impl Trainable for ResponseRnn {
    fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn batch_gradient(&self, windows: &[&SequenceWindow]) -> Result<(Vec<(f64, usize)>, ParameterSet)> {
        let (pass, grads) = self.batch_loss_and_gradient(windows)?;
        Ok((pass.windows.iter().map(|w| (w.loss, w.terms)).collect(), grads))
    }

    fn batch_loss(&self, windows: &[&SequenceWindow]) -> Result<Vec<(f64, usize)>> {
        ResponseRnn::batch_loss(self, windows)
    }
}

impl Predictor for ResponseRnn {
    fn name(&self) -> String {
        match self.config.loss_mode {
            LossMode::Position => "RRNN-Pos".into(),
            LossMode::Velocity => "RRNN-Vel".into(),
        }
    }

    fn predict(&self, window: &SequenceWindow) -> Result<RolloutResult> {
        self.predict_mean(window)
    }
}

#[cfg(test)]
pub(crate) mod tests;
