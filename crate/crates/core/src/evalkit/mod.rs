//! Displacement metrics, experiment orchestration and reports.
//!
//! Metrics are computed in world meters after de-standardization, over
//! loss-included agents only, and aggregated per agent-timestep (ADE) and per
//! agent (FDE) rather than per window.

mod experiment;
mod report;
mod sensitivity;

pub use experiment::{
    run_experiment, CellTraces, DatasetEntry, ExperimentManifest, ExperimentOutcome, HorizonEntry, ModelEntry, ModelHandle,
    ModelSource,
};
pub use report::{MetricReport, MetricRow, SkippedCell, REPORT_COLUMNS, REPORT_SCHEMA_VERSION};
pub use sensitivity::{
    interaction_windows, response_sensitivity, ProbeCandidates, SensitivityReport, CLOSE_RADIUS, FAR_FIELD_CLEARANCE,
    MIN_APPROACH_SPEED,
};

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::{Predictor, RolloutResult};
use crate::trajdata::{Point, SequenceWindow, StandardizationStats};

fn check_lengths(pred: &[Point], truth: &[Point]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!("{} predictions for {} ground-truth points", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Contract("displacement error of an empty trajectory".into()));
    }
    Ok(())
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Average displacement error.
pub fn ade(pred: &[Point], truth: &[Point]) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(&p, &t)| dist(p, t)).sum::<f64>() / pred.len() as f64)
}

/// Final displacement error.
pub fn fde(pred: &[Point], truth: &[Point]) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(dist(pred[pred.len() - 1], truth[truth.len() - 1]))
}

/// Running sums behind ADE/FDE; merging is associative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSums {
    pub displacement: f64,
    pub points: usize,
    pub final_displacement: f64,
    pub finals: usize,
    pub windows: usize,
}

impl MetricSums {
    pub fn merge(&mut self, other: &MetricSums) {
        self.displacement += other.displacement;
        self.points += other.points;
        self.final_displacement += other.final_displacement;
        self.finals += other.finals;
        self.windows += other.windows;
    }

    pub fn ade(&self) -> Option<f64> {
        (self.points > 0).then(|| self.displacement / self.points as f64)
    }

    pub fn fde(&self) -> Option<f64> {
        (self.finals > 0).then(|| self.final_displacement / self.finals as f64)
    }
}

/// Compares a rollout in window coordinates against the window's ground
/// truth, in world meters.
pub fn score_window(rollout: &RolloutResult, window: &SequenceWindow, stats: &StandardizationStats) -> MetricSums {
    let mut sums = MetricSums { windows: 1, ..Default::default() };
    for agent in &window.agents {
        if agent.loss_excluded {
            continue;
        }
        let Some(track) = rollout.agent(agent.agent_id) else { continue };
        for (s, g) in track.steps.iter().enumerate() {
            let Some(truth) = agent.positions[window.t_obs + s] else { continue };
            let d = dist(stats.invert(g.mean()), stats.invert(truth));
            sums.displacement += d;
            sums.points += 1;
            if s + 1 == window.t_pred {
                sums.final_displacement += d;
                sums.finals += 1;
            }
        }
    }
    sums
}

/// World-coordinate rollout of one window, for trace export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTrace {
    pub model: String,
    pub window_id: String,
    pub metrics: MetricSums,
    pub rollout: RolloutResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub sums: MetricSums,
    /// Mean wall time per window, when timing was requested.
    pub ms_per_seq: Option<f64>,
    pub traces: Vec<WindowTrace>,
}

/// Runs `predictor` over `windows` (standardized with `stats`). Windows are
/// scored independently and summed in input order, so the result does not
/// depend on the thread pool.
pub fn evaluate(
    predictor: &dyn Predictor,
    windows: &[SequenceWindow],
    stats: &StandardizationStats,
    timing: bool,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Evaluation> {
    let started = Instant::now();
    let score = |w: &SequenceWindow| -> Result<(MetricSums, RolloutResult)> {
        let r = predictor.predict(w)?;
        Ok((score_window(&r, w, stats), r))
    };
    let results: Vec<Result<(MetricSums, RolloutResult)>> = match pool {
        Some(pool) => pool.install(|| windows.par_iter().map(score).collect()),
        None => windows.iter().map(score).collect(),
    };
    let elapsed = started.elapsed().as_secs_f64();
    let mut sums = MetricSums::default();
    let mut traces = Vec::with_capacity(windows.len());
    let name = predictor.name();
    for r in results {
        let (m, rollout) = r?;
        sums.merge(&m);
        traces.push(WindowTrace {
            model: name.clone(),
            window_id: rollout.window_id.clone(),
            metrics: m,
            rollout: rollout.to_world(stats),
        });
    }
    let ms_per_seq = (timing && !windows.is_empty()).then(|| 1000.0 * elapsed / windows.len() as f64);
    Ok(Evaluation { sums, ms_per_seq, traces })
}
