use serde::{Deserialize, Serialize};

use super::gaussian::GaussianParams;
use crate::error::{Error, Result};
use crate::trajdata::Point;

/// What the Gaussian head predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Next position, unweighted.
    #[default]
    Position,
    /// Next per-step displacement, weighted by how fast the agent moves.
    Velocity,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Position => "pos",
            LossMode::Velocity => "vel",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pos" | "position" => Ok(LossMode::Position),
            "vel" | "velocity" => Ok(LossMode::Velocity),
            other => Err(Error::config("loss", format!("unknown loss mode `{other}` (expected pos or vel)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    /// Weight of terms whose ground-truth speed is at or below the threshold.
    pub alpha_stationary: f64,
    /// Meters per second.
    pub speed_threshold: f64,
    /// Seconds per timestep.
    pub dt: f64,
    /// Meters per standardized unit along x and y.
    pub world_scale: Point,
}

impl LossConfig {
    pub fn new(mode: LossMode, dt: f64, world_scale: Point) -> Self {
        Self {
            mode,
            alpha_stationary: 0.2,
            speed_threshold: 0.1,
            dt,
            world_scale,
        }
    }

    /// World speed in m/s of a standardized per-step displacement.
    pub fn world_speed(&self, displacement: Point) -> f64 {
        let dx = displacement[0] * self.world_scale[0];
        let dy = displacement[1] * self.world_scale[1];
        dx.hypot(dy) / self.dt
    }

    /// Weight of the term whose target is `target` (a displacement in velocity mode).
    pub fn alpha(&self, target: Point) -> f64 {
        match self.mode {
            LossMode::Position => 1.0,
            LossMode::Velocity => {
                if self.world_speed(target) > self.speed_threshold {
                    1.0
                } else {
                    self.alpha_stationary
                }
            }
        }
    }
}

impl LossConfig {
    /// Weight of a rollout term predicting `next`. In velocity mode the speed
    /// test uses the ground-truth displacement when the current ground truth
    /// is known and the (possibly fed-back) target otherwise.
    pub fn step_weight(&self, current: Option<Point>, next: Point, target: Point) -> f64 {
        match (self.mode, current) {
            (LossMode::Velocity, Some(c)) => self.alpha([next[0] - c[0], next[1] - c[1]]),
            _ => self.alpha(target),
        }
    }
}

/// Sum of weighted NLL terms.
///
/// `predictions[i][t]` is matched with `targets[i][t]`; absent targets and
/// agents flagged in `excluded` contribute nothing.
pub fn sequence_loss(
    predictions: &[Vec<GaussianParams>],
    targets: &[Vec<Option<Point>>],
    excluded: &[bool],
    config: &LossConfig,
) -> Result<f64> {
    if predictions.len() != targets.len() || excluded.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} prediction tracks, {} target tracks, {} masks",
            predictions.len(),
            targets.len(),
            excluded.len()
        )));
    }
    let mut total = 0.0;
    let mut terms = 0usize;
    for ((pred, target), &skip) in predictions.iter().zip(targets).zip(excluded) {
        if pred.len() != target.len() {
            return Err(Error::Contract(format!("{} predictions for {} targets", pred.len(), target.len())));
        }
        if skip {
            continue;
        }
        for (p, t) in pred.iter().zip(target) {
            if let Some(t) = t {
                total += config.alpha(*t) * p.nll(*t);
                terms += 1;
            }
        }
    }
    if terms == 0 {
        return Err(Error::Data("window has no loss terms".into()));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: LossMode) -> LossConfig {
        LossConfig::new(mode, 1.0 / 15.0, [1.0, 1.0])
    }

    #[test]
    fn slow_agent_weighted_by_alpha() {
        let c = cfg(LossMode::Velocity);
        let step = 0.05 / 15.0;
        let p = GaussianParams::from_raw([0.0, 0.0, -3.0, -3.0, 0.0]);
        let t_pred = 8;
        let l = p.nll([step, 0.0]);
        let total = sequence_loss(&[vec![p; t_pred]], &[vec![Some([step, 0.0]); t_pred]], &[false], &c).unwrap();
        assert!((total - 0.2 * l * t_pred as f64).abs() < 1e-12);

        let fast = 0.5 / 15.0;
        assert_eq!(c.alpha([fast, 0.0]), 1.0);
        assert_eq!(cfg(LossMode::Position).alpha([step, 0.0]), 1.0);
    }

    #[test]
    fn threshold_uses_world_units() {
        let mut c = cfg(LossMode::Velocity);
        c.world_scale = [10.0, 10.0];
        // 0.05 m/s standardized by a 10 m spread becomes 0.5 m/s after rescaling
        assert_eq!(c.alpha([0.05 / 15.0, 0.0]), 1.0);
    }

    #[test]
    fn excluded_agent_contributes_nothing() {
        let c = cfg(LossMode::Position);
        let good = GaussianParams::from_raw([0.0; 5]);
        let wild = GaussianParams::from_raw([1e3, -1e3, -5.0, -5.0, 0.9]);
        let a = sequence_loss(&[vec![good], vec![good]], &[vec![Some([0.0, 0.0])], vec![Some([1.0, 1.0])]], &[false, true], &c).unwrap();
        let b = sequence_loss(&[vec![good], vec![wild]], &[vec![Some([0.0, 0.0])], vec![Some([1.0, 1.0])]], &[false, true], &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mixed_scene_matches_term_sum() {
        let c = cfg(LossMode::Velocity);
        let preds = vec![
            vec![GaussianParams::from_raw([0.1, 0.0, -1.0, -2.0, 0.3]), GaussianParams::from_raw([0.0, 0.2, -2.0, -1.0, -0.2])],
            vec![GaussianParams::from_raw([0.0, 0.0, 0.0, 0.0, 0.0]), GaussianParams::from_raw([0.3, 0.3, 0.5, 0.1, 0.7])],
        ];
        let targets = vec![vec![Some([0.2, 0.0]), None], vec![Some([0.001, 0.0]), Some([0.1, -0.1])]];
        let total = sequence_loss(&preds, &targets, &[false, false], &c).unwrap();
        let expected = 1.0 * preds[0][0].nll([0.2, 0.0]) + 0.2 * preds[1][0].nll([0.001, 0.0]) + 1.0 * preds[1][1].nll([0.1, -0.1]);
        assert!((total - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let c = cfg(LossMode::Position);
        let p = GaussianParams::from_raw([0.0; 5]);
        assert!(sequence_loss(&[vec![p]], &[vec![None]], &[false], &c).is_err());
        assert!(sequence_loss(&[vec![p]], &[vec![Some([0.0, 0.0])]], &[true], &c).is_err());
    }

    #[test]
    fn mode_parses() {
        assert_eq!("vel".parse::<LossMode>().unwrap(), LossMode::Velocity);
        assert_eq!("pos".parse::<LossMode>().unwrap(), LossMode::Position);
        assert!("speed".parse::<LossMode>().is_err());
    }
}
