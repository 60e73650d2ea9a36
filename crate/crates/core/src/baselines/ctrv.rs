use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::neural::GaussianParams;
use crate::rollout::{GaussianTrack, Predictor, RolloutResult};
use crate::trajdata::{Point, SequenceWindow, StandardizationStats};

/// Number of most recent displacements used for estimation.
pub const CTRV_HISTORY: usize = 8;

/// Displacements shorter than this carry no usable heading.
const MIN_STEP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtrvState {
    pub position: Point,
    /// Distance per timestep.
    pub speed: f64,
    /// Heading of the most recent moving step, radians.
    pub heading: f64,
    /// Radians per timestep.
    pub turn_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtrvEstimate {
    pub state: CtrvState,
    /// Only one history point was available; the prediction holds position.
    pub degenerate: bool,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI { w + 2.0 * PI } else { w }
}

fn weighted_mean(values: &[f64]) -> f64 {
    // linear recency weights 1..n, newest heaviest
    let (mut num, mut den) = (0.0, 0.0);
    for (i, v) in values.iter().enumerate() {
        let w = (i + 1) as f64;
        num += w * v;
        den += w;
    }
    if den > 0.0 { num / den } else { 0.0 }
}

/// Estimates speed and turn rate from (up to) the last eight displacements
/// of `history`, oldest first.
pub fn ctrv_fit(history: &[Point]) -> Result<CtrvEstimate> {
    let Some(&last) = history.last() else {
        return Err(Error::Contract("CTRV needs at least one history point".into()));
    };
    if history.len() == 1 {
        log::debug!("single-point history, holding position");
        return Ok(CtrvEstimate {
            state: CtrvState { position: last, speed: 0.0, heading: 0.0, turn_rate: 0.0 },
            degenerate: true,
        });
    }
    let start = history.len().saturating_sub(CTRV_HISTORY + 1);
    let recent = &history[start..];
    let steps: Vec<Point> = recent.windows(2).map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]]).collect();
    let speeds: Vec<f64> = steps.iter().map(|d| d[0].hypot(d[1])).collect();
    let headings: Vec<Option<f64>> = steps
        .iter()
        .zip(&speeds)
        .map(|(d, &s)| (s > MIN_STEP).then(|| d[1].atan2(d[0])))
        .collect();
    let turns: Vec<f64> = headings
        .windows(2)
        .filter_map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => Some(wrap_angle(b - a)),
            _ => None,
        })
        .collect();
    let heading = headings.iter().rev().find_map(|h| *h).unwrap_or(0.0);
    Ok(CtrvEstimate {
        state: CtrvState {
            position: last,
            speed: weighted_mean(&speeds),
            heading,
            turn_rate: weighted_mean(&turns),
        },
        degenerate: false,
    })
}

/// Rolls a state forward with constant speed and turn rate.
pub fn ctrv_rollout(state: &CtrvState, horizon: usize) -> Vec<Point> {
    let mut p = state.position;
    let mut heading = state.heading;
    (0..horizon)
        .map(|_| {
            heading += state.turn_rate;
            p = [p[0] + state.speed * heading.cos(), p[1] + state.speed * heading.sin()];
            p
        })
        .collect()
}

pub fn ctrv_predict(history: &[Point], horizon: usize) -> Result<Vec<Point>> {
    Ok(ctrv_rollout(&ctrv_fit(history)?.state, horizon))
}

/// CTRV over windows. Estimation runs in world coordinates, because the
/// per-axis standardization would distort headings and turn rates.
#[derive(Debug, Clone, Copy)]
pub struct Ctrv {
    pub stats: StandardizationStats,
}

impl Ctrv {
    pub fn new(stats: StandardizationStats) -> Self {
        Self { stats }
    }
}

impl Predictor for Ctrv {
    fn name(&self) -> String {
        "CTRV".into()
    }

    /// Predicts every agent present at the last observed step from its trailing
    /// run of consecutive observations. Distributions are point masses
    /// (zero sigma).
    fn predict(&self, window: &SequenceWindow) -> Result<RolloutResult> {
        let t_obs = window.t_obs;
        let mut agents = Vec::new();
        for agent in &window.agents {
            if !agent.present(t_obs - 1) {
                continue;
            }
            let mut history: Vec<Point> = agent.positions[..t_obs]
                .iter()
                .rev()
                .map_while(|p| p.map(|p| self.stats.invert(p)))
                .take(CTRV_HISTORY + 1)
                .collect();
            history.reverse();
            let steps = ctrv_predict(&history, window.t_pred)?
                .into_iter()
                .map(|p| {
                    let [x, y] = self.stats.apply(p);
                    GaussianParams { mu_x: x, mu_y: y, sigma_x: 0.0, sigma_y: 0.0, rho: 0.0 }
                })
                .collect();
            agents.push(GaussianTrack { agent_id: agent.agent_id, agent_type: agent.agent_type, steps });
        }
        Ok(RolloutResult {
            window_id: window.id.clone(),
            t_obs,
            t_pred: window.t_pred,
            agents,
            robot_path: window.robot_future().to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Point, b: Point, tol: f64) -> bool {
        (a[0] - b[0]).abs() < tol && (a[1] - b[1]).abs() < tol
    }

    #[test]
    fn straight_line_extrapolates() {
        let history: Vec<Point> = (0..10).map(|t| [t as f64, 2.0]).collect();
        let out = ctrv_predict(&history, 5).unwrap();
        for (t, p) in out.iter().enumerate() {
            assert!(close(*p, [9.0 + (t + 1) as f64, 2.0], 1e-12));
        }
    }

    #[test]
    fn circular_motion_stays_on_circle() {
        let (r, w, c) = (3.0, 0.1, [1.0, -2.0]);
        let at = |k: f64| [c[0] + r * (w * k).cos(), c[1] + r * (w * k).sin()];
        let history: Vec<Point> = (0..12).map(|k| at(k as f64)).collect();
        let out = ctrv_predict(&history, 20).unwrap();
        for (i, p) in out.iter().enumerate() {
            let exact = at((12 + i) as f64);
            assert!(close(*p, exact, 1e-6), "step {i}: {p:?} vs {exact:?}");
            assert!(((p[0] - c[0]).hypot(p[1] - c[1]) - r).abs() < 1e-6);
        }
    }

    #[test]
    fn stationary_and_single_point_hold() {
        let still = vec![[1.5, -0.5]; 6];
        assert!(ctrv_predict(&still, 4).unwrap().iter().all(|p| *p == [1.5, -0.5]));
        let single = ctrv_fit(&[[2.0, 3.0]]).unwrap();
        assert!(single.degenerate);
        assert_eq!(ctrv_rollout(&single.state, 3), vec![[2.0, 3.0]; 3]);
        assert!(ctrv_fit(&[]).is_err());
    }

    #[test]
    fn only_the_last_eight_steps_matter() {
        let mut history: Vec<Point> = (0..9).map(|t| [t as f64, 0.0]).collect();
        let tail = ctrv_predict(&history, 3).unwrap();
        history.insert(0, [-50.0, 40.0]);
        assert_eq!(ctrv_predict(&history, 3).unwrap(), tail);
    }

    #[test]
    fn speeds_are_recency_weighted() {
        // steps of length 1 then 2: weights 1 and 2
        let est = ctrv_fit(&[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]).unwrap();
        assert!((est.state.speed - 5.0 / 3.0).abs() < 1e-12);
        assert!(!est.degenerate);
    }

    #[test]
    fn turn_rate_unwraps_across_pi() {
        // heading goes from just below pi to just above -pi: a small left turn
        let a = PI - 0.05;
        let b = -PI + 0.05;
        let history = [[0.0, 0.0], [a.cos(), a.sin()], [a.cos() + b.cos(), a.sin() + b.sin()]];
        let est = ctrv_fit(&history).unwrap();
        assert!((est.state.turn_rate - 0.1).abs() < 1e-12);
        assert!((wrap_angle(PI) - PI).abs() < 1e-15 && (wrap_angle(-PI) - PI).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn equivariant_under_rigid_motion(
            steps in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..12),
            angle in -PI..PI,
            shift in (-10.0f64..10.0, -10.0f64..10.0),
        ) {
            let mut history = vec![[0.0, 0.0]];
            for (dx, dy) in steps {
                let p = *history.last().unwrap();
                history.push([p[0] + dx, p[1] + dy]);
            }
            let (s, c) = angle.sin_cos();
            let move_pt = |p: Point| [c * p[0] - s * p[1] + shift.0, s * p[0] + c * p[1] + shift.1];
            let moved: Vec<Point> = history.iter().map(|&p| move_pt(p)).collect();
            let a = ctrv_predict(&history, 6).unwrap();
            let b = ctrv_predict(&moved, 6).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!(close(move_pt(*p), *q, 1e-8));
            }
        }
    }
}
