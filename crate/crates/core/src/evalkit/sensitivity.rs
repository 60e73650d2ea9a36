//! Does a model's prediction respond to the robot plan, and in the right
//! direction? Each probed window is rolled out under four candidate plans:
//! a direct approach toward the nearest agent, a robot standing still, and
//! two plans that keep the robot far from every agent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::RolloutResult;
use crate::trajdata::{Point, SequenceWindow, StandardizationStats};

/// Far-field plans keep at least this many meters from every agent.
pub const FAR_FIELD_CLEARANCE: f64 = 12.0;
/// Agent-timesteps closer than this to the approaching robot are checked
/// for the direction of the response.
pub const CLOSE_RADIUS: f64 = 2.0;
/// Slowest approach, m/s.
pub const MIN_APPROACH_SPEED: f64 = 1.0;

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

/// Candidate plans in world meters, one position per horizon step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCandidates {
    pub approach: Vec<Point>,
    pub stationary: Vec<Point>,
    pub far_a: Vec<Point>,
    pub far_b: Vec<Point>,
}

impl ProbeCandidates {
    /// Builds the plans from the robot's last observed position and the
    /// agents' last observed positions (world meters).
    pub fn new(robot: Point, robot_speed: f64, agents: &[Point], t_pred: usize, dt: f64) -> Result<Self> {
        let Some(&nearest) = agents.iter().min_by(|a, b| norm(sub(**a, robot)).total_cmp(&norm(sub(**b, robot)))) else {
            return Err(Error::Contract("probe needs at least one agent".into()));
        };
        let step = robot_speed.max(MIN_APPROACH_SPEED) * dt;
        let to = sub(nearest, robot);
        let d = norm(to);
        let dir = if d > 1e-9 { [to[0] / d, to[1] / d] } else { [1.0, 0.0] };
        let approach = (1..=t_pred).map(|s| [robot[0] + dir[0] * step * s as f64, robot[1] + dir[1] * step * s as f64]).collect();

        let n = agents.len() as f64;
        let centre = [agents.iter().map(|p| p[0]).sum::<f64>() / n, agents.iter().map(|p| p[1]).sum::<f64>() / n];
        let spread = agents.iter().map(|p| norm(sub(*p, centre))).fold(0.0, f64::max);
        let out = sub(robot, centre);
        let out_len = norm(out);
        let away = if out_len > 1e-9 { [out[0] / out_len, out[1] / out_len] } else { [1.0, 0.0] };
        let base = spread + FAR_FIELD_CLEARANCE;
        let far_at = |r: f64| [centre[0] + away[0] * r, centre[1] + away[1] * r];
        let far_a = vec![far_at(base); t_pred];
        let far_b = (1..=t_pred).map(|s| far_at(base + MIN_APPROACH_SPEED * dt * s as f64)).collect();
        Ok(Self { approach, stationary: vec![robot; t_pred], far_a, far_b })
    }

    /// Derives the plans for `window`, or `None` if no scored agent is
    /// present at the last observed step.
    pub fn for_window(window: &SequenceWindow, stats: &StandardizationStats) -> Result<Option<Self>> {
        let t = window.t_obs - 1;
        let agents: Vec<Point> = window
            .agents
            .iter()
            .filter(|a| !a.loss_excluded)
            .filter_map(|a| a.positions[t].map(|p| stats.invert(p)))
            .collect();
        if agents.is_empty() {
            return Ok(None);
        }
        let past = window.robot_past();
        let robot = stats.invert(past[t]);
        let speed = if t > 0 { norm(sub(robot, stats.invert(past[t - 1]))) / window.dt } else { 0.0 };
        Self::new(robot, speed, &agents, window.t_pred, window.dt).map(Some)
    }

    pub fn all(&self) -> [&Vec<Point>; 4] {
        [&self.approach, &self.stationary, &self.far_a, &self.far_b]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub windows: usize,
    /// Windows where approach-vs-stationary divergence exceeds the far-field pair's.
    pub divergence_wins: usize,
    /// Mean divergences in meters.
    pub approach_divergence: f64,
    pub far_divergence: f64,
    pub close_steps: usize,
    /// Close agent-timesteps whose response points away from the robot.
    pub away_steps: usize,
}

impl SensitivityReport {
    pub fn divergence_fraction(&self) -> Option<f64> {
        (self.windows > 0).then(|| self.divergence_wins as f64 / self.windows as f64)
    }

    pub fn away_fraction(&self) -> Option<f64> {
        (self.close_steps > 0).then(|| self.away_steps as f64 / self.close_steps as f64)
    }
}

/// Windows in which the recorded robot passes within `radius` meters of a
/// present agent during the horizon.
pub fn interaction_windows<'a>(windows: &'a [SequenceWindow], stats: &StandardizationStats, radius: f64) -> Vec<&'a SequenceWindow> {
    windows
        .iter()
        .filter(|w| {
            (w.t_obs..w.len()).any(|t| {
                let r = stats.invert(w.robot().positions[t]);
                w.agents.iter().any(|a| a.positions[t].is_some_and(|p| norm(sub(stats.invert(p), r)) < radius))
            })
        })
        .collect()
}

/// Probes every window with `simulate`, which maps a window and candidate
/// plans (standardized) to one rollout per plan.
pub fn response_sensitivity<F>(windows: &[&SequenceWindow], stats: &StandardizationStats, mut simulate: F) -> Result<SensitivityReport>
where
    F: FnMut(&SequenceWindow, &[Vec<Point>]) -> Result<Vec<RolloutResult>>,
{
    let mut report = SensitivityReport::default();
    let (mut near_sum, mut far_sum) = (0.0, 0.0);
    for w in windows {
        let Some(c) = ProbeCandidates::for_window(w, stats)? else { continue };
        let plans: Vec<Vec<Point>> = c.all().iter().map(|p| p.iter().map(|&q| stats.apply(q)).collect()).collect();
        let out = simulate(w, &plans)?;
        if out.len() != 4 {
            return Err(Error::Contract(format!("{} rollouts for 4 plans", out.len())));
        }
        let world: Vec<RolloutResult> = out.iter().map(|r| r.to_world(stats)).collect();
        let (near, still) = (&world[0], &world[1]);
        let d_near = near.mean_divergence(still);
        let d_far = world[2].mean_divergence(&world[3]);
        report.windows += 1;
        near_sum += d_near;
        far_sum += d_far;
        if d_near > d_far {
            report.divergence_wins += 1;
        }
        for a in &near.agents {
            let Some(b) = still.agent(a.agent_id) else { continue };
            for (s, (p, q)) in a.steps.iter().zip(&b.steps).enumerate() {
                let robot = c.approach[s];
                let away = sub(q.mean(), robot);
                if norm(away) >= CLOSE_RADIUS {
                    continue;
                }
                report.close_steps += 1;
                let diff = sub(p.mean(), q.mean());
                if diff[0] * away[0] + diff[1] * away[1] > 0.0 {
                    report.away_steps += 1;
                }
            }
        }
    }
    if report.windows > 0 {
        report.approach_divergence = near_sum / report.windows as f64;
        report.far_divergence = far_sum / report.windows as f64;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::GaussianParams;
    use crate::responsernn::tests::make_window;
    use crate::rollout::GaussianTrack;

    fn window() -> SequenceWindow {
        let len = 8;
        let a = (0..len).map(|_| Some([0.0, 1.0])).collect();
        let b = (0..len).map(|_| Some([1.0, -1.0])).collect();
        let robot: Vec<Point> = (0..len).map(|t| [-2.0 + 0.1 * t as f64, 0.0]).collect();
        make_window(&[a, b], &robot, 4)
    }

    /// Holds each agent in place, shoved away from the plan by a
    /// distance-decaying amount when `push` is set.
    fn oracle(push: f64) -> impl FnMut(&SequenceWindow, &[Vec<Point>]) -> Result<Vec<RolloutResult>> {
        move |w, plans| {
            Ok(plans
                .iter()
                .map(|plan| {
                    let agents = w
                        .agents
                        .iter()
                        .map(|a| {
                            let here = a.positions[w.t_obs - 1].unwrap();
                            let steps = plan
                                .iter()
                                .map(|r| {
                                    let d = sub(here, *r);
                                    let m = push * (-norm(d)).exp() / norm(d);
                                    GaussianParams { mu_x: here[0] + m * d[0], mu_y: here[1] + m * d[1], sigma_x: 0.1, sigma_y: 0.1, rho: 0.0 }
                                })
                                .collect();
                            GaussianTrack { agent_id: a.agent_id, agent_type: a.agent_type, steps }
                        })
                        .collect();
                    RolloutResult { window_id: w.id.clone(), t_obs: w.t_obs, t_pred: w.t_pred, agents, robot_path: plan.clone() }
                })
                .collect())
        }
    }

    #[test]
    fn candidates_have_the_stated_geometry() {
        let agents = [[0.0, 1.0], [1.0, -1.0], [4.0, 0.0]];
        let c = ProbeCandidates::new([-3.0, 0.0], 0.5, &agents, 6, 0.1).unwrap();
        assert_eq!(c.stationary, vec![[-3.0, 0.0]; 6]);
        // toward (0, 1) at the minimum speed
        let last = c.approach[5];
        let expected = [-3.0 + 0.6 * 3.0 / 10f64.sqrt(), 0.6 / 10f64.sqrt()];
        assert!(norm(sub(last, expected)) < 1e-12);
        for p in c.far_a.iter().chain(&c.far_b) {
            assert!(agents.iter().all(|a| norm(sub(*a, *p)) > 10.0));
        }
        assert!(ProbeCandidates::new([0.0, 0.0], 1.0, &[], 3, 0.1).is_err());
    }

    #[test]
    fn repulsive_oracle_passes_and_blind_model_fails() {
        let w = window();
        let stats = StandardizationStats::IDENTITY;
        let r = response_sensitivity(&[&w], &stats, oracle(1.0)).unwrap();
        assert_eq!(r.windows, 1);
        assert_eq!(r.divergence_fraction(), Some(1.0));
        assert!(r.close_steps > 0);
        assert_eq!(r.away_fraction(), Some(1.0));
        assert!(r.approach_divergence > r.far_divergence);

        let blind = response_sensitivity(&[&w], &stats, oracle(0.0)).unwrap();
        assert_eq!(blind.divergence_fraction(), Some(0.0));
        assert_eq!(blind.away_fraction(), Some(0.0));

        let attracted = response_sensitivity(&[&w], &stats, oracle(-1.0)).unwrap();
        assert_eq!(attracted.away_fraction(), Some(0.0));
    }

    #[test]
    fn interaction_windows_need_a_close_pass() {
        let w = window();
        let stats = StandardizationStats::IDENTITY;
        let set = vec![w.clone()];
        assert_eq!(interaction_windows(&set, &stats, 1.0).len(), 0);
        assert_eq!(interaction_windows(&set, &stats, 2.0).len(), 1);
    }
}
