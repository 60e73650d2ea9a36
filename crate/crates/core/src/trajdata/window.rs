use serde::{Deserialize, Serialize};

use super::{Point, RawTrack};
use crate::error::{Error, Result};

/// Agents observed for fewer than this fraction of the observation steps are
/// kept as inputs but excluded from the loss.
pub const MIN_PRESENCE_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub t_obs: usize,
    pub t_pred: usize,
    /// Frames between consecutive window starts; defaults to `t_pred`.
    pub stride: usize,
}

impl WindowConfig {
    pub fn new(t_obs: usize, t_pred: usize) -> Self {
        Self {
            t_obs,
            t_pred,
            stride: t_pred,
        }
    }

    pub fn with_stride(self, stride: usize) -> Self {
        Self { stride, ..self }
    }

    pub fn len(&self) -> usize {
        self.t_obs + self.t_pred
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_obs == 0 {
            return Err(Error::config("t_obs", "must be at least 1"));
        }
        if self.t_pred == 0 {
            return Err(Error::config("t_pred", "must be at least 1"));
        }
        if self.stride == 0 {
            return Err(Error::config("stride", "must be at least 1"));
        }
        Ok(())
    }
}

/// A non-controlled agent over a window; `None` marks absent timesteps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSeries {
    pub agent_id: u32,
    pub agent_type: usize,
    pub positions: Vec<Option<Point>>,
    #[serde(default)]
    pub loss_excluded: bool,
}

impl AgentSeries {
    pub fn present(&self, t: usize) -> bool {
        matches!(self.positions.get(t), Some(Some(_)))
    }
}

/// A controlled agent; present at every timestep of the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSeries {
    pub agent_id: u32,
    pub agent_type: usize,
    pub positions: Vec<Point>,
}

/// An (observe, predict) training sequence in standardized coordinates.
///
/// Timesteps `0..t_obs` are observed, `t_obs..t_obs + t_pred` are the
/// prediction horizon. Robot positions cover both ranges; agent positions in
/// the horizon are the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceWindow {
    pub id: String,
    pub recording_id: String,
    pub start_frame: i64,
    pub t_obs: usize,
    pub t_pred: usize,
    pub dt: f64,
    pub agents: Vec<AgentSeries>,
    pub robots: Vec<RobotSeries>,
}

impl SequenceWindow {
    pub fn len(&self) -> usize {
        self.t_obs + self.t_pred
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The single controlled agent; windows emitted by [`window`] always have one.
    pub fn robot(&self) -> &RobotSeries {
        &self.robots[0]
    }

    pub fn robot_past(&self) -> &[Point] {
        &self.robot().positions[..self.t_obs]
    }

    pub fn robot_future(&self) -> &[Point] {
        &self.robot().positions[self.t_obs..]
    }

    pub fn ground_truth(&self, agent: usize) -> &[Option<Point>] {
        &self.agents[agent].positions[self.t_obs..]
    }

    /// True if some agent contributes at least one loss term.
    pub fn has_loss_terms(&self) -> bool {
        self.agents.iter().any(|a| {
            !a.loss_excluded && a.present(self.t_obs - 1) && (self.t_obs..self.len()).any(|t| a.present(t))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.t_obs == 0 || self.t_pred == 0 {
            return Err(Error::Contract(format!("window {}: empty observation or horizon", self.id)));
        }
        for a in &self.agents {
            if a.positions.len() != n {
                return Err(Error::Contract(format!(
                    "window {}: agent {} has {} positions, expected {n}",
                    self.id,
                    a.agent_id,
                    a.positions.len()
                )));
            }
            if a.positions.iter().flatten().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                return Err(Error::Contract(format!("window {}: non-finite position", self.id)));
            }
        }
        for r in &self.robots {
            if r.positions.len() != n {
                return Err(Error::Contract(format!(
                    "window {}: robot {} has {} positions, expected {n}",
                    self.id,
                    r.agent_id,
                    r.positions.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct WindowingOutcome {
    pub windows: Vec<SequenceWindow>,
    /// Candidate windows dropped because the span lacked exactly one fully
    /// present controlled agent.
    pub skipped: usize,
}

/// Cuts `[start_frame, end_frame)` of a recording's tracks into windows of
/// `t_obs + t_pred` consecutive frames, every `stride` frames.
pub fn window(
    recording_id: &str,
    tracks: &[RawTrack],
    start_frame: i64,
    end_frame: i64,
    cfg: &WindowConfig,
    dt: f64,
) -> Result<WindowingOutcome> {
    cfg.validate()?;
    let len = cfg.len() as i64;
    let mut outcome = WindowingOutcome::default();
    let mut start = start_frame;
    while start + len <= end_frame {
        match build_window(recording_id, tracks, start, cfg, dt) {
            Some(w) => outcome.windows.push(w),
            None => outcome.skipped += 1,
        }
        start += cfg.stride as i64;
    }
    Ok(outcome)
}

fn build_window(
    recording_id: &str,
    tracks: &[RawTrack],
    start: i64,
    cfg: &WindowConfig,
    dt: f64,
) -> Option<SequenceWindow> {
    let n = cfg.len();
    let frames = || (0..n as i64).map(|i| start + i);

    let robots: Vec<RobotSeries> = tracks
        .iter()
        .filter(|t| t.controlled)
        .filter_map(|t| {
            let positions: Option<Vec<Point>> = frames().map(|f| t.at(f)).collect();
            positions.map(|positions| RobotSeries {
                agent_id: t.agent_id,
                agent_type: t.agent_type,
                positions,
            })
        })
        .collect();
    let any_partial_robot = tracks
        .iter()
        .filter(|t| t.controlled)
        .any(|t| frames().any(|f| t.at(f).is_some()) && frames().any(|f| t.at(f).is_none()));
    if robots.len() != 1 || any_partial_robot {
        return None;
    }

    let min_present = MIN_PRESENCE_FRACTION * cfg.t_obs as f64;
    let agents = tracks
        .iter()
        .filter(|t| !t.controlled)
        .filter_map(|t| {
            let positions: Vec<Option<Point>> = frames().map(|f| t.at(f)).collect();
            let observed = positions[..cfg.t_obs].iter().filter(|p| p.is_some()).count();
            (observed > 0).then(|| AgentSeries {
                agent_id: t.agent_id,
                agent_type: t.agent_type,
                loss_excluded: (observed as f64) < min_present,
                positions,
            })
        })
        .collect();

    Some(SequenceWindow {
        id: format!("{recording_id}@{start}"),
        recording_id: recording_id.to_string(),
        start_frame: start,
        t_obs: cfg.t_obs,
        t_pred: cfg.t_pred,
        dt,
        agents,
        robots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::Sample;

    fn track(id: u32, controlled: bool, frames: impl IntoIterator<Item = i64>) -> RawTrack {
        RawTrack {
            agent_id: id,
            agent_type: usize::from(controlled),
            controlled,
            samples: frames
                .into_iter()
                .map(|f| Sample::new(f, f as f64 * 0.1, id as f64))
                .collect(),
        }
    }

    #[test]
    fn forty_steps_stride_twenty() {
        let tracks = vec![track(0, true, 0..40), track(1, false, 0..40)];
        let cfg = WindowConfig::new(12, 8).with_stride(20);
        let out = window("r", &tracks, 0, 40, &cfg, 1.0 / 15.0).unwrap();
        assert_eq!(out.windows.len(), 2);
        assert_eq!(out.skipped, 0);
        let w = &out.windows[1];
        assert_eq!(w.start_frame, 20);
        assert_eq!(w.robot_past().len(), 12);
        assert_eq!(w.robot_future().len(), 8);
        assert_eq!(w.agents[0].positions[0], Some([2.0, 1.0]));
    }

    #[test]
    fn default_stride_is_horizon() {
        let cfg = WindowConfig::new(12, 8);
        assert_eq!(cfg.stride, 8);
    }

    #[test]
    fn sparse_agent_is_loss_excluded() {
        let tracks = vec![
            track(0, true, 0..20),
            track(1, false, 0..20),
            track(2, false, (7..20).collect::<Vec<_>>()), // 5 of 12 observed
            track(3, false, (6..20).collect::<Vec<_>>()), // 6 of 12 observed
        ];
        let out = window("r", &tracks, 0, 20, &WindowConfig::new(12, 8), 1.0 / 15.0).unwrap();
        let w = &out.windows[0];
        assert!(!w.agents[0].loss_excluded);
        assert!(w.agents[1].loss_excluded);
        assert!(!w.agents[2].loss_excluded);
        assert_eq!(w.agents[1].positions[6], None);
        assert!(w.agents[1].present(7));
    }

    #[test]
    fn no_robot_means_no_windows() {
        let tracks = vec![track(1, false, 0..40)];
        let cfg = WindowConfig::new(12, 8).with_stride(4);
        let out = window("r", &tracks, 0, 40, &cfg, 1.0 / 15.0).unwrap();
        assert!(out.windows.is_empty());
        assert_eq!(out.skipped, 6);
    }

    #[test]
    fn robot_must_cover_window() {
        let tracks = vec![track(0, true, 0..15), track(1, false, 0..40)];
        let out = window("r", &tracks, 0, 40, &WindowConfig::new(12, 8).with_stride(20), 0.1).unwrap();
        assert!(out.windows.is_empty());
        assert_eq!(out.skipped, 2);
    }

    #[test]
    fn future_only_agents_are_dropped() {
        let tracks = vec![track(0, true, 0..20), track(5, false, 14..20)];
        let out = window("r", &tracks, 0, 20, &WindowConfig::new(12, 8), 0.1).unwrap();
        assert!(out.windows[0].agents.is_empty());
        assert!(!out.windows[0].has_loss_terms());
    }

    #[test]
    fn never_fabricates_positions() {
        let mut gappy = track(1, false, (0..40).filter(|f| f % 3 != 0).collect::<Vec<_>>());
        gappy.samples[4].x = 7.5;
        let tracks = vec![track(0, true, 0..40), gappy.clone()];
        let out = window("r", &tracks, 0, 40, &WindowConfig::new(6, 4).with_stride(3), 0.1).unwrap();
        for w in &out.windows {
            for (i, p) in w.agents[0].positions.iter().enumerate() {
                let f = w.start_frame + i as i64;
                assert_eq!(*p, gappy.at(f));
            }
        }
    }
}
