use serde::{Deserialize, Serialize};

use super::{Point, RawTrack, Sample};
use crate::error::{Error, Result};

/// Per-dimension mean and (population) standard deviation of positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean_x: f64,
    pub mean_y: f64,
    pub std_x: f64,
    pub std_y: f64,
}

impl StandardizationStats {
    pub const IDENTITY: Self = Self {
        mean_x: 0.0,
        mean_y: 0.0,
        std_x: 1.0,
        std_y: 1.0,
    };

    /// Fits stats over every sample of every track (controlled ones included).
    pub fn fit(tracks: &[RawTrack]) -> Result<Self> {
        Self::fit_points(tracks.iter().flat_map(|t| t.samples.iter().map(Sample::point)))
    }

    pub fn fit_points(points: impl IntoIterator<Item = Point>) -> Result<Self> {
        let points: Vec<Point> = points.into_iter().collect();
        if points.len() < 2 {
            return Err(Error::Degenerate(format!(
                "standardizer needs at least 2 positions, got {}",
                points.len()
            )));
        }
        let n = points.len() as f64;
        let mean_x = points.iter().map(|p| p[0]).sum::<f64>() / n;
        let mean_y = points.iter().map(|p| p[1]).sum::<f64>() / n;
        let var_x = points.iter().map(|p| (p[0] - mean_x).powi(2)).sum::<f64>() / n;
        let var_y = points.iter().map(|p| (p[1] - mean_y).powi(2)).sum::<f64>() / n;
        for (axis, var) in [("x", var_x), ("y", var_y)] {
            if !(var > 0.0) || !var.is_finite() {
                return Err(Error::Degenerate(format!("zero variance in {axis}")));
            }
        }
        Ok(Self {
            mean_x,
            mean_y,
            std_x: var_x.sqrt(),
            std_y: var_y.sqrt(),
        })
    }

    pub fn apply(&self, p: Point) -> Point {
        [(p[0] - self.mean_x) / self.std_x, (p[1] - self.mean_y) / self.std_y]
    }

    pub fn invert(&self, p: Point) -> Point {
        [p[0] * self.std_x + self.mean_x, p[1] * self.std_y + self.mean_y]
    }

    /// Scales a displacement (no offset) from standardized to world units.
    pub fn scale_to_world(&self, d: Point) -> Point {
        [d[0] * self.std_x, d[1] * self.std_y]
    }

    pub fn apply_tracks(&self, tracks: &[RawTrack]) -> Vec<RawTrack> {
        self.map_tracks(tracks, |p| self.apply(p))
    }

    pub fn invert_tracks(&self, tracks: &[RawTrack]) -> Vec<RawTrack> {
        self.map_tracks(tracks, |p| self.invert(p))
    }

    fn map_tracks(&self, tracks: &[RawTrack], f: impl Fn(Point) -> Point) -> Vec<RawTrack> {
        tracks
            .iter()
            .map(|t| RawTrack {
                samples: t
                    .samples
                    .iter()
                    .map(|s| {
                        let [x, y] = f(s.point());
                        Sample::new(s.frame, x, y)
                    })
                    .collect(),
                ..t.clone()
            })
            .collect()
    }
}

impl Default for StandardizationStats {
    fn default() -> Self {
        Self::IDENTITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn track(points: &[Point]) -> RawTrack {
        RawTrack {
            agent_id: 0,
            agent_type: 0,
            controlled: false,
            samples: points
                .iter()
                .enumerate()
                .map(|(i, p)| Sample::new(i as i64, p[0], p[1]))
                .collect(),
        }
    }

    #[test]
    fn two_point_case() {
        let stats = StandardizationStats::fit(&[track(&[[0.0, 1.0], [2.0, 3.0]])]).unwrap();
        assert_eq!((stats.mean_x, stats.std_x), (1.0, 1.0));
        assert_eq!(stats.apply([0.0, 1.0])[0], -1.0);
        assert_eq!(stats.apply([2.0, 3.0])[0], 1.0);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let err = StandardizationStats::fit(&[track(&[[3.0, 0.0], [3.0, 1.0], [3.0, 2.0]])]);
        assert!(matches!(err, Err(Error::Degenerate(m)) if m.contains('x')));
        assert!(StandardizationStats::fit(&[track(&[[0.0, 0.0]])]).is_err());
    }

    proptest! {
        #[test]
        fn standardized_moments_and_round_trip(
            pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..60)
        ) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let tr = track(&pts);
            let Ok(stats) = StandardizationStats::fit(std::slice::from_ref(&tr)) else {
                return Ok(());
            };
            prop_assume!(stats.std_x > 1e-3 && stats.std_y > 1e-3);
            let z = stats.apply_tracks(std::slice::from_ref(&tr));
            let refit = StandardizationStats::fit(&z).unwrap();
            prop_assert!(refit.mean_x.abs() < 1e-9 && refit.mean_y.abs() < 1e-9);
            prop_assert!((refit.std_x - 1.0).abs() < 1e-9 && (refit.std_y - 1.0).abs() < 1e-9);

            // applying a second time with refit stats is (numerically) the identity
            let twice = refit.apply_tracks(&z);
            for (a, b) in twice[0].samples.iter().zip(&z[0].samples) {
                prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            }

            let back = stats.invert_tracks(&z);
            for (a, b) in back[0].samples.iter().zip(&tr.samples) {
                prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            }
        }
    }
}
