use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{generate, AgentGroup, ForceParams, Region, RobotScript, ScenarioSpec};
use crate::error::{Error, Result};
use crate::trajdata::{Dataset, Point, StandardizationStats, WindowConfig, DEFAULT_FOLDS, DEFAULT_TARGET_RATE};

pub const SUITE_NAMES: [&str; 3] = ["straight", "crossing", "approach"];

/// Recording counts and lengths per suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub straight: (usize, f64),
    pub crossing: (usize, f64),
    pub approach: (usize, f64),
    /// Dynamics of the interacting suites.
    pub forces: ForceParams,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { straight: (8, 20.0), crossing: (12, 20.0), approach: (32, 60.0), forces: ForceParams::default() }
    }
}

impl SuiteConfig {
    /// A few short recordings per suite, for tests.
    pub fn small() -> Self {
        Self { straight: (2, 10.0), crossing: (2, 10.0), approach: (3, 30.0), ..Self::default() }
    }
}

/// The generated suites with the scenarios they came from.
#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub seed: u64,
    pub suites: Vec<(String, Dataset, Vec<ScenarioSpec>)>,
}

impl SynthBundle {
    pub fn get(&self, name: &str) -> Option<&Dataset> {
        self.suites.iter().find(|(n, ..)| n == name).map(|(_, d, _)| d)
    }

    /// Writes each suite to `dir/<suite>/`, with its scenario files.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (name, dataset, specs) in &self.suites {
            let sub = dir.join(name);
            dataset.save(&sub)?;
            for spec in specs {
                let path = sub.join(format!("{}.scenario.toml", spec.name));
                let text = toml::to_string(spec).map_err(|e| Error::Data(format!("cannot encode scenario: {e}")))?;
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn parked_robot(at: Point) -> RobotScript {
    RobotScript { label: "robot".into(), waypoints: vec![at], speed: 0.0, delay: 0.0 }
}

fn straight_spec(name: String, duration: f64, _forces: ForceParams, _rng: &mut ChaCha8Rng) -> ScenarioSpec {
    ScenarioSpec {
        name,
        duration,
        agents: vec![AgentGroup {
            count: 4,
            label: "agent".into(),
            start: Region::new([-5.0, 0.0], [0.0, 6.0]),
            goal: Some(Region::new([200.0, 0.0], [200.0, 6.0])),
            moving: true,
        }],
        robot: parked_robot([0.0, -20.0]),
        forces: ForceParams { noise_std: 0.0, ..ForceParams::default() }.without_repulsion(),
    }
}

fn crossing_spec(name: String, duration: f64, forces: ForceParams, rng: &mut ChaCha8Rng) -> ScenarioSpec {
    let lane = uniform(rng, -1.0, 1.0);
    ScenarioSpec {
        name,
        duration,
        agents: vec![
            AgentGroup {
                count: 3,
                label: "agent".into(),
                start: Region::new([-9.0, lane - 2.0], [-5.0, lane + 2.0]),
                goal: Some(Region::new([30.0, -2.0], [32.0, 2.0])),
                moving: true,
            },
            AgentGroup {
                count: 3,
                label: "agent".into(),
                start: Region::new([-2.0, -9.0], [2.0, -5.0]),
                goal: Some(Region::new([-2.0, 30.0], [2.0, 32.0])),
                moving: true,
            },
        ],
        robot: parked_robot([-20.0, 20.0]),
        forces,
    }
}

/// A standing group crossed by the robot on straight passes at random
/// headings and lateral offsets.
fn approach_spec(name: String, duration: f64, forces: ForceParams, rng: &mut ChaCha8Rng) -> ScenarioSpec {
    let speed = uniform(rng, 0.8, 1.4);
    let mut waypoints: Vec<Point> = Vec::new();
    let mut length = 0.0;
    while length < speed * duration + 12.0 {
        let heading = uniform(rng, -PI, PI);
        let offset = uniform(rng, -1.0, 1.0);
        let (s, c) = heading.sin_cos();
        let at = |along: f64| [along * c - offset * s, along * s + offset * c];
        for p in [at(-4.5), at(4.5)] {
            if let Some(q) = waypoints.last() {
                length += (p[0] - q[0]).hypot(p[1] - q[1]);
            }
            waypoints.push(p);
        }
    }
    ScenarioSpec {
        name,
        duration,
        agents: vec![AgentGroup {
            count: 4,
            label: "agent".into(),
            start: Region::new([-2.5, -2.5], [2.5, 2.5]),
            goal: None,
            moving: false,
        }],
        robot: RobotScript { label: "robot".into(), waypoints, speed, delay: 0.0 },
        forces,
    }
}

type Layout = fn(String, f64, ForceParams, &mut ChaCha8Rng) -> ScenarioSpec;

fn build(seed: u64, index: u64, name: &str, (count, duration): (usize, f64), forces: ForceParams, layout: Layout) -> Result<(String, Dataset, Vec<ScenarioSpec>)> {
    let specs: Vec<ScenarioSpec> = (0..count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index * 1_000_000 + k as u64);
            layout(format!("{name}_{k:03}"), duration, forces, &mut rng)
        })
        .collect();
    let recordings = specs
        .par_iter()
        .enumerate()
        .map(|(k, spec)| generate(spec, seed.wrapping_add((index << 32) + k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset::from_recordings(recordings, DEFAULT_TARGET_RATE, DEFAULT_FOLDS - 1)?;
    Ok((name.to_string(), dataset, specs))
}

pub fn make_suite(seed: u64) -> Result<SynthBundle> {
    make_suite_with(seed, &SuiteConfig::default())
}

/// Generates the `straight` (free walking, no interactions), `crossing`
/// (two groups walking through each other) and `approach` (robot passes
/// through a standing group) suites.
pub fn make_suite_with(seed: u64, cfg: &SuiteConfig) -> Result<SynthBundle> {
    let layouts: [(&str, (usize, f64), Layout); 3] = [
        ("straight", cfg.straight, straight_spec),
        ("crossing", cfg.crossing, crossing_spec),
        ("approach", cfg.approach, approach_spec),
    ];
    let suites = layouts
        .into_iter()
        .enumerate()
        .map(|(i, (name, size, layout))| build(seed, i as u64, name, size, cfg.forces, layout))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthBundle { seed, suites })
}

/// Fraction of windows (over all folds) in which the robot comes within
/// `radius` meters of some present agent.
pub fn proximity_fraction(dataset: &Dataset, cfg: &WindowConfig, radius: f64) -> Result<f64> {
    let folds: Vec<usize> = (0..dataset.folds.folds).collect();
    let (windows, _) = dataset.windows(&folds, &StandardizationStats::IDENTITY, cfg)?;
    if windows.is_empty() {
        return Err(Error::Data("no windows".into()));
    }
    let close = windows
        .iter()
        .filter(|w| {
            w.robot().positions.iter().enumerate().any(|(t, r)| {
                w.agents.iter().any(|a| a.positions[t].is_some_and(|p| (p[0] - r[0]).hypot(p[1] - r[1]) < radius))
            })
        })
        .count();
    Ok(close as f64 / windows.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_have_the_intended_interactions() {
        let bundle = make_suite_with(3, &SuiteConfig::small()).unwrap();
        let names: Vec<&str> = bundle.suites.iter().map(|(n, ..)| n.as_str()).collect();
        assert_eq!(names, SUITE_NAMES);
        let cfg = WindowConfig::new(12, 12);
        assert_eq!(proximity_fraction(bundle.get("straight").unwrap(), &cfg, 3.0).unwrap(), 0.0);
        let approach = proximity_fraction(bundle.get("approach").unwrap(), &cfg, 2.0).unwrap();
        assert!(approach >= 0.5, "{approach}");
        for (_, d, _) in &bundle.suites {
            assert_eq!(d.folds.folds, DEFAULT_FOLDS);
        }
    }
}
