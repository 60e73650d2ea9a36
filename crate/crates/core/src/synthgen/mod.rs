//! Synthetic interaction data from a social-force style dynamic with a
//! scripted robot.
//!
//! Agents relax their velocity toward the preferred velocity pointing at
//! their goal, are pushed away from the robot and from each other by
//! exponential repulsions, and receive Gaussian acceleration noise. The
//! state is advanced with semi-implicit Euler steps at the recording frame
//! rate, without substeps.

mod suite;

pub use suite::{make_suite, make_suite_with, proximity_fraction, SuiteConfig, SynthBundle, SUITE_NAMES};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajdata::{Point, RawTrack, Recording, RecordingMeta, Sample, TypeLabels};

/// Agents closer than this at placement are re-drawn.
pub const MIN_SEPARATION: f64 = 0.1;
const PLACEMENT_ATTEMPTS: usize = 1000;

/// Dynamics constants. Missing fields in a scenario file take these defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceParams {
    /// Preferred speed, m/s.
    pub v0: f64,
    /// Velocity relaxation rate toward the preferred velocity, 1/s.
    pub goal_gain: f64,
    /// Preferred speed ramps down linearly inside this distance of the goal.
    pub arrival_radius: f64,
    /// Robot repulsion magnitude at `personal_radius`, m/s^2.
    pub robot_strength: f64,
    /// Robot repulsion decay length, m.
    pub robot_range: f64,
    pub personal_radius: f64,
    pub agent_strength: f64,
    pub agent_range: f64,
    /// Integration step, s.
    pub dt: f64,
    /// Acceleration noise std per axis, m/s^2.
    pub noise_std: f64,
    pub max_speed: f64,
}

impl Default for ForceParams {
    fn default() -> Self {
        Self {
            v0: 1.2,
            goal_gain: 2.0,
            arrival_radius: 1.0,
            robot_strength: 5.0,
            robot_range: 1.5,
            personal_radius: 0.5,
            agent_strength: 1.5,
            agent_range: 0.4,
            dt: 1.0 / 15.0,
            noise_std: 0.4,
            max_speed: 3.0,
        }
    }
}

impl ForceParams {
    pub fn without_repulsion(self) -> Self {
        Self { robot_strength: 0.0, agent_strength: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("v0", self.v0),
            ("goal_gain", self.goal_gain),
            ("arrival_radius", self.arrival_radius),
            ("robot_strength", self.robot_strength),
            ("personal_radius", self.personal_radius),
            ("agent_strength", self.agent_strength),
            ("noise_std", self.noise_std),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("forces.{name}"), "must be finite and nonnegative"));
            }
        }
        for (name, v) in [
            ("robot_range", self.robot_range),
            ("agent_range", self.agent_range),
            ("dt", self.dt),
            ("max_speed", self.max_speed),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("forces.{name}"), "must be positive"));
            }
        }
        Ok(())
    }

    /// Magnitude of the robot push at distance `d`.
    pub fn robot_push(&self, d: f64) -> f64 {
        self.robot_strength * ((self.personal_radius - d) / self.robot_range).exp()
    }

    fn agent_push(&self, d: f64) -> f64 {
        self.agent_strength * ((self.personal_radius - d) / self.agent_range).exp()
    }
}

/// Axis-aligned box `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub min: Point,
    pub max: Point,
}

impl Region {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn point(p: Point) -> Self {
        Self { min: p, max: p }
    }

    pub fn shifted(&self, by: Point) -> Self {
        Self::new([self.min[0] + by[0], self.min[1] + by[1]], [self.max[0] + by[0], self.max[1] + by[1]])
    }

    fn sample(&self, rng: &mut impl Rng) -> Point {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        [self.min[0] + u * (self.max[0] - self.min[0]), self.min[1] + v * (self.max[1] - self.min[1])]
    }

    fn validate(&self, field: &str) -> Result<()> {
        let ok = (0..2).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] <= self.max[i]);
        if ok { Ok(()) } else { Err(Error::config(field, "needs finite min <= max")) }
    }
}

fn default_agent_label() -> String {
    "agent".into()
}

fn default_robot_label() -> String {
    "robot".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentGroup {
    pub count: usize,
    #[serde(default = "default_agent_label")]
    pub label: String,
    pub start: Region,
    /// Goal box; agents without one hold their starting position.
    #[serde(default)]
    pub goal: Option<Region>,
    /// Start at the preferred velocity instead of at rest.
    #[serde(default)]
    pub moving: bool,
}

/// Constant-speed traversal of a waypoint polyline; the robot waits at the
/// first waypoint for `delay` seconds and stays at the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotScript {
    #[serde(default = "default_robot_label")]
    pub label: String,
    pub waypoints: Vec<Point>,
    pub speed: f64,
    #[serde(default)]
    pub delay: f64,
}

impl RobotScript {
    /// Position after `time` seconds.
    pub fn position(&self, time: f64) -> Point {
        let mut left = self.speed * (time - self.delay).max(0.0);
        for pair in self.waypoints.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            if left <= len && len > 0.0 {
                let f = left / len;
                return [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])];
            }
            left -= len;
        }
        *self.waypoints.last().expect("validated script has waypoints")
    }
}

/// One scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    /// Seconds.
    pub duration: f64,
    pub agents: Vec<AgentGroup>,
    pub robot: RobotScript,
    #[serde(default)]
    pub forces: ForceParams,
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::config("scenario", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str::<Self>(&text)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), line: 0, message: e.to_string() })
            .and_then(|s| s.validate().map(|_| s))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config("name", "must be a non-empty file name"));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::config("duration", "must be positive"));
        }
        if self.agents.iter().all(|g| g.count == 0) {
            return Err(Error::config("agents", "at least one agent is required"));
        }
        for (i, g) in self.agents.iter().enumerate() {
            g.start.validate(&format!("agents[{i}].start"))?;
            if let Some(goal) = g.goal {
                goal.validate(&format!("agents[{i}].goal"))?;
            }
        }
        if self.robot.waypoints.is_empty() {
            return Err(Error::config("robot.waypoints", "at least one waypoint is required"));
        }
        if !(self.robot.speed.is_finite() && self.robot.speed >= 0.0) {
            return Err(Error::config("robot.speed", "must be nonnegative"));
        }
        if !(self.robot.delay.is_finite() && self.robot.delay >= 0.0) {
            return Err(Error::config("robot.delay", "must be nonnegative"));
        }
        self.forces.validate()
    }

    /// Agent labels in order of first appearance, then the robot's.
    pub fn labels(&self) -> Result<TypeLabels> {
        let mut labels: Vec<String> = Vec::new();
        for l in self.agents.iter().map(|g| &g.label).chain([&self.robot.label]) {
            if !labels.contains(l) {
                labels.push(l.clone());
            }
        }
        TypeLabels::new(labels)
    }

    pub fn frames(&self) -> usize {
        (self.duration / self.forces.dt).round() as usize + 1
    }

    /// The same scenario moved by `by`.
    pub fn translated(&self, by: Point) -> Self {
        let mut out = self.clone();
        for g in &mut out.agents {
            g.start = g.start.shifted(by);
            g.goal = g.goal.map(|r| r.shifted(by));
        }
        for w in &mut out.robot.waypoints {
            *w = [w[0] + by[0], w[1] + by[1]];
        }
        out
    }
}

struct AgentState {
    position: Point,
    velocity: Point,
    goal: Point,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

fn place(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<Vec<AgentState>> {
    let mut agents: Vec<AgentState> = Vec::new();
    let robot_start = spec.robot.position(0.0);
    for (gi, g) in spec.agents.iter().enumerate() {
        for _ in 0..g.count {
            let mut placed = None;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let p = g.start.sample(rng);
                let clear = norm(sub(p, robot_start)) >= MIN_SEPARATION
                    && agents.iter().all(|a| norm(sub(p, a.position)) >= MIN_SEPARATION);
                if clear {
                    placed = Some(p);
                    break;
                }
            }
            let position = placed.ok_or_else(|| {
                Error::config(format!("agents[{gi}].start"), "region too small to place agents apart")
            })?;
            let goal = g.goal.map_or(position, |r| r.sample(rng));
            let velocity = if g.moving { preferred_velocity(position, goal, &spec.forces) } else { [0.0, 0.0] };
            agents.push(AgentState { position, velocity, goal });
        }
    }
    Ok(agents)
}

fn preferred_velocity(p: Point, goal: Point, f: &ForceParams) -> Point {
    let to_goal = sub(goal, p);
    let d = norm(to_goal);
    if d < 1e-12 {
        return [0.0, 0.0];
    }
    let speed = if f.arrival_radius > 0.0 { f.v0 * (d / f.arrival_radius).min(1.0) } else { f.v0 };
    [speed * to_goal[0] / d, speed * to_goal[1] / d]
}

/// Simulates `spec`. Placement and noise use separate streams of a generator
/// seeded with `seed`, so the noise sequence does not depend on placement
/// retries or on the robot script.
pub fn generate(spec: &ScenarioSpec, seed: u64) -> Result<Recording> {
    spec.validate()?;
    let f = spec.forces;
    let labels = spec.labels()?;
    let mut placement = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(1);
    let mut agents = place(spec, &mut placement)?;

    let frames = spec.frames();
    let mut tracks: Vec<RawTrack> = Vec::with_capacity(agents.len() + 1);
    let mut i = 0;
    for g in &spec.agents {
        let agent_type = labels.index_of(&g.label).expect("label collected");
        for _ in 0..g.count {
            i += 1;
            tracks.push(RawTrack { agent_id: i, agent_type, controlled: false, samples: Vec::with_capacity(frames) });
        }
    }
    let robot_type = labels.index_of(&spec.robot.label).expect("label collected");
    let mut robot = RawTrack { agent_id: i + 1, agent_type: robot_type, controlled: true, samples: Vec::with_capacity(frames) };

    for frame in 0..frames {
        let robot_pos = spec.robot.position(frame as f64 * f.dt);
        robot.samples.push(Sample::new(frame as i64, robot_pos[0], robot_pos[1]));
        for (a, t) in agents.iter().zip(&mut tracks) {
            t.samples.push(Sample::new(frame as i64, a.position[0], a.position[1]));
        }
        if frame + 1 == frames {
            break;
        }
        let accelerations: Vec<Point> = agents
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let v_pref = preferred_velocity(a.position, a.goal, &f);
                let mut acc = [f.goal_gain * (v_pref[0] - a.velocity[0]), f.goal_gain * (v_pref[1] - a.velocity[1])];
                if f.robot_strength > 0.0 {
                    let away = sub(a.position, robot_pos);
                    let d = norm(away);
                    if d > 1e-12 {
                        let m = f.robot_push(d) / d;
                        acc = [acc[0] + m * away[0], acc[1] + m * away[1]];
                    }
                }
                if f.agent_strength > 0.0 {
                    for (j, b) in agents.iter().enumerate() {
                        let away = sub(a.position, b.position);
                        let d = norm(away);
                        if j != k && d > 1e-12 {
                            let m = f.agent_push(d) / d;
                            acc = [acc[0] + m * away[0], acc[1] + m * away[1]];
                        }
                    }
                }
                acc
            })
            .collect();
        for (a, acc) in agents.iter_mut().zip(accelerations) {
            let nx: f64 = noise.sample(StandardNormal);
            let ny: f64 = noise.sample(StandardNormal);
            let mut v = [
                a.velocity[0] + (acc[0] + f.noise_std * nx) * f.dt,
                a.velocity[1] + (acc[1] + f.noise_std * ny) * f.dt,
            ];
            let speed = norm(v);
            if speed > f.max_speed {
                v = [v[0] * f.max_speed / speed, v[1] * f.max_speed / speed];
            }
            a.velocity = v;
            a.position = [a.position[0] + v[0] * f.dt, a.position[1] + v[1] * f.dt];
        }
    }
    tracks.push(robot);
    Ok(Recording {
        meta: RecordingMeta { recording_id: spec.name.clone(), frame_rate: 1.0 / f.dt, labels },
        tracks,
    })
}
