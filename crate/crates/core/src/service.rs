//! Transport-independent what-if service: request and response schemas,
//! validation, and prediction over a frozen model.
//!
//! Positions on the wire are world meters; standardization happens here,
//! with the statistics stored in the checkpoint.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::error::Error;
use crate::neural::GaussianParams;
use crate::responsernn::ResponseRnn;
use crate::rollout::RolloutResult;
use crate::trajdata::{AgentSeries, Point, RobotSeries, SequenceWindow, TypeLabels, MIN_PRESENCE_FRACTION};

pub const SCHEMA_VERSION: u32 = 1;
/// Upper bound on candidate paths and on samples per candidate.
pub const MAX_CANDIDATES: usize = 16;
pub const MAX_SAMPLES: usize = 64;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

/// One agent of the observed window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservedAgent {
    pub id: u32,
    pub label: String,
    #[serde(default)]
    pub controlled: bool,
    /// One entry per observed step; `null` where the agent was not seen.
    pub positions: Vec<Option<Point>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    #[default]
    Mean,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictOptions {
    pub mode: PredictionMode,
    /// Draws per candidate in sample mode.
    pub samples: usize,
    pub seed: u64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self { mode: PredictionMode::Mean, samples: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub agents: Vec<ObservedAgent>,
    /// Candidate robot paths, one position per horizon step.
    pub candidates: Vec<Vec<Point>>,
    #[serde(default)]
    pub options: PredictOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentPrediction {
    pub id: u32,
    pub label: String,
    /// World-meter distribution per horizon step.
    pub steps: Vec<GaussianParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidatePrediction {
    pub path: Vec<Point>,
    /// Mean-feedback rollout.
    pub agents: Vec<AgentPrediction>,
    /// Sampled rollouts, in sample mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<Vec<AgentPrediction>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfResponse {
    pub schema_version: u32,
    /// Digest of the checkpoint and the request.
    pub response_id: String,
    pub model: String,
    pub checkpoint_sha256: String,
    pub candidates: Vec<CandidatePrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfoResponse {
    pub schema_version: u32,
    pub model: String,
    pub checkpoint_sha256: String,
    pub loss_mode: String,
    pub t_obs: usize,
    /// Horizon length; candidate paths carry this many positions.
    pub t_pred: usize,
    pub num_types: usize,
    pub labels: Vec<String>,
    pub dt: f64,
    pub max_candidates: usize,
}

/// A bundled demo window: observed history, the robot's realized future and
/// the agents' ground truth, in world meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub dataset: String,
    pub window_id: String,
    pub dt: f64,
    pub agents: Vec<ObservedAgent>,
    pub robot_future: Vec<Point>,
    pub ground_truth: Vec<ObservedAgent>,
    /// Prediction under `robot_future`, filled in by the service.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Vec<AgentPrediction>>,
}

impl Scenario {
    /// Converts a standardized window back to a world-meter scenario.
    pub fn from_window(
        id: impl Into<String>,
        dataset: impl Into<String>,
        window: &SequenceWindow,
        stats: &crate::trajdata::StandardizationStats,
        labels: &TypeLabels,
    ) -> crate::Result<Self> {
        let label = |k: usize| {
            labels
                .label(k)
                .map(str::to_string)
                .ok_or_else(|| Error::Data(format!("window {} uses unknown type {k}", window.id)))
        };
        let t_obs = window.t_obs;
        let mut agents = Vec::new();
        let mut truth = Vec::new();
        for a in &window.agents {
            let world: Vec<Option<Point>> = a.positions.iter().map(|p| p.map(|p| stats.invert(p))).collect();
            agents.push(ObservedAgent { id: a.agent_id, label: label(a.agent_type)?, controlled: false, positions: world[..t_obs].to_vec() });
            truth.push(ObservedAgent { id: a.agent_id, label: label(a.agent_type)?, controlled: false, positions: world[t_obs..].to_vec() });
        }
        let robot = window.robot();
        agents.push(ObservedAgent {
            id: robot.agent_id,
            label: label(robot.agent_type)?,
            controlled: true,
            positions: window.robot_past().iter().map(|&p| Some(stats.invert(p))).collect(),
        });
        Ok(Self {
            id: id.into(),
            dataset: dataset.into(),
            window_id: window.id.clone(),
            dt: window.dt,
            agents,
            robot_future: window.robot_future().iter().map(|&p| stats.invert(p)).collect(),
            ground_truth: truth,
            prediction: None,
        })
    }

    pub fn request(&self) -> WhatIfRequest {
        WhatIfRequest {
            schema_version: SCHEMA_VERSION,
            agents: self.agents.clone(),
            candidates: vec![self.robot_future.clone()],
            options: PredictOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSummary {
    pub id: String,
    pub dataset: String,
    pub window_id: String,
    pub agents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioIndex {
    pub schema_version: u32,
    pub scenarios: Vec<ScenarioSummary>,
}

/// A set of scenarios as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBundle {
    pub schema_version: u32,
    pub scenarios: Vec<Scenario>,
}

/// Demo scenarios from the held-out fold of `dataset`: the first `count`
/// windows in which the robot passes within `radius` meters of an agent.
pub fn demo_scenarios(dataset: &crate::trajdata::Dataset, name: &str, cfg: &crate::trajdata::WindowConfig, count: usize, radius: f64) -> crate::Result<Vec<Scenario>> {
    let identity = crate::trajdata::StandardizationStats::IDENTITY;
    let (windows, _) = dataset.windows(&[dataset.folds.test_fold], &identity, cfg)?;
    crate::evalkit::interaction_windows(&windows, &identity, radius)
        .into_iter()
        .take(count)
        .enumerate()
        .map(|(i, w)| Scenario::from_window(format!("{name}-{i:02}"), name, w, &identity, &dataset.labels))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Not parseable as a request.
    Malformed,
    /// Well-formed but inconsistent (labels, ids, lengths).
    Invalid,
    HorizonMismatch,
    NotFound,
    Internal,
}

/// Structured error body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceError {
    pub error: ErrorKind,
    /// Path of the offending field, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

impl ServiceError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { error: ErrorKind::Invalid, field: Some(field.into()), message: message.into() }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self { error: ErrorKind::NotFound, field: None, message: message.into() }
    }

    /// HTTP status that fits the error.
    pub fn status(&self) -> u16 {
        match self.error {
            ErrorKind::Malformed => 400,
            ErrorKind::Invalid | ErrorKind::HorizonMismatch => 422,
            ErrorKind::NotFound => 404,
            ErrorKind::Internal => 500,
        }
    }
}

impl std::fmt::Display for ServiceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{:?} at `{field}`: {}", self.error, self.message),
            None => write!(f, "{:?}: {}", self.error, self.message),
        }
    }
}

impl std::error::Error for ServiceError {}

/// Parses a JSON request, reporting the path of the first bad field.
pub fn parse_request(body: &[u8]) -> Result<WhatIfRequest, ServiceError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ServiceError {
            error: ErrorKind::Malformed,
            field: (path != ".").then_some(path),
            message: e.into_inner().to_string(),
        }
    })
}

/// A loaded model plus the demo scenarios it serves. Immutable once built,
/// so it can be shared by concurrent requests.
#[derive(Debug, Clone)]
pub struct WhatIfService {
    model: ResponseRnn,
    labels: TypeLabels,
    checkpoint_sha256: String,
    dt: f64,
    scenarios: Vec<Scenario>,
}

impl WhatIfService {
    pub fn from_checkpoint(ckpt: &Checkpoint, dt: f64) -> crate::Result<Self> {
        if ckpt.kind != ResponseRnn::CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!(
                "the service needs a {} checkpoint, got `{}`",
                ResponseRnn::CHECKPOINT_KIND,
                ckpt.kind
            )));
        }
        let model = ResponseRnn::from_checkpoint(ckpt)?;
        let labels = ckpt
            .labels
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no type labels".into()))?;
        Ok(Self { model, labels, checkpoint_sha256: ckpt.manifest().data_sha256, dt, scenarios: Vec::new() })
    }

    /// Adds scenarios, computing each one's prediction under its realized
    /// robot future. Scenarios built for another horizon are rejected.
    pub fn with_scenarios(mut self, scenarios: Vec<Scenario>) -> crate::Result<Self> {
        for mut s in scenarios {
            let response = self.predict(&s.request()).map_err(|e| Error::Data(format!("scenario {}: {e}", s.id)))?;
            s.prediction = response.candidates.into_iter().next().map(|c| c.agents);
            self.scenarios.push(s);
        }
        Ok(self)
    }

    pub fn model(&self) -> &ResponseRnn {
        &self.model
    }

    pub fn labels(&self) -> &TypeLabels {
        &self.labels
    }

    pub fn info(&self) -> InfoResponse {
        let cfg = self.model.config();
        InfoResponse {
            schema_version: SCHEMA_VERSION,
            model: crate::rollout::Predictor::name(&self.model),
            checkpoint_sha256: self.checkpoint_sha256.clone(),
            loss_mode: cfg.loss_mode.as_str().into(),
            t_obs: cfg.t_obs,
            t_pred: cfg.t_pred,
            num_types: cfg.num_types,
            labels: self.labels.as_slice().to_vec(),
            dt: self.dt,
            max_candidates: MAX_CANDIDATES,
        }
    }

    pub fn scenario_index(&self) -> ScenarioIndex {
        ScenarioIndex {
            schema_version: SCHEMA_VERSION,
            scenarios: self
                .scenarios
                .iter()
                .map(|s| ScenarioSummary {
                    id: s.id.clone(),
                    dataset: s.dataset.clone(),
                    window_id: s.window_id.clone(),
                    agents: s.agents.iter().filter(|a| !a.controlled).count(),
                })
                .collect(),
        }
    }

    pub fn scenario(&self, id: &str) -> Result<&Scenario, ServiceError> {
        self.scenarios
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| ServiceError::not_found(format!("no scenario `{id}`")))
    }

    /// Builds the standardized window behind a request. The robot's horizon
    /// is filled with the first candidate; callers override it per candidate.
    pub fn request_window(&self, req: &WhatIfRequest) -> Result<SequenceWindow, ServiceError> {
        let cfg = self.model.config();
        let (t_obs, t_pred) = (cfg.t_obs, cfg.t_pred);
        let stats = self.model.stats();
        if req.schema_version != SCHEMA_VERSION {
            return Err(ServiceError::invalid("schema_version", format!("expected {SCHEMA_VERSION}")));
        }
        if req.candidates.is_empty() {
            return Err(ServiceError::invalid("candidates", "at least one candidate path is required"));
        }
        if req.candidates.len() > MAX_CANDIDATES {
            return Err(ServiceError::invalid("candidates", format!("at most {MAX_CANDIDATES} candidates")));
        }
        if req.options.mode == PredictionMode::Sample && !(1..=MAX_SAMPLES).contains(&req.options.samples) {
            return Err(ServiceError::invalid("options.samples", format!("must be in 1..={MAX_SAMPLES}")));
        }
        for (i, c) in req.candidates.iter().enumerate() {
            if c.len() != t_pred {
                return Err(ServiceError {
                    error: ErrorKind::HorizonMismatch,
                    field: Some(format!("candidates[{i}]")),
                    message: format!("horizon mismatch: model predicts {t_pred} steps, path has {}", c.len()),
                });
            }
            if c.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
                return Err(ServiceError::invalid(format!("candidates[{i}]"), "non-finite position"));
            }
        }
        let mut ids = HashSet::new();
        let mut agents = Vec::new();
        let mut robot = None;
        let min_present = MIN_PRESENCE_FRACTION * t_obs as f64;
        for (i, a) in req.agents.iter().enumerate() {
            let field = |name: &str| format!("agents[{i}].{name}");
            if !ids.insert(a.id) {
                return Err(ServiceError::invalid(field("id"), format!("duplicate agent id {}", a.id)));
            }
            let agent_type = self
                .labels
                .index_of(&a.label)
                .ok_or_else(|| ServiceError::invalid(field("label"), format!("unknown label `{}`", a.label)))?;
            if a.positions.len() != t_obs {
                return Err(ServiceError {
                    error: ErrorKind::HorizonMismatch,
                    field: Some(field("positions")),
                    message: format!("horizon mismatch: model observes {t_obs} steps, agent has {}", a.positions.len()),
                });
            }
            if a.positions.iter().flatten().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
                return Err(ServiceError::invalid(field("positions"), "non-finite position"));
            }
            if a.controlled {
                if robot.is_some() {
                    return Err(ServiceError::invalid(field("controlled"), "exactly one controlled agent is allowed"));
                }
                let past: Option<Vec<Point>> = a.positions.iter().map(|p| p.map(|p| stats.apply(p))).collect();
                let past = past.ok_or_else(|| ServiceError::invalid(field("positions"), "the controlled agent must be observed at every step"))?;
                robot = Some((a.id, agent_type, past));
            } else {
                let mut positions: Vec<Option<Point>> = a.positions.iter().map(|p| p.map(|p| stats.apply(p))).collect();
                let observed = positions.iter().flatten().count();
                positions.resize(t_obs + t_pred, None);
                agents.push(AgentSeries { agent_id: a.id, agent_type, positions, loss_excluded: (observed as f64) < min_present });
            }
        }
        let (agent_id, agent_type, mut positions) =
            robot.ok_or_else(|| ServiceError::invalid("agents", "exactly one controlled agent is required"))?;
        positions.extend(req.candidates[0].iter().map(|&p| stats.apply(p)));
        Ok(SequenceWindow {
            id: "request".into(),
            recording_id: "request".into(),
            start_frame: 0,
            t_obs,
            t_pred,
            dt: self.dt,
            agents,
            robots: vec![RobotSeries { agent_id, agent_type, positions }],
        })
    }

    /// World-meter export of a rollout in model coordinates.
    pub fn export(&self, r: &RolloutResult) -> Vec<AgentPrediction> {
        r.to_world(self.model.stats())
            .agents
            .into_iter()
            .map(|a| AgentPrediction {
                id: a.agent_id,
                label: self.labels.label(a.agent_type).unwrap_or("?").to_string(),
                steps: a.steps,
            })
            .collect()
    }

    pub fn predict(&self, req: &WhatIfRequest) -> Result<WhatIfResponse, ServiceError> {
        let window = self.request_window(req)?;
        let stats = self.model.stats();
        let paths: Vec<Vec<Point>> = req.candidates.iter().map(|c| c.iter().map(|&p| stats.apply(p)).collect()).collect();
        let internal = |e: Error| ServiceError { error: ErrorKind::Internal, field: None, message: e.to_string() };
        let has_agents = window.agents.iter().any(|a| a.present(window.t_obs - 1));
        let candidates = if !has_agents {
            req.candidates
                .iter()
                .map(|c| CandidatePrediction { path: c.clone(), agents: Vec::new(), samples: Vec::new() })
                .collect()
        } else {
            let means = self.model.simulate_whatif(&window, &paths).map_err(internal)?;
            let mut out = Vec::with_capacity(means.len());
            for ((mean, path), world_path) in means.iter().zip(&paths).zip(&req.candidates) {
                let samples = match req.options.mode {
                    PredictionMode::Mean => Vec::new(),
                    PredictionMode::Sample => self
                        .model
                        .sample_rollouts(&window, Some(path), req.options.samples, req.options.seed)
                        .map_err(internal)?
                        .iter()
                        .map(|r| self.export(r))
                        .collect(),
                };
                out.push(CandidatePrediction { path: world_path.clone(), agents: self.export(mean), samples });
            }
            out
        };
        let mut digest = Sha256::new();
        digest.update(self.checkpoint_sha256.as_bytes());
        digest.update(serde_json::to_vec(req).expect("requests serialize"));
        Ok(WhatIfResponse {
            schema_version: SCHEMA_VERSION,
            response_id: hex::encode(&digest.finalize()[..12]),
            model: crate::rollout::Predictor::name(&self.model),
            checkpoint_sha256: self.checkpoint_sha256.clone(),
            candidates,
        })
    }
}
