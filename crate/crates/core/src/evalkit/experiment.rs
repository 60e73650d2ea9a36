use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::{MetricReport, MetricRow, SkippedCell};
use super::{evaluate, WindowTrace};
use crate::baselines::{Ctrv, RedModel};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::responsernn::ResponseRnn;
use crate::rollout::{Predictor, RolloutResult};
use crate::trajdata::{Dataset, SequenceWindow, StandardizationStats, WindowConfig, DEFAULT_TARGET_RATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonEntry {
    pub t_obs: usize,
    pub t_pred: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Ctrv,
    /// Path may contain `{dataset}`, `{t_obs}` and `{t_pred}` placeholders.
    Checkpoint { path: String },
}

/// One model to evaluate. On disk: `name`, `kind = "ctrv" | "checkpoint"`
/// and, for checkpoints, `path`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelEntry", into = "RawModelEntry")]
pub struct ModelEntry {
    pub name: String,
    pub source: ModelSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SourceKind {
    Ctrv,
    Checkpoint,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelEntry {
    name: String,
    kind: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

impl TryFrom<RawModelEntry> for ModelEntry {
    type Error = String;

    fn try_from(raw: RawModelEntry) -> std::result::Result<Self, String> {
        let source = match (raw.kind, raw.path) {
            (SourceKind::Ctrv, None) => ModelSource::Ctrv,
            (SourceKind::Ctrv, Some(_)) => return Err(format!("model `{}`: ctrv takes no path", raw.name)),
            (SourceKind::Checkpoint, Some(path)) => ModelSource::Checkpoint { path },
            (SourceKind::Checkpoint, None) => return Err(format!("model `{}`: checkpoint needs a path", raw.name)),
        };
        Ok(Self { name: raw.name, source })
    }
}

impl From<ModelEntry> for RawModelEntry {
    fn from(e: ModelEntry) -> Self {
        let (kind, path) = match e.source {
            ModelSource::Ctrv => (SourceKind::Ctrv, None),
            ModelSource::Checkpoint { path } => (SourceKind::Checkpoint, Some(path)),
        };
        Self { name: e.name, kind, path }
    }
}

fn default_rate() -> f64 {
    DEFAULT_TARGET_RATE
}

/// Which models to evaluate on which datasets and horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub datasets: Vec<DatasetEntry>,
    pub horizons: Vec<HorizonEntry>,
    pub models: Vec<ModelEntry>,
    /// Held-out fold; defaults to the one recorded with each dataset.
    #[serde(default)]
    pub test_fold: Option<usize>,
    /// Window stride; defaults to `t_pred`.
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default = "default_rate")]
    pub frame_rate: f64,
    /// Evaluate only the first `n` test windows of each cell.
    #[serde(default)]
    pub max_windows: Option<usize>,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Record wall time per window; off for bit-reproducible reports.
    #[serde(default)]
    pub timing: bool,
}

impl ExperimentManifest {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::config("datasets", "at least one dataset is required"));
        }
        if self.models.is_empty() {
            return Err(Error::config("models", "at least one model is required"));
        }
        if self.horizons.is_empty() {
            return Err(Error::config("horizons", "at least one horizon is required"));
        }
        for (i, h) in self.horizons.iter().enumerate() {
            WindowConfig::new(h.t_obs, h.t_pred)
                .validate()
                .map_err(|e| Error::config(format!("horizons[{i}]"), e.to_string()))?;
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "must be positive"));
        }
        Ok(())
    }
}

/// Any predictor that evaluation can load.
#[derive(Debug, Clone)]
pub enum ModelHandle {
    ResponseRnn(ResponseRnn),
    Red(RedModel),
    Ctrv(Ctrv),
}

impl ModelHandle {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        match ckpt.kind.as_str() {
            ResponseRnn::CHECKPOINT_KIND => Ok(Self::ResponseRnn(ResponseRnn::from_checkpoint(ckpt)?)),
            RedModel::CHECKPOINT_KIND => Ok(Self::Red(RedModel::from_checkpoint(ckpt)?)),
            other => Err(Error::Checkpoint(format!("unknown model kind `{other}`"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn stats(&self) -> StandardizationStats {
        match self {
            Self::ResponseRnn(m) => *m.stats(),
            Self::Red(m) => *m.stats(),
            Self::Ctrv(m) => m.stats,
        }
    }

    /// `(t_obs, t_pred)` a learned model was built for.
    pub fn horizon(&self) -> Option<(usize, usize)> {
        match self {
            Self::ResponseRnn(m) => Some((m.config().t_obs, m.config().t_pred)),
            Self::Red(m) => Some((m.config().t_obs, m.config().t_pred)),
            Self::Ctrv(_) => None,
        }
    }
}

impl Predictor for ModelHandle {
    fn name(&self) -> String {
        match self {
            Self::ResponseRnn(m) => m.name(),
            Self::Red(m) => m.name(),
            Self::Ctrv(m) => m.name(),
        }
    }

    fn predict(&self, window: &SequenceWindow) -> Result<RolloutResult> {
        match self {
            Self::ResponseRnn(m) => m.predict(window),
            Self::Red(m) => m.predict(window),
            Self::Ctrv(m) => m.predict(window),
        }
    }
}

/// Traces of one evaluated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTraces {
    pub model: String,
    pub dataset: String,
    pub t_obs: usize,
    pub horizon: usize,
    pub windows: Vec<WindowTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub report: MetricReport,
    pub traces: Vec<CellTraces>,
}

fn resolve_path(template: &str, base: &Path, dataset: &str, h: HorizonEntry) -> PathBuf {
    let p = template
        .replace("{dataset}", dataset)
        .replace("{t_obs}", &h.t_obs.to_string())
        .replace("{t_pred}", &h.t_pred.to_string());
    let p = PathBuf::from(p);
    if p.is_absolute() { p } else { base.join(p) }
}

/// Evaluates every (model, dataset, horizon) cell on each dataset's held-out
/// fold. Relative paths resolve against `base`. Cells whose checkpoint is
/// missing, unreadable or built for another horizon are skipped with a reason.
pub fn run_experiment(manifest: &ExperimentManifest, base: &Path) -> Result<ExperimentOutcome> {
    manifest.validate()?;
    let pool = match manifest.workers {
        Some(n) if n > 1 => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config("workers", e.to_string()))?,
        ),
        _ => None,
    };
    let mut report = MetricReport::default();
    let mut traces = Vec::new();
    for entry in &manifest.datasets {
        let path = if entry.path.is_absolute() { entry.path.clone() } else { base.join(&entry.path) };
        let mut dataset = Dataset::load(&path, manifest.frame_rate)?;
        if let Some(f) = manifest.test_fold {
            dataset.folds = dataset.folds.with_test_fold(f)?;
        }
        let test = [dataset.folds.test_fold];
        let train_stats = dataset.fit_stats(&dataset.folds.training_folds())?;

        for &h in &manifest.horizons {
            for model in &manifest.models {
                let skip = |reason: String| SkippedCell {
                    model: model.name.clone(),
                    dataset: entry.name.clone(),
                    horizon: h.t_pred,
                    reason,
                };
                let handle = match &model.source {
                    ModelSource::Ctrv => ModelHandle::Ctrv(Ctrv::new(train_stats)),
                    ModelSource::Checkpoint { path } => {
                        let p = resolve_path(path, base, &entry.name, h);
                        if !p.exists() {
                            log::warn!("skipping {} on {}: no checkpoint at {}", model.name, entry.name, p.display());
                            report.skipped.push(skip(format!("checkpoint {} not found", p.display())));
                            continue;
                        }
                        match ModelHandle::load(&p) {
                            Ok(m) => m,
                            Err(e) => {
                                report.skipped.push(skip(e.to_string()));
                                continue;
                            }
                        }
                    }
                };
                if let Some(mh) = handle.horizon().filter(|&mh| mh != (h.t_obs, h.t_pred)) {
                    report.skipped.push(skip(format!(
                        "horizon mismatch: model built for {}+{}, cell is {}+{}",
                        mh.0, mh.1, h.t_obs, h.t_pred
                    )));
                    continue;
                }
                let stats = handle.stats();
                let mut cfg = WindowConfig::new(h.t_obs, h.t_pred);
                if let Some(s) = manifest.stride {
                    cfg = cfg.with_stride(s);
                }
                let (mut windows, skipped) = dataset.windows(&test, &stats, &cfg)?;
                if skipped > 0 {
                    log::info!("{}: {skipped} candidate windows without a robot skipped", entry.name);
                }
                if let Some(n) = manifest.max_windows {
                    windows.truncate(n);
                }
                let eval = evaluate(&handle, &windows, &stats, manifest.timing, pool.as_ref())?;
                report.rows.push(MetricRow {
                    model: model.name.clone(),
                    dataset: entry.name.clone(),
                    t_obs: h.t_obs,
                    horizon: h.t_pred,
                    ade_m: eval.sums.ade(),
                    fde_m: eval.sums.fde(),
                    n_windows: windows.len(),
                    ms_per_seq: eval.ms_per_seq,
                });
                traces.push(CellTraces {
                    model: model.name.clone(),
                    dataset: entry.name.clone(),
                    t_obs: h.t_obs,
                    horizon: h.t_pred,
                    windows: eval.traces,
                });
            }
        }
    }
    Ok(ExperimentOutcome { report, traces })
}
