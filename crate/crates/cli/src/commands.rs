use std::path::{Path, PathBuf};

use rrnn_core::baselines::{RedConfig, RedModel};
use rrnn_core::checkpoint::Checkpoint;
use rrnn_core::evalkit::{evaluate, run_experiment, ExperimentManifest, ModelHandle, CLOSE_RADIUS};
use rrnn_core::neural::LossMode;
use rrnn_core::responsernn::{gradient_check, typical_step, Feedback, ModelConfig, ResponseRnn};
use rrnn_core::rollout::Predictor;
use rrnn_core::service::{
    demo_scenarios, parse_request, AgentPrediction, Scenario, ScenarioBundle, WhatIfRequest, WhatIfService, SCHEMA_VERSION,
};
use rrnn_core::synthgen::{make_suite_with, proximity_fraction, SuiteConfig};
use rrnn_core::training::{split_validation, EpochReport, TrainOutcome, Trainable, Trainer};
use rrnn_core::trajdata::{
    ingest, Dataset, Point, Recording, RecordingMeta, TypeLabels, WindowConfig, DEFAULT_FOLDS, DEFAULT_TARGET_RATE,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{hash_inputs, write_run_files, RunManifest};
use crate::server;
use crate::{Cli, Command};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const DEMO_SCENARIOS_FILE: &str = "demo_scenarios.json";

/// Resolved settings of one invocation.
struct Run {
    cfg: RunConfig,
    config_path: Option<PathBuf>,
    seed: u64,
    out: PathBuf,
    deterministic: bool,
    workers: usize,
    /// Loss mode given on the command line.
    loss_flag: Option<LossMode>,
    name: &'static str,
}

impl Run {
    fn resolve(cli: &Cli) -> Result<Self, CliError> {
        let g = &cli.global;
        let mut cfg = match &g.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = g.seed {
            cfg.train.seed = seed;
        }
        if let Some(t) = g.t_obs {
            cfg.data.t_obs = t;
        }
        if let Some(t) = g.t_pred {
            cfg.data.t_pred = t;
        }
        if let Some(l) = g.loss {
            cfg.model.loss = l.into();
        }
        if let Some(w) = g.workers {
            cfg.train.workers = w as usize;
        }
        cfg.validate()?;
        let name = cli.command.name();
        Ok(Self {
            seed: cfg.train.seed,
            workers: cfg.train.workers,
            config_path: g.config.clone(),
            out: g.out.clone().unwrap_or_else(|| PathBuf::from("out").join(name)),
            deterministic: g.deterministic,
            loss_flag: g.loss.map(Into::into),
            name,
            cfg,
        })
    }

    /// Records the run before any output is produced.
    fn start(&self, mut inputs: Vec<PathBuf>) -> Result<(), CliError> {
        if let Some(c) = &self.config_path {
            inputs.insert(0, c.clone());
        }
        let manifest = RunManifest {
            subcommand: self.name.into(),
            config_path: self.config_path.clone(),
            seed: self.seed,
            out: self.out.clone(),
            precision: "f64".into(),
            deterministic: self.deterministic,
            workers: self.workers,
            version: env!("CARGO_PKG_VERSION").into(),
            inputs_sha256: hash_inputs(&inputs)?,
            inputs,
        };
        write_run_files(&manifest, &self.cfg)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        self.write(name, serde_json::to_string_pretty(value).expect("artifacts serialize") + "\n")
    }

    fn load_dataset(&self, dir: &Path) -> Result<Dataset, CliError> {
        let mut ds = Dataset::load(dir, self.cfg.data.frame_rate)?;
        if let Some(f) = self.cfg.data.test_fold {
            ds.folds = ds.folds.with_test_fold(f).map_err(|e| CliError::config("data.test_fold", e.to_string()))?;
        }
        Ok(ds)
    }
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let run = Run::resolve(cli)?;
    match &cli.command {
        Command::Prepare { input, labels, source_rate, test_fold } => prepare(&run, input, labels, *source_rate, *test_fold),
        Command::Synth => synth(&run),
        Command::Train { dataset } => train(&run, dataset.as_deref()),
        Command::Eval { experiment } => eval(&run, experiment),
        Command::Predict { checkpoint, dataset } => predict(&run, checkpoint, dataset.as_deref()),
        Command::Simulate { checkpoint, window, paths } => simulate(&run, checkpoint, window, paths.as_deref()),
        Command::Serve { checkpoint, scenarios, bind } => serve(&run, checkpoint, scenarios.as_deref(), bind.as_deref()),
        Command::Gradcheck => gradcheck(&run),
    }
}

fn prepare(run: &Run, input: &Path, labels: &[String], source_rate: Option<f64>, test_fold: Option<usize>) -> Result<(), CliError> {
    let mut csvs: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| CliError::config("--input", format!("{}: {e}", input.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    csvs.sort();
    if csvs.is_empty() {
        return Err(CliError::config("--input", format!("no CSV files in {}", input.display())));
    }
    run.start(vec![input.to_path_buf()])?;
    let labels = TypeLabels::new(labels.iter().cloned()).map_err(|e| CliError::config("--labels", e.to_string()))?;
    let mut recordings = Vec::with_capacity(csvs.len());
    for p in &csvs {
        if p.with_extension("meta.toml").exists() {
            recordings.push(Recording::load(p)?);
            continue;
        }
        let frame_rate = source_rate.ok_or_else(|| {
            CliError::config("--source-rate", format!("{} has no metadata sidecar; pass its frame rate", p.display()))
        })?;
        let recording_id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let tracks = ingest(p, &labels)?;
        recordings.push(Recording { meta: RecordingMeta { recording_id, frame_rate, labels: labels.clone() }, tracks });
    }
    let fold = test_fold.or(run.cfg.data.test_fold).unwrap_or(DEFAULT_FOLDS - 1);
    let dataset = Dataset::from_recordings(recordings, run.cfg.data.frame_rate, fold)?;
    let dir = run.out.join("dataset");
    dataset.save(&dir)?;
    println!("prepared {} recordings at {} Hz into {}", dataset.recordings.len(), dataset.frame_rate, dir.display());
    Ok(())
}

fn synth(run: &Run) -> Result<(), CliError> {
    run.start(Vec::new())?;
    let bundle = make_suite_with(run.seed, &run.cfg.synth.suite())?;
    bundle.save(&run.out)?;
    let windows = WindowConfig::new(run.cfg.data.t_obs, run.cfg.data.t_pred);
    for (name, dataset, _) in &bundle.suites {
        let close = proximity_fraction(dataset, &windows, CLOSE_RADIUS)?;
        println!("{name}: {} recordings, robot within {CLOSE_RADIUS} m in {:.0}% of windows", dataset.recordings.len(), 100.0 * close);
    }
    let approach = bundle.get("approach").expect("approach suite is generated");
    let scenarios = demo_scenarios(approach, "approach", &windows, run.cfg.synth.demo_scenarios, CLOSE_RADIUS)?;
    let path = run.write_json(DEMO_SCENARIOS_FILE, &ScenarioBundle { schema_version: SCHEMA_VERSION, scenarios })?;
    println!("demo scenarios in {}", path.display());
    Ok(())
}

/// Provenance stored in trained checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub frame_rate: f64,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    pub inputs_sha256: String,
    pub config: RunConfig,
}

/// Frame interval a checkpoint was trained at.
pub fn checkpoint_dt(ckpt: &Checkpoint) -> f64 {
    let rate = ckpt
        .training
        .as_ref()
        .and_then(|t| t.get("frame_rate"))
        .and_then(serde_json::Value::as_f64)
        .filter(|r| *r > 0.0)
        .unwrap_or(DEFAULT_TARGET_RATE);
    1.0 / rate
}

fn fit<M: Trainable>(run: &Run, model: M, train: &[rrnn_core::trajdata::SequenceWindow], val: &[rrnn_core::trajdata::SequenceWindow]) -> Result<(TrainOutcome<M>, Vec<EpochReport>), CliError> {
    let trainer = Trainer::new(run.cfg.train)?;
    let mut history = Vec::new();
    let outcome = trainer.train(model, train, val, |r| {
        println!("epoch {:>3}: train {:.4} val {}", r.epoch, r.train_loss, r.val_loss.map_or("-".into(), |v| format!("{v:.4}")));
        let mut r = r.clone();
        if run.deterministic {
            r.seconds = 0.0;
        }
        history.push(r);
    })?;
    Ok((outcome, history))
}

fn train(run: &Run, dataset: Option<&Path>) -> Result<(), CliError> {
    let dir = run.cfg.dataset_dir(dataset)?;
    run.start(vec![dir.clone()])?;
    let ds = run.load_dataset(&dir)?;
    let folds = ds.folds.training_folds();
    let stats = ds.fit_stats(&folds)?;
    let (windows, skipped) = ds.windows(&folds, &stats, &run.cfg.data.windows())?;
    let (train, val) = split_validation(windows, run.cfg.data.validation_fraction);
    println!("{} training and {} validation windows ({skipped} without a robot skipped)", train.len(), val.len());
    let mut cfg = run.cfg.clone();
    let (t_obs, t_pred) = (cfg.data.t_obs, cfg.data.t_pred);
    let m = cfg.model.clone();
    let (best, last, best_epoch, history) = match m.kind {
        crate::config::ModelKind::Responsernn => {
            let motion_scale = m.motion_scale.or_else(|| typical_step(&train)).unwrap_or(1.0);
            cfg.model.motion_scale = Some(motion_scale);
            let mc = ModelConfig {
                num_types: ds.labels.len(),
                edge_hidden: m.edge_hidden,
                node_hidden: m.node_hidden,
                embedding: m.embedding,
                attention_dim: m.attention_dim,
                attention_scale: m.attention_scale,
                ..ModelConfig::new(ds.labels.len(), t_obs, t_pred, m.loss)
            }
            .with_motion_scale(motion_scale);
            let (o, h) = fit(run, ResponseRnn::new(mc, stats, run.seed)?, &train, &val)?;
            (ModelHandle::ResponseRnn(o.best), ModelHandle::ResponseRnn(o.last), o.best_epoch, h)
        }
        crate::config::ModelKind::Red => {
            let rc = RedConfig { hidden: m.red_hidden, embedding: m.embedding, t_obs, t_pred };
            let (o, h) = fit(run, RedModel::new(rc, stats, run.seed)?, &train, &val)?;
            (ModelHandle::Red(o.best), ModelHandle::Red(o.last), o.best_epoch, h)
        }
    };
    let record = TrainingRecord {
        frame_rate: ds.frame_rate,
        seed: run.seed,
        best_epoch,
        epochs: history.len(),
        train_windows: train.len(),
        val_windows: val.len(),
        inputs_sha256: hash_inputs(&[dir])?,
        config: cfg,
    };
    let meta = serde_json::to_value(&record).expect("record serializes");
    for (handle, file) in [(&best, CHECKPOINT_FILE), (&last, "last.ckpt")] {
        let ckpt = match handle {
            ModelHandle::ResponseRnn(m) => m.to_checkpoint(Some(ds.labels.clone()), Some(meta.clone())),
            ModelHandle::Red(m) => m.to_checkpoint(Some(ds.labels.clone()), Some(meta.clone())),
            ModelHandle::Ctrv(_) => unreachable!("CTRV is not trained"),
        };
        ckpt.save(&run.out.join(file))?;
    }
    run.write(crate::manifest::RESOLVED_CONFIG_FILE, record.config.to_toml())?;
    run.write_json("history.json", &history)?;
    println!("{} best at epoch {best_epoch}; checkpoint {}", best.name(), run.out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn eval(run: &Run, experiment: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(experiment)
        .map_err(|e| CliError::config("--experiment", format!("{}: {e}", experiment.display())))?;
    let de = toml::Deserializer::parse(&text).map_err(|e| CliError::config("experiment", e.to_string()))?;
    let mut manifest: ExperimentManifest = serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::config(format!("experiment.{}", e.path()), e.into_inner().message()))?;
    let base = experiment.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = match std::env::var_os(crate::config::DATA_ROOT_ENV) {
        Some(root) if base.as_os_str().is_empty() => PathBuf::from(root),
        _ => base,
    };
    if run.deterministic {
        manifest.timing = false;
    }
    if manifest.workers.is_none() {
        manifest.workers = Some(run.workers);
    }
    let mut inputs = vec![experiment.to_path_buf()];
    inputs.extend(manifest.datasets.iter().map(|d| base.join(&d.path)));
    run.start(inputs)?;
    let outcome = run_experiment(&manifest, &base)?;
    run.write("report.json", outcome.report.to_json() + "\n")?;
    let table = outcome.report.render_table();
    run.write("report.md", &table)?;
    run.write_json("traces.json", &outcome.traces)?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictSummary {
    pub model: String,
    pub windows: usize,
    pub ade_m: Option<f64>,
    pub fde_m: Option<f64>,
    pub ms_per_seq: Option<f64>,
}

fn predict(run: &Run, checkpoint: &Path, dataset: Option<&Path>) -> Result<(), CliError> {
    let dir = run.cfg.dataset_dir(dataset)?;
    run.start(vec![checkpoint.to_path_buf(), dir.clone()])?;
    let handle = ModelHandle::load(checkpoint)?;
    let (t_obs, t_pred) = handle.horizon().expect("checkpoints hold learned models");
    let ds = run.load_dataset(&dir)?;
    let stats = handle.stats();
    let (windows, _) = ds.windows(&[ds.folds.test_fold], &stats, &WindowConfig::new(t_obs, t_pred))?;
    let e = evaluate(&handle, &windows, &stats, !run.deterministic, None)?;
    let summary = PredictSummary { model: handle.name(), windows: windows.len(), ade_m: e.sums.ade(), fde_m: e.sums.fde(), ms_per_seq: e.ms_per_seq };
    run.write_json("predictions.json", &e.traces)?;
    run.write_json("summary.json", &summary)?;
    println!("{}: {} windows, ADE {:?} m, FDE {:?} m", summary.model, summary.windows, summary.ade_m, summary.fde_m);
    Ok(())
}

/// One rolled-out candidate, in world meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationExport {
    pub schema_version: u32,
    pub model: String,
    pub checkpoint_sha256: String,
    pub candidate: usize,
    pub path: Vec<Point>,
    pub agents: Vec<AgentPrediction>,
}

/// Parses candidate paths: one per line, `x,y` points separated by whitespace.
pub fn parse_paths(text: &str) -> Result<Vec<Vec<Point>>, CliError> {
    let mut paths = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let path = line
            .split_whitespace()
            .map(|tok| {
                let (x, y) = tok.split_once(',')?;
                Some([x.trim().parse().ok()?, y.trim().parse().ok()?])
            })
            .collect::<Option<Vec<Point>>>()
            .ok_or_else(|| CliError::config(format!("--paths:{}", n + 1), "expected `x,y` points separated by spaces"))?;
        paths.push(path);
    }
    Ok(paths)
}

fn read_request(path: &Path) -> Result<WhatIfRequest, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::config("--window", format!("{}: {e}", path.display())))?;
    if let Ok(s) = serde_json::from_slice::<Scenario>(&bytes) {
        return Ok(s.request());
    }
    parse_request(&bytes).map_err(|e| CliError::config(format!("--window:{}", e.field.unwrap_or_default()), e.message))
}

fn load_service(checkpoint: &Path) -> Result<WhatIfService, CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    Ok(WhatIfService::from_checkpoint(&ckpt, checkpoint_dt(&ckpt))?)
}

fn simulate(run: &Run, checkpoint: &Path, window: &Path, paths: Option<&Path>) -> Result<(), CliError> {
    let mut inputs = vec![checkpoint.to_path_buf(), window.to_path_buf()];
    inputs.extend(paths.map(Path::to_path_buf));
    let service = load_service(checkpoint)?;
    let mut request = read_request(window)?;
    if let Some(p) = paths {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::config("--paths", format!("{}: {e}", p.display())))?;
        request.candidates = parse_paths(&text)?;
    }
    let seq = service
        .request_window(&request)
        .map_err(|e| CliError::config(e.field.clone().unwrap_or_else(|| "--window".into()), e.message))?;
    run.start(inputs)?;
    let model = service.model();
    let stats = model.stats();
    let info = service.info();
    for (i, candidate) in request.candidates.iter().enumerate() {
        let path: Vec<Point> = candidate.iter().map(|&p| stats.apply(p)).collect();
        let rollout = model.rollout(&seq, Some(&path), Feedback::Mean, 0)?;
        let export = SimulationExport {
            schema_version: SCHEMA_VERSION,
            model: info.model.clone(),
            checkpoint_sha256: info.checkpoint_sha256.clone(),
            candidate: i,
            path: candidate.clone(),
            agents: service.export(&rollout),
        };
        let file = run.write_json(&format!("candidate_{i:03}.json"), &export)?;
        println!("candidate {i}: {}", file.display());
    }
    Ok(())
}

fn serve(run: &Run, checkpoint: &Path, scenarios: Option<&Path>, bind: Option<&str>) -> Result<(), CliError> {
    let service = load_service(checkpoint)?;
    let list = match scenarios {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::config("--scenarios", format!("{}: {e}", p.display())))?;
            let bundle: ScenarioBundle = serde_json::from_str(&text).map_err(|e| CliError::config("--scenarios", e.to_string()))?;
            bundle.scenarios
        }
        None => {
            let info = service.info();
            let suite = SuiteConfig { approach: (8, 60.0), ..SuiteConfig::small() };
            let bundle = make_suite_with(run.seed, &suite)?;
            let cfg = WindowConfig::new(info.t_obs, info.t_pred);
            demo_scenarios(bundle.get("approach").expect("approach suite"), "approach", &cfg, run.cfg.synth.demo_scenarios, CLOSE_RADIUS)?
        }
    };
    let mut inputs = vec![checkpoint.to_path_buf()];
    inputs.extend(scenarios.map(Path::to_path_buf));
    run.start(inputs)?;
    let service = service.with_scenarios(list)?;
    let bind = bind.unwrap_or(&run.cfg.serve.bind);
    server::serve(service, bind, run.workers.max(2))?;
    Ok(())
}


#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckResult {
    pub loss: LossMode,
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

fn gradcheck(run: &Run) -> Result<(), CliError> {
    run.start(Vec::new())?;
    let modes = match run.loss_flag {
        Some(l) => vec![l],
        None => vec![LossMode::Position, LossMode::Velocity],
    };
    let m = &run.cfg.model;
    let mut results = Vec::new();
    for mode in modes {
        let cfg = ModelConfig {
            edge_hidden: m.edge_hidden,
            node_hidden: m.node_hidden,
            embedding: m.embedding,
            attention_dim: m.attention_dim,
            attention_scale: m.attention_scale,
            ..ModelConfig::new(2, 4, 2, mode)
        };
        let report = gradient_check(cfg, run.seed)?;
        let passed = report.max_rel_error < GRADCHECK_TOLERANCE;
        println!("{}: max relative error {:.3e} over {} coordinates", mode.as_str(), report.max_rel_error, report.checked);
        results.push(GradcheckResult { loss: mode, max_rel_error: report.max_rel_error, checked: report.checked, passed });
    }
    run.write_json("gradcheck.json", &results)?;
    if results.iter().any(|r| !r.passed) {
        return Err(CliError::Failed(format!("relative error at or above {GRADCHECK_TOLERANCE:e}")));
    }
    Ok(())
}
