//! Agent-independent recurrent encoder-decoder over displacements.
//!
//! A two-layer LSTM encoder reads each agent's observed per-step
//! displacements; a two-layer LSTM decoder, starting from the encoder state,
//! emits a bivariate Gaussian over the next displacement and consumes its own
//! output on the following step.

use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::neural::{
    dense, lstm_backward, lstm_forward, relu_backward, relu_forward, DenseCache, GaussianParams, LossConfig, LossMode,
    LstmCache, ParamId, ParameterSet, GAUSSIAN_OUTPUTS,
};
use crate::responsernn::Feedback;
use crate::rollout::{GaussianTrack, Predictor, RolloutResult};
use crate::training::Trainable;
use crate::trajdata::{Point, SequenceWindow, StandardizationStats, TypeLabels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedConfig {
    pub hidden: usize,
    pub embedding: usize,
    pub t_obs: usize,
    pub t_pred: usize,
}

impl RedConfig {
    pub fn new(t_obs: usize, t_pred: usize) -> Self {
        Self { hidden: 64, embedding: 64, t_obs, t_pred }
    }

    pub fn with_width(self, width: usize) -> Self {
        Self { hidden: width, embedding: width, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("hidden", self.hidden), ("embedding", self.embedding), ("t_obs", self.t_obs), ("t_pred", self.t_pred)] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.t_obs < 2 {
            return Err(Error::config("t_obs", "needs at least two observed steps"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Stack {
    embed_w: ParamId,
    embed_b: ParamId,
    lstm1_w: ParamId,
    lstm1_b: ParamId,
    lstm2_w: ParamId,
    lstm2_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct RedLayout {
    encoder: Stack,
    decoder: Stack,
    head_w: ParamId,
    head_b: ParamId,
}

const ARRAY_NAMES: [&str; 14] = [
    "encoder.embed.w",
    "encoder.embed.b",
    "encoder.lstm1.w",
    "encoder.lstm1.b",
    "encoder.lstm2.w",
    "encoder.lstm2.b",
    "decoder.embed.w",
    "decoder.embed.b",
    "decoder.lstm1.w",
    "decoder.lstm1.b",
    "decoder.lstm2.w",
    "decoder.lstm2.b",
    "head.w",
    "head.b",
];

fn shapes(cfg: &RedConfig) -> [Vec<usize>; 14] {
    let (h, em) = (cfg.hidden, cfg.embedding);
    let stack = || [vec![em, 2], vec![em], vec![4 * h, em + h], vec![4 * h], vec![4 * h, 2 * h], vec![4 * h]];
    let [a, b, c, d, e, f] = stack();
    let [g, i, j, k, l, m] = stack();
    [a, b, c, d, e, f, g, i, j, k, l, m, vec![GAUSSIAN_OUTPUTS, h], vec![GAUSSIAN_OUTPUTS]]
}

impl RedLayout {
    fn from_ids(ids: &[ParamId]) -> Self {
        let stack = |o: usize| Stack {
            embed_w: ids[o],
            embed_b: ids[o + 1],
            lstm1_w: ids[o + 2],
            lstm1_b: ids[o + 3],
            lstm2_w: ids[o + 4],
            lstm2_b: ids[o + 5],
        };
        Self { encoder: stack(0), decoder: stack(6), head_w: ids[12], head_b: ids[13] }
    }
}

struct StepRecord {
    decoder: bool,
    rows: Vec<usize>,
    embed: DenseCache,
    l1: LstmCache,
    l2: LstmCache,
    /// Weighted raw-output gradients of decoder steps.
    head_grads: Option<Array2<f64>>,
}

/// Per-window outcome of a RED pass.
#[derive(Debug, Clone)]
pub struct RedOutput {
    pub rollout: RolloutResult,
    pub loss: f64,
    pub terms: usize,
}

pub struct RedPass {
    pub windows: Vec<RedOutput>,
    rows: usize,
    records: Vec<StepRecord>,
}

#[derive(Debug, Clone)]
pub struct RedModel {
    config: RedConfig,
    stats: StandardizationStats,
    params: ParameterSet,
    layout: RedLayout,
}

fn to_rows(points: &[Point]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 2), |(i, j)| points[i][j])
}

fn scatter(dst: &mut Array2<f64>, rows: &[usize], src: &Array2<f64>) {
    for (i, &r) in rows.iter().enumerate() {
        dst.row_mut(r).assign(&src.row(i));
    }
}

impl RedModel {
    pub const CHECKPOINT_KIND: &'static str = "red";

    pub fn new(config: RedConfig, stats: StandardizationStats, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let mut ids = Vec::new();
        for (name, shape) in ARRAY_NAMES.iter().zip(shapes(&config)) {
            let id = if shape.len() == 2 {
                params.push_uniform(*name, &shape, 1.0 / (shape[1] as f64).sqrt(), &mut rng)
            } else if name.contains("lstm") {
                let h = shape[0] / 4;
                let mut b = Array1::<f64>::zeros(shape[0]);
                b.slice_mut(ndarray::s![h..2 * h]).fill(1.0);
                params.push(*name, b.into_dyn())
            } else {
                params.push(*name, ArrayD::zeros(IxDyn(&shape)))
            };
            ids.push(id);
        }
        Ok(Self { config, stats, params, layout: RedLayout::from_ids(&ids) })
    }

    pub fn from_parts(config: RedConfig, stats: StandardizationStats, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        if params.len() != ARRAY_NAMES.len() {
            return Err(Error::Checkpoint(format!("expected {} arrays, found {}", ARRAY_NAMES.len(), params.len())));
        }
        let mut ids = Vec::new();
        for (name, shape) in ARRAY_NAMES.iter().zip(shapes(&config)) {
            let id = params.id(name).ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!("array {name} has shape {:?}, expected {shape:?}", params.get(id).shape())));
            }
            ids.push(id);
        }
        if !params.is_finite() {
            return Err(Error::Checkpoint("parameters contain non-finite values".into()));
        }
        Ok(Self { config, stats, params, layout: RedLayout::from_ids(&ids) })
    }

    pub fn config(&self) -> &RedConfig {
        &self.config
    }

    pub fn stats(&self) -> &StandardizationStats {
        &self.stats
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn to_checkpoint(&self, labels: Option<TypeLabels>, training: Option<serde_json::Value>) -> Checkpoint {
        Checkpoint {
            kind: Self::CHECKPOINT_KIND.into(),
            model: serde_json::to_value(self.config).expect("config serializes"),
            stats: self.stats,
            labels,
            training,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Self::from_parts(ckpt.model_config(Self::CHECKPOINT_KIND)?, ckpt.stats, ckpt.params.clone())
    }

    /// Displacement targets with the same stationary down-weighting as the
    /// velocity-mode model.
    fn loss_config(&self, dt: f64) -> LossConfig {
        LossConfig::new(LossMode::Velocity, dt, [self.stats.std_x, self.stats.std_y])
    }

    fn check_window(&self, window: &SequenceWindow) -> Result<()> {
        if window.t_obs != self.config.t_obs || window.t_pred != self.config.t_pred {
            return Err(Error::HorizonMismatch {
                expected: (self.config.t_obs, self.config.t_pred),
                actual: (window.t_obs, window.t_pred),
            });
        }
        window.validate()
    }

    /// Runs every agent present at the last observed step of each window.
    /// `seeds[b]` drives sampling for window `b`.
    pub fn forward_batch(&self, windows: &[&SequenceWindow], seeds: &[u64], feedback: Feedback, record: bool) -> Result<RedPass> {
        if windows.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        if seeds.len() != windows.len() {
            return Err(Error::Contract("one seed per window required".into()));
        }
        let cfg = &self.config;
        let params = &self.params;
        let (t_obs, len, hidden) = (cfg.t_obs, cfg.t_obs + cfg.t_pred, cfg.hidden);

        // (window, agent, positions)
        let mut rows: Vec<(usize, usize, Vec<Option<Point>>)> = Vec::new();
        for (b, w) in windows.iter().enumerate() {
            self.check_window(w)?;
            for (v, a) in w.agents.iter().enumerate() {
                if a.present(t_obs - 1) {
                    let mut pos = a.positions[..t_obs].to_vec();
                    pos.resize(len, None);
                    rows.push((b, v, pos));
                }
            }
        }
        let n = rows.len();
        let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect();
        let loss_cfgs: Vec<LossConfig> = windows.iter().map(|w| self.loss_config(w.dt)).collect();
        let mut tracks: Vec<Vec<GaussianParams>> = vec![Vec::with_capacity(cfg.t_pred); n];
        let mut losses = vec![(0.0, 0usize); windows.len()];

        let mut h1 = Array2::<f64>::zeros((n, hidden));
        let mut c1 = h1.clone();
        let mut h2 = h1.clone();
        let mut c2 = h1.clone();
        let mut records = Vec::new();

        let disp = |pos: &[Option<Point>], t: usize| match (pos[t - 1], pos[t]) {
            (Some(a), Some(b)) => Some([b[0] - a[0], b[1] - a[1]]),
            _ => None,
        };

        for t in 1..len - 1 {
            let decoder = t + 1 >= t_obs;
            let stack = if decoder { &self.layout.decoder } else { &self.layout.encoder };
            let mut active = Vec::new();
            let mut feats = Vec::new();
            for (r, (_, _, pos)) in rows.iter().enumerate() {
                match (disp(pos, t), decoder) {
                    (Some(d), _) => {
                        active.push(r);
                        feats.push(d);
                    }
                    (None, true) => {
                        active.push(r);
                        feats.push([0.0, 0.0]);
                    }
                    (None, false) => {}
                }
            }
            if active.is_empty() {
                continue;
            }
            let embed = relu_forward(params.mat(stack.embed_w), params.vec(stack.embed_b), to_rows(&feats));
            let l1 = lstm_forward(
                params.mat(stack.lstm1_w),
                params.vec(stack.lstm1_b),
                embed.output.view(),
                h1.select(Axis(0), &active).view(),
                c1.select(Axis(0), &active).view(),
            );
            scatter(&mut h1, &active, &l1.h);
            scatter(&mut c1, &active, &l1.c);
            let l2 = lstm_forward(
                params.mat(stack.lstm2_w),
                params.vec(stack.lstm2_b),
                l1.h.view(),
                h2.select(Axis(0), &active).view(),
                c2.select(Axis(0), &active).view(),
            );
            scatter(&mut h2, &active, &l2.h);
            scatter(&mut c2, &active, &l2.c);

            let mut head_grads = None;
            if decoder {
                let raw = dense::linear_forward(params.mat(self.layout.head_w), params.vec(self.layout.head_b), l2.h.view());
                let mut grads = Array2::<f64>::zeros((active.len(), GAUSSIAN_OUTPUTS));
                for (i, &r) in active.iter().enumerate() {
                    let (b, v, pos) = &mut rows[r];
                    let agent = &windows[*b].agents[*v];
                    let g = GaussianParams::from_raw([raw[[i, 0]], raw[[i, 1]], raw[[i, 2]], raw[[i, 3]], raw[[i, 4]]]);
                    let here = pos[t].expect("decoder rows are filled");
                    let dist = g.affine([1.0, 1.0], here);
                    tracks[r].push(dist);
                    let truth = agent.positions[t + 1];
                    if let (Some(y), false) = (truth, agent.loss_excluded) {
                        let target = [y[0] - here[0], y[1] - here[1]];
                        let weight = loss_cfgs[*b].step_weight(agent.positions[t], y, target);
                        let (nll, grad) = g.nll_grad_raw(target);
                        losses[*b].0 += weight * nll;
                        losses[*b].1 += 1;
                        for (j, d) in grad.iter().enumerate() {
                            grads[[i, j]] = d * weight;
                        }
                    }
                    pos[t + 1] = Some(match feedback {
                        Feedback::Teacher => truth.unwrap_or(dist.mean()),
                        Feedback::Mean => dist.mean(),
                        Feedback::Sample => dist.sample(&mut rngs[*b]),
                    });
                }
                head_grads = Some(grads);
            }
            if record {
                records.push(StepRecord { decoder, rows: active, embed, l1, l2, head_grads });
            }
        }

        let mut per_window: Vec<Vec<GaussianTrack>> = vec![Vec::new(); windows.len()];
        for ((b, v, _), steps) in rows.iter().zip(tracks) {
            let a = &windows[*b].agents[*v];
            per_window[*b].push(GaussianTrack { agent_id: a.agent_id, agent_type: a.agent_type, steps });
        }
        let outputs = per_window
            .into_iter()
            .zip(windows)
            .zip(losses)
            .map(|((agents, w), (loss, terms))| RedOutput {
                rollout: RolloutResult {
                    window_id: w.id.clone(),
                    t_obs,
                    t_pred: w.t_pred,
                    agents,
                    robot_path: w.robot_future().to_vec(),
                },
                loss,
                terms,
            })
            .collect();
        Ok(RedPass { windows: outputs, rows: n, records })
    }

    /// Accumulates the gradient of the pass's total loss times `scale`.
    pub fn backward(&self, pass: &RedPass, scale: f64, grads: &mut ParameterSet) -> Result<()> {
        if pass.records.is_empty() {
            return Err(Error::Contract("backward needs a recorded forward pass".into()));
        }
        let params = &self.params;
        let hidden = self.config.hidden;
        let mut dh1 = Array2::<f64>::zeros((pass.rows, hidden));
        let mut dc1 = dh1.clone();
        let mut dh2 = dh1.clone();
        let mut dc2 = dh1.clone();
        for rec in pass.records.iter().rev() {
            let stack = if rec.decoder { &self.layout.decoder } else { &self.layout.encoder };
            let mut d_out = dh2.select(Axis(0), &rec.rows);
            if let Some(hg) = &rec.head_grads {
                let d_raw = hg * scale;
                let (dw, db) = grads.mat_vec_mut(self.layout.head_w, self.layout.head_b);
                d_out += &dense::linear_backward(params.mat(self.layout.head_w), rec.l2.h.view(), d_raw.view(), dw, db);
            }
            let g2 = {
                let (dw, db) = grads.mat_vec_mut(stack.lstm2_w, stack.lstm2_b);
                lstm_backward(params.mat(stack.lstm2_w), &rec.l2, d_out.view(), dc2.select(Axis(0), &rec.rows).view(), dw, db)
            };
            scatter(&mut dh2, &rec.rows, &g2.dh_prev);
            scatter(&mut dc2, &rec.rows, &g2.dc_prev);
            let d1 = g2.dx + dh1.select(Axis(0), &rec.rows);
            let g1 = {
                let (dw, db) = grads.mat_vec_mut(stack.lstm1_w, stack.lstm1_b);
                lstm_backward(params.mat(stack.lstm1_w), &rec.l1, d1.view(), dc1.select(Axis(0), &rec.rows).view(), dw, db)
            };
            scatter(&mut dh1, &rec.rows, &g1.dh_prev);
            scatter(&mut dc1, &rec.rows, &g1.dc_prev);
            let (dw, db) = grads.mat_vec_mut(stack.embed_w, stack.embed_b);
            relu_backward(params.mat(stack.embed_w), &rec.embed, g1.dx.view(), dw, db);
        }
        Ok(())
    }

    pub fn batch_loss_and_gradient(&self, windows: &[&SequenceWindow]) -> Result<(RedPass, ParameterSet)> {
        let seeds = vec![0; windows.len()];
        let pass = self.forward_batch(windows, &seeds, Feedback::Teacher, true)?;
        if pass.windows.iter().all(|w| w.terms == 0) {
            let ids: Vec<&str> = windows.iter().map(|w| w.id.as_str()).collect();
            return Err(Error::Data(format!("no loss terms in {}", ids.join(", "))));
        }
        let mut grads = self.params.zeros_like();
        self.backward(&pass, 1.0, &mut grads)?;
        Ok((pass, grads))
    }

    /// Teacher-forced summed loss and term count of one window.
    pub fn loss(&self, window: &SequenceWindow) -> Result<(f64, usize)> {
        let pass = self.forward_batch(&[window], &[0], Feedback::Teacher, false)?;
        Ok((pass.windows[0].loss, pass.windows[0].terms))
    }

    pub fn rollout(&self, window: &SequenceWindow, feedback: Feedback, seed: u64) -> Result<RolloutResult> {
        let mut pass = self.forward_batch(&[window], &[seed], feedback, false)?;
        Ok(pass.windows.remove(0).rollout)
    }

    pub fn predict_mean(&self, window: &SequenceWindow) -> Result<RolloutResult> {
        self.rollout(window, Feedback::Mean, 0)
    }
}

impl Trainable for RedModel {
    fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    fn batch_gradient(&self, windows: &[&SequenceWindow]) -> Result<(Vec<(f64, usize)>, ParameterSet)> {
        let (pass, grads) = self.batch_loss_and_gradient(windows)?;
        Ok((pass.windows.iter().map(|w| (w.loss, w.terms)).collect(), grads))
    }

    fn batch_loss(&self, windows: &[&SequenceWindow]) -> Result<Vec<(f64, usize)>> {
        let seeds = vec![0; windows.len()];
        let pass = self.forward_batch(windows, &seeds, Feedback::Teacher, false)?;
        Ok(pass.windows.iter().map(|w| (w.loss, w.terms)).collect())
    }
}

impl Predictor for RedModel {
    fn name(&self) -> String {
        "RED".into()
    }

    fn predict(&self, window: &SequenceWindow) -> Result<RolloutResult> {
        self.predict_mean(window)
    }
}
