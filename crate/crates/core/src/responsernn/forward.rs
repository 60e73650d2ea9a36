//! Unrolled forward pass over windows' graphs and its backward pass.
//!
//! Step `t` consumes node positions at `t` and emits, for every present
//! non-controlled node, a distribution over its position at `t + 1`. Outputs
//! of steps `t_obs - 1 ..= len - 2` form the prediction horizon.

use std::borrow::Cow;
use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layout::EdgeFactor;
use super::ResponseRnn;
use crate::error::{Error, Result};
use crate::neural::{
    attention_backward, attention_forward, dense, lstm_backward, lstm_forward, relu_backward, relu_forward,
    AttentionCache, DenseCache, GaussianParams, LossConfig, LossMode, LstmCache, ParameterSet,
};
use crate::rollout::{GaussianTrack, RolloutResult};
use crate::stgraph::{build_graph, UnrolledGraph};
use crate::trajdata::{Point, SequenceWindow};

/// Source of non-controlled node inputs during the prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Feedback {
    /// Ground truth where available, otherwise the predicted mean.
    #[default]
    Teacher,
    /// The predicted mean.
    Mean,
    /// A draw from the predicted distribution.
    Sample,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions<'a> {
    pub feedback: Feedback,
    /// Robot positions for horizon steps `t_obs..len`, replacing the window's.
    pub robot_path: Option<&'a [Point]>,
    pub seed: u64,
    /// Keep activations so that [`ResponseRnn::backward`] can run.
    pub record: bool,
}

struct EdgeBatch {
    factor: usize,
    rows: Vec<usize>,
    embed: DenseCache,
    lstm: LstmCache,
}

struct NodeBatch {
    node_type: usize,
    nodes: Vec<usize>,
    attention: Vec<(AttentionCache, Vec<usize>)>,
    embed_x: DenseCache,
    embed_h: DenseCache,
    lstm: LstmCache,
}

#[derive(Default)]
struct StepRecord {
    spatial: Vec<EdgeBatch>,
    temporal: Vec<EdgeBatch>,
    nodes: Vec<NodeBatch>,
}

/// One window of a batched pass.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub window: &'a SequenceWindow,
    pub graph: Option<&'a UnrolledGraph>,
    /// Robot positions for horizon steps `t_obs..len`, replacing the window's.
    pub robot_path: Option<&'a [Point]>,
    /// Seed of the window's sampling stream.
    pub seed: u64,
}

impl<'a> BatchItem<'a> {
    pub fn new(window: &'a SequenceWindow) -> Self {
        Self { window, graph: None, robot_path: None, seed: 0 }
    }
}

/// Per-window outcome of a pass.
#[derive(Debug, Clone)]
pub struct WindowOutput {
    pub rollout: RolloutResult,
    /// Sum of weighted NLL terms over the horizon where ground truth exists.
    pub loss: f64,
    pub terms: usize,
}

/// Result of one unrolled pass over a batch of windows.
pub struct BatchPass {
    pub windows: Vec<WindowOutput>,
    spatial_rows: usize,
    agent_rows: usize,
    records: Vec<StepRecord>,
    /// Weighted gradient of the loss w.r.t. the raw head outputs, keyed by
    /// (step, agent row).
    head_grads: HashMap<(usize, usize), [f64; 5]>,
}

impl BatchPass {
    pub fn is_recorded(&self) -> bool {
        !self.records.is_empty()
    }

    pub fn loss(&self) -> f64 {
        self.windows.iter().map(|w| w.loss).sum()
    }

    pub fn terms(&self) -> usize {
        self.windows.iter().map(|w| w.terms).sum()
    }
}

/// Per-window state during a batched pass. Node `v` of the window owns
/// agent row `agent_off + v` and spatial rows `spatial_off + from * n + to`.
struct Slot<'a> {
    window: &'a SequenceWindow,
    graph: Cow<'a, UnrolledGraph>,
    n: usize,
    na: usize,
    spatial_off: usize,
    agent_off: usize,
    pos: Vec<Vec<Option<Point>>>,
    robot_path: Vec<Point>,
    tracks: Vec<Vec<GaussianParams>>,
    rng: ChaCha8Rng,
    loss_cfg: LossConfig,
    loss: f64,
    terms: usize,
}

fn scatter(dst: &mut Array2<f64>, rows: &[usize], src: &Array2<f64>) {
    for (i, &r) in rows.iter().enumerate() {
        dst.row_mut(r).assign(&src.row(i));
    }
}

fn points_to_rows(points: &[Point]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 2), |(i, j)| points[i][j])
}

impl ResponseRnn {
    fn check_window(&self, window: &SequenceWindow) -> Result<()> {
        if window.t_obs != self.config.t_obs || window.t_pred != self.config.t_pred {
            return Err(Error::HorizonMismatch {
                expected: (self.config.t_obs, self.config.t_pred),
                actual: (window.t_obs, window.t_pred),
            });
        }
        if window.robots.len() != 1 {
            return Err(Error::Contract(format!(
                "window {} has {} controlled agents, expected 1",
                window.id,
                window.robots.len()
            )));
        }
        let k = self.config.num_types;
        if let Some(bad) = window
            .agents
            .iter()
            .map(|a| a.agent_type)
            .chain(window.robots.iter().map(|r| r.agent_type))
            .find(|&t| t >= k)
        {
            return Err(Error::Contract(format!("agent type {bad} outside the model's {k} types")));
        }
        window.validate()
    }

    /// Runs the unrolled graph of one window; builds the graph when not given.
    pub fn forward_window(
        &self,
        window: &SequenceWindow,
        graph: Option<&UnrolledGraph>,
        opts: ForwardOptions<'_>,
    ) -> Result<BatchPass> {
        let item = BatchItem {
            window,
            graph,
            robot_path: opts.robot_path,
            seed: opts.seed,
        };
        self.forward_batch(&[item], opts.feedback, opts.record)
    }

    fn make_slot<'a>(&self, item: &BatchItem<'a>, spatial_off: usize, agent_off: usize) -> Result<Slot<'a>> {
        let window = item.window;
        self.check_window(window)?;
        let graph = match item.graph {
            Some(g) => Cow::Borrowed(g),
            None => Cow::Owned(build_graph(window)),
        };
        if let Some(path) = item.robot_path {
            if path.len() != window.t_pred {
                return Err(Error::Contract(format!(
                    "robot path has {} positions, horizon is {}",
                    path.len(),
                    window.t_pred
                )));
            }
            if path.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                return Err(Error::Contract("robot path has non-finite positions".into()));
            }
        }
        let t_obs = window.t_obs;
        let n = graph.nodes.len();
        let na = graph.num_agents;
        let robot_path: Vec<Point> = match item.robot_path {
            Some(p) => p.to_vec(),
            None => window.robot_future().to_vec(),
        };
        let mut pos: Vec<Vec<Option<Point>>> = vec![vec![None; n]; window.len()];
        for (t, row) in pos.iter_mut().enumerate() {
            if t < t_obs {
                for v in 0..na {
                    row[v] = window.agents[v].positions[t];
                }
            }
            for (r, robot) in window.robots.iter().enumerate() {
                row[na + r] = Some(if t < t_obs { robot.positions[t] } else { robot_path[t - t_obs] });
            }
        }
        Ok(Slot {
            window,
            graph,
            n,
            na,
            spatial_off,
            agent_off,
            pos,
            robot_path,
            tracks: vec![Vec::with_capacity(window.t_pred); na],
            rng: ChaCha8Rng::seed_from_u64(item.seed),
            loss_cfg: self.loss_config(window.dt),
            loss: 0.0,
            terms: 0,
        })
    }

    /// Runs several windows through one unrolled pass. Their graphs stay
    /// disjoint; batching only shares the matrix products per factor.
    pub fn forward_batch(&self, items: &[BatchItem<'_>], feedback: Feedback, record: bool) -> Result<BatchPass> {
        if items.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let mut slots = Vec::with_capacity(items.len());
        let (mut spatial_rows, mut agent_rows) = (0, 0);
        for item in items {
            let slot = self.make_slot(item, spatial_rows, agent_rows)?;
            spatial_rows += slot.n * slot.n;
            agent_rows += slot.na;
            slots.push(slot);
        }

        let cfg = &self.config;
        let params = &self.params;
        let layout = &self.layout;
        let k = cfg.num_types;
        let t_obs = cfg.t_obs;
        let len = cfg.t_obs + cfg.t_pred;
        let (eh, nh) = (cfg.edge_hidden, cfg.node_hidden);

        let mut spatial_h = Array2::<f64>::zeros((spatial_rows, eh));
        let mut spatial_c = Array2::<f64>::zeros((spatial_rows, eh));
        let mut temporal_h = Array2::<f64>::zeros((agent_rows, eh));
        let mut temporal_c = Array2::<f64>::zeros((agent_rows, eh));
        let mut node_h = Array2::<f64>::zeros((agent_rows, nh));
        let mut node_c = Array2::<f64>::zeros((agent_rows, nh));

        let mut records = Vec::new();
        let mut head_grads = HashMap::new();

        let run_edges = |factor: &EdgeFactor, index: usize, rows: Vec<usize>, feats: Vec<Point>, h: &mut Array2<f64>, c: &mut Array2<f64>| {
            let embed = relu_forward(params.mat(factor.embed_w), params.vec(factor.embed_b), points_to_rows(&feats));
            let h_prev = h.select(Axis(0), &rows);
            let c_prev = c.select(Axis(0), &rows);
            let lstm = lstm_forward(
                params.mat(factor.lstm_w),
                params.vec(factor.lstm_b),
                embed.output.view(),
                h_prev.view(),
                c_prev.view(),
            );
            scatter(h, &rows, &lstm.h);
            scatter(c, &rows, &lstm.c);
            EdgeBatch { factor: index, rows, embed, lstm }
        };

        for t in 0..len - 1 {
            let mut step_record = StepRecord::default();

            let mut groups: Vec<(Vec<usize>, Vec<Point>)> = vec![(Vec::new(), Vec::new()); k * k];
            for slot in &slots {
                let graph = &slot.graph;
                for e in &graph.steps[t].spatial {
                    let a = slot.pos[t][e.from].ok_or_else(|| missing(e.from, t))?;
                    let to_t = if graph.is_controlled(e.to) { t + 1 } else { t };
                    let b = slot.pos[to_t][e.to].ok_or_else(|| missing(e.to, to_t))?;
                    let g = &mut groups[e.factor.0 * k + e.factor.1];
                    g.0.push(slot.spatial_off + e.from * slot.n + e.to);
                    g.1.push([a[0] - b[0], a[1] - b[1]]);
                }
            }
            for (u, (rows, feats)) in groups.into_iter().enumerate() {
                if !rows.is_empty() {
                    let batch = run_edges(&layout.spatial[u], u, rows, feats, &mut spatial_h, &mut spatial_c);
                    step_record.spatial.push(batch);
                }
            }

            if t > 0 {
                let mut groups: Vec<(Vec<usize>, Vec<Point>)> = vec![(Vec::new(), Vec::new()); k];
                for slot in &slots {
                    for e in &slot.graph.steps[t - 1].temporal {
                        let v = e.node;
                        let a = slot.pos[t - 1][v].ok_or_else(|| missing(v, t - 1))?;
                        let b = slot.pos[t][v].ok_or_else(|| missing(v, t))?;
                        let g = &mut groups[slot.graph.nodes[v].agent_type];
                        g.0.push(slot.agent_off + v);
                        g.1.push([(b[0] - a[0]) / cfg.motion_scale, (b[1] - a[1]) / cfg.motion_scale]);
                    }
                }
                for (kt, (rows, feats)) in groups.into_iter().enumerate() {
                    if !rows.is_empty() {
                        let batch = run_edges(&layout.node[kt].temporal, kt, rows, feats, &mut temporal_h, &mut temporal_c);
                        step_record.temporal.push(batch);
                    }
                }
            }

            // (slot, local node) per type
            let mut by_type: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
            for (b, slot) in slots.iter().enumerate() {
                for &v in slot.graph.steps[t].nodes.iter().filter(|&&v| v < slot.na) {
                    by_type[slot.graph.nodes[v].agent_type].push((b, v));
                }
            }
            for (kt, members) in by_type.into_iter().enumerate() {
                if members.is_empty() {
                    continue;
                }
                let f = &layout.node[kt];
                let m = members.len();
                let nodes: Vec<usize> = members.iter().map(|&(b, v)| slots[b].agent_off + v).collect();
                let mut h_in = Array2::<f64>::zeros((m, 2 * eh));
                let mut attention = Vec::with_capacity(m);
                for (i, &(b, v)) in members.iter().enumerate() {
                    let slot = &slots[b];
                    let rows: Vec<usize> = slot
                        .graph
                        .outgoing(t, v)
                        .map(|e| slot.spatial_off + e.from * slot.n + e.to)
                        .collect();
                    let h_s = spatial_h.select(Axis(0), &rows);
                    let (att, cache) = attention_forward(
                        params.mat(layout.query),
                        params.mat(layout.key),
                        temporal_h.row(nodes[i]),
                        h_s.view(),
                        cfg.attention_scale,
                    );
                    h_in.slice_mut(s![i, ..eh]).assign(&temporal_h.row(nodes[i]));
                    h_in.slice_mut(s![i, eh..]).assign(&att);
                    attention.push((cache, rows));
                }
                let x: Vec<Point> = members
                    .iter()
                    .map(|&(b, v)| slots[b].pos[t][v].expect("present node has a position"))
                    .collect();
                let embed_x = relu_forward(params.mat(f.embed_x_w), params.vec(f.embed_x_b), points_to_rows(&x));
                let embed_h = relu_forward(params.mat(f.embed_h_w), params.vec(f.embed_h_b), h_in);
                let input = concatenate(Axis(1), &[embed_x.output.view(), embed_h.output.view()]).expect("same batch");
                let h_prev = node_h.select(Axis(0), &nodes);
                let c_prev = node_c.select(Axis(0), &nodes);
                let lstm = lstm_forward(params.mat(f.lstm_w), params.vec(f.lstm_b), input.view(), h_prev.view(), c_prev.view());
                scatter(&mut node_h, &nodes, &lstm.h);
                scatter(&mut node_c, &nodes, &lstm.c);

                if t + 1 >= t_obs {
                    let raw = dense::linear_forward(params.mat(f.head_w), params.vec(f.head_b), lstm.h.view());
                    for (i, &(b, v)) in members.iter().enumerate() {
                        let slot = &mut slots[b];
                        let raw_v = [raw[[i, 0]], raw[[i, 1]], raw[[i, 2]], raw[[i, 3]], raw[[i, 4]]];
                        let g = GaussianParams::from_raw(raw_v);
                        let here = slot.pos[t][v].expect("present node has a position");
                        let (shift, scale, predicted_dist) = match cfg.loss_mode {
                            LossMode::Position => ([0.0, 0.0], 1.0, g),
                            LossMode::Velocity => {
                                let s = cfg.motion_scale;
                                (here, s, g.affine([s, s], here))
                            }
                        };
                        slot.tracks[v].push(predicted_dist);

                        let agent = &slot.window.agents[v];
                        let truth = agent.positions[t + 1];
                        if let (Some(y), false) = (truth, agent.loss_excluded) {
                            let target = [y[0] - shift[0], y[1] - shift[1]];
                            let weight = slot.loss_cfg.step_weight(agent.positions[t], y, target);
                            // NLL of the rescaled target plus the Jacobian term
                            let (nll, grad) = g.nll_grad_raw([target[0] / scale, target[1] / scale]);
                            slot.loss += weight * (nll + 2.0 * scale.ln());
                            slot.terms += 1;
                            if record {
                                head_grads.insert((t, nodes[i]), grad.map(|d| d * weight));
                            }
                        }

                        let mean = predicted_dist.mean();
                        slot.pos[t + 1][v] = Some(match feedback {
                            Feedback::Teacher => truth.unwrap_or(mean),
                            Feedback::Mean => mean,
                            Feedback::Sample => predicted_dist.sample(&mut slot.rng),
                        });
                    }
                }
                if record {
                    step_record.nodes.push(NodeBatch {
                        node_type: kt,
                        nodes,
                        attention,
                        embed_x,
                        embed_h,
                        lstm,
                    });
                }
            }
            if record {
                records.push(step_record);
            }
        }

        let windows = slots
            .into_iter()
            .map(|mut slot| {
                let window = slot.window;
                let agents = slot
                    .graph
                    .predicted_agents()
                    .iter()
                    .map(|&v| GaussianTrack {
                        agent_id: window.agents[v].agent_id,
                        agent_type: window.agents[v].agent_type,
                        steps: std::mem::take(&mut slot.tracks[v]),
                    })
                    .collect();
                WindowOutput {
                    rollout: RolloutResult {
                        window_id: window.id.clone(),
                        t_obs,
                        t_pred: window.t_pred,
                        agents,
                        robot_path: slot.robot_path,
                    },
                    loss: slot.loss,
                    terms: slot.terms,
                }
            })
            .collect();
        Ok(BatchPass {
            windows,
            spatial_rows,
            agent_rows,
            records,
            head_grads,
        })
    }

    /// Accumulates the gradient of `pass.loss() * scale` into `grads`.
    pub fn backward(&self, pass: &BatchPass, scale: f64, grads: &mut ParameterSet) -> Result<()> {
        if !pass.is_recorded() {
            return Err(Error::Contract("backward needs a recorded forward pass".into()));
        }
        let cfg = &self.config;
        let params = &self.params;
        let layout = &self.layout;
        let (eh, nh) = (cfg.edge_hidden, cfg.node_hidden);
        let ns = pass.spatial_rows;
        let na = pass.agent_rows;

        let mut d_spatial_h = Array2::<f64>::zeros((ns, eh));
        let mut d_spatial_c = Array2::<f64>::zeros((ns, eh));
        let mut d_temporal_h = Array2::<f64>::zeros((na, eh));
        let mut d_temporal_c = Array2::<f64>::zeros((na, eh));
        let mut d_node_h = Array2::<f64>::zeros((na, nh));
        let mut d_node_c = Array2::<f64>::zeros((na, nh));

        let edge_backward = |factor: &EdgeFactor, batch: &EdgeBatch, dh: &mut Array2<f64>, dc: &mut Array2<f64>, grads: &mut ParameterSet| {
            let dh_out = dh.select(Axis(0), &batch.rows);
            let dc_out = dc.select(Axis(0), &batch.rows);
            let g = {
                let (dw, db) = grads.mat_vec_mut(factor.lstm_w, factor.lstm_b);
                lstm_backward(params.mat(factor.lstm_w), &batch.lstm, dh_out.view(), dc_out.view(), dw, db)
            };
            scatter(dh, &batch.rows, &g.dh_prev);
            scatter(dc, &batch.rows, &g.dc_prev);
            let (dw, db) = grads.mat_vec_mut(factor.embed_w, factor.embed_b);
            relu_backward(params.mat(factor.embed_w), &batch.embed, g.dx.view(), dw, db);
        };

        for (t, record) in pass.records.iter().enumerate().rev() {
            for batch in &record.nodes {
                let f = &layout.node[batch.node_type];
                let m = batch.nodes.len();
                let mut d_raw = Array2::<f64>::zeros((m, 5));
                for (i, &v) in batch.nodes.iter().enumerate() {
                    if let Some(g) = pass.head_grads.get(&(t, v)) {
                        for j in 0..5 {
                            d_raw[[i, j]] = g[j] * scale;
                        }
                    }
                }
                let mut dh = {
                    let (dw, db) = grads.mat_vec_mut(f.head_w, f.head_b);
                    dense::linear_backward(params.mat(f.head_w), batch.lstm.h.view(), d_raw.view(), dw, db)
                };
                dh += &d_node_h.select(Axis(0), &batch.nodes);
                let dc = d_node_c.select(Axis(0), &batch.nodes);
                let g = {
                    let (dw, db) = grads.mat_vec_mut(f.lstm_w, f.lstm_b);
                    lstm_backward(params.mat(f.lstm_w), &batch.lstm, dh.view(), dc.view(), dw, db)
                };
                scatter(&mut d_node_h, &batch.nodes, &g.dh_prev);
                scatter(&mut d_node_c, &batch.nodes, &g.dc_prev);
                let em = cfg.embedding;
                {
                    let (dw, db) = grads.mat_vec_mut(f.embed_x_w, f.embed_x_b);
                    relu_backward(params.mat(f.embed_x_w), &batch.embed_x, g.dx.slice(s![.., ..em]), dw, db);
                }
                let d_in = {
                    let (dw, db) = grads.mat_vec_mut(f.embed_h_w, f.embed_h_b);
                    relu_backward(params.mat(f.embed_h_w), &batch.embed_h, g.dx.slice(s![.., em..]), dw, db)
                };
                for (i, &v) in batch.nodes.iter().enumerate() {
                    let (cache, rows) = &batch.attention[i];
                    let (dq, dk) = grads.mat_pair_mut(layout.query, layout.key);
                    let (dh_t, dh_s) = attention_backward(
                        params.mat(layout.query),
                        params.mat(layout.key),
                        cache,
                        d_in.slice(s![i, eh..]),
                        dq,
                        dk,
                    );
                    let mut row = d_temporal_h.row_mut(v);
                    row += &d_in.slice(s![i, ..eh]);
                    row += &dh_t;
                    for (j, &r) in rows.iter().enumerate() {
                        let mut row = d_spatial_h.row_mut(r);
                        row += &dh_s.row(j);
                    }
                }
            }
            for batch in &record.temporal {
                edge_backward(&layout.node[batch.factor].temporal, batch, &mut d_temporal_h, &mut d_temporal_c, grads);
            }
            for batch in &record.spatial {
                edge_backward(&layout.spatial[batch.factor], batch, &mut d_spatial_h, &mut d_spatial_c, grads);
            }
        }
        Ok(())
    }
}

fn missing(node: usize, t: usize) -> Error {
    Error::Structural(format!("node {node} has no position at step {t}"))
}
