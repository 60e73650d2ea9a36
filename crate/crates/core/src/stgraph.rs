//! Directed spatio-temporal graph over the agents of one window.
//!
//! Nodes are indexed with all non-controlled agents first (in window order)
//! followed by the controlled agents. At every timestep each present
//! non-controlled node has an edge to every other present non-controlled node
//! and a single edge to each controlled node; controlled nodes have no
//! outgoing edges and no temporal edges. For prediction timesteps
//! (`t >= t_obs`) the structure is frozen to that of the last observed step.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trajdata::{Point, SequenceWindow};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeRef {
    pub agent_id: u32,
    pub agent_type: usize,
    pub controlled: bool,
    /// Presence per unrolled timestep (after freezing).
    pub present_at: Vec<bool>,
}

/// Edge `from -> to` at timestep `t`, parameterized by the ordered type pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SpatialEdge {
    pub from: usize,
    pub to: usize,
    pub t: usize,
    pub factor: (usize, usize),
}

/// Edge of node `node` from timestep `t` to `t + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TemporalEdge {
    pub node: usize,
    pub t: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GraphStep {
    pub nodes: Vec<usize>,
    pub spatial: Vec<SpatialEdge>,
    pub temporal: Vec<TemporalEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnrolledGraph {
    pub nodes: Vec<NodeRef>,
    /// Number of non-controlled nodes; they occupy indices `0..num_agents`.
    pub num_agents: usize,
    pub t_obs: usize,
    pub steps: Vec<GraphStep>,
}

impl UnrolledGraph {
    pub fn num_controlled(&self) -> usize {
        self.nodes.len() - self.num_agents
    }

    pub fn is_controlled(&self, node: usize) -> bool {
        node >= self.num_agents
    }

    /// Non-controlled nodes that receive predictions (present at the last
    /// observed step).
    pub fn predicted_agents(&self) -> Vec<usize> {
        (0..self.num_agents)
            .filter(|&v| self.nodes[v].present_at[self.t_obs - 1])
            .collect()
    }

    /// Outgoing spatial edges of `node` at step `t`, in edge order.
    pub fn outgoing(&self, t: usize, node: usize) -> impl Iterator<Item = &SpatialEdge> {
        self.steps[t].spatial.iter().filter(move |e| e.from == node)
    }

    /// Plain-text adjacency dump, stable across runs.
    pub fn to_adjacency_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "graph nodes={} agents={} t_obs={} steps={}",
            self.nodes.len(),
            self.num_agents,
            self.t_obs,
            self.steps.len()
        );
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(
                out,
                "node {i} id={} type={} controlled={}",
                n.agent_id,
                n.agent_type,
                u8::from(n.controlled)
            );
        }
        for (t, step) in self.steps.iter().enumerate() {
            let nodes: Vec<String> = step.nodes.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "t {t} nodes [{}]", nodes.join(","));
            for e in &step.spatial {
                let _ = writeln!(out, "  S {}->{} u=({},{})", e.from, e.to, e.factor.0, e.factor.1);
            }
            for e in &step.temporal {
                let _ = writeln!(out, "  T {} {}->{}", e.node, e.t, e.t + 1);
            }
        }
        out
    }
}

/// Builds the unrolled graph of a window from presence masks and agent types.
pub fn build_graph(window: &SequenceWindow) -> UnrolledGraph {
    let n_steps = window.len();
    let t_last = window.t_obs - 1;
    let freeze = |present: &dyn Fn(usize) -> bool| -> Vec<bool> {
        (0..n_steps)
            .map(|t| if t <= t_last { present(t) } else { present(t_last) })
            .collect()
    };

    let mut nodes: Vec<NodeRef> = window
        .agents
        .iter()
        .map(|a| NodeRef {
            agent_id: a.agent_id,
            agent_type: a.agent_type,
            controlled: false,
            present_at: freeze(&|t| a.present(t)),
        })
        .collect();
    let num_agents = nodes.len();
    nodes.extend(window.robots.iter().map(|r| NodeRef {
        agent_id: r.agent_id,
        agent_type: r.agent_type,
        controlled: true,
        present_at: vec![true; n_steps],
    }));

    let steps = (0..n_steps)
        .map(|t| {
            let present: Vec<usize> = (0..nodes.len()).filter(|&v| nodes[v].present_at[t]).collect();
            let mut spatial = Vec::new();
            for &a in present.iter().filter(|&&v| v < num_agents) {
                for &b in present.iter().filter(|&&b| b != a) {
                    spatial.push(SpatialEdge {
                        from: a,
                        to: b,
                        t,
                        factor: (nodes[a].agent_type, nodes[b].agent_type),
                    });
                }
            }
            let temporal = if t + 1 < n_steps {
                present
                    .iter()
                    .filter(|&&v| v < num_agents && nodes[v].present_at[t + 1])
                    .map(|&node| TemporalEdge { node, t })
                    .collect()
            } else {
                Vec::new()
            };
            GraphStep {
                nodes: present,
                spatial,
                temporal,
            }
        })
        .collect();

    UnrolledGraph {
        nodes,
        num_agents,
        t_obs: window.t_obs,
        steps,
    }
}

/// Node positions at each timestep; robots included. Indexed `[t][node]`.
pub type PositionTable = Vec<Vec<Option<Point>>>;

/// Positions from the window itself: ground truth for agents, the realized
/// path for robots.
pub fn ground_truth_positions(window: &SequenceWindow) -> PositionTable {
    (0..window.len())
        .map(|t| {
            window
                .agents
                .iter()
                .map(|a| a.positions[t])
                .chain(window.robots.iter().map(|r| Some(r.positions[t])))
                .collect()
        })
        .collect()
}

/// Input feature of a spatial edge: `x_from^t - x_to^t`, except that a
/// controlled endpoint contributes its next planned position `R^{t+1}`.
pub fn spatial_feature(graph: &UnrolledGraph, edge: &SpatialEdge, positions: &PositionTable) -> Result<Point> {
    let missing = |what: &str| {
        Error::Structural(format!(
            "spatial edge {}->{} at t={} has no {what} position",
            edge.from, edge.to, edge.t
        ))
    };
    let a = positions
        .get(edge.t)
        .and_then(|row| row[edge.from])
        .ok_or_else(|| missing("source"))?;
    let to_t = if graph.is_controlled(edge.to) { edge.t + 1 } else { edge.t };
    let b = positions
        .get(to_t)
        .and_then(|row| row[edge.to])
        .ok_or_else(|| missing("target"))?;
    Ok([a[0] - b[0], a[1] - b[1]])
}

/// Input feature of a temporal edge `t -> t + 1`: the displacement
/// `x^{t+1} - x^t`, consumed by the temporal RNN at step `t + 1`.
pub fn temporal_feature(edge: &TemporalEdge, positions: &PositionTable) -> Result<Point> {
    let get = |t: usize| positions.get(t).and_then(|row| row[edge.node]);
    match (get(edge.t), get(edge.t + 1)) {
        (Some(a), Some(b)) => Ok([b[0] - a[0], b[1] - a[1]]),
        _ => Err(Error::Structural(format!(
            "temporal edge of node {} at t={} lacks an endpoint",
            edge.node, edge.t
        ))),
    }
}

/// Edge feature computed from the window's own positions.
pub fn edge_feature(graph: &UnrolledGraph, edge: &Edge, window: &SequenceWindow) -> Result<Point> {
    let positions = ground_truth_positions(window);
    match edge {
        Edge::Spatial(e) => spatial_feature(graph, e, &positions),
        Edge::Temporal(e) => temporal_feature(e, &positions),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Spatial(SpatialEdge),
    Temporal(TemporalEdge),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::{AgentSeries, RobotSeries};

    pub(crate) fn window_from_masks(masks: &[Vec<bool>], robots: usize, t_obs: usize) -> SequenceWindow {
        let n = masks.first().map_or(t_obs + 1, Vec::len);
        SequenceWindow {
            id: "w".into(),
            recording_id: "r".into(),
            start_frame: 0,
            t_obs,
            t_pred: n - t_obs,
            dt: 1.0 / 15.0,
            agents: masks
                .iter()
                .enumerate()
                .map(|(i, m)| AgentSeries {
                    agent_id: i as u32 + 10,
                    agent_type: i % 2,
                    positions: m
                        .iter()
                        .enumerate()
                        .map(|(t, &p)| p.then_some([i as f64, t as f64 * 0.1]))
                        .collect(),
                    loss_excluded: false,
                })
                .collect(),
            robots: (0..robots)
                .map(|r| RobotSeries {
                    agent_id: r as u32,
                    agent_type: 2,
                    positions: (0..n).map(|t| [-(r as f64), t as f64]).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn three_agents_one_robot() {
        let w = window_from_masks(&vec![vec![true; 4]; 3], 1, 2);
        let g = build_graph(&w);
        assert_eq!(g.steps[0].spatial.len(), 9);
        assert_eq!(g.steps[0].temporal.len(), 3);
        // robot receives edges but sends none
        assert!(g.steps[0].spatial.iter().all(|e| e.from < 3));
        assert_eq!(g.steps[0].spatial.iter().filter(|e| e.to == 3).count(), 3);
        assert_eq!(g.steps[0].spatial[0].factor, (0, 1));
    }

    #[test]
    fn lone_agent_has_no_spatial_edges() {
        let g = build_graph(&window_from_masks(&[vec![true; 3]], 0, 2));
        assert!(g.steps.iter().all(|s| s.spatial.is_empty()));
    }

    #[test]
    fn departing_agent_drops_temporal_edge() {
        let masks = vec![vec![true, true, true, true], vec![true, false, false, false], vec![true; 4]];
        let w = window_from_masks(&masks, 1, 3);
        let g = build_graph(&w);
        assert_eq!(g.steps[0].temporal.len(), 2);
        assert_eq!(g.steps[1].spatial.len(), 2 + 2);
    }

    #[test]
    fn prediction_structure_frozen() {
        // agent 1 disappears during the horizon, agent 2 appears in it
        let masks = vec![vec![true; 6], vec![true, true, true, false, false, false], vec![false, false, false, true, true, true]];
        let w = window_from_masks(&masks, 1, 3);
        let g = build_graph(&w);
        for t in 3..6 {
            assert_eq!(g.steps[t].nodes, g.steps[2].nodes);
            let strip = |s: &GraphStep| s.spatial.iter().map(|e| (e.from, e.to, e.factor)).collect::<Vec<_>>();
            assert_eq!(strip(&g.steps[t]), strip(&g.steps[2]));
        }
        assert_eq!(g.predicted_agents(), vec![0, 1]);
    }

    #[test]
    fn feature_values() {
        let mut w = window_from_masks(&vec![vec![true; 3]; 2], 1, 2);
        w.agents[0].positions[0] = Some([1.0, 1.0]);
        w.agents[1].positions[0] = Some([0.0, 0.0]);
        w.agents[1].positions[1] = Some([0.1, 0.0]);
        w.robots[0].positions[1] = [2.0, 0.0];
        let g = build_graph(&w);
        let e01 = *g.steps[0].spatial.iter().find(|e| e.from == 0 && e.to == 1).unwrap();
        assert_eq!(edge_feature(&g, &Edge::Spatial(e01), &w).unwrap(), [1.0, 1.0]);
        let e12 = *g.steps[0].spatial.iter().find(|e| e.from == 1 && e.to == 2).unwrap();
        assert_eq!(edge_feature(&g, &Edge::Spatial(e12), &w).unwrap(), [-2.0, 0.0]);
        let t1 = TemporalEdge { node: 1, t: 0 };
        assert_eq!(edge_feature(&g, &Edge::Temporal(t1), &w).unwrap(), [0.1, 0.0]);
    }

    #[test]
    fn missing_endpoint_is_structural_error() {
        let w = window_from_masks(&[vec![true, false, true]], 1, 2);
        let g = build_graph(&w);
        let bad = TemporalEdge { node: 0, t: 0 };
        assert!(matches!(
            edge_feature(&g, &Edge::Temporal(bad), &w),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn adjacency_dump_golden() {
        let masks = vec![vec![true, true, true], vec![true, false, false]];
        let g = build_graph(&window_from_masks(&masks, 1, 2));
        let expected = "\
graph nodes=3 agents=2 t_obs=2 steps=3
node 0 id=10 type=0 controlled=0
node 1 id=11 type=1 controlled=0
node 2 id=0 type=2 controlled=1
t 0 nodes [0,1,2]
  S 0->1 u=(0,1)
  S 0->2 u=(0,2)
  S 1->0 u=(1,0)
  S 1->2 u=(1,2)
  T 0 0->1
t 1 nodes [0,2]
  S 0->2 u=(0,2)
  T 0 1->2
t 2 nodes [0,2]
  S 0->2 u=(0,2)
";
        assert_eq!(g.to_adjacency_text(), expected);
    }
}
