use ndarray::{s, Array1, ArrayD, IxDyn};
use rand::Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::neural::{ParamId, ParameterSet, GAUSSIAN_OUTPUTS};

/// Embedding layer followed by an LSTM.
#[derive(Debug, Clone, Copy)]
pub struct EdgeFactor {
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub lstm_w: ParamId,
    pub lstm_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct NodeFactor {
    pub temporal: EdgeFactor,
    pub embed_x_w: ParamId,
    pub embed_x_b: ParamId,
    pub embed_h_w: ParamId,
    pub embed_h_b: ParamId,
    pub lstm_w: ParamId,
    pub lstm_b: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// Where each weight of the model lives inside its [`ParameterSet`].
#[derive(Debug, Clone)]
pub struct Layout {
    num_types: usize,
    /// Spatial edge factors indexed `from_type * K + to_type`.
    pub spatial: Vec<EdgeFactor>,
    pub node: Vec<NodeFactor>,
    pub query: ParamId,
    pub key: ParamId,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

enum Init {
    /// Uniform in `+-1/sqrt(fan_in)`.
    Weight,
    Zero,
    /// LSTM bias: zero except the forget block, which starts at 1.
    ForgetBias(usize),
}

fn specs(config: &ModelConfig) -> Vec<Spec> {
    let ModelConfig {
        edge_hidden: eh,
        node_hidden: nh,
        embedding: em,
        attention_dim: de,
        ..
    } = *config;
    let mut out = Vec::new();
    let weight = |name: String, shape: Vec<usize>| Spec { name, shape, init: Init::Weight };
    let edge = |out: &mut Vec<Spec>, prefix: String, hidden: usize| {
        out.push(weight(format!("{prefix}.embed.w"), vec![em, 2]));
        out.push(Spec { name: format!("{prefix}.embed.b"), shape: vec![em], init: Init::Zero });
        out.push(weight(format!("{prefix}.lstm.w"), vec![4 * hidden, em + hidden]));
        out.push(Spec { name: format!("{prefix}.lstm.b"), shape: vec![4 * hidden], init: Init::ForgetBias(hidden) });
    };
    let k = config.num_types;
    for a in 0..k {
        for b in 0..k {
            edge(&mut out, format!("spatial.{a}_{b}"), eh);
        }
    }
    for t in 0..k {
        edge(&mut out, format!("node.{t}.temporal"), eh);
        out.push(Spec { name: format!("node.{t}.embed_x.w"), shape: vec![em, 2], init: Init::Weight });
        out.push(Spec { name: format!("node.{t}.embed_x.b"), shape: vec![em], init: Init::Zero });
        out.push(Spec { name: format!("node.{t}.embed_h.w"), shape: vec![em, 2 * eh], init: Init::Weight });
        out.push(Spec { name: format!("node.{t}.embed_h.b"), shape: vec![em], init: Init::Zero });
        out.push(Spec { name: format!("node.{t}.lstm.w"), shape: vec![4 * nh, 2 * em + nh], init: Init::Weight });
        out.push(Spec { name: format!("node.{t}.lstm.b"), shape: vec![4 * nh], init: Init::ForgetBias(nh) });
        out.push(Spec { name: format!("node.{t}.head.w"), shape: vec![GAUSSIAN_OUTPUTS, nh], init: Init::Weight });
        out.push(Spec { name: format!("node.{t}.head.b"), shape: vec![GAUSSIAN_OUTPUTS], init: Init::Zero });
    }
    out.push(Spec { name: "attention.query.w".into(), shape: vec![de, eh], init: Init::Weight });
    out.push(Spec { name: "attention.key.w".into(), shape: vec![de, eh], init: Init::Weight });
    out
}

impl Layout {
    /// Freshly initialized parameters for `config`.
    pub fn initialize<R: Rng>(config: &ModelConfig, rng: &mut R) -> (ParameterSet, Layout) {
        let mut params = ParameterSet::new();
        for spec in specs(config) {
            match spec.init {
                Init::Weight => {
                    let bound = 1.0 / (spec.shape[1] as f64).sqrt();
                    params.push_uniform(spec.name, &spec.shape, bound, rng);
                }
                Init::Zero => {
                    params.push(spec.name, ArrayD::zeros(IxDyn(&spec.shape)));
                }
                Init::ForgetBias(h) => {
                    let mut b = Array1::zeros(4 * h);
                    b.slice_mut(s![h..2 * h]).fill(1.0);
                    params.push(spec.name, b.into_dyn());
                }
            }
        }
        let layout = Self::resolve(config, &params).expect("fresh parameters match their own layout");
        (params, layout)
    }

    /// Locates every array of `config` in `params`, checking names, order and shapes.
    pub fn resolve(config: &ModelConfig, params: &ParameterSet) -> Result<Layout> {
        let specs = specs(config);
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays for {} agent types, found {}",
                specs.len(),
                config.num_types,
                params.len()
            )));
        }
        for spec in &specs {
            let id = params
                .id(&spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", spec.name)))?;
            if params.get(id).shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    params.get(id).shape(),
                    spec.shape
                )));
            }
        }
        let id = |name: String| params.id(&name).expect("checked above");
        let edge = |prefix: String| EdgeFactor {
            embed_w: id(format!("{prefix}.embed.w")),
            embed_b: id(format!("{prefix}.embed.b")),
            lstm_w: id(format!("{prefix}.lstm.w")),
            lstm_b: id(format!("{prefix}.lstm.b")),
        };
        let k = config.num_types;
        let spatial = (0..k * k).map(|u| edge(format!("spatial.{}_{}", u / k, u % k))).collect();
        let node = (0..k)
            .map(|t| NodeFactor {
                temporal: edge(format!("node.{t}.temporal")),
                embed_x_w: id(format!("node.{t}.embed_x.w")),
                embed_x_b: id(format!("node.{t}.embed_x.b")),
                embed_h_w: id(format!("node.{t}.embed_h.w")),
                embed_h_b: id(format!("node.{t}.embed_h.b")),
                lstm_w: id(format!("node.{t}.lstm.w")),
                lstm_b: id(format!("node.{t}.lstm.b")),
                head_w: id(format!("node.{t}.head.w")),
                head_b: id(format!("node.{t}.head.b")),
            })
            .collect();
        Ok(Layout {
            num_types: k,
            spatial,
            node,
            query: id("attention.query.w".into()),
            key: id("attention.key.w".into()),
        })
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn spatial_factor(&self, from_type: usize, to_type: usize) -> &EdgeFactor {
        &self.spatial[from_type * self.num_types + to_type]
    }

    pub fn num_edge_factors(&self) -> usize {
        self.spatial.len()
    }

    pub fn num_node_factors(&self) -> usize {
        self.node.len()
    }
}
