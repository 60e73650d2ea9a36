//! Dot-product attention of a node's temporal-edge state over the states of
//! its outgoing spatial edges.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

/// Factor multiplying the query-key dot product inside the softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `m / sqrt(d_e)`, with `m` the number of attended edges.
    #[default]
    NeighborCount,
    /// `1 / sqrt(d_e)`.
    InverseSqrt,
}

impl AttentionScale {
    pub fn factor(self, m: usize, d_e: usize) -> f64 {
        let root = (d_e as f64).sqrt();
        match self {
            AttentionScale::NeighborCount => m as f64 / root,
            AttentionScale::InverseSqrt => 1.0 / root,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub h_t: Array1<f64>,
    pub h_s: Array2<f64>,
    pub query: Array1<f64>,
    pub keys: Array2<f64>,
    pub weights: Array1<f64>,
    pub scale: f64,
}

/// Numerically stable softmax.
pub fn softmax(scores: ArrayView1<f64>) -> Array1<f64> {
    let max = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e = scores.mapv(|s| (s - max).exp());
    let total = e.sum();
    e /= total;
    e
}

/// `w_t`, `w_s` are `d_e x D` projections; `h_s` holds one edge state per row.
/// With no edges the output is the zero vector.
pub fn attention_forward(
    w_t: ArrayView2<f64>,
    w_s: ArrayView2<f64>,
    h_t: ArrayView1<f64>,
    h_s: ArrayView2<f64>,
    scale_mode: AttentionScale,
) -> (Array1<f64>, AttentionCache) {
    let m = h_s.nrows();
    let d_e = w_t.nrows();
    let query = w_t.dot(&h_t);
    let keys = h_s.dot(&w_s.t());
    let scale = scale_mode.factor(m, d_e);
    let (out, weights) = if m == 0 {
        (Array1::zeros(h_s.ncols()), Array1::zeros(0))
    } else {
        let scores = keys.dot(&query) * scale;
        let weights = softmax(scores.view());
        (weights.dot(&h_s), weights)
    };
    let cache = AttentionCache {
        h_t: h_t.to_owned(),
        h_s: h_s.to_owned(),
        query,
        keys,
        weights,
        scale,
    };
    (out, cache)
}

/// Returns `(d h_t, d h_s)` and accumulates projection gradients.
pub fn attention_backward(
    w_t: ArrayView2<f64>,
    w_s: ArrayView2<f64>,
    cache: &AttentionCache,
    d_out: ArrayView1<f64>,
    mut dw_t: ArrayViewMut2<f64>,
    mut dw_s: ArrayViewMut2<f64>,
) -> (Array1<f64>, Array2<f64>) {
    let m = cache.h_s.nrows();
    if m == 0 {
        return (Array1::zeros(cache.h_t.len()), Array2::zeros(cache.h_s.raw_dim()));
    }
    let a = &cache.weights;
    // out = sum_i a_i h_s_i
    let da = cache.h_s.dot(&d_out);
    let mut dh_s = a.view().insert_axis(Axis(1)).dot(&d_out.insert_axis(Axis(0)));
    let mean = a.dot(&da);
    let ds = a * &(&da - mean);
    // score_i = scale * <q, k_i>
    let dq = cache.keys.t().dot(&ds) * cache.scale;
    let dk = ds.view().insert_axis(Axis(1)).dot(&cache.query.view().insert_axis(Axis(0))) * cache.scale;
    // k_i = W_s h_s_i ; q = W_t h_t
    dw_s.scaled_add(1.0, &dk.t().dot(&cache.h_s));
    dh_s += &dk.dot(&w_s);
    dw_t.scaled_add(1.0, &dq.view().insert_axis(Axis(1)).dot(&cache.h_t.view().insert_axis(Axis(0))));
    let dh_t = w_t.t().dot(&dq);
    (dh_t, dh_s)
}

/// Convenience wrapper returning only the attended vector.
pub fn attention(
    h_t: ArrayView1<f64>,
    h_s: ArrayView2<f64>,
    w_t: ArrayView2<f64>,
    w_s: ArrayView2<f64>,
    scale_mode: AttentionScale,
) -> Array1<f64> {
    attention_forward(w_t, w_s, h_t, h_s, scale_mode).0
}
