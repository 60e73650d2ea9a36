//! LSTM cell with an explicit backward pass.
//!
//! Weights are one `4H x (I + H)` matrix applied to `[x, h]` plus a `4H`
//! bias, with gate blocks ordered input, forget, candidate, output.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use crate::error::{Error, Result};

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Hidden and cell state of one recurrent instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl RecurrentState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Array1::zeros(hidden),
            c: Array1::zeros(hidden),
        }
    }
}

/// Activations saved by [`lstm_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub xh: Array2<f64>,
    pub i: Array2<f64>,
    pub f: Array2<f64>,
    pub g: Array2<f64>,
    pub o: Array2<f64>,
    pub c_prev: Array2<f64>,
    pub tanh_c: Array2<f64>,
    pub h: Array2<f64>,
    pub c: Array2<f64>,
}

impl LstmCache {
    pub fn input_size(&self) -> usize {
        self.xh.ncols() - self.h.ncols()
    }
}

/// One batched step; row `r` of `x`, `h`, `c` is an independent instance.
pub fn lstm_forward(
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
    x: ArrayView2<f64>,
    h: ArrayView2<f64>,
    c: ArrayView2<f64>,
) -> LstmCache {
    let hidden = h.ncols();
    debug_assert_eq!(w.nrows(), 4 * hidden);
    debug_assert_eq!(w.ncols(), x.ncols() + hidden);
    let xh = concatenate(Axis(1), &[x, h]).expect("batch sizes agree");
    let mut z = xh.dot(&w.t());
    z += &b;

    let i = z.slice(s![.., 0..hidden]).mapv(sigmoid);
    let f = z.slice(s![.., hidden..2 * hidden]).mapv(sigmoid);
    let g = z.slice(s![.., 2 * hidden..3 * hidden]).mapv(f64::tanh);
    let o = z.slice(s![.., 3 * hidden..]).mapv(sigmoid);
    let c_prev = c.to_owned();
    let c_new = &f * &c_prev + &i * &g;
    let tanh_c = c_new.mapv(f64::tanh);
    let h_new = &o * &tanh_c;
    LstmCache {
        xh,
        i,
        f,
        g,
        o,
        c_prev,
        tanh_c,
        h: h_new,
        c: c_new,
    }
}

pub struct LstmGrads {
    pub dx: Array2<f64>,
    pub dh_prev: Array2<f64>,
    pub dc_prev: Array2<f64>,
}

/// Backpropagates `dh`/`dc` (gradients w.r.t. the step's outputs),
/// accumulating into `dw`/`db`.
pub fn lstm_backward(
    w: ArrayView2<f64>,
    cache: &LstmCache,
    dh: ArrayView2<f64>,
    dc: ArrayView2<f64>,
    mut dw: ArrayViewMut2<f64>,
    mut db: ArrayViewMut1<f64>,
) -> LstmGrads {
    let hidden = cache.h.ncols();
    let batch = cache.h.nrows();
    let input = cache.input_size();

    let mut dz = Array2::<f64>::zeros((batch, 4 * hidden));
    let mut dc_prev = Array2::<f64>::zeros((batch, hidden));
    for r in 0..batch {
        for j in 0..hidden {
            let (i, f, g, o) = (cache.i[[r, j]], cache.f[[r, j]], cache.g[[r, j]], cache.o[[r, j]]);
            let tc = cache.tanh_c[[r, j]];
            let dh_rj = dh[[r, j]];
            let dc_rj = dc[[r, j]] + dh_rj * o * (1.0 - tc * tc);
            dz[[r, j]] = dc_rj * g * i * (1.0 - i);
            dz[[r, hidden + j]] = dc_rj * cache.c_prev[[r, j]] * f * (1.0 - f);
            dz[[r, 2 * hidden + j]] = dc_rj * i * (1.0 - g * g);
            dz[[r, 3 * hidden + j]] = dh_rj * tc * o * (1.0 - o);
            dc_prev[[r, j]] = dc_rj * f;
        }
    }
    general_mat_mul(1.0, &dz.t(), &cache.xh, 1.0, &mut dw);
    db += &dz.sum_axis(Axis(0));
    let dxh = dz.dot(&w);
    LstmGrads {
        dx: dxh.slice(s![.., ..input]).to_owned(),
        dh_prev: dxh.slice(s![.., input..]).to_owned(),
        dc_prev,
    }
}

/// Single-instance step: returns the new hidden output and state.
pub fn lstm_step(
    input: ArrayView1<f64>,
    state: &RecurrentState,
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
) -> Result<(Array1<f64>, RecurrentState)> {
    let hidden = state.h.len();
    if w.nrows() != 4 * hidden || w.ncols() != input.len() + hidden || b.len() != 4 * hidden {
        return Err(Error::Contract(format!(
            "lstm weights {:?} do not match input {} / hidden {hidden}",
            w.shape(),
            input.len()
        )));
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite lstm input".into()));
    }
    let cache = lstm_forward(
        w,
        b,
        input.insert_axis(Axis(0)),
        state.h.view().insert_axis(Axis(0)),
        state.c.view().insert_axis(Axis(0)),
    );
    let h = cache.h.row(0).to_owned();
    let c = cache.c.row(0).to_owned();
    Ok((h.clone(), RecurrentState { h, c }))
}
