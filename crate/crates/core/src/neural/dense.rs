use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use crate::error::{Error, Result};

/// Saved activations of a batched `ReLU(x W^T + b)` layer.
#[derive(Debug, Clone)]
pub struct DenseCache {
    pub input: Array2<f64>,
    pub output: Array2<f64>,
}

/// Batched embedding layer: rows of `input` are independent examples.
pub fn relu_forward(w: ArrayView2<f64>, b: ArrayView1<f64>, input: Array2<f64>) -> DenseCache {
    let mut output = input.dot(&w.t());
    output += &b;
    output.mapv_inplace(|v| v.max(0.0));
    DenseCache { input, output }
}

/// Accumulates weight gradients into `dw`/`db` and returns the input gradient.
pub fn relu_backward(
    w: ArrayView2<f64>,
    cache: &DenseCache,
    d_out: ArrayView2<f64>,
    mut dw: ArrayViewMut2<f64>,
    mut db: ArrayViewMut1<f64>,
) -> Array2<f64> {
    let mut dz = d_out.to_owned();
    dz.zip_mut_with(&cache.output, |d, &y| {
        if y <= 0.0 {
            *d = 0.0;
        }
    });
    general_mat_mul(1.0, &dz.t(), &cache.input, 1.0, &mut dw);
    db += &dz.sum_axis(Axis(0));
    dz.dot(&w)
}

/// `ReLU(W x + b)` for a single input vector.
pub fn embed(x: ArrayView1<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    if w.ncols() != x.len() || w.nrows() != b.len() {
        return Err(Error::Contract(format!(
            "embedding expects input {} and bias {}, got {} and {}",
            w.ncols(),
            w.nrows(),
            x.len(),
            b.len()
        )));
    }
    let mut y = w.dot(&x) + b;
    y.mapv_inplace(|v| v.max(0.0));
    Ok(y)
}

/// Batched affine map `x W^T + b` without activation.
pub fn linear_forward(w: ArrayView2<f64>, b: ArrayView1<f64>, input: ArrayView2<f64>) -> Array2<f64> {
    let mut out = input.dot(&w.t());
    out += &b;
    out
}

pub fn linear_backward(
    w: ArrayView2<f64>,
    input: ArrayView2<f64>,
    d_out: ArrayView2<f64>,
    mut dw: ArrayViewMut2<f64>,
    mut db: ArrayViewMut1<f64>,
) -> Array2<f64> {
    general_mat_mul(1.0, &d_out.t(), &input, 1.0, &mut dw);
    db += &d_out.sum_axis(Axis(0));
    d_out.dot(&w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero() {
        let w = Array2::<f64>::zeros((64, 2));
        let b = Array1::<f64>::zeros(64);
        let y = embed(arr1(&[3.0, -4.0]).view(), w.view(), b.view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_clamps_negative() {
        let mut w = Array2::<f64>::zeros((64, 2));
        w[[0, 0]] = 1.0;
        w[[1, 1]] = 1.0;
        let b = Array1::<f64>::zeros(64);
        let y = embed(arr1(&[-1.0, 2.0]).view(), w.view(), b.view()).unwrap();
        assert_eq!(y[0], 0.0);
        assert_eq!(y[1], 2.0);
        assert!(y.iter().skip(2).all(|&v| v == 0.0));
    }

    #[test]
    fn matches_direct_multiply() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Array2::from_shape_fn((64, 5), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(64, |_| rng.random_range(-1.0..1.0));
        let x = Array1::from_shape_fn(5, |_| rng.random_range(-2.0..2.0));
        let y = embed(x.view(), w.view(), b.view()).unwrap();
        for r in 0..64 {
            let mut acc = b[r];
            for c in 0..5 {
                acc += w[[r, c]] * x[c];
            }
            assert!((y[r] - acc.max(0.0)).abs() < 1e-12);
        }
        let batch = relu_forward(w.view(), b.view(), x.clone().insert_axis(Axis(0)));
        assert!((&batch.output.row(0) - &y).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch_is_contract_violation() {
        let w = Array2::<f64>::zeros((4, 2));
        let b = Array1::<f64>::zeros(4);
        assert!(matches!(embed(arr1(&[1.0]).view(), w.view(), b.view()), Err(Error::Contract(_))));
    }
}
