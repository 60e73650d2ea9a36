use rand::Rng;
use serde::Serialize;

use super::params::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Minimum number of coordinates probed.
    pub coordinates: usize,
    /// Denominator floor of the relative error. Central differences of an
    /// O(1-10) loss at step 1e-5 carry absolute noise around 1e-10, so
    /// coordinates with gradients below the floor are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            coordinates: 200,
            floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateCheck {
    pub parameter: String,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<CoordinateCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Flat indices to probe: every array gets a share proportional to its size,
/// with at least a few coordinates from each.
fn sample_coordinates<R: Rng>(params: &ParameterSet, wanted: usize, rng: &mut R) -> Vec<usize> {
    let total = params.num_scalars().max(1);
    let mut picks = Vec::new();
    let mut base = 0;
    for (_, a) in params.iter() {
        let n = a.len();
        let share = ((wanted * n).div_ceil(total)).max(4).min(n);
        let mut chosen = rand::seq::index::sample(rng, n, share).into_vec();
        chosen.sort_unstable();
        picks.extend(chosen.into_iter().map(|i| base + i));
        base += n;
    }
    picks
}

/// Compares `analytic` with central differences of `loss` at sampled
/// coordinates of `params`. `params` is restored before returning.
pub fn grad_check<R, F>(
    params: &mut ParameterSet,
    analytic: &ParameterSet,
    mut loss: F,
    config: GradCheckConfig,
    rng: &mut R,
) -> GradCheckReport
where
    R: Rng,
    F: FnMut(&ParameterSet) -> f64,
{
    debug_assert!(params.same_layout(analytic));
    let coords = sample_coordinates(params, config.coordinates, rng);
    let mut worst: Option<CoordinateCheck> = None;
    for &idx in &coords {
        let orig = params.flat_get(idx);
        params.flat_set(idx, orig + config.step);
        let up = loss(params);
        params.flat_set(idx, orig - config.step);
        let down = loss(params);
        params.flat_set(idx, orig);
        let numeric = (up - down) / (2.0 * config.step);
        let a = analytic.flat_get(idx);
        let rel = relative_error(a, numeric, config.floor);
        if worst.as_ref().is_none_or(|w| rel > w.rel_error || rel.is_nan()) {
            let (name, offset) = params.locate(idx);
            worst = Some(CoordinateCheck {
                parameter: name.to_string(),
                offset,
                analytic: a,
                numeric,
                rel_error: rel,
            });
        }
    }
    GradCheckReport {
        max_rel_error: worst.as_ref().map_or(0.0, |w| w.rel_error),
        checked: coords.len(),
        worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::dense::{relu_backward, relu_forward};
    use crate::neural::ParamId;
    use ndarray::{Array1, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn embed_setup() -> (ParameterSet, Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut p = ParameterSet::new();
        p.push_uniform("w", &[64, 2], 0.7, &mut rng);
        p.push_uniform("b", &[64], 0.7, &mut rng);
        let x = Array2::from_shape_fn((6, 2), |_| rng.random_range(-2.0..2.0));
        let probe = Array2::from_shape_fn((6, 64), |_| rng.random_range(-1.0..1.0));
        (p, x, probe)
    }

    fn embed_loss(p: &ParameterSet, x: &Array2<f64>, probe: &Array2<f64>) -> f64 {
        let c = relu_forward(p.mat(ParamId(0)), p.vec(ParamId(1)), x.clone());
        (&c.output * probe).sum()
    }

    fn embed_grads(p: &ParameterSet, x: &Array2<f64>, probe: &Array2<f64>, flip: bool) -> ParameterSet {
        let (w, b) = (ParamId(0), ParamId(1));
        let c = relu_forward(p.mat(w), p.vec(b), x.clone());
        let mut g = p.zeros_like();
        let mut dw = Array2::zeros((64, 2));
        let mut db = Array1::zeros(64);
        relu_backward(p.mat(w), &c, probe.view(), dw.view_mut(), db.view_mut());
        if flip {
            dw.mapv_inplace(|v| -v);
        }
        g.mat_mut(w).assign(&dw);
        g.vec_mut(b).assign(&db);
        g
    }

    #[test]
    fn embedding_passes_tightly() {
        let (mut p, x, probe) = embed_setup();
        let g = embed_grads(&p, &x, &probe, false);
        let before = p.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = grad_check(&mut p, &g, |p| embed_loss(p, &x, &probe), GradCheckConfig::default(), &mut rng);
        assert!(report.checked >= 128);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert_eq!(p, before);
    }

    #[test]
    fn sign_flip_is_caught() {
        let (mut p, x, probe) = embed_setup();
        let g = embed_grads(&p, &x, &probe, true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = grad_check(&mut p, &g, |p| embed_loss(p, &x, &probe), GradCheckConfig::default(), &mut rng);
        assert!(report.max_rel_error > 0.1);
        assert_eq!(report.worst.unwrap().parameter, "w");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-6), 0.0);
        assert!((relative_error(1.0, -1.0, 1e-6) - 1.0).abs() < 1e-15);
        assert!(relative_error(1e-9, 2e-9, 1e-6) < 1e-2);
    }
}
