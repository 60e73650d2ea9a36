use std::f64::consts::PI;

use ndarray::{ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::trajdata::Point;

/// Width of the raw output of the Gaussian head.
pub const GAUSSIAN_OUTPUTS: usize = 5;

/// Bivariate normal over `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
}

impl GaussianParams {
    /// Maps raw head outputs: identity for the means, `exp` for the standard
    /// deviations, `tanh` for the correlation.
    pub fn from_raw(raw: [f64; 5]) -> Self {
        Self {
            mu_x: raw[0],
            mu_y: raw[1],
            sigma_x: raw[2].exp(),
            sigma_y: raw[3].exp(),
            rho: raw[4].tanh(),
        }
    }

    pub fn mean(&self) -> Point {
        [self.mu_x, self.mu_y]
    }

    pub fn is_valid(&self) -> bool {
        self.mu_x.is_finite()
            && self.mu_y.is_finite()
            && self.sigma_x > 0.0
            && self.sigma_y > 0.0
            && self.rho.abs() < 1.0
    }

    /// `-log p(target)`.
    pub fn nll(&self, target: Point) -> f64 {
        let dx = (target[0] - self.mu_x) / self.sigma_x;
        let dy = (target[1] - self.mu_y) / self.sigma_y;
        let omega = 1.0 - self.rho * self.rho;
        let z = dx * dx + dy * dy - 2.0 * self.rho * dx * dy;
        (2.0 * PI).ln() + self.sigma_x.ln() + self.sigma_y.ln() + 0.5 * omega.ln() + z / (2.0 * omega)
    }

    /// NLL and its gradient w.r.t. the raw head outputs (see [`Self::from_raw`]).
    pub fn nll_grad_raw(&self, target: Point) -> (f64, [f64; 5]) {
        let dx = (target[0] - self.mu_x) / self.sigma_x;
        let dy = (target[1] - self.mu_y) / self.sigma_y;
        let rho = self.rho;
        let omega = 1.0 - rho * rho;
        let z = dx * dx + dy * dy - 2.0 * rho * dx * dy;
        let grad = [
            -(dx - rho * dy) / (self.sigma_x * omega),
            -(dy - rho * dx) / (self.sigma_y * omega),
            1.0 - dx * (dx - rho * dy) / omega,
            1.0 - dy * (dy - rho * dx) / omega,
            -rho - dx * dy + z * rho / omega,
        ];
        (self.nll(target), grad)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Point {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let x = self.mu_x + self.sigma_x * a;
        let y = self.mu_y + self.sigma_y * (self.rho * a + (1.0 - self.rho * self.rho).sqrt() * b);
        [x, y]
    }

    /// Same distribution after the affine map `p -> p * scale + offset`.
    pub fn affine(&self, scale: Point, offset: Point) -> Self {
        Self {
            mu_x: self.mu_x * scale[0] + offset[0],
            mu_y: self.mu_y * scale[1] + offset[1],
            sigma_x: self.sigma_x * scale[0],
            sigma_y: self.sigma_y * scale[1],
            rho: self.rho,
        }
    }
}

/// `h W^T + b` read as raw Gaussian parameters.
pub fn gaussian_head(h: ArrayView1<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> GaussianParams {
    let raw = w.dot(&h) + b;
    GaussianParams::from_raw([raw[0], raw[1], raw[2], raw[3], raw[4]])
}

pub fn nll(params: &GaussianParams, target: Point) -> f64 {
    params.nll(target)
}
