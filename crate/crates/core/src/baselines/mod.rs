//! Non-interactive reference predictors.

mod ctrv;
mod red;

pub use ctrv::{ctrv_fit, ctrv_predict, ctrv_rollout, wrap_angle, Ctrv, CtrvEstimate, CtrvState, CTRV_HISTORY};
pub use red::{RedConfig, RedModel, RedOutput, RedPass};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::responsernn::tests::make_window;
    use crate::rollout::Predictor;
    use crate::trajdata::{Point, StandardizationStats};

    #[test]
    fn ctrv_window_predictions_are_exact_for_constant_velocity_in_world_units() {
        let stats = StandardizationStats { mean_x: 3.0, mean_y: -1.0, std_x: 2.0, std_y: 0.5 };
        let world = |t: usize| [0.3 * t as f64 - 1.0, 0.2 * t as f64];
        let track = (0..20).map(|t| Some(stats.apply(world(t)))).collect();
        let mut partial: Vec<Option<Point>> = (0..20).map(|t| Some(stats.apply([5.0, 0.1 * t as f64]))).collect();
        partial[11] = None;
        let robot: Vec<Point> = (0..20).map(|t| stats.apply([0.0, -0.1 * t as f64])).collect();
        let window = make_window(&[track, partial], &robot, 12);
        let r = Ctrv::new(stats).predict(&window).unwrap().to_world(&stats);
        assert_eq!(r.agents.len(), 1);
        for (s, g) in r.agents[0].steps.iter().enumerate() {
            let exact = world(12 + s);
            assert!((g.mu_x - exact[0]).abs() < 1e-9 && (g.mu_y - exact[1]).abs() < 1e-9);
        }
    }
}
