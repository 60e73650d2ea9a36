use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ResponseRnn};
use crate::error::Result;
use crate::neural::{grad_check, GradCheckConfig, GradCheckReport};
use crate::trajdata::{AgentSeries, Point, RobotSeries, SequenceWindow, StandardizationStats};

fn line(start: Point, step: Point, len: usize) -> Vec<Point> {
    (0..len).map(|t| [start[0] + step[0] * t as f64, start[1] + step[1] * t as f64]).collect()
}

/// Two walking agents and a robot crossing them, sized for `cfg`'s horizon.
pub fn gradcheck_window(cfg: &ModelConfig) -> SequenceWindow {
    let len = cfg.t_obs + cfg.t_pred;
    let agent = |id: u32, start: Point, step: Point| AgentSeries {
        agent_id: id,
        agent_type: 0,
        positions: line(start, step, len).into_iter().map(Some).collect(),
        loss_excluded: false,
    };
    SequenceWindow {
        id: "gradcheck@0".into(),
        recording_id: "gradcheck".into(),
        start_frame: 0,
        t_obs: cfg.t_obs,
        t_pred: cfg.t_pred,
        dt: 1.0 / 15.0,
        agents: vec![agent(1, [0.0, 0.0], [0.1, 0.02]), agent(2, [1.0, -0.5], [-0.05, 0.08])],
        robots: vec![RobotSeries {
            agent_id: 3,
            agent_type: cfg.num_types - 1,
            positions: line([-1.0, 1.0], [0.12, -0.03], len),
        }],
    }
}

/// Finite-difference check of the full teacher-forced loss of a fresh
/// model on [`gradcheck_window`]. Weights are perturbed away from their
/// initialization so activations are not all near zero.
pub fn gradient_check(cfg: ModelConfig, seed: u64) -> Result<GradCheckReport> {
    let window = gradcheck_window(&cfg);
    let stats = StandardizationStats { mean_x: 0.0, mean_y: 0.0, std_x: 2.0, std_y: 1.5 };
    let mut model = ResponseRnn::new(cfg, stats, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for i in 0..model.params.num_scalars() {
        let v = model.params.flat_get(i);
        model.params.flat_set(i, v * 2.0 + rng.random_range(-0.05..0.05));
    }
    let (_, grads) = model.loss_and_gradient(&window)?;
    let mut params = model.params.clone();
    Ok(grad_check(
        &mut params,
        &grads,
        |p| match ResponseRnn::from_parts(cfg, stats, p.clone()) {
            Ok(m) => m.loss(&window).map_or(f64::NAN, |l| l.0),
            Err(_) => f64::NAN,
        },
        GradCheckConfig { coordinates: 300, ..Default::default() },
        &mut rng,
    ))
}
