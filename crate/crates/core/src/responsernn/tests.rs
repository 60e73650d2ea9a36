use super::*;
use crate::neural::{grad_check, GaussianParams, GradCheckConfig};
use crate::trajdata::{AgentSeries, RobotSeries};
use rand::Rng;

pub(crate) fn make_window(agents: &[Vec<Option<Point>>], robot: &[Point], t_obs: usize) -> SequenceWindow {
    let len = robot.len();
    SequenceWindow {
        id: "test@0".into(),
        recording_id: "test".into(),
        start_frame: 0,
        t_obs,
        t_pred: len - t_obs,
        dt: 1.0 / 15.0,
        agents: agents
            .iter()
            .enumerate()
            .map(|(i, p)| AgentSeries {
                agent_id: i as u32 + 1,
                agent_type: 0,
                positions: p.clone(),
                loss_excluded: false,
            })
            .collect(),
        robots: vec![RobotSeries {
            agent_id: 100,
            agent_type: 1,
            positions: robot.to_vec(),
        }],
    }
}

fn line(start: Point, step: Point, len: usize) -> Vec<Point> {
    (0..len).map(|t| [start[0] + step[0] * t as f64, start[1] + step[1] * t as f64]).collect()
}

fn some(points: Vec<Point>) -> Vec<Option<Point>> {
    points.into_iter().map(Some).collect()
}

fn toy_window(t_obs: usize, t_pred: usize) -> SequenceWindow {
    let len = t_obs + t_pred;
    make_window(
        &[some(line([0.0, 0.0], [0.1, 0.02], len)), some(line([1.0, -0.5], [-0.05, 0.08], len))],
        &line([-1.0, 1.0], [0.12, -0.03], len),
        t_obs,
    )
}

fn small_model(mode: LossMode, t_obs: usize, t_pred: usize, width: usize) -> ResponseRnn {
    let cfg = ModelConfig::new(2, t_obs, t_pred, mode).with_width(width);
    let stats = StandardizationStats { mean_x: 0.0, mean_y: 0.0, std_x: 2.0, std_y: 1.5 };
    ResponseRnn::new(cfg, stats, 7).unwrap()
}

fn check_gradient(mode: LossMode, motion_scale: f64) -> f64 {
    let window = toy_window(4, 2);
    let mut model = small_model(mode, 4, 2, 6);
    model.config.motion_scale = motion_scale;
    // scale weights up a bit so that activations are not all near zero
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..model.params.num_scalars() {
        let v = model.params.flat_get(i);
        model.params.flat_set(i, v * 2.0 + rng.random_range(-0.05..0.05));
    }
    let (_, grads) = model.loss_and_gradient(&window).unwrap();
    let mut params = model.params.clone();
    let config = model.config;
    let stats = model.stats;
    let report = grad_check(
        &mut params,
        &grads,
        |p| {
            let m = ResponseRnn::from_parts(config, stats, p.clone()).unwrap();
            m.loss(&window).unwrap().0
        },
        GradCheckConfig { coordinates: 300, ..Default::default() },
        &mut rng,
    );
    assert!(report.checked >= 200);
    report.max_rel_error
}

#[test]
fn gradient_matches_finite_differences_position() {
    let err = check_gradient(LossMode::Position, 1.0);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn gradient_matches_finite_differences_velocity() {
    let err = check_gradient(LossMode::Velocity, 1.0);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn motion_scale_keeps_gradient_and_loss_consistent() {
    let err = check_gradient(LossMode::Velocity, 0.05);
    assert!(err < 1e-4, "max relative error {err}");

    // the loss is the NLL of the target under the distributions the rollout reports
    let window = toy_window(4, 3);
    let mut model = small_model(LossMode::Velocity, 4, 3, 6);
    model.config.motion_scale = 0.05;
    let (loss, terms) = model.loss(&window).unwrap();
    let r = model.rollout(&window, None, Feedback::Teacher, 0).unwrap();
    let cfg = model.loss_config(window.dt);
    let mut expected = 0.0;
    for (a, track) in window.agents.iter().zip(&r.agents) {
        for (s, g) in track.steps.iter().enumerate() {
            let t = window.t_obs - 1 + s;
            let (here, next) = (a.positions[t].unwrap(), a.positions[t + 1].unwrap());
            let target = [next[0] - here[0], next[1] - here[1]];
            let displacement = GaussianParams { mu_x: g.mu_x - here[0], mu_y: g.mu_y - here[1], ..*g };
            expected += cfg.step_weight(Some(here), next, target) * displacement.nll(target);
        }
    }
    assert_eq!(terms, 6);
    assert!((loss - expected).abs() < 1e-9 * expected.abs().max(1.0), "{loss} vs {expected}");
}

#[test]
fn rollouts_are_deterministic() {
    let window = toy_window(6, 4);
    let model = small_model(LossMode::Velocity, 6, 4, 8);
    assert_eq!(model.predict_mean(&window).unwrap(), model.predict_mean(&window).unwrap());
    let a = model.sample_rollouts(&window, None, 3, 11).unwrap();
    let b = model.sample_rollouts(&window, None, 3, 11).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0], a[1]);
}

#[test]
fn velocity_mode_integrates_constant_displacement() {
    let t_obs = 4;
    let t_pred = 8;
    let mut window = toy_window(t_obs, t_pred);
    window.agents.truncate(1);
    for t in 0..t_obs {
        window.agents[0].positions[t] = Some([0.0, 0.0]);
    }
    let mut model = small_model(LossMode::Velocity, t_obs, t_pred, 4);
    let f = model.layout.node[0];
    model.params.get_mut(f.head_w).fill(0.0);
    let b = model.params.get_mut(f.head_b);
    b.fill(0.0);
    b[[0]] = 0.1;
    let r = model.predict_mean(&window).unwrap();
    let last = r.agents[0].steps.last().unwrap();
    assert!((last.mu_x - 0.8).abs() < 1e-12 && last.mu_y.abs() < 1e-12);
    assert_eq!(r.agents[0].steps.len(), t_pred);
}

#[test]
fn parameter_arrays_depend_only_on_type_count() {
    let stats = StandardizationStats::IDENTITY;
    for k in 1..=3 {
        let m = ResponseRnn::new(ModelConfig::new(k, 4, 2, LossMode::Position), stats, 0).unwrap();
        assert_eq!(m.layout().num_edge_factors(), k * k);
        assert_eq!(m.layout().num_node_factors(), k);
        assert_eq!(m.params().len(), 4 * k * k + 12 * k + 2);
    }
    // a tenth agent changes nothing about the model, only the graph
    let model = small_model(LossMode::Position, 4, 2, 4);
    let len = 6;
    let agents: Vec<Vec<Option<Point>>> = (0..10).map(|i| some(line([i as f64, 0.0], [0.0, 0.1], len))).collect();
    let r = model.predict_mean(&make_window(&agents, &line([0.0, -2.0], [0.1, 0.0], len), 4)).unwrap();
    assert_eq!(r.agents.len(), 10);
}

#[test]
fn controlled_agent_never_predicted() {
    let window = toy_window(4, 3);
    let model = small_model(LossMode::Position, 4, 3, 4);
    let r = model.predict_mean(&window).unwrap();
    assert!(r.agents.iter().all(|a| a.agent_id != 100));
    assert_eq!(r.robot_path, window.robot_future());
}

#[test]
fn whatif_with_realized_path_equals_plain_rollout() {
    let window = toy_window(5, 3);
    let model = small_model(LossMode::Velocity, 5, 3, 6);
    let plain = model.predict_mean(&window).unwrap();
    let candidates = vec![window.robot_future().to_vec(), line([0.3, 0.3], [0.0, 0.0], 3)];
    let out = model.simulate_whatif(&window, &candidates).unwrap();
    assert_eq!(out[0], plain);
    assert!(out[1].mean_divergence(&plain) > 0.0);
    assert_eq!(out[1].robot_path, candidates[1]);
}

#[test]
fn override_path_length_is_checked() {
    let window = toy_window(4, 3);
    let model = small_model(LossMode::Position, 4, 3, 4);
    let short = vec![[0.0, 0.0]; 2];
    assert!(matches!(model.rollout(&window, Some(&short), Feedback::Mean, 0), Err(Error::Contract(_))));
    let other = toy_window(5, 3);
    assert!(matches!(model.predict_mean(&other), Err(Error::HorizonMismatch { .. })));
}

#[test]
fn permuting_agents_permutes_predictions() {
    let window = toy_window(5, 3);
    let mut swapped = window.clone();
    swapped.agents.reverse();
    let model = small_model(LossMode::Position, 5, 3, 6);
    let a = model.predict_mean(&window).unwrap();
    let b = model.predict_mean(&swapped).unwrap();
    for track in &a.agents {
        let other = b.agent(track.agent_id).unwrap();
        for (p, q) in track.steps.iter().zip(&other.steps) {
            assert!((p.mu_x - q.mu_x).abs() < 1e-10 && (p.sigma_y - q.sigma_y).abs() < 1e-10);
        }
    }
}

#[test]
fn excluded_agents_add_no_loss_but_still_get_predictions() {
    let window = toy_window(4, 2);
    let model = small_model(LossMode::Position, 4, 2, 4);
    let (full, terms) = model.loss(&window).unwrap();
    let mut masked = window.clone();
    masked.agents[1].loss_excluded = true;
    let (part, part_terms) = model.loss(&masked).unwrap();
    assert_eq!(terms, 4);
    assert_eq!(part_terms, 2);
    assert!(part < full);
    assert_eq!(model.predict_mean(&masked).unwrap().agents.len(), 2);
}

#[test]
fn lone_agent_with_robot_runs() {
    let len = 7;
    let window = make_window(&[some(line([0.0, 0.0], [0.1, 0.0], len))], &line([2.0, 0.0], [-0.1, 0.0], len), 4);
    let model = small_model(LossMode::Position, 4, 3, 4);
    let graph = crate::stgraph::build_graph(&window);
    assert_eq!(graph.outgoing(3, 0).count(), 1);
    let far = vec![[50.0, 50.0]; 3];
    let near = model.predict_mean(&window).unwrap();
    let away = model.rollout(&window, Some(&far), Feedback::Mean, 0).unwrap();
    assert!(near.mean_divergence(&away) > 0.0);
}

#[test]
fn batched_pass_matches_single_windows() {
    let a = toy_window(4, 3);
    let len = 7;
    let mut b = make_window(
        &[
            some(line([0.5, 0.5], [0.0, 0.1], len)),
            some(line([-1.0, 0.0], [0.1, 0.0], len)),
            some(line([2.0, 2.0], [-0.1, -0.1], len)),
        ],
        &line([0.0, -1.0], [0.05, 0.1], len),
        4,
    );
    b.id = "test@1".into();
    b.agents[2].positions[0] = None;
    let model = small_model(LossMode::Velocity, 4, 3, 6);
    let (pass, grads) = model.batch_loss_and_gradient(&[&a, &b]).unwrap();
    let (pa, ga) = model.loss_and_gradient(&a).unwrap();
    let (pb, gb) = model.loss_and_gradient(&b).unwrap();
    assert!((pass.windows[0].loss - pa.loss()).abs() < 1e-10);
    assert!((pass.windows[1].loss - pb.loss()).abs() < 1e-10);
    assert_eq!(pass.windows[1].rollout.agents.len(), 3);
    let mut sum = ga.clone();
    sum.add_assign(&gb);
    for (x, y) in grads.arrays().zip(sum.arrays()) {
        for (p, q) in x.iter().zip(y.iter()) {
            assert!((p - q).abs() < 1e-10);
        }
    }
    let items = [BatchItem { seed: 5, ..BatchItem::new(&a) }, BatchItem { seed: 9, ..BatchItem::new(&b) }];
    let sampled = model.forward_batch(&items, Feedback::Sample, false).unwrap();
    assert_eq!(sampled.windows[1].rollout, model.rollout(&b, None, Feedback::Sample, 9).unwrap());
}

#[test]
fn checkpoint_restores_identical_predictions() {
    let window = toy_window(4, 3);
    let model = small_model(LossMode::Velocity, 4, 3, 5);
    let labels = crate::trajdata::TypeLabels::new(["pedestrian", "robot"]).unwrap();
    let ckpt = model.to_checkpoint(Some(labels), None);
    let bytes = ckpt.to_bytes();
    let back = ResponseRnn::from_checkpoint(&crate::checkpoint::Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.predict_mean(&window).unwrap(), model.predict_mean(&window).unwrap());
    assert_eq!(back.to_checkpoint(ckpt.labels.clone(), None).to_bytes(), bytes);

    let mut wrong = ckpt.clone();
    wrong.labels = Some(crate::trajdata::TypeLabels::new(["a", "b", "c"]).unwrap());
    assert!(matches!(ResponseRnn::from_checkpoint(&wrong), Err(Error::Checkpoint(_))));
    let mut missing = ckpt;
    missing.params = ParameterSet::new();
    assert!(matches!(ResponseRnn::from_checkpoint(&missing), Err(Error::Checkpoint(_))));
}

#[test]
fn public_gradient_check_at_published_width() {
    for mode in [LossMode::Position, LossMode::Velocity] {
        let report = gradient_check(ModelConfig::new(2, 4, 2, mode), 7).unwrap();
        assert!(report.max_rel_error < 1e-4, "{mode:?}: {:?}", report.worst);
        assert!(report.checked >= 200);
    }
}
