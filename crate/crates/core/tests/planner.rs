use std::sync::Arc;

use primdiff::diffusion::{encode_primitive, train, DiffusionSource, ModelBank, PrimitiveDenoiser, Scaling, TrainConfig, LAYOUT_VERSION};
use primdiff::diffusion::condition_dim;
use primdiff::dynamics::ModelId;
use primdiff::planner::{
    plan, verify_solution, PlanOutcome, PlannerConfig, PlannerError, PrimitiveSource, RandomSource, RecordedSource,
};
use primdiff::primitives::{generate_random_primitive, MotionPrimitive, PrimitiveSet};
use primdiff::world::{Obstacle, ProblemInstance, Robot};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Passes draws through and keeps a copy of everything handed out.
struct Recorder<S> {
    inner: S,
    log: PrimitiveSet,
}

impl<S: PrimitiveSource> PrimitiveSource for Recorder<S> {
    fn draw(&mut self, length: usize, count: usize) -> Result<Vec<MotionPrimitive>, PlannerError> {
        let out = self.inner.draw(length, count)?;
        for p in &out {
            self.log.push(p.clone());
        }
        Ok(out)
    }
}

fn walled_instance() -> ProblemInstance {
    let mut inst = ProblemInstance::empty(ModelId::Unicycle1, 5.0, 4.0, vec![1.0, 1.0, 0.0], vec![4.0, 3.0, 1.0]);
    inst.obstacles.push(Obstacle { cx: 2.5, cy: 2.8, hx: 0.2, hy: 1.2 });
    inst
}

fn bounded_config() -> PlannerConfig {
    PlannerConfig { time_limit: 120.0, max_iterations: Some(4), seed: 3, ..Default::default() }
}

fn strip_times(o: &PlanOutcome) -> Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>, f64, usize)> {
    o.reports.iter().map(|r| (r.states.clone(), r.actions.clone(), r.cost, r.iteration)).collect()
}

fn check_contract(robot: &Robot, inst: &ProblemInstance, o: &PlanOutcome) {
    for w in o.reports.windows(2) {
        assert!(w[1].cost < w[0].cost, "costs {} then {}", w[0].cost, w[1].cost);
    }
    for r in &o.reports {
        verify_solution(robot, inst, &r.states, &r.actions, 1e-3).unwrap();
        let replay = robot.model.rollout(&inst.start, &r.actions).unwrap();
        for (a, b) in replay.iter().zip(&r.states) {
            assert!(robot.model.difference(a, b).iter().all(|d| d.abs() <= 1e-6));
        }
        assert!((r.cost - r.actions.len() as f64 * robot.model.dt).abs() < 1e-9);
    }
    for w in o.iterations.windows(2) {
        assert!(w[1].set_size >= w[0].set_size);
    }
}

#[test]
fn random_source_runs_satisfy_the_contract_and_replay_through_a_recording() {
    let robot = Robot::from_id(ModelId::Unicycle1);
    let inst = walled_instance();
    let cfg = bounded_config();
    let mut rec = Recorder {
        inner: RandomSource::new(robot.clone(), None, ChaCha8Rng::seed_from_u64(8)),
        log: PrimitiveSet::new(ModelId::Unicycle1),
    };
    let live = plan(&robot, &inst, &cfg, &mut rec, |_| {}).unwrap();
    assert!(!live.reports.is_empty(), "{:?}", live.iterations);
    check_contract(&robot, &inst, &live);
    assert_eq!(live.source_primitives, rec.log.len());

    let mut replay = RecordedSource::new(&rec.log);
    let again = plan(&robot, &inst, &cfg, &mut replay, |_| {}).unwrap();
    assert_eq!(strip_times(&live), strip_times(&again));
    assert_eq!(live.iterations, again.iterations);
}

#[test]
fn diffusion_source_takes_the_same_code_path() {
    let robot = Robot::from_id(ModelId::Unicycle1);
    let m = &robot.model;
    let inst = walled_instance();
    let cfg = bounded_config();

    // a tiny bank trained for a few epochs on random primitives
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bank = ModelBank::default();
    for &len in &cfg.buckets {
        let rows: Vec<Vec<f64>> = (0..64).map(|_| encode_primitive(m, &generate_random_primitive(&robot, len, &mut rng))).collect();
        let conds = vec![vec![0.5; condition_dim(m)]; rows.len()];
        let tc = TrainConfig { hidden: vec![32, 32], epochs: 3, batch_size: 32, ..Default::default() };
        let (ddpm, curve) = train(&rows, &conds, Scaling::fit(&rows), Scaling::fit(&conds), &tc).unwrap();
        bank.insert(PrimitiveDenoiser { layout_version: LAYOUT_VERSION, model: m.id, length: len, ddpm, loss_curve: curve });
    }
    let source = DiffusionSource::new(Arc::new(bank), &robot, &inst, ChaCha8Rng::seed_from_u64(10)).unwrap();
    let mut rec = Recorder { inner: source, log: PrimitiveSet::new(ModelId::Unicycle1) };
    let live = plan(&robot, &inst, &cfg, &mut rec, |_| {}).unwrap();
    check_contract(&robot, &inst, &live);
    for p in &rec.log.primitives {
        p.check(m, 0).unwrap();
    }

    let mut replay = RecordedSource::new(&rec.log);
    let again = plan(&robot, &inst, &cfg, &mut replay, |_| {}).unwrap();
    assert_eq!(strip_times(&live), strip_times(&again));
    assert_eq!(live.iterations, again.iterations);
}

#[test]
fn exhausted_recording_is_a_source_error() {
    let robot = Robot::from_id(ModelId::Unicycle1);
    let mut empty = RecordedSource::new(&PrimitiveSet::new(ModelId::Unicycle1));
    let err = plan(&robot, &walled_instance(), &bounded_config(), &mut empty, |_| {}).unwrap_err();
    assert!(matches!(err, PlannerError::Source(_)));
}

#[test]
fn mismatched_robot_is_rejected() {
    let robot = Robot::from_id(ModelId::Unicycle2);
    let mut src = RandomSource::new(robot.clone(), None, ChaCha8Rng::seed_from_u64(1));
    let err = plan(&robot, &walled_instance(), &bounded_config(), &mut src, |_| {}).unwrap_err();
    assert!(matches!(err, PlannerError::ModelMismatch { .. }));
}
