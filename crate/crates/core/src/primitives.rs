//! Motion primitives: short dynamically consistent trajectories stored in
//! canonical form (start position at the origin).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Action, ModelId, RobotModel, State};
use crate::trajopt::{self, OptProblem, OptSettings};
use crate::world::Robot;

/// Per-component tolerance for replay consistency.
pub const DEFECT_TOL: f64 = 1e-9;

/// Default length buckets in steps.
pub const DEFAULT_BUCKETS: [usize; 4] = [5, 10, 15, 20];

#[derive(Debug, thiserror::Error)]
pub enum PrimitiveError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed primitive file: {0}")]
    Malformed(String),
    #[error("primitive {index}: model {found} does not match set model {expected}")]
    ModelMismatch {
        index: usize,
        expected: ModelId,
        found: ModelId,
    },
    #[error("primitive {index}: shape mismatch ({detail})")]
    Shape { index: usize, detail: String },
    #[error("primitive {index}: dynamics defect {defect:e} at step {step}")]
    Defect {
        index: usize,
        step: usize,
        defect: f64,
    },
    #[error("primitive {index}: bound violation at step {step}")]
    Bounds { index: usize, step: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionPrimitive {
    #[serde(skip)]
    pub model: Option<ModelId>,
    #[serde(rename = "Q")]
    pub states: Vec<State>,
    #[serde(rename = "U")]
    pub actions: Vec<Action>,
}

impl MotionPrimitive {
    pub fn new(model: ModelId, states: Vec<State>, actions: Vec<Action>) -> Self {
        Self {
            model: Some(model),
            states,
            actions,
        }
    }

    /// Builds a primitive by rolling `actions` out from `start`.
    pub fn from_rollout(model: &RobotModel, start: &[f64], actions: Vec<Action>) -> Self {
        let states = model.rollout(start, &actions).expect("dimensions match model");
        Self::new(model.id, states, actions)
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Duration `T·dt` in seconds.
    pub fn cost(&self, dt: f64) -> f64 {
        self.len() as f64 * dt
    }

    pub fn start(&self) -> &State {
        &self.states[0]
    }

    pub fn end(&self) -> &State {
        self.states.last().expect("non-empty state sequence")
    }

    /// Translates every state so the start position is `(0, 0)`.
    pub fn canonicalize(mut self, model: &RobotModel) -> Self {
        let [ix, iy] = model.translation_indices;
        let (x0, y0) = (self.states[0][ix], self.states[0][iy]);
        for q in &mut self.states {
            q[ix] -= x0;
            q[iy] -= y0;
        }
        self
    }

    pub fn is_canonical(&self, model: &RobotModel) -> bool {
        let [ix, iy] = model.translation_indices;
        self.states[0][ix] == 0.0 && self.states[0][iy] == 0.0
    }

    /// Checks shape, replay consistency and bounds; `index` only labels errors.
    pub fn check(&self, model: &RobotModel, index: usize) -> Result<(), PrimitiveError> {
        if self.states.len() != self.actions.len() + 1 || self.actions.is_empty() {
            return Err(PrimitiveError::Shape {
                index,
                detail: format!("{} states for {} actions", self.states.len(), self.actions.len()),
            });
        }
        if self.states.iter().any(|q| q.len() != model.d_q) || self.actions.iter().any(|u| u.len() != model.d_u) {
            return Err(PrimitiveError::Shape {
                index,
                detail: "component dimension".into(),
            });
        }
        let mut next = vec![0.0; model.d_q];
        let mut diff = vec![0.0; model.d_q];
        for (t, u) in self.actions.iter().enumerate() {
            if !model.validate(&self.states[t], Some(u)) {
                return Err(PrimitiveError::Bounds { index, step: t });
            }
            model.step_into(&self.states[t], u, &mut next);
            model.difference_into(&self.states[t + 1], &next, &mut diff);
            let defect = trajopt::max_abs(&diff);
            if !(defect <= DEFECT_TOL) {
                return Err(PrimitiveError::Defect {
                    index,
                    step: t,
                    defect,
                });
            }
        }
        if !model.validate(self.end(), None) {
            return Err(PrimitiveError::Bounds {
                index,
                step: self.len(),
            });
        }
        Ok(())
    }
}

/// A growing collection of canonical primitives for one robot model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSet {
    pub model: ModelId,
    pub primitives: Vec<MotionPrimitive>,
}

impl PrimitiveSet {
    pub fn new(model: ModelId) -> Self {
        Self {
            model,
            primitives: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn push(&mut self, p: MotionPrimitive) {
        self.primitives.push(p);
    }

    /// Member indices grouped by step count.
    pub fn by_length(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, p) in self.primitives.iter().enumerate() {
            out.entry(p.len()).or_default().push(i);
        }
        out
    }

    /// Validates every member (canonical form included).
    pub fn check(&self, model: &RobotModel) -> Result<(), PrimitiveError> {
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some(m) = p.model {
                if m != self.model {
                    return Err(PrimitiveError::ModelMismatch {
                        index: i,
                        expected: self.model,
                        found: m,
                    });
                }
            }
            p.check(model, i)?;
            if !p.is_canonical(model) {
                return Err(PrimitiveError::Shape {
                    index: i,
                    detail: "start position is not the origin".into(),
                });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PrimitiveError> {
        let path = path.as_ref();
        let s = serde_json::to_string(self).expect("primitive set serializes");
        fs::write(path, s).map_err(|source| PrimitiveError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Loads and fully validates a set against `model`.
    pub fn load(path: impl AsRef<Path>, model: &RobotModel) -> Result<Self, PrimitiveError> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|source| PrimitiveError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&s, model)
    }

    pub fn from_json(s: &str, model: &RobotModel) -> Result<Self, PrimitiveError> {
        let mut set: PrimitiveSet = serde_json::from_str(s).map_err(|e| PrimitiveError::Malformed(e.to_string()))?;
        if set.model != model.id {
            return Err(PrimitiveError::ModelMismatch {
                index: 0,
                expected: model.id,
                found: set.model,
            });
        }
        for p in &mut set.primitives {
            p.model = Some(set.model);
        }
        set.check(model)?;
        Ok(set)
    }
}

/// Uniform start state over the non-translational bounds (angles over the
/// full circle, unbounded components at zero), position at the origin.
pub fn sample_canonical_start<R: Rng + ?Sized>(model: &RobotModel, rng: &mut R) -> State {
    let mut q = vec![0.0; model.d_q];
    for i in model.non_translational_indices() {
        q[i] = if model.is_angle(i) {
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
        } else if model.q_lo[i].is_finite() && model.q_hi[i].is_finite() {
            rng.random_range(model.q_lo[i]..=model.q_hi[i])
        } else {
            0.0
        };
    }
    model.wrap_state(&mut q);
    q
}

/// Three random action knots, linearly interpolated across the horizon.
pub fn random_spline_actions<R: Rng + ?Sized>(model: &RobotModel, length: usize, rng: &mut R) -> Vec<Action> {
    let knots: Vec<Action> = (0..3)
        .map(|_| {
            (0..model.d_u)
                .map(|j| rng.random_range(model.u_lo[j]..=model.u_hi[j]))
                .collect()
        })
        .collect();
    (0..length)
        .map(|t| {
            let s = if length > 1 { 2.0 * t as f64 / (length - 1) as f64 } else { 0.0 };
            let k = (s.floor() as usize).min(1);
            let w = s - k as f64;
            let mut u: Action = (0..model.d_u)
                .map(|j| (1.0 - w) * knots[k][j] + w * knots[k + 1][j])
                .collect();
            model.clamp_action(&mut u);
            u
        })
        .collect()
}

/// Random rollout that stays inside the state bounds; tries a few splines.
fn bounded_random_rollout<R: Rng + ?Sized>(model: &RobotModel, start: &[f64], length: usize, rng: &mut R) -> MotionPrimitive {
    for _ in 0..100 {
        let us = random_spline_actions(model, length, rng);
        let p = MotionPrimitive::from_rollout(model, start, us);
        if p.states.iter().all(|q| model.validate(q, None)) {
            return p;
        }
    }
    // zero actions keep velocity-like states fixed, always valid from a valid start
    MotionPrimitive::from_rollout(model, start, vec![vec![0.0; model.d_u]; length])
}

/// Baseline primitive: a free-space two-point BVP between a random canonical
/// start and a random reachable goal, solved with the trajectory optimizer
/// under a 50-iteration budget; falls back to the random spline rollout that
/// produced the goal when the solve fails.
pub fn generate_random_primitive<R: Rng + ?Sized>(robot: &Robot, length: usize, rng: &mut R) -> MotionPrimitive {
    assert!(length >= 1, "primitive length must be positive");
    let model = &robot.model;
    let start = sample_canonical_start(model, rng);
    let fallback = bounded_random_rollout(model, &start, length, rng);
    let goal = fallback.end().clone();

    // straight-line state guess from start to goal, zero actions
    let guess_states: Vec<State> = (0..=length)
        .map(|t| {
            let w = t as f64 / length as f64;
            let d = model.difference(&goal, &start);
            let mut q: State = start.iter().zip(&d).map(|(a, b)| a + w * b).collect();
            model.wrap_state(&mut q);
            q
        })
        .collect();
    let settings = OptSettings {
        max_rounds: 5,
        max_iters_per_round: 10,
        ..OptSettings::default()
    };
    let p = OptProblem {
        robot,
        environment: None,
        start: start.clone(),
        goal,
        guess_states,
        guess_actions: vec![vec![0.0; model.d_u]; length],
        settings,
    };
    match trajopt::optimize(&p) {
        Ok(r) if r.feasible => {
            let prim = MotionPrimitive::new(model.id, r.states, r.actions).canonicalize(model);
            if prim.check(model, 0).is_ok() {
                return prim;
            }
            fallback
        }
        _ => fallback,
    }
}

/// Cuts a trajectory into consecutive canonical primitives whose lengths are
/// drawn uniformly from `buckets`; a tail shorter than every bucket is dropped.
/// Returns each primitive with the step index where it starts.
pub fn split_trajectory<R: Rng + ?Sized>(
    model: &RobotModel,
    states: &[State],
    actions: &[Action],
    buckets: &[usize],
    rng: &mut R,
) -> Vec<(MotionPrimitive, usize)> {
    assert_eq!(states.len(), actions.len() + 1, "|Q| must equal |U|+1");
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let remaining = actions.len() - start;
        let fitting: Vec<usize> = buckets.iter().copied().filter(|&b| b >= 1 && b <= remaining).collect();
        let Some(&len) = fitting.choose(rng) else { break };
        let p = MotionPrimitive::new(
            model.id,
            states[start..=start + len].to_vec(),
            actions[start..start + len].to_vec(),
        )
        .canonicalize(model);
        out.push((p, start));
        start += len;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uni() -> Robot {
        Robot::from_id(ModelId::Unicycle1)
    }

    #[test]
    fn canonicalize_is_idempotent_and_translation_invariant() {
        let r = uni();
        let m = &r.model;
        let us = vec![vec![0.4, 0.2]; 5];
        let p = MotionPrimitive::from_rollout(m, &[1.0, 2.0, 0.3], us.clone());
        let c = p.clone().canonicalize(m);
        assert_eq!(c.clone().canonicalize(m), c);
        assert!(c.is_canonical(m));
        let shifted = MotionPrimitive::from_rollout(m, &[4.0, 0.0, 0.3], us.clone());
        let cs = shifted.canonicalize(m);
        for (a, b) in cs.states.iter().zip(&c.states) {
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12));
        }
        assert_eq!(c.actions, us);
        assert!(c.states.iter().zip(&p.states).all(|(a, b)| a[2] == b[2]));
    }

    #[test]
    fn random_primitives_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for id in [ModelId::Unicycle1, ModelId::Unicycle2, ModelId::CarTrailer] {
            let r = Robot::from_id(id);
            for &len in &DEFAULT_BUCKETS {
                let p = generate_random_primitive(&r, len, &mut rng);
                assert_eq!(p.actions.len(), len);
                assert_eq!(p.states.len(), len + 1);
                p.check(&r.model, 0).unwrap();
                assert!(p.is_canonical(&r.model));
            }
        }
    }

    #[test]
    fn split_examples() {
        let r = uni();
        let m = &r.model;
        let us = vec![vec![0.3, 0.1]; 10];
        let qs = m.rollout(&[1.0, 1.0, 0.0], &us).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let parts = split_trajectory(m, &qs, &us, &[5], &mut rng);
        assert_eq!(parts.iter().map(|p| p.1).collect::<Vec<_>>(), vec![0, 5]);
        assert!(parts.iter().all(|(p, _)| p.check(m, 0).is_ok() && p.is_canonical(m)));
        assert!(split_trajectory(m, &qs[..4], &us[..3], &[5, 10], &mut rng).is_empty());
    }

    #[test]
    fn split_partitions_a_prefix() {
        let r = uni();
        let m = &r.model;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [1usize, 7, 23, 64, 131] {
            let us = random_spline_actions(m, n, &mut rng);
            let qs = m.rollout(&[0.5, 0.5, 1.0], &us).unwrap();
            let parts = split_trajectory(m, &qs, &us, &DEFAULT_BUCKETS, &mut rng);
            let mut cat: Vec<Action> = Vec::new();
            let mut expect_start = 0;
            for (p, s) in &parts {
                assert_eq!(*s, expect_start);
                expect_start += p.len();
                cat.extend(p.actions.iter().cloned());
            }
            assert!(n - cat.len() < 5);
            assert_eq!(&us[..cat.len()], &cat[..]);
        }
    }

    #[test]
    fn set_roundtrip_and_tamper_detection() {
        let r = uni();
        let m = &r.model;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut set = PrimitiveSet::new(ModelId::Unicycle1);
        let empty = serde_json::to_string(&set).unwrap();
        assert_eq!(PrimitiveSet::from_json(&empty, m).unwrap(), set);
        for _ in 0..3 {
            set.push(generate_random_primitive(&r, 5, &mut rng));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.json");
        set.save(&path).unwrap();
        assert_eq!(PrimitiveSet::load(&path, m).unwrap(), set);

        let mut bad = set.clone();
        bad.primitives[2].actions[1][0] = 0.7;
        let s = serde_json::to_string(&bad).unwrap();
        match PrimitiveSet::from_json(&s, m) {
            Err(PrimitiveError::Bounds { index: 2, step: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = set.clone();
        bad.primitives[1].states[3][0] += 1e-3;
        let s = serde_json::to_string(&bad).unwrap();
        assert!(matches!(PrimitiveSet::from_json(&s, m), Err(PrimitiveError::Defect { index: 1, .. })));
        assert!(matches!(PrimitiveSet::from_json("{\"model\":", m), Err(PrimitiveError::Malformed(_))));
    }
}
