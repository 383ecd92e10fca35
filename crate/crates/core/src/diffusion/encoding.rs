//! Vector layouts for primitives and conditions.
//!
//! A primitive of length `l` becomes `[start | u_0 … u_{l−1}]` where the start
//! keeps only non-translational components. Every angle, in the state or in
//! an action, is written as the pair `(sin, cos)`.

use crate::dynamics::{wrap_angle, RobotModel};
use crate::primitives::MotionPrimitive;
use crate::world::ProblemInstance;

/// Bumped whenever the encoding or condition layout changes.
pub const LAYOUT_VERSION: u32 = 1;

fn push_component(out: &mut Vec<f64>, v: f64, angle: bool) {
    if angle {
        let (s, c) = wrap_angle(v).sin_cos();
        out.push(s);
        out.push(c);
    } else {
        out.push(v);
    }
}

/// Non-translational part of `q` with angles expanded.
pub fn encode_state_features(model: &RobotModel, q: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in model.non_translational_indices() {
        push_component(&mut out, q[i], model.is_angle(i));
    }
    out
}

fn state_feature_dim(model: &RobotModel) -> usize {
    model
        .non_translational_indices()
        .iter()
        .map(|&i| if model.is_angle(i) { 2 } else { 1 })
        .sum()
}

fn action_feature_dim(model: &RobotModel) -> usize {
    model.d_u + model.action_angle_indices.len()
}

/// `d = d_s' + l·d_u'`.
pub fn encoded_dim(model: &RobotModel, length: usize) -> usize {
    state_feature_dim(model) + length * action_feature_dim(model)
}

pub fn encode_primitive(model: &RobotModel, prim: &MotionPrimitive) -> Vec<f64> {
    let mut out = encode_state_features(model, prim.start());
    for u in &prim.actions {
        for (j, &v) in u.iter().enumerate() {
            push_component(&mut out, v, model.action_angle_indices.contains(&j));
        }
    }
    out
}

/// Reads one component, projecting a `(sin, cos)` pair onto the circle.
fn pull_component(raw: &[f64], at: &mut usize, angle: bool) -> f64 {
    if angle {
        let (s, c) = (raw[*at], raw[*at + 1]);
        *at += 2;
        let n = s.hypot(c);
        if n > 0.0 {
            (s / n).atan2(c / n)
        } else {
            0.0
        }
    } else {
        *at += 1;
        raw[*at - 1]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Rejection {
    #[error("encoded vector has {got} entries, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("non-finite entry")]
    NonFinite,
    #[error("start state outside bounds")]
    StartBounds,
    #[error("state {0} of the rollout leaves the bounds")]
    StateBounds(usize),
}

/// Rebuilds a canonical primitive from an unscaled vector: actions are
/// clamped into their box and the states come from a rollout.
pub fn decode_primitive(model: &RobotModel, raw: &[f64], length: usize) -> Result<MotionPrimitive, Rejection> {
    let d = encoded_dim(model, length);
    if raw.len() != d {
        return Err(Rejection::Dimension { got: raw.len(), expected: d });
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Rejection::NonFinite);
    }
    let mut at = 0;
    let mut start = vec![0.0; model.d_q];
    for i in model.non_translational_indices() {
        start[i] = pull_component(raw, &mut at, model.is_angle(i));
    }
    if !model.validate(&start, None) {
        return Err(Rejection::StartBounds);
    }
    let actions: Vec<Vec<f64>> = (0..length)
        .map(|_| {
            let mut u: Vec<f64> = (0..model.d_u)
                .map(|j| pull_component(raw, &mut at, model.action_angle_indices.contains(&j)))
                .collect();
            model.clamp_action(&mut u);
            u
        })
        .collect();
    let prim = MotionPrimitive::from_rollout(model, &start, actions);
    if let Some(k) = prim.states.iter().position(|q| !model.validate(q, None)) {
        return Err(Rejection::StateBounds(k));
    }
    Ok(prim)
}

/// `[relative cost, relative location, width, height, density, start, goal]`.
pub fn condition_dim(model: &RobotModel) -> usize {
    5 + 2 * state_feature_dim(model)
}

pub fn condition_vector(model: &RobotModel, relative_cost: f64, relative_location: f64, inst: &ProblemInstance) -> Vec<f64> {
    let mut c = vec![relative_cost, relative_location, inst.width, inst.height, inst.density];
    c.extend(encode_state_features(model, &inst.start));
    c.extend(encode_state_features(model, &inst.goal));
    c
}

pub const CONDITION_NAMES_PREFIX: [&str; 5] = ["relative_cost", "relative_location", "width", "height", "density"];

/// Human-readable name of every condition feature.
pub fn condition_names(model: &RobotModel) -> Vec<String> {
    let mut names: Vec<String> = CONDITION_NAMES_PREFIX.iter().map(|s| s.to_string()).collect();
    for side in ["start", "goal"] {
        for i in model.non_translational_indices() {
            if model.is_angle(i) {
                names.push(format!("{side}_sin_q{i}"));
                names.push(format!("{side}_cos_q{i}"));
            } else {
                names.push(format!("{side}_q{i}"));
            }
        }
    }
    names
}
