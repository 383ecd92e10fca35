//! Discontinuity-bounded A*.
//!
//! Edges are motion primitives translated to the position of the expanded
//! node. A primitive may be applied when its start matches the node up to the
//! tolerance `δ` on the non-translational components, so the returned chain
//! of segments can contain small jumps that trajectory optimization repairs.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{angle_diff, Action, RobotModel, State};
use crate::nn::{Axis, RangeIndex};
use crate::primitives::PrimitiveSet;
use crate::world::{ProblemInstance, Robot};

pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

/// Component weights of the state metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricWeights {
    pub angle: f64,
    pub other: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        Self { angle: 0.5, other: 0.2 }
    }
}

/// Euclidean position distance plus weighted absolute differences of the
/// remaining components, angles compared on the circle.
pub fn state_distance(model: &RobotModel, w: MetricWeights, a: &[f64], b: &[f64]) -> f64 {
    let [ix, iy] = model.translation_indices;
    let mut d = (a[ix] - b[ix]).hypot(a[iy] - b[iy]);
    for i in 0..model.d_q {
        if i == ix || i == iy {
            continue;
        }
        d += if model.is_angle(i) {
            w.angle * angle_diff(a[i], b[i]).abs()
        } else {
            w.other * (a[i] - b[i]).abs()
        };
    }
    d
}

/// Straight-line travel time at top speed; never exceeds the true time.
pub fn heuristic(model: &RobotModel, q: &[f64], goal: &[f64]) -> f64 {
    let [ix, iy] = model.translation_indices;
    (q[ix] - goal[ix]).hypot(q[iy] - goal[iy]) / model.max_speed()
}

/// Range index over the canonical start states of a primitive set.
#[derive(Clone, Debug)]
pub struct PrimitiveIndex {
    dims: Vec<usize>,
    tree: RangeIndex,
}

impl PrimitiveIndex {
    pub fn build(model: &RobotModel, weights: MetricWeights, set: &PrimitiveSet) -> Self {
        let dims = model.non_translational_indices();
        let axes = dims
            .iter()
            .map(|&i| {
                if model.is_angle(i) {
                    Axis { weight: weights.angle, periodic: true }
                } else {
                    Axis { weight: weights.other, periodic: false }
                }
            })
            .collect();
        let points = set
            .primitives
            .iter()
            .map(|p| dims.iter().map(|&i| p.start()[i]).collect())
            .collect();
        Self { tree: RangeIndex::build(axes, points), dims }
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    /// Primitives whose start lies within `radius` of `q`, ascending by index.
    pub fn matches(&self, q: &[f64], radius: f64) -> Vec<(usize, f64)> {
        let key: Vec<f64> = self.dims.iter().map(|&i| q[i]).collect();
        self.tree.within(&key, radius)
    }

    pub fn matches_linear(&self, q: &[f64], radius: f64) -> Vec<(usize, f64)> {
        let key: Vec<f64> = self.dims.iter().map(|&i| q[i]).collect();
        self.tree.within_linear(&key, radius)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("open list exhausted after {expanded} expansions")]
    Exhausted { expanded: usize },
    #[error("node budget of {budget} reached")]
    NodeBudget { budget: usize },
    #[error("deadline reached after {expanded} expansions")]
    Deadline { expanded: usize },
    #[error("primitive set is empty")]
    EmptySet,
    #[error("delta must be positive and finite, got {0}")]
    InvalidDelta(f64),
}

#[derive(Clone, Debug)]
pub struct SearchConfig {
    pub delta: f64,
    /// Nodes with `f ≥ c_max` are pruned.
    pub c_max: f64,
    pub node_budget: usize,
    pub weights: MetricWeights,
    pub deadline: Option<Instant>,
}

impl SearchConfig {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            c_max: f64::INFINITY,
            node_budget: DEFAULT_NODE_BUDGET,
            weights: MetricWeights::default(),
            deadline: None,
        }
    }
}

/// A primitive placed in the workspace.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub primitive: usize,
    pub translation: [f64; 2],
    /// Distance between the previous segment's end (or the start) and this
    /// segment's start.
    pub junction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscontinuousTrajectory {
    pub segments: Vec<Segment>,
    /// Distance between the last segment's end (or the start) and the goal.
    pub goal_gap: f64,
    /// Sum of segment durations (s).
    pub cost: f64,
    pub expanded: usize,
}

impl DiscontinuousTrajectory {
    pub fn horizon(&self, set: &PrimitiveSet) -> usize {
        self.segments.iter().map(|s| set.primitives[s.primitive].len()).sum()
    }

    /// Concatenated states and actions of the placed primitives, with the
    /// first state replaced by `start`.
    pub fn assemble(&self, model: &RobotModel, set: &PrimitiveSet, start: &[f64]) -> (Vec<State>, Vec<Action>) {
        let [ix, iy] = model.translation_indices;
        let mut states = vec![start.to_vec()];
        let mut actions = Vec::new();
        for seg in &self.segments {
            let p = &set.primitives[seg.primitive];
            for q in &p.states[1..] {
                let mut q = q.clone();
                q[ix] += seg.translation[0];
                q[iy] += seg.translation[1];
                states.push(q);
            }
            actions.extend(p.actions.iter().cloned());
        }
        (states, actions)
    }
}

struct Node {
    state: State,
    g: f64,
    parent: Option<usize>,
    via: Option<Segment>,
}

#[derive(PartialEq)]
struct OpenEntry {
    f: f64,
    g: f64,
    id: usize,
}

impl Eq for OpenEntry {}

impl Ord for OpenEntry {
    // Max-heap: smallest f first, then deeper nodes, then older nodes.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.total_cmp(&other.g))
            .then(other.id.cmp(&self.id))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct SpatialHash {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl SpatialHash {
    fn key(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.cell).floor() as i64, (y / self.cell).floor() as i64)
    }

    fn insert(&mut self, x: f64, y: f64, id: usize) {
        let k = self.key(x, y);
        self.buckets.entry(k).or_default().push(id);
    }

    fn neighbors(&self, x: f64, y: f64) -> impl Iterator<Item = usize> + '_ {
        let (kx, ky) = self.key(x, y);
        (-1..=1)
            .flat_map(move |dx| (-1..=1).map(move |dy| (kx + dx, ky + dy)))
            .filter_map(|k| self.buckets.get(&k))
            .flatten()
            .copied()
    }
}

#[derive(Serialize)]
struct TraceLine<'a> {
    state: &'a [f64],
    f: f64,
    g: f64,
}

/// Runs the search from `start` to `goal`. When `trace` is given, every
/// expanded node is written to it as one JSON line.
#[allow(clippy::too_many_arguments)]
pub fn search(
    robot: &Robot,
    inst: &ProblemInstance,
    set: &PrimitiveSet,
    index: &PrimitiveIndex,
    start: &[f64],
    goal: &[f64],
    cfg: &SearchConfig,
    mut trace: Option<&mut dyn Write>,
) -> Result<DiscontinuousTrajectory, SearchError> {
    if !(cfg.delta > 0.0 && cfg.delta.is_finite()) {
        return Err(SearchError::InvalidDelta(cfg.delta));
    }
    if set.is_empty() {
        return Err(SearchError::EmptySet);
    }
    let model = &robot.model;
    let dt = model.dt;
    let [ix, iy] = model.translation_indices;
    let dup_radius = cfg.delta / 2.0;

    let mut nodes = vec![Node { state: start.to_vec(), g: 0.0, parent: None, via: None }];
    let mut hash = SpatialHash { cell: dup_radius.max(1e-9), buckets: HashMap::new() };
    hash.insert(start[ix], start[iy], 0);
    let mut open = BinaryHeap::new();
    let h0 = heuristic(model, start, goal);
    if h0 < cfg.c_max {
        open.push(OpenEntry { f: h0, g: 0.0, id: 0 });
    }
    let mut closed = vec![false];
    let mut expanded = 0usize;

    while let Some(OpenEntry { f, id, .. }) = open.pop() {
        if closed[id] {
            continue;
        }
        closed[id] = true;
        let g = nodes[id].g;
        if let Some(w) = trace.as_deref_mut() {
            let line = TraceLine { state: &nodes[id].state, f, g };
            if let Ok(s) = serde_json::to_string(&line) {
                let _ = writeln!(w, "{s}");
            }
        }
        let goal_gap = state_distance(model, cfg.weights, &nodes[id].state, goal);
        if goal_gap <= cfg.delta {
            return Ok(reconstruct(&nodes, id, goal_gap, expanded));
        }
        if expanded >= cfg.node_budget {
            return Err(SearchError::NodeBudget { budget: cfg.node_budget });
        }
        expanded += 1;
        if expanded % 64 == 0 {
            if let Some(d) = cfg.deadline {
                if Instant::now() >= d {
                    return Err(SearchError::Deadline { expanded });
                }
            }
        }

        let (px, py) = (nodes[id].state[ix], nodes[id].state[iy]);
        for (pi, junction) in index.matches(&nodes[id].state, cfg.delta) {
            let prim = &set.primitives[pi];
            let g2 = g + prim.cost(dt);
            let mut succ = prim.end().clone();
            succ[ix] += px;
            succ[iy] += py;
            let f2 = g2 + heuristic(model, &succ, goal);
            if f2 >= cfg.c_max {
                continue;
            }
            let dominated = hash.neighbors(succ[ix], succ[iy]).any(|n| {
                nodes[n].g <= g2 && state_distance(model, cfg.weights, &nodes[n].state, &succ) <= dup_radius
            });
            if dominated {
                continue;
            }
            if inst.shifted_motion_collides(robot, &prim.states, px, py) {
                continue;
            }
            let nid = nodes.len();
            hash.insert(succ[ix], succ[iy], nid);
            nodes.push(Node {
                state: succ,
                g: g2,
                parent: Some(id),
                via: Some(Segment { primitive: pi, translation: [px, py], junction }),
            });
            closed.push(false);
            open.push(OpenEntry { f: f2, g: g2, id: nid });
        }
    }
    Err(SearchError::Exhausted { expanded })
}

fn reconstruct(nodes: &[Node], mut id: usize, goal_gap: f64, expanded: usize) -> DiscontinuousTrajectory {
    let cost = nodes[id].g;
    let mut segments = Vec::new();
    while let Some(p) = nodes[id].parent {
        segments.push(nodes[id].via.clone().expect("non-root node has a segment"));
        id = p;
    }
    segments.reverse();
    DiscontinuousTrajectory { segments, goal_gap, cost, expanded }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ModelId;
    use crate::primitives::MotionPrimitive;
    use std::f64::consts::PI;

    fn uni() -> RobotModel {
        RobotModel::new(ModelId::Unicycle1)
    }

    #[test]
    fn distance_basics() {
        let m = uni();
        let w = MetricWeights::default();
        let a = [1.0, 2.0, 0.3];
        assert_eq!(state_distance(&m, w, &a, &a), 0.0);
        let b = [1.5, 1.0, -2.0];
        assert_eq!(state_distance(&m, w, &a, &b), state_distance(&m, w, &b, &a));
        let d = state_distance(&m, w, &[0.0, 0.0, PI - 0.01], &[0.0, 0.0, -PI + 0.01]);
        approx::assert_abs_diff_eq!(d, 0.02 * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn heuristic_is_travel_time() {
        let m = uni();
        assert_eq!(heuristic(&m, &[1.0, 1.0, 0.0], &[1.0, 1.0, 2.0]), 0.0);
        approx::assert_abs_diff_eq!(heuristic(&m, &[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]), 2.0, epsilon = 1e-12);
    }

    fn straight_set(model: &RobotModel, steps: usize) -> PrimitiveSet {
        let mut set = PrimitiveSet::new(model.id);
        set.push(MotionPrimitive::from_rollout(model, &[0.0, 0.0, 0.0], vec![vec![0.5, 0.0]; steps]));
        set
    }

    #[test]
    fn single_connecting_primitive() {
        let robot = Robot::from_id(ModelId::Unicycle1);
        let set = straight_set(&robot.model, 20);
        let inst = ProblemInstance::empty(ModelId::Unicycle1, 5.0, 5.0, vec![1.0, 2.0, 0.0], vec![2.0, 2.0, 0.0]);
        let idx = PrimitiveIndex::build(&robot.model, MetricWeights::default(), &set);
        for delta in [1e-6, 0.1, 0.5] {
            let cfg = SearchConfig::new(delta);
            let sol = search(&robot, &inst, &set, &idx, &inst.start, &inst.goal, &cfg, None).unwrap();
            assert_eq!(sol.segments.len(), 1);
            assert_eq!(sol.segments[0].junction, 0.0);
            approx::assert_abs_diff_eq!(sol.cost, 2.0, epsilon = 1e-12);
            assert!(sol.goal_gap < 1e-9);
        }
    }

    #[test]
    fn large_delta_accepts_start() {
        let robot = Robot::from_id(ModelId::Unicycle1);
        let set = straight_set(&robot.model, 20);
        let inst = ProblemInstance::empty(ModelId::Unicycle1, 5.0, 5.0, vec![1.0, 2.0, 0.0], vec![1.2, 2.0, 0.0]);
        let idx = PrimitiveIndex::build(&robot.model, MetricWeights::default(), &set);
        let sol = search(&robot, &inst, &set, &idx, &inst.start, &inst.goal, &SearchConfig::new(0.5), None).unwrap();
        assert!(sol.segments.is_empty());
        assert_eq!(sol.cost, 0.0);
        let (q, u) = sol.assemble(&robot.model, &set, &inst.start);
        assert_eq!((q.len(), u.len()), (1, 0));
    }

    #[test]
    fn cost_bound_prunes() {
        let robot = Robot::from_id(ModelId::Unicycle1);
        let set = straight_set(&robot.model, 20);
        let inst = ProblemInstance::empty(ModelId::Unicycle1, 5.0, 5.0, vec![1.0, 2.0, 0.0], vec![2.0, 2.0, 0.0]);
        let idx = PrimitiveIndex::build(&robot.model, MetricWeights::default(), &set);
        let mut cfg = SearchConfig::new(0.1);
        cfg.c_max = 2.0;
        let r = search(&robot, &inst, &set, &idx, &inst.start, &inst.goal, &cfg, None);
        assert!(matches!(r, Err(SearchError::Exhausted { .. })));
    }

    #[test]
    fn errors_are_distinct() {
        let robot = Robot::from_id(ModelId::Unicycle1);
        let set = straight_set(&robot.model, 5);
        let inst = ProblemInstance::empty(ModelId::Unicycle1, 5.0, 5.0, vec![0.5, 0.5, 0.0], vec![4.5, 4.5, 0.0]);
        let idx = PrimitiveIndex::build(&robot.model, MetricWeights::default(), &set);
        let mut cfg = SearchConfig::new(0.1);
        cfg.node_budget = 2;
        let r = search(&robot, &inst, &set, &idx, &inst.start, &inst.goal, &cfg, None);
        assert_eq!(r, Err(SearchError::NodeBudget { budget: 2 }));
        let empty = PrimitiveSet::new(ModelId::Unicycle1);
        let r = search(&robot, &inst, &empty, &idx, &inst.start, &inst.goal, &SearchConfig::new(0.1), None);
        assert_eq!(r, Err(SearchError::EmptySet));
        let r = search(&robot, &inst, &set, &idx, &inst.start, &inst.goal, &SearchConfig::new(0.0), None);
        assert_eq!(r, Err(SearchError::InvalidDelta(0.0)));
    }

    #[test]
    fn trace_writes_one_line_per_expansion() {
        let robot = Robot::from_id(ModelId::Unicycle1);
        let set = straight_set(&robot.model, 10);
        let inst = ProblemInstance::empty(ModelId::Unicycle1, 5.0, 5.0, vec![1.0, 2.0, 0.0], vec![3.0, 2.0, 0.0]);
        let idx = PrimitiveIndex::build(&robot.model, MetricWeights::default(), &set);
        let mut buf: Vec<u8> = Vec::new();
        let sol = search(&robot, &inst, &set, &idx, &inst.start, &inst.goal, &SearchConfig::new(0.01), Some(&mut buf))
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), sol.expanded + 1);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["g"], 0.0);
    }
}
