//! The anytime planning loop.
//!
//! Every iteration grows the primitive set, shrinks the discontinuity bound,
//! runs discontinuity-bounded A* under the best cost found so far, repairs
//! the result with trajectory optimization and, on success, reports the
//! solution and feeds its pieces back into the primitive set.

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dbastar::{self, MetricWeights, PrimitiveIndex, SearchConfig, SearchError, DEFAULT_NODE_BUDGET};
use crate::dynamics::{Action, ModelId, ModelOverrides, RobotModel, State};
use crate::primitives::{self, MotionPrimitive, PrimitiveSet, DEFAULT_BUCKETS};
use crate::seeds;
use crate::trajopt::{self, OptProblem, OptSettings};
use crate::world::{ProblemInstance, Robot};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlannerError {
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error("primitive source failed: {0}")]
    Source(String),
    #[error("instance model {instance} does not match robot model {robot}")]
    ModelMismatch { instance: ModelId, robot: ModelId },
}

/// Where new primitives come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    /// Randomly generated primitives, optionally drawn from a pre-generated
    /// library file before generating fresh ones.
    RandomBaseline {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        library: Option<PathBuf>,
    },
    /// Samples from trained per-length denoisers stored in `models`.
    DiffusionModel { models: PathBuf },
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec::RandomBaseline { library: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Initial discontinuity bound; `None` picks the per-model default.
    pub delta0: Option<f64>,
    pub delta_decay: f64,
    pub initial_primitives: usize,
    pub growth: f64,
    pub buckets: Vec<usize>,
    /// Share of every iteration's budget per bucket, summing to 1.
    pub proportions: Vec<f64>,
    /// Wall-clock budget of the main loop (s).
    pub time_limit: f64,
    /// Optional iteration cap; runs bounded by it alone are reproducible.
    pub max_iterations: Option<usize>,
    /// Primitives fetched before the clock starts, as a multiple of the
    /// first iteration's budget.
    pub cache_factor: usize,
    pub source: SourceSpec,
    pub seed: u64,
    pub weights: MetricWeights,
    pub node_budget: usize,
    pub opt: OptSettings,
    /// Overrides of the robot model defaults.
    pub robot: ModelOverrides,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            delta0: None,
            delta_decay: 0.9,
            initial_primitives: 100,
            growth: 1.5,
            buckets: DEFAULT_BUCKETS.to_vec(),
            proportions: vec![0.25; 4],
            time_limit: 1.5,
            max_iterations: None,
            cache_factor: 5,
            source: SourceSpec::default(),
            seed: 0,
            weights: MetricWeights::default(),
            node_budget: DEFAULT_NODE_BUDGET,
            opt: OptSettings::default(),
            robot: ModelOverrides::default(),
        }
    }
}

pub fn default_delta0(id: ModelId) -> f64 {
    match id {
        ModelId::CarTrailer => 0.9,
        _ => 0.5,
    }
}

impl PlannerConfig {
    pub fn delta0_for(&self, id: ModelId) -> f64 {
        self.delta0.unwrap_or_else(|| default_delta0(id))
    }

    /// Robot of model `id` with the configured overrides.
    pub fn robot(&self, id: ModelId) -> Result<Robot, PlannerError> {
        RobotModel::with_overrides(id, &self.robot)
            .map(Robot::new)
            .map_err(|e| PlannerError::Config(e.to_string()))
    }

    pub fn check(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::Config(m.to_string()));
        if !(self.delta_decay > 0.0 && self.delta_decay < 1.0) {
            return bad("delta_decay must lie in (0, 1)");
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return bad("growth must be at least 1");
        }
        if self.delta0.is_some_and(|d| !(d > 0.0 && d.is_finite())) {
            return bad("delta0 must be positive");
        }
        if self.buckets.is_empty() || self.buckets.contains(&0) {
            return bad("buckets must be non-empty positive lengths");
        }
        if self.proportions.len() != self.buckets.len() {
            return bad("one proportion per bucket is required");
        }
        if self.proportions.iter().any(|p| !(*p >= 0.0)) || (self.proportions.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return bad("proportions must be non-negative and sum to 1");
        }
        if self.initial_primitives == 0 {
            return bad("initial_primitives must be positive");
        }
        if !(self.time_limit > 0.0) {
            return bad("time_limit must be positive");
        }
        Ok(())
    }
}

/// `δ_i = δ₀·decay^(i−1)`.
pub fn delta_schedule(delta0: f64, decay: f64, i: usize) -> f64 {
    assert!(i >= 1, "iterations count from 1");
    delta0 * decay.powi(i as i32 - 1)
}

/// Set size `L_i` and its split over buckets; the largest bucket absorbs the
/// rounding so the counts add up to `L_i`.
pub fn primitive_budget(l0: usize, growth: f64, proportions: &[f64], i: usize) -> (usize, Vec<usize>) {
    assert!(i >= 1, "iterations count from 1");
    let total = (l0 as f64 * growth.powi(i as i32 - 1)).round() as usize;
    let mut counts: Vec<i64> = proportions.iter().map(|p| (p * total as f64).round() as i64).collect();
    let diff = total as i64 - counts.iter().sum::<i64>();
    if let Some(k) = (0..counts.len()).max_by(|&a, &b| proportions[a].total_cmp(&proportions[b]).then(b.cmp(&a))) {
        counts[k] = (counts[k] + diff).max(0);
    }
    (total, counts.into_iter().map(|c| c as usize).collect())
}

/// A stream of canonical primitives of a requested length.
pub trait PrimitiveSource {
    fn draw(&mut self, length: usize, count: usize) -> Result<Vec<MotionPrimitive>, PlannerError>;
}

/// Baseline source: random primitives, taken from a shuffled shared library
/// while it lasts and generated on demand afterwards.
pub struct RandomSource {
    robot: Robot,
    rng: ChaCha8Rng,
    pools: BTreeMap<usize, VecDeque<MotionPrimitive>>,
}

impl RandomSource {
    pub fn new(robot: Robot, library: Option<Arc<PrimitiveSet>>, mut rng: ChaCha8Rng) -> Self {
        let mut pools: BTreeMap<usize, VecDeque<MotionPrimitive>> = BTreeMap::new();
        if let Some(lib) = library {
            for (len, ids) in lib.by_length() {
                let mut ids = ids;
                ids.shuffle(&mut rng);
                pools.insert(len, ids.into_iter().map(|i| lib.primitives[i].clone()).collect());
            }
        }
        Self { robot, rng, pools }
    }
}

impl PrimitiveSource for RandomSource {
    fn draw(&mut self, length: usize, count: usize) -> Result<Vec<MotionPrimitive>, PlannerError> {
        let pool = self.pools.entry(length).or_default();
        let mut out: Vec<MotionPrimitive> = (0..count).map_while(|_| pool.pop_front()).collect();
        while out.len() < count {
            out.push(primitives::generate_random_primitive(&self.robot, length, &mut self.rng));
        }
        Ok(out)
    }
}

/// Replays a fixed list of primitives per length; errors once exhausted.
pub struct RecordedSource {
    pools: BTreeMap<usize, VecDeque<MotionPrimitive>>,
}

impl RecordedSource {
    pub fn new(set: &PrimitiveSet) -> Self {
        let mut pools: BTreeMap<usize, VecDeque<MotionPrimitive>> = BTreeMap::new();
        for p in &set.primitives {
            pools.entry(p.len()).or_default().push_back(p.clone());
        }
        Self { pools }
    }
}

impl PrimitiveSource for RecordedSource {
    fn draw(&mut self, length: usize, count: usize) -> Result<Vec<MotionPrimitive>, PlannerError> {
        let pool = self.pools.entry(length).or_default();
        if pool.len() < count {
            return Err(PlannerError::Source(format!("recorded stream has no more primitives of length {length}")));
        }
        Ok(pool.drain(..count).collect())
    }
}

/// Generates a shared random library with `count` primitives per bucket.
pub fn random_library(robot: &Robot, buckets: &[usize], count: usize, seed: u64) -> PrimitiveSet {
    let mut set = PrimitiveSet::new(robot.model.id);
    for &len in buckets {
        let mut rng = seeds::rng(seed, &format!("library/{len}"));
        for _ in 0..count {
            set.push(primitives::generate_random_primitive(robot, len, &mut rng));
        }
    }
    set
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    #[serde(rename = "Q")]
    pub states: Vec<State>,
    #[serde(rename = "U")]
    pub actions: Vec<Action>,
    /// Trajectory duration (s).
    pub cost: f64,
    /// Main-loop time at which the solution was found (s).
    pub time: f64,
    pub iteration: usize,
}

/// Per-iteration bookkeeping, mainly for logs and tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub delta: f64,
    pub set_size: usize,
    pub search: String,
    pub expanded: usize,
    pub optimized: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub reports: Vec<SolutionReport>,
    pub iterations: Vec<IterationStats>,
    /// Primitives obtained from the source, including the pre-clock cache.
    pub source_primitives: usize,
}

impl PlanOutcome {
    pub fn best(&self) -> Option<&SolutionReport> {
        self.reports.last()
    }
}

/// Checks a candidate report against the solution contract.
pub fn verify_solution(
    robot: &Robot,
    inst: &ProblemInstance,
    states: &[State],
    actions: &[Action],
    goal_tol: f64,
) -> Result<(), String> {
    let m = &robot.model;
    if states.len() != actions.len() + 1 {
        return Err(format!("{} states for {} actions", states.len(), actions.len()));
    }
    if m.difference(&states[0], &inst.start).iter().any(|d| d.abs() > 1e-9) {
        return Err("first state is not the start".into());
    }
    let replay = m.rollout(&inst.start, actions).map_err(|e| e.to_string())?;
    for (k, (a, b)) in replay.iter().zip(states).enumerate() {
        if m.difference(a, b).iter().any(|d| d.abs() > 1e-6) {
            return Err(format!("replay diverges at step {k}"));
        }
    }
    let res: f64 = m.difference(states.last().unwrap(), &inst.goal).iter().map(|d| d * d).sum::<f64>().sqrt();
    if res > goal_tol {
        return Err(format!("goal residual {res:e} exceeds {goal_tol:e}"));
    }
    for (k, q) in states.iter().enumerate() {
        if !m.validate(q, actions.get(k).map(|u| u.as_slice())) {
            return Err(format!("bounds violated at step {k}"));
        }
    }
    if inst.motion_collides(robot, states) {
        return Err("trajectory collides".into());
    }
    Ok(())
}

/// Runs the anytime loop; `on_report` sees every solution as it is found.
pub fn plan(
    robot: &Robot,
    inst: &ProblemInstance,
    cfg: &PlannerConfig,
    source: &mut dyn PrimitiveSource,
    mut on_report: impl FnMut(&SolutionReport),
) -> Result<PlanOutcome, PlannerError> {
    cfg.check()?;
    if inst.model != robot.model.id {
        return Err(PlannerError::ModelMismatch { instance: inst.model, robot: robot.model.id });
    }
    let model = &robot.model;
    let mut rng = seeds::rng(cfg.seed, "planner/extract");
    let mut outcome = PlanOutcome::default();

    // pre-clock cache
    let (_, first) = primitive_budget(cfg.initial_primitives, cfg.growth, &cfg.proportions, 1);
    let mut cache: Vec<VecDeque<MotionPrimitive>> = Vec::with_capacity(cfg.buckets.len());
    for (n, &len) in cfg.buckets.iter().enumerate() {
        let want = first[n] * cfg.cache_factor;
        let got = if want > 0 { source.draw(len, want)? } else { Vec::new() };
        outcome.source_primitives += got.len();
        cache.push(got.into());
    }

    let clock = Instant::now();
    let deadline = clock + Duration::from_secs_f64(cfg.time_limit);
    let delta0 = cfg.delta0_for(model.id);

    let start_gap: f64 = model.difference(&inst.start, &inst.goal).iter().map(|d| d * d).sum::<f64>().sqrt();
    if start_gap <= cfg.opt.goal_tol {
        let report = SolutionReport {
            states: vec![inst.start.clone()],
            actions: Vec::new(),
            cost: 0.0,
            time: clock.elapsed().as_secs_f64(),
            iteration: 1,
        };
        on_report(&report);
        outcome.reports.push(report);
        return Ok(outcome);
    }

    let mut set = PrimitiveSet::new(model.id);
    let mut drawn = vec![0usize; cfg.buckets.len()];
    let mut c_max = f64::INFINITY;
    let mut i = 0;
    loop {
        i += 1;
        if cfg.max_iterations.is_some_and(|m| i > m) || Instant::now() >= deadline {
            break;
        }
        let (_, counts) = primitive_budget(cfg.initial_primitives, cfg.growth, &cfg.proportions, i);
        for (n, &len) in cfg.buckets.iter().enumerate() {
            let need = counts[n].saturating_sub(drawn[n]);
            let from_cache = need.min(cache[n].len());
            for p in cache[n].drain(..from_cache) {
                set.push(p);
            }
            if need > from_cache {
                let fresh = source.draw(len, need - from_cache)?;
                outcome.source_primitives += fresh.len();
                for p in fresh {
                    set.push(p);
                }
            }
            drawn[n] += need;
        }

        let delta = delta_schedule(delta0, cfg.delta_decay, i);
        let index = PrimitiveIndex::build(model, cfg.weights, &set);
        let scfg = SearchConfig {
            delta,
            c_max,
            node_budget: cfg.node_budget,
            weights: cfg.weights,
            deadline: Some(deadline),
        };
        let found = dbastar::search(robot, inst, &set, &index, &inst.start, &inst.goal, &scfg, None);
        let mut stats = IterationStats {
            iteration: i,
            delta,
            set_size: set.len(),
            search: String::from("found"),
            expanded: 0,
            optimized: None,
        };
        let traj = match found {
            Ok(t) => t,
            Err(e) => {
                stats.search = match e {
                    SearchError::Exhausted { expanded } | SearchError::Deadline { expanded } => {
                        stats.expanded = expanded;
                        e.to_string()
                    }
                    other => other.to_string(),
                };
                log::debug!("iteration {i}: delta {delta:.4} |M| {} search failed: {}", set.len(), stats.search);
                outcome.iterations.push(stats);
                continue;
            }
        };
        stats.expanded = traj.expanded;
        if traj.segments.is_empty() {
            // the start already matched the goal under a loose bound
            stats.search = String::from("empty");
            outcome.iterations.push(stats);
            continue;
        }
        let (guess_states, guess_actions) = traj.assemble(model, &set, &inst.start);
        let problem = OptProblem {
            robot,
            environment: Some(inst),
            start: inst.start.clone(),
            goal: inst.goal.clone(),
            guess_states,
            guess_actions,
            settings: cfg.opt.clone(),
        };
        let result = match trajopt::repair(&problem) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("iteration {i}: optimizer error: {e}");
                None
            }
        };
        stats.optimized = Some(result.is_some());
        log::debug!(
            "iteration {i}: delta {delta:.4} |M| {} expanded {} search cost {:.2} optimized {:?}",
            set.len(),
            traj.expanded,
            traj.cost,
            result.as_ref().map(|r| r.cost)
        );
        outcome.iterations.push(stats);
        let Some(sol) = result else { continue };
        let elapsed = clock.elapsed().as_secs_f64();
        if elapsed > cfg.time_limit || sol.cost >= c_max {
            continue;
        }
        if let Err(why) = verify_solution(robot, inst, &sol.states, &sol.actions, cfg.opt.goal_tol) {
            log::warn!("iteration {i}: discarding solution: {why}");
            continue;
        }
        let report = SolutionReport {
            states: sol.states,
            actions: sol.actions,
            cost: sol.cost,
            time: elapsed,
            iteration: i,
        };
        on_report(&report);
        c_max = report.cost;
        for (p, _) in primitives::split_trajectory(model, &report.states, &report.actions, &cfg.buckets, &mut rng) {
            if p.check(model, set.len()).is_ok() {
                set.push(p);
            }
        }
        outcome.reports.push(report);
    }
    Ok(outcome)
}
