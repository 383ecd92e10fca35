//! Workspace, rectangular obstacles and robot footprints.
//!
//! Collision checks are exact oriented-rectangle vs axis-aligned-rectangle
//! tests (separating axes). The optimizer instead works with a set of
//! covering circles per body, which gives a differentiable clearance that
//! is conservative with respect to the exact test.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelId, RobotModel, State};

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("no collision-free state found after {0} attempts")]
    AttemptBudget(usize),
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed instance file {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
}

/// Axis-aligned rectangular obstacle given by center and half-extents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub cx: f64,
    pub cy: f64,
    pub hx: f64,
    pub hy: f64,
}

impl Obstacle {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.cx).abs() <= self.hx && (y - self.cy).abs() <= self.hy
    }

    /// Signed distance from a point to the rectangle (negative inside) and
    /// its gradient with respect to the point.
    pub fn signed_distance(&self, x: f64, y: f64) -> (f64, [f64; 2]) {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let ox = dx.abs() - self.hx;
        let oy = dy.abs() - self.hy;
        if ox > 0.0 || oy > 0.0 {
            let ex = ox.max(0.0);
            let ey = oy.max(0.0);
            let d = ex.hypot(ey);
            (d, [ex / d * dx.signum(), ey / d * dy.signum()])
        } else if ox > oy {
            (ox, [dx.signum(), 0.0])
        } else {
            (oy, [0.0, dy.signum()])
        }
    }
}

/// One rigid rectangle of a robot footprint in its body frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyRect {
    pub length: f64,
    pub width: f64,
    /// Center offset along the body heading from the body anchor.
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub bodies: Vec<BodyRect>,
}

impl Footprint {
    /// Default shapes: a 0.5 m × 0.25 m rectangle per body.
    pub fn for_model(id: ModelId) -> Self {
        let body = BodyRect {
            length: 0.5,
            width: 0.25,
            offset: 0.0,
        };
        match id {
            ModelId::Unicycle1 | ModelId::Unicycle2 => Self { bodies: vec![body] },
            ModelId::CarTrailer => Self {
                bodies: vec![BodyRect { offset: 0.125, ..body }, body],
            },
            ModelId::Integrator2 => Self {
                bodies: vec![BodyRect {
                    length: 0.2,
                    width: 0.2,
                    offset: 0.0,
                }],
            },
        }
    }
}

/// A robot model together with its collision footprint.
#[derive(Clone, Debug, PartialEq)]
pub struct Robot {
    pub model: RobotModel,
    pub footprint: Footprint,
}

/// Pose of one footprint rectangle in the world frame.
#[derive(Clone, Copy, Debug)]
pub struct BodyPose {
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub half_len: f64,
    pub half_wid: f64,
}

/// A covering circle whose center is `p + b·(cos φ, sin φ)` with `p` the
/// robot position and `φ = q[angle_index]` (or 0 when absent).
#[derive(Clone, Copy, Debug)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub lever: f64,
    pub angle_index: Option<usize>,
}

impl Robot {
    pub fn new(model: RobotModel) -> Self {
        let footprint = Footprint::for_model(model.id);
        Self { model, footprint }
    }

    pub fn from_id(id: ModelId) -> Self {
        Self::new(RobotModel::new(id))
    }

    /// Heading source and anchor lever (along that heading) of body `k`.
    fn body_frame(&self, k: usize) -> (Option<usize>, f64) {
        match (self.model.id, k) {
            (ModelId::Integrator2, _) => (None, 0.0),
            (ModelId::CarTrailer, 1) => (Some(3), -self.model.hitch_length),
            _ => (Some(2), 0.0),
        }
    }

    pub fn body_poses<'a>(&'a self, q: &'a [f64]) -> impl Iterator<Item = BodyPose> + 'a {
        let [ix, iy] = self.model.translation_indices;
        let (x, y) = (q[ix], q[iy]);
        self.footprint.bodies.iter().enumerate().map(move |(k, b)| {
            let (ai, lever) = self.body_frame(k);
            let th = ai.map_or(0.0, |i| q[i]);
            let (s, c) = th.sin_cos();
            let a = lever + b.offset;
            BodyPose {
                cx: x + a * c,
                cy: y + a * s,
                heading: th,
                half_len: 0.5 * b.length,
                half_wid: 0.5 * b.width,
            }
        })
    }

    /// Circles covering every footprint rectangle.
    pub fn covering_circles(&self, q: &[f64]) -> Vec<Circle> {
        let [ix, iy] = self.model.translation_indices;
        let (x, y) = (q[ix], q[iy]);
        let mut out = Vec::new();
        for (k, b) in self.footprint.bodies.iter().enumerate() {
            let (ai, lever) = self.body_frame(k);
            let th = ai.map_or(0.0, |i| q[i]);
            let (s, c) = th.sin_cos();
            let n = (b.length / b.width).ceil().max(1.0) as usize;
            let seg = b.length / n as f64;
            let radius = (0.5 * seg).hypot(0.5 * b.width);
            for j in 0..n {
                let along = lever + b.offset - 0.5 * b.length + (j as f64 + 0.5) * seg;
                out.push(Circle {
                    cx: x + along * c,
                    cy: y + along * s,
                    radius,
                    lever: along,
                    angle_index: ai,
                });
            }
        }
        out
    }
}

fn obb_hits_aabb(p: &BodyPose, o: &Obstacle) -> bool {
    let (s, c) = p.heading.sin_cos();
    let (ac, as_) = (c.abs(), s.abs());
    let dx = o.cx - p.cx;
    let dy = o.cy - p.cy;
    // world x / y axes
    if dx.abs() > p.half_len * ac + p.half_wid * as_ + o.hx {
        return false;
    }
    if dy.abs() > p.half_len * as_ + p.half_wid * ac + o.hy {
        return false;
    }
    // body axes
    if (dx * c + dy * s).abs() > p.half_len + o.hx * ac + o.hy * as_ {
        return false;
    }
    if (-dx * s + dy * c).abs() > p.half_wid + o.hx * as_ + o.hy * ac {
        return false;
    }
    true
}

/// Canonical problem-instance file layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub model: ModelId,
    pub width: f64,
    pub height: f64,
    pub obstacles: Vec<Obstacle>,
    pub start: State,
    pub goal: State,
    /// Obstacle coverage fraction used for conditioning.
    pub density: f64,
}

impl ProblemInstance {
    pub fn empty(model: ModelId, width: f64, height: f64, start: State, goal: State) -> Self {
        Self {
            model,
            width,
            height,
            obstacles: Vec::new(),
            start,
            goal,
            density: 0.0,
        }
    }

    /// True iff some footprint rectangle at `q` leaves the workspace or
    /// touches an obstacle.
    pub fn collides(&self, robot: &Robot, q: &[f64]) -> bool {
        robot.body_poses(q).any(|p| {
            let (s, c) = p.heading.sin_cos();
            let ex = p.half_len * c.abs() + p.half_wid * s.abs();
            let ey = p.half_len * s.abs() + p.half_wid * c.abs();
            if p.cx - ex < 0.0 || p.cx + ex > self.width || p.cy - ey < 0.0 || p.cy + ey > self.height
            {
                return true;
            }
            self.obstacles.iter().any(|o| obb_hits_aabb(&p, o))
        })
    }

    /// True iff any state of the sequence collides.
    pub fn motion_collides(&self, robot: &Robot, states: &[State]) -> bool {
        states.iter().any(|q| self.collides(robot, q))
    }

    /// Same as [`Self::motion_collides`] for a sequence shifted by `(dx, dy)`.
    pub fn shifted_motion_collides(&self, robot: &Robot, states: &[State], dx: f64, dy: f64) -> bool {
        let [ix, iy] = robot.model.translation_indices;
        let mut buf = Vec::new();
        states.iter().any(|q| {
            buf.clear();
            buf.extend_from_slice(q);
            buf[ix] += dx;
            buf[iy] += dy;
            self.collides(robot, &buf)
        })
    }

    /// Monte-Carlo fraction of workspace points covered by at least one obstacle.
    pub fn estimate_density<R: Rng + ?Sized>(&self, n_samples: usize, rng: &mut R) -> f64 {
        assert!(n_samples >= 1, "n_samples must be positive");
        let hits = (0..n_samples)
            .filter(|_| {
                let x = rng.random_range(0.0..self.width);
                let y = rng.random_range(0.0..self.height);
                self.obstacles.iter().any(|o| o.contains(x, y))
            })
            .count();
        hits as f64 / n_samples as f64
    }

    /// Rejection-samples a collision-free state: uniform position and angles,
    /// every other component zero.
    pub fn sample_free_state<R: Rng + ?Sized>(
        &self,
        robot: &Robot,
        max_attempts: usize,
        rng: &mut R,
    ) -> Result<State, WorldError> {
        let m = &robot.model;
        let [ix, iy] = m.translation_indices;
        for _ in 0..max_attempts {
            let mut q = vec![0.0; m.d_q];
            q[ix] = rng.random_range(0.0..self.width);
            q[iy] = rng.random_range(0.0..self.height);
            for &a in &m.angle_indices {
                q[a] = crate::dynamics::wrap_angle(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
            }
            if !self.collides(robot, &q) {
                return Ok(q);
            }
        }
        Err(WorldError::AttemptBudget(max_attempts))
    }

    /// Checks dimensions, obstacle shapes and that start/goal are free.
    pub fn check(&self, robot: &Robot) -> Result<(), WorldError> {
        let bad = |s: String| Err(WorldError::Invalid(s));
        if self.model != robot.model.id {
            return bad(format!("instance model {} != robot {}", self.model, robot.model.id));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad("workspace extents must be positive".into());
        }
        if self.start.len() != robot.model.d_q || self.goal.len() != robot.model.d_q {
            return bad("start/goal dimension".into());
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            let ix = (o.cx + o.hx).min(self.width) - (o.cx - o.hx).max(0.0);
            let iy = (o.cy + o.hy).min(self.height) - (o.cy - o.hy).max(0.0);
            if !(o.hx > 0.0 && o.hy > 0.0 && ix > 0.0 && iy > 0.0) {
                return bad(format!("obstacle {i} is degenerate inside the workspace"));
            }
        }
        if self.collides(robot, &self.start) {
            return bad("start state collides".into());
        }
        if self.collides(robot, &self.goal) {
            return bad("goal state collides".into());
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|source| WorldError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&s).map_err(|source| WorldError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WorldError> {
        let path = path.as_ref();
        let s = serde_json::to_string_pretty(self).expect("instance serializes");
        fs::write(path, s).map_err(|source| WorldError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Random instance generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceGenConfig {
    pub model: ModelId,
    pub width_range: (f64, f64),
    pub height_range: (f64, f64),
    /// Target coverage fraction in `[0, 1)`.
    pub density: f64,
    pub obstacle_half_range: (f64, f64),
    pub max_attempts: usize,
    /// Monte-Carlo points used to track coverage while placing obstacles.
    pub density_samples: usize,
}

impl Default for InstanceGenConfig {
    fn default() -> Self {
        Self {
            model: ModelId::Unicycle1,
            width_range: (4.0, 12.0),
            height_range: (4.0, 12.0),
            density: 0.25,
            obstacle_half_range: (0.2, 1.0),
            max_attempts: 1000,
            density_samples: 10_000,
        }
    }
}

/// Places i.i.d. (possibly overlapping) rectangles until the tracked coverage
/// reaches the target, then samples a free start and goal.
pub fn sample_instance<R: Rng + ?Sized>(
    cfg: &InstanceGenConfig,
    robot: &Robot,
    rng: &mut R,
) -> Result<ProblemInstance, WorldError> {
    if !(0.0..1.0).contains(&cfg.density) {
        return Err(WorldError::Invalid(format!("density {} not in [0,1)", cfg.density)));
    }
    let uniform = |rng: &mut R, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let width = uniform(rng, cfg.width_range);
    let height = uniform(rng, cfg.height_range);
    let mut inst = ProblemInstance::empty(cfg.model, width, height, Vec::new(), Vec::new());
    inst.density = cfg.density;

    if cfg.density > 0.0 {
        let n = cfg.density_samples.max(1);
        let points: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0.0..width), rng.random_range(0.0..height)))
            .collect();
        let mut covered = vec![false; n];
        let mut count = 0usize;
        while (count as f64) < cfg.density * n as f64 {
            let o = Obstacle {
                cx: rng.random_range(0.0..width),
                cy: rng.random_range(0.0..height),
                hx: uniform(rng, cfg.obstacle_half_range),
                hy: uniform(rng, cfg.obstacle_half_range),
            };
            for (c, &(x, y)) in covered.iter_mut().zip(&points) {
                if !*c && o.contains(x, y) {
                    *c = true;
                    count += 1;
                }
            }
            inst.obstacles.push(o);
        }
    }

    inst.start = inst.sample_free_state(robot, cfg.max_attempts, rng)?;
    inst.goal = inst.sample_free_state(robot, cfg.max_attempts, rng)?;
    Ok(inst)
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
    fn empty_workspace_center_is_free() {
        let inst = ProblemInstance::empty(ModelId::Unicycle1, 8.0, 8.0, vec![4.0, 4.0, 0.3], vec![1.0, 1.0, 0.0]);
        assert!(!inst.collides(&uni(), &[4.0, 4.0, 0.3]));
    }

    #[test]
    fn full_cover_always_collides() {
        let mut inst = ProblemInstance::empty(ModelId::Unicycle1, 8.0, 8.0, vec![], vec![]);
        inst.obstacles.push(Obstacle { cx: 4.0, cy: 4.0, hx: 4.0, hy: 4.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let q = [rng.random_range(0.5..7.5), rng.random_range(0.5..7.5), rng.random_range(-3.0..3.0)];
            assert!(inst.collides(&uni(), &q));
        }
    }

    #[test]
    fn boundary_straddle_collides() {
        let inst = ProblemInstance::empty(ModelId::Unicycle1, 8.0, 8.0, vec![], vec![]);
        assert!(inst.collides(&uni(), &[0.1, 4.0, 0.0]));
        assert!(inst.collides(&uni(), &[4.0, 7.95, 1.0]));
        assert!(!inst.collides(&uni(), &[0.26, 4.0, 0.0]));
    }

    #[test]
    fn sat_respects_rotation() {
        // body 0.5×0.25 rotated by 90° is 0.25 wide in x
        let mut inst = ProblemInstance::empty(ModelId::Unicycle1, 10.0, 10.0, vec![], vec![]);
        inst.obstacles.push(Obstacle { cx: 5.0, cy: 5.0, hx: 0.5, hy: 0.5 });
        let r = uni();
        assert!(inst.collides(&r, &[5.7, 5.0, 0.0])); // reaches x = 5.45
        assert!(!inst.collides(&r, &[5.7, 5.0, std::f64::consts::FRAC_PI_2])); // reaches x = 5.575
        // diagonal corner case: separated only along a body axis
        assert!(!inst.collides(&r, &[5.72, 5.72, std::f64::consts::FRAC_PI_4 * 3.0]));
        assert!(inst.collides(&r, &[5.6, 5.6, std::f64::consts::FRAC_PI_4]));
    }

    #[test]
    fn motion_collides_is_any() {
        let mut inst = ProblemInstance::empty(ModelId::Unicycle1, 10.0, 10.0, vec![], vec![]);
        inst.obstacles.push(Obstacle { cx: 5.0, cy: 5.0, hx: 0.3, hy: 0.3 });
        let r = uni();
        let free = vec![vec![2.0, 2.0, 0.0], vec![2.5, 2.0, 0.0], vec![3.0, 2.0, 0.0]];
        assert!(!inst.motion_collides(&r, &free));
        assert_eq!(inst.motion_collides(&r, &free[..1]), inst.collides(&r, &free[0]));
        let mut one = free.clone();
        one[1] = vec![5.0, 5.0, 0.0];
        assert!(inst.motion_collides(&r, &one));
        assert!(inst.shifted_motion_collides(&r, &free, 3.0, 3.0));
    }

    #[test]
    fn collides_ignores_obstacle_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = InstanceGenConfig { density: 0.3, ..Default::default() };
        let r = uni();
        let inst = sample_instance(&cfg, &r, &mut rng).unwrap();
        let mut rev = inst.clone();
        rev.obstacles.reverse();
        for _ in 0..500 {
            let q = [rng.random_range(0.0..inst.width), rng.random_range(0.0..inst.height), rng.random_range(-3.0..3.0)];
            assert_eq!(inst.collides(&r, &q), rev.collides(&r, &q));
        }
    }

    #[test]
    fn density_estimates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut inst = ProblemInstance::empty(ModelId::Unicycle1, 8.0, 6.0, vec![], vec![]);
        assert_eq!(inst.estimate_density(1000, &mut rng), 0.0);
        inst.obstacles.push(Obstacle { cx: 4.0, cy: 3.0, hx: 4.0, hy: 3.0 });
        assert_eq!(inst.estimate_density(1000, &mut rng), 1.0);
        inst.obstacles[0] = Obstacle { cx: 2.0, cy: 3.0, hx: 2.0, hy: 3.0 };
        let d = inst.estimate_density(10_000, &mut rng);
        assert!((d - 0.5).abs() < 0.02, "{d}");
    }

    #[test]
    fn free_state_sampling() {
        let r = uni();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inst = ProblemInstance::empty(ModelId::Unicycle1, 8.0, 8.0, vec![], vec![]);
        let mut sx = 0.0;
        let mut sy = 0.0;
        let n = 1000;
        for _ in 0..n {
            let q = inst.sample_free_state(&r, 1000, &mut rng).unwrap();
            sx += q[0];
            sy += q[1];
        }
        assert!((sx / n as f64 - 4.0).abs() < 0.2 && (sy / n as f64 - 4.0).abs() < 0.2);

        let mut blocked = inst.clone();
        blocked.obstacles.push(Obstacle { cx: 4.0, cy: 4.0, hx: 4.0, hy: 4.0 });
        assert!(matches!(
            blocked.sample_free_state(&r, 50, &mut rng),
            Err(WorldError::AttemptBudget(50))
        ));

        let r2 = Robot::from_id(ModelId::Unicycle2);
        let inst2 = ProblemInstance::empty(ModelId::Unicycle2, 8.0, 8.0, vec![], vec![]);
        let q = inst2.sample_free_state(&r2, 10, &mut rng).unwrap();
        assert_eq!((q[3], q[4]), (0.0, 0.0));
    }

    #[test]
    fn zero_density_has_no_obstacles_and_generation_is_deterministic() {
        let r = uni();
        let cfg = InstanceGenConfig { density: 0.0, ..Default::default() };
        let a = sample_instance(&cfg, &r, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(a.obstacles.is_empty());
        let cfg = InstanceGenConfig { density: 0.25, ..Default::default() };
        let a = sample_instance(&cfg, &r, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample_instance(&cfg, &r, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        a.check(&r).unwrap();
    }

    #[test]
    fn signed_distance_cases() {
        let o = Obstacle { cx: 0.0, cy: 0.0, hx: 1.0, hy: 0.5 };
        let (d, g) = o.signed_distance(2.0, 0.0);
        assert!((d - 1.0).abs() < 1e-12 && g == [1.0, 0.0]);
        let (d, _) = o.signed_distance(4.0, 4.5);
        assert!((d - 5.0).abs() < 1e-12);
        let (d, g) = o.signed_distance(0.0, 0.3);
        assert!((d + 0.2).abs() < 1e-12 && g == [0.0, 1.0]);
    }

    #[test]
    fn covering_circles_contain_rectangle_corners() {
        let r = Robot::from_id(ModelId::CarTrailer);
        let q = [3.0, 2.0, 0.4, -0.3];
        let circles = r.covering_circles(&q);
        for p in r.body_poses(&q) {
            let (s, c) = p.heading.sin_cos();
            for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let x = p.cx + a * p.half_len * c - b * p.half_wid * s;
                let y = p.cy + a * p.half_len * s + b * p.half_wid * c;
                assert!(circles
                    .iter()
                    .any(|k| (x - k.cx).hypot(y - k.cy) <= k.radius + 1e-12));
            }
        }
    }
}
