//! Four unit translations on a grid: search must reproduce breadth-first
//! shortest paths exactly.

use std::collections::VecDeque;

use primdiff::dbastar::{search, MetricWeights, PrimitiveIndex, SearchConfig, SearchError};
use primdiff::dynamics::{ModelId, RobotModel};
use primdiff::primitives::{MotionPrimitive, PrimitiveSet};
use primdiff::world::{Obstacle, ProblemInstance, Robot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 10;

fn unit_moves(model: &RobotModel) -> PrimitiveSet {
    let mut set = PrimitiveSet::new(model.id);
    for u in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]] {
        set.push(MotionPrimitive::from_rollout(model, &[0.0, 0.0], vec![u.to_vec(); 10]));
    }
    set
}

fn bfs(blocked: &[Vec<bool>], s: (usize, usize), g: (usize, usize)) -> Option<usize> {
    let mut dist = vec![vec![usize::MAX; N]; N];
    dist[s.0][s.1] = 0;
    let mut q = VecDeque::from([s]);
    while let Some((i, j)) = q.pop_front() {
        if (i, j) == g {
            return Some(dist[i][j]);
        }
        let nbrs = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
        for (a, b) in nbrs {
            if a < N && b < N && !blocked[a][b] && dist[a][b] == usize::MAX {
                dist[a][b] = dist[i][j] + 1;
                q.push_back((a, b));
            }
        }
    }
    None
}

pub struct LatticeReport {
    pub solved: usize,
    pub unsolvable: usize,
    pub mismatches: Vec<String>,
}

/// Compares search against the grid oracle on `maps` random 30%-blocked maps.
pub fn run(maps: usize, seed: u64) -> LatticeReport {
    let robot = Robot::from_id(ModelId::Integrator2);
    let set = unit_moves(&robot.model);
    let index = PrimitiveIndex::build(&robot.model, MetricWeights::default(), &set);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = LatticeReport { solved: 0, unsolvable: 0, mismatches: Vec::new() };
    for map in 0..maps {
        let blocked: Vec<Vec<bool>> = (0..N).map(|_| (0..N).map(|_| rng.random_bool(0.3)).collect()).collect();
        let mut free = Vec::new();
        let mut obstacles = Vec::new();
        for i in 0..N {
            for j in 0..N {
                let (cx, cy) = (i as f64 + 0.5, j as f64 + 0.5);
                if blocked[i][j] {
                    obstacles.push(Obstacle { cx, cy, hx: 0.45, hy: 0.45 });
                } else {
                    free.push((i, j));
                }
            }
        }
        let s = free[rng.random_range(0..free.len())];
        let g = free[rng.random_range(0..free.len())];
        let inst = ProblemInstance {
            obstacles,
            ..ProblemInstance::empty(
                ModelId::Integrator2,
                N as f64,
                N as f64,
                vec![s.0 as f64 + 0.5, s.1 as f64 + 0.5],
                vec![g.0 as f64 + 0.5, g.1 as f64 + 0.5],
            )
        };
        let cfg = SearchConfig::new(1e-6);
        let got = search(&robot, &inst, &set, &index, &inst.start, &inst.goal, &cfg, None);
        match (bfs(&blocked, s, g), got) {
            (Some(d), Ok(sol)) if (sol.cost - d as f64).abs() < 1e-9 && sol.segments.len() == d => rep.solved += 1,
            (None, Err(SearchError::Exhausted { .. })) => rep.unsolvable += 1,
            (want, got) => rep.mismatches.push(format!("map {map}: lattice {want:?}, search {got:?}")),
        }
    }
    rep
}
