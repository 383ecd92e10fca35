//! Radius queries under a weighted L1 metric with optional periodic axes.
//!
//! Used to find primitives whose start state matches a search node on the
//! non-translational components. Periodic axes hold angles in `(-π, π]`.

use crate::dynamics::angle_diff;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub weight: f64,
    pub periodic: bool,
}

impl Axis {
    #[inline]
    fn dist(&self, a: f64, b: f64) -> f64 {
        let d = if self.periodic { angle_diff(a, b).abs() } else { (a - b).abs() };
        self.weight * d
    }

    /// Lower bound of the distance from `x` to any value in `[lo, hi]`.
    #[inline]
    fn gap(&self, x: f64, lo: f64, hi: f64) -> f64 {
        if x >= lo && x <= hi {
            0.0
        } else if self.periodic {
            self.dist(x, lo).min(self.dist(x, hi))
        } else if x < lo {
            self.weight * (lo - x)
        } else {
            self.weight * (x - hi)
        }
    }
}

/// Weighted L1 distance over `axes`.
pub fn weighted_distance(axes: &[Axis], a: &[f64], b: &[f64]) -> f64 {
    axes.iter().zip(a.iter().zip(b)).map(|(ax, (x, y))| ax.dist(*x, *y)).sum()
}

const LEAF: usize = 8;

#[derive(Clone, Debug)]
struct Node {
    lo: Vec<f64>,
    hi: Vec<f64>,
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

/// Static k-d tree; rebuild it when the point set changes.
#[derive(Clone, Debug)]
pub struct RangeIndex {
    axes: Vec<Axis>,
    points: Vec<Vec<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl RangeIndex {
    pub fn build(axes: Vec<Axis>, points: Vec<Vec<f64>>) -> Self {
        assert!(points.iter().all(|p| p.len() == axes.len()), "point dimension mismatch");
        let mut idx = Self {
            order: (0..points.len()).collect(),
            axes,
            points,
            nodes: Vec::new(),
        };
        if !idx.points.is_empty() {
            idx.split(0, idx.points.len());
        }
        idx
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn split(&mut self, start: usize, end: usize) -> usize {
        let k = self.axes.len();
        let mut lo = vec![f64::INFINITY; k];
        let mut hi = vec![f64::NEG_INFINITY; k];
        for &i in &self.order[start..end] {
            for d in 0..k {
                lo[d] = lo[d].min(self.points[i][d]);
                hi[d] = hi[d].max(self.points[i][d]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo: lo.clone(),
            hi: hi.clone(),
            start,
            end,
            children: None,
        });
        if end - start > LEAF && k > 0 {
            let axis = (0..k)
                .max_by(|&a, &b| {
                    let sa = (hi[a] - lo[a]) * self.axes[a].weight;
                    let sb = (hi[b] - lo[b]) * self.axes[b].weight;
                    sa.total_cmp(&sb)
                })
                .unwrap();
            if hi[axis] > lo[axis] {
                let mid = start + (end - start) / 2;
                let pts = &self.points;
                self.order[start..end]
                    .select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
                let l = self.split(start, mid);
                let r = self.split(mid, end);
                self.nodes[id].children = Some((l, r));
            }
        }
        id
    }

    /// Every `(index, distance)` with distance ≤ `radius`, sorted by index.
    pub fn within(&self, query: &[f64], radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let bound: f64 = (0..self.axes.len())
                .map(|d| self.axes[d].gap(query[d], node.lo[d], node.hi[d]))
                .sum();
            if bound > radius {
                continue;
            }
            match node.children {
                Some((l, r)) => {
                    stack.push(l);
                    stack.push(r);
                }
                None => {
                    for &i in &self.order[node.start..node.end] {
                        let d = weighted_distance(&self.axes, query, &self.points[i]);
                        if d <= radius {
                            out.push((i, d));
                        }
                    }
                }
            }
        }
        out.sort_unstable_by_key(|&(i, _)| i);
        out
    }

    /// Reference linear scan with the same contract as [`Self::within`].
    pub fn within_linear(&self, query: &[f64], radius: f64) -> Vec<(usize, f64)> {
        self.points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let d = weighted_distance(&self.axes, query, p);
                (d <= radius).then_some((i, d))
            })
            .collect()
    }
}
