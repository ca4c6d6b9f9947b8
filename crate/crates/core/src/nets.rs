//! Nested separated nets over a finite carrier and the filling graph built
//! on top of them.
//!
//! Net points are stored as positions into the carrier list. Every
//! maximality and covering statement is relative to that carrier.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::excursion::stream_rng;
use crate::tree::{ContourTree, TreeMode, TreePoint};

/// Grid points within `radius` of the root, thinned to at most `cap` points
/// by a seeded uniform draw. The root is always kept and comes first.
pub fn ball_carrier(tree: &ContourTree, radius: f64, cap: usize, seed: u64) -> Result<Vec<TreePoint>> {
    if !(radius > 0.0) || cap == 0 {
        return Err(Error::invalid("carrier needs a positive radius and cap"));
    }
    let root = tree.root().index();
    let mut idx: Vec<usize> = tree.ball_indices(root, radius).into_iter().filter(|&u| u != root).collect();
    if idx.len() + 1 > cap {
        let mut rng = stream_rng(seed, 0);
        idx.shuffle(&mut rng);
        idx.truncate(cap - 1);
        idx.sort_unstable();
    }
    let mut out = Vec::with_capacity(idx.len() + 1);
    out.push(tree.root());
    out.extend(idx.into_iter().map(|u| tree.point(u).expect("ball index lies in the tree")));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetLevel {
    pub n: usize,
    /// Carrier positions, in insertion order (inherited points first).
    pub points: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct NetHierarchy {
    pub alpha: f64,
    pub levels: Vec<NetLevel>,
    pub carrier: Vec<TreePoint>,
    /// Carrier position of the level-0 point.
    pub root: usize,
}

impl NetHierarchy {
    pub fn radius(&self, n: usize) -> f64 {
        self.alpha.powi(n as i32)
    }

    pub fn n_max(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn point(&self, n: usize, i: usize) -> TreePoint {
        self.carrier[self.levels[n].points[i]]
    }

    /// Checks nesting, separation and covering; returns the first failure.
    pub fn check(&self, tree: &ContourTree) -> Result<()> {
        let tol = tree.tol_eq();
        let d = |a: usize, b: usize| tree.dist_idx(self.carrier[a].index(), self.carrier[b].index());
        for (n, level) in self.levels.iter().enumerate() {
            let r = self.radius(n);
            if n > 0 && self.levels[n - 1].points.iter().any(|p| !level.points.contains(p)) {
                return Err(Error::InvariantViolation(format!("level {} is not contained in level {n}", n - 1)));
            }
            for (i, &a) in level.points.iter().enumerate() {
                for &b in &level.points[i + 1..] {
                    if d(a, b) < r - tol {
                        return Err(Error::InvariantViolation(format!("level {n} points {a} and {b} are too close")));
                    }
                }
            }
            for c in 0..self.carrier.len() {
                if !level.points.iter().any(|&p| d(c, p) < r) {
                    return Err(Error::InvariantViolation(format!("carrier point {c} uncovered at level {n}")));
                }
            }
        }
        Ok(())
    }
}

/// Order in which the greedy scan visits the carrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetOrder {
    /// A fresh seeded shuffle per level.
    Shuffled(u64),
    /// Carrier order, every level.
    AsGiven,
}

/// Greedy nested nets: level `n` starts from level `n - 1` and scans the
/// carrier, keeping every point at distance at least `alpha^n` from the
/// points kept so far.
pub fn build_nested_nets(
    tree: &ContourTree,
    carrier: &[TreePoint],
    alpha: f64,
    n_max: usize,
    order: NetOrder,
) -> Result<NetHierarchy> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if carrier.is_empty() {
        return Err(Error::invalid("carrier is empty"));
    }
    if let Some(p) = carrier.iter().find(|p| !tree.owns(**p)) {
        return Err(Error::invalid(format!("carrier point {} belongs to another tree", p.index())));
    }
    let root = carrier
        .iter()
        .position(|p| *p == tree.root())
        .ok_or_else(|| Error::invalid("carrier must contain the root"))?;
    let idx: Vec<usize> = carrier.iter().map(|p| p.index()).collect();
    let mut levels = vec![NetLevel { n: 0, points: vec![root] }];
    let mut nearest: Vec<f64> = idx.iter().map(|&u| tree.dist_idx(u, idx[root])).collect();
    let mut scan: Vec<usize> = (0..carrier.len()).collect();
    for n in 1..=n_max {
        let r = alpha.powi(n as i32);
        let mut points = levels[n - 1].points.clone();
        if let NetOrder::Shuffled(seed) = order {
            scan.sort_unstable();
            scan.shuffle(&mut stream_rng(seed, n as u64));
        }
        for &c in &scan {
            if nearest[c] >= r {
                points.push(c);
                let uc = idx[c];
                nearest.par_iter_mut().zip(idx.par_iter()).for_each(|(m, &u)| {
                    *m = m.min(tree.dist_idx(u, uc));
                });
            }
        }
        levels.push(NetLevel { n, points });
    }
    Ok(NetHierarchy { alpha, levels, carrier: carrier.to_vec(), root })
}

/// Vertex of the filling graph: `(level, position in that level's list)`.
pub type Vertex = (usize, usize);

#[derive(Debug, Clone)]
pub struct FillingGraph {
    /// Offset of each level in the flat vertex numbering.
    pub offsets: Vec<usize>,
    pub vertices: Vec<Vertex>,
    /// Same-level neighbours per flat vertex id, ascending.
    pub same_level: Vec<Vec<usize>>,
    /// Neighbours one level up or down, ascending.
    pub cross_level: Vec<Vec<usize>>,
}

impl FillingGraph {
    pub fn id(&self, (n, i): Vertex) -> usize {
        self.offsets[n] + i
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Undirected edges `(a, b)` with `a < b` in flat numbering, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.len() {
            for &b in self.same_level[a].iter().chain(&self.cross_level[a]) {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Whether levels `0..=n` form one connected graph.
    pub fn connected_up_to(&self, n: usize) -> bool {
        let end = self.offsets.get(n + 1).copied().unwrap_or(self.len());
        let mut seen = vec![false; end];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in self.same_level[v].iter().chain(&self.cross_level[v]) {
                if w < end && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Edge list `level_a index_a level_b index_b`, then a vertex table
    /// `level index grid_time`.
    pub fn export_text(&self, nets: &NetHierarchy, tree: &ContourTree) -> (String, String) {
        let mut edges = String::new();
        for (a, b) in self.edges() {
            let (la, ia) = self.vertices[a];
            let (lb, ib) = self.vertices[b];
            let _ = writeln!(edges, "{la} {ia} {lb} {ib}");
        }
        let mut verts = String::new();
        for &(n, i) in &self.vertices {
            let _ = writeln!(verts, "{n} {i} {}", tree.time_of(nets.point(n, i)));
        }
        (edges, verts)
    }
}

/// Applies both adjacency rules: same level when `d < 8 alpha^n`, adjacent
/// levels when `d < alpha^m + alpha^n`.
pub fn build_filling_graph(tree: &ContourTree, nets: &NetHierarchy) -> FillingGraph {
    let mut offsets = Vec::with_capacity(nets.levels.len());
    let mut vertices = Vec::new();
    for (n, level) in nets.levels.iter().enumerate() {
        offsets.push(vertices.len());
        vertices.extend((0..level.points.len()).map(|i| (n, i)));
    }
    let pos = |v: &Vertex| nets.point(v.0, v.1).index();
    let rows: Vec<(Vec<usize>, Vec<usize>)> = vertices
        .par_iter()
        .map(|&(n, i)| {
            let u = pos(&(n, i));
            let same_r = 8.0 * nets.radius(n);
            let same: Vec<usize> = (0..nets.levels[n].points.len())
                .filter(|&j| j != i && tree.dist_idx(u, pos(&(n, j))) < same_r)
                .map(|j| offsets[n] + j)
                .collect();
            let mut cross = Vec::new();
            for m in [n.wrapping_sub(1), n + 1] {
                if m < nets.levels.len() {
                    let r = nets.radius(m) + nets.radius(n);
                    cross.extend(
                        (0..nets.levels[m].points.len())
                            .filter(|&j| tree.dist_idx(u, pos(&(m, j))) < r)
                            .map(|j| offsets[m] + j),
                    );
                }
            }
            cross.sort_unstable();
            (same, cross)
        })
        .collect();
    let (same_level, cross_level) = rows.into_iter().unzip();
    FillingGraph { offsets, vertices, same_level, cross_level }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverReport {
    /// Number of draws until the carrier was covered, if it ever was.
    pub needed: Option<usize>,
    pub budget: usize,
    pub covered: bool,
    pub carrier_size: usize,
}

/// Index of the first draw after which every carrier point lies within
/// `eps` of some draw. Only draws inside the unit ball around the root
/// count as centers.
pub fn draws_to_cover(tree: &ContourTree, carrier: &[TreePoint], draws: &[usize], eps: f64) -> Option<usize> {
    let mut covered = vec![false; carrier.len()];
    let mut left = carrier.len();
    let o = tree.origin_index();
    for (k, &s) in draws.iter().enumerate() {
        if tree.dist_idx(o, s) >= 1.0 {
            continue;
        }
        for (c, p) in carrier.iter().enumerate() {
            if !covered[c] && tree.dist_idx(p.index(), s) < eps {
                covered[c] = true;
                left -= 1;
            }
        }
        if left == 0 {
            return Some(k + 1);
        }
    }
    None
}

/// Smallest `T` with every grid time of the unit ball around the root
/// inside `[-T, T]`.
pub fn unit_ball_horizon(tree: &ContourTree) -> f64 {
    let o = tree.origin_index() as f64;
    tree.ball_indices(tree.origin_index(), 1.0)
        .into_iter()
        .map(|u| (u as f64 - o).abs() * tree.step())
        .fold(0.0, f64::max)
}

/// Uniform grid times from `[-horizon, horizon]`.
pub fn iid_draws<R: Rng + ?Sized>(tree: &ContourTree, horizon: f64, count: usize, rng: &mut R) -> Vec<usize> {
    let o = tree.origin_index() as i64;
    let k = (horizon / tree.step()).floor() as i64;
    let lo = (o - k).max(0) as usize;
    let hi = ((o + k) as usize).min(tree.len() - 1);
    (0..count).map(|_| rng.random_range(lo..=hi)).collect()
}

/// Draws i.i.d. points from the mass measure on `[-horizon, horizon]` until
/// they `eps`-cover the carrier, giving up after four times the budget
/// `ceil(eps^-(2 + zeta))`.
pub fn iid_cover_experiment(
    tree: &ContourTree,
    carrier: &[TreePoint],
    horizon: f64,
    eps: f64,
    zeta: f64,
    seed: u64,
) -> Result<CoverReport> {
    if tree.mode() != TreeMode::TwoSided {
        return Err(Error::InvalidState("the cover experiment needs a two-sided tree".into()));
    }
    if carrier.is_empty() {
        return Err(Error::InvalidState("carrier is empty".into()));
    }
    if !(eps > 0.0 && eps < 1.0) || !(zeta > 0.0) || !(horizon > 0.0) {
        return Err(Error::invalid("need eps in (0, 1), zeta > 0 and a positive horizon"));
    }
    let budget = eps.powf(-(2.0 + zeta)).ceil() as usize;
    let mut rng = stream_rng(seed, 0);
    let draws = iid_draws(tree, horizon, 4 * budget, &mut rng);
    let needed = draws_to_cover(tree, carrier, &draws, eps);
    Ok(CoverReport {
        needed,
        budget,
        covered: needed.is_some_and(|k| k <= budget),
        carrier_size: carrier.len(),
    })
}
