//! Small trees and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use crt_filling::excursion::{ForestParams, sample_bes3_pair, sample_normalized_excursion, spine_forest_pair, stream_rng};
use crt_filling::{ContourTree, PathGrid, PathKind, TreeMode};

pub struct Fixture {
    pub name: String,
    pub tree: ContourTree,
    /// Contour values in combined (time) order.
    pub values: Vec<f64>,
    pub origin: usize,
}

impl Fixture {
    fn new(name: String, tree: ContourTree) -> Self {
        let values = (0..tree.len()).map(|i| tree.value(i)).collect();
        let origin = tree.origin_index();
        Fixture { name, tree, values, origin }
    }

    /// Distance straight from the contour definition.
    pub fn d(&self, s: usize, t: usize) -> f64 {
        let (s, t) = if s <= t { (s, t) } else { (t, s) };
        let v = &self.values;
        let low = if self.tree.mode() == TreeMode::Finite || t <= self.origin || s >= self.origin {
            v[s..=t].iter().copied().fold(f64::INFINITY, f64::min)
        } else {
            let a = v[..=s].iter().copied().fold(f64::INFINITY, f64::min);
            let b = v[t..].iter().copied().fold(f64::INFINITY, f64::min);
            a.min(b)
        };
        v[s] + v[t] - 2.0 * low
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Bounded components of the tree minus the geodesic `[x, y]`, as
    /// sorted index sets. Components touching either grid end are dropped.
    pub fn components_off(&self, x: usize, y: usize) -> Vec<Vec<usize>> {
        let n = self.n();
        let dxy = self.d(x, y);
        let off: Vec<f64> = (0..n).map(|u| (self.d(u, x) + self.d(u, y) - dxy) / 2.0).collect();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for u in 0..n {
            if off[u] <= 1e-12 {
                continue;
            }
            for v in u + 1..n {
                if off[v] > 1e-12 && self.d(u, v) < off[u] + off[v] - 1e-9 {
                    let (a, b) = (find(&mut parent, u), find(&mut parent, v));
                    parent[a] = b;
                }
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for u in 0..n {
            if off[u] > 1e-12 {
                let r = find(&mut parent, u);
                groups.entry(r).or_default().push(u);
            }
        }
        let mut out: Vec<Vec<usize>> = groups
            .into_values()
            .filter(|g| !g.contains(&0) && !g.contains(&(n - 1)))
            .collect();
        out.sort();
        out
    }

    /// Largest pairwise distance over `set`, plus distances to the geodesic
    /// `[x, y]` (which stand in for the attachment point).
    pub fn closure_diameter(&self, set: &[usize], x: usize, y: usize) -> f64 {
        let dxy = self.d(x, y);
        let mut best: f64 = 0.0;
        for (i, &u) in set.iter().enumerate() {
            best = best.max((self.d(u, x) + self.d(u, y) - dxy) / 2.0);
            for &v in &set[i + 1..] {
                best = best.max(self.d(u, v));
            }
        }
        best
    }
}

pub fn tent(m: usize) -> PathGrid {
    let v = (0..=m).map(|i| {
        let t = i as f64 / m as f64;
        t.min(1.0 - t)
    });
    PathGrid::new(PathKind::Excursion, 0.0, 1.0 / m as f64, v.collect()).unwrap()
}

pub fn finite_fixtures() -> Vec<Fixture> {
    let mut out = Vec::new();
    for (k, m) in (8..78).enumerate() {
        let p = sample_normalized_excursion(m, 1000 + k as u64).unwrap();
        out.push(Fixture::new(format!("excursion m={m}"), ContourTree::finite(&p).unwrap()));
    }
    for m in [8, 16, 33, 63] {
        out.push(Fixture::new(format!("tent m={m}"), ContourTree::finite(&tent(m)).unwrap()));
    }
    out
}

pub fn two_sided_fixtures() -> Vec<Fixture> {
    let mut out = Vec::new();
    for k in 0..70u64 {
        let m = 10 + (k as usize % 22);
        let (l, r) = sample_bes3_pair(1.0, m, 2000 + k).unwrap();
        out.push(Fixture::new(format!("bes3 m={m} seed={}", 2000 + k), ContourTree::two_sided(&l, &r).unwrap()));
    }
    let params = ForestParams::on_grid(1.0, 0.01, 0.16).unwrap();
    let mut seed = 0u64;
    while out.len() < 140 {
        let mut rng = stream_rng(3000, seed);
        seed += 1;
        let (l, r) = spine_forest_pair(&params, &mut rng).unwrap();
        if l.len() + r.len() - 1 <= 64 {
            out.push(Fixture::new(format!("forest stream={}", seed - 1), ContourTree::two_sided(&l, &r).unwrap()));
        }
    }
    out
}

pub fn all_fixtures() -> Vec<Fixture> {
    let mut v = finite_fixtures();
    v.extend(two_sided_fixtures());
    v
}

/// Runs every exhaustive comparison on one fixture; returns the first
/// mismatch found.
pub fn check_fixture(fx: &Fixture) -> Result<(), String> {
    let tree = &fx.tree;
    let n = fx.n();
    let tol = tree.tol_eq();
    let p = |i: usize| tree.point(i).unwrap();

    for a in 0..n {
        for b in 0..n {
            let got = tree.dist_idx(a, b);
            let want = fx.d(a, b);
            if (got - want).abs() > 1e-12 {
                return Err(format!("{}: dist({a},{b}) = {got}, scan gives {want}", fx.name));
            }
        }
    }

    // Meets: on the geodesic, and nearest to the root (finite) or the far
    // anchor (two-sided) among geodesic points.
    let anchor = match tree.mode() {
        TreeMode::Finite => tree.root().index(),
        TreeMode::TwoSided => tree.far_anchor().unwrap().index(),
    };
    for a in (0..n).step_by(3) {
        for b in (0..n).step_by(2) {
            if tree.mode() == TreeMode::TwoSided
                && (tree.safe_ray_length(p(a)).unwrap() < 0.0 || tree.safe_ray_length(p(b)).unwrap() < 0.0)
            {
                continue;
            }
            let z = tree.meet(p(a), p(b)).unwrap().index();
            let dab = fx.d(a, b);
            if fx.d(a, z) + fx.d(z, b) > dab + tol {
                return Err(format!("{}: meet({a},{b}) = {z} is off the geodesic", fx.name));
            }
            let best = (0..n)
                .filter(|&u| fx.d(a, u) + fx.d(u, b) <= dab + 1e-12)
                .min_by(|&u, &v| fx.d(u, anchor).total_cmp(&fx.d(v, anchor)))
                .unwrap();
            if fx.d(z, best) > tol {
                return Err(format!("{}: meet({a},{b}) = {z}, exhaustive {best}", fx.name));
            }
        }
    }

    // Segments.
    for a in (0..n).step_by(5) {
        for b in (0..n).step_by(4) {
            let seg: Vec<usize> = tree.segment_points(p(a), p(b)).unwrap().iter().map(|q| q.index()).collect();
            if a == b {
                if seg != [a] {
                    return Err(format!("{}: segment({a},{a}) is not the single point", fx.name));
                }
                continue;
            }
            let dab = fx.d(a, b);
            let mut want: Vec<usize> = (0..n).filter(|&u| fx.d(a, u) + fx.d(u, b) <= dab + tol).collect();
            let mut got = seg.clone();
            got.sort_unstable();
            want.sort_unstable();
            if got != want {
                return Err(format!("{}: segment({a},{b}) differs from exhaustive set", fx.name));
            }
            if seg.windows(2).any(|w| fx.d(a, w[0]) > fx.d(a, w[1])) {
                return Err(format!("{}: segment({a},{b}) not ordered from a", fx.name));
            }
        }
    }

    // Interval diameters.
    for lo in (0..n).step_by(3) {
        for hi in (lo..n).step_by(5) {
            let got = tree.interval_diameter(lo, hi).unwrap();
            let mut want: f64 = 0.0;
            for u in lo..=hi {
                for v in u..=hi {
                    want = want.max(fx.d(u, v));
                }
            }
            if (got - want).abs() > 1e-12 {
                return Err(format!("{}: interval diameter [{lo},{hi}] = {got}, brute force {want}", fx.name));
            }
        }
    }

    if tree.mode() == TreeMode::TwoSided {
        check_rays_and_branches(fx)?;
    }
    Ok(())
}

fn check_rays_and_branches(fx: &Fixture) -> Result<(), String> {
    let tree = &fx.tree;
    let n = fx.n();
    let anchor = tree.far_anchor().unwrap().index();
    let p = |i: usize| tree.point(i).unwrap();
    for x in 0..n {
        let safe = tree.safe_ray_length(p(x)).unwrap();
        if safe <= 0.0 {
            continue;
        }
        let dxa = fx.d(x, anchor);
        let on_ray: Vec<usize> = (0..n).filter(|&u| fx.d(x, u) + fx.d(u, anchor) <= dxa + 1e-12).collect();
        for frac in [0.0, 0.13, 0.37, 0.71, 1.0] {
            let t = frac * safe;
            let r = tree.ray_point(p(x), t).unwrap().index();
            let want = on_ray.iter().map(|&u| (fx.d(x, u) - t).abs()).fold(f64::INFINITY, f64::min);
            if (fx.d(x, r) - t).abs() > want + 1e-12 || !on_ray.contains(&r) {
                return Err(format!("{}: ray_point({x}, {t}) = {r} misses the anchor-segment oracle", fx.name));
            }

            let y = tree.ray_floor(p(x), t).unwrap().index();
            let mut got: Vec<Vec<usize>> = Vec::new();
            for h in tree.branching_subtrees(p(x), t).unwrap() {
                let set: Vec<usize> = (h.coding.0..=h.coding.1).collect();
                let want_h = set.iter().map(|&u| fx.d(h.root.index(), u)).fold(0.0, f64::max);
                if (h.height - want_h).abs() > 1e-12 {
                    return Err(format!("{}: branch height {} vs {want_h}", fx.name, h.height));
                }
                let diam = tree.subtree_diameter(&h);
                let want_d = fx.closure_diameter(&set, x, y);
                if (diam - want_d).abs() > 1e-12 {
                    return Err(format!("{}: subtree diameter {diam} vs {want_d} at x={x} t={t}", fx.name));
                }
                if !(h.height <= diam + 1e-12 && diam <= 2.0 * h.height + 1e-12) {
                    return Err(format!("{}: height/diameter bracket broken", fx.name));
                }
                if fx.d(x, h.root.index()) > t + tree.tol_eq() {
                    return Err(format!("{}: subtree root beyond the segment", fx.name));
                }
                got.push(set);
            }
            got.sort();
            let want = fx.components_off(x, y);
            if got != want {
                return Err(format!(
                    "{}: branching at x={x} t={t} (y={y}) gives {got:?}, components {want:?}",
                    fx.name
                ));
            }
        }
    }
    Ok(())
}
