//! Metric trees coded by contour functions.
//!
//! A finite tree is coded by one path on `[0, h]`; the two-sided tree glues a
//! left and a right half at time 0. Grid times are addressed by a combined
//! index running left to right in time: the left half is stored reversed so
//! that index `nl - 1` is time 0 (owned by the right half's local index 0).
//!
//! In the two-sided tree every point has a ray toward infinity. For a point
//! at local index `k` of half `h` with value `X0` and future minimum
//! `f = min X[k..]`, the ray first descends inside its own branch down to
//! level `f`, then climbs the spine. Spine points are coded by the
//! future-minimum records of both halves.

use std::sync::OnceLock;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::path::{PathGrid, PathKind};
use crate::rmq::SparseTable;

static NEXT_TREE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeMode {
    Finite,
    TwoSided,
}

const LEFT: usize = 0;
const RIGHT: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TreePoint {
    tree: u64,
    index: u32,
}

impl TreePoint {
    /// Combined grid index of the representative time.
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone)]
struct Half {
    min: SparseTable,
    max: SparseTable,
    fut: Vec<f64>,
    records: Vec<u32>,
    record_values: Vec<f64>,
    // Prefix maxima of X - 2F.
    lift: Vec<f64>,
}

impl Half {
    fn new(values: &[f64]) -> Self {
        let n = values.len();
        let mut fut = vec![0.0; n];
        let mut acc = f64::INFINITY;
        for i in (0..n).rev() {
            acc = acc.min(values[i]);
            fut[i] = acc;
        }
        let records: Vec<u32> = (0..n).filter(|&i| values[i] == fut[i]).map(|i| i as u32).collect();
        let record_values = records.iter().map(|&i| values[i as usize]).collect();
        let mut lift = Vec::with_capacity(n);
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            best = best.max(values[i] - 2.0 * fut[i]);
            lift.push(best);
        }
        Half {
            min: SparseTable::min_table(values),
            max: SparseTable::max_table(values),
            fut,
            records,
            record_values,
            lift,
        }
    }

    #[inline]
    fn x(&self, i: usize) -> f64 {
        self.min.values()[i]
    }

    fn len(&self) -> usize {
        self.min.len()
    }

    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.x(i) + self.x(j) - 2.0 * self.min.value(a, b)
    }

    // Exact diameter of the tree coded by the local range [a, b].
    fn range_diameter(&self, a: usize, b: usize) -> f64 {
        let v = self.min.values();
        let mut prefix = f64::NEG_INFINITY;
        let mut best_mid = f64::NEG_INFINITY;
        let mut diam: f64 = 0.0;
        for &x in &v[a..=b] {
            prefix = prefix.max(x);
            best_mid = best_mid.max(prefix - 2.0 * x);
            diam = diam.max(best_mid + x);
        }
        diam
    }

    // Position in `records` of the first record with value >= level.
    fn first_record_at_least(&self, level: f64) -> usize {
        self.record_values.partition_point(|v| *v < level)
    }
}

/// Options fixed at tree construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeOptions {
    /// Fraction of each half treated as the truncation boundary layer; ray
    /// queries refuse levels reached only inside the last `4 * margin` of it.
    pub safety_margin: f64,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions { safety_margin: 0.05 }
    }
}

#[derive(Debug, Clone)]
pub struct ContourTree {
    id: u64,
    mode: TreeMode,
    kind: PathKind,
    halves: Vec<Half>,
    step: f64,
    tol_eq: f64,
    safe_level: f64,
    top_level: f64,
}

/// A subtree hanging off a segment, with its coding interval.
#[derive(Debug, Clone)]
pub struct SubtreeHandle {
    pub root: TreePoint,
    /// Inclusive combined-index range of the open component (root excluded).
    pub coding: (usize, usize),
    pub height: f64,
    piece: Piece,
    diameter: OnceLock<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Piece {
    // Closure is the local range [a, b] of one half; its minimum sits at an end.
    Range { half: usize, a: usize, b: usize },
    // Everything attached below spine level f: own [0, g] and other [0, q].
    Origin { own: usize, g: usize, q: usize },
}

impl SubtreeHandle {
    pub fn cached_diameter(&self) -> Option<f64> {
        self.diameter.get().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    half: usize,
    local: usize,
    dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub root_half: usize,
    pub root_local: usize,
    pub height: f64,
    piece: Piece,
}

impl ContourTree {
    /// Tree coded by a single path; rooted at time 0.
    pub fn finite(path: &PathGrid) -> Result<Self> {
        if path.len() < 2 {
            return Err(Error::invalid("a finite tree needs at least two grid values"));
        }
        let half = Half::new(path.values());
        Ok(ContourTree {
            id: NEXT_TREE_ID.fetch_add(1, Ordering::Relaxed),
            mode: TreeMode::Finite,
            kind: path.kind(),
            halves: vec![half],
            step: path.step(),
            tol_eq: 2.0 * path.max_increment(),
            safe_level: f64::INFINITY,
            top_level: f64::INFINITY,
        })
    }

    pub fn two_sided(left: &PathGrid, right: &PathGrid) -> Result<Self> {
        Self::two_sided_with(left, right, TreeOptions::default())
    }

    pub fn two_sided_with(left: &PathGrid, right: &PathGrid, opts: TreeOptions) -> Result<Self> {
        if left.step() != right.step() {
            return Err(Error::invalid("halves must share one grid step"));
        }
        if left.values()[0] != 0.0 || right.values()[0] != 0.0 {
            return Err(Error::InvariantViolation("both halves must be 0 at time 0".into()));
        }
        if left.len() < 2 || right.len() < 2 {
            return Err(Error::invalid("each half needs at least two grid values"));
        }
        if !(opts.safety_margin >= 0.0 && 4.0 * opts.safety_margin < 1.0) {
            return Err(Error::invalid("safety margin must lie in [0, 1/4)"));
        }
        let halves = vec![Half::new(left.values()), Half::new(right.values())];
        let top_level = halves.iter().map(|h| h.x(h.len() - 1)).fold(f64::INFINITY, f64::min);
        let safe_level = if left.kind() == PathKind::SpineForest && right.kind() == PathKind::SpineForest {
            top_level
        } else {
            halves
                .iter()
                .map(|h| {
                    let n = h.len();
                    let cut = ((1.0 - 4.0 * opts.safety_margin) * (n - 1) as f64).floor() as usize;
                    h.min.value(cut.min(n - 1), n - 1)
                })
                .fold(top_level, f64::min)
        };
        Ok(ContourTree {
            id: NEXT_TREE_ID.fetch_add(1, Ordering::Relaxed),
            mode: TreeMode::TwoSided,
            kind: right.kind(),
            halves,
            step: left.step(),
            tol_eq: 2.0 * left.max_increment().max(right.max_increment()),
            safe_level,
            top_level,
        })
    }

    pub fn mode(&self) -> TreeMode {
        self.mode
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn mass_per_step(&self) -> f64 {
        self.step
    }

    pub fn tol_eq(&self) -> f64 {
        self.tol_eq
    }

    /// Highest spine level whose ray queries are trusted.
    pub fn safe_level(&self) -> f64 {
        self.safe_level
    }

    /// Number of distinct grid times.
    pub fn len(&self) -> usize {
        match self.mode {
            TreeMode::Finite => self.halves[0].len(),
            TreeMode::TwoSided => self.halves[LEFT].len() - 1 + self.halves[RIGHT].len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_mass(&self) -> f64 {
        self.step * self.len() as f64
    }

    /// Combined index of time 0.
    pub fn origin_index(&self) -> usize {
        match self.mode {
            TreeMode::Finite => 0,
            TreeMode::TwoSided => self.halves[LEFT].len() - 1,
        }
    }

    pub fn root(&self) -> TreePoint {
        self.at(self.origin_index())
    }

    pub fn point(&self, index: usize) -> Result<TreePoint> {
        if index >= self.len() {
            return Err(Error::invalid(format!("grid index {index} outside tree of {} times", self.len())));
        }
        Ok(self.at(index))
    }

    #[inline]
    pub(crate) fn at(&self, index: usize) -> TreePoint {
        TreePoint { tree: self.id, index: index as u32 }
    }

    fn check(&self, p: TreePoint) -> Result<usize> {
        if p.tree != self.id || p.index() >= self.len() {
            return Err(Error::invalid("tree point belongs to a different tree"));
        }
        Ok(p.index())
    }

    pub fn owns(&self, p: TreePoint) -> bool {
        p.tree == self.id && p.index() < self.len()
    }

    pub fn time_of(&self, p: TreePoint) -> f64 {
        (p.index() as f64 - self.origin_index() as f64) * self.step
    }

    pub fn value(&self, index: usize) -> f64 {
        let (h, i) = self.locate(index);
        self.halves[h].x(i)
    }

    #[inline]
    fn locate(&self, index: usize) -> (usize, usize) {
        match self.mode {
            TreeMode::Finite => (0, index),
            TreeMode::TwoSided => {
                let o = self.halves[LEFT].len() - 1;
                if index < o { (LEFT, o - index) } else { (RIGHT, index - o) }
            }
        }
    }

    #[inline]
    fn combine(&self, half: usize, local: usize) -> usize {
        match self.mode {
            TreeMode::Finite => local,
            TreeMode::TwoSided => {
                let o = self.halves[LEFT].len() - 1;
                if half == LEFT { o - local } else { o + local }
            }
        }
    }

    #[inline]
    fn dist_local(&self, (h1, i): (usize, usize), (h2, j): (usize, usize)) -> f64 {
        if h1 == h2 {
            self.halves[h1].dist(i, j)
        } else {
            let (a, b) = (&self.halves[h1], &self.halves[h2]);
            a.x(i) + b.x(j) - 2.0 * a.fut[i].min(b.fut[j])
        }
    }

    /// Distance between two combined grid indices.
    #[inline]
    pub fn dist_idx(&self, a: usize, b: usize) -> f64 {
        self.dist_local(self.locate(a), self.locate(b))
    }

    pub fn dist(&self, a: TreePoint, b: TreePoint) -> Result<f64> {
        Ok(self.dist_idx(self.check(a)?, self.check(b)?))
    }

    pub fn tree_equal(&self, a: TreePoint, b: TreePoint) -> Result<bool> {
        Ok(self.dist(a, b)? <= self.tol_eq)
    }

    /// `d(x, ray point) - t` is constant along the ray: the Busemann value.
    fn busemann(&self, (h, i): (usize, usize)) -> f64 {
        let half = &self.halves[h];
        half.x(i) - 2.0 * half.fut[i]
    }

    /// Meet of two points: toward the root in finite mode, toward infinity
    /// in two-sided mode.
    pub fn meet(&self, a: TreePoint, b: TreePoint) -> Result<TreePoint> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        match self.mode {
            TreeMode::Finite => {
                let (lo, hi) = if ia <= ib { (ia, ib) } else { (ib, ia) };
                Ok(self.at(self.halves[0].min.index(lo, hi)))
            }
            TreeMode::TwoSided => {
                let (la, lb) = (self.locate(ia), self.locate(ib));
                let d = self.dist_local(la, lb);
                let da = ((d + self.busemann(la) - self.busemann(lb)) / 2.0).clamp(0.0, d);
                let (lo, hi) = self.bracket(la, da, false)?;
                Ok(self.at(self.pick_closest(lo, hi, da)))
            }
        }
    }

    fn pick_closest(&self, lo: Option<Cand>, hi: Option<Cand>, t: f64) -> usize {
        let c = match (lo, hi) {
            (Some(l), Some(h)) => {
                if h.dist - t < t - l.dist { h } else { l }
            }
            (Some(l), None) => l,
            (None, Some(h)) => h,
            (None, None) => unreachable!("the start point is always a ray point"),
        };
        self.combine(c.half, c.local)
    }

    fn require_two_sided(&self) -> Result<()> {
        if self.mode != TreeMode::TwoSided {
            return Err(Error::InvalidState("rays need a two-sided tree".into()));
        }
        Ok(())
    }

    /// Largest `t` for which `R_t(x)` is trusted.
    pub fn safe_ray_length(&self, x: TreePoint) -> Result<f64> {
        self.require_two_sided()?;
        let (h, k) = self.locate(self.check(x)?);
        Ok(self.safe_length_local(h, k))
    }

    // Negative when the point's own branch meets the spine above the safe level.
    fn safe_length_local(&self, h: usize, k: usize) -> f64 {
        let half = &self.halves[h];
        let f = half.fut[k];
        if f > self.safe_level + 1e-12 {
            return f64::NEG_INFINITY;
        }
        half.x(k) + self.safe_level - 2.0 * f
    }

    // Ray grid points of x closest to distance t from below and from above.
    fn bracket(&self, (h, k0): (usize, usize), t: f64, checked: bool) -> Result<(Option<Cand>, Option<Cand>)> {
        let own = &self.halves[h];
        let x0 = own.x(k0);
        let f = own.fut[k0];
        if checked {
            let need = f.max(t - x0 + 2.0 * f);
            if need > self.safe_level + 1e-12 {
                return Err(Error::OutOfRange { requested: t, safe_bound: self.safe_length_local(h, k0) });
            }
        }
        let mut lo: Option<Cand> = None;
        let mut hi: Option<Cand> = None;
        let mut offer = |c: Cand| {
            if c.dist <= t {
                if lo.is_none_or(|l| c.dist > l.dist) {
                    lo = Some(c);
                }
            } else if hi.is_none_or(|u| c.dist < u.dist) {
                hi = Some(c);
            }
        };
        let level = x0 - t;
        if level > f {
            let a = own.min.first_beyond(k0, level).expect("future minimum lies below the level");
            offer(Cand { half: h, local: a, dist: x0 - own.x(a) });
            let b = own.min.index(k0, a - 1);
            offer(Cand { half: h, local: b, dist: x0 - own.x(b) });
            if let Some(a2) = own.min.last_beyond(k0, level) {
                if own.x(a2) >= f {
                    offer(Cand { half: h, local: a2, dist: x0 - own.x(a2) });
                }
                let b2 = own.min.index(a2 + 1, k0);
                offer(Cand { half: h, local: b2, dist: x0 - own.x(b2) });
            }
        } else {
            let level = t - x0 + 2.0 * f;
            for (hh, half) in self.halves.iter().enumerate() {
                let base = half.first_record_at_least(f);
                let p = half.first_record_at_least(level).max(base);
                for pos in [p.wrapping_sub(1), p] {
                    if pos >= base && pos < half.records.len() {
                        let r = half.records[pos] as usize;
                        offer(Cand { half: hh, local: r, dist: x0 + half.x(r) - 2.0 * f });
                    }
                }
            }
        }
        Ok((lo, hi))
    }

    /// The point on the ray from `x` at distance `t` (closest grid representative).
    pub fn ray_point(&self, x: TreePoint, t: f64) -> Result<TreePoint> {
        self.require_two_sided()?;
        if !(t >= 0.0) {
            return Err(Error::invalid(format!("ray length must be nonnegative, got {t}")));
        }
        let lx = self.locate(self.check(x)?);
        let (lo, hi) = self.bracket(lx, t, true)?;
        Ok(self.at(self.pick_closest(lo, hi, t)))
    }

    /// The farthest ray grid point from `x` at distance at most `t`.
    pub fn ray_floor(&self, x: TreePoint, t: f64) -> Result<TreePoint> {
        self.require_two_sided()?;
        let lx = self.locate(self.check(x)?);
        let (lo, _) = self.bracket(lx, t, true)?;
        let c = lo.expect("x itself is at distance 0");
        Ok(self.at(self.combine(c.half, c.local)))
    }

    /// Spine end used as the far anchor of every ray.
    pub fn far_anchor(&self) -> Result<TreePoint> {
        self.require_two_sided()?;
        let h = if self.halves[LEFT].x(self.halves[LEFT].len() - 1) <= self.halves[RIGHT].x(self.halves[RIGHT].len() - 1) {
            LEFT
        } else {
            RIGHT
        };
        Ok(self.at(self.combine(h, self.halves[h].len() - 1)))
    }

    /// Spine level reached by both halves.
    pub fn top_level(&self) -> f64 {
        self.top_level
    }

    /// Grid points on the geodesic from `a` to `b`, ordered by distance from `a`.
    pub fn segment_points(&self, a: TreePoint, b: TreePoint) -> Result<Vec<TreePoint>> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        if ia == ib {
            return Ok(vec![a]);
        }
        let dab = self.dist_idx(ia, ib);
        let mut pts: Vec<(f64, usize)> = (0..self.len())
            .filter_map(|u| {
                let du = self.dist_idx(ia, u);
                (du + self.dist_idx(u, ib) <= dab + self.tol_eq).then_some((du, u))
            })
            .collect();
        pts.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
        Ok(pts.into_iter().map(|(_, u)| self.at(u)).collect())
    }

    /// Visits the subtrees branching off `[x, R_t(x)]`, stopping early when
    /// `visit` returns `true`. The segment ends at the farthest ray grid point
    /// within distance `t`; subtrees rooted there are included.
    pub fn visit_branches(&self, x: TreePoint, t: f64, visit: &mut dyn FnMut(&Branch) -> bool) -> Result<()> {
        self.require_two_sided()?;
        if !(t >= 0.0) {
            return Err(Error::invalid(format!("segment length must be nonnegative, got {t}")));
        }
        let (h, k0) = self.locate(self.check(x)?);
        self.bracket((h, k0), t, true)?;
        let own = &self.halves[h];
        let x0 = own.x(k0);
        let f = own.fut[k0];

        let range = |half: usize, a: usize, b: usize, root: usize| -> Branch {
            let hv = &self.halves[half];
            let height = hv.max.value(a, b) - hv.x(root);
            let (ca, cb) = (a.min(root), b.max(root));
            Branch { root_half: half, root_local: root, height, piece: Piece::Range { half, a: ca, b: cb } }
        };

        // Descent toward the spine, forward in time.
        let mut cur = k0;
        let mut reached_spine = false;
        loop {
            if x0 - own.x(cur) > t {
                break;
            }
            if own.x(cur) == own.fut[cur] {
                reached_spine = true;
                break;
            }
            let nxt = own.min.first_at_or_beyond(cur + 1, own.x(cur)).expect("future minimum lies below");
            if nxt > cur + 1 && visit(&range(h, cur + 1, nxt - 1, cur)) {
                return Ok(());
            }
            cur = nxt;
        }
        let u1 = cur;

        // Same descent read backward in time.
        let mut cur = k0;
        let mut gap: Option<usize> = None;
        loop {
            if x0 - own.x(cur) > t {
                break;
            }
            let prv = if cur == 0 { None } else { own.min.last_at_or_beyond(cur - 1, own.x(cur)) };
            let start = prv.map_or(0, |p| p + 1);
            if cur > start && visit(&range(h, start, cur - 1, cur)) {
                return Ok(());
            }
            match prv {
                Some(p) if own.x(p) >= f => cur = p,
                other => {
                    gap = other;
                    break;
                }
            }
        }

        if !reached_spine {
            return Ok(());
        }

        // Everything attached to the spine below level f.
        if f > 0.0 {
            let other = 1 - h;
            let oh = &self.halves[other];
            let g = gap.expect("a value below f precedes x when f > 0");
            let q = oh.records[oh.first_record_at_least(f) - 1] as usize;
            let height = f + own.lift[g].max(oh.lift[q]);
            let stop = visit(&Branch { root_half: h, root_local: u1, height, piece: Piece::Origin { own: h, g, q } });
            if stop {
                return Ok(());
            }
        }

        // Spine intervals on both halves, attached at their upper record.
        for (hh, half) in self.halves.iter().enumerate() {
            let mut pos = if hh == h {
                half.records.partition_point(|&r| (r as usize) < u1)
            } else {
                half.first_record_at_least(f)
            };
            let mut prev = if hh == h || pos == 0 {
                pos += 1;
                half.records[pos - 1] as usize
            } else {
                half.records[pos - 1] as usize
            };
            while pos < half.records.len() {
                let r = half.records[pos] as usize;
                if x0 + half.x(r) - 2.0 * f > t {
                    break;
                }
                if r > prev + 1 && visit(&range(hh, prev + 1, r - 1, r)) {
                    return Ok(());
                }
                prev = r;
                pos += 1;
            }
        }
        Ok(())
    }

    fn handle(&self, b: &Branch) -> SubtreeHandle {
        let coding = match b.piece {
            Piece::Range { half, a, b: e } => {
                let (a, e) = if a == b.root_local { (a + 1, e) } else { (a, e - 1) };
                let (p, q) = (self.combine(half, a), self.combine(half, e));
                (p.min(q), p.max(q))
            }
            Piece::Origin { own, g, q } => {
                let (p, r) = (self.combine(own, g), self.combine(1 - own, q));
                (p.min(r), p.max(r))
            }
        };
        SubtreeHandle {
            root: self.at(self.combine(b.root_half, b.root_local)),
            coding,
            height: b.height,
            piece: b.piece,
            diameter: OnceLock::new(),
        }
    }

    pub fn branching_subtrees(&self, x: TreePoint, t: f64) -> Result<Vec<SubtreeHandle>> {
        let mut out = Vec::new();
        self.visit_branches(x, t, &mut |b| {
            out.push(self.handle(b));
            false
        })?;
        Ok(out)
    }

    fn piece_diameter(&self, piece: Piece, height: f64) -> f64 {
        match piece {
            Piece::Range { half, a, b } => self.halves[half].range_diameter(a, b),
            Piece::Origin { own, g, q } => {
                let (hu, hv) = (&self.halves[own], &self.halves[1 - own]);
                let mut best = height.max(hu.range_diameter(0, g)).max(hv.range_diameter(0, q));
                let fv = &hv.fut[..=q];
                for u in 0..=g {
                    let fu = hu.fut[u];
                    let p = fv.partition_point(|v| *v < fu);
                    if p > 0 {
                        best = best.max(hu.x(u) + hv.lift[p - 1]);
                    }
                    if p <= q {
                        best = best.max(hu.x(u) - 2.0 * fu + hv.max.value(p, q));
                    }
                }
                best
            }
        }
    }

    /// Exact diameter of the grid times in the combined range `[lo, hi]`.
    pub fn interval_diameter(&self, lo: usize, hi: usize) -> Result<f64> {
        if lo > hi || hi >= self.len() {
            return Err(Error::invalid(format!("bad index range [{lo}, {hi}]")));
        }
        let (h1, a) = self.locate(lo);
        let (h2, b) = self.locate(hi);
        if h1 == h2 {
            Ok(self.halves[h1].range_diameter(a.min(b), a.max(b)))
        } else {
            Ok(self.piece_diameter(Piece::Origin { own: RIGHT, g: b, q: a }, 0.0))
        }
    }

    /// Grid point where a visited branch attaches to the segment.
    pub fn branch_root(&self, b: &Branch) -> TreePoint {
        self.at(self.combine(b.root_half, b.root_local))
    }

    pub fn branch_diameter(&self, b: &Branch) -> f64 {
        self.piece_diameter(b.piece, b.height)
    }

    /// Diameter of the closed subtree (root included), exact over grid points.
    pub fn subtree_diameter(&self, h: &SubtreeHandle) -> f64 {
        *h.diameter.get_or_init(|| self.piece_diameter(h.piece, h.height))
    }

    /// Whether some subtree branching off `[x, R_len(x)]` has diameter at
    /// least `threshold`.
    pub fn has_branch_with_diameter(&self, x: TreePoint, len: f64, threshold: f64) -> Result<bool> {
        let mut found = false;
        self.visit_branches(x, len, &mut |b| {
            if b.height >= threshold || (2.0 * b.height >= threshold && self.branch_diameter(b) >= threshold) {
                found = true;
            }
            found
        })?;
        Ok(found)
    }

    /// Mass of the open ball of radius `eps` around `x`.
    pub fn ball_mass(&self, x: TreePoint, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(Error::invalid("ball radius must be positive"));
        }
        let idx = self.check(x)?;
        Ok(self.ball_count(idx, eps) as f64 * self.step)
    }

    pub(crate) fn ball_count(&self, idx: usize, eps: f64) -> usize {
        let mut count = 0;
        self.for_each_in_ball(idx, eps, |_| count += 1);
        count
    }

    /// Visits every combined index within `eps` of `idx` (scan order).
    pub fn for_each_in_ball(&self, idx: usize, eps: f64, mut f: impl FnMut(usize)) {
        let (h, k0) = self.locate(idx);
        let half = &self.halves[h];
        let x0 = half.x(k0);
        let v = half.min.values();
        let mut run = x0;
        for (i, &x) in v.iter().enumerate().skip(k0) {
            run = run.min(x);
            if x0 - run >= eps {
                break;
            }
            if x0 + x - 2.0 * run < eps {
                f(self.combine(h, i));
            }
        }
        let mut run = x0;
        let mut reached_origin = true;
        for i in (0..k0).rev() {
            run = run.min(v[i]);
            if x0 - run >= eps {
                reached_origin = false;
                break;
            }
            if x0 + v[i] - 2.0 * run < eps {
                f(self.combine(h, i));
            }
        }
        if self.mode == TreeMode::TwoSided && reached_origin {
            let fx = half.fut[k0];
            let other = &self.halves[1 - h];
            for j in 1..other.len() {
                if other.fut[j] >= x0 + eps {
                    break;
                }
                if x0 + other.x(j) - 2.0 * fx.min(other.fut[j]) < eps {
                    f(self.combine(1 - h, j));
                }
            }
        }
    }

    /// Sorted combined indices within distance `< radius` of `center`.
    pub fn ball_indices(&self, center: usize, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_in_ball(center, radius, |u| out.push(u));
        out.sort_unstable();
        out
    }

    /// Maximum height above the root, used as a crude size.
    pub fn max_value(&self) -> f64 {
        self.halves.iter().map(|h| h.max.value(0, h.len() - 1)).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tent(m: usize) -> PathGrid {
        let v = (0..=m).map(|i| {
            let t = i as f64 / m as f64;
            t.min(1.0 - t)
        });
        PathGrid::new(PathKind::Excursion, 0.0, 1.0 / m as f64, v.collect()).unwrap()
    }

    #[test]
    fn tent_distances() {
        let tree = ContourTree::finite(&tent(10)).unwrap();
        let p = |i| tree.point(i).unwrap();
        assert!((tree.dist(p(2), p(5)).unwrap() - 0.3).abs() < 1e-12);
        assert!(tree.dist(p(2), p(8)).unwrap().abs() < 1e-12);
        assert!(tree.tree_equal(p(2), p(8)).unwrap());
    }

    #[test]
    fn foreign_points_are_rejected() {
        let a = ContourTree::finite(&tent(10)).unwrap();
        let b = ContourTree::finite(&tent(10)).unwrap();
        let p = b.point(3).unwrap();
        assert!(matches!(a.dist(p, a.root()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn tent_ball_mass_at_apex() {
        let tree = ContourTree::finite(&tent(1000)).unwrap();
        let apex = tree.point(500).unwrap();
        let m = tree.ball_mass(apex, 0.25).unwrap();
        assert!((m - 0.5).abs() < 3e-3, "{m}");
        assert!((tree.ball_mass(apex, 10.0).unwrap() - tree.total_mass()).abs() < 1e-12);
        assert!(tree.ball_mass(apex, 1e-9).unwrap() >= tree.mass_per_step());
    }

    #[test]
    fn ray_on_monotone_halves_climbs_the_spine() {
        let up = |n: usize| PathGrid::new(PathKind::Bes3PairHalf, 0.0, 0.01, (0..n).map(|i| i as f64 * 0.1).collect()).unwrap();
        let tree = ContourTree::two_sided_with(&up(50), &up(60), TreeOptions { safety_margin: 0.0 }).unwrap();
        let o = tree.root();
        let r = tree.ray_point(o, 1.0).unwrap();
        assert!((tree.dist(o, r).unwrap() - 1.0).abs() < 1e-9);
        assert!(tree.branching_subtrees(o, 2.0).unwrap().is_empty());
        assert!(matches!(tree.ray_point(o, 100.0), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn subtree_diameter_of_a_tent_is_its_height() {
        // Spine 0 -> 1 on the right with a tent of height 0.3 at level 0.5.
        let mut v: Vec<f64> = (0..=5).map(|i| i as f64 * 0.1).collect();
        v.extend([0.6, 0.7, 0.8, 0.7, 0.6, 0.5]);
        v.extend((6..=10).map(|i| i as f64 * 0.1));
        let right = PathGrid::new(PathKind::SpineForest, 0.0, 0.01, v).unwrap();
        let left = PathGrid::new(PathKind::SpineForest, 0.0, 0.01, (0..=10).map(|i| i as f64 * 0.1).collect()).unwrap();
        let tree = ContourTree::two_sided(&left, &right).unwrap();
        let subs = tree.branching_subtrees(tree.root(), 0.9).unwrap();
        assert_eq!(subs.len(), 1);
        assert!((subs[0].height - 0.3).abs() < 1e-12);
        assert!((tree.subtree_diameter(&subs[0]) - 0.3).abs() < 1e-12);
        assert!(tree.has_branch_with_diameter(tree.root(), 0.9, 0.3).unwrap());
        assert!(!tree.has_branch_with_diameter(tree.root(), 0.4, 0.1).unwrap());
    }
}
