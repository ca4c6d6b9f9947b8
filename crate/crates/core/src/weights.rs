//! Branching events, the weights built from them, and the per-vertex
//! machinery on the filling graph.
//!
//! `E(x, n)`: some subtree branching off `[x, R_{4 alpha^n}(x)]` has diameter
//! at least `alpha^(n-1) / 4`. `E~(x, n)` is the same with `32 alpha^n`.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::excursion::{stream_rng, ForestAtom, ItoParams, ShapeGrid};
use crate::nets::{FillingGraph, NetHierarchy};
use crate::tree::{ContourTree, TreeMode, TreePoint};

fn level_scale(alpha: f64, n: usize) -> f64 {
    alpha.powi(n as i32)
}

/// Diameter threshold `alpha^(n-1) / 4`.
pub fn event_threshold(alpha: f64, n: usize) -> f64 {
    alpha.powi(n as i32 - 1) / 4.0
}

fn check_level(alpha: f64, n: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n == 0 {
        return Err(Error::invalid("events are defined for levels n >= 1"));
    }
    Ok(())
}

pub fn detect_event_e(tree: &ContourTree, x: TreePoint, n: usize, alpha: f64) -> Result<bool> {
    check_level(alpha, n)?;
    tree.has_branch_with_diameter(x, 4.0 * level_scale(alpha, n), event_threshold(alpha, n))
}

pub fn detect_event_e_tilde(tree: &ContourTree, x: TreePoint, n: usize, alpha: f64) -> Result<bool> {
    check_level(alpha, n)?;
    tree.has_branch_with_diameter(x, 32.0 * level_scale(alpha, n), event_threshold(alpha, n))
}

/// How to treat `E~` when its segment leaves the trusted range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TildePolicy {
    /// Propagate the out-of-range error.
    Required,
    /// Leave `E~` (and everything built on it) unset where unsafe.
    WhenSafe,
    /// Never evaluate `E~`.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightEntry {
    pub e: bool,
    pub e_tilde: Option<bool>,
    pub sigma: f64,
    pub varrho: f64,
    pub varsigma: Option<f64>,
    /// Sum of `log varsigma(x, j)` for `j = 1..=n`.
    pub log_varpi: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct WeightTable {
    pub alpha: f64,
    pub eta: f64,
    pub n_max: usize,
    pub points: Vec<TreePoint>,
    entries: Vec<WeightEntry>,
}

impl WeightTable {
    /// Entry for point position `i` at level `n >= 1`.
    pub fn get(&self, i: usize, n: usize) -> &WeightEntry {
        assert!((1..=self.n_max).contains(&n), "level {n} outside 1..={}", self.n_max);
        &self.entries[i * self.n_max + n - 1]
    }

    pub fn sigma(&self, i: usize, n: usize) -> f64 {
        self.get(i, n).sigma
    }

    /// `log varpi(x, n)`; zero at `n = 0`.
    pub fn log_varpi(&self, i: usize, n: usize) -> Option<f64> {
        if n == 0 { Some(0.0) } else { self.get(i, n).log_varpi }
    }

    /// Rows `grid_time level E E_tilde sigma varrho varsigma log_varpi`.
    pub fn export_text(&self, tree: &ContourTree) -> String {
        let mut out = String::from("grid_time level E E_tilde sigma varrho varsigma log_varpi\n");
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:e}"));
        for (i, p) in self.points.iter().enumerate() {
            for n in 1..=self.n_max {
                let e = self.get(i, n);
                let _ = writeln!(
                    out,
                    "{} {n} {} {} {:e} {:e} {} {}",
                    tree.time_of(*p),
                    e.e as u8,
                    e.e_tilde.map_or("NA".into(), |b| (b as u8).to_string()),
                    e.sigma,
                    e.varrho,
                    opt(e.varsigma),
                    opt(e.log_varpi),
                );
            }
        }
        out
    }
}

/// Events and weights at every listed point for levels `1..=n_max`. The sup
/// in `varrho` runs over the listed points only.
pub fn weights_for(
    tree: &ContourTree,
    points: &[TreePoint],
    n_max: usize,
    alpha: f64,
    eta: f64,
    tilde: TildePolicy,
) -> Result<WeightTable> {
    if tree.mode() != TreeMode::TwoSided {
        return Err(Error::InvalidState("weights need a two-sided tree".into()));
    }
    check_level(alpha, 1)?;
    if !(eta > 0.0 && eta < 0.5) {
        return Err(Error::invalid(format!("eta must lie in (0, 1/2), got {eta}")));
    }
    let rows: Vec<Vec<(bool, Option<bool>)>> = points
        .par_iter()
        .map(|&x| {
            (1..=n_max)
                .map(|n| {
                    let e = detect_event_e(tree, x, n, alpha)?;
                    let et = match tilde {
                        TildePolicy::Skip => None,
                        TildePolicy::Required => Some(detect_event_e_tilde(tree, x, n, alpha)?),
                        TildePolicy::WhenSafe => match detect_event_e_tilde(tree, x, n, alpha) {
                            Ok(b) => Some(b),
                            Err(Error::OutOfRange { .. }) => None,
                            Err(e) => return Err(e),
                        },
                    };
                    Ok((e, et))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let big_sigma = 32.0 * alpha;
    let varrho: Vec<Vec<f64>> = points
        .par_iter()
        .map(|&x| {
            (1..=n_max)
                .map(|n| {
                    let r = 26.0 * level_scale(alpha, n);
                    let hit = points
                        .iter()
                        .zip(&rows)
                        .any(|(y, row)| row[n - 1].0 && tree.dist_idx(x.index(), y.index()) <= r);
                    eta + if hit { 2.0 * big_sigma } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let mut entries = Vec::with_capacity(points.len() * n_max);
    for (row, rho) in rows.iter().zip(&varrho) {
        let mut acc = Some(0.0);
        for n in 1..=n_max {
            let (e, et) = row[n - 1];
            let varsigma = et.map(|b| eta + if b { 64.0 * alpha } else { 0.0 });
            acc = acc.zip(varsigma).map(|(a, v)| a + v.ln());
            entries.push(WeightEntry {
                e,
                e_tilde: et,
                sigma: if e { big_sigma } else { 0.0 },
                varrho: rho[n - 1],
                varsigma,
                log_varpi: acc,
            });
        }
    }
    Ok(WeightTable { alpha, eta, n_max, points: points.to_vec(), entries })
}

/// Table with every event off: `sigma = 0`, `varrho = varsigma = eta`.
pub fn null_weights(points: &[TreePoint], n_max: usize, alpha: f64, eta: f64) -> WeightTable {
    let mut entries = Vec::with_capacity(points.len() * n_max);
    for _ in points {
        for n in 1..=n_max {
            entries.push(WeightEntry {
                e: false,
                e_tilde: Some(false),
                sigma: 0.0,
                varrho: eta,
                varsigma: Some(eta),
                log_varpi: Some(n as f64 * eta.ln()),
            });
        }
    }
    WeightTable { alpha, eta, n_max, points: points.to_vec(), entries }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexWeights {
    /// Flat id of the parent vertex one level up; `None` for the root.
    pub parent: Option<usize>,
    pub nu: f64,
    pub mu: f64,
    pub rho_assign: f64,
    pub log_pi: f64,
}

#[derive(Debug, Clone)]
pub struct FillingWeights {
    pub eta: f64,
    pub vertices: Vec<VertexWeights>,
}

/// Parent links, `nu`, `mu`, the assignment `rho = mu` and `log pi` along
/// parent chains. The root vertex carries `rho = 1` and `log pi = 0`.
pub fn filling_machinery(
    tree: &ContourTree,
    nets: &NetHierarchy,
    graph: &FillingGraph,
    weights: &WeightTable,
    eta: f64,
) -> Result<FillingWeights> {
    if weights.points != nets.carrier {
        return Err(Error::invalid("weights and nets must share one carrier"));
    }
    if weights.n_max < nets.n_max() {
        return Err(Error::invalid("weights do not cover every net level"));
    }
    let sigma_at = |v: usize| {
        let (n, i) = graph.vertices[v];
        if n == 0 { 0.0 } else { weights.sigma(nets.levels[n].points[i], n) }
    };
    let mut out: Vec<VertexWeights> = Vec::with_capacity(graph.len());
    for v in 0..graph.len() {
        let (n, i) = graph.vertices[v];
        if n == 0 {
            out.push(VertexWeights { parent: None, nu: 0.0, mu: eta, rho_assign: 1.0, log_pi: 0.0 });
            continue;
        }
        let x = nets.point(n, i).index();
        let ups = &nets.levels[n - 1].points;
        let mut best = (f64::INFINITY, 0usize);
        for (j, &c) in ups.iter().enumerate() {
            let d = tree.dist_idx(x, nets.carrier[c].index());
            if d < best.0 {
                best = (d, j);
            }
        }
        if best.0 > nets.radius(n - 1) {
            return Err(Error::InvariantViolation(format!("vertex ({n}, {i}) has no parent within alpha^(n-1)")));
        }
        let parent = graph.offsets[n - 1] + best.1;
        let mut sup: f64 = sigma_at(v);
        for &w in &graph.same_level[v] {
            sup = sup.max(sigma_at(w));
            for &z in &graph.same_level[w] {
                sup = sup.max(sigma_at(z));
            }
        }
        let nu = 2.0 * sup;
        let mu = nu.clamp(eta, 1.0 - eta);
        let log_pi = out[parent].log_pi + mu.ln();
        out.push(VertexWeights { parent: Some(parent), nu, mu, rho_assign: mu, log_pi });
    }
    Ok(FillingWeights { eta, vertices: out })
}

/// Whether `(y, x_0..x_N)` meets the three chain hypotheses at level `n`.
/// Ball intersections are decided by center distances except the last
/// one, which needs an actual grid point outside `B_{2 alpha^(n-1)}(y)`.
pub fn chain_is_valid(tree: &ContourTree, y: usize, chain: &[usize], alpha: f64, n: usize) -> bool {
    let (a, big) = (level_scale(alpha, n), level_scale(alpha, n - 1));
    let (Some(&first), Some(&last)) = (chain.first(), chain.last()) else {
        return false;
    };
    if tree.dist_idx(y, first) >= big + 4.0 * a {
        return false;
    }
    if chain.windows(2).any(|w| tree.dist_idx(w[0], w[1]) >= 8.0 * a) {
        return false;
    }
    let mut escapes = false;
    tree.for_each_in_ball(last, 4.0 * a, |z| escapes |= tree.dist_idx(y, z) >= 2.0 * big);
    escapes
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub alpha: f64,
    pub n: usize,
    pub instances: usize,
    /// Attempts thrown away: invalid chain or a query outside the safe range.
    pub rejected: usize,
    pub min_sum: Option<f64>,
    pub violations: usize,
}

fn random_in_ball<R: Rng + ?Sized>(tree: &ContourTree, c: usize, r: f64, rng: &mut R) -> usize {
    let ball = tree.ball_indices(c, r);
    ball[rng.random_range(0..ball.len())]
}

/// Grid points along the geodesic from `a` to `b`, spaced by random steps of
/// at most `max_step`, each possibly moved within `wobble` of the geodesic.
fn random_chain<R: Rng + ?Sized>(
    tree: &ContourTree,
    a: usize,
    b: usize,
    max_step: f64,
    wobble: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let (pa, pb) = (tree.point(a)?, tree.point(b)?);
    let z = tree.meet(pa, pb)?;
    let (da, db) = (tree.dist(pa, z)?, tree.dist(pb, z)?);
    let total = da + db;
    let mut s = 0.0;
    let mut out = vec![a];
    loop {
        s += max_step * rng.random_range(0.3..1.0);
        if s >= total {
            break;
        }
        let on = if s <= da { tree.ray_point(pa, s)? } else { tree.ray_point(pb, total - s)? };
        let mut u = on.index();
        if rng.random::<bool>() {
            u = random_in_ball(tree, u, wobble * rng.random::<f64>() + f64::MIN_POSITIVE, rng);
        }
        out.push(u);
    }
    out.push(b);
    Ok(out)
}

/// Builds random chains meeting the three hypotheses around random centers
/// `y` near the root and records `sum_j sigma(x_j, n)` for each.
pub fn admissibility_harness(tree: &ContourTree, alpha: f64, n: usize, trials: usize, seed: u64) -> Result<AdmissibilityReport> {
    check_level(alpha, n)?;
    if tree.mode() != TreeMode::TwoSided {
        return Err(Error::InvalidState("the harness needs a two-sided tree".into()));
    }
    let (a, big) = (level_scale(alpha, n), level_scale(alpha, n - 1));
    let mut rng = stream_rng(seed, n as u64);
    let centers = tree.ball_indices(tree.root().index(), 2.0 * big);
    let mut cache: HashMap<usize, bool> = HashMap::new();
    let mut report = AdmissibilityReport { alpha, n, instances: 0, rejected: 0, min_sum: None, violations: 0 };
    let mut attempts = 0usize;
    while report.instances < trials && attempts < 20 * trials.max(1) {
        attempts += 1;
        let y = centers[rng.random_range(0..centers.len())];
        let x0 = random_in_ball(tree, y, big + 3.0 * a, &mut rng);
        let far: Vec<usize> = tree
            .ball_indices(y, 3.0 * big)
            .into_iter()
            .filter(|&w| tree.dist_idx(y, w) >= 2.0 * big)
            .collect();
        if far.is_empty() {
            report.rejected += 1;
            continue;
        }
        let w = far[rng.random_range(0..far.len())];
        let chain = match random_chain(tree, x0, w, 5.0 * a, 1.4 * a, &mut rng) {
            Ok(c) => c,
            Err(Error::OutOfRange { .. }) => {
                report.rejected += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if !chain_is_valid(tree, y, &chain, alpha, n) {
            report.rejected += 1;
            continue;
        }
        let mut sum = 0.0;
        let mut unsafe_query = false;
        for &u in &chain {
            let e = match cache.get(&u) {
                Some(&e) => e,
                None => match detect_event_e(tree, tree.point(u)?, n, alpha) {
                    Ok(e) => {
                        cache.insert(u, e);
                        e
                    }
                    Err(Error::OutOfRange { .. }) => {
                        unsafe_query = true;
                        break;
                    }
                    Err(e) => return Err(e),
                },
            };
            if e {
                sum += 32.0 * alpha;
            }
        }
        if unsafe_query {
            report.rejected += 1;
            continue;
        }
        report.instances += 1;
        report.min_sum = Some(report.min_sum.map_or(sum, |m: f64| m.min(sum)));
        if sum < 1.0 {
            report.violations += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCheck {
    pub pairs: usize,
    pub violations: usize,
    pub skipped: usize,
}

/// `varrho(x, n) <= varsigma(x', n)` for random table points `x` and grid
/// points `x'` with `d(x, x') <= 2 alpha^n`.
pub fn comparison_harness(tree: &ContourTree, table: &WeightTable, n: usize, pairs: usize, seed: u64) -> Result<PairCheck> {
    let r = 2.0 * level_scale(table.alpha, n);
    let mut rng = stream_rng(seed, 1000 + n as u64);
    let mut out = PairCheck::default();
    for _ in 0..pairs {
        let i = rng.random_range(0..table.points.len());
        let x = table.points[i].index();
        let near: Vec<usize> = tree.ball_indices(x, r * (1.0 + 1e-12)).into_iter().filter(|&u| tree.dist_idx(x, u) <= r).collect();
        let xp = near[rng.random_range(0..near.len())];
        match detect_event_e_tilde(tree, tree.point(xp)?, n, table.alpha) {
            Ok(et) => {
                let varsigma = table.eta + if et { 64.0 * table.alpha } else { 0.0 };
                out.pairs += 1;
                if table.get(i, n).varrho > varsigma {
                    out.violations += 1;
                }
            }
            Err(Error::OutOfRange { .. }) => out.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// `E(x', n)` with `d(x, x') <= 28 alpha^n` forces `E~(x, n)`.
pub fn robustness_harness(tree: &ContourTree, points: &[TreePoint], alpha: f64, n: usize, pairs: usize, seed: u64) -> Result<PairCheck> {
    check_level(alpha, n)?;
    let r = 28.0 * level_scale(alpha, n);
    let mut rng = stream_rng(seed, 2000 + n as u64);
    let mut out = PairCheck::default();
    for _ in 0..pairs {
        let x = points[rng.random_range(0..points.len())];
        let xp = random_in_ball(tree, x.index(), r, &mut rng);
        let both = detect_event_e(tree, tree.point(xp)?, n, alpha)
            .and_then(|e| Ok((e, detect_event_e_tilde(tree, x, n, alpha)?)));
        match both {
            Ok((e, et)) => {
                out.pairs += 1;
                if e && !et {
                    out.violations += 1;
                }
            }
            Err(Error::OutOfRange { .. }) => out.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Subtrees grafted on the spine near the root, reduced to what the events
/// at the root need: attach height and diameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RootSpine {
    pub alpha: f64,
    pub n_max: usize,
    /// `(attach, diameter)`, sorted by attach.
    pub atoms: Vec<(f64, f64)>,
}

impl RootSpine {
    /// Exact closure diameters of explicit atoms.
    pub fn from_atoms(alpha: f64, n_max: usize, atoms: &[ForestAtom]) -> Result<Self> {
        let mut out: Vec<(f64, f64)> = atoms
            .iter()
            .map(|a| {
                let t = ContourTree::finite(&a.excursion)?;
                Ok((a.attach, t.interval_diameter(0, t.len() - 1)?))
            })
            .collect::<Result<_>>()?;
        out.sort_by(|p, q| p.0.total_cmp(&q.0));
        Ok(RootSpine { alpha, n_max, atoms: out })
    }

    /// One draw of the grafting process seen from the root. Spine band
    /// `(32 alpha^(j+1), 32 alpha^j]` keeps excursions longer than
    /// `(alpha^(j-1) / (4 resolution))^2`, fine enough for every level that
    /// looks at it; the innermost band reaches down to 0.
    pub fn sample<R: Rng + ?Sized>(alpha: f64, n_max: usize, resolution: f64, steps: usize, rng: &mut R) -> Result<Self> {
        check_level(alpha, n_max.max(1))?;
        if !(resolution >= 1.0) || steps < 2 {
            return Err(Error::invalid("resolution must be >= 1 and shapes need >= 2 steps"));
        }
        let mut atoms = Vec::new();
        for j in 1..=n_max {
            let hi = 32.0 * level_scale(alpha, j);
            let lo = if j == n_max { 0.0 } else { 32.0 * level_scale(alpha, j + 1) };
            let thr = event_threshold(alpha, j);
            let a_min = (thr / resolution).powi(2);
            let ito = ItoParams { a_min, a_max: ItoParams::DEFAULT_CAP_FACTOR * a_min, grid: ShapeGrid::Steps(steps) }.validated()?;
            let mean = 2.0 * (hi - lo) * crate::excursion::ito_duration_tail(a_min);
            let count = Poisson::new(mean).map_err(|e| Error::invalid(e.to_string()))?.sample(rng) as usize;
            for _ in 0..count {
                let attach = lo + (hi - lo) * rng.random::<f64>();
                let shape = ito.sample(rng);
                let height = shape.max_value();
                // Diameters below the finest threshold that sees this band never matter.
                let diameter = if 2.0 * height < thr {
                    height
                } else {
                    let t = ContourTree::finite(&shape)?;
                    t.interval_diameter(0, t.len() - 1)?
                };
                atoms.push((attach, diameter));
            }
        }
        atoms.sort_by(|p, q| p.0.total_cmp(&q.0));
        Ok(RootSpine { alpha, n_max, atoms })
    }

    /// Some atom attached within `len` of the root reaches diameter `threshold`.
    pub fn has_branch(&self, len: f64, threshold: f64) -> bool {
        self.atoms.iter().take_while(|a| a.0 <= len).any(|a| a.1 >= threshold)
    }

    pub fn e(&self, n: usize) -> bool {
        self.has_branch(4.0 * level_scale(self.alpha, n), event_threshold(self.alpha, n))
    }

    pub fn e_tilde(&self, n: usize) -> bool {
        self.has_branch(32.0 * level_scale(self.alpha, n), event_threshold(self.alpha, n))
    }

    /// `log varpi(o, n)` for `n = 0..=n_max`.
    pub fn log_varpi(&self, eta: f64) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for n in 1..=self.n_max {
            acc += (eta + if self.e_tilde(n) { 64.0 * self.alpha } else { 0.0 }).ln();
            out.push(acc);
        }
        out
    }
}
