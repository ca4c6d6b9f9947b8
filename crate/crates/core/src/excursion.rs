//! Random contour functions: normalized excursions, BES(3) pairs, Itô
//! excursions and Poisson forests grafted on a spine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::path::{PathGrid, PathKind};

/// Independent stream `stream` of the generator keyed by `master`.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// Standard normal scaled by `sd`.
#[inline]
fn gauss<R: Rng + ?Sized>(rng: &mut R, sd: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * sd
}

/// Values of a normalized excursion on `m` equal steps of `[0, 1]`.
///
/// A Brownian bridge is built from a random walk with exact Gaussian
/// increments, then cyclically shifted so that its minimum sits at time 0.
pub fn excursion_values<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    debug_assert!(m >= 2);
    let sd = (1.0 / m as f64).sqrt();
    loop {
        let mut w = Vec::with_capacity(m + 1);
        w.push(0.0);
        let mut acc = 0.0;
        for _ in 0..m {
            acc += gauss(rng, sd);
            w.push(acc);
        }
        let end = w[m];
        let bridge: Vec<f64> = (0..m).map(|i| w[i] - end * i as f64 / m as f64).collect();
        let (k, low) = bridge
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best });
        let mut out = Vec::with_capacity(m + 1);
        for i in 0..m {
            out.push(bridge[(i + k) % m] - low);
        }
        out.push(0.0);
        // A tied minimum would pin an interior value to 0; redraw.
        if out[1..m].iter().all(|v| *v > 0.0) {
            return out;
        }
    }
}

pub fn sample_normalized_excursion(m: usize, seed: u64) -> Result<PathGrid> {
    if m < 2 {
        return Err(Error::invalid(format!("excursion needs m >= 2 steps, got {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = excursion_values(m, &mut rng);
    PathGrid::new(PathKind::Excursion, 0.0, 1.0 / m as f64, values)
}

fn bes3_values<R: Rng + ?Sized>(step: f64, m: usize, rng: &mut R) -> Vec<f64> {
    let sd = step.sqrt();
    let mut p = [0.0f64; 3];
    let mut out = Vec::with_capacity(m + 1);
    out.push(0.0);
    for _ in 0..m {
        for c in &mut p {
            *c += gauss(rng, sd);
        }
        out.push((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
    }
    out
}

/// Two independent BES(3) paths from 0 on `[0, horizon]`, `m` steps each.
pub fn sample_bes3_pair(horizon: f64, m: usize, seed: u64) -> Result<(PathGrid, PathGrid)> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    if m < 2 {
        return Err(Error::invalid(format!("need m >= 2 steps, got {m}")));
    }
    let step = horizon / m as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = bes3_values(step, m, &mut rng);
    let b = bes3_values(step, m, &mut rng);
    Ok((
        PathGrid::new(PathKind::Bes3PairHalf, 0.0, step, a)?,
        PathGrid::new(PathKind::Bes3PairHalf, 0.0, step, b)?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerootedPair {
    pub forward: PathGrid,
    pub backward: PathGrid,
    pub pivot: f64,
}

/// Re-roots the two-sided contour `(R, R~)` at forward time `t`.
///
/// `t` is snapped to the nearest grid index, which must be strictly inside
/// the forward path. Tail infima beyond the horizon are taken over the
/// sampled part only.
pub fn reroot_transform(pair: (&PathGrid, &PathGrid), t: f64) -> Result<RerootedPair> {
    let (r, rt) = pair;
    if r.step() != rt.step() {
        return Err(Error::invalid("both paths must share one grid step"));
    }
    let step = r.step();
    let pos = t / step;
    let k = pos.round();
    if !(t > 0.0) || (pos - k).abs() > 1e-6 || k < 1.0 || k as usize + 1 >= r.len() {
        return Err(Error::invalid(format!(
            "pivot {t} is not an interior grid time of a path with horizon {}",
            r.horizon()
        )));
    }
    let k = k as usize;
    let rv = r.values();
    let rtv = rt.values();
    let rk = rv[k];

    let mut forward = Vec::with_capacity(rv.len() - k);
    let mut run = rk;
    for &v in &rv[k..] {
        run = run.min(v);
        forward.push(rk + v - 2.0 * run);
    }

    let mut backward = Vec::with_capacity(k + rtv.len());
    let mut run = rk;
    for s in 0..=k {
        let v = rv[k - s];
        run = run.min(v);
        backward.push(rk + v - 2.0 * run);
    }
    let tail_r = rv[k..].iter().copied().fold(f64::INFINITY, f64::min);
    let mut tail_rt = vec![0.0; rtv.len()];
    let mut acc = f64::INFINITY;
    for i in (0..rtv.len()).rev() {
        acc = acc.min(rtv[i]);
        tail_rt[i] = acc;
    }
    for j in 1..rtv.len() {
        let low = tail_r.min(tail_rt[j]);
        backward.push((rk + rtv[j] - 2.0 * low).max(0.0));
    }
    // Round-off can leave -0.0 style residue; the formula is exact at s = 0.
    forward[0] = 0.0;
    backward[0] = 0.0;
    for v in forward.iter_mut().chain(backward.iter_mut()) {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(RerootedPair {
        forward: PathGrid::new(r.kind(), 0.0, step, forward)?,
        backward: PathGrid::new(rt.kind(), 0.0, step, backward)?,
        pivot: k as f64 * step,
    })
}

/// Excursion-measure mass of durations exceeding `a`.
pub fn ito_duration_tail(a: f64) -> f64 {
    1.0 / (2.0 * std::f64::consts::PI * a).sqrt()
}

/// Excursion-measure mass of heights exceeding `r`.
pub fn ito_height_tail(r: f64) -> f64 {
    1.0 / (2.0 * r)
}

/// How an Itô excursion is laid on a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeGrid {
    /// Every excursion gets this many steps regardless of its duration.
    Steps(usize),
    /// Shared time step; the step count follows the duration.
    Step(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItoParams {
    pub a_min: f64,
    pub a_max: f64,
    pub grid: ShapeGrid,
}

impl ItoParams {
    pub const DEFAULT_CAP_FACTOR: f64 = 1e4;
    pub const DEFAULT_STEPS: usize = 64;

    pub fn new(a_min: f64) -> Result<Self> {
        Self {
            a_min,
            a_max: Self::DEFAULT_CAP_FACTOR * a_min,
            grid: ShapeGrid::Steps(Self::DEFAULT_STEPS),
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.a_min > 0.0 && self.a_min.is_finite()) {
            return Err(Error::invalid(format!("a_min must be positive, got {}", self.a_min)));
        }
        if !(self.a_max >= self.a_min) {
            return Err(Error::invalid("a_max must be at least a_min"));
        }
        match self.grid {
            ShapeGrid::Steps(m) if m < 2 => Err(Error::invalid("shape needs at least 2 steps")),
            ShapeGrid::Step(h) if !(h > 0.0 && 2.0 * h <= self.a_min) => {
                Err(Error::invalid("shape step must be positive and at most a_min / 2"))
            }
            _ => Ok(self),
        }
    }

    /// Share of the duration-truncated measure lying above the cap.
    pub fn capped_mass_fraction(&self) -> f64 {
        (self.a_min / self.a_max).sqrt()
    }

    /// Duration from the `a^{-3/2}` law on `[a_min, inf)`, clipped at `a_max`.
    pub fn sample_duration<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = 1.0 - rng.random::<f64>();
        (self.a_min / (u * u)).min(self.a_max)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PathGrid {
        let a = self.sample_duration(rng);
        let (m, step) = match self.grid {
            ShapeGrid::Steps(m) => (m, a / m as f64),
            ShapeGrid::Step(h) => {
                let m = ((a / h).round() as usize).max(2);
                (m, h)
            }
        };
        let scale = (m as f64 * step).sqrt();
        let values = excursion_values(m, rng).into_iter().map(|v| v * scale).collect();
        PathGrid::new(PathKind::Excursion, 0.0, step, values).expect("scaled excursion is valid")
    }
}

pub fn sample_ito_excursion(a_min: f64, seed: u64) -> Result<PathGrid> {
    let params = ItoParams::new(a_min)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(params.sample(&mut rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestAtom {
    pub attach: f64,
    pub excursion: PathGrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub length: f64,
    pub ito: ItoParams,
}

impl ForestParams {
    /// Forest on a spine of `length` drawn on a grid of `step`, keeping
    /// excursions longer than four steps and capping durations at `a_max`.
    pub fn on_grid(length: f64, step: f64, a_max: f64) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::invalid(format!("spine length must be positive, got {length}")));
        }
        let ito = ItoParams { a_min: 4.0 * step, a_max: a_max.max(4.0 * step), grid: ShapeGrid::Step(step) }
            .validated()?;
        Ok(ForestParams { length, ito })
    }

    /// Expected number of atoms on the whole spine.
    pub fn mean_count(&self) -> f64 {
        2.0 * self.length * ito_duration_tail(self.ito.a_min)
    }
}

/// Atoms of a Poisson process with intensity `2N (x) dt` on `[0, length]`,
/// restricted to durations above `a_min`. Sorted by attach time.
pub fn spine_ppp_forest<R: Rng + ?Sized>(params: &ForestParams, rng: &mut R) -> Vec<ForestAtom> {
    let mean = params.mean_count();
    let count = if mean > 0.0 {
        Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0)
    } else {
        0
    };
    let mut atoms: Vec<ForestAtom> = (0..count)
        .map(|_| {
            let attach = rng.random::<f64>() * params.length;
            ForestAtom { attach, excursion: params.ito.sample(rng) }
        })
        .collect();
    atoms.sort_by(|a, b| a.attach.total_cmp(&b.attach));
    atoms
}

/// Seeded convenience wrapper.
pub fn spine_ppp_forest_seeded(length: f64, a_min: f64, seed: u64) -> Result<Vec<ForestAtom>> {
    if !(length > 0.0) {
        return Err(Error::invalid(format!("spine length must be positive, got {length}")));
    }
    let params = ForestParams { length, ito: ItoParams::new(a_min)? };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(spine_ppp_forest(&params, &mut rng))
}

/// Contour of one side of a spine carrying `atoms` (sorted by attach).
///
/// Between atoms the spine is climbed in increments of at most `sqrt(step)`,
/// and the contour ends at the spine top `length`.
pub fn spine_contour(atoms: &[ForestAtom], length: f64, step: f64) -> Result<PathGrid> {
    let rise = step.sqrt();
    let mut values = vec![0.0];
    let mut level = 0.0;
    let climb = |values: &mut Vec<f64>, from: f64, to: f64| {
        if to > from {
            let k = ((to - from) / rise).ceil().max(1.0) as usize;
            for i in 1..k {
                values.push(from + (to - from) * i as f64 / k as f64);
            }
            values.push(to);
        }
    };
    for atom in atoms {
        if atom.excursion.step() != step {
            return Err(Error::invalid("forest atoms must share the contour step"));
        }
        climb(&mut values, level, atom.attach);
        level = level.max(atom.attach);
        values.extend(atom.excursion.values()[1..].iter().map(|v| level + v));
    }
    climb(&mut values, level, length);
    PathGrid::new(PathKind::SpineForest, 0.0, step, values)
}

/// Two halves of a spine forest: every atom goes to either side with
/// probability 1/2, so each side carries intensity `N (x) dt`.
pub fn spine_forest_pair<R: Rng + ?Sized>(
    params: &ForestParams,
    rng: &mut R,
) -> Result<(PathGrid, PathGrid)> {
    let step = match params.ito.grid {
        ShapeGrid::Step(h) => h,
        ShapeGrid::Steps(_) => return Err(Error::invalid("forest contours need a shared time step")),
    };
    let atoms = spine_ppp_forest(params, rng);
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for atom in atoms {
        if rng.random::<bool>() {
            right.push(atom);
        } else {
            left.push(atom);
        }
    }
    Ok((
        spine_contour(&left, params.length, step)?,
        spine_contour(&right, params.length, step)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn excursion_has_excursion_boundary() {
        let p = sample_normalized_excursion(8, 1).unwrap();
        let v = p.values();
        assert_eq!(v.len(), 9);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[8], 0.0);
        assert!(v[1..8].iter().all(|x| *x > 0.0));
        assert!(sample_normalized_excursion(1, 1).is_err());
        assert_eq!(sample_normalized_excursion(50, 3).unwrap(), sample_normalized_excursion(50, 3).unwrap());
    }

    #[test]
    fn bes3_starts_at_zero() {
        let (a, b) = sample_bes3_pair(2.0, 100, 5).unwrap();
        assert_eq!(a.values()[0], 0.0);
        assert_eq!(b.values()[0], 0.0);
        assert_ne!(a, b);
        assert!(sample_bes3_pair(0.0, 100, 5).is_err());
    }

    #[test]
    fn reroot_on_monotone_path_is_a_shift() {
        let r = PathGrid::new(PathKind::Bes3PairHalf, 0.0, 1.0, (0..10).map(|i| i as f64).collect()).unwrap();
        let rt = PathGrid::new(PathKind::Bes3PairHalf, 0.0, 1.0, (0..10).map(|i| 0.5 * i as f64).collect()).unwrap();
        let out = reroot_transform((&r, &rt), 3.0).unwrap();
        assert_eq!(out.forward.values()[0], 0.0);
        for (s, v) in out.forward.values().iter().enumerate() {
            assert!((v - s as f64).abs() < 1e-12);
        }
        // s = t lands on R_0; past it, the tail infimum comes from R~.
        let b = out.backward.values();
        assert!((b[3] - 3.0).abs() < 1e-12);
        assert!((b[4] - (3.0 + 0.5 - 2.0 * 0.5)).abs() < 1e-12);
        assert!(reroot_transform((&r, &rt), 0.0).is_err());
        assert!(reroot_transform((&r, &rt), 9.0).is_err());
    }

    #[test]
    fn ito_durations_respect_cutoff_and_cap() {
        let p = ItoParams { a_min: 0.01, a_max: 1.0, grid: ShapeGrid::Steps(8) };
        let mut rng = stream_rng(7, 0);
        for _ in 0..1000 {
            let a = p.sample_duration(&mut rng);
            assert!((0.01..=1.0).contains(&a));
        }
        assert!(sample_ito_excursion(0.0, 1).is_err());
        let e = sample_ito_excursion(0.5, 2).unwrap();
        assert!(e.horizon() >= 0.5 - 1e-12);
    }

    #[test]
    fn forest_contour_climbs_to_the_top() {
        let params = ForestParams::on_grid(2.0, 1e-3, 1.0).unwrap();
        let mut rng = stream_rng(11, 3);
        let (l, r) = spine_forest_pair(&params, &mut rng).unwrap();
        for half in [&l, &r] {
            let v = half.values();
            assert_eq!(v[0], 0.0);
            assert!((v[v.len() - 1] - 2.0).abs() < 1e-12);
            assert!(half.max_increment() < 0.5);
        }
    }
}
