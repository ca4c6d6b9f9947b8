//! The deformed metric on a finite carrier.
//!
//! A containment quasi-metric `q(a, b)` is the smallest `pi(x, n)` over
//! filling vertices whose `2 alpha^n` ball holds both points; the deformed
//! metric is the largest metric below `q`, found by shortest paths.
//! Products are kept as logarithms.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::excursion::stream_rng;
use crate::nets::{FillingGraph, NetHierarchy};
use crate::tree::ContourTree;
use crate::weights::{FillingWeights, WeightTable};

const MAGIC: &[u8; 4] = b"CRTM";

/// Carrier positions inside the `2 alpha^n` ball of every filling vertex.
fn members(tree: &ContourTree, nets: &NetHierarchy, graph: &FillingGraph) -> Vec<Vec<usize>> {
    graph
        .vertices
        .par_iter()
        .map(|&(n, i)| {
            let x = nets.point(n, i).index();
            let r = 2.0 * nets.radius(n);
            (0..nets.carrier.len()).filter(|&c| tree.dist_idx(x, nets.carrier[c].index()) < r).collect()
        })
        .collect()
}

/// `log q(a, b)` for carrier positions, by direct scan over all vertices.
pub fn quasimetric(
    tree: &ContourTree,
    nets: &NetHierarchy,
    graph: &FillingGraph,
    weights: &FillingWeights,
    a: usize,
    b: usize,
) -> Result<f64> {
    let (ua, ub) = (nets.carrier[a].index(), nets.carrier[b].index());
    let mut best = f64::INFINITY;
    for (v, &(n, i)) in graph.vertices.iter().enumerate() {
        let x = nets.point(n, i).index();
        let r = 2.0 * nets.radius(n);
        if tree.dist_idx(x, ua) < r && tree.dist_idx(x, ub) < r {
            best = best.min(weights.vertices[v].log_pi);
        }
    }
    if best.is_infinite() {
        return Err(Error::InvariantViolation(format!("no filling vertex contains carrier points {a} and {b}")));
    }
    Ok(best)
}

/// Row-major `log q` over the whole carrier.
pub fn quasimetric_table(
    tree: &ContourTree,
    nets: &NetHierarchy,
    graph: &FillingGraph,
    weights: &FillingWeights,
) -> Result<Vec<f64>> {
    let n = nets.carrier.len();
    let mem = members(tree, nets, graph);
    let mut of_point: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (v, m) in mem.iter().enumerate() {
        for &c in m {
            of_point[c].push(v);
        }
    }
    let mut q = vec![f64::INFINITY; n * n];
    q.par_chunks_mut(n).enumerate().for_each(|(a, row)| {
        for &v in &of_point[a] {
            let lp = weights.vertices[v].log_pi;
            for &b in &mem[v] {
                if lp < row[b] {
                    row[b] = lp;
                }
            }
        }
    });
    if let Some(k) = q.iter().position(|v| v.is_infinite()) {
        return Err(Error::InvariantViolation(format!(
            "no filling vertex contains carrier points {} and {}",
            k / n,
            k % n
        )));
    }
    Ok(q)
}

#[derive(Debug, Clone)]
pub struct ChainMetricTable {
    pub size: usize,
    /// Row-major `log q`.
    pub log_q: Vec<f64>,
    /// Common log scale: true distance = `d * exp(log_unit)`.
    pub log_unit: f64,
    d: Vec<f64>,
}

impl ChainMetricTable {
    /// Deformed distance in units of `exp(log_unit)`.
    #[inline]
    pub fn d(&self, a: usize, b: usize) -> f64 {
        self.d[a * self.size + b]
    }

    pub fn log_d(&self, a: usize, b: usize) -> f64 {
        self.d(a, b).ln() + self.log_unit
    }

    pub fn scaled(&self) -> &[f64] {
        &self.d
    }

    pub fn diameter(&self) -> f64 {
        self.d.iter().copied().fold(0.0, f64::max)
    }

    /// Largest deformed distance among carrier points within `r` of `center`.
    pub fn ball_diameter(&self, tree: &ContourTree, carrier: &[crate::TreePoint], center: usize, r: f64) -> f64 {
        let c = carrier[center].index();
        let inside: Vec<usize> = (0..self.size).filter(|&i| tree.dist_idx(c, carrier[i].index()) < r).collect();
        let mut best: f64 = 0.0;
        for (k, &i) in inside.iter().enumerate() {
            for &j in &inside[k + 1..] {
                best = best.max(self.d(i, j));
            }
        }
        best
    }

    /// Binary matrix `CRTM | n u64 | n*n f64`, true (unscaled) values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.size as u64).to_le_bytes())?;
        let scale = self.log_unit.exp();
        let mut buf = Vec::with_capacity(8 * self.d.len());
        for v in &self.d {
            buf.extend_from_slice(&(v * scale).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_matrix(bytes: &[u8]) -> Result<(usize, Vec<f64>)> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic, expected CRTM".into()));
        }
        let n = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body = &bytes[12..];
        if body.len() != 8 * n * n {
            return Err(Error::Format(format!("matrix body has {} bytes, expected {}", body.len(), 8 * n * n)));
        }
        Ok((n, body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()))
    }
}

/// Largest metric dominated by `q`: all-pairs shortest paths over the
/// complete graph with edge weights `q(a, b)`, diagonal forced to zero.
pub fn chain_metrize(size: usize, log_q: Vec<f64>) -> Result<ChainMetricTable> {
    if log_q.len() != size * size {
        return Err(Error::invalid("q table is not square"));
    }
    for a in 0..size {
        for b in 0..a {
            if log_q[a * size + b] != log_q[b * size + a] {
                return Err(Error::invalid(format!("q is not symmetric at ({a}, {b})")));
            }
        }
    }
    let log_unit = (0..size * size)
        .filter(|k| k / size != k % size)
        .map(|k| log_q[k])
        .fold(f64::INFINITY, f64::min);
    let log_unit = if log_unit.is_finite() { log_unit } else { 0.0 };
    let mut d: Vec<f64> = log_q.iter().map(|l| (l - log_unit).exp()).collect();
    for a in 0..size {
        d[a * size + a] = 0.0;
    }
    floyd_warshall(&mut d, size);
    Ok(ChainMetricTable { size, log_q, log_unit, d })
}

fn floyd_warshall(d: &mut [f64], n: usize) {
    let mut row_k = vec![0.0; n];
    for k in 0..n {
        row_k.copy_from_slice(&d[k * n..(k + 1) * n]);
        d.par_chunks_mut(n).for_each(|row| {
            let dik = row[k];
            for (x, &y) in row.iter_mut().zip(&row_k) {
                let via = dik + y;
                if via < *x {
                    *x = via;
                }
            }
        });
    }
}

/// Per filling vertex, `log prod_{j<=n} varrho(x, j)`.
#[derive(Debug, Clone)]
pub struct DiamBoundTable {
    pub log_bound: Vec<f64>,
}

pub fn diam_bounds(weights: &WeightTable, nets: &NetHierarchy, graph: &FillingGraph) -> DiamBoundTable {
    let log_bound = graph
        .vertices
        .iter()
        .map(|&(n, i)| {
            let c = nets.levels[n].points[i];
            (1..=n).map(|j| weights.get(c, j).varrho.ln()).sum()
        })
        .collect();
    DiamBoundTable { log_bound }
}

/// Numerically stable `log sum exp`.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log sum_{x in A_n} prod_{j<=n} varrho(x, j)^p`.
pub fn main_sum(weights: &WeightTable, nets: &NetHierarchy, n: usize, p: f64) -> Result<f64> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::invalid(format!("p must lie in (1, 2), got {p}")));
    }
    if n > nets.n_max() || n > weights.n_max {
        return Err(Error::invalid(format!("level {n} is not built")));
    }
    Ok(log_sum_exp(nets.levels[n].points.iter().map(|&c| {
        p * (1..=n).map(|j| weights.get(c, j).varrho.ln()).sum::<f64>()
    })))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QsBin {
    /// Input ratio range `[lo, hi)`.
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub max_output: f64,
    /// Running maximum over this and all lower bins.
    pub envelope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QsReport {
    pub bins: Vec<QsBin>,
    pub triples: usize,
    pub skipped: usize,
    pub all_finite: bool,
}

/// Samples carrier triples `(x, y, z)` and tabulates, per dyadic bin of
/// `d(x, z) / d(y, z)`, the largest `D(x, z) / D(y, z)`.
pub fn quasisymmetry_probe(
    tree: &ContourTree,
    carrier: &[crate::TreePoint],
    table: &ChainMetricTable,
    trials: usize,
    seed: u64,
) -> QsReport {
    const K: i32 = 12;
    let mut bins: Vec<QsBin> = (-K..K)
        .map(|k| QsBin {
            lo: 2f64.powi(k),
            hi: 2f64.powi(k + 1),
            count: 0,
            max_output: 0.0,
            envelope: 0.0,
        })
        .collect();
    bins[0].lo = 0.0;
    bins.last_mut().expect("bins").hi = f64::INFINITY;
    let n = table.size;
    let mut rng = stream_rng(seed, 0);
    let mut report = QsReport { bins: Vec::new(), triples: 0, skipped: 0, all_finite: true };
    let tol = tree.tol_eq();
    for _ in 0..trials {
        let (x, y, z) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n));
        let d = |a: usize, b: usize| tree.dist_idx(carrier[a].index(), carrier[b].index());
        let (dyz, dxz) = (d(y, z), d(x, z));
        if dyz <= tol || y == z {
            report.skipped += 1;
            continue;
        }
        let input = if x == y { 1.0 } else { dxz / dyz };
        let output = if x == y { 1.0 } else { table.d(x, z) / table.d(y, z) };
        if !output.is_finite() {
            report.all_finite = false;
        }
        let k = ((input.log2().floor() as i32).clamp(-K, K - 1) + K) as usize;
        let bin = &mut bins[k];
        bin.count += 1;
        bin.max_output = bin.max_output.max(output);
        report.triples += 1;
    }
    let mut run: f64 = 0.0;
    for b in &mut bins {
        run = run.max(b.max_output);
        b.envelope = run;
    }
    report.bins = bins;
    report
}
