//! Box-counting dimension from greedy net counts.

use crate::error::{Error, Result};
use crate::stats::ols;
use crate::tree::ContourTree;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxDimension {
    pub slope: f64,
    pub intercept: f64,
    pub scales: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn check_scales(scales: &[f64]) -> Result<()> {
    if scales.len() < 3 {
        return Err(Error::invalid("need at least three scales"));
    }
    if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::invalid("scales must be positive and finite"));
    }
    let mut sorted = scales.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("scales must be distinct"));
    }
    if sorted[sorted.len() - 1] / sorted[0] < 4.0 {
        return Err(Error::invalid("scales must span at least two octaves"));
    }
    Ok(())
}

/// Least-squares slope of `log N(eps)` against `log(1 / eps)`.
pub fn fit_dimension(scales: &[f64], counts: &[usize]) -> Result<BoxDimension> {
    check_scales(scales)?;
    let xs: Vec<f64> = scales.iter().map(|s| -s.ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    let fit = ols(&xs, &ys)?;
    Ok(BoxDimension { slope: fit.slope, intercept: fit.intercept, scales: scales.to_vec(), counts: counts.to_vec() })
}

/// Size of a greedy maximal `eps`-separated subset of `0..n` under `dist`,
/// scanning in index order.
pub fn greedy_net_count(n: usize, dist: impl Fn(usize, usize) -> f64, eps: f64) -> usize {
    let mut centers: Vec<usize> = Vec::new();
    for i in 0..n {
        if centers.iter().all(|&c| dist(i, c) >= eps) {
            centers.push(i);
        }
    }
    centers.len()
}

pub fn box_dimension_matrix(n: usize, dist: impl Fn(usize, usize) -> f64 + Sync, scales: &[f64]) -> Result<BoxDimension> {
    check_scales(scales)?;
    let counts: Vec<usize> = scales.iter().map(|&e| greedy_net_count(n, &dist, e)).collect();
    fit_dimension(scales, &counts)
}

/// Greedy net count over every grid time of the tree; each new center
/// claims its open `eps` ball.
pub fn tree_net_count(tree: &ContourTree, eps: f64) -> usize {
    let mut covered = vec![false; tree.len()];
    let mut count = 0;
    for i in 0..tree.len() {
        if !covered[i] {
            count += 1;
            tree.for_each_in_ball(i, eps, |u| covered[u] = true);
        }
    }
    count
}

pub fn box_dimension_tree(tree: &ContourTree, scales: &[f64]) -> Result<BoxDimension> {
    check_scales(scales)?;
    let counts: Vec<usize> = scales.iter().map(|&e| tree_net_count(tree, e)).collect();
    fit_dimension(scales, &counts)
}
