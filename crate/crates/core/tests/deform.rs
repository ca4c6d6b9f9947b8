use crt_filling::deform::{self, chain_metrize, ChainMetricTable};
use crt_filling::excursion::stream_rng;
use crt_filling::experiments::{self, bes3_tree};
use crt_filling::nets::{self, build_filling_graph, build_nested_nets, FillingGraph, NetHierarchy, NetOrder};
use crt_filling::weights::{self, FillingWeights, TildePolicy, WeightTable};
use crt_filling::{ContourTree, Error};
use rand::Rng;

struct Built {
    tree: ContourTree,
    nets: NetHierarchy,
    graph: FillingGraph,
    table: WeightTable,
    filling: FillingWeights,
}

fn build(seed: u64, cap: usize, alpha: f64, eta: f64, n_max: usize, null: bool) -> Built {
    let tree = bes3_tree(32.0, 1 << 14, seed).unwrap();
    let carrier = nets::ball_carrier(&tree, 1.0, cap, seed).unwrap();
    let nets = build_nested_nets(&tree, &carrier, alpha, n_max, NetOrder::Shuffled(seed)).unwrap();
    let graph = build_filling_graph(&tree, &nets);
    let table = if null {
        weights::null_weights(&carrier, n_max, alpha, eta)
    } else {
        weights::weights_for(&tree, &carrier, n_max, alpha, eta, TildePolicy::Skip).unwrap()
    };
    let filling = weights::filling_machinery(&tree, &nets, &graph, &table, eta).unwrap();
    Built { tree, nets, graph, table, filling }
}

/// Deepest level with a vertex whose `2 alpha^n` ball holds both points.
fn deepest_common_level(b: &Built, a: usize, c: usize) -> usize {
    let (ua, uc) = (b.nets.carrier[a], b.nets.carrier[c]);
    b.graph
        .vertices
        .iter()
        .filter(|&&(n, i)| {
            let x = b.nets.point(n, i);
            let r = 2.0 * b.nets.radius(n);
            b.tree.dist(x, ua).unwrap() < r && b.tree.dist(x, uc).unwrap() < r
        })
        .map(|&(n, _)| n)
        .max()
        .unwrap()
}

#[test]
fn quasimetric_table_matches_exhaustive_scan() {
    let b = build(1, 32, 0.3, 0.027, 4, false);
    assert_eq!(b.nets.carrier.len(), 32);
    let q = deform::quasimetric_table(&b.tree, &b.nets, &b.graph, &b.filling).unwrap();
    for a in 0..32 {
        for c in 0..32 {
            let mut want = f64::INFINITY;
            for (v, &(n, i)) in b.graph.vertices.iter().enumerate() {
                let x = b.nets.point(n, i);
                let r = 2.0 * b.nets.radius(n);
                if b.tree.dist(x, b.nets.carrier[a]).unwrap() < r && b.tree.dist(x, b.nets.carrier[c]).unwrap() < r {
                    want = want.min(b.filling.vertices[v].log_pi);
                }
            }
            assert_eq!(q[a * 32 + c], want);
            assert_eq!(deform::quasimetric(&b.tree, &b.nets, &b.graph, &b.filling, a, c).unwrap(), want);
        }
    }
}

#[test]
fn null_weights_give_powers_of_eta() {
    let eta = 0.3;
    let b = build(2, 60, 0.3, eta, 4, true);
    let q = deform::quasimetric_table(&b.tree, &b.nets, &b.graph, &b.filling).unwrap();
    let n = b.nets.carrier.len();
    for a in 0..n {
        for c in 0..n {
            let depth = deepest_common_level(&b, a, c);
            assert!((q[a * n + c] - depth as f64 * eta.ln()).abs() < 1e-9);
        }
    }
    // With eta = alpha, q orders pairs exactly as containment depth does.
    for a in 0..n {
        assert_eq!(q[a * n + a], (0..n).map(|c| q[a * n + c]).fold(f64::INFINITY, f64::min));
    }
}

#[test]
fn refining_never_increases_q() {
    let coarse = build(3, 80, 0.3, 0.027, 3, false);
    let fine = build(3, 80, 0.3, 0.027, 4, false);
    assert_eq!(coarse.nets.levels[..], fine.nets.levels[..4]);
    let qc = deform::quasimetric_table(&coarse.tree, &coarse.nets, &coarse.graph, &coarse.filling).unwrap();
    let qf = deform::quasimetric_table(&fine.tree, &fine.nets, &fine.graph, &fine.filling).unwrap();
    assert!(qf.iter().zip(&qc).all(|(f, c)| f <= c));
}

fn random_log_q(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    let mut q = vec![0.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let v: f64 = rng.random_range(0.01..1.0f64).ln();
            q[a * n + b] = v;
            q[b * n + a] = v;
        }
        q[a * n + a] = rng.random_range(0.001..0.01f64).ln();
    }
    q
}

/// Cheapest simple chain from `a` to `b`, by enumerating all of them.
fn cheapest_chain(q: &[f64], n: usize, a: usize, b: usize) -> f64 {
    fn go(q: &[f64], n: usize, at: usize, b: usize, used: &mut Vec<bool>, cost: f64, best: &mut f64) {
        if at == b {
            *best = best.min(cost);
            return;
        }
        for next in 0..n {
            if !used[next] {
                used[next] = true;
                go(q, n, next, b, used, cost + q[at * n + next].exp(), best);
                used[next] = false;
            }
        }
    }
    let mut used = vec![false; n];
    used[a] = true;
    let mut best = f64::INFINITY;
    go(q, n, a, b, &mut used, 0.0, &mut best);
    best
}

#[test]
fn chain_metric_matches_chain_enumeration() {
    for seed in 0..3 {
        let n = 10;
        let log_q = random_log_q(n, seed);
        let t = chain_metrize(n, log_q.clone()).unwrap();
        let unit = t.log_unit.exp();
        for a in 0..n {
            assert_eq!(t.d(a, a), 0.0);
            for b in 0..n {
                if a != b {
                    let want = cheapest_chain(&log_q, n, a, b);
                    assert!((t.d(a, b) * unit - want).abs() <= 1e-12 * want, "{a} {b}");
                }
            }
        }
    }
}

#[test]
fn a_metric_q_is_left_alone() {
    // Points on a line: q(a, b) = |a - b| is already a metric.
    let n = 8;
    let mut log_q = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            log_q[a * n + b] = if a == b { -10.0 } else { ((a as f64 - b as f64).abs()).ln() };
        }
    }
    let t = chain_metrize(n, log_q).unwrap();
    for a in 0..n {
        for b in 0..n {
            if a != b {
                assert!((t.d(a, b) * t.log_unit.exp() - (a as f64 - b as f64).abs()).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn chain_metric_is_a_metric_below_q() {
    let b = build(4, 150, 0.3, 0.027, 4, false);
    let q = deform::quasimetric_table(&b.tree, &b.nets, &b.graph, &b.filling).unwrap();
    let t = chain_metrize(b.nets.carrier.len(), q.clone()).unwrap();
    let n = t.size;
    let d = t.scaled();
    for a in 0..n {
        assert_eq!(d[a * n + a], 0.0);
        for c in 0..n {
            assert_eq!(d[a * n + c], d[c * n + a]);
            if a != c {
                assert!(d[a * n + c] <= (q[a * n + c] - t.log_unit).exp() * (1.0 + 1e-12));
            }
            for e in 0..n {
                assert!(d[a * n + e] <= d[a * n + c] + d[c * n + e] + 1e-12 * d[a * n + e]);
            }
        }
    }
}

#[test]
fn asymmetric_or_ragged_q_is_rejected() {
    let mut q = random_log_q(4, 9);
    q[1] += 0.5;
    assert!(matches!(chain_metrize(4, q), Err(Error::InvalidArgument(_))));
    assert!(chain_metrize(3, vec![0.0; 8]).is_err());
}

#[test]
fn matrix_export_round_trips() {
    let t = chain_metrize(6, random_log_q(6, 5)).unwrap();
    let mut bytes = Vec::new();
    t.write_to(&mut bytes).unwrap();
    assert_eq!(&bytes[..4], b"CRTM");
    let (n, m) = ChainMetricTable::read_matrix(&bytes).unwrap();
    assert_eq!(n, 6);
    for a in 0..6 {
        for b in 0..6 {
            assert_eq!(m[a * 6 + b], t.d(a, b) * t.log_unit.exp());
        }
    }
    assert!(ChainMetricTable::read_matrix(b"CRTX\0\0\0\0\0\0\0\0").is_err());
    assert!(ChainMetricTable::read_matrix(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn diameter_bounds_under_null_and_saturated_weights() {
    let null = build(6, 120, 0.3, 0.027, 3, true);
    let bounds = deform::diam_bounds(&null.table, &null.nets, &null.graph);
    for (v, &(n, _)) in null.graph.vertices.iter().enumerate() {
        assert!((bounds.log_bound[v] - n as f64 * 0.027f64.ln()).abs() < 1e-9);
    }
    let real = build(6, 120, 0.3, 0.027, 3, false);
    let bounds = deform::diam_bounds(&real.table, &real.nets, &real.graph);
    for (v, &(n, i)) in real.graph.vertices.iter().enumerate() {
        let c = real.nets.levels[n].points[i];
        let all_hit = (1..=n).all(|j| real.table.get(c, j).varrho > 0.027);
        if all_hit {
            assert!((bounds.log_bound[v] - n as f64 * (0.027 + 64.0 * 0.3f64).ln()).abs() < 1e-9);
        }
    }
}

/// Largest `log(diam_D(B_{alpha^n}(x)) / bound(x, n))` per level.
fn worst_log_ratio(b: &Built) -> Vec<f64> {
    let q = deform::quasimetric_table(&b.tree, &b.nets, &b.graph, &b.filling).unwrap();
    let t = chain_metrize(b.nets.carrier.len(), q).unwrap();
    let bounds = deform::diam_bounds(&b.table, &b.nets, &b.graph);
    let mut worst = vec![f64::NEG_INFINITY; b.nets.n_max() + 1];
    for (v, &(n, i)) in b.graph.vertices.iter().enumerate() {
        let center = b.nets.levels[n].points[i];
        let diam = t.ball_diameter(&b.tree, &b.nets.carrier, center, b.nets.radius(n));
        if diam > 0.0 {
            worst[n] = worst[n].max(diam.ln() + t.log_unit - bounds.log_bound[v]);
        }
    }
    worst
}

#[test]
fn ball_diameters_stay_within_a_constant_of_the_bound() {
    for null in [true, false] {
        let b = build(7, 400, 0.3, 0.3, 4, null);
        let w = worst_log_ratio(&b);
        let c = w[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(c.is_finite());
        // The constant is unknown; the ratio must not drift upward with n.
        assert!(w[4] <= w[1] + 2f64.ln() + 1e-9, "null={null}: {w:?}");
    }
}

#[test]
fn main_sum_closed_forms() {
    let (alpha, p) = (0.25f64, 1.5);
    let eta = alpha.powi(3);
    let b = build(8, 300, alpha, eta, 4, true);
    assert_eq!(deform::main_sum(&b.table, &b.nets, 0, p).unwrap(), 0.0);
    for n in 1..=4 {
        let count = b.nets.levels[n].points.len() as f64;
        let want = count.ln() + p * n as f64 * eta.ln();
        assert!((deform::main_sum(&b.table, &b.nets, n, p).unwrap() - want).abs() < 1e-9);
        assert!(count >= b.nets.levels[n - 1].points.len() as f64);
    }
    assert!(deform::main_sum(&b.table, &b.nets, 1, 2.0).is_err());
    assert!(deform::main_sum(&b.table, &b.nets, 9, 1.5).is_err());
}

#[test]
fn quasisymmetry_probe_reports_finite_envelopes() {
    let b = build(9, 300, 0.3, 0.3, 4, true);
    let q = deform::quasimetric_table(&b.tree, &b.nets, &b.graph, &b.filling).unwrap();
    let t = chain_metrize(b.nets.carrier.len(), q).unwrap();
    let r = deform::quasisymmetry_probe(&b.tree, &b.nets.carrier, &t, 10_000, 9);
    assert!(r.all_finite);
    assert_eq!(r.triples + r.skipped, 10_000);
    assert!(r.bins.iter().all(|bin| bin.max_output.is_finite()));
    assert!(r.bins.windows(2).all(|w| w[0].envelope <= w[1].envelope));
    let one = r.bins.iter().find(|bin| bin.lo <= 1.0 && 1.0 < bin.hi).unwrap();
    assert!(one.count > 0 && one.max_output >= 1.0);
    // Constant weights give a snowflake: envelope grows like a power of the input.
    let pts: Vec<(f64, f64)> = r
        .bins
        .iter()
        .filter(|bin| bin.count > 0 && bin.lo > 0.0 && bin.hi.is_finite())
        .map(|bin| (bin.lo.ln(), bin.envelope.ln()))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let fit = crt_filling::stats::ols(&xs, &ys).unwrap();
    assert!(fit.slope > 0.0, "{fit:?}");
}

/// Slope of `log main_sum` against `n` at `alpha = 0.25`, `p = 1.5`,
/// `eta = alpha^3`, averaged over 50 trees, must be negative.
#[test]
fn main_sum_slope_is_negative_over_fifty_trees() {
    let (alpha, p) = (0.25f64, 1.5);
    let eta = alpha.powi(3);
    let need = experiments::required_safe_level(alpha);
    let slopes: Vec<f64> = (0..50u64)
        .map(|k| {
            let seed = experiments::replica_seed(31, k);
            let (tree, _) = experiments::bes3_tree_with_level(32.0, 1 << 16, seed, need).unwrap();
            let carrier = nets::ball_carrier(&tree, 1.0, 1500, seed).unwrap();
            let nets = build_nested_nets(&tree, &carrier, alpha, 5, NetOrder::Shuffled(seed)).unwrap();
            let table = weights::weights_for(&tree, &carrier, 5, alpha, eta, TildePolicy::Skip).unwrap();
            let xs: Vec<f64> = (0..=5).map(|n| n as f64).collect();
            let ys: Vec<f64> = (0..=5).map(|n| deform::main_sum(&table, &nets, n, p).unwrap()).collect();
            crt_filling::stats::ols(&xs, &ys).unwrap().slope
        })
        .collect();
    let m = crt_filling::stats::mean_se(&slopes);
    assert!(m.mean < 0.0, "mean slope {} +- {}", m.mean, m.se);
}
