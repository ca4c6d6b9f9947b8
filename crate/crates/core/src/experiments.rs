//! Experiment drivers: configuration, statistical reports, the full
//! pipeline from contour to deformed metric, and run persistence.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::deform::{self, ChainMetricTable};
use crate::dimension::{self, BoxDimension};
use crate::error::{Error, Result};
use crate::excursion::{self, stream_rng, ForestParams, ItoParams};
use crate::nets::{self, FillingGraph, NetHierarchy, NetOrder};
use crate::stats::{self, mean_se, proportion};
use crate::tree::{ContourTree, TreePoint};
use crate::weights::{self, FillingWeights, RootSpine, TildePolicy, WeightTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub alpha: f64,
    /// `eta = alpha^eta_exponent`.
    pub eta_exponent: f64,
    pub p: f64,
    pub zeta: f64,
    /// Grid steps per half of a two-sided tree.
    pub grid_size: usize,
    #[serde(rename = "horizon_T")]
    pub horizon_t: f64,
    pub n_max: usize,
    pub carrier_cap: usize,
    pub replicas: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 0.25,
            eta_exponent: 3.0,
            p: 1.5,
            zeta: 0.5,
            grid_size: 1 << 18,
            horizon_t: 32.0,
            n_max: 5,
            carrier_cap: 1500,
            replicas: 10,
            master_seed: 1,
            output_dir: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn eta(&self) -> f64 {
        self.alpha.powf(self.eta_exponent)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.p > 1.0 && self.p < 2.0) {
            return bad("p must lie in (1, 2)");
        }
        if !(self.zeta > 0.0) {
            return bad("zeta must be positive");
        }
        if !(self.eta_exponent > 0.0 && self.eta() < 0.5) {
            return bad("eta_exponent must be positive with alpha^eta_exponent < 1/2");
        }
        if !(self.horizon_t > 0.0 && self.horizon_t.is_finite()) {
            return bad("horizon_T must be positive");
        }
        if self.master_seed > i64::MAX as u64 {
            return bad("master_seed must fit in a signed 64-bit integer");
        }
        if self.grid_size < 2 || self.n_max < 1 || self.carrier_cap < 1 || self.replicas < 1 {
            return bad("grid_size must be >= 2 and n_max, carrier_cap, replicas >= 1");
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn replica_seed(&self, replica: usize) -> u64 {
        replica_seed(self.master_seed, replica as u64)
    }
}

pub fn replica_seed(master: u64, replica: u64) -> u64 {
    stream_rng(master, replica).random()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// The threshold is a constant stated by the theory.
    Theory,
    /// A finite-sample acceptance knob of this toolkit.
    Tuning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    AtMost,
    AtLeast,
}

impl Rule {
    pub fn holds(self, statistic: f64, threshold: f64) -> bool {
        match self {
            Rule::AtMost => statistic <= threshold,
            Rule::AtLeast => statistic >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub name: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub se: f64,
    /// Quantity compared with the threshold.
    pub statistic: f64,
    pub rule: Rule,
    pub threshold: f64,
    pub provenance: Provenance,
    pub pass: bool,
    pub note: String,
}

impl StatReport {
    pub fn new(
        name: impl Into<String>,
        values: Vec<f64>,
        statistic: f64,
        rule: Rule,
        threshold: f64,
        provenance: Provenance,
        note: impl Into<String>,
    ) -> Self {
        let m = mean_se(&values);
        StatReport {
            name: name.into(),
            values,
            mean: m.mean,
            se: m.se,
            statistic,
            rule,
            threshold,
            provenance,
            pass: rule.holds(statistic, threshold),
            note: note.into(),
        }
    }
}

impl fmt::Display for StatReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.rule {
            Rule::AtMost => "<=",
            Rule::AtLeast => ">=",
        };
        write!(
            f,
            "{} {}: statistic {:.6} {op} {:.6} (mean {:.6}, se {:.6}, n {})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            self.threshold,
            self.mean,
            self.se,
            self.values.len()
        )
    }
}

/// Two-sided tree from a BES(3) pair on `[0, horizon]` per side.
pub fn bes3_tree(horizon: f64, grid_size: usize, seed: u64) -> Result<ContourTree> {
    let (l, r) = excursion::sample_bes3_pair(horizon, grid_size, seed)?;
    ContourTree::two_sided(&l, &r)
}

/// Safe level a replica needs so that every `E(x, n)` query from the unit
/// ball around the root stays inside the trusted range.
pub fn required_safe_level(alpha: f64) -> f64 {
    2.0 + 4.0 * alpha
}

/// BES(3) tree whose safe level reaches `need`. Draws that fall short are
/// replaced by fresh deterministic substreams of `seed`; returns the tree and
/// the number of draws used.
pub fn bes3_tree_with_level(horizon: f64, grid_size: usize, seed: u64, need: f64) -> Result<(ContourTree, usize)> {
    const MAX_DRAWS: usize = 64;
    for k in 0..MAX_DRAWS {
        let s = if k == 0 { seed } else { replica_seed(seed, k as u64) };
        let tree = bes3_tree(horizon, grid_size, s)?;
        if tree.safe_level() >= need {
            return Ok((tree, k + 1));
        }
    }
    Err(Error::InvalidState(format!(
        "no draw in {MAX_DRAWS} reached safe level {need}; increase horizon_T"
    )))
}

/// Two-sided tree from a spine forest of the given length and grid step.
pub fn forest_tree(length: f64, step: f64, a_max: f64, seed: u64) -> Result<ContourTree> {
    let params = ForestParams::on_grid(length, step, a_max)?;
    let (l, r) = excursion::spine_forest_pair(&params, &mut stream_rng(seed, 0))?;
    ContourTree::two_sided(&l, &r)
}

/// Sups of `count` excursions from the duration-truncated Itô measure.
pub fn ito_sups(a_min: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
    let params = ItoParams::new(a_min)?;
    Ok((0..count)
        .into_par_iter()
        .map(|i| params.sample(&mut stream_rng(seed, i as u64)).max_value())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailProfile {
    pub r: Vec<f64>,
    pub counts: Vec<usize>,
    /// Radii below the height floor of the cutoff.
    pub usable: Vec<bool>,
    pub slope: f64,
}

/// Heights below `3 sqrt(a_min)` are shaped by the duration cutoff.
pub fn height_floor(a_min: f64) -> f64 {
    3.0 * a_min.sqrt()
}

pub fn tail_profile(sups: &[f64], r_list: &[f64], a_min: f64) -> Result<TailProfile> {
    let counts: Vec<usize> = r_list.iter().map(|&r| sups.iter().filter(|&&s| s > r).count()).collect();
    let usable: Vec<bool> = r_list.iter().zip(&counts).map(|(&r, &c)| r >= height_floor(a_min) && c > 0).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = r_list
        .iter()
        .zip(&counts)
        .zip(&usable)
        .filter(|(_, u)| **u)
        .map(|((r, c), _)| (r.ln(), (*c as f64).ln()))
        .unzip();
    let slope = if xs.len() >= 2 { stats::ols(&xs, &ys)?.slope } else { f64::NAN };
    Ok(TailProfile { r: r_list.to_vec(), counts, usable, slope })
}

/// Ratio of tail counts at `r` and `2r`, which the `1/(2r)` law puts at 2.
/// Given the count above `r`, the count above `2r` is binomial, which
/// gives the standard error.
pub fn verify_tail_law(sups: &[f64], r: f64, a_min: f64) -> StatReport {
    let c1 = sups.iter().filter(|&&s| s > r).count();
    let c2 = sups.iter().filter(|&&s| s > 2.0 * r).count();
    let q = c2 as f64 / c1 as f64;
    let se_q = (q * (1.0 - q) / c1 as f64).sqrt();
    let ratio = 1.0 / q;
    let se = se_q / (q * q);
    let z = (ratio - 2.0).abs() / se;
    let mut rep = StatReport::new(
        "tail_ratio",
        vec![c1 as f64, c2 as f64],
        z,
        Rule::AtMost,
        3.0,
        Provenance::Theory,
        format!("ratio {ratio:.5} +- {se:.5} at r = {r}; usable: {}", r >= height_floor(a_min)),
    );
    rep.mean = ratio;
    rep.se = se;
    rep
}

/// Whether a subtree of diameter at least `r` hangs off the ray from the
/// root between distances `s` and `t`.
pub fn spine_window_event(tree: &ContourTree, s: f64, t: f64, r: f64) -> Result<bool> {
    let o = tree.root();
    let tol = tree.tol_eq();
    let mut found = false;
    tree.visit_branches(o, t, &mut |b| {
        let d = tree.dist(o, tree.branch_root(b)).unwrap_or(0.0);
        if d + tol >= s && (b.height >= r || (2.0 * b.height >= r && tree.branch_diameter(b) >= r)) {
            found = true;
        }
        found
    })?;
    Ok(found)
}

pub fn subtree_probability_bound(s: f64, t: f64, r: f64) -> f64 {
    1.0 - (-2.0 * (t - s) / r).exp()
}

/// Empirical probability of the window event over forest trees drawn by
/// `make_tree(replica)`, against `1 - exp(-2 (t - s) / r)`.
pub fn verify_subtree_probability(
    make_tree: impl Fn(u64) -> Result<ContourTree> + Sync,
    s: f64,
    t: f64,
    r: f64,
    replicas: usize,
) -> Result<StatReport> {
    let hits: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|i| Ok(spine_window_event(&make_tree(i)?, s, t, r)? as u8 as f64))
        .collect::<Result<_>>()?;
    let p = proportion(hits.iter().filter(|h| **h > 0.0).count(), replicas);
    let bound = subtree_probability_bound(s, t, r);
    Ok(StatReport::new(
        "subtree_probability",
        hits,
        p.mean - 3.0 * p.se,
        Rule::AtMost,
        bound,
        Provenance::Theory,
        format!("p = {:.5} +- {:.5}, bound {bound:.5}", p.mean, p.se),
    ))
}

/// Fraction of `(replica, eps)` cells whose worst carrier ball has mass at
/// least `eps^(2 + zeta)`.
pub fn verify_ball_volume(trees: &[(ContourTree, Vec<TreePoint>)], zeta: f64, eps_list: &[f64]) -> Result<StatReport> {
    let mut cells = Vec::new();
    for (tree, carrier) in trees {
        for &eps in eps_list {
            let worst = carrier
                .par_iter()
                .map(|&z| tree.ball_mass(z, eps))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            cells.push(worst / eps.powf(2.0 + zeta));
        }
    }
    let frac = cells.iter().filter(|c| **c >= 1.0).count() as f64 / cells.len() as f64;
    Ok(StatReport::new("ball_volume", cells, frac, Rule::AtLeast, 0.95, Provenance::Tuning, format!("zeta = {zeta}")))
}

/// Fraction of trees whose i.i.d. draws cover the carrier within budget.
pub fn verify_iid_cover(trees: &[(ContourTree, Vec<TreePoint>)], horizon: f64, eps: f64, zeta: f64, seed: u64) -> Result<StatReport> {
    let vals: Vec<f64> = trees
        .par_iter()
        .enumerate()
        .map(|(i, (tree, carrier))| {
            let rep = nets::iid_cover_experiment(tree, carrier, horizon, eps, zeta, replica_seed(seed, i as u64))?;
            Ok(rep.covered as u8 as f64)
        })
        .collect::<Result<_>>()?;
    let frac = vals.iter().sum::<f64>() / vals.len() as f64;
    Ok(StatReport::new("iid_cover", vals, frac, Rule::AtLeast, 0.95, Provenance::Tuning, format!("eps = {eps}, zeta = {zeta}")))
}

/// Root views of independent trees, one per replica.
pub fn root_spines(alpha: f64, n_max: usize, replicas: usize, seed: u64) -> Result<Vec<RootSpine>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|i| RootSpine::sample(alpha, n_max, 20.0, ItoParams::DEFAULT_STEPS, &mut stream_rng(seed, i)))
        .collect()
}

/// Empirical `P[E~(o, n)]` against `256 alpha`.
pub fn verify_event_probability(spines: &[RootSpine], n: usize) -> StatReport {
    let alpha = spines[0].alpha;
    let hits: Vec<f64> = spines.iter().map(|s| s.e_tilde(n) as u8 as f64).collect();
    let p = proportion(hits.iter().filter(|h| **h > 0.0).count(), hits.len());
    StatReport::new(
        format!("event_probability alpha={alpha} n={n}"),
        hits,
        p.mean - 3.0 * p.se,
        Rule::AtMost,
        256.0 * alpha,
        Provenance::Theory,
        format!("p = {:.5} +- {:.5}", p.mean, p.se),
    )
}

/// Monte Carlo `log E[varpi(o, n)^p]` per level and the fitted slope over
/// `n_list`; values are the per-level log means.
pub fn verify_expectation_bound(spines: &[RootSpine], eta: f64, p: f64, n_list: &[usize]) -> Result<StatReport> {
    let alpha = spines[0].alpha;
    let per: Vec<Vec<f64>> = spines.iter().map(|s| s.log_varpi(eta)).collect();
    let n_top = per[0].len() - 1;
    let log_means: Vec<f64> = (0..=n_top)
        .map(|n| stats::log_mean_exp(&per.iter().map(|v| p * v[n]).collect::<Vec<_>>()))
        .collect();
    let xs: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = n_list.iter().map(|&n| log_means[n]).collect();
    let fit = stats::ols(&xs, &ys)?;
    let log_c = fit.slope - (p + 1.0) * alpha.ln();
    let mut rep = StatReport::new(
        format!("expectation_slope alpha={alpha}"),
        log_means,
        fit.slope,
        Rule::AtMost,
        -1.0,
        Provenance::Tuning,
        format!("slope {:.5} +- {:.5}; (p+1) log alpha = {:.5}; log C_fit = {log_c:.5}", fit.slope, fit.slope_se, (p + 1.0) * alpha.ln()),
    );
    rep.mean = fit.slope;
    rep.se = fit.slope_se;
    Ok(rep)
}

/// Box-count slope of a finite tree coded by a normalized excursion.
pub fn crt_dimension(grid_size: usize, scales: &[f64], seed: u64) -> Result<BoxDimension> {
    let path = excursion::sample_normalized_excursion(grid_size, seed)?;
    dimension::box_dimension_tree(&ContourTree::finite(&path)?, scales)
}

/// A stage failure: which stage, and why.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

pub fn stage<T>(name: &'static str, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|error| StageError { stage: name, error })
}

/// Everything built on one tree.
pub struct Pipeline {
    pub tree: ContourTree,
    pub carrier: Vec<TreePoint>,
    pub nets: NetHierarchy,
    pub graph: FillingGraph,
    pub weights: WeightTable,
    pub filling: FillingWeights,
    pub metric: ChainMetricTable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub alpha: f64,
    pub eta: f64,
    pub n_max: usize,
    pub carrier_cap: usize,
    pub seed: u64,
    /// Force every event off.
    pub null_weights: bool,
    pub tilde: TildePolicy,
}

pub fn run_pipeline(tree: ContourTree, o: PipelineOptions) -> std::result::Result<Pipeline, StageError> {
    let carrier = stage("nets", nets::ball_carrier(&tree, 1.0, o.carrier_cap, o.seed))?;
    let nets = stage("nets", nets::build_nested_nets(&tree, &carrier, o.alpha, o.n_max, NetOrder::Shuffled(o.seed)))?;
    let graph = nets::build_filling_graph(&tree, &nets);
    let weights = if o.null_weights {
        weights::null_weights(&carrier, o.n_max, o.alpha, o.eta)
    } else {
        stage("weights", weights::weights_for(&tree, &carrier, o.n_max, o.alpha, o.eta, o.tilde))?
    };
    let filling = stage("weights", weights::filling_machinery(&tree, &nets, &graph, &weights, o.eta))?;
    let q = stage("deform", deform::quasimetric_table(&tree, &nets, &graph, &filling))?;
    let metric = stage("deform", deform::chain_metrize(carrier.len(), q))?;
    Ok(Pipeline { tree, carrier, nets, graph, weights, filling, metric })
}

/// Scales as fractions of each metric's own carrier diameter.
pub const RELATIVE_SCALES: [f64; 4] = [0.5, 0.25, 0.125, 0.0625];

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionReport {
    pub original: BoxDimension,
    pub deformed: BoxDimension,
    /// Deformed slope times `log eta / log alpha`, the snowflake exponent.
    pub deformed_snowflake_corrected: f64,
    pub carrier_size: usize,
}

pub fn carrier_dimensions(pl: &Pipeline, alpha: f64, eta: f64) -> std::result::Result<DimensionReport, StageError> {
    let n = pl.carrier.len();
    let tree = &pl.tree;
    let idx: Vec<usize> = pl.carrier.iter().map(|p| p.index()).collect();
    let d_orig = |a: usize, b: usize| tree.dist_idx(idx[a], idx[b]);
    let mut diam: f64 = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            diam = diam.max(d_orig(a, b));
        }
    }
    let scales: Vec<f64> = RELATIVE_SCALES.iter().map(|s| s * diam).collect();
    let original = stage("dimension", dimension::box_dimension_matrix(n, d_orig, &scales))?;
    let dd = pl.metric.diameter();
    let scales: Vec<f64> = RELATIVE_SCALES.iter().map(|s| s * dd).collect();
    let deformed = stage("dimension", dimension::box_dimension_matrix(n, |a, b| pl.metric.d(a, b), &scales))?;
    Ok(DimensionReport {
        deformed_snowflake_corrected: deformed.slope * eta.ln() / alpha.ln(),
        original,
        deformed,
        carrier_size: n,
    })
}

/// Hashes and sizes of written files, for the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub struct RunWriter {
    root: PathBuf,
    files: Vec<FileEntry>,
    timings: Vec<(String, f64)>,
}

impl RunWriter {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(RunWriter { root: root.to_path_buf(), files: Vec::new(), timings: Vec::new() })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.files.push(FileEntry { path: rel.to_string(), sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn write_csv<S: Serialize>(&mut self, rel: &str, rows: &[S]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        self.write(rel, &bytes)
    }

    pub fn time(&mut self, stage: &str, seconds: f64) {
        self.timings.push((stage.to_string(), seconds));
    }

    /// Writes `manifest.toml`; timings come last, in their own table.
    pub fn finish(mut self, cfg: &RunConfig, seeds: &[u64], reports: &[StatReport], caveats: &[&str]) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Threshold<'a> {
            name: &'a str,
            rule: Rule,
            value: f64,
            provenance: Provenance,
            pass: bool,
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            config: &'a RunConfig,
            /// Hex, since TOML integers are signed.
            replica_seeds: Vec<String>,
            caveats: &'a [&'a str],
            files: &'a [FileEntry],
            thresholds: Vec<Threshold<'a>>,
        }
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let m = Manifest {
            config: cfg,
            replica_seeds: seeds.iter().map(|s| format!("{s:016x}")).collect(),
            caveats,
            files: &self.files,
            thresholds: reports
                .iter()
                .map(|r| Threshold { name: &r.name, rule: r.rule, value: r.threshold, provenance: r.provenance, pass: r.pass })
                .collect(),
        };
        let mut text = toml::to_string(&m).map_err(|e| Error::Format(e.to_string()))?;
        text.push_str("\n[timings]\n");
        for (k, v) in &self.timings {
            text.push_str(&format!("{k} = {v:.3}\n"));
        }
        let path = self.root.join("manifest.toml");
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Strips the `[timings]` table from a manifest.
pub fn manifest_without_timings(text: &str) -> &str {
    text.find("\n[timings]").map_or(text, |i| &text[..i])
}

#[derive(Serialize)]
struct ReportRow<'a> {
    name: &'a str,
    mean: f64,
    se: f64,
    statistic: f64,
    rule: Rule,
    threshold: f64,
    provenance: Provenance,
    pass: bool,
    note: &'a str,
}

#[derive(Serialize)]
struct ValueRow<'a> {
    report: &'a str,
    index: usize,
    value: f64,
}

pub fn write_reports(w: &mut RunWriter, rel: &str, reports: &[StatReport]) -> Result<()> {
    let rows: Vec<ReportRow> = reports
        .iter()
        .map(|r| ReportRow {
            name: &r.name,
            mean: r.mean,
            se: r.se,
            statistic: r.statistic,
            rule: r.rule,
            threshold: r.threshold,
            provenance: r.provenance,
            pass: r.pass,
            note: &r.note,
        })
        .collect();
    w.write_csv(rel, &rows)?;
    let values: Vec<ValueRow> = reports
        .iter()
        .flat_map(|r| r.values.iter().enumerate().map(move |(i, v)| ValueRow { report: &r.name, index: i, value: *v }))
        .collect();
    w.write_csv(&rel.replace(".csv", "_values.csv"), &values)
}

pub const CAVEATS: [&str; 3] = [
    "nets, covers and the varrho sup are relative to the finite carrier sample of B_1(o)",
    "ray queries beyond the truncation-safe range are refused, not extrapolated",
    "box-count scales are fractions of each metric's own carrier diameter",
];

/// Selected pieces of a run, by subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stages {
    Simulate,
    Nets,
    Weights,
    Deform,
    Dimension,
    Verify(Lemma),
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lemma {
    TailLaw,
    BallVolume,
    IidCover,
    SubtreeProbability,
    Robustness,
    Admissibility,
    Comparison,
    EventProbability,
    ExpectationBound,
}

impl Lemma {
    pub const ALL: [Lemma; 9] = [
        Lemma::TailLaw,
        Lemma::BallVolume,
        Lemma::IidCover,
        Lemma::SubtreeProbability,
        Lemma::Robustness,
        Lemma::Admissibility,
        Lemma::Comparison,
        Lemma::EventProbability,
        Lemma::ExpectationBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Lemma::TailLaw => "tail-law",
            Lemma::BallVolume => "ball-volume",
            Lemma::IidCover => "iid-cover",
            Lemma::SubtreeProbability => "subtree-probability",
            Lemma::Robustness => "robustness",
            Lemma::Admissibility => "admissibility",
            Lemma::Comparison => "comparison",
            Lemma::EventProbability => "event-probability",
            Lemma::ExpectationBound => "expectation-bound",
        }
    }

    pub fn parse(s: &str) -> Option<Lemma> {
        Lemma::ALL.into_iter().find(|l| l.name() == s)
    }
}

/// Outcome of a run: reports to judge and where the manifest went.
#[derive(Debug)]
pub struct RunOutcome {
    pub reports: Vec<StatReport>,
    pub manifest: PathBuf,
}

impl RunOutcome {
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }
}

#[derive(Serialize)]
struct TreeRow {
    replica: usize,
    seed: u64,
    draws: usize,
    grid_times: usize,
    step: f64,
    tol_eq: f64,
    safe_level: f64,
    max_value: f64,
    carrier: usize,
}

#[derive(Serialize)]
struct DimRow {
    replica: usize,
    metric: &'static str,
    slope: f64,
    carrier: usize,
}

#[derive(Serialize)]
struct CountRow {
    replica: usize,
    metric: &'static str,
    scale: f64,
    count: usize,
}

#[derive(Serialize)]
struct SumRow {
    replica: usize,
    n: usize,
    log_main_sum: f64,
    net_points: usize,
}

fn timed<T>(w: &mut RunWriter, name: &str, f: impl FnOnce() -> T) -> T {
    let t0 = Instant::now();
    let out = f();
    w.time(name, t0.elapsed().as_secs_f64());
    out
}

fn io_stage<T>(r: Result<T>) -> std::result::Result<T, StageError> {
    stage("output", r)
}

/// Runs the selected stages and writes CSVs plus the manifest.
pub fn run(cfg: &RunConfig, which: Stages) -> std::result::Result<RunOutcome, StageError> {
    stage("config", cfg.validate())?;
    let mut w = io_stage(RunWriter::new(&cfg.output_dir))?;
    let seeds: Vec<u64> = (0..cfg.replicas).map(|i| cfg.replica_seed(i)).collect();
    let eta = cfg.eta();
    let mut reports = Vec::new();
    let wants = |s: Stages| which == Stages::All || which == s;
    let pipeline_needed = matches!(which, Stages::All | Stages::Nets | Stages::Weights | Stages::Deform | Stages::Dimension);

    let need = required_safe_level(cfg.alpha);
    let drawn: Vec<(ContourTree, usize)> = timed(&mut w, "simulate", || {
        seeds
            .par_iter()
            .map(|&s| bes3_tree_with_level(cfg.horizon_t, cfg.grid_size, s, need))
            .collect::<Result<Vec<_>>>()
    })
    .map_err(|error| StageError { stage: "simulate", error })?;
    let (trees, draws): (Vec<ContourTree>, Vec<usize>) = drawn.into_iter().unzip();

    let mut tree_rows = Vec::new();
    let mut carriers = Vec::new();
    for (i, t) in trees.iter().enumerate() {
        let carrier = stage("simulate", nets::ball_carrier(t, 1.0, cfg.carrier_cap, seeds[i]))?;
        tree_rows.push(TreeRow {
            replica: i,
            seed: seeds[i],
            draws: draws[i],
            grid_times: t.len(),
            step: t.step(),
            tol_eq: t.tol_eq(),
            safe_level: t.safe_level(),
            max_value: t.max_value(),
            carrier: carrier.len(),
        });
        carriers.push(carrier);
    }
    io_stage(w.write_csv("simulate.csv", &tree_rows))?;

    if pipeline_needed {
        let opts = |i: usize| PipelineOptions {
            alpha: cfg.alpha,
            eta,
            n_max: cfg.n_max,
            carrier_cap: cfg.carrier_cap,
            seed: seeds[i],
            null_weights: false,
            tilde: TildePolicy::WhenSafe,
        };
        let t0 = Instant::now();
        let mut dim_rows = Vec::new();
        let mut count_rows = Vec::new();
        let mut sum_rows = Vec::new();
        let mut gaps = Vec::new();
        for (i, tree) in trees.iter().enumerate() {
            let pl = run_pipeline(tree.clone(), opts(i))?;
            let dir = format!("replica{i}");
            let (edges, verts) = pl.graph.export_text(&pl.nets, &pl.tree);
            io_stage(w.write(&format!("{dir}/filling_edges.txt"), edges.as_bytes()))?;
            io_stage(w.write(&format!("{dir}/filling_vertices.txt"), verts.as_bytes()))?;
            if wants(Stages::Weights) || wants(Stages::Deform) {
                io_stage(w.write(&format!("{dir}/weights.txt"), pl.weights.export_text(&pl.tree).as_bytes()))?;
            }
            if wants(Stages::Deform) {
                let mut bytes = Vec::new();
                io_stage(pl.metric.write_to(&mut bytes))?;
                io_stage(w.write(&format!("{dir}/metric.crtm"), &bytes))?;
                let index: String = pl.carrier.iter().map(|p| format!("{}\n", pl.tree.time_of(*p))).collect();
                io_stage(w.write(&format!("{dir}/metric_index.txt"), index.as_bytes()))?;
            }
            for n in 0..=cfg.n_max {
                sum_rows.push(SumRow {
                    replica: i,
                    n,
                    log_main_sum: stage("deform", deform::main_sum(&pl.weights, &pl.nets, n, cfg.p))?,
                    net_points: pl.nets.levels[n].points.len(),
                });
            }
            if wants(Stages::Dimension) {
                let dims = carrier_dimensions(&pl, cfg.alpha, eta)?;
                for (metric, bd) in [("original", &dims.original), ("deformed", &dims.deformed)] {
                    dim_rows.push(DimRow { replica: i, metric, slope: bd.slope, carrier: dims.carrier_size });
                    for (s, c) in bd.scales.iter().zip(&bd.counts) {
                        count_rows.push(CountRow { replica: i, metric, scale: *s, count: *c });
                    }
                }
                gaps.push(dims.original.slope - dims.deformed.slope);
            }
        }
        w.time("pipeline", t0.elapsed().as_secs_f64());
        io_stage(w.write_csv("main_sum.csv", &sum_rows))?;
        if wants(Stages::Dimension) {
            io_stage(w.write_csv("dimension.csv", &dim_rows))?;
            io_stage(w.write_csv("box_counts.csv", &count_rows))?;
            let m = mean_se(&gaps);
            reports.push(StatReport::new(
                "dimension_drop",
                gaps,
                m.mean,
                Rule::AtLeast,
                0.3,
                Provenance::Tuning,
                "original slope minus deformed slope",
            ));
        }
    }

    let lemmas: Vec<Lemma> = match which {
        Stages::All => Lemma::ALL.to_vec(),
        Stages::Verify(l) => vec![l],
        _ => Vec::new(),
    };
    for lemma in lemmas {
        let t0 = Instant::now();
        let rep = verify_lemma(cfg, lemma, &trees, &carriers)?;
        w.time(&format!("verify_{}", lemma.name().replace('-', "_")), t0.elapsed().as_secs_f64());
        reports.extend(rep);
    }
    if !reports.is_empty() {
        io_stage(write_reports(&mut w, "reports.csv", &reports))?;
    }
    let manifest = io_stage(w.finish(cfg, &seeds, &reports, &CAVEATS))?;
    Ok(RunOutcome { reports, manifest })
}

/// One verification at sizes derived from the config.
pub fn verify_lemma(
    cfg: &RunConfig,
    lemma: Lemma,
    trees: &[ContourTree],
    carriers: &[Vec<TreePoint>],
) -> std::result::Result<Vec<StatReport>, StageError> {
    let seed = cfg.master_seed;
    let reps = cfg.replicas;
    let name = "verify";
    let out = match lemma {
        Lemma::TailLaw => {
            let a_min = 1e-4;
            let sups = stage(name, ito_sups(a_min, 10_000 * reps, replica_seed(seed, 101)))?;
            vec![verify_tail_law(&sups, height_floor(a_min), a_min)]
        }
        Lemma::BallVolume => {
            let pairs: Vec<_> = trees.iter().cloned().zip(carriers.iter().cloned()).collect();
            vec![stage(name, verify_ball_volume(&pairs, cfg.zeta, &[0.125, 0.0625, 0.03125]))?]
        }
        Lemma::IidCover => {
            let pairs: Vec<_> = trees.iter().cloned().zip(carriers.iter().cloned()).collect();
            vec![stage(name, verify_iid_cover(&pairs, cfg.horizon_t, 0.125, cfg.zeta, replica_seed(seed, 102)))?]
        }
        Lemma::SubtreeProbability => {
            let base = replica_seed(seed, 103);
            vec![stage(
                name,
                verify_subtree_probability(|i| forest_tree(0.5, 1e-4, 1.0, replica_seed(base, i)), 0.0, 0.1, 0.4, 100 * reps),
            )?]
        }
        Lemma::EventProbability | Lemma::ExpectationBound => {
            let n_top = cfg.n_max.max(3);
            let spines = stage(name, root_spines(cfg.alpha, n_top, 100 * reps, replica_seed(seed, 104)))?;
            if lemma == Lemma::EventProbability {
                (2..=n_top).map(|n| verify_event_probability(&spines, n)).collect()
            } else {
                let n_list: Vec<usize> = (2..=n_top).collect();
                vec![stage(name, verify_expectation_bound(&spines, cfg.eta(), cfg.p, &n_list))?]
            }
        }
        Lemma::Admissibility => {
            let mut out = Vec::new();
            for n in 1..=cfg.n_max.min(3) {
                let tree = stage(name, scaled_tree(cfg.alpha, n, cfg.grid_size, replica_seed(seed, 105 + n as u64)))?;
                let r = stage(name, weights::admissibility_harness(&tree, cfg.alpha, n, 10 * reps, replica_seed(seed, 110)))?;
                out.push(admissibility_report(&r));
            }
            out
        }
        Lemma::Comparison | Lemma::Robustness => {
            let tree = &trees[0];
            let n_top = cfg.n_max.min(3);
            let table = stage(
                name,
                weights::weights_for(tree, &carriers[0], n_top, cfg.alpha, cfg.eta(), TildePolicy::WhenSafe),
            )?;
            let mut out = Vec::new();
            for n in 1..=n_top {
                let c = if lemma == Lemma::Comparison {
                    stage(name, weights::comparison_harness(tree, &table, n, 100 * reps, replica_seed(seed, 120)))?
                } else {
                    stage(name, weights::robustness_harness(tree, &carriers[0], cfg.alpha, n, 100 * reps, replica_seed(seed, 121)))?
                };
                out.push(StatReport::new(
                    format!("{} n={n}", lemma.name()),
                    vec![c.pairs as f64, c.violations as f64, c.skipped as f64],
                    c.violations as f64,
                    Rule::AtMost,
                    0.0,
                    Provenance::Theory,
                    format!("{} pairs, {} skipped as unsafe", c.pairs, c.skipped),
                ));
            }
            out
        }
    };
    Ok(out)
}

/// BES(3) tree on `[0, 64 alpha^(2(n-1))]` per side, so that level `n`
/// sees the same grid resolution at every `n`, conditioned on a safe level
/// of at least `6 alpha^(n-1)`.
pub fn scaled_tree(alpha: f64, n: usize, grid_size: usize, seed: u64) -> Result<ContourTree> {
    let unit = alpha.powi(n as i32 - 1);
    Ok(bes3_tree_with_level(64.0 * unit * unit, grid_size, seed, 6.0 * unit)?.0)
}

pub fn admissibility_report(r: &weights::AdmissibilityReport) -> StatReport {
    StatReport::new(
        format!("admissibility alpha={} n={}", r.alpha, r.n),
        vec![r.instances as f64, r.violations as f64, r.rejected as f64],
        r.min_sum.unwrap_or(f64::NAN),
        Rule::AtLeast,
        1.0,
        Provenance::Theory,
        format!("{} instances, {} rejected, {} violations", r.instances, r.rejected, r.violations),
    )
}
