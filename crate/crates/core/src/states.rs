//! Market states: ensemble k-means on the MDS map, the `(k, ε)` search,
//! state ordering, transition counts, and top-down bisection clustering.

use std::collections::VecDeque;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrmat::{epoch_correlations, power_map_values, EpochCorrelationSeries, EpochSpec};
use crate::error::{invalid, Error, Result};
use crate::formats::{self, fmt_f64};
use crate::geometry::{classical_mds, similarity_from_matrices, Embedding, SimilarityMatrix};
use crate::ingest::ReturnPanel;
use crate::linalg;
use crate::seed;

/// Lloyd iterations stop after this many rounds if no fixed point is reached.
pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringRun {
    pub k: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Cluster index in `0..k` for every point.
    pub labels: Vec<usize>,
    /// `k x D`.
    pub centroids: DMatrix<f64>,
    /// Mean Euclidean distance from each point to its centroid.
    pub d_intra: f64,
    /// Sum of squared point–centroid distances after each update step.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl ClusteringRun {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    let mut acc = 0.0;
    for d in 0..points.ncols() {
        let diff = points[(i, d)] - centroids[(c, d)];
        acc += diff * diff;
    }
    acc
}

/// Move every point to its nearest centroid; a point only leaves its
/// current cluster for a strictly closer one.
fn assign(points: &DMatrix<f64>, centroids: &DMatrix<f64>, labels: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, label) in labels.iter_mut().enumerate() {
        let (mut best, mut best_d) = if *label < centroids.nrows() {
            (*label, sq_dist(points, i, centroids, *label))
        } else {
            (usize::MAX, f64::INFINITY)
        };
        for c in 0..centroids.nrows() {
            let d = sq_dist(points, i, centroids, c);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        if best != *label {
            *label = best;
            changed = true;
        }
    }
    changed
}

/// Give each empty cluster the point farthest from its own centroid,
/// taken from a cluster that can spare it.
fn repair_empty(points: &DMatrix<f64>, centroids: &DMatrix<f64>, labels: &mut [usize], k: usize) {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, &l) in labels.iter().enumerate() {
            if counts[l] < 2 {
                continue;
            }
            let d = sq_dist(points, i, centroids, l);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        if let Some(i) = far {
            counts[labels[i]] -= 1;
            labels[i] = c;
            counts[c] += 1;
        }
    }
}

fn update(points: &DMatrix<f64>, labels: &[usize], k: usize, previous: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = points.ncols();
    let mut sums = DMatrix::<f64>::zeros(k, dim);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for d in 0..dim {
            sums[(l, d)] += points[(i, d)];
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            sums.row_mut(c).copy_from(&previous.row(c));
        } else {
            let n = counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|x| *x /= n);
        }
    }
    sums
}

fn objective(points: &DMatrix<f64>, centroids: &DMatrix<f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points, i, centroids, l))
        .sum()
}

/// How the `k` starting centroids are drawn from the data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    /// Greedy k-means++: each new centre is the best of `2 + ln k` candidates
    /// drawn with probability proportional to squared distance.
    #[default]
    PlusPlus,
    /// `k` distinct data points chosen uniformly at random.
    Uniform,
}

fn plus_plus_init(points: &DMatrix<f64>, k: usize, rng: &mut seed::Rng) -> Vec<usize> {
    let n = points.nrows();
    let row_dist = |i: usize, j: usize| -> f64 {
        (0..points.ncols()).map(|d| (points[(i, d)] - points[(j, d)]).powi(2)).sum()
    };
    let mut chosen = vec![rng.random_range(0..n)];
    let mut closest: Vec<f64> = (0..n).map(|i| row_dist(i, chosen[0])).collect();
    let trials = 2 + (k as f64).ln() as usize;
    while chosen.len() < k {
        let total: f64 = closest.iter().sum();
        if !(total > 0.0) {
            // Every remaining point duplicates a centre; any unused one will do.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            chosen.push(free[rng.random_range(0..free.len())]);
            continue;
        }
        let cumulative: Vec<f64> = closest
            .iter()
            .scan(0.0, |acc, &d| {
                *acc += d;
                Some(*acc)
            })
            .collect();
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let r = rng.random::<f64>() * total;
            let candidate = cumulative.partition_point(|&c| c <= r).min(n - 1);
            if closest[candidate] <= 0.0 {
                continue;
            }
            let updated: Vec<f64> = (0..n).map(|i| closest[i].min(row_dist(i, candidate))).collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(_, p, _)| potential < *p) {
                best = Some((candidate, potential, updated));
            }
        }
        if let Some((candidate, _, updated)) = best {
            chosen.push(candidate);
            closest = updated;
        }
    }
    chosen
}

/// Lloyd's k-means seeded with greedy k-means++.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64) -> Result<ClusteringRun> {
    kmeans_with(points, k, seed, InitMethod::default())
}

/// Lloyd's k-means with an explicit initialisation scheme.
pub fn kmeans_with(points: &DMatrix<f64>, k: usize, seed: u64, init: InitMethod) -> Result<ClusteringRun> {
    let n = points.nrows();
    if k == 0 {
        return Err(invalid!("k must be at least 1"));
    }
    if k > n {
        return Err(invalid!("k = {k} exceeds the number of points ({n})"));
    }
    if points.ncols() == 0 {
        return Err(invalid!("points must have at least one coordinate"));
    }
    let mut rng = seed::rng(seed);
    let start = match init {
        InitMethod::PlusPlus => plus_plus_init(points, k, &mut rng),
        InitMethod::Uniform => sample(&mut rng, n, k).into_vec(),
    };
    let mut centroids = DMatrix::from_fn(k, points.ncols(), |c, d| points[(start[c], d)]);
    let mut labels = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 0..MAX_ITERATIONS {
        let changed = assign(points, &centroids, &mut labels);
        if !changed && iteration > 0 {
            converged = true;
            break;
        }
        repair_empty(points, &centroids, &mut labels, k);
        centroids = update(points, &labels, k, &centroids);
        trace.push(objective(points, &centroids, &labels));
    }
    let d_intra = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points, i, &centroids, l).sqrt())
        .sum::<f64>()
        / n as f64;
    Ok(ClusteringRun {
        k,
        epsilon: 0.0,
        seed,
        labels,
        centroids,
        d_intra,
        objective_trace: trace,
        converged,
    })
}

/// Seed of initialisation `init` for cluster count `k`.
pub fn init_seed(seed: u64, k: usize, init: usize) -> u64 {
    seed::derive(seed, &[k as u64, init as u64])
}

/// `n_inits` seeded k-means runs, in initialisation order.
pub fn kmeans_ensemble(
    points: &DMatrix<f64>,
    k: usize,
    n_inits: usize,
    seed: u64,
    init: InitMethod,
) -> Result<Vec<ClusteringRun>> {
    (0..n_inits)
        .into_par_iter()
        .map(|i| kmeans_with(points, k, init_seed(seed, k, i), init))
        .collect()
}

/// The run with the smallest Lloyd objective (first on ties).
pub fn best_run(runs: Vec<ClusteringRun>) -> Option<ClusteringRun> {
    runs.into_iter().reduce(|best, r| if r.objective() < best.objective() { r } else { best })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub k: usize,
    pub epsilon: f64,
    pub sigma_d_intra: f64,
    pub mean_d_intra: f64,
    pub n_inits: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizationSurface {
    pub grid: Vec<SurfacePoint>,
}

/// Settings shared by the stock-level and sector-level searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSettings {
    pub n_inits: usize,
    pub seed: u64,
    pub dim: usize,
    pub init: InitMethod,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            n_inits: 1000,
            seed: 7,
            dim: 3,
            init: InitMethod::PlusPlus,
        }
    }
}

/// Power-map every matrix, build ζ and embed it.
pub fn embed_matrices(raw: &[DMatrix<f64>], epsilon: f64, dim: usize) -> Result<(SimilarityMatrix, Embedding)> {
    let mapped = raw
        .par_iter()
        .map(|m| power_map_values(m, epsilon))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DMatrix<f64>> = mapped.iter().collect();
    let zeta = similarity_from_matrices(&refs)?;
    let dim = dim.min(zeta.size() - 1);
    let embedding = classical_mds(&zeta, dim)?;
    Ok((zeta, embedding))
}

/// Grid search over `(k, ε)` on an arbitrary sequence of raw matrices.
pub fn optimize_matrices(
    raw: &[DMatrix<f64>],
    k_range: &[usize],
    epsilon_grid: &[f64],
    settings: SearchSettings,
) -> Result<OptimizationSurface> {
    if settings.n_inits < 2 {
        return Err(invalid!("need at least 2 initialisations, got {}", settings.n_inits));
    }
    if k_range.is_empty() || epsilon_grid.is_empty() {
        return Err(invalid!("k range and epsilon grid must be non-empty"));
    }
    let mut grid = Vec::with_capacity(k_range.len() * epsilon_grid.len());
    for &k in k_range {
        if k == 0 || k > raw.len() {
            return Err(invalid!("k = {k} outside 1..={}", raw.len()));
        }
    }
    for &epsilon in epsilon_grid {
        let (_, embedding) = embed_matrices(raw, epsilon, settings.dim)?;
        for &k in k_range {
            let runs = kmeans_ensemble(&embedding.coordinates, k, settings.n_inits, settings.seed, settings.init)?;
            let d: Vec<f64> = runs.iter().map(|r| r.d_intra).collect();
            let (mean, var) = linalg::mean_var(&d);
            grid.push(SurfacePoint {
                k,
                epsilon,
                sigma_d_intra: var.sqrt(),
                mean_d_intra: mean,
                n_inits: settings.n_inits,
            });
        }
    }
    Ok(OptimizationSurface { grid })
}

/// Recompute correlations from `panel` and search the `(k, ε)` grid.
pub fn optimize_states(
    panel: &ReturnPanel,
    spec: EpochSpec,
    k_range: &[usize],
    epsilon_grid: &[f64],
    settings: SearchSettings,
) -> Result<OptimizationSurface> {
    let series = epoch_correlations(panel, spec)?;
    optimize_series(&series, k_range, epsilon_grid, settings)
}

pub fn optimize_series(
    series: &EpochCorrelationSeries,
    k_range: &[usize],
    epsilon_grid: &[f64],
    settings: SearchSettings,
) -> Result<OptimizationSurface> {
    let raw: Vec<DMatrix<f64>> = series.matrices.iter().map(|m| m.values.clone()).collect();
    optimize_matrices(&raw, k_range, epsilon_grid, settings)
}

fn rank_order(a: &SurfacePoint, b: &SurfacePoint) -> std::cmp::Ordering {
    a.sigma_d_intra
        .total_cmp(&b.sigma_d_intra)
        .then(b.k.cmp(&a.k))
        .then(a.epsilon.total_cmp(&b.epsilon))
}

/// Candidates with `k >= k_min`, best first: smallest σ_d_intra, then larger
/// `k`, then smaller ε.
pub fn ranked_candidates(surface: &OptimizationSurface, k_min: usize) -> Vec<SurfacePoint> {
    let mut c: Vec<SurfacePoint> = surface.grid.iter().copied().filter(|p| p.k >= k_min).collect();
    c.sort_by(rank_order);
    c
}

pub fn select_optimum(surface: &OptimizationSurface, k_min: usize) -> Result<(usize, f64)> {
    ranked_candidates(surface, k_min)
        .first()
        .map(|p| (p.k, p.epsilon))
        .ok_or_else(|| invalid!("no surface entry with k >= {k_min}"))
}

/// Selection that prefers transition matrices without large jumps.
///
/// The best `candidates` entries by the σ_d_intra rule are re-ranked by
/// `jumps(k, ε)`, the number of transitions from the lowest states into the
/// top state (see [`jumps_into_top`]); ties keep the σ_d_intra order.
pub fn select_optimum_with_preference<F>(
    surface: &OptimizationSurface,
    k_min: usize,
    candidates: usize,
    mut jumps: F,
) -> Result<(usize, f64)>
where
    F: FnMut(usize, f64) -> Result<u64>,
{
    let ranked = ranked_candidates(surface, k_min);
    if ranked.is_empty() {
        return Err(invalid!("no surface entry with k >= {k_min}"));
    }
    let mut best: Option<(u64, &SurfacePoint)> = None;
    for p in ranked.iter().take(candidates.max(1)) {
        let j = jumps(p.k, p.epsilon)?;
        if best.is_none_or(|(bj, _)| j < bj) {
            best = Some((j, p));
        }
    }
    let (_, p) = best.expect("at least one candidate");
    Ok((p.k, p.epsilon))
}

/// Market-state model: clusters renamed `S1..Sk` by ascending mean correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct StateModel {
    pub k: usize,
    pub epsilon: f64,
    /// State index in `0..k` (`S1` is 0) for every epoch.
    pub state_of: Vec<usize>,
    /// Mean over all entries of each state's average raw matrix.
    pub state_mean_corr: Vec<f64>,
    pub avg_corr: Vec<DMatrix<f64>>,
    /// `transition_counts[a][b]` = #{τ : S(τ) = a, S(τ+1) = b}.
    pub transition_counts: Vec<Vec<u64>>,
    /// Centroids in state order, `k x D`.
    pub centroids: DMatrix<f64>,
    pub d_intra: f64,
    pub dates: Vec<String>,
    /// Row/column labels of the averaged matrices.
    pub labels: Vec<String>,
}

impl StateModel {
    pub fn occupancy(&self) -> Vec<usize> {
        let mut occ = vec![0; self.k];
        for &s in &self.state_of {
            occ[s] += 1;
        }
        occ
    }
}

pub fn transition_counts(states: &[usize], k: usize) -> Vec<Vec<u64>> {
    let mut counts = vec![vec![0u64; k]; k];
    for pair in states.windows(2) {
        counts[pair[0]][pair[1]] += 1;
    }
    counts
}

/// Transitions from `S1`/`S2` (those below the top state) into the top state.
pub fn jumps_into_top(counts: &[Vec<u64>]) -> u64 {
    let k = counts.len();
    if k < 2 {
        return 0;
    }
    (0..2.min(k - 1)).map(|s| counts[s][k - 1]).sum()
}

/// Build a state model from raw matrices and a clustering of them.
pub fn build_state_model_from(
    raw: &[&DMatrix<f64>],
    run: &ClusteringRun,
    dates: Vec<String>,
    labels: Vec<String>,
) -> Result<StateModel> {
    if run.labels.len() != raw.len() {
        return Err(Error::Data(format!(
            "{} labels for {} epochs",
            run.labels.len(),
            raw.len()
        )));
    }
    let k = run.k;
    let n = raw.first().map_or(0, |m| m.nrows());
    let mut sums = vec![DMatrix::<f64>::zeros(n, n); k];
    let mut counts = vec![0usize; k];
    for (m, &l) in raw.iter().zip(&run.labels) {
        if l >= k {
            return Err(Error::Data(format!("label {l} outside 0..{k}")));
        }
        sums[l] += *m;
        counts[l] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("cluster {empty} has no epochs")));
    }
    let avg: Vec<DMatrix<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let means: Vec<f64> = avg.iter().map(|m| m.mean()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    let mut rank = vec![0usize; k];
    for (state, &cluster) in order.iter().enumerate() {
        rank[cluster] = state;
    }
    let state_of: Vec<usize> = run.labels.iter().map(|&l| rank[l]).collect();
    let centroids = DMatrix::from_fn(k, run.centroids.ncols(), |s, d| run.centroids[(order[s], d)]);
    Ok(StateModel {
        k,
        epsilon: run.epsilon,
        transition_counts: transition_counts(&state_of, k),
        state_of,
        state_mean_corr: order.iter().map(|&c| means[c]).collect(),
        avg_corr: order.iter().map(|&c| avg[c].clone()).collect(),
        centroids,
        d_intra: run.d_intra,
        dates,
        labels,
    })
}

/// Average matrices always come from the raw (ε = 0) series.
pub fn build_state_model(series: &EpochCorrelationSeries, run: &ClusteringRun) -> Result<StateModel> {
    let raw: Vec<&DMatrix<f64>> = series.matrices.iter().map(|m| &m.values).collect();
    build_state_model_from(&raw, run, series.dates(), series.tickers.clone())
}

/// Everything produced by fitting one `(k, ε)` model.
#[derive(Debug, Clone)]
pub struct StateFit {
    pub similarity: SimilarityMatrix,
    pub embedding: Embedding,
    pub run: ClusteringRun,
    pub model: StateModel,
}

/// Fit `k` states on raw matrices mapped with `epsilon`, keeping the
/// lowest-objective run of the ensemble.
pub fn fit_matrices(
    raw: &[DMatrix<f64>],
    k: usize,
    epsilon: f64,
    settings: SearchSettings,
    dates: Vec<String>,
    labels: Vec<String>,
) -> Result<StateFit> {
    if settings.n_inits == 0 {
        return Err(invalid!("need at least one initialisation"));
    }
    let (similarity, embedding) = embed_matrices(raw, epsilon, settings.dim)?;
    let runs = kmeans_ensemble(&embedding.coordinates, k, settings.n_inits, settings.seed, settings.init)?;
    let mut run = best_run(runs).expect("n_inits >= 1");
    run.epsilon = epsilon;
    let refs: Vec<&DMatrix<f64>> = raw.iter().collect();
    let model = build_state_model_from(&refs, &run, dates, labels)?;
    Ok(StateFit {
        similarity,
        embedding,
        run,
        model,
    })
}

pub fn fit_states(series: &EpochCorrelationSeries, k: usize, epsilon: f64, settings: SearchSettings) -> Result<StateFit> {
    let raw: Vec<DMatrix<f64>> = series.matrices.iter().map(|m| m.values.clone()).collect();
    fit_matrices(&raw, k, epsilon, settings, series.dates(), series.tickers.clone())
}

/// Recursive bisection: split with 2-means on each cluster's own MDS map
/// until the mean point-to-centroid distance is at most `threshold`.
///
/// Labels are numbered in the order final clusters are discovered
/// (breadth first).
pub fn topdown_cluster(dissim: &SimilarityMatrix, threshold: f64, dim: usize, seed: u64) -> Result<Vec<usize>> {
    if !(threshold > 0.0) {
        return Err(invalid!("radius threshold must be positive, got {threshold}"));
    }
    let n = dissim.size();
    let mut labels = vec![usize::MAX; n];
    let mut queue: VecDeque<Vec<usize>> = VecDeque::from([(0..n).collect()]);
    let mut leaves = 0;
    let mut singletons = 0;
    let mut split_id = 0u64;
    while let Some(members) = queue.pop_front() {
        let split = if members.len() < 2 {
            None
        } else {
            let sub = dissim.select(&members);
            let emb = classical_mds(&sub, dim.min(members.len() - 1))?;
            let radius = (0..members.len()).map(|i| emb.coordinates.row(i).norm()).sum::<f64>() / members.len() as f64;
            if radius <= threshold {
                None
            } else {
                let runs = kmeans_ensemble(&emb.coordinates, 2, 10, seed::derive(seed, &[split_id]), InitMethod::default())?;
                split_id += 1;
                best_run(runs)
            }
        };
        match split {
            Some(run) => {
                let (a, b): (Vec<_>, Vec<_>) =
                    members.iter().zip(&run.labels).partition(|&(_, &l)| l == 0);
                queue.push_back(a.into_iter().map(|(&m, _)| m).collect());
                queue.push_back(b.into_iter().map(|(&m, _)| m).collect());
            }
            None => {
                if members.len() == 1 {
                    singletons += 1;
                }
                for &m in &members {
                    labels[m] = leaves;
                }
                leaves += 1;
            }
        }
    }
    if singletons > 0 {
        warn!("top-down clustering produced {singletons} singleton clusters");
    }
    Ok(labels)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StateModelFile {
    pub k: usize,
    pub epsilon: f64,
    pub d_intra: f64,
    pub dates: Vec<String>,
    /// 1-based state number (`S1` = 1) per epoch.
    pub states: Vec<usize>,
    pub state_mean_corr: Vec<f64>,
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub avg_corr: Vec<Vec<Vec<f64>>>,
    pub transition_counts: Vec<Vec<u64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Data("ragged matrix in model file".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl From<&StateModel> for StateModelFile {
    fn from(m: &StateModel) -> Self {
        StateModelFile {
            k: m.k,
            epsilon: m.epsilon,
            d_intra: m.d_intra,
            dates: m.dates.clone(),
            states: m.state_of.iter().map(|s| s + 1).collect(),
            state_mean_corr: m.state_mean_corr.clone(),
            centroids: rows(&m.centroids),
            labels: m.labels.clone(),
            avg_corr: m.avg_corr.iter().map(rows).collect(),
            transition_counts: m.transition_counts.clone(),
        }
    }
}

impl TryFrom<StateModelFile> for StateModel {
    type Error = Error;

    fn try_from(f: StateModelFile) -> Result<Self> {
        if f.states.iter().any(|&s| s == 0 || s > f.k) {
            return Err(Error::Data(format!("state numbers must lie in 1..={}", f.k)));
        }
        Ok(StateModel {
            k: f.k,
            epsilon: f.epsilon,
            state_of: f.states.iter().map(|s| s - 1).collect(),
            state_mean_corr: f.state_mean_corr,
            avg_corr: f.avg_corr.iter().map(|m| from_rows(m)).collect::<Result<_>>()?,
            transition_counts: f.transition_counts,
            centroids: from_rows(&f.centroids)?,
            d_intra: f.d_intra,
            dates: f.dates,
            labels: f.labels,
        })
    }
}

pub fn write_model(model: &StateModel, path: impl AsRef<Path>) -> Result<()> {
    formats::write_json(path, &StateModelFile::from(model))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<StateModel> {
    let file: StateModelFile = formats::read_json(path)?;
    StateModel::try_from(file)
}

pub fn write_surface(surface: &OptimizationSurface, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("k,epsilon,sigma_d_intra,mean_d_intra,n_inits\n");
    for p in &surface.grid {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.k,
            fmt_f64(p.epsilon),
            fmt_f64(p.sigma_d_intra),
            fmt_f64(p.mean_d_intra),
            p.n_inits
        ));
    }
    formats::write_file(path, out.as_bytes())
}

pub fn read_surface(path: impl AsRef<Path>) -> Result<OptimizationSurface> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut grid = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected k,epsilon,sigma_d_intra,mean_d_intra,n_inits".into(),
        };
        if f.len() != 5 {
            return Err(bad());
        }
        grid.push(SurfacePoint {
            k: f[0].parse().map_err(|_| bad())?,
            epsilon: formats::parse_f64(f[1], path, i + 1)?,
            sigma_d_intra: formats::parse_f64(f[2], path, i + 1)?,
            mean_d_intra: formats::parse_f64(f[3], path, i + 1)?,
            n_inits: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(OptimizationSurface { grid })
}
