//! Iterative hierarchical clustering of coefficient rows into spatial
//! co-expression modules.
//!
//! Genes are compared by one minus the Spearman correlation of their basis
//! coefficients. For each threshold alpha on a grid spanning the observed
//! correlation range, an average-linkage clustering is refined by alternating
//! merge and prune passes: cluster centers that correlate at least alpha are
//! fused, and members correlating below alpha with their own center are
//! expelled into singletons. The partition whose mean silhouette is highest
//! wins, with ties resolved toward the smallest alpha.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::mean_silhouette;
use crate::solver::CoefficientMatrix;

/// Symmetric gene-by-gene distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> DistanceMatrix {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = if i == j { 0.0 } else { f(i, j) };
            }
        }
        DistanceMatrix { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// Average ranks with ties sharing their mean rank (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = mean_rank;
        }
        start = end;
    }
    ranks
}

/// Centered, unit-norm rank vector; `None` when the row has no rank variance.
fn normalized_ranks(values: &[f64]) -> Option<Vec<f64>> {
    let ranks = average_ranks(values);
    let n = ranks.len() as f64;
    let mean = ranks.iter().sum::<f64>() / n;
    let mut centered: Vec<f64> = ranks.iter().map(|r| r - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    for v in &mut centered {
        *v /= norm;
    }
    Some(centered)
}

/// Snap correlations within 1e-12 of the exact agreement endpoints so that
/// identical (or reversed) rank vectors compare exactly at threshold cuts.
fn snap_rho(rho: f64) -> f64 {
    let rho = rho.clamp(-1.0, 1.0);
    if rho > 1.0 - 1e-12 {
        1.0
    } else if rho < -1.0 + 1e-12 {
        -1.0
    } else {
        rho
    }
}

/// Spearman rank correlation; `None` when either row is constant.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Option<f64> {
    let ua = normalized_ranks(a)?;
    let ub = normalized_ranks(b)?;
    Some(snap_rho(ua.iter().zip(&ub).map(|(x, y)| x * y).sum::<f64>()))
}

/// Average-rank representation of every row; strictly increasing transforms
/// of a row leave its rank vector unchanged, so clustering on ranks is
/// exactly rank-invariant.
pub fn rank_rows(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| average_ranks(r)).collect()
}

/// One minus the pairwise Spearman correlations of the coefficient rows.
///
/// The second return value flags rows with zero rank variance; their
/// distances are set to 1 (zero correlation) and callers are expected to
/// quarantine them before clustering.
pub fn spearman_distance(rows: &[Vec<f64>]) -> Result<(DistanceMatrix, Vec<bool>)> {
    let g = rows.len();
    if g < 2 {
        return Err(Error::DegenerateInput { reason: format!("need at least 2 rows, got {g}") });
    }
    let k = rows[0].len();
    if k < 2 {
        return Err(Error::DegenerateInput {
            reason: format!("need at least 2 coefficients per row, got {k}"),
        });
    }
    let normalized: Vec<Option<Vec<f64>>> =
        rows.iter().map(|r| normalized_ranks(r)).collect();
    let degenerate: Vec<bool> = normalized.iter().map(Option::is_none).collect();
    let mut d = vec![0.0; g * g];
    for i in 0..g {
        for j in (i + 1)..g {
            let dist = match (&normalized[i], &normalized[j]) {
                (Some(a), Some(b)) => {
                    let rho = snap_rho(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>());
                    (1.0 - rho).clamp(0.0, 2.0)
                }
                _ => 1.0,
            };
            d[i * g + j] = dist;
            d[j * g + i] = dist;
        }
    }
    Ok((DistanceMatrix { n: g, d }, degenerate))
}

/// Gene-to-cluster assignment with contiguous cluster ids ordered by each
/// cluster's smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    labels: Vec<usize>,
    n_clusters: usize,
}

impl Partition {
    /// Canonicalize arbitrary labels: ids become 0..m-1 in order of first
    /// appearance.
    pub fn from_labels(raw: &[usize]) -> Partition {
        let mut labels = Vec::with_capacity(raw.len());
        let mut next = 0usize;
        let mut seen = std::collections::BTreeMap::new();
        for &l in raw {
            let id = *seen.entry(l).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            });
            labels.push(id);
        }
        Partition { labels, n_clusters: next }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// Member indices per cluster, each sorted ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l].push(i);
        }
        members
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_clusters];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Arithmetic-mean coefficient vector of each cluster.
pub fn cluster_centers(rows: &[Vec<f64>], partition: &Partition) -> Vec<Vec<f64>> {
    let k = rows.first().map_or(0, Vec::len);
    let mut centers = vec![vec![0.0; k]; partition.n_clusters()];
    let sizes = partition.sizes();
    for (row, &l) in rows.iter().zip(partition.labels()) {
        for (acc, v) in centers[l].iter_mut().zip(row) {
            *acc += v;
        }
    }
    for (center, &size) in centers.iter_mut().zip(&sizes) {
        for v in center.iter_mut() {
            *v /= size as f64;
        }
    }
    centers
}

/// Average-linkage agglomeration cut at height `1 - alpha`: merging continues
/// while the closest pair of clusters is within the threshold (non-strict).
/// Ties merge the pair with the lexicographically smallest member indices.
pub fn threshold_cluster(d: &DistanceMatrix, alpha: f64) -> Partition {
    let g = d.len();
    let threshold = 1.0 - alpha;
    // Working copy of the pairwise average-linkage distances.
    let mut dist: Vec<f64> = d.d.clone();
    let mut size = vec![1usize; g];
    let mut rep: Vec<usize> = (0..g).collect(); // smallest member, for ties
    let mut active: Vec<bool> = vec![true; g];
    let mut parent: Vec<usize> = (0..g).collect();
    let mut remaining = g;

    while remaining > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..g {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..g {
                if !active[j] {
                    continue;
                }
                let dij = dist[i * g + j];
                let key = (rep[i].min(rep[j]), rep[i].max(rep[j]));
                match best {
                    None => best = Some((dij, key.0, key.1)),
                    Some((bd, b0, b1)) => {
                        if dij < bd || (dij == bd && key < (b0, b1)) {
                            best = Some((dij, key.0, key.1));
                        }
                    }
                }
            }
        }
        let (min_dist, r0, _r1) = best.expect("at least one active pair");
        if min_dist > threshold {
            break;
        }
        // Recover the slot indices of the winning pair from their reps.
        let mut win = (usize::MAX, usize::MAX);
        for i in 0..g {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..g {
                if !active[j] {
                    continue;
                }
                if dist[i * g + j] == min_dist && rep[i].min(rep[j]) == r0 {
                    let key = (rep[i].min(rep[j]), rep[i].max(rep[j]));
                    if win == (usize::MAX, usize::MAX)
                        || key < (rep[win.0].min(rep[win.1]), rep[win.0].max(rep[win.1]))
                    {
                        win = (i, j);
                    }
                }
            }
        }
        let (i, j) = win;
        // Lance-Williams update for average linkage.
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for m in 0..g {
            if !active[m] || m == i || m == j {
                continue;
            }
            let dm = (ni * dist[i * g + m] + nj * dist[j * g + m]) / (ni + nj);
            dist[i * g + m] = dm;
            dist[m * g + i] = dm;
        }
        size[i] += size[j];
        rep[i] = rep[i].min(rep[j]);
        active[j] = false;
        parent[j] = i;
        remaining -= 1;
    }

    // Resolve each gene's slot through the union chain.
    let mut labels = vec![0usize; g];
    for gene in 0..g {
        let mut slot = gene;
        while parent[slot] != slot {
            slot = parent[slot];
        }
        labels[gene] = slot;
    }
    Partition::from_labels(&labels)
}

/// Raw clustering matrix for cluster centers; degenerate centers never merge.
fn center_distances(centers: &[Vec<f64>]) -> DistanceMatrix {
    let m = centers.len();
    let normalized: Vec<Option<Vec<f64>>> =
        centers.iter().map(|c| normalized_ranks(c)).collect();
    DistanceMatrix::from_fn(m, |i, j| match (&normalized[i], &normalized[j]) {
        (Some(a), Some(b)) => {
            let rho = snap_rho(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>());
            (1.0 - rho).clamp(0.0, 2.0)
        }
        _ => f64::INFINITY,
    })
}

/// Fuse clusters whose centers co-cluster under the same threshold rule.
pub fn merge_step(rows: &[Vec<f64>], partition: &Partition, alpha: f64) -> Partition {
    if partition.n_clusters() <= 1 {
        return partition.clone();
    }
    let centers = cluster_centers(rows, partition);
    let meta = threshold_cluster(&center_distances(&centers), alpha);
    let labels: Vec<usize> =
        partition.labels().iter().map(|&l| meta.labels()[l]).collect();
    Partition::from_labels(&labels)
}

/// Expel members whose Spearman correlation with their (pre-prune) cluster
/// center falls below alpha into fresh singleton clusters.
pub fn prune_step(rows: &[Vec<f64>], partition: &Partition, alpha: f64) -> Partition {
    let centers = cluster_centers(rows, partition);
    let sizes = partition.sizes();
    let g = partition.len();
    let mut labels = partition.labels().to_vec();
    let mut next = partition.n_clusters();
    for i in 0..g {
        let l = labels[i];
        if sizes[l] <= 1 {
            continue; // a singleton's center is itself
        }
        let rho = spearman_rho(&rows[i], &centers[l]).unwrap_or(f64::NEG_INFINITY);
        if rho < alpha {
            labels[i] = next;
            next += 1;
        }
    }
    Partition::from_labels(&labels)
}

/// Grid resolution and iteration caps.
#[derive(Debug, Clone)]
pub struct ClusterConfig {
    /// Number of equally spaced threshold values across the observed
    /// correlation range.
    pub grid_size: usize,
    pub max_inner_iterations: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { grid_size: 20, max_inner_iterations: 100 }
    }
}

/// How an inner refinement loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IhcStatus {
    Converged,
    Cycled,
    IterationLimit,
}

/// Threshold clustering followed by merge/prune refinement at one alpha.
///
/// Runs on the rank representation of the rows: cluster centers are means of
/// member rank vectors, which keeps the whole refinement invariant under
/// strictly increasing per-row transforms.
pub fn ihc_at_alpha(rows: &[Vec<f64>], alpha: f64, config: &ClusterConfig) -> Result<(Partition, IhcStatus)> {
    if !(-1.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in [-1, 1], got {alpha}"
        )));
    }
    let ranked = rank_rows(rows);
    let (d, _) = spearman_distance(&ranked)?;
    Ok(ihc_at_alpha_with(&ranked, &d, alpha, config))
}

fn ihc_at_alpha_with(
    rows: &[Vec<f64>],
    d: &DistanceMatrix,
    alpha: f64,
    config: &ClusterConfig,
) -> (Partition, IhcStatus) {
    let mut partition = threshold_cluster(d, alpha);
    let mut status = IhcStatus::IterationLimit;
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    seen.insert(partition.labels().to_vec());
    for _ in 0..config.max_inner_iterations {
        let next = prune_step(rows, &merge_step(rows, &partition, alpha), alpha);
        if next == partition {
            status = IhcStatus::Converged;
            break;
        }
        let repeat = !seen.insert(next.labels().to_vec());
        partition = next;
        if repeat {
            status = IhcStatus::Cycled;
            break;
        }
    }
    // Final merge passes until every between-center correlation is below
    // alpha; each effective pass strictly reduces the cluster count.
    loop {
        let merged = merge_step(rows, &partition, alpha);
        if merged == partition {
            break;
        }
        partition = merged;
    }
    (partition, status)
}

/// Per-alpha diagnostics recorded during the grid sweep.
#[derive(Debug, Clone)]
pub struct AlphaDiagnostic {
    pub alpha: f64,
    pub n_clusters: usize,
    /// Mean silhouette of the partition; -inf marks a degenerate partition
    /// (one cluster, or all singletons) excluded from selection.
    pub mean_silhouette: f64,
    pub converged: bool,
}

/// Output of the full threshold sweep.
#[derive(Debug, Clone)]
pub struct ClusterResult {
    pub partition: Partition,
    pub alpha_opt: f64,
    pub diagnostics: Vec<AlphaDiagnostic>,
    /// Genes with constant coefficient rows, clustered as forced singletons.
    pub forced_singletons: Vec<usize>,
    pub warning: Option<String>,
}

/// Sweep U equally spaced thresholds across the observed correlation range
/// and return the partition with the best mean silhouette (lowest alpha on
/// ties). Degenerate partitions are excluded unless the whole grid is
/// degenerate, in which case the all-singleton outcome is preferred and a
/// warning is attached.
pub fn stihc_cluster(coef: &CoefficientMatrix, config: &ClusterConfig) -> Result<ClusterResult> {
    if config.grid_size < 2 {
        return Err(Error::InvalidConfig(format!(
            "grid_size must be at least 2, got {}",
            config.grid_size
        )));
    }
    let g = coef.gene_count();
    if g < 3 {
        return Err(Error::DegenerateInput { reason: format!("need at least 3 genes, got {g}") });
    }
    let (_, degenerate) = spearman_distance(&coef.rows)?;
    let forced_singletons: Vec<usize> =
        (0..g).filter(|&i| degenerate[i]).collect();
    let valid: Vec<usize> = (0..g).filter(|&i| !degenerate[i]).collect();
    if valid.len() < 2 {
        return Err(Error::DegenerateInput {
            reason: format!(
                "only {} gene(s) have non-constant coefficients; clustering needs at least 2",
                valid.len()
            ),
        });
    }
    let rows: Vec<Vec<f64>> =
        rank_rows(&valid.iter().map(|&i| coef.rows[i].clone()).collect::<Vec<_>>());
    let (d, _) = spearman_distance(&rows)?;

    // Observed correlation range over off-diagonal pairs.
    let nv = rows.len();
    let mut rho_min = f64::INFINITY;
    let mut rho_max = f64::NEG_INFINITY;
    for i in 0..nv {
        for j in (i + 1)..nv {
            let rho = 1.0 - d.get(i, j);
            rho_min = rho_min.min(rho);
            rho_max = rho_max.max(rho);
        }
    }
    let alphas: Vec<f64> = if rho_max - rho_min <= 1e-15 {
        vec![rho_min]
    } else {
        (0..config.grid_size)
            .map(|u| rho_min + (rho_max - rho_min) * u as f64 / (config.grid_size - 1) as f64)
            .collect()
    };
    let degenerate_grid = alphas.len() == 1;

    let outcomes: Vec<(Partition, IhcStatus)> = alphas
        .par_iter()
        .map(|&alpha| ihc_at_alpha_with(&rows, &d, alpha, config))
        .collect();

    let mut diagnostics = Vec::with_capacity(alphas.len());
    for (alpha, (partition, status)) in alphas.iter().zip(&outcomes) {
        let m = partition.n_clusters();
        let degenerate_partition = m <= 1 || m == nv;
        let sil = if degenerate_partition {
            f64::NEG_INFINITY
        } else {
            mean_silhouette(&d, partition.labels())?
        };
        diagnostics.push(AlphaDiagnostic {
            alpha: *alpha,
            n_clusters: m,
            mean_silhouette: sil,
            converged: *status == IhcStatus::Converged,
        });
    }

    // Highest silhouette wins; scanning ascending alphas with a strict
    // comparison keeps the lowest alpha on ties.
    let mut best: Option<usize> = None;
    for (i, diag) in diagnostics.iter().enumerate() {
        if diag.mean_silhouette == f64::NEG_INFINITY {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) if diag.mean_silhouette > diagnostics[b].mean_silhouette => best = Some(i),
            _ => {}
        }
    }
    let mut warning = None;
    let chosen = match best {
        Some(i) => i,
        None => {
            // Every grid point degenerate: prefer a cluster count strictly
            // between 1 and G if one somehow exists, then all-singletons,
            // then the first grid point.
            let fallback = diagnostics
                .iter()
                .position(|dg| dg.n_clusters > 1 && dg.n_clusters < nv)
                .or_else(|| diagnostics.iter().position(|dg| dg.n_clusters == nv))
                .unwrap_or(0);
            warning = Some(format!(
                "every threshold produced a degenerate partition; returning the {} outcome at alpha = {}",
                if diagnostics[fallback].n_clusters == nv { "all-singleton" } else { "single-cluster" },
                alphas[fallback]
            ));
            fallback
        }
    };
    if degenerate_grid && warning.is_none() {
        warning = Some(format!(
            "all pairwise correlations are identical; evaluated the single threshold alpha = {}",
            alphas[0]
        ));
    }

    // Map the partition over valid genes back to the full gene set; forced
    // singletons are appended as fresh clusters in gene order.
    let chosen_partition = &outcomes[chosen].0;
    let mut full = vec![usize::MAX; g];
    for (slot, &gene) in valid.iter().enumerate() {
        full[gene] = chosen_partition.labels()[slot];
    }
    let mut next = chosen_partition.n_clusters();
    for &gene in &forced_singletons {
        full[gene] = next;
        next += 1;
    }
    Ok(ClusterResult {
        partition: Partition::from_labels(&full),
        alpha_opt: alphas[chosen],
        diagnostics,
        forced_singletons,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::TestRng;

    fn coef(rows: Vec<Vec<f64>>) -> CoefficientMatrix {
        let genes = (0..rows.len()).map(|i| format!("g{i}")).collect();
        CoefficientMatrix { genes, rows }
    }

    #[test]
    fn spearman_examples() {
        let (d, flags) =
            spearman_distance(&[vec![1.0, 2.0, 3.0], vec![10.0, 20.0, 30.0], vec![3.0, 2.0, 1.0]])
                .unwrap();
        assert!(flags.iter().all(|f| !f));
        assert!(d.get(0, 1).abs() < 1e-15, "monotone agreement: d = {}", d.get(0, 1));
        assert!((d.get(0, 2) - 2.0).abs() < 1e-15, "reversal: d = {}", d.get(0, 2));
        // Ranks (1,3,2,4) vs (1,2,3,4): squared rank differences sum to 2,
        // so rho = 1 - 6*2/(4*15) = 0.8.
        let (d2, _) =
            spearman_distance(&[vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 3.0, 2.0, 4.0]]).unwrap();
        assert!((d2.get(0, 1) - 0.2).abs() < 1e-12, "d = {}", d2.get(0, 1));
    }

    #[test]
    fn spearman_handles_ties_with_average_ranks() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        // rho = 3/sqrt(10) for (1,2,2,3) against a strictly increasing row.
        let rho =
            spearman_rho(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((rho - 3.0 / 10f64.sqrt()).abs() < 1e-12, "rho = {rho}");
    }

    #[test]
    fn spearman_flags_constant_rows() {
        let (d, flags) =
            spearman_distance(&[vec![1.0, 1.0, 1.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(flags, vec![true, false]);
        assert_eq!(d.get(0, 1), 1.0);
    }

    #[test]
    fn rank_invariance_of_distances() {
        let mut rng = TestRng(7);
        let rows: Vec<Vec<f64>> =
            (0..5).map(|_| (0..8).map(|_| rng.range(-3.0, 3.0)).collect()).collect();
        let (d1, _) = spearman_distance(&rows).unwrap();
        // Strictly increasing transforms preserve every rank.
        let transformed: Vec<Vec<f64>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .map(|&v| match i % 3 {
                        0 => v.exp(),
                        1 => v * v * v + 2.0 * v,
                        _ => 5.0 * v - 1.0,
                    })
                    .collect()
            })
            .collect();
        let (d2, _) = spearman_distance(&transformed).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn threshold_cluster_extremes() {
        let rows = vec![
            vec![1.0, 2.0, 3.0, 4.0],
            vec![1.0, 2.0, 4.0, 3.0],
            vec![4.0, 3.0, 1.0, 2.0],
        ];
        let (d, _) = spearman_distance(&rows).unwrap();
        // Above the largest correlation every gene stays a singleton.
        let p_hi = threshold_cluster(&d, 0.999);
        assert_eq!(p_hi.n_clusters(), 3);
        // At or below the smallest correlation everything merges.
        let p_lo = threshold_cluster(&d, -1.0);
        assert_eq!(p_lo.n_clusters(), 1);
    }

    #[test]
    fn threshold_cluster_two_pairs() {
        // d = 0 within {0,1} and {2,3}, d = 1 across; alpha = 0.5 keeps the
        // pairs apart (average linkage distance 1 > 1 - alpha).
        let d = DistanceMatrix::from_fn(4, |i, j| if (i < 2) == (j < 2) { 0.0 } else { 1.0 });
        let p = threshold_cluster(&d, 0.5);
        assert_eq!(p.labels(), &[0, 0, 1, 1]);
    }

    #[test]
    fn merge_step_cases() {
        let rows = vec![
            vec![1.0, 2.0, 3.0, 4.0],
            vec![2.0, 3.0, 4.0, 5.0],
            vec![4.0, 3.0, 2.0, 1.0],
        ];
        // Clusters {0,1} and {2}: centers anticorrelate, no merge at any
        // positive alpha.
        let p = Partition::from_labels(&[0, 0, 1]);
        let merged = merge_step(&rows, &p, 0.5);
        assert_eq!(merged, p);
        // Identical centers merge at any alpha <= 1.
        let rows2 = vec![
            vec![1.0, 2.0, 3.0],
            vec![1.0, 2.0, 3.0],
            vec![10.0, 20.0, 30.0],
        ];
        let p2 = Partition::from_labels(&[0, 1, 2]);
        let merged2 = merge_step(&rows2, &p2, 1.0);
        assert_eq!(merged2.n_clusters(), 1);
        // A single cluster is returned unchanged.
        let p3 = Partition::from_labels(&[0, 0, 0]);
        assert_eq!(merge_step(&rows, &p3, 0.0), p3);
    }

    #[test]
    fn prune_step_cases() {
        // Cluster of 3 where one gene anticorrelates with the center.
        let rows = vec![
            vec![1.0, 2.0, 3.0, 4.0],
            vec![1.5, 2.5, 3.5, 4.5],
            vec![4.0, 3.0, 2.0, 1.0],
        ];
        let p = Partition::from_labels(&[0, 0, 0]);
        let center = &cluster_centers(&rows, &p)[0];
        assert!(spearman_rho(&rows[2], center).unwrap() < 0.0);
        let pruned = prune_step(&rows, &p, 0.5);
        assert_eq!(pruned.n_clusters(), 2);
        assert_eq!(pruned.labels()[0], pruned.labels()[1]);
        assert_ne!(pruned.labels()[2], pruned.labels()[0]);
        // All members above the threshold: unchanged.
        let p_ok = Partition::from_labels(&[0, 0, 1]);
        assert_eq!(prune_step(&rows, &p_ok, 0.5), p_ok);
        // All-singleton partitions never change.
        let p_single = Partition::from_labels(&[0, 1, 2]);
        assert_eq!(prune_step(&rows, &p_single, 0.99), p_single);
    }

    fn duplicated_groups(sizes: &[usize], patterns: &[Vec<f64>], noise: f64) -> Vec<Vec<f64>> {
        let mut rng = TestRng(97);
        let mut rows = Vec::new();
        for (&size, pattern) in sizes.iter().zip(patterns) {
            for _ in 0..size {
                rows.push(
                    pattern
                        .iter()
                        .map(|&v| v + noise * rng.range(-1.0, 1.0))
                        .collect(),
                );
            }
        }
        rows
    }

    #[test]
    fn ihc_at_alpha_recovers_two_groups() {
        let patterns = vec![
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
            vec![7.0, 5.0, 6.0, 3.0, 4.0, 1.0, 2.0, 0.0],
        ];
        let rows = duplicated_groups(&[4, 4], &patterns, 0.0);
        let (p, status) = ihc_at_alpha(&rows, 0.5, &ClusterConfig::default()).unwrap();
        assert_eq!(status, IhcStatus::Converged);
        assert_eq!(p.labels(), &[0, 0, 0, 0, 1, 1, 1, 1]);
        // Fixed point: re-running on the converged assignment changes nothing.
        let merged = merge_step(&rows, &p, 0.5);
        let pruned = prune_step(&rows, &merged, 0.5);
        assert_eq!(pruned, p);
    }

    #[test]
    fn ihc_at_alpha_identical_rows_single_cluster() {
        let rows: Vec<Vec<f64>> = (0..5).map(|_| vec![1.0, 3.0, 2.0, 4.0]).collect();
        let (p, _) = ihc_at_alpha(&rows, 0.9, &ClusterConfig::default()).unwrap();
        assert_eq!(p.n_clusters(), 1);
    }

    #[test]
    fn ihc_at_alpha_rejects_out_of_range_threshold() {
        let rows: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64, 1.0, 2.0]).collect();
        match ihc_at_alpha(&rows, 1.5, &ClusterConfig::default()) {
            Err(Error::InvalidConfig(_)) => {}
            other => panic!("expected InvalidConfig, got {other:?}"),
        }
    }

    #[test]
    fn stihc_recovers_three_separated_groups() {
        let patterns = vec![
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0],
            vec![1.0, 6.0, 2.0, 5.0, 3.0, 4.0],
        ];
        let rows = duplicated_groups(&[4, 3, 5], &patterns, 0.0);
        let result = stihc_cluster(&coef(rows), &ClusterConfig::default()).unwrap();
        assert_eq!(result.partition.n_clusters(), 3);
        assert_eq!(result.partition.sizes(), vec![4, 3, 5]);
        let best = result
            .diagnostics
            .iter()
            .map(|d| d.mean_silhouette)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((best - 1.0).abs() < 1e-12, "best mean silhouette {best}");
        // The selected alpha attains the maximum.
        let sel = result
            .diagnostics
            .iter()
            .find(|d| d.alpha == result.alpha_opt)
            .unwrap();
        assert_eq!(sel.mean_silhouette, best);
    }

    #[test]
    fn stihc_imbalanced_duplicated_rows() {
        let patterns = vec![
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            vec![8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0],
            vec![1.0, 8.0, 2.0, 7.0, 3.0, 6.0, 4.0, 5.0],
            vec![5.0, 4.0, 6.0, 3.0, 7.0, 2.0, 8.0, 1.0],
        ];
        let rows = duplicated_groups(&[6, 2, 16, 25], &patterns, 0.02);
        let result = stihc_cluster(&coef(rows), &ClusterConfig::default()).unwrap();
        let mut sizes = result.partition.sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 6, 16, 25]);
    }

    #[test]
    fn stihc_forced_singletons_for_constant_rows() {
        let mut rows = duplicated_groups(
            &[3, 3],
            &[vec![1.0, 2.0, 3.0, 4.0], vec![4.0, 3.0, 2.0, 1.0]],
            0.0,
        );
        rows.push(vec![5.0, 5.0, 5.0, 5.0]);
        let result = stihc_cluster(&coef(rows), &ClusterConfig::default()).unwrap();
        assert_eq!(result.forced_singletons, vec![6]);
        assert_eq!(result.partition.n_clusters(), 3);
        let sizes = result.partition.sizes();
        assert_eq!(sizes[result.partition.labels()[6]], 1);
    }

    #[test]
    fn stihc_degenerate_grid_when_correlations_identical() {
        // Two duplicated groups: every off-diagonal correlation is either
        // within-group 1 or cross-group -1... use 3 identical rows plus
        // nothing else so all pairwise correlations equal 1.
        let rows: Vec<Vec<f64>> = (0..4).map(|_| vec![1.0, 2.0, 3.0, 5.0]).collect();
        let result = stihc_cluster(&coef(rows), &ClusterConfig::default()).unwrap();
        assert_eq!(result.diagnostics.len(), 1);
        assert!(result.warning.is_some());
        assert_eq!(result.partition.n_clusters(), 1);
    }

    #[test]
    fn stihc_orthogonal_rows_fall_back() {
        // Binary rows whose tied rank vectors center to Hadamard patterns
        // (+-1), giving exactly zero pairwise Spearman correlation. The
        // observed correlation range collapses to {0}: a single threshold is
        // evaluated, everything merges at distance 1, and the outcome is
        // degenerate.
        let rows = vec![
            vec![0.0, 0.0, 1.0, 1.0],
            vec![0.0, 1.0, 0.0, 1.0],
            vec![0.0, 1.0, 1.0, 0.0],
        ];
        let (d, _) = spearman_distance(&rows).unwrap();
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert_eq!(d.get(i, j), 1.0, "pair ({i},{j})");
            }
        }
        let result = stihc_cluster(&coef(rows), &ClusterConfig::default()).unwrap();
        assert!(result.warning.is_some(), "fallback warning expected");
        assert_eq!(result.diagnostics.len(), 1);
        assert!(result
            .diagnostics
            .iter()
            .all(|dg| dg.mean_silhouette == f64::NEG_INFINITY));
        // Traced path: all three merge at threshold 1 and no member falls
        // below the center correlation of 0, so the single-cluster outcome
        // is returned.
        assert_eq!(result.partition.n_clusters(), 1);
    }

    #[test]
    fn stihc_permutation_equivariant() {
        let mut rng = TestRng(211);
        let patterns = vec![
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
            vec![7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0],
            vec![4.0, 1.0, 5.0, 2.0, 6.0, 3.0, 7.0],
        ];
        let rows = duplicated_groups(&[5, 6, 4], &patterns, 0.05);
        let g = rows.len();
        let base = stihc_cluster(&coef(rows.clone()), &ClusterConfig::default()).unwrap();
        // Deterministic shuffle.
        let mut perm: Vec<usize> = (0..g).collect();
        for i in (1..g).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            perm.swap(i, j);
        }
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let out = stihc_cluster(&coef(shuffled), &ClusterConfig::default()).unwrap();
        // Partitions agree as set systems: genes co-cluster after the
        // permutation exactly when their preimages co-clustered.
        for a in 0..g {
            for b in 0..g {
                let same_base = base.partition.labels()[perm[a]] == base.partition.labels()[perm[b]];
                let same_out = out.partition.labels()[a] == out.partition.labels()[b];
                assert_eq!(same_base, same_out, "pair ({a},{b})");
            }
        }
        assert_eq!(base.alpha_opt, out.alpha_opt);
    }

    #[test]
    fn stihc_deterministic_across_runs_and_thread_counts() {
        let mut rng = TestRng(223);
        let rows: Vec<Vec<f64>> =
            (0..20).map(|_| (0..9).map(|_| rng.range(0.0, 1.0)).collect()).collect();
        let cm = coef(rows);
        let r1 = stihc_cluster(&cm, &ClusterConfig::default()).unwrap();
        let r2 = stihc_cluster(&cm, &ClusterConfig::default()).unwrap();
        assert_eq!(r1.partition, r2.partition);
        assert_eq!(r1.alpha_opt.to_bits(), r2.alpha_opt.to_bits());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        let r8 = pool.install(|| stihc_cluster(&cm, &ClusterConfig::default()).unwrap());
        assert_eq!(r1.partition, r8.partition);
        assert_eq!(r1.alpha_opt.to_bits(), r8.alpha_opt.to_bits());
    }

    #[test]
    fn stihc_rank_invariance_of_labels() {
        let mut rng = TestRng(227);
        for trial in 0..20 {
            let rows: Vec<Vec<f64>> =
                (0..8).map(|_| (0..7).map(|_| rng.range(-2.0, 2.0)).collect()).collect();
            let base = stihc_cluster(&coef(rows.clone()), &ClusterConfig::default()).unwrap();
            let transformed: Vec<Vec<f64>> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    r.iter()
                        .map(|&v| match (i + trial) % 3 {
                            0 => v.exp(),
                            1 => v.powi(3) + v,
                            _ => 3.0 * v + 10.0,
                        })
                        .collect()
                })
                .collect();
            let out = stihc_cluster(&coef(transformed), &ClusterConfig::default()).unwrap();
            assert_eq!(base.partition, out.partition, "trial {trial}");
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            /// Strictly increasing per-row transforms never change the
            /// distances or the clustering outcome.
            #[test]
            fn clustering_is_rank_invariant(
                seed in 0u64..1000,
                g in 4usize..12,
                k in 4usize..9,
                scale in 0.1f64..5.0,
                offset in -10.0f64..10.0,
            ) {
                let mut rng = crate::testutil::TestRng(seed.wrapping_mul(0x2545_F491).max(1));
                let rows: Vec<Vec<f64>> =
                    (0..g).map(|_| (0..k).map(|_| rng.range(-4.0, 4.0)).collect()).collect();
                let base = stihc_cluster(&coef(rows.clone()), &ClusterConfig::default()).unwrap();
                let transformed: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|r| r.iter().map(|&v| scale * v.exp() + offset).collect())
                    .collect();
                let out = stihc_cluster(&coef(transformed), &ClusterConfig::default()).unwrap();
                prop_assert_eq!(base.partition.labels(), out.partition.labels());
                prop_assert_eq!(base.alpha_opt, out.alpha_opt);
            }

            /// Every silhouette recorded on the sweep stays in [-1, 1] and
            /// the selected threshold attains the maximum.
            #[test]
            fn selection_maximizes_silhouette(
                seed in 0u64..1000,
                g in 5usize..14,
            ) {
                let mut rng = crate::testutil::TestRng(seed.wrapping_mul(0xBF58_476D).max(1));
                let rows: Vec<Vec<f64>> =
                    (0..g).map(|_| (0..6).map(|_| rng.range(0.0, 1.0)).collect()).collect();
                let result = stihc_cluster(&coef(rows), &ClusterConfig::default()).unwrap();
                let sel = result
                    .diagnostics
                    .iter()
                    .find(|d| d.alpha == result.alpha_opt)
                    .unwrap();
                for diag in &result.diagnostics {
                    if diag.mean_silhouette.is_finite() {
                        prop_assert!((-1.0..=1.0).contains(&diag.mean_silhouette));
                        prop_assert!(sel.mean_silhouette >= diag.mean_silhouette);
                    }
                }
            }
        }
    }

    #[test]
    fn silhouette_bounds_on_diagnostics() {
        let mut rng = TestRng(229);
        let rows: Vec<Vec<f64>> =
            (0..12).map(|_| (0..6).map(|_| rng.range(0.0, 1.0)).collect()).collect();
        let result = stihc_cluster(&coef(rows), &ClusterConfig::default()).unwrap();
        for diag in &result.diagnostics {
            if diag.mean_silhouette.is_finite() {
                assert!(diag.mean_silhouette >= -1.0 && diag.mean_silhouette <= 1.0);
            }
        }
        let sel = result
            .diagnostics
            .iter()
            .find(|d| d.alpha == result.alpha_opt)
            .unwrap();
        for diag in &result.diagnostics {
            assert!(sel.mean_silhouette >= diag.mean_silhouette || !diag.mean_silhouette.is_finite());
        }
    }
}
