//! Clustering evaluation: adjusted Rand index, Davies-Bouldin index, and
//! mean silhouette.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ihc::DistanceMatrix;

/// Cross-tabulation of two label vectors.
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<usize>>,
    pub row_sums: Vec<usize>,
    pub col_sums: Vec<usize>,
    pub total: usize,
}

impl ContingencyTable {
    pub fn from_labels(p1: &[usize], p2: &[usize]) -> Result<ContingencyTable> {
        if p1.len() != p2.len() {
            return Err(Error::LengthMismatch { left: p1.len(), right: p2.len() });
        }
        let map1 = compact(p1);
        let map2 = compact(p2);
        let mut counts = vec![vec![0usize; map2.len()]; map1.len()];
        for (a, b) in p1.iter().zip(p2) {
            counts[map1[a]][map2[b]] += 1;
        }
        let row_sums: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums: Vec<usize> =
            (0..map2.len()).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(ContingencyTable { counts, row_sums, col_sums, total: p1.len() })
    }
}

fn compact(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut map = BTreeMap::new();
    for &l in labels {
        let next = map.len();
        map.entry(l).or_insert(next);
    }
    map
}

fn choose2(n: usize) -> f64 {
    let nf = n as f64;
    nf * (nf - 1.0) / 2.0
}

/// Adjusted Rand index between two partitions, in [-1, 1]; 1 for identical
/// partitions up to relabeling. When both partitions are trivial in the same
/// way (all singletons or one cluster) the chance-corrected denominator is
/// zero and the index is defined as 1.
pub fn adjusted_rand_index(p1: &[usize], p2: &[usize]) -> Result<f64> {
    if p1.len() < 2 {
        return Err(Error::LengthMismatch { left: p1.len(), right: 2 });
    }
    let table = ContingencyTable::from_labels(p1, p2)?;
    let index: f64 = table.counts.iter().flatten().map(|&n| choose2(n)).sum();
    let sum_rows: f64 = table.row_sums.iter().map(|&n| choose2(n)).sum();
    let sum_cols: f64 = table.col_sums.iter().map(|&n| choose2(n)).sum();
    let pairs = choose2(table.total);
    let expected = sum_rows * sum_cols / pairs;
    let max = 0.5 * (sum_rows + sum_cols);
    if (max - expected).abs() == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Davies-Bouldin index over feature rows: mean over clusters of the worst
/// (sigma_p + sigma_q) / dist(mu_p, mu_q) ratio, where sigma is the mean
/// member-to-centroid distance. Lower is better. Singleton clusters have
/// sigma = 0.
pub fn davies_bouldin(features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch { left: features.len(), right: labels.len() });
    }
    let map = compact(labels);
    let m = map.len();
    if m < 2 {
        return Err(Error::SingleCluster { found: m });
    }
    let dim = features.first().map_or(0, Vec::len);
    let mut centroids = vec![vec![0.0; dim]; m];
    let mut sizes = vec![0usize; m];
    for (row, &l) in features.iter().zip(labels) {
        let c = map[&l];
        sizes[c] += 1;
        for (acc, v) in centroids[c].iter_mut().zip(row) {
            *acc += v;
        }
    }
    for (c, size) in centroids.iter_mut().zip(&sizes) {
        for v in c.iter_mut() {
            *v /= *size as f64;
        }
    }
    let mut scatter = vec![0.0; m];
    for (row, &l) in features.iter().zip(labels) {
        let c = map[&l];
        scatter[c] += euclid(row, &centroids[c]);
    }
    for (s, size) in scatter.iter_mut().zip(&sizes) {
        *s /= *size as f64;
    }
    let mut total = 0.0;
    for p in 0..m {
        let mut worst = 0.0f64;
        for q in 0..m {
            if q == p {
                continue;
            }
            let sep = euclid(&centroids[p], &centroids[q]);
            if sep == 0.0 {
                return Err(Error::IdenticalCentroids { a: p, b: q });
            }
            worst = worst.max((scatter[p] + scatter[q]) / sep);
        }
        total += worst;
    }
    Ok(total / m as f64)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette of a partition under a precomputed distance matrix.
/// Singletons contribute 0; both a_i = b_i = 0 also scores 0.
pub fn mean_silhouette(d: &DistanceMatrix, labels: &[usize]) -> Result<f64> {
    let n = d.len();
    if labels.len() != n {
        return Err(Error::LengthMismatch { left: labels.len(), right: n });
    }
    let map = compact(labels);
    let m = map.len();
    if m < 2 {
        return Err(Error::SingleCluster { found: m });
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, &l) in labels.iter().enumerate() {
        members[map[&l]].push(i);
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = map[&labels[i]];
        if members[own].len() <= 1 {
            continue; // singleton convention: sil = 0
        }
        let a: f64 = members[own].iter().filter(|&&j| j != i).map(|&j| d.get(i, j)).sum::<f64>()
            / (members[own].len() - 1) as f64;
        let mut b = f64::INFINITY;
        for (c, mem) in members.iter().enumerate() {
            if c == own || mem.is_empty() {
                continue;
            }
            let avg = mem.iter().map(|&j| d.get(i, j)).sum::<f64>() / mem.len() as f64;
            b = b.min(avg);
        }
        let denom = a.max(b);
        total += if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ihc::DistanceMatrix;
    use crate::testutil::TestRng;

    /// Exhaustive pair-counting oracle for the adjusted Rand index.
    pub(crate) fn ari_pair_oracle(p1: &[usize], p2: &[usize]) -> f64 {
        let n = p1.len();
        let (mut a, mut b, mut c, mut d) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..n {
            for j in (i + 1)..n {
                let same1 = p1[i] == p1[j];
                let same2 = p2[i] == p2[j];
                match (same1, same2) {
                    (true, true) => a += 1.0,
                    (true, false) => b += 1.0,
                    (false, true) => c += 1.0,
                    (false, false) => d += 1.0,
                }
            }
        }
        let denom = (a + b) * (b + d) + (a + c) * (c + d);
        if denom == 0.0 {
            return 1.0;
        }
        2.0 * (a * d - b * c) / denom
    }

    #[test]
    fn ari_perfect_and_label_invariant() {
        let p = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(adjusted_rand_index(&p, &p).unwrap(), 1.0);
        let swapped = vec![2, 2, 0, 0, 1, 1];
        assert_eq!(adjusted_rand_index(&p, &swapped).unwrap(), 1.0);
    }

    #[test]
    fn ari_merged_pair_matches_oracle() {
        let p1 = vec![1, 1, 2, 2];
        let p2 = vec![1, 1, 1, 2];
        let got = adjusted_rand_index(&p1, &p2).unwrap();
        let oracle = ari_pair_oracle(&p1, &p2);
        assert!((got - oracle).abs() < 1e-12);
        // Derived by counting the 6 pairs directly: a=1, b=1, c=2, d=2.
        assert!((got - 0.0).abs() < 1e-12);
    }

    #[test]
    fn ari_matches_oracle_on_random_partitions() {
        let mut rng = TestRng(61);
        for _ in 0..200 {
            let g = 4 + (rng.next_u64() % 5) as usize; // 4..=8
            let k1 = 1 + (rng.next_u64() % 4) as usize;
            let k2 = 1 + (rng.next_u64() % 4) as usize;
            let p1: Vec<usize> = (0..g).map(|_| (rng.next_u64() % k1 as u64) as usize).collect();
            let p2: Vec<usize> = (0..g).map(|_| (rng.next_u64() % k2 as u64) as usize).collect();
            let got = adjusted_rand_index(&p1, &p2).unwrap();
            let want = ari_pair_oracle(&p1, &p2);
            assert!((got - want).abs() < 1e-12, "{p1:?} vs {p2:?}: {got} != {want}");
        }
    }

    #[test]
    fn ari_symmetric_and_random_near_zero() {
        let mut rng = TestRng(71);
        let g = 50;
        let mut acc = 0.0;
        for _ in 0..1000 {
            let p1: Vec<usize> = (0..g).map(|_| (rng.next_u64() % 4) as usize).collect();
            let p2: Vec<usize> = (0..g).map(|_| (rng.next_u64() % 4) as usize).collect();
            let ab = adjusted_rand_index(&p1, &p2).unwrap();
            let ba = adjusted_rand_index(&p2, &p1).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            acc += ab;
        }
        let mean = acc / 1000.0;
        assert!(mean.abs() < 0.05, "mean ARI of random partitions = {mean}");
    }

    /// Direct reimplementation used as the independent route.
    pub(crate) fn dbi_direct(features: &[Vec<f64>], labels: &[usize]) -> f64 {
        let ks: Vec<usize> = {
            let mut v: Vec<usize> = labels.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        };
        let centroid = |k: usize| -> Vec<f64> {
            let rows: Vec<&Vec<f64>> = features
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == k)
                .map(|(r, _)| r)
                .collect();
            let mut c = vec![0.0; rows[0].len()];
            for r in &rows {
                for (acc, v) in c.iter_mut().zip(r.iter()) {
                    *acc += v;
                }
            }
            c.iter().map(|v| v / rows.len() as f64).collect()
        };
        let sigma = |k: usize| -> f64 {
            let c = centroid(k);
            let rows: Vec<&Vec<f64>> = features
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == k)
                .map(|(r, _)| r)
                .collect();
            rows.iter().map(|r| euclid(r, &c)).sum::<f64>() / rows.len() as f64
        };
        let m = ks.len();
        let mut total = 0.0;
        for &p in &ks {
            let mut worst = 0.0f64;
            for &q in &ks {
                if p != q {
                    let r = (sigma(p) + sigma(q)) / euclid(&centroid(p), &centroid(q));
                    worst = worst.max(r);
                }
            }
            total += worst;
        }
        total / m as f64
    }

    #[test]
    fn dbi_zero_scatter_and_single_cluster() {
        let features = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![3.0, 4.0],
            vec![3.0, 4.0],
        ];
        let labels = vec![0, 0, 1, 1];
        assert_eq!(davies_bouldin(&features, &labels).unwrap(), 0.0);
        match davies_bouldin(&features, &[0, 0, 0, 0]) {
            Err(Error::SingleCluster { found: 1 }) => {}
            other => panic!("expected SingleCluster, got {other:?}"),
        }
    }

    #[test]
    fn dbi_matches_direct_on_blobs() {
        let mut rng = TestRng(83);
        let centers = [(0.0, 0.0), (6.0, 1.0), (2.0, 7.0)];
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (k, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..8 {
                features.push(vec![cx + rng.range(-1.0, 1.0), cy + rng.range(-1.0, 1.0)]);
                labels.push(k);
            }
        }
        let got = davies_bouldin(&features, &labels).unwrap();
        let want = dbi_direct(&features, &labels);
        assert!((got - want).abs() < 1e-12);
        assert!(got > 0.0);
    }

    #[test]
    fn dbi_scale_invariant() {
        let mut rng = TestRng(97);
        let features: Vec<Vec<f64>> =
            (0..12).map(|_| vec![rng.range(0.0, 4.0), rng.range(0.0, 4.0)]).collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let base = davies_bouldin(&features, &labels).unwrap();
        let scaled: Vec<Vec<f64>> =
            features.iter().map(|r| r.iter().map(|v| v * 7.5).collect()).collect();
        let after = davies_bouldin(&scaled, &labels).unwrap();
        assert!((base - after).abs() < 1e-12 * (1.0 + base));
    }

    #[test]
    fn dbi_identical_centroids_error() {
        let features = vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]];
        match davies_bouldin(&features, &[0, 0, 1, 1]) {
            Err(Error::IdenticalCentroids { .. }) => {}
            other => panic!("expected IdenticalCentroids, got {other:?}"),
        }
    }

    /// Direct silhouette reimplementation for the oracle-equivalence check.
    pub(crate) fn silhouette_direct(d: &DistanceMatrix, labels: &[usize]) -> f64 {
        let n = d.len();
        let mut total = 0.0;
        for i in 0..n {
            let mine: Vec<usize> =
                (0..n).filter(|&j| labels[j] == labels[i] && j != i).collect();
            if mine.is_empty() {
                continue;
            }
            let a = mine.iter().map(|&j| d.get(i, j)).sum::<f64>() / mine.len() as f64;
            let mut others: Vec<usize> = labels.to_vec();
            others.sort_unstable();
            others.dedup();
            let b = others
                .iter()
                .filter(|&&c| c != labels[i])
                .map(|&c| {
                    let mem: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
                    mem.iter().map(|&j| d.get(i, j)).sum::<f64>() / mem.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            total += if a.max(b) > 0.0 { (b - a) / a.max(b) } else { 0.0 };
        }
        total / n as f64
    }

    fn dist_from(rows: Vec<Vec<f64>>) -> DistanceMatrix {
        let n = rows.len();
        DistanceMatrix::from_fn(n, |i, j| {
            rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).abs()).sum::<f64>()
                / rows[0].len() as f64
        })
    }

    #[test]
    fn silhouette_separated_and_tied() {
        // Two clusters with zero within-distance and distance 1 across.
        let d = DistanceMatrix::from_fn(4, |i, j| {
            if (i < 2) == (j < 2) {
                0.0
            } else {
                1.0
            }
        });
        assert_eq!(mean_silhouette(&d, &[0, 0, 1, 1]).unwrap(), 1.0);
        // Equidistant: a == b means sil = 0.
        let d2 = DistanceMatrix::from_fn(4, |i, j| if i == j { 0.0 } else { 1.0 });
        assert_eq!(mean_silhouette(&d2, &[0, 0, 1, 1]).unwrap(), 0.0);
        match mean_silhouette(&d2, &[0, 0, 0, 0]) {
            Err(Error::SingleCluster { .. }) => {}
            other => panic!("expected SingleCluster, got {other:?}"),
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            /// The contingency-table ARI agrees with exhaustive pair
            /// counting on arbitrary label vectors.
            #[test]
            fn ari_matches_pair_counting(
                labels1 in proptest::collection::vec(0usize..4, 2..10),
                raw2 in proptest::collection::vec(0usize..4, 10),
            ) {
                let labels2 = &raw2[..labels1.len()];
                let got = adjusted_rand_index(&labels1, labels2).unwrap();
                let want = ari_pair_oracle(&labels1, labels2);
                prop_assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn silhouette_matches_direct_on_random_matrix() {
        let mut rng = TestRng(131);
        let rows: Vec<Vec<f64>> =
            (0..6).map(|_| (0..4).map(|_| rng.range(0.0, 2.0)).collect()).collect();
        let d = dist_from(rows);
        let labels = vec![0, 0, 0, 1, 1, 1];
        let got = mean_silhouette(&d, &labels).unwrap();
        let want = silhouette_direct(&d, &labels);
        assert!((got - want).abs() < 1e-12);
        // Relabeling clusters leaves the score unchanged.
        let relabeled = vec![7, 7, 7, 3, 3, 3];
        assert_eq!(mean_silhouette(&d, &relabeled).unwrap(), got);
    }
}
