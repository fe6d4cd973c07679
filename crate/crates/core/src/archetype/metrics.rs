use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::preprocess::{dist2, row_major};
use super::{ArchetypeError, NOISE};

fn clustered_rows(labels: &[i64]) -> (Vec<usize>, usize) {
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != NOISE).collect();
    let k = rows.iter().map(|&i| labels[i]).collect::<std::collections::BTreeSet<_>>().len();
    (rows, k)
}

/// Per-point silhouette for non-noise rows (`None` for noise). Points alone
/// in their cluster score 0.
pub fn silhouette_samples(points: &DMatrix<f64>, labels: &[i64]) -> Result<Vec<Option<f64>>, ArchetypeError> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(ArchetypeError::DimensionMismatch(format!("{} labels for {n} points", labels.len())));
    }
    let (rows, k) = clustered_rows(labels);
    if k < 2 {
        return Err(ArchetypeError::TooFewClusters(k));
    }
    let ids: Vec<i64> = rows.iter().map(|&i| labels[i]).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let index: BTreeMap<i64, usize> = ids.iter().enumerate().map(|(c, &l)| (l, c)).collect();
    let mut sizes = vec![0usize; k];
    for &i in &rows {
        sizes[index[&labels[i]]] += 1;
    }
    let d = points.ncols();
    let flat = row_major(points);
    let scores: Vec<(usize, f64)> = rows
        .par_iter()
        .map(|&i| {
            let own = index[&labels[i]];
            if sizes[own] == 1 {
                return (i, 0.0);
            }
            let mut sums = vec![0.0; k];
            let a_pt = &flat[i * d..(i + 1) * d];
            for &j in &rows {
                if j != i {
                    sums[index[&labels[j]]] += dist2(a_pt, &flat[j * d..(j + 1) * d]).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k).filter(|&c| c != own).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            (i, if m > 0.0 { (b - a) / m } else { 0.0 })
        })
        .collect();
    let mut out = vec![None; n];
    for (i, s) in scores {
        out[i] = Some(s);
    }
    Ok(out)
}

/// Mean silhouette over non-noise rows.
pub fn silhouette(points: &DMatrix<f64>, labels: &[i64]) -> Result<f64, ArchetypeError> {
    let s = silhouette_samples(points, labels)?;
    let vals: Vec<f64> = s.into_iter().flatten().collect();
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

struct Groups {
    centroids: Vec<Vec<f64>>,
    members: Vec<Vec<usize>>,
}

fn groups(points: &DMatrix<f64>, labels: &[i64]) -> Result<Groups, ArchetypeError> {
    let (rows, k) = clustered_rows(labels);
    if k < 2 {
        return Err(ArchetypeError::TooFewClusters(k));
    }
    let mut by: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for &i in &rows {
        by.entry(labels[i]).or_default().push(i);
    }
    let d = points.ncols();
    let members: Vec<Vec<usize>> = by.into_values().collect();
    let centroids = members
        .iter()
        .map(|m| (0..d).map(|j| m.iter().map(|&i| points[(i, j)]).sum::<f64>() / m.len() as f64).collect())
        .collect();
    Ok(Groups { centroids, members })
}

fn row_dist2(points: &DMatrix<f64>, i: usize, c: &[f64]) -> f64 {
    c.iter().enumerate().map(|(j, v)| (points[(i, j)] - v).powi(2)).sum()
}

pub fn davies_bouldin(points: &DMatrix<f64>, labels: &[i64]) -> Result<f64, ArchetypeError> {
    let g = groups(points, labels)?;
    let k = g.members.len();
    let scatter: Vec<f64> = g
        .members
        .iter()
        .zip(&g.centroids)
        .map(|(m, c)| m.iter().map(|&i| row_dist2(points, i, c).sqrt()).sum::<f64>() / m.len() as f64)
        .collect();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst: f64 = 0.0;
        for j in (0..k).filter(|&j| j != i) {
            let sep = dist2(&g.centroids[i], &g.centroids[j]).sqrt();
            worst = worst.max((scatter[i] + scatter[j]) / sep);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

pub fn calinski_harabasz(points: &DMatrix<f64>, labels: &[i64]) -> Result<f64, ArchetypeError> {
    let g = groups(points, labels)?;
    let k = g.members.len();
    let n: usize = g.members.iter().map(Vec::len).sum();
    if n <= k {
        return Err(ArchetypeError::TooFewRows(n));
    }
    let d = points.ncols();
    let overall: Vec<f64> = (0..d)
        .map(|j| g.members.iter().flatten().map(|&i| points[(i, j)]).sum::<f64>() / n as f64)
        .collect();
    let between: f64 = g.members.iter().zip(&g.centroids).map(|(m, c)| m.len() as f64 * dist2(c, &overall)).sum();
    let within: f64 = g
        .members
        .iter()
        .zip(&g.centroids)
        .map(|(m, c)| m.iter().map(|&i| row_dist2(points, i, c)).sum::<f64>())
        .sum();
    Ok(between / (k - 1) as f64 / (within / (n - k) as f64))
}

fn comb2(x: usize) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index; noise counts as one more label.
pub fn adjusted_rand_index(a: &[i64], b: &[i64]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions must cover the same rows");
    let n = a.len();
    let mut table: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    let mut ra: BTreeMap<i64, usize> = BTreeMap::new();
    let mut rb: BTreeMap<i64, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| comb2(v)).sum();
    let sa: f64 = ra.values().map(|&v| comb2(v)).sum();
    let sb: f64 = rb.values().map(|&v| comb2(v)).sum();
    let expected = sa * sb / comb2(n).max(1.0);
    let max = (sa + sb) / 2.0;
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

/// Lloyd iterations from the given centers.
pub fn kmeans(x: &DMatrix<f64>, init: Vec<Vec<f64>>, max_iter: usize) -> KMeansFit {
    let (n, d) = x.shape();
    let flat = row_major(x);
    let mut centers = init;
    let k = centers.len();
    let mut labels = vec![0usize; n];
    for iter in 0..max_iter.max(1) {
        let mut changed = iter == 0;
        for i in 0..n {
            let p = &flat[i * d..(i + 1) * d];
            let best = (0..k)
                .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])).then(a.cmp(&b)))
                .unwrap_or(0);
            if best != labels[i] {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..d {
                sums[labels[i]][j] += flat[i * d + j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n).map(|i| dist2(&flat[i * d..(i + 1) * d], &centers[labels[i]])).sum();
    KMeansFit { centers, labels, inertia }
}

/// Inertia for k = 2..=k_max. Each k starts from the previous solution plus
/// the point farthest from its center, so inertia never increases with k.
pub fn elbow(x: &DMatrix<f64>, k_max: usize, seed: u64) -> Vec<(usize, f64)> {
    let (n, d) = x.shape();
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut fit = kmeans(x, vec![(0..d).map(|j| x[(first, j)]).collect()], 100);
    let mut out = Vec::new();
    for k in 2..=k_max.min(n) {
        let far = (0..n)
            .max_by(|&a, &b| {
                let da: f64 = (0..d).map(|j| (x[(a, j)] - fit.centers[fit.labels[a]][j]).powi(2)).sum();
                let db: f64 = (0..d).map(|j| (x[(b, j)] - fit.centers[fit.labels[b]][j]).powi(2)).sum();
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("non-empty");
        let mut init = fit.centers.clone();
        init.push((0..d).map(|j| x[(far, j)]).collect());
        fit = kmeans(x, init, 300);
        out.push((k, fit.inertia));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDiagnostics {
    pub n_clusters: usize,
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
    pub kmeans_elbow: Vec<(usize, f64)>,
}

/// Cluster quality on the embedding (noise excluded) plus a k-means elbow
/// on the standardized matrix.
pub fn diagnostics(
    embedding: &DMatrix<f64>,
    labels: &[i64],
    standardized: &DMatrix<f64>,
    k_max: usize,
    seed: u64,
) -> Result<ClusterDiagnostics, ArchetypeError> {
    let (_, k) = clustered_rows(labels);
    Ok(ClusterDiagnostics {
        n_clusters: k,
        silhouette: silhouette(embedding, labels)?,
        davies_bouldin: davies_bouldin(embedding, labels)?,
        calinski_harabasz: calinski_harabasz(embedding, labels)?,
        kmeans_elbow: elbow(standardized, k_max, seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn far_blobs_score_high() {
        let x = DMatrix::from_fn(20, 2, |i, j| if i < 10 { (i * j) as f64 * 0.01 } else { 100.0 + (i * j) as f64 * 0.01 });
        let labels: Vec<i64> = (0..20).map(|i| if i < 10 { 0 } else { 1 }).collect();
        assert!(silhouette(&x, &labels).unwrap() > 0.9);
        assert!(davies_bouldin(&x, &labels).unwrap() < 0.01);
        assert!(calinski_harabasz(&x, &labels).unwrap() > 1000.0);
    }

    #[test]
    fn single_cluster_is_rejected() {
        let x = DMatrix::from_fn(5, 1, |i, _| i as f64);
        assert_eq!(silhouette(&x, &[0, 0, 0, NOISE, 0]).unwrap_err(), ArchetypeError::TooFewClusters(1));
    }

    #[test]
    fn ari_identity_and_relabeling() {
        let a = [0, 0, 1, 1, 2, 2, NOISE];
        assert_eq!(adjusted_rand_index(&a, &a), 1.0);
        let b = [5, 5, 3, 3, 9, 9, 0];
        assert!((adjusted_rand_index(&a, &b) - 1.0).abs() < 1e-12);
        let c = [0, 1, 0, 1, 0, 1, 0];
        assert!(adjusted_rand_index(&a, &c) < 0.2);
    }

    #[test]
    fn elbow_non_increasing() {
        let x = DMatrix::from_fn(60, 2, |i, j| ((i * 37 + j * 11) % 17) as f64 + if i % 3 == 0 { 30.0 } else { 0.0 });
        let e = elbow(&x, 8, 3);
        assert_eq!(e.first().unwrap().0, 2);
        assert!(e.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-9));
    }

    proptest! {
        #[test]
        fn silhouette_in_bounds(v in prop::collection::vec(-5.0f64..5.0, 40), labels in prop::collection::vec(0i64..3, 20)) {
            prop_assume!(labels.iter().collect::<std::collections::BTreeSet<_>>().len() >= 2);
            let x = DMatrix::from_fn(20, 2, |i, j| v[2 * i + j]);
            for s in silhouette_samples(&x, &labels).unwrap().into_iter().flatten() {
                prop_assert!((-1.0..=1.0).contains(&s));
            }
        }

        #[test]
        fn ari_symmetric_under_renaming(a in prop::collection::vec(0i64..4, 2..30), shift in 1i64..10) {
            let renamed: Vec<i64> = a.iter().map(|v| (v + shift) * 7).collect();
            prop_assert!((adjusted_rand_index(&a, &renamed) - 1.0).abs() < 1e-12);
        }
    }
}
