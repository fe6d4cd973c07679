use std::collections::VecDeque;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::preprocess::{dist2, row_major};
use super::ArchetypeError;

pub const NOISE: i64 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabels {
    /// Cluster id from 0, or [`NOISE`].
    pub labels: Vec<i64>,
    pub eps: f64,
    pub min_pts: usize,
}

impl ClusterLabels {
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    pub fn members(&self, label: i64) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == label).collect()
    }
}

/// Density clustering; neighborhoods include the point itself and use
/// `distance <= eps`. Core points are expanded in index order.
pub fn dbscan(points: &DMatrix<f64>, eps: f64, min_pts: usize) -> Result<ClusterLabels, ArchetypeError> {
    if eps.is_nan() || eps <= 0.0 || min_pts == 0 {
        return Err(ArchetypeError::BadParam(format!("eps={eps}, min_pts={min_pts}")));
    }
    let n = points.nrows();
    let d = points.ncols();
    let flat = row_major(points);
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = &flat[i * d..(i + 1) * d];
            (0..n).filter(|&j| dist2(a, &flat[j * d..(j + 1) * d]) <= eps2).collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels = vec![NOISE; n];
    let mut assigned = vec![false; n];
    let mut next = 0i64;
    for seed in 0..n {
        if assigned[seed] || !core[seed] {
            continue;
        }
        let id = next;
        next += 1;
        labels[seed] = id;
        assigned[seed] = true;
        let mut queue = VecDeque::from([seed]);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if assigned[q] {
                    continue;
                }
                labels[q] = id;
                assigned[q] = true;
                if core[q] {
                    queue.push_back(q);
                }
            }
        }
    }
    Ok(ClusterLabels { labels, eps, min_pts })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_eps_is_all_noise() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i * 3 + j) as f64);
        let l = dbscan(&x, 1e-9, 2).unwrap();
        assert!(l.labels.iter().all(|&v| v == NOISE));
        assert_eq!(l.n_clusters(), 0);
    }

    #[test]
    fn identical_points_single_cluster() {
        let x = DMatrix::from_element(8, 3, 1.5);
        let l = dbscan(&x, 0.1, 5).unwrap();
        assert!(l.labels.iter().all(|&v| v == 0));
    }

    #[test]
    fn two_groups_and_an_outlier() {
        let pts = [0.0, 0.1, 0.2, 5.0, 5.1, 5.2, 20.0];
        let x = DMatrix::from_fn(pts.len(), 1, |i, _| pts[i]);
        let l = dbscan(&x, 0.15, 2).unwrap();
        assert_eq!(l.labels, vec![0, 0, 0, 1, 1, 1, NOISE]);
        assert!(dbscan(&x, 0.0, 2).is_err());
    }
}
