use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ArchetypeError;

#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub data: DMatrix<f64>,
    /// Indices of the input columns that were kept.
    pub kept: Vec<usize>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// One warning per dropped zero-variance column.
    pub warnings: Vec<String>,
}

/// Centers and scales each column to unit (population) variance, dropping
/// constant columns.
pub fn standardize(x: &DMatrix<f64>, names: &[String]) -> Result<Standardized, ArchetypeError> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(ArchetypeError::TooFewRows(n));
    }
    let mut kept = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    let mut warnings = Vec::new();
    for j in 0..p {
        let col = x.column(j);
        let m = col.mean();
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 1e-12 * (1.0 + m.abs()) {
            kept.push(j);
            means.push(m);
            sds.push(sd);
        } else {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("column {j}"));
            warnings.push(format!("dropped zero-variance column {name}"));
        }
    }
    if kept.is_empty() {
        return Err(ArchetypeError::AllColumnsDegenerate);
    }
    let data = DMatrix::from_fn(n, kept.len(), |i, c| (x[(i, kept[c])] - means[c]) / sds[c]);
    Ok(Standardized { data, kept, means, sds, warnings })
}

/// Row-major copy for distance loops.
pub(crate) fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = x.shape();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            out.push(x[(i, j)]);
        }
    }
    out
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KDistance {
    pub k: usize,
    /// Each point's distance to its k-th nearest other point, ascending.
    pub distances: Vec<f64>,
    pub knee_index: usize,
    pub suggested_eps: f64,
}

impl KDistance {
    /// `rank,distance`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,distance\n");
        for (i, d) in self.distances.iter().enumerate() {
            s.push_str(&format!("{i},{d}\n"));
        }
        s
    }
}

/// Sorted k-th neighbor distances with a knee at the point farthest from
/// the chord joining the curve's ends (both axes rescaled to [0, 1]).
pub fn kdistance(points: &DMatrix<f64>, k: usize) -> Result<KDistance, ArchetypeError> {
    let n = points.nrows();
    if k == 0 || k >= n {
        return Err(ArchetypeError::BadK { k, n });
    }
    let d = points.ncols();
    let flat = row_major(points);
    let mut distances: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = &flat[i * d..(i + 1) * d];
            let mut ds: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist2(a, &flat[j * d..(j + 1) * d])).collect();
            let (_, kth, _) = ds.select_nth_unstable_by(k - 1, f64::total_cmp);
            kth.sqrt()
        })
        .collect();
    distances.sort_by(f64::total_cmp);
    let knee_index = knee(&distances);
    Ok(KDistance { k, suggested_eps: distances[knee_index], knee_index, distances })
}

fn knee(sorted: &[f64]) -> usize {
    let n = sorted.len();
    if n < 3 {
        return n - 1;
    }
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    if hi <= lo {
        return n - 1;
    }
    // chord from (0,0) to (1,1); distance proportional to x - y
    let mut best = (n - 1, f64::NEG_INFINITY);
    for (i, v) in sorted.iter().enumerate() {
        let x = i as f64 / (n - 1) as f64;
        let y = (v - lo) / (hi - lo);
        let gap = x - y;
        if gap > best.1 {
            best = (i, gap);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standardized_columns_have_unit_moments() {
        let x = DMatrix::from_fn(30, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 * (j + 1) as f64);
        let s = standardize(&x, &[]).unwrap();
        for c in s.data.column_iter() {
            assert!(c.mean().abs() < 1e-10);
            assert!((c.map(|v| v * v).mean() - 1.0).abs() < 1e-10);
        }
        let again = standardize(&s.data, &[]).unwrap();
        assert!((again.data - &s.data).amax() < 1e-10);
    }

    #[test]
    fn constant_column_dropped_with_warning() {
        let x = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 4.0 } else { i as f64 });
        let s = standardize(&x, &["age".into(), "lag".into()]).unwrap();
        assert_eq!(s.kept, vec![1]);
        assert!(s.warnings[0].contains("age"));
        let all_const = DMatrix::from_element(5, 2, 1.0);
        assert_eq!(standardize(&all_const, &[]).unwrap_err(), ArchetypeError::AllColumnsDegenerate);
    }

    #[test]
    fn uniform_grid_k1() {
        let x = DMatrix::from_fn(20, 1, |i, _| 0.5 * i as f64);
        let kd = kdistance(&x, 1).unwrap();
        assert!(kd.distances.iter().all(|d| (d - 0.5).abs() < 1e-12));
        assert!(kdistance(&x, 20).is_err());
    }

    proptest! {
        #[test]
        fn kdistance_sorted(v in prop::collection::vec(-10.0f64..10.0, 6..40), k in 1usize..5) {
            let n = v.len() / 2;
            prop_assume!(k < n);
            let x = DMatrix::from_fn(n, 2, |i, j| v[2 * i + j]);
            let kd = kdistance(&x, k).unwrap();
            prop_assert!(kd.distances.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
